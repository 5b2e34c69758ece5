"""
Общие фикстуры тестов: игрушечные таблицы, таблица в стиле Adult, маленькая сеть
"""

import copy
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Добавляем корень проекта в путь
ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

import pipeline_config  # noqa: E402
from config import ADULT_DATA_DIR  # noqa: E402
from schema_ingest import Table, fit_vocabularies, load_schema, parse_schema  # noqa: E402
from unet import DenoiserNet  # noqa: E402

TOY_SCHEMA = """
label: income
columns:
  - name: x
    kind: numeric
  - name: flag
    kind: categorical
    vocabulary: ["no", "yes"]
"""


def make_toy_frame(n: int = 500, seed: int = 0) -> pd.DataFrame:
    """Бимодальный числовой столбец и бинарный категориальный (доля yes около 0.3)"""
    rng = np.random.default_rng(seed)
    modes = rng.random(n) < 0.5
    x = np.where(modes, rng.normal(-2.0, 0.3, n), rng.normal(2.0, 0.3, n))
    flag = np.where(rng.random(n) < 0.3, 'yes', 'no')
    return pd.DataFrame({'x': x, 'flag': flag})


def make_adult_frame(n: int = 400, seed: int = 0) -> pd.DataFrame:
    """Небольшая правдоподобная таблица со столбцами Adult и без логических ошибок"""
    rng = np.random.default_rng(seed)
    education = rng.choice(['HS-grad', 'Bachelors', 'Masters'], n, p=[0.6, 0.3, 0.1])
    education_num = pd.Series(education).map({'HS-grad': 9, 'Bachelors': 13, 'Masters': 14}).to_numpy()
    sex = rng.choice(['Male', 'Female'], n, p=[0.65, 0.35])
    married = rng.random(n) < 0.5
    relationship = np.where(married, np.where(sex == 'Male', 'Husband', 'Wife'), 'Not-in-family')
    marital = np.where(married, 'Married-civ-spouse', 'Never-married')
    logits = -4.0 + 0.35 * (education_num - 9) * 2 + 2.0 * married
    income = np.where(rng.random(n) < 1.0 / (1.0 + np.exp(-logits)), '>50K', '<=50K')
    return pd.DataFrame({
        'age': rng.integers(17, 91, n),
        'workclass': rng.choice(['Private', 'Self-emp-not-inc', 'State-gov'], n),
        'fnlwgt': rng.integers(20000, 500000, n),
        'education': education,
        'education-num': education_num,
        'marital-status': marital,
        'occupation': rng.choice(['Sales', 'Tech-support', 'Craft-repair'], n),
        'relationship': relationship,
        'race': rng.choice(['White', 'Black'], n, p=[0.85, 0.15]),
        'sex': sex,
        'capital-gain': np.where(rng.random(n) < 0.1, rng.integers(1, 20000, n), 0),
        'capital-loss': np.where(rng.random(n) < 0.05, rng.integers(1, 2000, n), 0),
        'hours-per-week': rng.integers(10, 70, n),
        'native-country': rng.choice(['United-States', 'Mexico'], n, p=[0.9, 0.1]),
        'income': income,
    })


@pytest.fixture
def toy_schema():
    return parse_schema(TOY_SCHEMA)


@pytest.fixture
def toy_table(toy_schema):
    return Table.from_frame(toy_schema, make_toy_frame())


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / 'toy.csv'
    make_toy_frame().to_csv(path, index=False)
    schema_path = tmp_path / 'toy.yaml'
    schema_path.write_text(TOY_SCHEMA, encoding='utf-8')
    return schema_path, path


@pytest.fixture
def adult_schema_path():
    return ROOT / 'schemas' / 'adult.yaml'


def adult_table_from(frame: pd.DataFrame) -> Table:
    schema = load_schema(ROOT / 'schemas' / 'adult.yaml')
    table = Table.from_frame(schema, frame)
    return Table.from_frame(fit_vocabularies(table), frame)


@pytest.fixture
def adult_like():
    return adult_table_from(make_adult_frame())


@pytest.fixture
def tiny_net():
    """Маленькая сеть с ненулевым выходным слоем"""
    return DenoiserNet(base_width=4, time_dim=8, groups=2, seed=0, zero_init_output=False)


@pytest.fixture
def adult_dir():
    if not ADULT_DATA_DIR or not (Path(ADULT_DATA_DIR) / 'adult.data').exists():
        pytest.skip("ADULT_DATA_DIR не задан: интеграционные тесты на UCI Adult пропущены")
    return Path(ADULT_DATA_DIR)


@pytest.fixture(autouse=True)
def restore_pipeline_config():
    """--set меняет PIPELINE_CONFIG на уровне процесса; после теста возвращаем исходный"""
    saved = copy.deepcopy(pipeline_config.PIPELINE_CONFIG)
    yield
    pipeline_config.PIPELINE_CONFIG.clear()
    pipeline_config.PIPELINE_CONFIG.update(saved)
