import os
from dotenv import load_dotenv

load_dotenv()

# Настройки окружения
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('LOG_FILE', 'pipeline.log')
DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', '20240813'))
OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'runs')
ADULT_DATA_DIR = os.getenv('ADULT_DATA_DIR', '')

TOOL_VERSION = '1.0.0'

# Настройки сетки псевдо-изображения
GRID_HEIGHT = 10
GRID_WIDTH = 11
NORMALIZED_RANGE = (-1.0, 1.0)  # диапазон, который ожидает диффузионный конвейер
PADDED_SIZE = 16  # 10×11 дополняется нулями до 16×16 перед свертками

# Настройки очистки данных
MISSING_TOKEN = '?'
LABEL_COLUMN = 'income'
LABEL_POSITIVE = '>50K'
LABEL_NEGATIVE = '<=50K'

# Шум и расписание (стандартные значения DDPM для T=1000)
BETA_START = 1e-4
BETA_END = 0.02
REFERENCE_TIMESTEPS = 1000

# Обучение: значения по умолчанию подобраны для настольного масштаба
TRAIN_DEFAULTS = {
    'epochs': 50,
    'batch_size': 64,
    'learning_rate': 1e-4,
    'weight_decay': 0.01,
    'sample_every': 5,
    'sample_count': 5000,
    'timesteps': 1000,
    'base_width': 32,
}
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
GROUP_NORM_GROUPS = 8
GROUP_NORM_EPS = 1e-5
ACTIVATION = 'silu'
TIME_EMBEDDING_DIM = 32
SAMPLE_CHUNK = 256

# Проверка градиентов
GRADCHECK_STEP = 1e-4
GRADCHECK_PARAMS = 200
GRADCHECK_TOLERANCE = 1e-3
GRADCHECK_FLOOR = 1e-3  # нижняя граница знаменателя относительной ошибки

# Правила семантической проверки
BACHELORS_MIN_EDUCATION_NUM = 13
HOME_COUNTRY = 'United-States'

# Классификатор TSTR
TSTR_ITERATIONS = 500
TSTR_LEARNING_RATE = 0.5
TSTR_L2 = 1e-4

# Опубликованные справочные значения (только для отчетов, не цели)
PUBLISHED_REFERENCE = {
    'fidelity': {
        'baseline': {'column_shapes': 0.8362, 'pairwise': 0.8034, 'overall': 0.8198},
        'clustered': {'column_shapes': 0.9159, 'pairwise': 0.8166, 'overall': 0.8663},
        'manual': {'column_shapes': 0.9042, 'pairwise': 0.7785, 'overall': 0.8414},
    },
    'tstr': {
        'baseline': {'accuracy': 0.770, 'f1_low': 0.869, 'f1_high': 0.056},
        'clustered': {'accuracy': 0.785, 'f1_low': 0.87, 'f1_high': 0.25},
        'manual': {'accuracy': 0.776, 'f1_low': 0.87, 'f1_high': 0.16},
    },
    'semantic': {
        'baseline': {'FemaleHusband': 0.1028, 'MaleWife': 0.0198, 'EduRange': 0.0018, 'NegCapital': 0.5864},
        'clustered': {'FemaleHusband': 0.1261, 'MaleWife': 0.0132, 'EduRange': 0.0026, 'NegCapital': 0.0},
        'manual': {'FemaleHusband': 0.0760, 'MaleWife': 0.0384, 'EduRange': 0.0022, 'NegCapital': 0.0},
    },
    'structural': {
        'real': {'high_income': 0.236, 'married_civ_spouse': 0.448, 'husband': 0.400,
                 'bachelors_plus': 0.229, 'white': 0.855, 'foreign_born': 0.108},
        'clustered': {'high_income': 0.222, 'married_civ_spouse': 0.467, 'husband': 0.436,
                      'bachelors_plus': 0.225, 'white': 0.908, 'foreign_born': 0.046},
        'manual': {'high_income': 0.147, 'married_civ_spouse': 0.377, 'husband': 0.336,
                   'bachelors_plus': 0.162, 'white': 0.878, 'foreign_born': 0.055},
        'baseline': {'high_income': 0.147, 'married_civ_spouse': 0.425, 'husband': 0.403,
                     'bachelors_plus': 0.178, 'white': 0.862, 'foreign_born': 0.078},
    },
    'disclosure_range': (0.61, 0.65),
    'pairwise_text_range': (0.789, 0.814),
}
