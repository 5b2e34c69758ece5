#!/usr/bin/env python3
"""
Конфигурация запусков конвейера: значения по умолчанию и сборка из флагов CLI
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import yaml

from config import DEFAULT_SEED, OUTPUT_DIR, TRAIN_DEFAULTS
from diffusion import SAMPLE_VARIANCES, TrainConfig
from errors import UsageError
from layout import ASSOCIATION_MEASURES, LayoutStrategy

logger = logging.getLogger(__name__)

# Настройки конвейера
PIPELINE_CONFIG = {
    "layout": {
        "strategy": "clustered",
        "measure": "max_abs_pearson",
    },
    "training": dict(TRAIN_DEFAULTS),
    "sampling": {
        "rows": TRAIN_DEFAULTS['sample_count'],
        "clamp": True,
        "snapshot_rows": 0,  # строк на снимок каждые sample_every эпох (0 = не сэмплировать)
        "variance": "beta",  # дисперсия обратного шага: beta или posterior
        "dump_grids": False,
    },
    "ingest": {
        "header": True,
    },
    "audit": {
        "charts": False,
    },
    "output": {
        "root": OUTPUT_DIR,
        "synthetic_csv": "synthetic.csv",
        "checkpoint": "model.ckpt",
        "loss_log": "loss_log.csv",
        "layout_export": "layout.tsv",
        "audit_stem": "audit_report",
        "manifest": "manifest.json",
        "schema": "fitted_schema.yaml",
        "codec": "codec.json",
        "layout_json": "layout.json",
        "snapshots": "snapshots",
        "charts": "charts",
        "grids_dump": "grids.txt",
    },
}


# Функции для работы с конфигурацией
def get_config(key, default=None):
    """Получает значение из конфигурации"""
    keys = key.split('.')
    value = PIPELINE_CONFIG

    for k in keys:
        if isinstance(value, dict) and k in value:
            value = value[k]
        else:
            return default

    return value


def set_config(key, value):
    """Устанавливает значение в конфигурации"""
    keys = key.split('.')
    config = PIPELINE_CONFIG

    for k in keys[:-1]:
        if k not in config:
            config[k] = {}
        config = config[k]

    config[keys[-1]] = value


@dataclass(frozen=True)
class RunConfig:
    """Все параметры одного вызова CLI"""

    command: str
    out: Path
    train: TrainConfig
    schema: Optional[Path] = None
    train_csv: List[Path] = field(default_factory=list)
    test_csv: Optional[Path] = None
    strategy: LayoutStrategy = LayoutStrategy.CLUSTERED
    measure: str = 'max_abs_pearson'
    plan: Optional[Path] = None
    rows: int = TRAIN_DEFAULTS['sample_count']
    clamp: bool = True
    header: bool = True
    force: bool = False
    charts: bool = False
    snapshot_rows: int = 0
    variance: str = 'beta'
    dump_grids: bool = False
    grids: Optional[Path] = None
    checkpoint: Optional[Path] = None
    real_csv: Optional[Path] = None
    synth_csv: Optional[Path] = None
    runs: List[Path] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'out': str(self.out),
            'train': self.train.to_dict(),
            'schema': str(self.schema) if self.schema else None,
            'train_csv': [str(p) for p in self.train_csv],
            'test_csv': str(self.test_csv) if self.test_csv else None,
            'strategy': self.strategy.value,
            'measure': self.measure,
            'plan': str(self.plan) if self.plan else None,
            'rows': self.rows,
            'clamp': self.clamp,
            'header': self.header,
            'charts': self.charts,
            'snapshot_rows': self.snapshot_rows,
            'variance': self.variance,
            'dump_grids': self.dump_grids,
            'grids': str(self.grids) if self.grids else None,
        }

    def with_out(self, out: Path) -> 'RunConfig':
        return replace(self, out=Path(out))


def _pick(args, name, default):
    value = getattr(args, name, None)
    return default if value is None else value


def _paths(value) -> List[Path]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [Path(v) for v in value]
    return [Path(value)]


_MISSING = object()


def apply_overrides(items: Optional[List[str]]) -> List[str]:
    """Применяет пары KEY=VALUE (значение разбирается как YAML) через set_config"""
    applied = []
    for item in items or []:
        key, sep, raw = item.partition('=')
        key = key.strip()
        if not sep or not key:
            raise UsageError(f"Ожидается KEY=VALUE: {item}")
        current = get_config(key, _MISSING)
        if current is _MISSING or isinstance(current, dict):
            raise UsageError(f"Неизвестный ключ конфигурации: {key}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise UsageError(f"Не удалось разобрать значение {key}: {e}")
        set_config(key, value)
        applied.append(key)
        logger.info(f"Переопределено {key} = {value!r}")
    return applied


def build_run_config(args) -> RunConfig:
    """Накладывает --set и флаги CLI на PIPELINE_CONFIG и проверяет согласованность"""
    apply_overrides(getattr(args, 'set', None))
    training = get_config('training')
    seed = _pick(args, 'seed', DEFAULT_SEED)
    train = TrainConfig(
        seed=int(seed),
        epochs=int(_pick(args, 'epochs', training['epochs'])),
        batch_size=int(_pick(args, 'batch_size', training['batch_size'])),
        learning_rate=float(_pick(args, 'lr', training['learning_rate'])),
        weight_decay=float(_pick(args, 'weight_decay', training['weight_decay'])),
        sample_every=int(_pick(args, 'sample_every', training['sample_every'])),
        sample_count=int(_pick(args, 'rows', training['sample_count'])),
        timesteps=int(_pick(args, 'timesteps', training['timesteps'])),
        base_width=int(_pick(args, 'base_width', training['base_width'])),
    )

    strategy_name = _pick(args, 'layout', get_config('layout.strategy'))
    try:
        strategy = LayoutStrategy(strategy_name)
    except ValueError:
        raise UsageError(f"Неизвестная раскладка: {strategy_name}")
    measure = _pick(args, 'measure', get_config('layout.measure'))
    if measure not in ASSOCIATION_MEASURES:
        raise UsageError(f"Неизвестная мера связи: {measure}")

    plan = _pick(args, 'plan', None)
    command = getattr(args, 'command', 'pipeline')
    if strategy == LayoutStrategy.MANUAL and plan is None and command in ('layout', 'pipeline'):
        raise UsageError("Ручная раскладка требует --plan")

    rows = int(_pick(args, 'rows', get_config('sampling.rows')))
    if rows < 0:
        raise UsageError(f"--rows не может быть отрицательным: {rows}")

    variance = _pick(args, 'variance', get_config('sampling.variance', 'beta'))
    if variance not in SAMPLE_VARIANCES:
        raise UsageError(f"Неизвестная дисперсия сэмплирования: {variance}")

    config = RunConfig(
        command=command,
        out=Path(_pick(args, 'out', get_config('output.root'))),
        train=train,
        schema=Path(args.schema) if getattr(args, 'schema', None) else None,
        train_csv=_paths(getattr(args, 'train_csv', None)),
        test_csv=Path(args.test_csv) if getattr(args, 'test_csv', None) else None,
        strategy=strategy,
        measure=measure,
        plan=Path(plan) if plan else None,
        rows=rows,
        clamp=not getattr(args, 'no_clamp', False) and get_config('sampling.clamp', True),
        header=not getattr(args, 'no_header', False) and get_config('ingest.header', True),
        force=bool(getattr(args, 'force', False)),
        charts=bool(getattr(args, 'charts', False)) or get_config('audit.charts', False),
        snapshot_rows=int(_pick(args, 'snapshot_rows', get_config('sampling.snapshot_rows', 0))),
        variance=variance,
        dump_grids=bool(getattr(args, 'dump_grids', False)) or bool(get_config('sampling.dump_grids', False)),
        grids=Path(args.grids) if getattr(args, 'grids', None) else None,
        checkpoint=Path(args.checkpoint) if getattr(args, 'checkpoint', None) else None,
        real_csv=Path(args.real_csv) if getattr(args, 'real_csv', None) else None,
        synth_csv=Path(args.synth_csv) if getattr(args, 'synth_csv', None) else None,
        runs=_paths(getattr(args, 'runs', None)),
    )
    logger.debug(f"Конфигурация запуска: {config.to_dict()}")
    return config
