#!/usr/bin/env python3
"""
Статистическое сходство таблиц: формы столбцов (KS / TV) и попарные связи
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import ks_2samp

from errors import DataError, SchemaError
from schema_ingest import ColumnKind, Table

logger = logging.getLogger(__name__)

DECILES = np.linspace(0.0, 1.0, 11)


@dataclass
class FidelityScores:
    column_shapes: Dict[str, float]
    pairwise: Dict[str, float]
    skipped_pairs: list = field(default_factory=list)

    @property
    def column_shapes_mean(self) -> float:
        return float(np.mean(list(self.column_shapes.values())))

    @property
    def pairwise_mean(self) -> Optional[float]:
        if not self.pairwise:
            return None
        return float(np.mean(list(self.pairwise.values())))

    @property
    def overall(self) -> float:
        if self.pairwise_mean is None:
            return self.column_shapes_mean
        return (self.column_shapes_mean + self.pairwise_mean) / 2.0

    def to_dict(self) -> Dict:
        return {
            'column_shapes': self.column_shapes,
            'pairwise': self.pairwise,
            'skipped_pairs': self.skipped_pairs,
            'column_shapes_mean': self.column_shapes_mean,
            'pairwise_mean': self.pairwise_mean,
            'overall': self.overall,
        }


def total_variation(real: pd.Series, synth: pd.Series) -> float:
    """TV = ½ Σ |p − q| по объединенному словарю"""
    p = real.value_counts(normalize=True)
    q = synth.value_counts(normalize=True)
    p, q = p.align(q, fill_value=0.0)
    return float(0.5 * np.abs(p - q).sum())


def column_shape_score(real_col: pd.Series, synth_col: pd.Series, kind: ColumnKind) -> float:
    """Числовой столбец: 1 − KS; категориальный: 1 − TV"""
    if len(real_col) == 0 or len(synth_col) == 0:
        raise DataError("Пустой столбец при сравнении форм")
    if ColumnKind(kind) == ColumnKind.NUMERIC:
        statistic = ks_2samp(real_col.to_numpy(dtype=float), synth_col.to_numpy(dtype=float)).statistic
        return float(1.0 - statistic)
    return 1.0 - total_variation(real_col.astype(str), synth_col.astype(str))


def _decile_bins(real_col: pd.Series, synth_col: pd.Series) -> Tuple[pd.Series, pd.Series]:
    """Номера децилей по границам реального столбца; синтетика режется теми же границами"""
    edges = np.unique(np.quantile(real_col.to_numpy(dtype=float), DECILES))
    inner = edges[1:-1]

    def bins(values: pd.Series) -> pd.Series:
        return pd.Series(np.searchsorted(inner, values.to_numpy(dtype=float), side='right'), index=values.index)

    return bins(real_col), bins(synth_col)


def _zero_variance(values: pd.Series) -> bool:
    return float(np.var(values.to_numpy(dtype=float))) == 0.0


def pairwise_correlation_score(real: Table, synth: Table, col_i: str, col_j: str) -> Optional[float]:
    """
    Два числовых столбца: 1 − |r_real − r_synth| / 2 (Пирсон).
    Иначе: 1 − TV нормированных таблиц сопряженности, числовой партнер режется на децили.
    Столбец с нулевой дисперсией → None (пара пропускается).
    """
    if len(real) == 0 or len(synth) == 0:
        raise DataError("Пустая таблица при сравнении пар")

    columns = {}
    for name in (col_i, col_j):
        spec = real.schema[name]
        r, s = real.column(name), synth.column(name)
        if spec.is_numeric:
            if _zero_variance(r) or _zero_variance(s):
                logger.warning(f"Пара ({col_i}, {col_j}) пропущена: столбец {name} постоянен")
                return None
        columns[name] = (spec, r, s)

    (spec_i, ri, si), (spec_j, rj, sj) = columns[col_i], columns[col_j]
    if spec_i.is_numeric and spec_j.is_numeric:
        r_real = float(np.corrcoef(ri.to_numpy(dtype=float), rj.to_numpy(dtype=float))[0, 1])
        r_synth = float(np.corrcoef(si.to_numpy(dtype=float), sj.to_numpy(dtype=float))[0, 1])
        return float(1.0 - abs(r_real - r_synth) / 2.0)

    def discretized(spec, r, s):
        if spec.is_numeric:
            return _decile_bins(r, s)
        return r.astype(str), s.astype(str)

    ri, si = discretized(spec_i, ri, si)
    rj, sj = discretized(spec_j, rj, sj)
    real_pairs = pd.Series(list(zip(ri.astype(str), rj.astype(str))))
    synth_pairs = pd.Series(list(zip(si.astype(str), sj.astype(str))))
    return 1.0 - total_variation(real_pairs, synth_pairs)


def fidelity(real: Table, synth: Table) -> FidelityScores:
    """Оценки по столбцам и по всем парам; overall = среднее двух средних"""
    if real.schema.names != synth.schema.names:
        raise SchemaError("Схемы реальной и синтетической таблиц различаются")

    shapes = {}
    for column in real.schema.columns:
        shapes[column.name] = column_shape_score(real.column(column.name), synth.column(column.name), column.kind)

    pairwise, skipped = {}, []
    for a, b in combinations(real.schema.names, 2):
        score = pairwise_correlation_score(real, synth, a, b)
        if score is None:
            skipped.append(f'{a}|{b}')
        else:
            pairwise[f'{a}|{b}'] = score

    scores = FidelityScores(column_shapes=shapes, pairwise=pairwise, skipped_pairs=skipped)
    logger.info(f"Сходство: формы {scores.column_shapes_mean:.4f}, пары "
                f"{scores.pairwise_mean if scores.pairwise_mean is not None else float('nan'):.4f}, "
                f"итог {scores.overall:.4f}")
    return scores
