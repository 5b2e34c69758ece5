#!/usr/bin/env python3
"""
Риск раскрытия: расстояние от синтетической строки до ближайшей реальной (DCR)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from sklearn.neighbors import NearestNeighbors

from codec import CodecSpec, encode_table, fit_codec
from errors import DataError, SchemaError
from schema_ingest import Table

logger = logging.getLogger(__name__)

SCORE_FORMULA = ('score = clip(median DCR(synth → real) / median LOO-NN(real → real), 0, 1); '
                 'евклидово расстояние в закодированном пространстве [0, 1]; '
                 '0 = синтетика совпадает с реальными строками')


@dataclass
class DisclosureReport:
    distances: np.ndarray
    real_baseline: float
    score: float
    formula: str = SCORE_FORMULA

    @property
    def minimum(self) -> float:
        return float(self.distances.min()) if self.distances.size else 0.0

    @property
    def median(self) -> float:
        return float(np.median(self.distances)) if self.distances.size else 0.0

    @property
    def exact_matches(self) -> int:
        return int((self.distances == 0).sum())

    def to_dict(self) -> Dict:
        return {
            'min_dcr': self.minimum,
            'median_dcr': self.median,
            'real_loo_median': self.real_baseline,
            'exact_matches': self.exact_matches,
            'score': self.score,
            'formula': self.formula,
        }


def disclosure(real: Table, synth: Table, spec: Optional[CodecSpec] = None) -> DisclosureReport:
    """DCR каждой синтетической строки и нормированная оценка"""
    if real.schema.names != synth.schema.names:
        raise SchemaError("Схемы реальной и синтетической таблиц различаются")
    if len(real) < 2:
        raise DataError("Для оценки раскрытия нужно хотя бы две реальные строки")
    if spec is None:
        spec = fit_codec(real)

    real_encoded = encode_table(real, spec)
    synth_encoded = encode_table(synth, spec)

    index = NearestNeighbors(n_neighbors=2, metric='euclidean').fit(real_encoded)
    # для реальных строк первый сосед это сама строка (или ее дубликат)
    real_distances, _ = index.kneighbors(real_encoded, n_neighbors=2)
    baseline = float(np.median(real_distances[:, 1]))

    if len(synth):
        distances, _ = index.kneighbors(synth_encoded, n_neighbors=1)
        distances = distances[:, 0]
    else:
        distances = np.zeros(0)

    median = float(np.median(distances)) if distances.size else 0.0
    if baseline > 0:
        score = float(np.clip(median / baseline, 0.0, 1.0))
    else:
        score = 0.0 if median == 0 else 1.0
        logger.warning("Медианное расстояние между реальными строками равно 0")

    report = DisclosureReport(distances=distances, real_baseline=baseline, score=score)
    logger.info(f"Раскрытие: медиана DCR {report.median:.4f}, база {baseline:.4f}, оценка {score:.4f}")
    return report
