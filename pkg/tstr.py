#!/usr/bin/env python3
"""
Полезность синтетики: обучение классификатора дохода на синтетике, проверка на реальных данных
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol

import numpy as np
from scipy.special import expit
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from codec import CodecSpec, encode_table, fit_codec
from config import LABEL_NEGATIVE, LABEL_POSITIVE, TSTR_ITERATIONS, TSTR_L2, TSTR_LEARNING_RATE
from errors import DataError, SchemaError
from schema_ingest import Table

logger = logging.getLogger(__name__)

CLASSES = (LABEL_NEGATIVE, LABEL_POSITIVE)


class Classifier(Protocol):
    def fit(self, features: np.ndarray, labels: np.ndarray) -> 'Classifier': ...

    def predict(self, features: np.ndarray) -> np.ndarray: ...


class GradientDescentLogReg:
    """Логистическая регрессия: полный градиентный спуск, фиксированное число итераций, L2"""

    def __init__(self, iterations: int = TSTR_ITERATIONS, learning_rate: float = TSTR_LEARNING_RATE,
                 l2: float = TSTR_L2, seed: int = 0):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.l2 = l2
        self.seed = seed
        self.weights: Optional[np.ndarray] = None
        self.bias = 0.0
        self.constant: Optional[int] = None

    @property
    def degenerate(self) -> bool:
        return self.constant is not None

    def fit(self, features: np.ndarray, labels: np.ndarray) -> 'GradientDescentLogReg':
        labels = np.asarray(labels, dtype=np.float64)
        classes = np.unique(labels)
        if len(classes) < 2:
            # один класс: классификатор вырождается в константу
            self.constant = int(classes[0]) if len(classes) else 0
            logger.warning(f"В обучающей выборке один класс, предсказывается константа {self.constant}")
            return self

        n, d = features.shape
        rng = np.random.Generator(np.random.Philox(self.seed))
        self.weights = rng.normal(0.0, 1e-3, d)
        self.bias = 0.0
        for _ in range(self.iterations):
            residual = expit(features @ self.weights + self.bias) - labels
            self.weights -= self.learning_rate * (features.T @ residual / n + self.l2 * self.weights)
            self.bias -= self.learning_rate * float(residual.mean())
        return self

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full(features.shape[0], float(self.constant))
        return expit(features @ self.weights + self.bias)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return (self.predict_proba(features) >= 0.5).astype(np.int64)


@dataclass
class TSTRResult:
    accuracy: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    f1: Dict[str, float]
    confusion: List[List[int]]
    degenerate: bool
    n_train: int
    n_test: int
    classifier: str = 'logistic_regression_gd'
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'confusion_matrix': self.confusion,
            'degenerate': self.degenerate,
            'n_train': self.n_train,
            'n_test': self.n_test,
            'classifier': self.classifier,
            'notes': self.notes,
        }


def label_features(table: Table, spec: CodecSpec):
    """Закодированные признаки без блока дохода и бинарная метка (>50K → 1)"""
    label = spec.schema.label
    if label not in table.schema:
        raise SchemaError(f"Нет столбца метки {label}")
    encoded = encode_table(table, spec)
    keep = np.ones(encoded.shape[1], dtype=bool)
    keep[list(spec.block(label).slots)] = False
    labels = (table.column(label).to_numpy() == LABEL_POSITIVE).astype(np.int64)
    return encoded[:, keep], labels


def known_rows(table: Table, spec: CodecSpec) -> Table:
    """Отбрасывает строки с категориями вне словаря кодека"""
    keep = np.ones(len(table), dtype=bool)
    for column in spec.schema.categorical:
        keep &= table.column(column.name).isin(column.vocabulary).to_numpy()
    if keep.all():
        return table
    logger.warning(f"TSTR: отброшено {int((~keep).sum())} тестовых строк с неизвестными категориями")
    return Table(schema=spec.schema, frame=table.frame[keep].reset_index(drop=True),
                 raw_rows=table.raw_rows, dropped_rows=table.dropped_rows + int((~keep).sum()),
                 sources=table.sources)


def tstr(synth_train: Table, real_test: Table, seed: int, spec: Optional[CodecSpec] = None,
         classifier: Optional[Classifier] = None) -> TSTRResult:
    """Train on synthetic, test on real; метрики по классам считаются из матрицы ошибок"""
    if len(synth_train) == 0:
        raise DataError("Пустая обучающая выборка TSTR")
    if len(real_test) == 0:
        raise DataError("Пустая тестовая выборка TSTR")
    if spec is None:
        spec = fit_codec(real_test)
    total_test = len(real_test)
    real_test = known_rows(real_test, spec)
    if len(real_test) == 0:
        raise DataError("Все тестовые строки содержат неизвестные категории")

    x_train, y_train = label_features(synth_train, spec)
    x_test, y_test = label_features(real_test, spec)

    model = classifier if classifier is not None else GradientDescentLogReg(seed=seed)
    model.fit(x_train, y_train)
    predicted = model.predict(x_test)
    degenerate = bool(getattr(model, 'degenerate', len(np.unique(y_train)) < 2))

    precision, recall, f1, _ = precision_recall_fscore_support(
        y_test, predicted, labels=[0, 1], zero_division=0)
    matrix = confusion_matrix(y_test, predicted, labels=[0, 1])
    result = TSTRResult(
        accuracy=float(np.trace(matrix) / matrix.sum()),
        precision={name: float(v) for name, v in zip(CLASSES, precision)},
        recall={name: float(v) for name, v in zip(CLASSES, recall)},
        f1={name: float(v) for name, v in zip(CLASSES, f1)},
        confusion=matrix.astype(int).tolist(),
        degenerate=degenerate,
        n_train=len(synth_train),
        n_test=len(real_test),
    )
    if degenerate:
        result.notes.append('в обучающей синтетике один класс: классификатор предсказывает константу')
    if len(real_test) < total_test:
        result.notes.append(f'отброшено {total_test - len(real_test)} тестовых строк с неизвестными категориями')
    logger.info(f"TSTR: accuracy {result.accuracy:.4f}, F1(>50K) {result.f1[LABEL_POSITIVE]:.4f}")
    return result
