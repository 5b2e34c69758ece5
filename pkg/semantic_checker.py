#!/usr/bin/env python3
"""
Построчная проверка логической согласованности синтетических записей
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from errors import SchemaError
from schema_ingest import Table

logger = logging.getLogger(__name__)

Rule = Callable[[pd.DataFrame], pd.Series]


@dataclass
class RuleResult:
    rule_id: str
    description: str
    count: int
    rate: float
    flagged: List[int]

    def to_dict(self) -> Dict:
        return {'description': self.description, 'count': self.count, 'rate': self.rate,
                'flagged': self.flagged}


@dataclass
class SemanticReport:
    n_rows: int
    rules: Dict[str, RuleResult]

    def rate(self, rule_id: str) -> float:
        return self.rules[rule_id].rate

    def flagged(self, rule_id: str) -> List[int]:
        return self.rules[rule_id].flagged

    def to_dict(self, include_rows: bool = False) -> Dict:
        rules = {}
        for rule_id, result in self.rules.items():
            data = result.to_dict()
            if not include_rows:
                data.pop('flagged')
            rules[rule_id] = data
        return {'n_rows': self.n_rows, 'rules': rules}


class SemanticChecker:
    """
    Набор правил над строками таблицы в стиле Adult.

    Базовые правила проверяют каждое по одному условию; агрегаты
    RelationshipConflict и AnyViolation собираются из них. Границы HoursRange
    и EduRange берутся из диапазонов схемы (range), явные аргументы их переопределяют.
    """

    BASE_RULES = ('NegCapital', 'HoursRange', 'FemaleHusband', 'MaleWife', 'EduRange')
    # правило -> нужные столбцы
    REQUIRED = {
        'NegCapital': ('capital-gain', 'capital-loss'),
        'HoursRange': ('hours-per-week',),
        'FemaleHusband': ('sex', 'relationship'),
        'MaleWife': ('sex', 'relationship'),
        'EduRange': ('education-num',),
    }
    RANGED = ('hours-per-week', 'education-num')

    def __init__(self, hours_range: Optional[Tuple[float, float]] = None,
                 education_range: Optional[Tuple[float, float]] = None):
        self.overrides = {'hours-per-week': hours_range, 'education-num': education_range}

    def required_columns(self) -> List[str]:
        needed = []
        for columns in self.REQUIRED.values():
            needed.extend(c for c in columns if c not in needed)
        return needed

    def bounds(self, schema, column: str) -> Optional[Tuple[float, float]]:
        override = self.overrides.get(column)
        if override is not None:
            return tuple(override)
        if column in schema and schema[column].valid_range is not None:
            return tuple(schema[column].valid_range)
        return None

    def applies_to(self, schema) -> bool:
        return (all(c in schema for c in self.required_columns())
                and all(self.bounds(schema, c) is not None for c in self.RANGED))

    def rules(self, schema) -> Dict[str, Tuple[str, Rule]]:
        """Правило -> (описание, предикат нарушения) для конкретной схемы"""
        missing = [c for c in self.required_columns() if c not in schema]
        if missing:
            raise SchemaError(f"Для семантической проверки нет столбцов: {missing}")
        unbounded = [c for c in self.RANGED if self.bounds(schema, c) is None]
        if unbounded:
            raise SchemaError(f"В схеме не задан диапазон (range) для столбцов: {unbounded}")

        lo_h, hi_h = self.bounds(schema, 'hours-per-week')
        lo_e, hi_e = self.bounds(schema, 'education-num')
        return {
            'NegCapital': (
                'capital-gain < 0 или capital-loss < 0',
                lambda f: (f['capital-gain'] < 0) | (f['capital-loss'] < 0),
            ),
            'HoursRange': (
                f'hours-per-week вне [{lo_h:g}, {hi_h:g}]',
                lambda f: (f['hours-per-week'] < lo_h) | (f['hours-per-week'] > hi_h),
            ),
            'FemaleHusband': (
                'sex = Female и relationship = Husband',
                lambda f: (f['sex'] == 'Female') & (f['relationship'] == 'Husband'),
            ),
            'MaleWife': (
                'sex = Male и relationship = Wife',
                lambda f: (f['sex'] == 'Male') & (f['relationship'] == 'Wife'),
            ),
            'EduRange': (
                f'education-num вне [{lo_e:g}, {hi_e:g}]',
                lambda f: (f['education-num'] < lo_e) | (f['education-num'] > hi_e),
            ),
        }

    def masks(self, table: Table) -> Dict[str, np.ndarray]:
        """Булевы маски нарушений по каждому правилу, включая агрегаты"""
        frame = table.frame
        masks = {rule_id: predicate(frame).to_numpy(dtype=bool)
                 for rule_id, (_, predicate) in self.rules(table.schema).items()}
        masks['RelationshipConflict'] = masks['FemaleHusband'] | masks['MaleWife']
        masks['AnyViolation'] = np.logical_or.reduce([masks[r] for r in self.BASE_RULES])
        return masks

    def check(self, table: Table) -> SemanticReport:
        n = len(table)
        descriptions = {rule_id: text for rule_id, (text, _) in self.rules(table.schema).items()}
        descriptions['RelationshipConflict'] = 'FemaleHusband или MaleWife'
        descriptions['AnyViolation'] = 'строка нарушает хотя бы одно базовое правило'

        results = {}
        for rule_id, mask in self.masks(table).items():
            flagged = np.flatnonzero(mask).tolist()
            results[rule_id] = RuleResult(
                rule_id=rule_id,
                description=descriptions[rule_id],
                count=len(flagged),
                rate=len(flagged) / n if n else 0.0,
                flagged=flagged,
            )
            if flagged:
                logger.info(f"Правило {rule_id}: {len(flagged)} нарушений ({results[rule_id].rate:.2%})")
        return SemanticReport(n_rows=n, rules=results)


def semantic_check(table: Table, hours_range: Optional[Tuple[float, float]] = None) -> SemanticReport:
    return SemanticChecker(hours_range=hours_range).check(table)
