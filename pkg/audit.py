#!/usr/bin/env python3
"""
Полный аудит синтетики: сходство, семантика, TSTR, раскрытие, структурные признаки
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from codec import CodecSpec, fit_codec
from config import (BACHELORS_MIN_EDUCATION_NUM, HOME_COUNTRY, LABEL_POSITIVE, PUBLISHED_REFERENCE,
                    TOOL_VERSION)
from disclosure import DisclosureReport, disclosure
from errors import SchemaError
from fidelity import FidelityScores, fidelity
from report_generator import ReportGenerator
from schema_ingest import Table, ingestion_summary
from semantic_checker import SemanticChecker, SemanticReport
from tstr import TSTRResult, tstr

logger = logging.getLogger(__name__)

# признак -> (столбцы, маска по DataFrame)
STRUCTURAL_FEATURES = {
    'high_income': (('income',), lambda f: f['income'] == LABEL_POSITIVE),
    'married_civ_spouse': (('marital-status',), lambda f: f['marital-status'] == 'Married-civ-spouse'),
    'husband': (('relationship',), lambda f: f['relationship'] == 'Husband'),
    'bachelors_plus': (('education-num',), lambda f: f['education-num'] >= BACHELORS_MIN_EDUCATION_NUM),
    'white': (('race',), lambda f: f['race'] == 'White'),
    'foreign_born': (('native-country',), lambda f: f['native-country'] != HOME_COUNTRY),
}


def feature_shares(table: Table) -> Dict[str, float]:
    """Доли строк с каждым структурным признаком"""
    needed = sorted({c for columns, _ in STRUCTURAL_FEATURES.values() for c in columns})
    missing = [c for c in needed if c not in table.schema]
    if missing:
        raise SchemaError(f"Для структурного отчета нет столбцов: {missing}")
    n = len(table)
    return {name: (float(mask(table.frame).sum()) / n if n else 0.0)
            for name, (_, mask) in STRUCTURAL_FEATURES.items()}


def structural_report(real: Table, synth: Table) -> Dict[str, Dict[str, float]]:
    return {'real': feature_shares(real), 'synthetic': feature_shares(synth)}


def has_structural_columns(schema) -> bool:
    return all(c in schema for columns, _ in STRUCTURAL_FEATURES.values() for c in columns)


@dataclass
class AuditReport:
    strategy: Optional[str]
    fidelity: FidelityScores
    semantic: Optional[SemanticReport]
    semantic_real: Optional[SemanticReport]
    tstr: Optional[TSTRResult]
    disclosure: DisclosureReport
    structural: Optional[Dict[str, Dict[str, float]]]
    ingestion: Dict[str, Dict] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'tool_version': TOOL_VERSION,
            'strategy': self.strategy,
            'fidelity': self.fidelity.to_dict(),
            'semantic': self.semantic.to_dict() if self.semantic is not None else None,
            'semantic_real': self.semantic_real.to_dict() if self.semantic_real is not None else None,
            'tstr': self.tstr.to_dict() if self.tstr is not None else None,
            'disclosure': self.disclosure.to_dict(),
            'structural': self.structural,
            'ingestion': self.ingestion,
            'reference': reference_for(self.strategy),
            'notes': self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + '\n'

    def to_markdown(self) -> str:
        return ReportGenerator().audit_markdown(self.to_dict())

    def save(self, directory: Union[str, Path], stem: str = 'audit_report') -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f'{stem}.json'
        md_path = directory / f'{stem}.md'
        json_path.write_text(self.to_json(), encoding='utf-8')
        md_path.write_text(self.to_markdown(), encoding='utf-8')
        return {'json': json_path, 'markdown': md_path}


def reference_for(strategy: Optional[str]) -> Dict:
    """Опубликованные значения для сравнения (не цели)"""
    reference = {
        'structural_real': PUBLISHED_REFERENCE['structural']['real'],
        'disclosure_range': list(PUBLISHED_REFERENCE['disclosure_range']),
        'pairwise_text_range': list(PUBLISHED_REFERENCE['pairwise_text_range']),
    }
    if strategy in PUBLISHED_REFERENCE['fidelity']:
        for section in ('fidelity', 'tstr', 'semantic', 'structural'):
            reference[section] = PUBLISHED_REFERENCE[section][strategy]
    return reference


def run_audit(real: Table, synth: Table, real_test: Optional[Table] = None, seed: int = 0,
              spec: Optional[CodecSpec] = None, strategy: Optional[str] = None,
              checker: Optional[SemanticChecker] = None) -> AuditReport:
    """
    Полная батарея проверок.

    Семантика и структурные признаки считаются только для схем со столбцами Adult,
    TSTR только при наличии тестовой таблицы и столбца метки.
    """
    if real.schema.names != synth.schema.names:
        raise SchemaError("Схемы реальной и синтетической таблиц различаются")
    if spec is None:
        spec = fit_codec(real)
    checker = checker or SemanticChecker()

    logger.info(f"Аудит: {len(real)} реальных строк, {len(synth)} синтетических, раскладка {strategy}")
    notes = [
        'оценка раскрытия не сравнима с опубликованным диапазоном 0.61-0.65: формулы различаются',
        'опубликованный диапазон попарных корреляций указан в двух вариантах '
        '(0.789-0.814 в тексте, 0.7785-0.8166 в таблице); оба приведены без выбора',
    ]

    semantic = semantic_real = None
    if checker.applies_to(real.schema):
        semantic, semantic_real = checker.check(synth), checker.check(real)
        notes.append('проверяются пять известных правил и два агрегата над ними; шестое правило не определено и не добавлялось')
    else:
        notes.append('в схеме нет столбцов Adult: семантическая проверка пропущена')

    structural = None
    if has_structural_columns(real.schema):
        structural = structural_report(real, synth)
    else:
        notes.append('в схеме нет столбцов Adult: структурный отчет пропущен')

    tstr_result = None
    if real_test is None:
        notes.append('тестовая таблица не задана: TSTR пропущен')
    elif real.schema.label not in real.schema:
        notes.append(f'нет столбца метки {real.schema.label}: TSTR пропущен')
    else:
        tstr_result = tstr(synth, real_test, seed=seed, spec=spec)

    ingestion = {'real': ingestion_summary(real), 'synthetic': ingestion_summary(synth)}
    if real_test is not None:
        ingestion['test'] = ingestion_summary(real_test)

    return AuditReport(
        strategy=strategy,
        fidelity=fidelity(real, synth),
        semantic=semantic,
        semantic_real=semantic_real,
        tstr=tstr_result,
        disclosure=disclosure(real, synth, spec=spec),
        structural=structural,
        ingestion=ingestion,
        notes=notes,
    )


def load_report(path: Union[str, Path]) -> Dict:
    return json.loads(Path(path).read_text(encoding='utf-8'))


def compare_reports(reports: Mapping[str, Union[AuditReport, Dict]]) -> str:
    """Сводная Markdown-таблица по нескольким запускам (ключ = имя запуска)"""
    data = {name: (r.to_dict() if isinstance(r, AuditReport) else r) for name, r in reports.items()}
    return ReportGenerator().comparison_markdown(data)
