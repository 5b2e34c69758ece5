import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import seaborn as sns

from config import LABEL_NEGATIVE, LABEL_POSITIVE

# Настройка для русского языка
plt.rcParams['font.family'] = ['DejaVu Sans', 'Arial Unicode MS', 'sans-serif']

logger = logging.getLogger(__name__)

SEMANTIC_ORDER = ('NegCapital', 'HoursRange', 'FemaleHusband', 'MaleWife', 'EduRange',
                  'RelationshipConflict', 'AnyViolation')
STRUCTURAL_LABELS = {
    'high_income': '>50K',
    'married_civ_spouse': 'Married-civ-spouse',
    'husband': 'Husband',
    'bachelors_plus': 'Bachelors+',
    'white': 'White',
    'foreign_born': 'Foreign-born',
}


def _pct(value: Optional[float]) -> str:
    return 'n/a' if value is None else f'{100 * value:.2f}%'


def _num(value: Optional[float], digits: int = 4) -> str:
    return 'n/a' if value is None else f'{value:.{digits}f}'


def _table(header: Sequence[str], rows: List[Sequence[str]]) -> List[str]:
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    lines.extend('| ' + ' | '.join(str(c) for c in row) + ' |' for row in rows)
    return lines


class ReportGenerator:
    """Markdown-сводки аудита и необязательные PNG-графики"""

    def __init__(self):
        self.colors = {
            'primary': '#2E86AB',
            'secondary': '#A23B72',
            'accent': '#F18F01',
            'padding': '#D0D0D0',
        }

        # Настройка стиля графиков
        sns.set_style("whitegrid")

    def audit_markdown(self, report: Dict) -> str:
        """Сводка одного аудита; справочные значения рядом с нашими"""
        reference = report.get('reference', {})
        strategy = report.get('strategy') or 'не указана'
        lines = [f"# 📊 Отчет аудита синтетики (раскладка: {strategy})", ""]

        ingestion = report.get('ingestion', {})
        if ingestion:
            lines.append("## 📥 Данные")
            rows = [[name, s['raw_rows'], s['dropped_rows'], s['kept_rows']] for name, s in sorted(ingestion.items())]
            lines += _table(['таблица', 'строк в файле', 'отброшено', 'осталось'], rows) + [""]

        fid = report['fidelity']
        ref_fid = reference.get('fidelity', {})
        lines.append("## 📈 Статистическое сходство")
        lines += _table(['метрика', 'наш запуск', 'опубликовано'], [
            ['Column Shapes', _pct(fid['column_shapes_mean']), _pct(ref_fid.get('column_shapes'))],
            ['Pairwise Correlations', _pct(fid['pairwise_mean']), _pct(ref_fid.get('pairwise'))],
            ['Overall', _pct(fid['overall']), _pct(ref_fid.get('overall'))],
        ])
        if fid.get('skipped_pairs'):
            lines.append(f"\nПропущено пар: {len(fid['skipped_pairs'])}")
        worst = sorted(fid['column_shapes'].items(), key=lambda x: x[1])[:3]
        lines.append("\nХудшие столбцы: " + ', '.join(f"{name} ({score:.3f})" for name, score in worst))
        lines.append("")

        if report.get('semantic'):
            lines += self._semantic_section(report, reference)

        tstr = report.get('tstr')
        if tstr:
            ref_tstr = reference.get('tstr', {})
            lines.append("## 🎯 TSTR (обучение на синтетике, проверка на реальных)")
            lines += _table(['метрика', 'наш запуск', 'опубликовано'], [
                ['Accuracy', _num(tstr['accuracy']), _num(ref_tstr.get('accuracy'), 3)],
                [f'F1 {LABEL_NEGATIVE}', _num(tstr['f1'][LABEL_NEGATIVE]), _num(ref_tstr.get('f1_low'), 3)],
                [f'F1 {LABEL_POSITIVE}', _num(tstr['f1'][LABEL_POSITIVE]), _num(ref_tstr.get('f1_high'), 3)],
            ])
            if tstr.get('degenerate'):
                lines.append("\n⚠️ Классификатор выродился: в синтетике один класс дохода")
            lines.append("")

        dis = report['disclosure']
        low, high = reference.get('disclosure_range', (None, None))
        lines.append("## 🔒 Риск раскрытия")
        lines.append(f"• Минимальный DCR: {dis['min_dcr']:.4f}")
        lines.append(f"• Медианный DCR: {dis['median_dcr']:.4f}")
        lines.append(f"• Точных совпадений: {dis['exact_matches']}")
        lines.append(f"• Оценка: {dis['score']:.4f}")
        lines.append(f"• Формула: {dis['formula']}")
        if low is not None:
            lines.append(f"• Опубликованный диапазон {low}-{high} получен другой формулой и не сравним напрямую")
        lines.append("")

        if report.get('structural'):
            lines += self._structural_section(report, reference)

        if report.get('notes'):
            lines += ["", "## 💡 Примечания"] + [f"• {note}" for note in report['notes']]
        return "\n".join(lines) + "\n"

    def _semantic_section(self, report: Dict, reference: Dict) -> List[str]:
        lines = ["## 🧩 Семантические ошибки"]
        ref_sem = reference.get('semantic', {})
        real_rules = (report.get('semantic_real') or {}).get('rules', {})
        rows = []
        for rule_id in SEMANTIC_ORDER:
            rule = report['semantic']['rules'].get(rule_id)
            if rule is None:
                continue
            real_rate = real_rules.get(rule_id, {}).get('rate')
            rows.append([rule_id, rule['count'], _pct(rule['rate']), _pct(real_rate), _pct(ref_sem.get(rule_id))])
        return lines + _table(['правило', 'нарушений', 'доля', 'реальные данные', 'опубликовано'], rows) + [""]

    def _structural_section(self, report: Dict, reference: Dict) -> List[str]:
        lines = ["## 🏛 Структурные признаки"]
        ref_struct = reference.get('structural', {})
        ref_real = reference.get('structural_real', {})
        rows = []
        for key, label in STRUCTURAL_LABELS.items():
            rows.append([label, _pct(report['structural']['real'][key]), _pct(report['structural']['synthetic'][key]),
                         _pct(ref_real.get(key)), _pct(ref_struct.get(key))])
        return lines + _table(['признак', 'реальные', 'синтетика', 'опубл. реальные', 'опубл. синтетика'], rows)

    def comparison_markdown(self, reports: Dict[str, Dict]) -> str:
        """Сравнение нескольких запусков, по колонке на запуск"""
        names = list(reports)
        lines = ["# 📊 Сравнение запусков", ""]

        def row(label, getter, fmt=_pct):
            values = []
            for name in names:
                try:
                    values.append(fmt(getter(reports[name])))
                except (KeyError, TypeError):
                    values.append('n/a')
            return [label] + values

        header = ['метрика'] + names
        lines.append("## 📈 Сходство и полезность")
        lines += _table(header, [
            row('Раскладка', lambda r: r['strategy'], fmt=lambda v: v or 'n/a'),
            row('Column Shapes', lambda r: r['fidelity']['column_shapes_mean']),
            row('Pairwise Correlations', lambda r: r['fidelity']['pairwise_mean']),
            row('Overall', lambda r: r['fidelity']['overall']),
            row('TSTR accuracy', lambda r: r['tstr']['accuracy'], fmt=_num),
            row(f'F1 {LABEL_POSITIVE}', lambda r: r['tstr']['f1'][LABEL_POSITIVE], fmt=_num),
            row('Оценка раскрытия', lambda r: r['disclosure']['score'], fmt=_num),
        ]) + [""]

        lines.append("## 🧩 Семантические ошибки")
        lines += _table(header, [row(rule_id, lambda r, k=rule_id: r['semantic']['rules'][k]['rate'])
                                 for rule_id in SEMANTIC_ORDER]) + [""]

        lines.append("## 🏛 Структурные признаки (синтетика)")
        lines += _table(header, [row(label, lambda r, k=key: r['structural']['synthetic'][k])
                                 for key, label in STRUCTURAL_LABELS.items()])
        return "\n".join(lines) + "\n"

    # --- графики ---

    def _save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        plt.savefig(path, format='png', dpi=150, bbox_inches='tight')
        plt.close()
        return path

    def create_association_heatmap(self, columns: Sequence[str], values: np.ndarray, path) -> Path:
        """Тепловая карта матрицы связи между столбцами"""
        plt.figure(figsize=(10, 8))
        sns.heatmap(values, xticklabels=columns, yticklabels=columns, cmap='viridis',
                    vmin=0.0, vmax=1.0, square=True)
        plt.title('Связь между столбцами', fontsize=14, fontweight='bold')
        return self._save(path)

    def create_layout_map(self, block_cells: Dict[str, List[Tuple[int, int]]],
                          grid_shape: Tuple[int, int], path) -> Path:
        """Карта сетки: номер блока в каждой ячейке, заполнение серым"""
        grid = np.full(grid_shape, np.nan)
        names = list(block_cells)
        for index, name in enumerate(names):
            for r, c in block_cells[name]:
                grid[r, c] = index

        plt.figure(figsize=(9, 8))
        ax = sns.heatmap(grid, cmap='tab20', cbar=False, linewidths=0.5, linecolor='white',
                         mask=np.isnan(grid))
        ax.set_facecolor(self.colors['padding'])
        for index, name in enumerate(names):
            r, c = block_cells[name][0]
            ax.text(c + 0.5, r + 0.5, name[:6], ha='center', va='center', fontsize=6)
        plt.title('Раскладка признаков на сетке', fontsize=14, fontweight='bold')
        return self._save(path)

    def create_mean_grid_chart(self, grids: Dict[str, np.ndarray], path) -> Path:
        """Средние псевдо-изображения (например, реальные и синтетические)"""
        fig, axes = plt.subplots(1, len(grids), figsize=(4 * len(grids), 4), squeeze=False)
        for ax, (title, batch) in zip(axes[0], grids.items()):
            ax.imshow(np.asarray(batch).mean(axis=0), cmap='gray', vmin=-1.0, vmax=1.0)
            ax.set_title(title)
            ax.axis('off')
        return self._save(path)

    def create_loss_chart(self, history: Sequence[Tuple[int, float]], path) -> Path:
        plt.figure(figsize=(8, 5))
        epochs = [e for e, _ in history]
        losses = [v for _, v in history]
        plt.plot(epochs, losses, marker='o', color=self.colors['primary'], linewidth=2)
        plt.title('Функция потерь по эпохам', fontsize=14, fontweight='bold')
        plt.xlabel('Эпоха')
        plt.ylabel('MSE шума')
        return self._save(path)
