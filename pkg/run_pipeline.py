#!/usr/bin/env python3
"""
Скрипт для запуска конвейера синтетических таблиц через псевдо-изображения
"""

import argparse
import logging
import sys
from pathlib import Path

# Добавляем текущую директорию в путь
sys.path.insert(0, str(Path(__file__).parent))

from config import LOG_FILE, LOG_LEVEL
from errors import EXIT_OK, EXIT_USAGE, PipelineError

COMMANDS = ('fit', 'layout', 'train', 'sample', 'audit', 'pipeline', 'gradcheck', 'compare')


class UsageParser(argparse.ArgumentParser):
    """argparse с кодом выхода 1 при ошибке использования"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def check_dependencies():
    """Проверяет наличие необходимых зависимостей"""
    required_modules = [
        'numpy',
        'pandas',
        'scipy',
        'sklearn',
        'yaml',
        'dotenv',
        'matplotlib',
        'seaborn',
    ]

    missing_modules = []
    for module in required_modules:
        try:
            __import__(module)
        except ImportError:
            missing_modules.append(module)

    if missing_modules:
        print("❌ Отсутствуют необходимые модули:")
        for module in missing_modules:
            print(f"   - {module}")
        print("\nУстановите их командой:")
        print("pip install -r requirements.txt")
        return False

    return True


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(description="Синтетические табличные данные: диффузия над псевдо-изображениями")
    sub = parser.add_subparsers(dest='command', parser_class=UsageParser)
    sub.required = True

    def data_flags(p):
        p.add_argument('--schema', help='YAML-схема таблицы')
        p.add_argument('--train-csv', nargs='+', help='Обучающие CSV (несколько файлов объединяются)')
        p.add_argument('--test-csv', help='Тестовый CSV для TSTR')
        p.add_argument('--no-header', action='store_true', help='CSV без строки заголовка (как у UCI Adult)')

    def layout_flags(p):
        p.add_argument('--layout', choices=['baseline', 'clustered', 'manual'], help='Стратегия раскладки')
        p.add_argument('--measure', choices=['max_abs_pearson', 'cramers_v'], help='Мера связи для кластеризации')
        p.add_argument('--plan', help='YAML-план ручной раскладки')

    def train_flags(p):
        p.add_argument('--epochs', type=int)
        p.add_argument('--timesteps', type=int)
        p.add_argument('--batch-size', type=int)
        p.add_argument('--lr', type=float)
        p.add_argument('--weight-decay', type=float)
        p.add_argument('--base-width', type=int)
        p.add_argument('--sample-every', type=int, help='Снимок чекпоинта каждые N эпох')
        p.add_argument('--snapshot-rows', type=int, help='Сколько строк сэмплировать на каждом снимке')

    def sample_flags(p):
        p.add_argument('--rows', type=int, help='Число синтетических строк')
        p.add_argument('--no-clamp', action='store_true', help='Не обрезать числа по диапазону обучения')
        p.add_argument('--variance', choices=['beta', 'posterior'], help='Дисперсия шага обратного процесса')
        p.add_argument('--dump-grids', action='store_true', help='Сохранить сырые сетки до декодирования')

    def common_flags(p):
        p.add_argument('--seed', type=int)
        p.add_argument('--out', help='Каталог результатов')
        p.add_argument('--force', action='store_true', help='Разрешить запись в непустой каталог')
        p.add_argument('--charts', action='store_true', help='Сохранить PNG-графики')
        p.add_argument('--set', action='append', metavar='KEY=VALUE',
                       help='Переопределить ключ PIPELINE_CONFIG (значение в YAML)')

    p = sub.add_parser('fit', help='Загрузка, очистка и обучение кодека')
    data_flags(p)
    common_flags(p)

    p = sub.add_parser('layout', help='Построение раскладки признаков на сетке')
    data_flags(p)
    layout_flags(p)
    common_flags(p)

    p = sub.add_parser('train', help='Обучение диффузионной модели')
    data_flags(p)
    layout_flags(p)
    train_flags(p)
    common_flags(p)

    p = sub.add_parser('sample', help='Сэмплирование из сохраненного чекпоинта')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--grids', help='Декодировать сохраненные сетки вместо сэмплирования')
    sample_flags(p)
    common_flags(p)

    p = sub.add_parser('audit', help='Аудит готовой синтетики')
    p.add_argument('--schema')
    p.add_argument('--real-csv', required=True)
    p.add_argument('--synth-csv', required=True)
    p.add_argument('--test-csv')
    p.add_argument('--no-header', action='store_true', help='Реальные CSV без заголовка')
    common_flags(p)

    p = sub.add_parser('pipeline', help='Полный цикл: fit → layout → train → sample → audit')
    data_flags(p)
    layout_flags(p)
    train_flags(p)
    sample_flags(p)
    common_flags(p)

    p = sub.add_parser('gradcheck', help='Проверка аналитических градиентов сети')
    p.add_argument('--seed', type=int)

    p = sub.add_parser('compare', help='Сравнение отчетов нескольких запусков')
    p.add_argument('--runs', nargs='+', required=True, help='Каталоги запусков')
    p.add_argument('--out', help='Каталог для comparison.md')
    p.add_argument('--force', action='store_true')

    return parser


def run(args) -> int:
    from orchestrator import PipelineOrchestrator
    from pipeline_config import build_run_config

    cfg = build_run_config(args)
    orchestrator = PipelineOrchestrator(cfg)

    if args.command == 'gradcheck':
        print("🧮 Проверка градиентов...")
        result = orchestrator.cmd_gradcheck()
        print(f"✅ Максимальная относительная ошибка: {result['max_relative_error']:.3e} "
              f"({result['checked']} из {result['param_count']} параметров)")
        return EXIT_OK

    if args.command == 'audit':
        print("🔍 Аудит синтетики...")
        report = orchestrator.cmd_audit()
        print(f"📈 Общее сходство: {report.fidelity.overall:.2%}")
        print(f"🔒 Оценка раскрытия: {report.disclosure.score:.4f}")
        print(f"📁 Отчет: {cfg.out}")
        return EXIT_OK

    if args.command == 'compare':
        print("📊 Сравнение запусков...")
        print(orchestrator.cmd_compare())
        return EXIT_OK

    handlers = {
        'fit': orchestrator.cmd_fit,
        'layout': orchestrator.cmd_layout,
        'train': orchestrator.cmd_train,
        'sample': orchestrator.cmd_sample,
        'pipeline': orchestrator.cmd_pipeline,
    }
    print(f"🚀 Запуск команды {args.command}...")
    manifest = handlers[args.command]()
    for stage in manifest.stages:
        print(f"✅ {stage['name']}: {stage['wall_seconds']:.1f} с")
    audit = manifest.summary.get('audit')
    if audit:
        print(f"📈 Общее сходство: {audit['overall_fidelity']:.2%}")
        if audit['any_violation'] is not None:
            print(f"🧩 Строк с семантическими ошибками: {audit['any_violation']:.2%}")
        print(f"🔒 Оценка раскрытия: {audit['disclosure_score']:.4f}")
    print(f"📁 Результаты: {cfg.out}")
    return EXIT_OK


def main(argv=None):
    """Основная функция запуска"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # Настраиваем логирование
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(LOG_FILE),
            logging.StreamHandler()
        ]
    )

    if not check_dependencies():
        sys.exit(EXIT_USAGE)

    try:
        sys.exit(run(args))
    except PipelineError as e:
        where = f" (стадия {e.stage})" if e.stage else ""
        print(f"❌ Ошибка{where}: {e}")
        logging.error(f"Ошибка конвейера{where}: {e}")
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        print("\n⏹️ Остановлено пользователем")
        sys.exit(EXIT_USAGE)
    except Exception as e:
        print(f"❌ Непредвиденная ошибка: {e}")
        logging.error(f"Непредвиденная ошибка: {e}", exc_info=True)
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
