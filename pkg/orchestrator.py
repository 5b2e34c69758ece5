#!/usr/bin/env python3
"""
Оркестратор конвейера: fit → layout → train → sample → decode → audit и запись артефактов
"""

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from audit import AuditReport, compare_reports, load_report, run_audit
from codec import CodecSpec, codec_summary, dump_grids, fit_codec, grids_to_table, load_grids
from config import (GRADCHECK_PARAMS, GRADCHECK_STEP, GRADCHECK_TOLERANCE, GRID_HEIGHT, GRID_WIDTH,
                    TOOL_VERSION, TRAIN_DEFAULTS)
from diffusion import (STREAM_GRADCHECK, Checkpoint, grad_check, keyed_generator, load_checkpoint, sample,
                       save_checkpoint, table_to_grids, train, write_loss_log)
from errors import NumericError, PipelineError, UsageError
from layout import Layout, association, build_layout, describe_choices, export_layout, load_plan, LayoutStrategy
from noise_schedule import NoiseSchedule
from pipeline_config import RunConfig, get_config
from report_generator import ReportGenerator
from schema_ingest import (CleaningPolicy, Table, conform_table, dump_schema, ingestion_summary, load_schema,
                           load_table, load_tables, merge_vocabularies, write_table)
from unet import DenoiserNet

logger = logging.getLogger(__name__)

ARTIFACT_KINDS = ('synthetic_csv', 'checkpoint', 'loss_log', 'layout_export', 'audit_report', 'manifest')

# Маленькая линейная сеть для проверки градиентов
GRADCHECK_NET = {'base_width': 4, 'time_dim': 8, 'groups': 2, 'activation': 'identity', 'norm': False,
                 'zero_init_output': False}
GRADCHECK_BATCH = 4
GRADCHECK_TIMESTEPS = 100


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Журнал запуска: конфигурация, хэши входов, время стадий, пути артефактов"""

    command: str
    config: Dict
    tool_version: str = TOOL_VERSION
    inputs: Dict[str, str] = field(default_factory=dict)
    stages: List[Dict] = field(default_factory=list)
    artifacts: Dict[str, object] = field(default_factory=dict)
    artifact_hashes: Dict[str, str] = field(default_factory=dict)
    auxiliary: List[str] = field(default_factory=list)
    snapshots: List[str] = field(default_factory=list)
    summary: Dict = field(default_factory=dict)
    status: str = 'running'
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            'command': self.command,
            'config': self.config,
            'tool_version': self.tool_version,
            'inputs': self.inputs,
            'stages': self.stages,
            'artifacts': self.artifacts,
            'artifact_hashes': self.artifact_hashes,
            'auxiliary': self.auxiliary,
            'snapshots': self.snapshots,
            'summary': self.summary,
            'status': self.status,
            'failed_stage': self.failed_stage,
            'error': self.error,
        }


class PipelineOrchestrator:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.names = get_config('output')
        self.manifest = RunManifest(command=cfg.command, config=cfg.to_dict())
        self.reports = ReportGenerator() if cfg.charts else None

        self.table: Optional[Table] = None
        self.test_table: Optional[Table] = None
        self.spec: Optional[CodecSpec] = None
        self.layout: Optional[Layout] = None
        self.checkpoint: Optional[Checkpoint] = None
        self.synthetic: Optional[Table] = None

    # --- служебное ---

    def _prepare_out(self):
        if self.out.exists() and any(self.out.iterdir()) and not self.cfg.force:
            raise UsageError(f"Каталог {self.out} не пуст; используйте --force для перезаписи")
        self.out.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.out / self.names[key]

    def _relative(self, path: Path) -> str:
        return Path(path).relative_to(self.out).as_posix()

    def _artifact(self, kind: str, path):
        if isinstance(path, dict):
            self.manifest.artifacts[kind] = {k: self._relative(p) for k, p in sorted(path.items())}
            for p in path.values():
                self.manifest.artifact_hashes[self._relative(p)] = file_sha256(p)
        else:
            self.manifest.artifacts[kind] = self._relative(path)
            self.manifest.artifact_hashes[self._relative(path)] = file_sha256(path)

    def _auxiliary(self, path: Path):
        self.manifest.auxiliary.append(self._relative(path))

    def _hash_inputs(self, paths: List[Optional[Path]]):
        for path in paths:
            if path is not None and Path(path).exists():
                self.manifest.inputs[str(path)] = file_sha256(Path(path))

    def _write_json(self, path: Path, data: Dict):
        path.write_text(json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + '\n', encoding='utf-8')

    def save_manifest(self) -> Path:
        path = self._path('manifest')
        self.manifest.artifacts['manifest'] = self._relative(path)
        self._write_json(path, self.manifest.to_dict())
        return path

    @contextmanager
    def stage(self, name: str):
        """Замер времени стадии; при ошибке манифест выполненных стадий сохраняется"""
        started = time.perf_counter()
        logger.info(f"Стадия {name}: начало")
        try:
            yield
        except Exception as e:
            if isinstance(e, PipelineError):
                e.with_stage(name)
            self.manifest.status = 'failed'
            self.manifest.failed_stage = name
            self.manifest.error = str(e)
            self.save_manifest()
            logger.error(f"Стадия {name} завершилась ошибкой: {e}")
            raise
        wall = time.perf_counter() - started
        self.manifest.stages.append({'name': name, 'wall_seconds': round(wall, 3)})
        logger.info(f"Стадия {name}: готово за {wall:.1f} с")

    # --- стадии ---

    def fit_stage(self):
        cfg = self.cfg
        if cfg.schema is None or not cfg.train_csv:
            raise UsageError("Нужны --schema и --train-csv")
        self._hash_inputs([cfg.schema, *cfg.train_csv, cfg.test_csv, cfg.plan])

        schema = load_schema(cfg.schema)
        self.table = load_tables(cfg.train_csv, schema, header=cfg.header)
        self.spec = fit_codec(self.table, (GRID_HEIGHT, GRID_WIDTH))
        if cfg.test_csv is not None:
            self.test_table = load_table(cfg.test_csv, self.table.schema,
                                         CleaningPolicy(extend_vocabulary=True), header=cfg.header)

        schema_path = self._path('schema')
        schema_path.write_text(dump_schema(self.table.schema), encoding='utf-8')
        self._auxiliary(schema_path)
        codec_path = self._path('codec')
        self._write_json(codec_path, self.spec.to_dict())
        self._auxiliary(codec_path)

        self.manifest.summary['ingestion'] = {'train': ingestion_summary(self.table)}
        if self.test_table is not None:
            self.manifest.summary['ingestion']['test'] = ingestion_summary(self.test_table)
        self.manifest.summary['codec'] = codec_summary(self.spec)

    def layout_stage(self):
        cfg = self.cfg
        plan = load_plan(cfg.plan) if cfg.plan is not None else None
        self.layout = build_layout(cfg.strategy, self.spec, table=self.table, plan=plan, measure=cfg.measure)

        export_path = self._path('layout_export')
        export_path.write_text(export_layout(self.layout, self.spec), encoding='utf-8')
        self._artifact('layout_export', export_path)
        layout_json = self._path('layout_json')
        self._write_json(layout_json, self.layout.to_dict())
        self._auxiliary(layout_json)
        self.manifest.summary['layout'] = {
            'strategy': self.layout.strategy.value,
            'padding_cells': len(self.layout.padding_cells),
            'block_order': list(self.layout.block_order),
            'choices': describe_choices(cfg.strategy, cfg.measure),
        }

        if self.reports is not None:
            charts = self._path('charts')
            block_cells = {b.column_name: [self.layout.assignment[s] for s in b.slots] for b in self.spec.blocks}
            self._auxiliary(self.reports.create_layout_map(block_cells, self.layout.grid_shape,
                                                           charts / 'layout_map.png'))
            if cfg.strategy == LayoutStrategy.CLUSTERED:
                assoc = association(self.table, cfg.measure)
                self._auxiliary(self.reports.create_association_heatmap(assoc.columns, assoc.values,
                                                                        charts / 'association.png'))

    def _snapshot(self, ckpt: Checkpoint):
        directory = self._path('snapshots')
        path = directory / f'epoch_{ckpt.epoch:03d}.ckpt'
        save_checkpoint(ckpt, path)
        self.manifest.snapshots.append(self._relative(path))
        if self.cfg.snapshot_rows > 0:
            grids = sample(ckpt, self.cfg.snapshot_rows, self.cfg.seed, clamp=self.cfg.clamp,
                           variance=self.cfg.variance)
            table = grids_to_table(grids, ckpt.layout_obj, ckpt.codec_spec, clamp=self.cfg.clamp)
            csv_path = directory / f'synthetic_epoch_{ckpt.epoch:03d}.csv'
            write_table(table, csv_path)
            self.manifest.snapshots.append(self._relative(csv_path))

    def _assumed_defaults(self) -> List[str]:
        """Гиперпараметры, оставленные на наших значениях по умолчанию (их исходные значения неизвестны)"""
        assumed = [name for name, value in (('learning_rate', self.cfg.train.learning_rate),
                                            ('batch_size', self.cfg.train.batch_size))
                   if value == TRAIN_DEFAULTS[name]]
        if assumed:
            logger.warning(f"Используются предполагаемые значения по умолчанию: {', '.join(assumed)}")
        return assumed

    def train_stage(self):
        try:
            self.checkpoint = train(self.table, self.layout, self.spec, self.cfg.train, on_snapshot=self._snapshot)
        except NumericError as e:
            if e.last_good is not None:
                path = self.out / 'model_last_good.ckpt'
                save_checkpoint(e.last_good, path)
                self._auxiliary(path)
            raise

        ckpt_path = self._path('checkpoint')
        save_checkpoint(self.checkpoint, ckpt_path)
        self._artifact('checkpoint', ckpt_path)
        loss_path = self._path('loss_log')
        write_loss_log(self.checkpoint, loss_path)
        self._artifact('loss_log', loss_path)
        history = self.checkpoint.loss_history
        self.manifest.summary['training'] = {
            'param_count': int(sum(p.size for p in self.checkpoint.params.values())),
            'first_loss': history[0][1] if history else None,
            'final_loss': history[-1][1] if history else None,
            'schedule': NoiseSchedule.linear(self.cfg.train.timesteps).to_dict(),
            'assumed_defaults': self._assumed_defaults(),
        }
        if self.reports is not None:
            self._auxiliary(self.reports.create_loss_chart(self.checkpoint.loss_history,
                                                           self._path('charts') / 'loss.png'))

    def sample_stage(self):
        ckpt = self.checkpoint
        layout, spec = ckpt.layout_obj, ckpt.codec_spec
        if self.cfg.grids is not None:
            grids = load_grids(Path(self.cfg.grids).read_text(encoding='utf-8'), tuple(layout.grid_shape))
            logger.info(f"Декодируются {len(grids)} сеток из дампа {self.cfg.grids}")
        else:
            grids = sample(ckpt, self.cfg.rows, self.cfg.seed, clamp=self.cfg.clamp, variance=self.cfg.variance)
        self.synthetic = grids_to_table(grids, layout, spec, clamp=self.cfg.clamp)

        csv_path = self._path('synthetic_csv')
        write_table(self.synthetic, csv_path)
        self._artifact('synthetic_csv', csv_path)
        if self.cfg.dump_grids:
            dump_path = self._path('grids_dump')
            dump_path.write_text(dump_grids(grids), encoding='utf-8')
            self._auxiliary(dump_path)
        self.manifest.summary['sampling'] = {'rows': len(grids), 'clamp': self.cfg.clamp,
                                             'variance': self.cfg.variance,
                                             'source': 'grids' if self.cfg.grids is not None else 'model'}

        if self.reports is not None and self.table is not None:
            real = table_to_grids(self.table, layout, spec)
            self._auxiliary(self.reports.create_mean_grid_chart(
                {'реальные': real, 'синтетика': grids}, self._path('charts') / 'mean_grids.png'))

    def audit_stage(self) -> AuditReport:
        report = run_audit(self.table, self.synthetic, real_test=self.test_table, seed=self.cfg.seed,
                           spec=self.spec, strategy=self.cfg.strategy.value)
        paths = report.save(self.out, self.names['audit_stem'])
        self._artifact('audit_report', paths)
        self.manifest.summary['audit'] = {
            'overall_fidelity': report.fidelity.overall,
            'any_violation': report.semantic.rate('AnyViolation') if report.semantic else None,
            'disclosure_score': report.disclosure.score,
        }
        return report

    def _finish(self) -> RunManifest:
        self.manifest.status = 'ok'
        self.save_manifest()
        return self.manifest

    # --- команды ---

    def cmd_fit(self) -> RunManifest:
        self._prepare_out()
        with self.stage('fit'):
            self.fit_stage()
        return self._finish()

    def cmd_layout(self) -> RunManifest:
        self._prepare_out()
        with self.stage('fit'):
            self.fit_stage()
        with self.stage('layout'):
            self.layout_stage()
        return self._finish()

    def cmd_train(self) -> RunManifest:
        self._prepare_out()
        with self.stage('fit'):
            self.fit_stage()
        with self.stage('layout'):
            self.layout_stage()
        with self.stage('train'):
            self.train_stage()
        return self._finish()

    def cmd_sample(self) -> RunManifest:
        if self.cfg.checkpoint is None:
            raise UsageError("Нужен --checkpoint")
        self._prepare_out()
        self._hash_inputs([self.cfg.checkpoint, self.cfg.grids])
        with self.stage('load'):
            self.checkpoint = load_checkpoint(self.cfg.checkpoint)
        with self.stage('sample'):
            self.sample_stage()
        return self._finish()

    def cmd_pipeline(self) -> RunManifest:
        self._prepare_out()
        with self.stage('fit'):
            self.fit_stage()
        with self.stage('layout'):
            self.layout_stage()
        with self.stage('train'):
            self.train_stage()
        with self.stage('sample'):
            self.sample_stage()
        with self.stage('audit'):
            self.audit_stage()
        return self._finish()

    def cmd_audit(self) -> AuditReport:
        """Отдельный аудит готового CSV без обучения"""
        cfg = self.cfg
        real_csv = cfg.real_csv or (cfg.train_csv[0] if cfg.train_csv else None)
        if cfg.schema is None or real_csv is None or cfg.synth_csv is None:
            raise UsageError("Нужны --schema, --real-csv и --synth-csv")
        self._prepare_out()
        self._hash_inputs([cfg.schema, real_csv, cfg.synth_csv, cfg.test_csv])

        with self.stage('load'):
            schema = load_schema(cfg.schema)
            policy = CleaningPolicy(extend_vocabulary=True)
            real = load_table(real_csv, schema, policy, header=cfg.header)
            synth = load_table(cfg.synth_csv, schema, policy, header=True)
            tables = [real, synth]
            test = None
            if cfg.test_csv is not None:
                test = load_table(cfg.test_csv, schema, policy, header=cfg.header)
                tables.append(test)
            shared = merge_vocabularies(*tables)
            real, synth = conform_table(real, shared), conform_table(synth, shared)
            if test is not None:
                test = conform_table(test, shared)
        with self.stage('audit'):
            report = run_audit(real, synth, real_test=test, seed=cfg.seed, spec=fit_codec(real))
            self._artifact('audit_report', report.save(self.out, self.names['audit_stem']))
        self._finish()
        return report

    def cmd_gradcheck(self, hook: Optional[Callable] = None) -> Dict:
        """Проверка градиентов на фиксированной маленькой сети; провал → NumericError"""
        seed = self.cfg.seed
        net = DenoiserNet(seed=seed, **GRADCHECK_NET)
        net.grad_hook = hook
        batch = keyed_generator(seed, STREAM_GRADCHECK, 1).uniform(
            -1.0, 1.0, (GRADCHECK_BATCH, GRID_HEIGHT, GRID_WIDTH))
        schedule = NoiseSchedule.linear(GRADCHECK_TIMESTEPS)
        result = grad_check(net, batch, (seed, STREAM_GRADCHECK, 2), schedule,
                            n_params=GRADCHECK_PARAMS, step=GRADCHECK_STEP, seed=seed)
        result['tolerance'] = GRADCHECK_TOLERANCE
        result['passed'] = bool(result['max_relative_error'] < GRADCHECK_TOLERANCE)
        if not result['passed']:
            raise NumericError(f"Проверка градиентов провалена: максимальная относительная ошибка "
                               f"{result['max_relative_error']:.3e} ≥ {GRADCHECK_TOLERANCE}",
                               stage='gradcheck')
        return result

    def cmd_compare(self) -> str:
        """Сравнение аудитов нескольких каталогов запусков"""
        if not self.cfg.runs:
            raise UsageError("Нужен хотя бы один каталог в --runs")
        self._prepare_out()
        reports = {}
        for run in self.cfg.runs:
            path = Path(run) / f"{self.names['audit_stem']}.json"
            if not path.exists():
                raise UsageError(f"В каталоге {run} нет отчета аудита")
            reports[Path(run).name] = load_report(path)
        text = compare_reports(reports)
        path = self.out / 'comparison.md'
        path.write_text(text, encoding='utf-8')
        self._auxiliary(path)
        self._finish()
        return text
