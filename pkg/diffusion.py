#!/usr/bin/env python3
"""
Обучение и сэмплирование DDPM на псевдо-изображениях, проверка градиентов, чекпоинты
"""

import io
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from codec import CodecSpec, encode_table, vectors_to_grids
from config import (ADAM_BETAS, ADAM_EPS, GRADCHECK_FLOOR, GRADCHECK_PARAMS, GRADCHECK_STEP,
                    NORMALIZED_RANGE, SAMPLE_CHUNK, TRAIN_DEFAULTS)
from errors import DataError, NumericError, UsageError
from layout import Layout
from noise_schedule import NoiseSchedule
from schema_ingest import Table
from unet import DenoiserNet

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = 'PSEUDOIMG-DDPM'
CHECKPOINT_VERSION = 1
ZIP_DATE = (1980, 1, 1, 0, 0, 0)

# Независимые потоки Philox
STREAM_TRAIN = 0
STREAM_SHUFFLE = 1
STREAM_SAMPLE = 2
STREAM_GRADCHECK = 3

RngState = Tuple[int, ...]


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = TRAIN_DEFAULTS['epochs']
    batch_size: int = TRAIN_DEFAULTS['batch_size']
    learning_rate: float = TRAIN_DEFAULTS['learning_rate']
    weight_decay: float = TRAIN_DEFAULTS['weight_decay']
    sample_every: int = TRAIN_DEFAULTS['sample_every']
    sample_count: int = TRAIN_DEFAULTS['sample_count']
    timesteps: int = TRAIN_DEFAULTS['timesteps']
    base_width: int = TRAIN_DEFAULTS['base_width']

    def __post_init__(self):
        if self.seed is None:
            raise UsageError("Сид обязателен для обучения")
        if self.epochs < 0:
            raise UsageError(f"Число эпох не может быть отрицательным: {self.epochs}")
        for name in ('batch_size', 'sample_every', 'timesteps', 'base_width'):
            if getattr(self, name) < 1:
                raise UsageError(f"Параметр {name} должен быть положительным: {getattr(self, name)}")
        if self.sample_count < 0:
            raise UsageError(f"sample_count не может быть отрицательным: {self.sample_count}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise UsageError("Скорость обучения должна быть > 0, weight decay ≥ 0")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Checkpoint:
    """Веса, расписание, кодек и раскладка: все, что нужно для сэмплирования"""

    params: Dict[str, np.ndarray]
    net_config: Dict
    timesteps: int
    codec: Dict
    layout: Dict
    codec_fingerprint: str
    layout_fingerprint: str
    train_config: Dict
    epoch: int
    loss_history: List[Tuple[int, float]] = field(default_factory=list)
    # время эпох в чекпоинт не пишется
    wall_seconds: List[float] = field(default_factory=list)

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.timesteps)

    @property
    def codec_spec(self) -> CodecSpec:
        return CodecSpec.from_dict(self.codec)

    @property
    def layout_obj(self) -> Layout:
        return Layout.from_dict(self.layout)

    def build_net(self) -> DenoiserNet:
        return DenoiserNet.from_config(self.net_config, self.params)

    def meta(self) -> Dict:
        return {
            'magic': CHECKPOINT_MAGIC,
            'version': CHECKPOINT_VERSION,
            'net': self.net_config,
            'schedule': self.schedule.to_dict(),
            'codec': self.codec,
            'layout': self.layout,
            'codec_fingerprint': self.codec_fingerprint,
            'layout_fingerprint': self.layout_fingerprint,
            'train_config': self.train_config,
            'epoch': self.epoch,
            'loss_history': [[int(e), float(v)] for e, v in self.loss_history],
            'parameters': sorted(self.params),
        }


def keyed_generator(*key: int) -> np.random.Generator:
    """Генератор Philox, зависящий только от ключа (сид, поток, счетчики...)"""
    entropy, *spawn = key
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy, spawn_key=tuple(spawn))))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε; t скаляр или массив (B,)"""
    schedule.check_step(t)
    abar = np.asarray(schedule.alphabar_at(t), dtype=np.float64)
    abar = abar.reshape(abar.shape + (1,) * (np.ndim(x0) - abar.ndim))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def draw_noise(rng_state: RngState, batch_size: int, grid_shape: Tuple[int, int],
               schedule: NoiseSchedule) -> Tuple[np.ndarray, np.ndarray]:
    """Шаги t и шум ε по элементам пачки; каждый элемент имеет свой ключ"""
    steps = np.empty(batch_size, dtype=np.int64)
    eps = np.empty((batch_size,) + tuple(grid_shape))
    for item in range(batch_size):
        rng = keyed_generator(*rng_state, item)
        steps[item] = rng.integers(1, schedule.timesteps + 1)
        eps[item] = rng.standard_normal(grid_shape)
    return steps, eps


def _predict(net, batch: np.ndarray, rng_state: RngState, schedule: NoiseSchedule):
    steps, eps = draw_noise(rng_state, batch.shape[0], batch.shape[1:], schedule)
    x_t = forward_noise(batch, steps, eps, schedule)
    return net.forward(x_t, steps), eps


def loss(net, batch: np.ndarray, rng_state: RngState, schedule: NoiseSchedule) -> float:
    """Средняя MSE предсказания шума по пачке"""
    prediction, eps = _predict(net, batch, rng_state, schedule)
    value = float(np.mean((prediction - eps) ** 2))
    if not np.isfinite(value):
        raise NumericError("Функция потерь не конечна", stage='train')
    return value


def loss_and_grads(net: DenoiserNet, batch: np.ndarray, rng_state: RngState,
                   schedule: NoiseSchedule) -> Tuple[float, Dict[str, np.ndarray]]:
    prediction, eps = _predict(net, batch, rng_state, schedule)
    residual = prediction - eps
    value = float(np.mean(residual ** 2))
    if not np.isfinite(value):
        raise NumericError("Функция потерь не конечна", stage='train')
    grads = net.backward(2.0 * residual / residual.size)
    return value, grads


def grad_check(net: DenoiserNet, batch: np.ndarray, rng_state: RngState, schedule: NoiseSchedule,
               n_params: int = GRADCHECK_PARAMS, step: float = GRADCHECK_STEP, seed: int = 0) -> Dict:
    """
    Сравнивает аналитические градиенты с центральными разностями.

    Относительная ошибка: |a − n| / max(|a|, |n|, GRADCHECK_FLOOR).
    """
    if n_params < 1:
        raise UsageError("Для проверки градиентов нужен хотя бы один параметр")

    _, analytic = loss_and_grads(net, batch, rng_state, schedule)
    coordinates = [(name, index) for name in net.params for index in range(net.params[name].size)]
    count = min(n_params, len(coordinates))
    picked = np.sort(keyed_generator(seed, STREAM_GRADCHECK).choice(len(coordinates), count, replace=False))

    worst, worst_at = 0.0, None
    for position in picked:
        name, index = coordinates[position]
        flat = net.params[name].reshape(-1)
        original = flat[index]
        flat[index] = original + step
        plus = loss(net, batch, rng_state, schedule)
        flat[index] = original - step
        minus = loss(net, batch, rng_state, schedule)
        flat[index] = original

        numeric = (plus - minus) / (2.0 * step)
        value = float(analytic[name].reshape(-1)[index])
        error = abs(value - numeric) / max(abs(value), abs(numeric), GRADCHECK_FLOOR)
        if not np.isfinite(error):
            error = float('inf')
        if error >= worst:
            worst, worst_at = error, f'{name}[{index}]'

    logger.info(f"Проверка градиентов: {count} параметров, макс. относительная ошибка {worst:.3e} ({worst_at})")
    return {'max_relative_error': worst, 'worst_parameter': worst_at, 'checked': count,
            'param_count': net.param_count, 'step': step}


class AdamW:
    """AdamW с раздельным weight decay"""

    def __init__(self, params: Dict[str, np.ndarray], lr: float, weight_decay: float,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        self.params = params
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.beta1, self.beta2 = betas
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.steps = 0

    def step(self, grads: Dict[str, np.ndarray]):
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for name, param in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            param -= self.lr * (update + self.weight_decay * param)


def table_to_grids(table: Table, layout: Layout, spec: CodecSpec) -> np.ndarray:
    return vectors_to_grids(encode_table(table, spec), layout)


def _checkpoint(net: DenoiserNet, cfg: TrainConfig, spec: CodecSpec, layout: Layout, epoch: int,
                history: List[Tuple[int, float]], walls: List[float]) -> Checkpoint:
    return Checkpoint(
        params=net.copy_params(),
        net_config=net.config(),
        timesteps=cfg.timesteps,
        codec=spec.to_dict(),
        layout=layout.to_dict(),
        codec_fingerprint=spec.fingerprint(),
        layout_fingerprint=layout.fingerprint(),
        train_config=cfg.to_dict(),
        epoch=epoch,
        loss_history=list(history),
        wall_seconds=list(walls),
    )


def train(table: Table, layout: Layout, spec: CodecSpec, cfg: TrainConfig,
          on_snapshot: Optional[Callable[[Checkpoint], None]] = None,
          net: Optional[DenoiserNet] = None) -> Checkpoint:
    """
    Обучает предсказатель шума на закодированной таблице.

    Каждые sample_every эпох (и после последней) вызывается on_snapshot.
    При расхождении поднимается NumericError с последним корректным чекпоинтом.
    """
    if len(table) == 0:
        raise DataError("Нет строк для обучения", stage='train')

    grids = table_to_grids(table, layout, spec)
    schedule = NoiseSchedule.linear(cfg.timesteps)
    if net is None:
        net = DenoiserNet(base_width=cfg.base_width, seed=cfg.seed, grid_shape=layout.grid_shape)
    optimizer = AdamW(net.params, cfg.learning_rate, cfg.weight_decay)

    logger.info(f"Обучение: {len(table)} строк, {net.param_count} параметров, T={cfg.timesteps}, "
                f"эпох {cfg.epochs}, пачка {cfg.batch_size}, lr {cfg.learning_rate}, "
                f"weight decay {cfg.weight_decay}, ширина {cfg.base_width}")
    logger.info("Гиперпараметры по умолчанию подобраны для настольного масштаба, это не опубликованные значения")

    history: List[Tuple[int, float]] = []
    walls: List[float] = []
    last_good = _checkpoint(net, cfg, spec, layout, 0, history, walls)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = keyed_generator(cfg.seed, STREAM_SHUFFLE, epoch).permutation(len(grids))
        losses = []
        for batch_index, start in enumerate(range(0, len(grids), cfg.batch_size)):
            batch = grids[order[start:start + cfg.batch_size]]
            try:
                value, grads = loss_and_grads(net, batch, (cfg.seed, STREAM_TRAIN, epoch, batch_index), schedule)
            except NumericError as exc:
                raise NumericError(f"Обучение разошлось на эпохе {epoch}, пачке {batch_index}",
                                   stage='train', last_good=last_good) from exc
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericError(f"Нечисловые градиенты на эпохе {epoch}, пачке {batch_index}",
                                   stage='train', last_good=last_good)
            optimizer.step(grads)
            losses.append(value)

        mean_loss = float(np.mean(losses))
        history.append((epoch, mean_loss))
        walls.append(time.perf_counter() - started)
        logger.info(f"Эпоха {epoch}/{cfg.epochs}: loss {mean_loss:.6f} ({walls[-1]:.1f} с)")

        if not all(np.isfinite(p).all() for p in net.params.values()):
            raise NumericError(f"Параметры стали нечисловыми на эпохе {epoch}",
                               stage='train', last_good=last_good)
        last_good = _checkpoint(net, cfg, spec, layout, epoch, history, walls)
        if on_snapshot is not None and (epoch % cfg.sample_every == 0 or epoch == cfg.epochs):
            on_snapshot(last_good)

    return last_good


SAMPLE_VARIANCES = ('beta', 'posterior')


def sample(ckpt: Checkpoint, n: int, seed: int, chunk: int = SAMPLE_CHUNK, clamp: bool = True,
           variance: str = 'beta') -> np.ndarray:
    """
    Предковое сэмплирование n сеток: x_{t−1} = μ(x_t, ε̂) + σ_t·z.

    σ_t² = β_t (variance='beta') или β̃_t (variance='posterior').
    Цепочки обрабатываются пачками фиксированного размера chunk, шум каждой
    пачки зависит от (seed, номер пачки, t). С clamp результат обрезается до
    [−1, 1]; ячейки заполнения обнуляются всегда.
    """
    if n < 0:
        raise UsageError(f"Число строк не может быть отрицательным: {n}")
    if variance not in SAMPLE_VARIANCES:
        raise UsageError(f"Неизвестная дисперсия сэмплирования: {variance}")
    net = ckpt.build_net()
    schedule = ckpt.schedule
    layout = ckpt.layout_obj
    shape = tuple(layout.grid_shape)
    out = np.zeros((n,) + shape)
    low, high = NORMALIZED_RANGE

    for chunk_index, start in enumerate(range(0, n, chunk)):
        size = min(chunk, n - start)
        x = keyed_generator(seed, STREAM_SAMPLE, chunk_index, 0).standard_normal((size,) + shape)
        for t in range(schedule.timesteps, 0, -1):
            steps = np.full(size, t, dtype=np.int64)
            eps_hat = net.forward(x, steps)
            beta, alpha, abar = schedule.beta(t), schedule.alpha(t), schedule.alphabar_at(t)
            mean = (x - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
            if t > 1:
                sigma2 = beta if variance == 'beta' else schedule.posterior_variance(t)
                z = keyed_generator(seed, STREAM_SAMPLE, chunk_index, t).standard_normal(x.shape)
                x = mean + np.sqrt(sigma2) * z
            else:
                x = mean
            if not np.isfinite(x).all():
                raise NumericError(f"Нечисловые значения при сэмплировании на шаге t={t}",
                                   stage='sample', step=t)
        out[start:start + size] = x
        logger.debug(f"Сэмплировано {start + size}/{n}")

    if clamp:
        out = np.clip(out, low, high)
    for row, col in layout.padding_cells:
        out[:, row, col] = 0.0
    return out


def _write_entry(archive: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, data)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]):
    """Детерминированный zip: meta.json и params/<имя>.npy в отсортированном порядке"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(ckpt.meta(), sort_keys=True, indent=2, ensure_ascii=False)
    with zipfile.ZipFile(path, 'w') as archive:
        _write_entry(archive, 'meta.json', meta.encode('utf-8'))
        for name in sorted(ckpt.params):
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.ascontiguousarray(ckpt.params[name], dtype='<f8'),
                                      allow_pickle=False)
            _write_entry(archive, f'params/{name}.npy', buffer.getvalue())
    logger.info(f"Чекпоинт сохранен: {path} (эпоха {ckpt.epoch})")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"Чекпоинт не найден: {path}")
    try:
        with zipfile.ZipFile(path) as archive:
            meta = json.loads(archive.read('meta.json').decode('utf-8'))
            if meta.get('magic') != CHECKPOINT_MAGIC:
                raise DataError(f"{path} не является чекпоинтом конвейера")
            if meta.get('version') != CHECKPOINT_VERSION:
                raise DataError(f"Неподдерживаемая версия чекпоинта: {meta.get('version')}")
            params = {}
            for name in meta['parameters']:
                with archive.open(f'params/{name}.npy') as handle:
                    params[name] = np.lib.format.read_array(io.BytesIO(handle.read()), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"Поврежденный чекпоинт {path}: {e}")

    return Checkpoint(
        params=params,
        net_config=meta['net'],
        timesteps=int(meta['schedule']['timesteps']),
        codec=meta['codec'],
        layout=meta['layout'],
        codec_fingerprint=meta['codec_fingerprint'],
        layout_fingerprint=meta['layout_fingerprint'],
        train_config=meta['train_config'],
        epoch=int(meta['epoch']),
        loss_history=[(int(e), float(v)) for e, v in meta['loss_history']],
    )


def write_loss_log(ckpt: Checkpoint, path: Union[str, Path]):
    """CSV: epoch,mean_loss,wall_seconds"""
    lines = ['epoch,mean_loss,wall_seconds']
    walls = ckpt.wall_seconds or [float('nan')] * len(ckpt.loss_history)
    for (epoch, value), wall in zip(ckpt.loss_history, walls):
        lines.append(f'{epoch},{value:.8f},{wall:.3f}')
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')
