#!/usr/bin/env python3
"""
Небольшой U-Net на numpy с ручным обратным проходом.

Сетка 10×11 дополняется нулями до 16×16, проходит два понижения разрешения
(16 → 8 → 4), узкое место и два повышения со skip-соединениями, затем
обрезается обратно. Шаг диффузии подается синусоидальным эмбеддингом.
"""

import logging
from math import gcd
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from config import (ACTIVATION, GRID_HEIGHT, GRID_WIDTH, GROUP_NORM_EPS, GROUP_NORM_GROUPS,
                    PADDED_SIZE, TIME_EMBEDDING_DIM)
from errors import UsageError

logger = logging.getLogger(__name__)

ACTIVATIONS = ('silu', 'identity')


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Синусоидальный эмбеддинг шага: (B,) → (B, dim)"""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def upsample(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Conv2d:
    """Свертка 3×3 с отступом 1 через im2col"""

    def __init__(self, net: 'DenoiserNet', name: str, cin: int, cout: int, stride: int = 1, zero: bool = False):
        self.net = net
        self.w, self.b = f'{name}.w', f'{name}.b'
        self.cin, self.cout, self.stride = cin, cout, stride
        shape = (cout, cin, 3, 3)
        if zero:
            net.params[self.w] = np.zeros(shape)
        else:
            net.params[self.w] = net.rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), shape)
        net.params[self.b] = np.zeros(cout)
        self.cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        s = self.stride
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        windows = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::s, ::s]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * 9)
        wmat = self.net.params[self.w].reshape(self.cout, c * 9)
        out = cols @ wmat.T + self.net.params[self.b]
        self.cache = (x.shape, cols, ho, wo)
        return out.reshape(b, ho, wo, self.cout).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        (b, c, h, w), cols, ho, wo = self.cache
        s = self.stride
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.cout)
        wmat = self.net.params[self.w].reshape(self.cout, c * 9)
        self.net.grads[self.w] = (d2.T @ cols).reshape(self.cout, c, 3, 3)
        self.net.grads[self.b] = d2.sum(axis=0)

        dcols = (d2 @ wmat).reshape(b, ho, wo, c, 3, 3)
        dpadded = np.zeros((b, c, h + 2, w + 2))
        for i in range(3):
            for j in range(3):
                dpadded[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dpadded[:, :, 1:h + 1, 1:w + 1]


class GroupNorm:
    def __init__(self, net: 'DenoiserNet', name: str, channels: int, groups: int):
        self.net = net
        self.gamma, self.beta = f'{name}.gamma', f'{name}.beta'
        self.groups = gcd(channels, groups)
        net.params[self.gamma] = np.ones(channels)
        net.params[self.beta] = np.zeros(channels)
        self.cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        grouped = x.reshape(b, self.groups, -1)
        mean = grouped.mean(axis=2, keepdims=True)
        var = grouped.var(axis=2, keepdims=True)
        inv = 1.0 / np.sqrt(var + GROUP_NORM_EPS)
        xhat = ((grouped - mean) * inv).reshape(b, c, h, w)
        self.cache = (xhat, inv)
        gamma = self.net.params[self.gamma][None, :, None, None]
        beta = self.net.params[self.beta][None, :, None, None]
        return xhat * gamma + beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv = self.cache
        b, c, h, w = dy.shape
        self.net.grads[self.gamma] = (dy * xhat).sum(axis=(0, 2, 3))
        self.net.grads[self.beta] = dy.sum(axis=(0, 2, 3))

        dxhat = (dy * self.net.params[self.gamma][None, :, None, None]).reshape(b, self.groups, -1)
        xh = xhat.reshape(b, self.groups, -1)
        n = xh.shape[2]
        dx = inv / n * (n * dxhat
                        - dxhat.sum(axis=2, keepdims=True)
                        - xh * (dxhat * xh).sum(axis=2, keepdims=True))
        return dx.reshape(b, c, h, w)


class Activation:
    def __init__(self, kind: str):
        if kind not in ACTIVATIONS:
            raise UsageError(f"Неизвестная активация: {kind}")
        self.kind = kind
        self.cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.kind == 'identity':
            return x
        sig = expit(x)
        self.cache = (x, sig)
        return x * sig

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self.kind == 'identity':
            return dy
        x, sig = self.cache
        return dy * (sig + x * sig * (1.0 - sig))


class Dense:
    def __init__(self, net: 'DenoiserNet', name: str, fan_in: int, fan_out: int):
        self.net = net
        self.w, self.b = f'{name}.w', f'{name}.b'
        net.params[self.w] = net.rng.normal(0.0, np.sqrt(1.0 / fan_in), (fan_in, fan_out))
        net.params[self.b] = np.zeros(fan_out)
        self.cache = None

    def forward(self, h: np.ndarray) -> np.ndarray:
        self.cache = h
        return h @ self.net.params[self.w] + self.net.params[self.b]

    def backward(self, d: np.ndarray) -> np.ndarray:
        self.net.grads[self.w] = self.cache.T @ d
        self.net.grads[self.b] = d.sum(axis=0)
        return d @ self.net.params[self.w].T


class Block:
    """conv → GroupNorm → + проекция времени → активация"""

    def __init__(self, net: 'DenoiserNet', name: str, cin: int, cout: int, stride: int = 1):
        self.conv = Conv2d(net, f'{name}.conv', cin, cout, stride)
        self.norm = GroupNorm(net, f'{name}.norm', cout, net.groups) if net.norm else None
        self.time = Dense(net, f'{name}.time', net.time_dim, cout)
        self.act = Activation(net.activation)

    def forward(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        y = self.conv.forward(x)
        if self.norm is not None:
            y = self.norm.forward(y)
        y = y + self.time.forward(h)[:, :, None, None]
        return self.act.forward(y)

    def backward(self, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dy = self.act.backward(dy)
        dh = self.time.backward(dy.sum(axis=(2, 3)))
        if self.norm is not None:
            dy = self.norm.backward(dy)
        return self.conv.backward(dy), dh


class DenoiserNet:
    """
    Предсказатель шума ε̂(x_t, t) для сеток фиксированного размера.

    activation='identity' и norm=False дают линейный по каждому параметру
    вариант для проверки градиентов.
    """

    def __init__(self, base_width: int = 32, time_dim: int = TIME_EMBEDDING_DIM,
                 groups: int = GROUP_NORM_GROUPS, activation: str = ACTIVATION, norm: bool = True,
                 seed: int = 0, zero_init_output: bool = True,
                 grid_shape: Tuple[int, int] = (GRID_HEIGHT, GRID_WIDTH), padded_size: int = PADDED_SIZE):
        if base_width < 1:
            raise UsageError(f"Ширина сети должна быть положительной: {base_width}")
        height, width = grid_shape
        if height > padded_size or width > padded_size or padded_size % 4:
            raise UsageError(f"Сетка {height}×{width} не помещается в {padded_size}×{padded_size}")

        self.base_width = base_width
        self.time_dim = time_dim
        self.groups = groups
        self.activation = activation
        self.norm = norm
        self.seed = seed
        self.zero_init_output = zero_init_output
        self.grid_shape = (height, width)
        self.padded_size = padded_size
        self.top = (padded_size - height) // 2
        self.left = (padded_size - width) // 2

        self.rng = np.random.Generator(np.random.Philox(seed))
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.grad_hook = None

        c = base_width
        self.time_mlp = Dense(self, 'time.mlp', time_dim, time_dim)
        self.time_act = Activation(activation)
        self.stem = Conv2d(self, 'stem', 1, c)
        self.enc1 = Block(self, 'enc1', c, c)
        self.down1 = Block(self, 'down1', c, 2 * c, stride=2)
        self.enc2 = Block(self, 'enc2', 2 * c, 2 * c)
        self.down2 = Block(self, 'down2', 2 * c, 2 * c, stride=2)
        self.mid = Block(self, 'mid', 2 * c, 2 * c)
        self.up1 = Block(self, 'up1', 4 * c, 2 * c)
        self.up2 = Block(self, 'up2', 3 * c, c)
        self.head = Conv2d(self, 'head', c, 1, zero=zero_init_output)
        del self.rng

        logger.debug(f"U-Net создан: ширина {c}, параметров {self.param_count}")

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def config(self) -> Dict:
        return {
            'base_width': self.base_width,
            'time_dim': self.time_dim,
            'groups': self.groups,
            'activation': self.activation,
            'norm': self.norm,
            'seed': self.seed,
            'zero_init_output': self.zero_init_output,
            'grid_shape': list(self.grid_shape),
            'padded_size': self.padded_size,
        }

    @classmethod
    def from_config(cls, config: Dict, params: Optional[Dict[str, np.ndarray]] = None) -> 'DenoiserNet':
        options = dict(config)
        options['grid_shape'] = tuple(options['grid_shape'])
        net = cls(**options)
        if params is not None:
            net.load_params(params)
        return net

    def load_params(self, params: Dict[str, np.ndarray]):
        missing = set(self.params) ^ set(params)
        if missing:
            raise UsageError(f"Набор параметров не совпадает с архитектурой: {sorted(missing)[:5]}")
        for name in self.params:
            if params[name].shape != self.params[name].shape:
                raise UsageError(f"Форма параметра {name}: {params[name].shape} вместо {self.params[name].shape}")
            self.params[name] = np.array(params[name], dtype=np.float64)

    def copy_params(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def forward(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """x: (B, H, W), t: (B,) целые из [1, T] → ε̂ той же формы, что x"""
        b = x.shape[0]
        height, width = self.grid_shape
        size = self.padded_size
        canvas = np.zeros((b, 1, size, size))
        canvas[:, 0, self.top:self.top + height, self.left:self.left + width] = x

        h = self.time_act.forward(self.time_mlp.forward(sinusoidal_embedding(t, self.time_dim)))
        s0 = self.stem.forward(canvas)
        skip1 = self.enc1.forward(s0, h)
        skip2 = self.enc2.forward(self.down1.forward(skip1, h), h)
        m = self.mid.forward(self.down2.forward(skip2, h), h)
        u1 = self.up1.forward(np.concatenate([upsample(m), skip2], axis=1), h)
        u2 = self.up2.forward(np.concatenate([upsample(u1), skip1], axis=1), h)
        out = self.head.forward(u2)
        return out[:, 0, self.top:self.top + height, self.left:self.left + width]

    def backward(self, dout: np.ndarray) -> Dict[str, np.ndarray]:
        """Градиенты по всем параметрам для последнего forward; dout той же формы, что выход"""
        b = dout.shape[0]
        height, width = self.grid_shape
        c2 = 2 * self.base_width
        dcanvas = np.zeros((b, 1, self.padded_size, self.padded_size))
        dcanvas[:, 0, self.top:self.top + height, self.left:self.left + width] = dout

        du2 = self.head.backward(dcanvas)
        dcat2, dh = self.up2.backward(du2)
        dh_total = dh
        dskip1 = dcat2[:, c2:]
        dcat1, dh = self.up1.backward(upsample_backward(dcat2[:, :c2]))
        dh_total = dh_total + dh
        dskip2 = dcat1[:, c2:]
        dd2, dh = self.mid.backward(upsample_backward(dcat1[:, :c2]))
        dh_total = dh_total + dh
        dx, dh = self.down2.backward(dd2)
        dh_total = dh_total + dh
        dd1, dh = self.enc2.backward(dskip2 + dx)
        dh_total = dh_total + dh
        dx, dh = self.down1.backward(dd1)
        dh_total = dh_total + dh
        ds0, dh = self.enc1.backward(dskip1 + dx)
        dh_total = dh_total + dh
        self.stem.backward(ds0)
        self.time_mlp.backward(self.time_act.backward(dh_total))

        grads = {name: self.grads[name] for name in self.params}
        if self.grad_hook is not None:
            grads = self.grad_hook(grads)
        return grads
