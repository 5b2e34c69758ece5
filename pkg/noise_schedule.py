#!/usr/bin/env python3
"""
Линейное расписание шума DDPM (β, α, ᾱ)
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from config import BETA_END, BETA_START, REFERENCE_TIMESTEPS
from errors import UsageError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Константы прямого процесса; массивы индексируются t − 1 для t = 1..T"""

    timesteps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alphabar: np.ndarray

    @classmethod
    def linear(cls, timesteps: int, beta_start: float = BETA_START, beta_end: float = BETA_END) -> 'NoiseSchedule':
        """
        Линейная β от beta_start до beta_end при T=1000.

        Для коротких расписаний концы масштабируются на 1000/T, чтобы суммарный
        шум (и ᾱ_T) оставался тем же, что у стандартного расписания.
        """
        if timesteps < 2:
            raise UsageError(f"Число шагов диффузии должно быть не меньше 2: {timesteps}")
        scale = REFERENCE_TIMESTEPS / timesteps
        start, end = beta_start * scale, beta_end * scale
        if not 0.0 < start <= end < 1.0:
            raise UsageError(f"Расписание с T={timesteps} дает β вне (0, 1)")

        betas = np.linspace(start, end, timesteps, dtype=np.float64)
        alphas = 1.0 - betas
        alphabar = np.cumprod(alphas)
        return cls(timesteps=timesteps, beta_start=start, beta_end=end,
                   betas=betas, alphas=alphas, alphabar=alphabar)

    def check_step(self, t):
        t = np.asarray(t)
        if t.size and (t.min() < 1 or t.max() > self.timesteps):
            raise UsageError(f"Шаг t вне диапазона [1, {self.timesteps}]")

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        return self.alphas[np.asarray(t) - 1]

    def alphabar_at(self, t):
        return self.alphabar[np.asarray(t) - 1]

    def posterior_variance(self, t):
        """β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)"""
        t = np.asarray(t)
        previous = np.where(t > 1, self.alphabar[np.maximum(t - 2, 0)], 1.0)
        return self.beta(t) * (1.0 - previous) / (1.0 - self.alphabar_at(t))

    def to_dict(self) -> Dict:
        return {
            'timesteps': self.timesteps,
            'beta_start': self.beta_start,
            'beta_end': self.beta_end,
            'alphabar_T': float(self.alphabar[-1]),
        }
