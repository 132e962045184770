"""Novelty-seeking update schemes as (termination hook, gradient combiner) pairs.

* ``ppo``  - task gradient only, episodes never cut short.
* ``wsr``  - task gradient plus a fixed multiple of the novelty gradient.
* ``tnb``  - revised bisector of task and novelty gradients, always applied.
* ``ctnb`` - the bisector only while the batch novelty is below ``r0``.
* ``ipd``  - task gradient only; episodes whose running novelty drops below
  ``r0`` after the grace period are terminated, so every collected sample
  lies in the feasible region.

Gradients are ascent directions over the flat policy parameters; the novelty
gradient ``g_g`` points toward larger novelty.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .metric import NoveltyTrace
from .ppo import never_terminate

log = logging.getLogger(__name__)

STRATEGIES = ("ppo", "wsr", "tnb", "ctnb", "ipd")


class StrategyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoveltyConfig:
    strategy: str = "ppo"
    r0: float | str = "auto"
    ts: int = 20
    wsr_weight: float = 10.0
    tnb_variant: str = "literal"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise StrategyConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.r0 != "auto" and not (isinstance(self.r0, (int, float)) and self.r0 >= 0):
            raise StrategyConfigError(f"r0 must be 'auto' or a number >= 0, got {self.r0!r}")
        if self.ts < 0:
            raise StrategyConfigError("ts must be >= 0")
        if self.wsr_weight < 0:
            raise StrategyConfigError("wsr_weight must be >= 0")
        if self.tnb_variant not in ("literal", "projection"):
            raise StrategyConfigError("tnb_variant must be 'literal' or 'projection'")

    @classmethod
    def from_alpha(cls, alpha: float, **kwargs) -> "NoveltyConfig":
        """Build a WSR config from the task weight ``alpha`` in (0, 1)."""
        if not 0.0 < alpha < 1.0:
            raise StrategyConfigError("alpha must lie in (0, 1)")
        return cls(wsr_weight=(1.0 - alpha) / alpha, **kwargs)

    @property
    def needs_threshold(self) -> bool:
        return self.strategy in ("ctnb", "ipd")

    def with_r0(self, r0: float) -> "NoveltyConfig":
        return NoveltyConfig(self.strategy, float(r0), self.ts, self.wsr_weight, self.tnb_variant)


def combine_wsr(g_f: np.ndarray, g_g: np.ndarray, wsr_weight: float) -> np.ndarray:
    if g_f.shape != g_g.shape:
        raise ValueError("gradient shapes differ")
    return g_f + wsr_weight * g_g


def combine_tnb(g_f: np.ndarray, g_g: np.ndarray, variant: str = "literal") -> np.ndarray:
    """Revised bisector of ``g_f`` and ``g_g`` with stride ``(|g_f| + |g_g|) / 2``.

    With ``variant="projection"`` the conflicting (cos <= 0) case removes the
    component of ``g_f`` along ``g_g`` instead of adding it back.
    """
    if g_f.shape != g_g.shape:
        raise ValueError("gradient shapes differ")
    nf = float(np.linalg.norm(g_f))
    ng = float(np.linalg.norm(g_g))
    if ng == 0.0:
        return g_f
    if nf == 0.0:
        log.debug("combine_tnb: zero task gradient, returning zero direction")
        return np.zeros_like(g_f)
    cos = float(g_f @ g_g) / (nf * ng)
    scale = nf / ng
    if cos > 0:
        raw = g_f + scale * g_g
    elif variant == "projection":
        raw = g_f - scale * cos * g_g
    else:
        raw = g_f + scale * cos * g_g
    n_raw = float(np.linalg.norm(raw))
    if n_raw == 0.0:
        return np.zeros_like(g_f)
    return raw * ((nf + ng) / 2.0 / n_raw)


def combine_ctnb(
    g_f: np.ndarray, g_g: np.ndarray, novelty_estimate: float, r0: float, variant: str = "literal"
) -> np.ndarray:
    """Bisector while the constraint is violated (novelty < r0), else ``g_f``.

    ``r0 = inf`` always takes the bisector, even for an infinite estimate.
    """
    if r0 == math.inf or novelty_estimate - r0 < 0:
        return combine_tnb(g_f, g_g, variant)
    return g_f


def ipd_hook(trace: NoveltyTrace, t: int, r0: float, ts: int) -> bool:
    """Terminate when the running novelty after ``t`` steps is below ``r0`` and ``t > ts``."""
    return t > ts and trace.running_mean[t - 1] - r0 < 0


@dataclass(frozen=True)
class Strategy:
    name: str
    hook: Callable[[NoveltyTrace, int], bool]
    combine: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    uses_cost: bool
    config: NoveltyConfig


def _task_only(g_f, g_g, novelty):
    return g_f


def make_strategy(config: NoveltyConfig) -> Strategy:
    """Resolve a config into its rollout hook and gradient combiner."""
    name = config.strategy
    if config.needs_threshold and config.r0 == "auto":
        raise StrategyConfigError(
            f"{name} needs a numeric r0; resolve 'auto' from a reference population first"
        )
    if name == "ppo":
        return Strategy(name, never_terminate, _task_only, False, config)
    if name == "wsr":
        w = config.wsr_weight
        return Strategy(name, never_terminate, lambda f, g, _n: combine_wsr(f, g, w), True, config)
    if name == "tnb":
        v = config.tnb_variant
        return Strategy(name, never_terminate, lambda f, g, _n: combine_tnb(f, g, v), True, config)
    r0 = float(config.r0)
    if name == "ctnb":
        v = config.tnb_variant
        return Strategy(
            name, never_terminate, lambda f, g, n: combine_ctnb(f, g, n, r0, v), True, config
        )
    return Strategy(name, partial(ipd_hook, r0=r0, ts=config.ts), _task_only, False, config)

