"""Sign-gradient attacks: plain iterative, momentum, and the boundary-fitting
variants that replace the raw gradient with an average over near-boundary
probes.

All variants run exactly T steps (no early stop on substitute success),
clamp to the epsilon ball first and the unit cube second, and derive every
random draw from (seed, image index, iteration, probe index) substreams so
reruns and parallel schedules are bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from bflab.boundary import BoundaryConfig, collect_boundary_samples
from bflab.errors import ConfigError, InputError
from bflab.model import ModelParams, input_gradient, predict
from bflab.util import stream, substream

AttackKind = Literal["i", "mi", "bf", "bf-mi"]
ATTACK_KINDS: tuple[str, ...] = ("i", "mi", "bf", "bf-mi")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    iterations: int = 10
    step: float | None = None  # defaults to epsilon / iterations
    mu: float = 1.0
    boundary: BoundaryConfig | None = None
    seed: int = 0
    # which region boundary probes must stay inside once the iterate is
    # already misclassified: the current prediction's region (default), or
    # strictly the ground-truth region (probing then degrades to the plain
    # gradient for misclassified iterates)
    source_mode: Literal["prediction", "label"] = "prediction"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.step is not None:
            if self.step <= 0 and self.epsilon > 0:
                raise ConfigError(f"step must be > 0, got {self.step}")
            if self.step > self.epsilon:
                raise ConfigError(f"step {self.step} exceeds epsilon {self.epsilon}")
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        if self.source_mode not in ("prediction", "label"):
            raise ConfigError(f"unknown source_mode {self.source_mode!r}")

    @property
    def alpha(self) -> float:
        return self.step if self.step is not None else self.epsilon / self.iterations


@dataclass(frozen=True)
class AttackResult:
    adversarial: np.ndarray
    success_substitute: bool
    iterate_trace: list[np.ndarray] | None
    fallback_count: int
    queries: int


def clip_ball(candidate: np.ndarray, origin: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp to [origin-eps, origin+eps] per coordinate, then to [0,1].

    The ball bounds are repaired by at most a few ulps afterwards so that
    max|out - origin| <= epsilon holds under exact float comparison (the
    naive origin+eps arithmetic can round outward).
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if candidate.shape != origin.shape:
        raise InputError(f"shape mismatch {candidate.shape} vs {origin.shape}")
    out = np.clip(candidate, origin - epsilon, origin + epsilon)
    out = np.clip(out, 0.0, 1.0)
    while True:
        over = np.abs(out - origin) > epsilon
        if not over.any():
            return out
        out[over] = np.nextafter(out[over], origin[over])


def _momentum_update(acc: np.ndarray, grad: np.ndarray, mu: float) -> np.ndarray:
    l1 = float(np.sum(np.abs(grad)))
    normed = grad / l1 if l1 > 0.0 else np.zeros_like(grad)
    return mu * acc + normed


def _run(
    model: ModelParams,
    x: np.ndarray,
    y: int,
    cfg: AttackConfig,
    *,
    use_boundary: bool,
    use_momentum: bool,
    image_index: int,
    record_trace: bool,
) -> AttackResult:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise InputError(f"input shape {x.shape} does not match model dim {model.input_dim}")
    if not (0 <= y < model.num_classes):
        raise InputError(f"label {y} out of range")
    if use_boundary and cfg.boundary is None:
        raise ConfigError("boundary-fitting attack needs cfg.boundary")

    alpha = cfg.alpha
    cur = x.copy()
    acc = np.zeros_like(x)
    trace: list[np.ndarray] | None = [] if record_trace else None
    queries = 0
    fallbacks = 0
    attack_stream = stream(cfg.seed, image_index)

    for t in range(cfg.iterations):
        if use_boundary:
            bcfg: BoundaryConfig = cfg.boundary  # type: ignore[assignment]
            pred = predict(model, cur)
            queries += 1
            if cfg.source_mode == "label" and pred != y:
                # iterate left the ground-truth region; the strict reading
                # has no source region to probe, so degrade to the gradient
                grad = input_gradient(model, cur, y)
                queries += 1
                fallbacks += bcfg.n_points
            else:
                samples = collect_boundary_samples(
                    model,
                    cur,
                    y,
                    pred,
                    bcfg,
                    substream(attack_stream, t),
                    verify_source=False,
                )
                grad = np.mean([s.gradient for s in samples], axis=0)
                for s in samples:
                    fallbacks += int(s.fell_back)
                    # shrink loop evaluates t=0..shrink_count (all of
                    # 0..t_max on fallback), plus one gradient each
                    queries += (bcfg.t_max if s.fell_back else s.shrink_count) + 2
        else:
            grad = input_gradient(model, cur, y)
            queries += 1

        if use_momentum:
            acc = _momentum_update(acc, grad, cfg.mu)
            direction = np.sign(acc)
        else:
            direction = np.sign(grad)
        cur = clip_ball(cur + alpha * direction, x, cfg.epsilon)
        if trace is not None:
            trace.append(cur.copy())

    return AttackResult(
        adversarial=cur,
        success_substitute=predict(model, cur) != y,
        iterate_trace=trace,
        fallback_count=fallbacks,
        queries=queries,
    )


def i_fgsm(model, x, y, cfg: AttackConfig, *, image_index: int = 0, record_trace: bool = False) -> AttackResult:
    """Iterative sign-gradient baseline."""
    return _run(model, x, y, cfg, use_boundary=False, use_momentum=False,
                image_index=image_index, record_trace=record_trace)


def mi_fgsm(model, x, y, cfg: AttackConfig, *, image_index: int = 0, record_trace: bool = False) -> AttackResult:
    """Momentum variant: decayed sum of L1-normalized gradients."""
    return _run(model, x, y, cfg, use_boundary=False, use_momentum=True,
                image_index=image_index, record_trace=record_trace)


def bf_fgsm(model, x, y, cfg: AttackConfig, *, image_index: int = 0, record_trace: bool = False) -> AttackResult:
    """Boundary-fitting variant: each step follows the sign of the gradient
    averaged over fresh near-boundary probes around the current iterate."""
    return _run(model, x, y, cfg, use_boundary=True, use_momentum=False,
                image_index=image_index, record_trace=record_trace)


def bf_mi_fgsm(model, x, y, cfg: AttackConfig, *, image_index: int = 0, record_trace: bool = False) -> AttackResult:
    """Boundary-fitting + momentum."""
    return _run(model, x, y, cfg, use_boundary=True, use_momentum=True,
                image_index=image_index, record_trace=record_trace)


_DISPATCH = {"i": i_fgsm, "mi": mi_fgsm, "bf": bf_fgsm, "bf-mi": bf_mi_fgsm}


def run_attack(kind: str, model, x, y, cfg: AttackConfig, *, image_index: int = 0,
               record_trace: bool = False) -> AttackResult:
    if kind not in _DISPATCH:
        raise ConfigError(f"unknown attack kind {kind!r}, expected one of {ATTACK_KINDS}")
    return _DISPATCH[kind](model, x, y, cfg, image_index=image_index, record_trace=record_trace)


def first_step_direction(kind: str, model, x, y, cfg: AttackConfig, *, image_index: int = 0) -> np.ndarray:
    """Sign direction an attack takes at its very first step from x.

    Momentum has no history at step one, so "mi" matches "i" and "bf-mi"
    matches "bf".
    """
    if kind in ("i", "mi"):
        return np.sign(input_gradient(model, x, y))
    if kind in ("bf", "bf-mi"):
        if cfg.boundary is None:
            raise ConfigError("boundary-fitting direction needs cfg.boundary")
        samples = collect_boundary_samples(
            model, np.asarray(x, dtype=np.float64), y, predict(model, x), cfg.boundary,
            substream(stream(cfg.seed, image_index), 0), verify_source=False,
        )
        return np.sign(np.mean([s.gradient for s in samples], axis=0))
    raise ConfigError(f"unknown attack kind {kind!r}")


def with_seed(cfg: AttackConfig, seed: int) -> AttackConfig:
    return replace(cfg, seed=seed)
