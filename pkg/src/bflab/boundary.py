"""Decision-boundary probing.

Three primitives:
  * shrink a random Gaussian offset geometrically until the probe re-enters
    the source classification region (a near-boundary point when the raw
    offset left it),
  * average loss gradients over a batch of such probes,
  * measure the L-inf distance to the nearest prediction flip along an
    arbitrary direction (doubling bracket + bisection).

Probe points are deliberately NOT clamped to [0,1]: they are measurement
probes, not attack outputs, and clamping would bias geometry near the faces
of the cube.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from bflab.errors import ConfigError, ContractError, InputError
from bflab.model import (
    ModelParams,
    forward_batch,
    input_gradient,
    input_gradient_batch,
    predict,
)
from bflab.util import generator, substream


@dataclass(frozen=True)
class BoundaryConfig:
    """Knobs of the probe search.

    sigma is the standard deviation of the initial offset, in input-scale
    units; it should be large enough that the raw offset usually leaves the
    source region. gamma in (0,1) shrinks the offset between tries, at most
    t_max times. n_points is the number of probes averaged per gradient.
    """

    sigma: float = 20.0 / 255.0
    gamma: float = 0.6
    t_max: int = 5
    n_points: int = 20

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must be in (0,1), got {self.gamma}")
        if self.sigma <= 0.0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.t_max < 1:
            raise ConfigError(f"t_max must be >= 1, got {self.t_max}")
        if self.n_points < 1:
            raise ConfigError(f"n_points must be >= 1, got {self.n_points}")


@dataclass(frozen=True)
class BoundarySample:
    """One probe: the point, the raw offset it came from, how many shrinks
    it took, the loss gradient there, and whether the search gave up.

    When fell_back is False and shrink_count >= 1, the probe brackets the
    boundary: the point itself is inside the source region while the
    previous (one-shrink-larger) probe was outside.
    """

    point: np.ndarray
    direction: np.ndarray
    shrink_count: int
    gradient: np.ndarray
    fell_back: bool


class DirectionKind(str, Enum):
    SIGN_GRADIENT = "sign_gradient"
    NATURAL = "natural"


@dataclass(frozen=True)
class DistanceMeasurement:
    """L-inf distance to the first prediction flip along one direction.

    censored means no flip was found within the cap, in which case the
    distance equals the cap.
    """

    distance: float
    censored: bool
    direction_kind: DirectionKind


def _shrink_search(
    model: ModelParams,
    x: np.ndarray,
    source_class: int,
    directions: np.ndarray,
    gamma: float,
    t_max: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized shrink loop over a stack of offsets.

    Returns (points, shrink_counts, fell_back). Each row is resolved
    independently, exactly as a scalar loop over probes would.
    """
    n = directions.shape[0]
    points = np.tile(x, (n, 1))
    counts = np.zeros(n, dtype=np.int64)
    fell_back = np.ones(n, dtype=bool)
    pending = np.arange(n)
    for t in range(t_max + 1):
        cand = x + (gamma**t) * directions[pending]
        logits = forward_batch(model, cand)
        inside = np.argmax(logits, axis=1) == source_class
        hit = pending[inside]
        points[hit] = cand[inside]
        counts[hit] = t
        fell_back[hit] = False
        pending = pending[~inside]
        if pending.size == 0:
            break
    return points, counts, fell_back


def sample_boundary_point(
    model: ModelParams,
    x: np.ndarray,
    source_class: int,
    y_attack: int,
    cfg: BoundaryConfig,
    rng: np.random.Generator,
    *,
    verify_source: bool = True,
) -> BoundarySample:
    """Draw one Gaussian offset and shrink it back into the source region.

    The returned gradient is the loss gradient at the probe with respect to
    y_attack (the attack's label, which need not equal source_class). If
    even t_max shrinks stay outside, the probe degrades to x itself and is
    flagged fell_back.
    """
    x = np.asarray(x, dtype=np.float64)
    if verify_source and predict(model, x) != source_class:
        raise ContractError(
            f"x is predicted as class {predict(model, x)}, not the stated source class {source_class}"
        )
    d = rng.normal(0.0, cfg.sigma, size=x.shape[0])
    points, counts, fell = _shrink_search(model, x, source_class, d[None, :], cfg.gamma, cfg.t_max)
    point = x.copy() if fell[0] else points[0]
    grad = input_gradient(model, point, y_attack)
    return BoundarySample(
        point=point,
        direction=d,
        shrink_count=int(counts[0]),
        gradient=grad,
        fell_back=bool(fell[0]),
    )


def collect_boundary_samples(
    model: ModelParams,
    x: np.ndarray,
    y_attack: int,
    source_class: int,
    cfg: BoundaryConfig,
    rng_stream: np.random.SeedSequence,
    *,
    verify_source: bool = True,
) -> list[BoundarySample]:
    """n_points independent probes around x, each from its own substream.

    Substream i of rng_stream drives probe i, so the result is independent
    of evaluation order or batching; gradient evaluation is batched across
    probes for speed.
    """
    x = np.asarray(x, dtype=np.float64)
    if verify_source and predict(model, x) != source_class:
        raise ContractError(
            f"x is predicted as class {predict(model, x)}, not the stated source class {source_class}"
        )
    n = cfg.n_points
    dirs = np.empty((n, x.shape[0]))
    for i in range(n):
        dirs[i] = generator(substream(rng_stream, i)).normal(0.0, cfg.sigma, size=x.shape[0])
    points, counts, fell = _shrink_search(model, x, source_class, dirs, cfg.gamma, cfg.t_max)
    points[fell] = x
    grads = input_gradient_batch(model, points, np.asarray([y_attack]))
    return [
        BoundarySample(
            point=points[i],
            direction=dirs[i],
            shrink_count=int(counts[i]),
            gradient=grads[i],
            fell_back=bool(fell[i]),
        )
        for i in range(n)
    ]


def averaged_boundary_gradient(
    model: ModelParams,
    x: np.ndarray,
    y_attack: int,
    source_class: int,
    cfg: BoundaryConfig,
    rng_stream: np.random.SeedSequence,
) -> np.ndarray:
    """Arithmetic mean of the probe gradients (fallbacks contribute the
    gradient at x)."""
    samples = collect_boundary_samples(model, x, y_attack, source_class, cfg, rng_stream)
    return np.mean([s.gradient for s in samples], axis=0)


def boundary_distance(
    model: ModelParams,
    x: np.ndarray,
    direction: np.ndarray,
    cap: float = 4.0,
    tol: float = 1e-4,
    kind: DirectionKind = DirectionKind.SIGN_GRADIENT,
) -> DistanceMeasurement:
    """Smallest s in (0, cap] with a prediction flip at x + s*u, where u is
    the direction normalized to unit L-inf norm (so s IS the L-inf distance).

    Doubling bracket from an initial step of tol, then bisection to a bracket
    width <= tol; the first flip is assumed detectable at that resolution.
    The returned distance is the flipped end of the bracket.
    """
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if cap <= 0 or tol <= 0:
        raise InputError("cap and tol must be > 0")
    norm = float(np.max(np.abs(direction)))
    if norm == 0.0:
        raise InputError("direction must be non-zero")
    u = direction / norm
    base = predict(model, x)

    def flipped(s: float) -> bool:
        return predict(model, x + s * u) != base

    lo, hi = 0.0, tol
    found = False
    while True:
        probe = min(hi, cap)
        if flipped(probe):
            hi = probe
            found = True
            break
        lo = probe
        if probe >= cap:
            break
        hi = probe * 2.0
    if not found:
        return DistanceMeasurement(distance=cap, censored=True, direction_kind=kind)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if flipped(mid):
            hi = mid
        else:
            lo = mid
    return DistanceMeasurement(distance=hi, censored=False, direction_kind=kind)


def natural_direction_distance(
    model: ModelParams,
    x: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    cap: float = 4.0,
    tol: float = 1e-4,
) -> DistanceMeasurement:
    """Boundary distance along a random Gaussian direction."""
    if sigma <= 0:
        raise InputError("sigma must be > 0")
    x = np.asarray(x, dtype=np.float64)
    d = rng.normal(0.0, sigma, size=x.shape[0])
    return boundary_distance(model, x, d, cap=cap, tol=tol, kind=DirectionKind.NATURAL)
