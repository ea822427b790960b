"""Scene construction and deterministic SVG rendering.

A scene is the geometry of one attack neighborhood: cross-entropy loss
contours of the substitute, decision-boundary polylines of substitute
(solid) and victim (dashed), the input, its sampled near-boundary probes,
and the attack trajectory. For input_dim > 2 everything is computed on an
axis-aligned 2-d slice through the input point; off-slice coordinates of
probes and iterates are dropped by projection.

SVG output is hand-serialized with fixed float formatting so identical
scenes produce identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import contourpy
import numpy as np

from bflab import attack as atk
from bflab.boundary import BoundaryConfig, BoundarySample, collect_boundary_samples
from bflab.errors import InputError
from bflab.model import ModelParams, forward_batch, loss_batch, predict
from bflab.util import stream, substream


@dataclass
class PlotScene:
    slice_dims: tuple[int, int]
    anchor: np.ndarray
    grid_n: int
    loss_contours: list[tuple[float, list[np.ndarray]]]
    substitute_boundary: list[np.ndarray]
    victim_boundary: list[np.ndarray]
    input_point: np.ndarray
    boundary_samples: list[BoundarySample]
    trajectory: list[np.ndarray] = field(default_factory=list)
    source_class: int = 0


def _slice_grid(anchor: np.ndarray, dims: tuple[int, int], n: int):
    xs = np.linspace(0.0, 1.0, n)
    ys = np.linspace(0.0, 1.0, n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.tile(anchor, (n * n, 1))
    pts[:, dims[0]] = gx.ravel()
    pts[:, dims[1]] = gy.ravel()
    return xs, ys, pts


def _margin_grid(model: ModelParams, pts: np.ndarray, source_class: int, n: int) -> np.ndarray:
    """Score of the source class minus the best other class; its zero set is
    the region boundary of the source class."""
    logits = forward_batch(model, pts)
    others = np.delete(logits, source_class, axis=1)
    margin = logits[:, source_class] - others.max(axis=1)
    return margin.reshape(n, n)


def boundary_polylines(
    model: ModelParams,
    source_class: int,
    anchor: np.ndarray,
    dims: tuple[int, int] = (0, 1),
    grid_n: int = 161,
) -> list[np.ndarray]:
    """Zero-level contour of the source-class margin on the slice."""
    xs, ys, pts = _slice_grid(anchor, dims, grid_n)
    margin = _margin_grid(model, pts, source_class, grid_n)
    cg = contourpy.contour_generator(x=xs, y=ys, z=margin)
    return list(cg.lines(0.0))


def loss_contour_polylines(
    model: ModelParams,
    y: int,
    anchor: np.ndarray,
    dims: tuple[int, int] = (0, 1),
    grid_n: int = 161,
    n_levels: int = 9,
) -> list[tuple[float, list[np.ndarray]]]:
    xs, ys, pts = _slice_grid(anchor, dims, grid_n)
    grid = loss_batch(model, pts, np.asarray([y])).reshape(grid_n, grid_n)
    levels = np.quantile(grid, np.linspace(0.1, 0.9, n_levels))
    cg = contourpy.contour_generator(x=xs, y=ys, z=grid)
    out = []
    for lv in dict.fromkeys(float(v) for v in levels):  # drop duplicate levels
        out.append((lv, list(cg.lines(lv))))
    return out


def build_scene(
    substitute: ModelParams,
    victim: ModelParams | None,
    x: np.ndarray,
    y: int,
    bcfg: BoundaryConfig,
    seed: int,
    attack_kind: str | None = None,
    attack_cfg: atk.AttackConfig | None = None,
    dims: tuple[int, int] = (0, 1),
    grid_n: int = 161,
) -> PlotScene:
    x = np.asarray(x, dtype=np.float64)
    d = substitute.input_dim
    if not (0 <= dims[0] < d and 0 <= dims[1] < d and dims[0] != dims[1]):
        raise InputError(f"slice dims {dims} invalid for input_dim {d}")
    src = predict(substitute, x)
    samples = collect_boundary_samples(
        substitute, x, y, src, bcfg, substream(stream(seed), 0), verify_source=False
    )
    trajectory: list[np.ndarray] = []
    if attack_kind is not None and attack_cfg is not None:
        res = atk.run_attack(attack_kind, substitute, x, y, attack_cfg, record_trace=True)
        trajectory = [x.copy()] + list(res.iterate_trace or [])
    return PlotScene(
        slice_dims=tuple(dims),
        anchor=x,
        grid_n=grid_n,
        loss_contours=loss_contour_polylines(substitute, y, x, dims, grid_n),
        substitute_boundary=boundary_polylines(substitute, src, x, dims, grid_n),
        victim_boundary=(
            boundary_polylines(victim, src, x, dims, grid_n) if victim is not None else []
        ),
        input_point=x,
        boundary_samples=samples,
        trajectory=trajectory,
        source_class=src,
    )


# ---------------------------------------------------------------------------
# SVG serialization
# ---------------------------------------------------------------------------

_SIZE = 640
_PAD = 40


def _px(v: float) -> str:
    return f"{_PAD + v * (_SIZE - 2 * _PAD):.2f}"


def _py(v: float) -> str:
    return f"{_SIZE - _PAD - v * (_SIZE - 2 * _PAD):.2f}"


def _poly(points_2d, stroke: str, width: str, dash: str | None = None) -> str:
    coords = " ".join(f"{_px(p[0])},{_py(p[1])}" for p in points_2d)
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline fill="none" stroke="{stroke}" stroke-width="{width}"{dash_attr} '
        f'points="{coords}"/>'
    )


def _dot(p, r: float, fill: str) -> str:
    return f'<circle cx="{_px(p[0])}" cy="{_py(p[1])}" r="{r}" fill="{fill}"/>'


def render_svg(scene: PlotScene) -> str:
    i, j = scene.slice_dims
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SIZE}" height="{_SIZE}" '
        f'viewBox="0 0 {_SIZE} {_SIZE}">',
        f'<rect width="{_SIZE}" height="{_SIZE}" fill="white"/>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_SIZE - 2 * _PAD}" height="{_SIZE - 2 * _PAD}" '
        f'fill="none" stroke="#cccccc" stroke-width="1"/>',
    ]
    for _, lines in scene.loss_contours:
        for line in lines:
            if len(line) >= 2:
                parts.append(_poly(line, "#dddddd", "1"))
    for line in scene.victim_boundary:
        if len(line) >= 2:
            parts.append(_poly(line, "#000000", "1.5", dash="6,4"))
    for line in scene.substitute_boundary:
        if len(line) >= 2:
            parts.append(_poly(line, "#000000", "2"))
    for s in scene.boundary_samples:
        parts.append(_dot((s.point[i], s.point[j]), 3.0, "#d97706" if s.fell_back else "#2563eb"))
    if len(scene.trajectory) >= 2:
        traj2d = [(p[i], p[j]) for p in scene.trajectory]
        parts.append(_poly(traj2d, "#dc2626", "1.5"))
        for p in traj2d[1:]:
            parts.append(_dot(p, 2.0, "#dc2626"))
    parts.append(_dot((scene.input_point[i], scene.input_point[j]), 5.0, "#16a34a"))
    parts.append(
        f'<text x="{_PAD}" y="{_PAD - 12}" font-family="monospace" font-size="13">'
        f"slice x{i}/x{j} | source class {scene.source_class} | solid=substitute boundary, "
        f"dashed=victim, green=input, blue=probes, red=trajectory</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_svg(scene: PlotScene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_svg(scene))
