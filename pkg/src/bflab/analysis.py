"""Diagnostic studies over substitute/victim model pairs.

Four reproductions at desk scale: gradient cosine similarity (original
position vs. averaged boundary probes), victim boundary distance along
attack first-step directions, robustness vs. natural-direction boundary
distance, and transfer success matrices, plus parameter ablations. Every
reported mean carries its standard error, and skipped/censored inputs are
counted, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from bflab import attack as atk
from bflab.boundary import (
    BoundaryConfig,
    DirectionKind,
    averaged_boundary_gradient,
    boundary_distance,
    natural_direction_distance,
)
from bflab.errors import ConfigError, EmptyStudyError, InputError
from bflab.model import LabeledPoint, ModelParams, input_gradient, predict, predict_batch
from bflab.util import cosine, generator, mean_se, parallel_map, stream, substream


@dataclass(frozen=True)
class ModelPair:
    substitute: ModelParams
    victim: ModelParams
    pair_id: str

    def __post_init__(self):
        s, v = self.substitute, self.victim
        if s.input_dim != v.input_dim or s.num_classes != v.num_classes:
            raise ConfigError(
                f"pair {self.pair_id}: substitute and victim must share input_dim/num_classes"
            )


Protocol = Literal["at_input", "at_victim_boundary"]


@dataclass
class CosineReport:
    mean_original: float
    mean_boundary_n1: float
    mean_boundary_nN: float
    n_inputs: int
    protocol: Protocol
    n_points: int
    se_original: float = 0.0
    se_boundary_n1: float = 0.0
    se_boundary_nN: float = 0.0
    skipped: int = 0
    censored: int = 0

    def __post_init__(self):
        for m in (self.mean_original, self.mean_boundary_n1, self.mean_boundary_nN):
            assert -1.0 - 1e-12 <= m <= 1.0 + 1e-12, f"cosine mean {m} out of range"


def cosine_study(
    pair: ModelPair,
    inputs: Sequence[LabeledPoint],
    cfg: BoundaryConfig,
    protocol: Protocol,
    seed: int,
    cap: float = 4.0,
    tol: float = 1e-4,
) -> CosineReport:
    """Mean gradient cosine between substitute and victim.

    Three rows per input: the plain gradients at the input, and the
    substitute's averaged boundary gradient (one probe, and cfg.n_points
    probes) against the victim gradient. Under the at_input protocol the
    victim gradient is taken at the input; under at_victim_boundary it is
    taken at the victim's own boundary point along the averaged direction.
    Inputs misclassified by either model are skipped and counted.
    """
    if protocol not in ("at_input", "at_victim_boundary"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    sub, vic = pair.substitute, pair.victim
    root = stream(seed)

    orig, b1, bN = [], [], []
    skipped = 0
    censored = 0
    for i, pt in enumerate(inputs):
        if predict(sub, pt.x) != pt.y or predict(vic, pt.x) != pt.y:
            skipped += 1
            continue
        g_sub = input_gradient(sub, pt.x, pt.y)
        g_vic_at_x = input_gradient(vic, pt.x, pt.y)
        g1 = averaged_boundary_gradient(
            sub, pt.x, pt.y, pt.y, replace(cfg, n_points=1), substream(root, i, 0)
        )
        gN = averaged_boundary_gradient(
            sub, pt.x, pt.y, pt.y, replace(cfg, n_points=cfg.n_points), substream(root, i, 1)
        )
        orig.append(cosine(g_sub, g_vic_at_x))
        if protocol == "at_input":
            b1.append(cosine(g1, g_vic_at_x))
            bN.append(cosine(gN, g_vic_at_x))
        else:
            ok = True
            vals = []
            for g in (g1, gN):
                m = boundary_distance(vic, pt.x, g, cap=cap, tol=tol)
                if m.censored:
                    ok = False
                    break
                u = g / np.max(np.abs(g))
                vals.append(cosine(g, input_gradient(vic, pt.x + m.distance * u, pt.y)))
            if not ok:
                censored += 1
                orig.pop()
                continue
            b1.append(vals[0])
            bN.append(vals[1])

    if not orig:
        raise EmptyStudyError("cosine study: every input was skipped or censored")
    mo, so = mean_se(orig)
    m1, s1 = mean_se(b1)
    mN, sN = mean_se(bN)
    return CosineReport(
        mean_original=mo,
        mean_boundary_n1=m1,
        mean_boundary_nN=mN,
        n_inputs=len(orig),
        protocol=protocol,
        n_points=cfg.n_points,
        se_original=so,
        se_boundary_n1=s1,
        se_boundary_nN=sN,
        skipped=skipped,
        censored=censored,
    )


@dataclass
class DistanceCell:
    attack: str
    victim_id: str
    mean: float
    se: float
    n_used: int
    n_censored: int


@dataclass
class DistanceReport:
    attacks: list[str]
    victim_ids: list[str]
    cells: list[DistanceCell]
    n_inputs: int
    skipped: int

    def cell(self, attack: str, victim_id: str) -> DistanceCell:
        for c in self.cells:
            if c.attack == attack and c.victim_id == victim_id:
                return c
        raise KeyError((attack, victim_id))


def distance_study(
    pair_set: Sequence[ModelPair],
    inputs: Sequence[LabeledPoint],
    attacks: Sequence[tuple[str, str, atk.AttackConfig]],
    cfg: BoundaryConfig,
    cap: float = 4.0,
    tol: float = 1e-4,
) -> DistanceReport:
    """Mean victim boundary distance along each attack's first-step direction.

    attacks is a list of (name, kind, config). Directions are computed on the
    shared substitute at the clean input; censored measurements are excluded
    from means and counted. All pairs must share one substitute.
    """
    if not pair_set:
        raise ConfigError("distance study needs at least one pair")
    sub = pair_set[0].substitute
    if any(p.substitute is not sub for p in pair_set):
        raise ConfigError("distance study: all pairs must share the substitute model")

    usable = [(i, pt) for i, pt in enumerate(inputs) if predict(sub, pt.x) == pt.y]
    skipped = len(inputs) - len(usable)
    if not usable:
        raise EmptyStudyError("distance study: no input is correctly classified by the substitute")

    cells: list[DistanceCell] = []
    for name, kind, acfg in attacks:
        acfg = replace(acfg, boundary=acfg.boundary or cfg)

        def direction_for(item):
            i, pt = item
            return atk.first_step_direction(kind, sub, pt.x, pt.y, acfg, image_index=i)

        directions = parallel_map(direction_for, usable)
        for pair in pair_set:
            dists = []
            n_cens = 0
            for (i, pt), d in zip(usable, directions):
                m = boundary_distance(pair.victim, pt.x, d, cap=cap, tol=tol)
                if m.censored:
                    n_cens += 1
                else:
                    dists.append(m.distance)
            if not dists:
                raise EmptyStudyError(
                    f"distance study: every measurement censored for attack {name} on {pair.pair_id}"
                )
            mu, se = mean_se(dists)
            cells.append(
                DistanceCell(
                    attack=name,
                    victim_id=pair.pair_id,
                    mean=mu,
                    se=se,
                    n_used=len(dists),
                    n_censored=n_cens,
                )
            )
    return DistanceReport(
        attacks=[a[0] for a in attacks],
        victim_ids=[p.pair_id for p in pair_set],
        cells=cells,
        n_inputs=len(usable),
        skipped=skipped,
    )


@dataclass
class RobustnessRow:
    model_id: str
    mean_natural_distance: float
    se_natural_distance: float
    mean_adversarial_distance: float
    se_adversarial_distance: float
    robust_accuracy: float
    natural_censored: int
    adversarial_censored: int


@dataclass
class RobustnessReport:
    rows: list[RobustnessRow]
    spearman_natural_vs_robust: float | None
    eps: float
    sigma: float
    n_directions: int


def robustness_study(
    models: Sequence[tuple[str, ModelParams]],
    inputs: Sequence[LabeledPoint],
    sigma: float,
    n_directions: int,
    seed: int,
    eps: float = 0.1,
    iterations: int = 10,
    cap: float = 4.0,
    tol: float = 1e-4,
) -> RobustnessReport:
    """Per model: mean boundary distance along natural (Gaussian) and
    adversarial (own sign-gradient) directions, plus white-box robust
    accuracy under a fixed-budget iterative attack. Reports the Spearman
    rank correlation between natural distance and robust accuracy.
    """
    if len(models) < 2:
        raise ConfigError("robustness study needs at least 2 models")
    dims = {(m.input_dim, m.num_classes) for _, m in models}
    if len(dims) != 1:
        raise ConfigError("all models must share input_dim/num_classes")

    acfg = atk.AttackConfig(epsilon=eps, iterations=iterations, seed=seed)
    rows: list[RobustnessRow] = []
    for model_id, model in models:
        nat, n_cens = [], 0
        for i, pt in enumerate(inputs):
            for j in range(n_directions):
                # directions are shared across models (keyed by input and
                # direction index only) so comparisons are paired
                rng = generator(stream(seed, i, j))
                m = natural_direction_distance(model, pt.x, sigma, rng, cap=cap, tol=tol)
                if m.censored:
                    n_cens += 1
                else:
                    nat.append(m.distance)
        adv, a_cens = [], 0
        for pt in inputs:
            g = input_gradient(model, pt.x, pt.y)
            if not np.any(g):
                a_cens += 1
                continue
            m = boundary_distance(model, pt.x, np.sign(g), cap=cap, tol=tol)
            if m.censored:
                a_cens += 1
            else:
                adv.append(m.distance)
        if not nat or not adv:
            raise EmptyStudyError(f"robustness study: all measurements censored for {model_id}")

        def attacked_ok(item):
            i, pt = item
            res = atk.i_fgsm(model, pt.x, pt.y, acfg, image_index=i)
            return predict(model, res.adversarial) == pt.y

        survived = parallel_map(attacked_ok, list(enumerate(inputs)))
        mn, sn = mean_se(nat)
        ma, sa = mean_se(adv)
        rows.append(
            RobustnessRow(
                model_id=model_id,
                mean_natural_distance=mn,
                se_natural_distance=sn,
                mean_adversarial_distance=ma,
                se_adversarial_distance=sa,
                robust_accuracy=float(np.mean(survived)),
                natural_censored=n_cens,
                adversarial_censored=a_cens,
            )
        )

    nat_means = [r.mean_natural_distance for r in rows]
    rob = [r.robust_accuracy for r in rows]
    if len(set(nat_means)) < 2 or len(set(rob)) < 2:
        rho = None  # constant inputs: rank correlation undefined
    else:
        rho = float(stats.spearmanr(nat_means, rob).statistic)
    return RobustnessReport(
        rows=rows,
        spearman_natural_vs_robust=rho,
        eps=eps,
        sigma=sigma,
        n_directions=n_directions,
    )


@dataclass
class TransferMatrix:
    attacks: list[str]
    victims: list[str]
    success: np.ndarray  # (n_attacks, n_victims) rates in [0,1]
    whitebox_flags: np.ndarray  # same shape, bool
    n_inputs: int
    skipped: int
    queries: dict = field(default_factory=dict)
    fallbacks: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.success, dtype=float)
        assert s.shape == (len(self.attacks), len(self.victims)), "matrix shape mismatch"
        assert ((s >= 0.0) & (s <= 1.0)).all(), "success rates must lie in [0,1]"

    def rate(self, attack: str, victim: str) -> float:
        return float(self.success[self.attacks.index(attack), self.victims.index(victim)])


def transfer_eval(
    pairs: Sequence[ModelPair],
    inputs: Sequence[LabeledPoint],
    attack_configs: Sequence[tuple[str, str, atk.AttackConfig]],
    seed: int,
    include_misclassified: bool = False,
) -> TransferMatrix:
    """Success-rate matrix of attacks (rows) against victims (columns).

    Adversarial examples are crafted once per attack on the shared
    substitute and evaluated on every victim plus the substitute itself
    (the white-box column). By default inputs the substitute misclassifies
    are excluded, the usual convention for success-rate tables.
    """
    if not pairs:
        raise ConfigError("transfer eval needs at least one pair")
    sub = pairs[0].substitute
    if any(p.substitute is not sub for p in pairs):
        raise ConfigError("transfer eval: all pairs must share the substitute model")

    if include_misclassified:
        usable = list(enumerate(inputs))
    else:
        usable = [(i, pt) for i, pt in enumerate(inputs) if predict(sub, pt.x) == pt.y]
    skipped = len(inputs) - len(usable)
    if not usable:
        raise EmptyStudyError("transfer eval: no usable inputs")

    victims: list[tuple[str, ModelParams, bool]] = [("substitute", sub, True)]
    victims += [(p.pair_id, p.victim, False) for p in pairs]

    names = [a[0] for a in attack_configs]
    success = np.zeros((len(attack_configs), len(victims)))
    whitebox = np.zeros_like(success, dtype=bool)
    queries: dict[str, int] = {}
    fallbacks: dict[str, int] = {}

    for ai, (name, kind, acfg) in enumerate(attack_configs):
        run_cfg = atk.with_seed(acfg, _fold_seed(seed, acfg.seed))

        def craft(item):
            i, pt = item
            return atk.run_attack(kind, sub, pt.x, pt.y, run_cfg, image_index=i)

        results = parallel_map(craft, usable)
        queries[name] = int(sum(r.queries for r in results))
        fallbacks[name] = int(sum(r.fallback_count for r in results))
        advs = np.stack([r.adversarial for r in results])
        labels = np.asarray([pt.y for _, pt in usable])
        for vi, (vid, vmodel, is_wb) in enumerate(victims):
            preds = predict_batch(vmodel, advs)
            success[ai, vi] = float(np.mean(preds != labels))
            whitebox[ai, vi] = is_wb

    return TransferMatrix(
        attacks=names,
        victims=[v[0] for v in victims],
        success=success,
        whitebox_flags=whitebox,
        n_inputs=len(usable),
        skipped=skipped,
        queries=queries,
        fallbacks=fallbacks,
    )


def _fold_seed(study_seed: int, attack_seed: int) -> int:
    # one stable 64-bit value per (study, attack) seed combination
    mask = (1 << 64) - 1
    ss = np.random.SeedSequence([study_seed & mask, attack_seed & mask])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class AblationCurve:
    parameter: str
    grid: list[float]
    success: list[float]  # mean black-box success per grid value
    per_victim: list[dict]


def ablate(
    parameter: Literal["gamma", "n_points"],
    grid: Sequence[float],
    fixed_cfg: tuple[str, str, atk.AttackConfig],
    pairs: Sequence[ModelPair],
    inputs: Sequence[LabeledPoint],
    seed: int,
) -> AblationCurve:
    """Sweep one boundary parameter and record mean black-box transfer
    success of the fixed attack at each grid value."""
    if parameter not in ("gamma", "n_points"):
        raise ConfigError(f"unknown ablation parameter {parameter!r}")
    if not len(grid):
        raise ConfigError("ablation grid is empty")
    name, kind, acfg = fixed_cfg
    if acfg.boundary is None:
        raise ConfigError("ablation needs a boundary-fitting attack config")

    succ, per_victim = [], []
    for v in grid:
        if parameter == "gamma":
            bcfg = replace(acfg.boundary, gamma=float(v))
        else:
            bcfg = replace(acfg.boundary, n_points=int(v))
        cfg_v = replace(acfg, boundary=bcfg)
        tm = transfer_eval(pairs, inputs, [(name, kind, cfg_v)], seed)
        black_box = ~tm.whitebox_flags[0]
        succ.append(float(tm.success[0, black_box].mean()))
        per_victim.append({vid: float(r) for vid, r in zip(tm.victims, tm.success[0])})
    return AblationCurve(
        parameter=parameter,
        grid=[float(v) for v in grid],
        success=succ,
        per_victim=per_victim,
    )
