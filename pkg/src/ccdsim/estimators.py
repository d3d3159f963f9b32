"""Panel estimators: cohort contrasts, bias oracles, and the meta-regression.

Every estimator is a per-period contrast between two cohorts, either
inverse-probability weighted (Horvitz-Thompson, dividing by the declared
assignment probabilities) or as a difference of cohort means (Hajek). The
one-day-treated cohort at period t means only that day's sample; the untreated
cookie-day remainder is never used.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .causal import BehaviorWorld, EffectKind, EffectSeries, simulate_own_path
from .designs import CohortLabel, CohortSchedule, DesignKind, DirectiveKind
from .engine import Panel


class EstimatorError(ValueError):
    """Raised when a panel cannot support the requested contrast."""


class Weighting(Enum):
    HORVITZ_THOMPSON = "horvitz_thompson"
    HAJEK = "hajek"


@dataclass(frozen=True)
class ContrastSpec:
    cohort_a: CohortLabel
    cohort_b: CohortLabel
    weighting: Weighting = Weighting.HORVITZ_THOMPSON

    def __post_init__(self) -> None:
        if self.cohort_a == self.cohort_b:
            raise EstimatorError("contrast cohorts must be distinct")


def _clustered_se(z: np.ndarray, cluster_map: np.ndarray) -> float:
    """Standard error of mean(z) from cluster-level sums.

    Interference runs inside clusters under cluster-level serving, so
    user-level independence fails; cluster sums are the independent units.
    """
    k = int(cluster_map.max()) + 1
    sums = np.bincount(cluster_map, weights=z, minlength=k)
    if k < 2:
        return 0.0
    center = sums - sums.mean()
    var_total = k / (k - 1) * np.sum(center**2)
    return float(np.sqrt(var_total) / len(z))


def contrast(
    panel: Panel, spec: ContrastSpec, kind: EffectKind = EffectKind.TOTAL
) -> EffectSeries:
    """Per-period cohort-a minus cohort-b outcome contrast with standard errors."""
    values = np.empty(panel.horizon)
    stderr = np.empty(panel.horizon)
    clustered = panel.kind == DesignKind.CLUSTERED_CCD and panel.cluster_map is not None
    for t in range(1, panel.horizon + 1):
        members_a = panel.members(spec.cohort_a, t)
        members_b = panel.members(spec.cohort_b, t)
        if len(members_a) == 0 or len(members_b) == 0:
            raise EstimatorError(
                f"empty cohort at period {t}: "
                f"{spec.cohort_a.value}={len(members_a)}, {spec.cohort_b.value}={len(members_b)}"
            )
        y_a = panel.y[members_a, t - 1]
        y_b = panel.y[members_b, t - 1]
        if spec.weighting == Weighting.HORVITZ_THOMPSON:
            p_a = panel.probs.get(spec.cohort_a)
            p_b = panel.probs.get(spec.cohort_b)
            if p_a is None or p_b is None:
                raise EstimatorError(
                    f"missing assignment probability for {spec.cohort_a.value} or "
                    f"{spec.cohort_b.value}"
                )
        else:
            # Hajek normalizes by realized cohort sizes.
            p_a = len(members_a) / panel.n
            p_b = len(members_b) / panel.n
        z = np.zeros(panel.n)
        z[members_a] = y_a / p_a
        z[members_b] -= y_b / p_b
        values[t - 1] = z.sum() / panel.n
        if clustered:
            stderr[t - 1] = _clustered_se(z, panel.cluster_map)
        else:
            var_a = y_a.var(ddof=1) if len(y_a) > 1 else 0.0
            var_b = y_b.var(ddof=1) if len(y_b) > 1 else 0.0
            if spec.weighting == Weighting.HAJEK:
                stderr[t - 1] = np.sqrt(var_a / len(y_a) + var_b / len(y_b))
            else:
                stderr[t - 1] = z.std(ddof=1) / np.sqrt(panel.n) if panel.n > 1 else 0.0
    return EffectSeries(kind=kind, values=values, stderr=stderr)


def est_total(panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON):
    """Long-term treated vs control contrast (total effect)."""
    a, b = (
        (CohortLabel.T, CohortLabel.C)
        if panel.has_cohort(CohortLabel.T)
        else (CohortLabel.CT, CohortLabel.CC)
    )
    return contrast(panel, ContrastSpec(a, b, weighting), EffectKind.TOTAL)


def est_ccd_learning(panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON):
    """Long-treated vs one-day-treated contrast: learning plus personalization."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CT, CohortLabel.CDT, weighting),
        EffectKind.USER_LEARNING,
    )


def est_ccd_direct(panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON):
    """One-day-treated vs long-term control contrast (direct effect)."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CDT, CohortLabel.CC, weighting),
        EffectKind.DIRECT,
    )


def est_switch_learning(panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON):
    """Switch cohort vs one-day-treated: user learning up to matching bias."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CS, CohortLabel.CDT, weighting),
        EffectKind.USER_LEARNING,
    )


def est_switch_personalization(
    panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON
):
    """Long-treated vs switch cohort: personalization up to matching bias."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CT, CohortLabel.CS, weighting),
        EffectKind.PERSONALIZATION,
    )


def est_freeze_learning(panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON):
    """Frozen cohort vs one-day-treated: user learning under the snapshot proxy."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CF, CohortLabel.CDT, weighting),
        EffectKind.USER_LEARNING,
    )


def est_freeze_personalization(
    panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON
):
    """Long-treated vs frozen cohort: personalization under the snapshot proxy."""
    return contrast(
        panel,
        ContrastSpec(CohortLabel.CT, CohortLabel.CF, weighting),
        EffectKind.PERSONALIZATION,
    )


def est_clustered_learning(
    panel: Panel, weighting: Weighting = Weighting.HORVITZ_THOMPSON
):
    """The CCD learning contrast on a cluster-served panel."""
    if panel.kind != DesignKind.CLUSTERED_CCD:
        raise EstimatorError("clustered learning estimator needs a clustered panel")
    return est_ccd_learning(panel, weighting)


def bias_switch_oracle(
    world: BehaviorWorld, schedule: CohortSchedule, seed: int
) -> EffectSeries:
    """Exact matching bias of the switch design, by counterfactual splicing.

    Per period, averages over the switch cohort the outcome gap between being
    served the matched user's control-path vector and being served one's own
    control-path vector, with preferences on the treated path either way.
    """
    from .causal import burn_in_features

    horizon = schedule.horizon
    burn_in = schedule.burn_in
    users = np.arange(world.n)
    feats0 = burn_in_features(world, users, burn_in, seed)
    zeros = np.zeros((world.n, horizon), dtype=np.int8)
    ctrl = simulate_own_path(
        world, users, zeros, seed, rng_offset=burn_in, start_features=feats0
    )
    cs_users = schedule.members(CohortLabel.CS, 1)
    if len(cs_users) == 0:
        raise EstimatorError("schedule has no switch cohort")
    values = np.empty(horizon)
    for t in range(1, horizon + 1):
        matched = schedule.directive_arg[cs_users, t - 1]
        if np.any(matched < 0):
            raise EstimatorError(f"switch user lacks a match at period {t}")
        prefs1 = world.preference_state(
            cs_users, np.ones((len(cs_users), t - 1), dtype=np.int8), t
        )
        u = world.uniforms(seed, burn_in + t, cs_users)
        ones_now = np.ones(len(cs_users), dtype=np.int8)
        feats_ctrl = ctrl.features_before[t - 1]
        y_mirror = world.outcome(
            world.choose(world.system(ones_now, feats_ctrl[matched]), prefs1, u, t)
        )
        y_own = world.outcome(
            world.choose(world.system(ones_now, feats_ctrl[cs_users]), prefs1, u, t)
        )
        values[t - 1] = np.mean(y_mirror - y_own)
    return EffectSeries(kind=EffectKind.USER_LEARNING, values=values)


def _cluster_served_path(
    world: BehaviorWorld,
    members: np.ndarray,
    w_paths: np.ndarray,
    seed: int,
    rng_offset: int,
    start_contrib: np.ndarray,
    leave_one_out: bool,
) -> np.ndarray:
    """Served vectors per member per period under cluster-level personalization.

    Returns (T + 1, m, d): entry t is the vector served at the start of period
    t + 1; co-member actions feed the shared pool each period.
    """
    m, horizon = w_paths.shape
    base = world.default_features(members)
    contrib = start_contrib.copy()
    served_before = np.empty((horizon + 1, m, world.feature_dim))
    for t in range(1, horizon + 1):
        total = contrib.sum(axis=0, keepdims=True)
        served = base + (total - contrib if leave_one_out else total)
        served_before[t - 1] = served
        prefs = world.preference_state(members, w_paths[:, : t - 1], t)
        state = world.system(w_paths[:, t - 1], served)
        u = world.uniforms(seed, rng_offset + t, members)
        actions = world.choose(state, prefs, u, t)
        contrib = contrib + world.feature_update(actions, t)
    total = contrib.sum(axis=0, keepdims=True)
    served_before[horizon] = base + (total - contrib if leave_one_out else total)
    return served_before


def bias_cluster_oracle(
    world: BehaviorWorld,
    schedule: CohortSchedule,
    seed: int,
    replicates: int = 20,
    sample_users: Optional[Sequence[int]] = None,
    exhaustive: bool = False,
) -> EffectSeries:
    """Self-feedback bias of cluster-served learning estimation.

    For each evaluated user, co-members of their cluster are re-assigned to
    long-term treatment independently with the design's long-treated
    probability (everything else behaves as control); the cluster is rolled
    forward twice, once with the user's own history all-treated and once
    all-control, and the outcome gap at current treatment with control-path
    preferences is averaged. ``exhaustive=True`` enumerates all co-member
    patterns instead of sampling (feasible only for small clusters).
    """
    from .causal import burn_in_features

    if schedule.cluster_map is None:
        raise EstimatorError("cluster bias oracle needs a clustered schedule")
    horizon = schedule.horizon
    burn_in = schedule.burn_in
    cluster_map = schedule.cluster_map
    p_treated = schedule.probs.get(CohortLabel.CT, 0.0)
    users = (
        np.arange(world.n) if sample_users is None else np.asarray(sample_users)
    )
    accum = np.zeros(horizon)
    rng = np.random.default_rng([seed, 0xB1A5])
    for i in users:
        members = np.flatnonzero(cluster_map == cluster_map[i])
        pos = int(np.flatnonzero(members == i)[0])
        others = len(members) - 1
        start_contrib = (
            burn_in_features(world, members, burn_in, seed)
            - world.default_features(members)
        )
        if exhaustive:
            patterns = [
                ((mask >> np.arange(others)) & 1).astype(np.int8)
                for mask in range(1 << others)
            ]
            weights = [
                float(
                    np.prod(np.where(pat == 1, p_treated, 1.0 - p_treated))
                )
                for pat in patterns
            ]
        else:
            patterns = [
                (rng.random(others) < p_treated).astype(np.int8)
                for _ in range(replicates)
            ]
            weights = [1.0 / replicates] * len(patterns)
        diff_i = np.zeros(horizon)
        for pat, weight in zip(patterns, weights):
            if weight == 0.0:
                continue
            w_paths = np.zeros((len(members), horizon), dtype=np.int8)
            co_rows = np.delete(np.arange(len(members)), pos)
            w_paths[co_rows] = pat[:, None]
            w_paths[pos] = 1
            served_1 = _cluster_served_path(
                world, members, w_paths, seed, burn_in, start_contrib,
                schedule.leave_one_out,
            )
            w_paths[pos] = 0
            served_0 = _cluster_served_path(
                world, members, w_paths, seed, burn_in, start_contrib,
                schedule.leave_one_out,
            )
            me = np.array([i])
            for t in range(1, horizon + 1):
                prefs0 = world.preference_state(
                    me, np.zeros((1, t - 1), dtype=np.int8), t
                )
                u = world.uniforms(seed, burn_in + t, me)
                one = np.ones(1, dtype=np.int8)
                y_hist1 = world.outcome(
                    world.choose(
                        world.system(one, served_1[t - 1, pos : pos + 1]),
                        prefs0, u, t,
                    )
                )
                y_hist0 = world.outcome(
                    world.choose(
                        world.system(one, served_0[t - 1, pos : pos + 1]),
                        prefs0, u, t,
                    )
                )
                diff_i[t - 1] += weight * float(y_hist1[0] - y_hist0[0])
        accum += diff_i
    return EffectSeries(
        kind=EffectKind.USER_LEARNING, values=accum / len(users)
    )


def personalization_imbalance(
    panel: Panel, cohort_a: CohortLabel, cohort_b: CohortLabel
) -> np.ndarray:
    """Per-period standardized distance between cohort-mean served vectors.

    Each coordinate is scaled by the pooled standard deviation across both
    cohorts before taking the Euclidean norm; coordinates with no variation
    contribute nothing.
    """
    if panel.served is None:
        raise EstimatorError("panel has no served-vector log")
    out = np.empty(panel.horizon)
    for t in range(1, panel.horizon + 1):
        members_a = panel.members(cohort_a, t)
        members_b = panel.members(cohort_b, t)
        if len(members_a) == 0 or len(members_b) == 0:
            raise EstimatorError(f"empty cohort at period {t}")
        va = panel.served[members_a, t - 1, :]
        vb = panel.served[members_b, t - 1, :]
        pooled = np.concatenate([va, vb], axis=0)
        sd = pooled.std(axis=0, ddof=0)
        gap = va.mean(axis=0) - vb.mean(axis=0)
        scaled = np.divide(gap, sd, out=np.zeros_like(gap), where=sd > 0)
        out[t - 1] = np.sqrt((scaled**2).sum())
    return out


@dataclass(frozen=True)
class StudySummary:
    """One study's point on the bias-vs-imbalance meta-regression."""

    imbalance: float
    bias: float
    variance: float

    def __post_init__(self) -> None:
        if self.variance <= 0:
            raise EstimatorError("study variance must be positive")


@dataclass(frozen=True)
class WlsFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float


def wls_line_fit(studies: Sequence[StudySummary]) -> WlsFit:
    """Variance-weighted least squares line of bias on imbalance."""
    if len(studies) < 2:
        raise EstimatorError("need at least two studies to fit a line")
    x = np.array([s.imbalance for s in studies])
    y = np.array([s.bias for s in studies])
    wts = np.array([1.0 / s.variance for s in studies])
    if np.ptp(x) == 0:
        raise EstimatorError("degenerate design: all imbalances are equal")
    design = np.column_stack([np.ones_like(x), x])
    xtwx = design.T @ (design * wts[:, None])
    xtwy = design.T @ (y * wts)
    coeffs = np.linalg.solve(xtwx, xtwy)
    cov = np.linalg.inv(xtwx)
    return WlsFit(
        slope=float(coeffs[1]),
        intercept=float(coeffs[0]),
        slope_se=float(np.sqrt(cov[1, 1])),
        intercept_se=float(np.sqrt(cov[0, 0])),
    )


ESTIMATOR_REGISTRY = {
    "total": (est_total, (CohortLabel.CT, CohortLabel.CC)),
    "ccd_learning": (est_ccd_learning, (CohortLabel.CT, CohortLabel.CDT)),
    "ccd_direct": (est_ccd_direct, (CohortLabel.CDT, CohortLabel.CC)),
    "switch_learning": (est_switch_learning, (CohortLabel.CS, CohortLabel.CDT)),
    "switch_personalization": (
        est_switch_personalization,
        (CohortLabel.CT, CohortLabel.CS),
    ),
    "freeze_learning": (est_freeze_learning, (CohortLabel.CF, CohortLabel.CDT)),
    "freeze_personalization": (
        est_freeze_personalization,
        (CohortLabel.CT, CohortLabel.CF),
    ),
    "clustered_learning": (est_clustered_learning, (CohortLabel.CT, CohortLabel.CDT)),
}
