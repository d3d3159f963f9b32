"""Schedule executor: runs a cohort schedule against a behavior world.

Serving within a period always reads the feature store as it stood at the
start of the period; all feature updates land in one batch at period end, so
user processing order can never leak into results. Frozen and mirrored users
keep accumulating their own shadow history for diagnostics, but only the
directive-selected vector is ever served.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .causal import BehaviorWorld
from .designs import CohortLabel, CohortSchedule, DirectiveKind, _LABEL_CODE


class EngineError(ValueError):
    """Raised when a schedule cannot be executed against a store/world."""


@dataclass
class FeatureStore:
    """Personalization state: per-user contribution logs over a fixed base.

    A user's own vector is ``base + contrib``; cluster vectors add member
    contributions over the served user's base, which makes leave-one-out
    serving an exact subtraction rather than an approximation.
    """

    base: np.ndarray  # (n, d)
    contrib: np.ndarray  # (n, d)
    frozen: Optional[np.ndarray] = None  # (n, d) snapshot at end of burn-in
    pre_features: Optional[np.ndarray] = None  # (n, d) matching features

    @property
    def n(self) -> int:
        return self.base.shape[0]

    def own_vectors(self) -> np.ndarray:
        return self.base + self.contrib

    def copy(self) -> "FeatureStore":
        return FeatureStore(
            base=self.base.copy(),
            contrib=self.contrib.copy(),
            frozen=None if self.frozen is None else self.frozen.copy(),
            pre_features=None
            if self.pre_features is None
            else self.pre_features.copy(),
        )


def run_burn_in(world: BehaviorWorld, periods: int, seed: int) -> FeatureStore:
    """Simulate ``periods`` all-control periods with own-history serving.

    Returns the store whose end state seeds the experiment: the own vectors
    double as pre-experiment action summaries (for matching) and as the
    frozen snapshot (for freeze cohorts). Stream keys 1..periods are consumed,
    so the experiment must offset its keys by ``periods``.
    """
    if periods < 0:
        raise EngineError("burn-in length must be >= 0")
    users = np.arange(world.n)
    base = world.default_features(users)
    store = FeatureStore(base=base, contrib=np.zeros_like(base))
    w = np.zeros(world.n, dtype=np.int8)
    empty = np.zeros((world.n, 0), dtype=np.int8)
    for t in range(1, periods + 1):
        history = empty if t == 1 else np.zeros((world.n, t - 1), dtype=np.int8)
        prefs = world.preference_state(users, history, t)
        state = world.system(w, store.own_vectors())
        u = world.uniforms(seed, t, users)
        actions = world.choose(state, prefs, u, t)
        store.contrib += world.feature_update(actions, t)
    store.frozen = store.own_vectors().copy()
    store.pre_features = store.own_vectors().copy()
    return store


def resolve_served_vectors(
    store: FeatureStore, schedule: CohortSchedule, t: int
) -> np.ndarray:
    """Each user's served personalization vector at the start of period t."""
    own = store.own_vectors()
    served = own.copy()
    dk = schedule.directive_kind[:, t - 1]
    da = schedule.directive_arg[:, t - 1]

    frozen_rows = dk == DirectiveKind.FROZEN
    if frozen_rows.any():
        if store.frozen is None:
            raise EngineError("schedule freezes features but store has no snapshot")
        served[frozen_rows] = store.frozen[frozen_rows]

    mirror_rows = np.flatnonzero(dk == DirectiveKind.MIRROR)
    if len(mirror_rows):
        targets = da[mirror_rows]
        if np.any(targets < 0) or np.any(targets >= store.n):
            raise EngineError(f"mirror directive references missing match at t={t}")
        served[mirror_rows] = own[targets]

    cluster_rows = np.flatnonzero(dk == DirectiveKind.CLUSTER)
    if len(cluster_rows):
        cluster_ids = da[cluster_rows]
        if np.any(cluster_ids < 0):
            raise EngineError(f"cluster directive missing cluster id at t={t}")
        k = int(cluster_ids.max()) + 1
        sums = np.zeros((k, store.contrib.shape[1]))
        np.add.at(sums, cluster_ids, store.contrib[cluster_rows])
        served[cluster_rows] = store.base[cluster_rows] + sums[cluster_ids]
        if schedule.leave_one_out:
            served[cluster_rows] -= store.contrib[cluster_rows]

    global_rows = dk == DirectiveKind.GLOBAL_CONSTANT
    if global_rows.any():
        served[global_rows] = store.base[global_rows]
    return served


@dataclass
class Panel:
    """The observed record of one experiment run."""

    g: np.ndarray  # (n, T) int8 cohort label codes
    day: np.ndarray  # (n,)
    w: np.ndarray  # (n, T) int8
    y: np.ndarray  # (n, T) float
    action: np.ndarray  # (n, T) int64 world-specific action codes
    action_label: np.ndarray  # (n, T) strings
    probs: dict[CohortLabel, float]
    kind: object  # DesignKind
    served: Optional[np.ndarray] = None  # (n, T, d) served vectors
    cluster_map: Optional[np.ndarray] = None
    leave_one_out: bool = False
    burn_in: int = 0

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def horizon(self) -> int:
        return self.g.shape[1]

    def members(self, label: CohortLabel, t: int) -> np.ndarray:
        return np.flatnonzero(self.g[:, t - 1] == _LABEL_CODE[label])

    def has_cohort(self, label: CohortLabel) -> bool:
        return bool((self.g == _LABEL_CODE[label]).any())


def run_experiment(
    world: BehaviorWorld,
    schedule: CohortSchedule,
    store: FeatureStore,
    seed: int,
    keep_served: bool = True,
) -> Panel:
    """Execute a schedule period by period and record the panel.

    The store is consumed as the starting state (burn-in output or a fresh
    default store); stream keys continue at ``schedule.burn_in + t``.
    """
    if schedule.n != world.n:
        raise EngineError(
            f"schedule population {schedule.n} != world population {world.n}"
        )
    if store.n != world.n:
        raise EngineError(f"store population {store.n} != world population {world.n}")
    store = store.copy()
    users = np.arange(world.n)
    horizon = schedule.horizon
    y = np.empty((world.n, horizon))
    action = np.empty((world.n, horizon), dtype=np.int64)
    action_label = np.empty((world.n, horizon), dtype="<U24")
    served_log = (
        np.empty((world.n, horizon, world.feature_dim)) if keep_served else None
    )
    for t in range(1, horizon + 1):
        served = resolve_served_vectors(store, schedule, t)
        prefs = world.preference_state(users, schedule.w[:, : t - 1], t)
        state = world.system(schedule.w[:, t - 1], served)
        u = world.uniforms(seed, schedule.burn_in + t, users)
        actions = world.choose(state, prefs, u, t)
        y[:, t - 1] = world.outcome(actions)
        action[:, t - 1] = actions.codes
        action_label[:, t - 1] = world.action_labels(actions)
        if keep_served:
            served_log[:, t - 1, :] = served
        store.contrib += world.feature_update(actions, t)
    return Panel(
        g=schedule.g.copy(),
        day=schedule.day.copy(),
        w=schedule.w.copy(),
        y=y,
        action=action,
        action_label=action_label,
        probs=dict(schedule.probs),
        kind=schedule.kind,
        served=served_log,
        cluster_map=None
        if schedule.cluster_map is None
        else schedule.cluster_map.copy(),
        leave_one_out=schedule.leave_one_out,
        burn_in=schedule.burn_in,
    )
