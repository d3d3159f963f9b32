"""Potential-outcomes core: behavior worlds and exact counterfactual effect oracles.

A :class:`BehaviorWorld` describes how a population of users interacts with a
personalized system, period by period: preferences evolve with the user's own
treatment history, a personalization vector evolves with the user's action
history, and outcomes are a deterministic function of the action taken given
(system state, preferences, common random numbers).

Because every random draw is keyed by ``(seed, period, user)`` and shared
across counterfactual arms, the four effect series (total, user learning,
personalization, direct) computed by :func:`effect_series_oracle` telescope
exactly: ``total == user_learning + personalization + direct`` per draw, not
just in expectation.
"""

from __future__ import annotations

import functools
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np


class EffectKind(Enum):
    """The four dynamic treatment-effect components."""

    TOTAL = "total"
    USER_LEARNING = "user_learning"
    PERSONALIZATION = "personalization"
    DIRECT = "direct"


@dataclass
class EffectSeries:
    """A per-period sequence of effect values (estimates or exact truths).

    ``stderr`` is None for exact oracle series.
    """

    kind: EffectKind
    values: np.ndarray
    stderr: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
            if self.stderr.shape != self.values.shape:
                raise ValueError(
                    f"stderr length {self.stderr.shape} != values length {self.values.shape}"
                )

    @property
    def horizon(self) -> int:
        return len(self.values)


@dataclass
class PreferenceState:
    """Per-user preference encoding at one period.

    ``users`` holds each row's user index, which doubles as the identifier
    of that user's random stream: conditional on the preference values and
    the per-(user, period) uniforms, the chosen action is deterministic.
    """

    values: np.ndarray
    users: np.ndarray


@dataclass
class SystemState:
    """What the system shows: current treatment arm plus the served vector."""

    treated: np.ndarray
    personalization: np.ndarray


class ActionRecord:
    """Base class for world-specific per-period action data.

    Subclasses carry whatever the world needs to derive outcomes and feature
    updates; ``codes`` is a compact integer encoding for panel logs.
    """

    codes: np.ndarray


@functools.lru_cache(maxsize=256)
def _uniform_block(seed: int, period: int, n: int, k: int) -> np.ndarray:
    """Common random numbers for one period: an (n, k) block keyed by (seed, period).

    Row i is user i's stream for the period, identical in every counterfactual
    arm and independent of evaluation order.
    """
    if k == 0:
        return np.zeros((n, 0))
    block = np.random.default_rng([seed, period]).random((n, k))
    block.setflags(write=False)
    return block


class BehaviorWorld(ABC):
    """Pluggable user/system model.

    Implementors provide preference evolution, the personalization update
    rule, and the choice/outcome maps. All operations are vectorized over an
    arbitrary subset of users so that engines and oracles can evaluate
    sub-populations (e.g. a single cluster) with identical randomness.
    """

    n: int
    feature_dim: int
    n_streams: int = 0

    @abstractmethod
    def default_features(self, users: np.ndarray) -> np.ndarray:
        """Personalization vector for an empty action history (the global default)."""

    @abstractmethod
    def preference_state(
        self, users: np.ndarray, history: np.ndarray, t: int
    ) -> PreferenceState:
        """Preferences at period t given each user's (t-1)-length treatment history."""

    @abstractmethod
    def choose(
        self,
        state: SystemState,
        prefs: PreferenceState,
        uniforms: np.ndarray,
        t: int,
    ) -> ActionRecord:
        """Deterministic action given (system state, preferences, uniforms)."""

    @abstractmethod
    def outcome(self, actions: ActionRecord) -> np.ndarray:
        """Scalar outcome per user, a deterministic function of the action."""

    @abstractmethod
    def feature_update(self, actions: ActionRecord, t: int) -> np.ndarray:
        """Per-user additive personalization-feature contribution from this period."""

    def system(self, treated: np.ndarray, personalization: np.ndarray) -> SystemState:
        """Combine the current arm with a served personalization vector."""
        treated = np.asarray(treated, dtype=np.int8)
        return SystemState(treated=treated, personalization=personalization)

    def uniforms(self, seed: int, period: int, users: np.ndarray) -> np.ndarray:
        """The (len(users), n_streams) slice of this period's common random numbers."""
        return _uniform_block(int(seed), int(period), self.n, self.n_streams)[users]

    def action_labels(self, actions: ActionRecord) -> list[str]:
        """Human-readable action codes for CSV logs."""
        return [str(c) for c in actions.codes]


@dataclass
class PathResult:
    """One arm's rollout: feature vectors entering each period plus realized outcomes.

    ``features_before[t - 1]`` is the served vector at the start of period t
    (t = 1..T); ``features_before[T]`` is the end state.
    """

    features_before: np.ndarray  # (T + 1, m, d)
    outcomes: np.ndarray  # (T, m)


def simulate_own_path(
    world: BehaviorWorld,
    users: np.ndarray,
    w_path: np.ndarray,
    seed: int,
    rng_offset: int = 0,
    start_features: Optional[np.ndarray] = None,
) -> PathResult:
    """Roll a subset of users forward under a fixed per-user treatment path.

    Personalization is the user's own evolving vector; uniforms for period t
    come from stream key ``rng_offset + t``.
    """
    users = np.asarray(users)
    w_path = np.asarray(w_path, dtype=np.int8)
    m, horizon = w_path.shape
    if m != len(users):
        raise ValueError("w_path rows must match number of users")
    feats = (
        world.default_features(users).copy()
        if start_features is None
        else start_features.copy()
    )
    features_before = np.empty((horizon + 1, m, world.feature_dim))
    outcomes = np.empty((horizon, m))
    for t in range(1, horizon + 1):
        features_before[t - 1] = feats
        prefs = world.preference_state(users, w_path[:, : t - 1], t)
        state = world.system(w_path[:, t - 1], feats)
        u = world.uniforms(seed, rng_offset + t, users)
        actions = world.choose(state, prefs, u, t)
        outcomes[t - 1] = world.outcome(actions)
        feats = feats + world.feature_update(actions, t)
    features_before[horizon] = feats
    return PathResult(features_before=features_before, outcomes=outcomes)


def burn_in_features(
    world: BehaviorWorld, users: np.ndarray, burn_in: int, seed: int
) -> np.ndarray:
    """Features after ``burn_in`` all-control periods (stream keys 1..burn_in)."""
    users = np.asarray(users)
    if burn_in == 0:
        return world.default_features(users).copy()
    w = np.zeros((len(users), burn_in), dtype=np.int8)
    return simulate_own_path(world, users, w, seed, rng_offset=0).features_before[-1]


def _validate_history(history: np.ndarray, t: int, name: str) -> np.ndarray:
    history = np.asarray(history, dtype=np.int8)
    if history.ndim != 1 or len(history) != t - 1:
        raise ValueError(f"{name} must have length t-1={t - 1}, got {history.shape}")
    if history.size and not np.isin(history, (0, 1)).all():
        raise ValueError(f"{name} entries must be 0 or 1")
    return history


def potential_outcome(
    world: BehaviorWorld,
    user: int,
    t: int,
    current: int,
    history: np.ndarray,
    personalization_history: np.ndarray,
    seed: int,
    burn_in: int = 0,
) -> float:
    """Counterfactual outcome Y at period t with independently chosen mediator paths.

    Preferences are evolved under ``history`` while the personalization vector
    is the one the user would carry after re-simulating their action path
    under ``personalization_history``. Passing the same array twice gives the
    ordinary potential outcome; mixed arguments give the cross terms that
    define the learning and personalization effects.
    """
    if t < 1:
        raise ValueError(f"period must be >= 1, got {t}")
    if not 0 <= user < world.n:
        raise ValueError(f"user {user} out of range for population {world.n}")
    history = _validate_history(history, t, "history")
    pers_history = _validate_history(
        personalization_history, t, "personalization_history"
    )
    users = np.array([user])
    feats0 = burn_in_features(world, users, burn_in, seed)
    if t > 1:
        path = simulate_own_path(
            world,
            users,
            pers_history.reshape(1, -1),
            seed,
            rng_offset=burn_in,
            start_features=feats0,
        )
        feats = path.features_before[-1]
    else:
        feats = feats0
    prefs = world.preference_state(users, history.reshape(1, -1), t)
    state = world.system(np.array([current]), feats)
    u = world.uniforms(seed, burn_in + t, users)
    actions = world.choose(state, prefs, u, t)
    return float(world.outcome(actions)[0])


def oracle_suite(
    world: BehaviorWorld, horizon: int, seed: int, burn_in: int = 0
) -> dict[EffectKind, EffectSeries]:
    """All four exact population effect series in one pass.

    Runs the all-treated and all-control action paths once each (after a
    shared control burn-in), then evaluates the two cross corners per period
    with the same uniforms, so the decomposition identity holds exactly.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    users = np.arange(world.n)
    feats0 = burn_in_features(world, users, burn_in, seed)
    ones = np.ones((world.n, horizon), dtype=np.int8)
    zeros = np.zeros((world.n, horizon), dtype=np.int8)
    path1 = simulate_own_path(
        world, users, ones, seed, rng_offset=burn_in, start_features=feats0
    )
    path0 = simulate_own_path(
        world, users, zeros, seed, rng_offset=burn_in, start_features=feats0
    )
    total = np.empty(horizon)
    learning = np.empty(horizon)
    personalization = np.empty(horizon)
    direct = np.empty(horizon)
    current_one = np.ones(world.n, dtype=np.int8)
    for t in range(1, horizon + 1):
        prefs1 = world.preference_state(users, ones[:, : t - 1], t)
        prefs0 = world.preference_state(users, zeros[:, : t - 1], t)
        u = world.uniforms(seed, burn_in + t, users)
        feats_ctrl = path0.features_before[t - 1]
        state_ctrl_treated = world.system(current_one, feats_ctrl)
        y_a = path1.outcomes[t - 1]
        y_b = world.outcome(world.choose(state_ctrl_treated, prefs1, u, t))
        y_c = world.outcome(world.choose(state_ctrl_treated, prefs0, u, t))
        y_d = path0.outcomes[t - 1]
        total[t - 1] = np.mean(y_a - y_d)
        personalization[t - 1] = np.mean(y_a - y_b)
        learning[t - 1] = np.mean(y_b - y_c)
        direct[t - 1] = np.mean(y_c - y_d)
    return {
        EffectKind.TOTAL: EffectSeries(EffectKind.TOTAL, total),
        EffectKind.USER_LEARNING: EffectSeries(EffectKind.USER_LEARNING, learning),
        EffectKind.PERSONALIZATION: EffectSeries(
            EffectKind.PERSONALIZATION, personalization
        ),
        EffectKind.DIRECT: EffectSeries(EffectKind.DIRECT, direct),
    }


def effect_series_oracle(
    world: BehaviorWorld,
    horizon: int,
    kind: EffectKind,
    seed: int,
    burn_in: int = 0,
) -> EffectSeries:
    """Exact population-average effect series of one kind."""
    return oracle_suite(world, horizon, seed, burn_in=burn_in)[kind]


def decomposition_residual(
    total: EffectSeries,
    u: EffectSeries,
    p: EffectSeries,
    s: EffectSeries,
) -> float:
    """max over t of |total - (u + p + s)|; zero when all series share one seed."""
    horizons = {total.horizon, u.horizon, p.horizon, s.horizon}
    if len(horizons) != 1:
        raise ValueError(f"series horizons differ: {sorted(horizons)}")
    return float(np.max(np.abs(total.values - (u.values + p.values + s.values))))


def separability_gap(
    world: BehaviorWorld,
    t: int,
    states: tuple[SystemState, SystemState],
    seed: int,
    burn_in: int = 0,
) -> float:
    """Population-average violation of additive separability on a state pair.

    Computes mean_i |[Y_i(s, U(1)) - Y_i(s, U(0))] - [Y_i(s', U(1)) - Y_i(s', U(0))]|;
    zero exactly when the preference-driven outcome difference does not depend
    on which of the two system states is shown.
    """
    if t < 1:
        raise ValueError(f"period must be >= 1, got {t}")
    users = np.arange(world.n)
    ones = np.ones((world.n, t - 1), dtype=np.int8)
    zeros = np.zeros((world.n, t - 1), dtype=np.int8)
    prefs1 = world.preference_state(users, ones, t)
    prefs0 = world.preference_state(users, zeros, t)
    u = world.uniforms(seed, burn_in + t, users)

    def _broadcast(state: SystemState) -> SystemState:
        treated = np.broadcast_to(
            np.asarray(state.treated, dtype=np.int8), (world.n,)
        )
        pvec = np.broadcast_to(
            np.atleast_2d(state.personalization), (world.n, world.feature_dim)
        )
        return SystemState(treated=treated, personalization=pvec)

    diffs = []
    for state in states:
        st = _broadcast(state)
        y1 = world.outcome(world.choose(st, prefs1, u, t))
        y0 = world.outcome(world.choose(st, prefs0, u, t))
        diffs.append(y1 - y0)
    return float(np.mean(np.abs(diffs[0] - diffs[1])))
