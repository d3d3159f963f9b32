"""Hand-specifiable worlds with fully tabulated potential outcomes.

These exist for exact verification: every counterfactual outcome is an
explicit table entry (or a tiny closed-form formula), so estimator
expectations can be checked against direct enumeration of the defining
effect formulas without trusting the simulation path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .causal import ActionRecord, BehaviorWorld, PreferenceState, SystemState


def history_mask(history: np.ndarray) -> np.ndarray:
    """Encode per-user 0/1 treatment histories as little-endian bitmask ints."""
    history = np.asarray(history, dtype=np.int64)
    if history.shape[1] == 0:
        return np.zeros(history.shape[0], dtype=np.int64)
    weights = 1 << np.arange(history.shape[1], dtype=np.int64)
    return history @ weights


@dataclass
class TabularActions(ActionRecord):
    codes: np.ndarray
    y: np.ndarray
    treated: np.ndarray


class TableWorld(BehaviorWorld):
    """Outcomes read from a table indexed by (user, t, current, pref hist, pers hist).

    The personalization "vector" is a single number carrying the bitmask of
    the user's past treatments along the action path, so serving another
    user's vector (or a frozen one) swaps in that path's bitmask. ``table``
    has shape (n, T, 2, 2**(T-1), 2**(T-1)).
    """

    n_streams = 0
    feature_dim = 1

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=float)
        if table.ndim != 5 or table.shape[2] != 2:
            raise ValueError("table must have shape (n, T, 2, 2^(T-1), 2^(T-1))")
        self.table = table
        self.n = table.shape[0]
        self.horizon = table.shape[1]

    def default_features(self, users: np.ndarray) -> np.ndarray:
        return np.zeros((len(users), 1))

    def preference_state(self, users, history, t) -> PreferenceState:
        return PreferenceState(values=history_mask(history), users=np.asarray(users))

    def choose(self, state: SystemState, prefs: PreferenceState, uniforms, t):
        pers_mask = state.personalization[:, 0].astype(np.int64)
        pref_mask = prefs.values.astype(np.int64)
        current = np.asarray(state.treated, dtype=np.int64)
        y = self.table[prefs.users, t - 1, current, pref_mask, pers_mask]
        return TabularActions(codes=pers_mask, y=y, treated=current)

    def outcome(self, actions: TabularActions) -> np.ndarray:
        return actions.y

    def feature_update(self, actions: TabularActions, t: int) -> np.ndarray:
        return (actions.treated.astype(float) * float(1 << (t - 1))).reshape(-1, 1)

    def lookup(self, user: int, t: int, current: int, pref_mask: int, pers_mask: int) -> float:
        """Direct table access, the independent oracle side of every check."""
        return float(self.table[user, t - 1, current, pref_mask, pers_mask])


def random_table_world(
    n: int, horizon: int, seed: int, separable: bool = False
) -> TableWorld:
    """A seeded random TableWorld.

    With ``separable=True`` outcomes decompose as a(state side) + b(preference
    side), i.e. the preference-driven difference is identical across system
    states.
    """
    rng = np.random.default_rng([seed, 0x7AB1E])
    m = 1 << (horizon - 1)
    if separable:
        state_part = rng.normal(size=(n, horizon, 2, 1, m))
        pref_part = rng.normal(size=(n, horizon, 1, m, 1))
        table = state_part + pref_part
        table = np.broadcast_to(table, (n, horizon, 2, m, m)).copy()
    else:
        table = rng.normal(size=(n, horizon, 2, m, m))
    return TableWorld(table)


@dataclass
class LinearClusterActions(ActionRecord):
    codes: np.ndarray
    y: np.ndarray
    treated: np.ndarray


class LinearClusterWorld(BehaviorWorld):
    """Additively separable world whose personalization is a treated-period tally.

    Outcome: base + direct * current + state_coef * served_feature +
    pref_coef * (# of own treated past periods). The feature contribution per
    period is simply the treatment bit, so cluster-aggregated serving sums
    co-members' treated periods. Separability holds by construction, which is
    the regime where the clustered design's learning estimator is meaningful.
    """

    n_streams = 0
    feature_dim = 1

    def __init__(
        self,
        base: np.ndarray,
        direct: np.ndarray,
        state_coef: np.ndarray,
        pref_coef: np.ndarray,
    ):
        self.base = np.asarray(base, dtype=float)
        self.direct = np.asarray(direct, dtype=float)
        self.state_coef = np.asarray(state_coef, dtype=float)
        self.pref_coef = np.asarray(pref_coef, dtype=float)
        self.n = self.base.shape[0]
        self.horizon = self.base.shape[1]

    @classmethod
    def random(cls, n: int, horizon: int, seed: int) -> "LinearClusterWorld":
        rng = np.random.default_rng([seed, 0xC1A5])
        return cls(
            base=rng.normal(size=(n, horizon)),
            direct=rng.normal(size=(n, horizon)),
            state_coef=rng.normal(size=(n, horizon)),
            pref_coef=rng.normal(size=(n, horizon)),
        )

    def default_features(self, users: np.ndarray) -> np.ndarray:
        return np.zeros((len(users), 1))

    def preference_state(self, users, history, t) -> PreferenceState:
        history = np.asarray(history, dtype=float)
        return PreferenceState(values=history.sum(axis=1), users=np.asarray(users))

    def choose(self, state: SystemState, prefs: PreferenceState, uniforms, t):
        users = prefs.users
        current = np.asarray(state.treated, dtype=float)
        y = (
            self.base[users, t - 1]
            + self.direct[users, t - 1] * current
            + self.state_coef[users, t - 1] * state.personalization[:, 0]
            + self.pref_coef[users, t - 1] * prefs.values
        )
        return LinearClusterActions(
            codes=current.astype(np.int64), y=y, treated=current
        )

    def outcome(self, actions: LinearClusterActions) -> np.ndarray:
        return actions.y

    def feature_update(self, actions: LinearClusterActions, t: int) -> np.ndarray:
        return actions.treated.reshape(-1, 1).astype(float)

    def outcome_at(
        self, user: int, t: int, current: int, served_feature: float, own_treated: float
    ) -> float:
        """Closed-form outcome, used by enumeration oracles."""
        return float(
            self.base[user, t - 1]
            + self.direct[user, t - 1] * current
            + self.state_coef[user, t - 1] * served_feature
            + self.pref_coef[user, t - 1] * own_treated
        )
