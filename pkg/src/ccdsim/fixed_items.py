"""Deterministic fixed-catalog worlds.

These small worlds make the personalization-bias mechanism visible with exact
numbers: outcomes are watch *propensities* rather than Bernoulli draws, and
the recommender ranks items by a running average of observed propensities
(seeded with each item's baseline rate). Everything is deterministic, so
estimator readouts can be asserted to a hair.

``two_movie_world`` reproduces the canonical spurious-positive-learning
story: an annotation lifts the award movie's watch rate for treated users,
the recommender learns this only along treated histories, and a long-treated
vs one-day-treated contrast reads the serving gap as user learning even
though preferences never move.

``in_house_studio_worlds`` builds one catalog where that readout is positive
and one where it is negative, with the outcome restricted to in-house titles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .causal import ActionRecord, BehaviorWorld, PreferenceState, SystemState


@dataclass(frozen=True)
class CatalogItem:
    name: str
    control_rate: float
    treated_rate: float
    award: bool = False
    in_house: bool = False


@dataclass
class SlateActions(ActionRecord):
    codes: np.ndarray  # slate encoded as a bitmask over item indices
    slate: np.ndarray  # (m, k) item indices, best first
    treated: np.ndarray
    y: np.ndarray


class FixedItemWorld(BehaviorWorld):
    """Catalog world with deterministic propensity outcomes.

    Features are per-item (propensity sum, observation count) pairs; each
    period the system logs every item's current propensity under that user's
    treatment (engagement signals are observed for shown and unshown items
    alike). Recommendation is the top-``slate_size`` items by estimated rate.

    outcome_metric:
      * ``"slate_mean"``: mean watch propensity over the served slate.
      * ``"in_house_rate"``: mean propensity over served in-house items
        (0 when none are shown).
    """

    n_streams = 0

    def __init__(
        self,
        n: int,
        items: list[CatalogItem],
        slate_size: int = 1,
        outcome_metric: str = "slate_mean",
        prior_strength: float = 1.0,
    ):
        if slate_size < 1 or slate_size > len(items):
            raise ValueError("slate_size must be in [1, number of items]")
        if outcome_metric not in ("slate_mean", "in_house_rate"):
            raise ValueError(f"unknown outcome_metric {outcome_metric!r}")
        self.n = n
        self.items = list(items)
        self.slate_size = slate_size
        self.outcome_metric = outcome_metric
        self.prior_strength = float(prior_strength)
        self.feature_dim = 2 * len(items)
        self._control = np.array([it.control_rate for it in items])
        self._treated = np.array(
            [it.treated_rate if it.award else it.control_rate for it in items]
        )
        self._in_house = np.array([it.in_house for it in items])

    def propensities(self, treated: np.ndarray) -> np.ndarray:
        """(m, n_items) watch propensities under each user's current arm."""
        treated = np.asarray(treated, dtype=bool).reshape(-1, 1)
        return np.where(treated, self._treated, self._control)

    def default_features(self, users: np.ndarray) -> np.ndarray:
        feats = np.empty((len(users), self.feature_dim))
        feats[:, 0::2] = self._control * self.prior_strength
        feats[:, 1::2] = self.prior_strength
        return feats

    def preference_state(self, users, history, t) -> PreferenceState:
        # No user learning in these worlds: preferences are the fixed rates.
        return PreferenceState(
            values=np.zeros(len(users)), users=np.asarray(users)
        )

    def choose(self, state: SystemState, prefs: PreferenceState, uniforms, t):
        sums = state.personalization[:, 0::2]
        counts = state.personalization[:, 1::2]
        estimates = sums / counts
        # Stable sort keeps lower item index on ties.
        order = np.argsort(-estimates, axis=1, kind="stable")
        slate = order[:, : self.slate_size]
        p = self.propensities(state.treated)
        shown_p = np.take_along_axis(p, slate, axis=1)
        if self.outcome_metric == "slate_mean":
            y = shown_p.mean(axis=1)
        else:
            shown_in_house = self._in_house[slate]
            n_ih = shown_in_house.sum(axis=1)
            y = np.where(
                n_ih > 0, (shown_p * shown_in_house).sum(axis=1) / np.maximum(n_ih, 1), 0.0
            )
        codes = (1 << slate).sum(axis=1)
        return SlateActions(
            codes=codes,
            slate=slate,
            treated=np.asarray(state.treated, dtype=np.int8),
            y=y,
        )

    def outcome(self, actions: SlateActions) -> np.ndarray:
        return actions.y

    def feature_update(self, actions: SlateActions, t: int) -> np.ndarray:
        delta = np.empty((len(actions.treated), self.feature_dim))
        delta[:, 0::2] = self.propensities(actions.treated)
        delta[:, 1::2] = 1.0
        return delta

    def action_labels(self, actions: SlateActions) -> list[str]:
        return [
            "|".join(self.items[j].name for j in row) for row in actions.slate
        ]


def two_movie_world(n: int = 200) -> FixedItemWorld:
    """Award-annotation demo: movie A watched at 5% control / 20% treated,
    movie B at 10% regardless; one recommendation per period."""
    items = [
        CatalogItem("A", control_rate=0.05, treated_rate=0.20, award=True),
        CatalogItem("B", control_rate=0.10, treated_rate=0.10),
    ]
    return FixedItemWorld(n, items, slate_size=1, outcome_metric="slate_mean")


def in_house_studio_worlds(n: int = 200) -> tuple[FixedItemWorld, FixedItemWorld]:
    """Two in-house catalog worlds: the first drives the naive long-vs-short
    treated contrast positive, the second negative, with no user learning in
    either. Outcomes are per-impression in-house watch rates on a 2-slot slate.
    """
    positive = FixedItemWorld(
        n,
        [
            CatalogItem("house_std", 0.10, 0.10, in_house=True),
            CatalogItem("external", 0.15, 0.15),
            CatalogItem("house_award", 0.05, 0.40, award=True, in_house=True),
        ],
        slate_size=2,
        outcome_metric="in_house_rate",
    )
    negative = FixedItemWorld(
        n,
        [
            CatalogItem("house_std", 0.30, 0.30, in_house=True),
            CatalogItem("external", 0.15, 0.15),
            CatalogItem("house_award", 0.05, 0.20, award=True, in_house=True),
        ],
        slate_size=2,
        outcome_metric="in_house_rate",
    )
    return positive, negative
