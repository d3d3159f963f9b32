"""Movie recommendation world: clustered beta preferences, Thompson sampling,
and an award-annotation treatment.

Users have fixed per-category watch probabilities (award vs standard) drawn
from a beta distribution around cluster centers. Each period the system
recommends one category via Thompson sampling on the user's served
watch/recommendation counts with a uniform prior, and the user watches with
probability ``u_s`` (standard) or ``min(1, u_aw + lift * treated)`` (award).

All randomness flows through common-random-number uniforms: Thompson draws
are inverse-CDF transforms of per-(user, period) uniforms, so counterfactual
arms that share a seed share their luck draw for draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaincinv

from .causal import ActionRecord, BehaviorWorld, PreferenceState, SystemState

AWARD, STANDARD = 0, 1
CATEGORY_NAMES = ("aw", "s")

_POPULATION_SALT = 0x90F
_THOMPSON_SALT = 0x7505
_CLUSTER_SALT = 0xC111


@dataclass
class MoviePrefs:
    """Per-user category watch probabilities with their generative clusters."""

    u: np.ndarray  # (n, 2): columns AWARD, STANDARD
    cluster_ids: np.ndarray  # (n,)
    centers: np.ndarray  # (K, 2), post-shift

    @property
    def n(self) -> int:
        return self.u.shape[0]


@dataclass
class CategoryCounts:
    """Watches and recommendations per category for one serving unit."""

    watches: np.ndarray  # (2,)
    recommendations: np.ndarray  # (2,)

    def __post_init__(self) -> None:
        self.watches = np.asarray(self.watches, dtype=float)
        self.recommendations = np.asarray(self.recommendations, dtype=float)
        if np.any(self.watches < 0) or np.any(self.watches > self.recommendations):
            raise ValueError("watch counts must satisfy 0 <= watches <= recommendations")


def beta_params(mean: float, shape_sum: float) -> tuple[float, float]:
    """(alpha, beta) for a beta distribution given its mean and alpha+beta."""
    return mean * shape_sum, (1.0 - mean) * shape_sum


def sample_population(
    n: int,
    clusters: int,
    target_mean: float = 0.25,
    seed: int = 0,
) -> MoviePrefs:
    """Draw a clustered preference population.

    Cluster centers are uniform on [0.05, 0.5]^2, then every coordinate is
    shifted by the gap between ``target_mean`` and the per-coordinate center
    mean so the population-average watch rate per category lands on target.
    User preferences are beta around their cluster center with shape-parameter
    sum 100 / (1 - center).
    """
    if n % clusters != 0:
        raise ValueError(f"population {n} not divisible by cluster count {clusters}")
    rng = np.random.default_rng([seed, _POPULATION_SALT])
    centers = rng.uniform(0.05, 0.5, size=(clusters, 2))
    centers = centers + (target_mean - centers.mean(axis=0))
    if np.any(centers <= 0.01) or np.any(centers >= 0.99):
        raise ValueError("center shift pushed a cluster center out of (0.01, 0.99)")
    cluster_ids = np.repeat(np.arange(clusters), n // clusters)
    mu = centers[cluster_ids]  # (n, 2)
    nu = 100.0 / (1.0 - mu)
    u = rng.beta(mu * nu, (1.0 - mu) * nu)
    return MoviePrefs(u=u, cluster_ids=cluster_ids, centers=centers)


def watch_probability(
    prefs: MoviePrefs, user: int, category: int, treated: int, lift: float = 0.5
) -> float:
    """Watch probability for one user/category under the given current arm."""
    if category == STANDARD:
        return float(prefs.u[user, STANDARD])
    if category != AWARD:
        raise ValueError(f"unknown category {category}")
    return float(min(1.0, prefs.u[user, AWARD] + lift * treated))


def _thompson_samples(
    watches: np.ndarray, recommendations: np.ndarray, uniforms: np.ndarray
) -> np.ndarray:
    """Inverse-CDF beta(1 + watches, 1 + misses) samples from given uniforms."""
    a = 1.0 + watches
    b = 1.0 + (recommendations - watches)
    return betaincinv(a, b, uniforms)


def thompson_recommend(counts: CategoryCounts, seed: int) -> int:
    """One Thompson-sampling category draw with a uniform prior; ties go to AWARD."""
    u = np.random.default_rng([seed, _THOMPSON_SALT]).random(2)
    samples = _thompson_samples(counts.watches, counts.recommendations, u)
    return AWARD if samples[AWARD] >= samples[STANDARD] else STANDARD


@dataclass
class MovieActions(ActionRecord):
    codes: np.ndarray  # category * 2 + watched
    category: np.ndarray
    watched: np.ndarray


class MovieWorld(BehaviorWorld):
    """The recommender simulation as a pluggable behavior world.

    Features are [watches_aw, recs_aw, watches_s, recs_s]; preferences are
    constant unless a learning shift is configured (treated exposure raising
    the award preference with saturation), which exists to exercise
    user-learning scenarios and separability diagnostics.
    """

    n_streams = 3  # Thompson uniform per category + watch uniform
    feature_dim = 4

    def __init__(
        self,
        prefs: MoviePrefs,
        lift: float = 0.5,
        learn_lift: float = 0.0,
        learn_rate: float = 0.1,
    ):
        if lift < 0:
            raise ValueError("annotation lift must be >= 0")
        self.prefs = prefs
        self.n = prefs.n
        self.lift = float(lift)
        self.learn_lift = float(learn_lift)
        self.learn_rate = float(learn_rate)

    @property
    def cluster_ids(self) -> np.ndarray:
        return self.prefs.cluster_ids

    def default_features(self, users: np.ndarray) -> np.ndarray:
        return np.zeros((len(users), self.feature_dim))

    def preference_state(self, users, history, t) -> PreferenceState:
        users = np.asarray(users)
        u = self.prefs.u[users].copy()
        if self.learn_lift != 0.0:
            exposure = np.asarray(history, dtype=float).sum(axis=1)
            shift = self.learn_lift * (1.0 - np.exp(-self.learn_rate * exposure))
            u[:, AWARD] = np.minimum(1.0, u[:, AWARD] + shift)
        return PreferenceState(values=u, users=users)

    def choose(self, state: SystemState, prefs: PreferenceState, uniforms, t):
        feats = state.personalization
        s_aw = _thompson_samples(feats[:, 0], feats[:, 1], uniforms[:, 0])
        s_std = _thompson_samples(feats[:, 2], feats[:, 3], uniforms[:, 1])
        category = np.where(s_aw >= s_std, AWARD, STANDARD)
        u_eff = prefs.values
        p_watch = np.where(
            category == AWARD,
            np.minimum(1.0, u_eff[:, AWARD] + self.lift * state.treated),
            u_eff[:, STANDARD],
        )
        watched = (uniforms[:, 2] < p_watch).astype(np.int8)
        return MovieActions(
            codes=category * 2 + watched, category=category, watched=watched
        )

    def outcome(self, actions: MovieActions) -> np.ndarray:
        return actions.watched.astype(float)

    def feature_update(self, actions: MovieActions, t: int) -> np.ndarray:
        m = len(actions.category)
        delta = np.zeros((m, self.feature_dim))
        is_aw = actions.category == AWARD
        delta[:, 0] = actions.watched * is_aw
        delta[:, 1] = is_aw
        delta[:, 2] = actions.watched * ~is_aw
        delta[:, 3] = ~is_aw
        return delta

    def action_labels(self, actions: MovieActions) -> list[str]:
        return [CATEGORY_NAMES[c] for c in actions.category]


def asymptotic_personalization_oracle(
    world: BehaviorWorld, horizon: int = 200, seed: int = 0, burn_in: int = 0
) -> float:
    """Long-run personalization effect by comparing two full rollouts.

    One simulation keeps every user treated throughout; the other keeps every
    user in control and flips them to treatment only in the final period. With
    common random numbers and no user learning, the final-period watch-rate
    difference is the converged personalization effect.
    """
    from .causal import burn_in_features, simulate_own_path

    users = np.arange(world.n)
    feats0 = burn_in_features(world, users, burn_in, seed)
    all_treated = np.ones((world.n, horizon), dtype=np.int8)
    late_switch = np.zeros((world.n, horizon), dtype=np.int8)
    late_switch[:, -1] = 1
    path_treated = simulate_own_path(
        world, users, all_treated, seed, rng_offset=burn_in, start_features=feats0
    )
    path_switch = simulate_own_path(
        world, users, late_switch, seed, rng_offset=burn_in, start_features=feats0
    )
    return float(
        path_treated.outcomes[-1].mean() - path_switch.outcomes[-1].mean()
    )


def centroid_clusters(features: np.ndarray, k: int, seed: int, n_iter: int = 50) -> np.ndarray:
    """Balanced centroid clustering into k equal-size groups.

    Standard Lloyd iterations followed by a greedy rebalancing pass that moves
    overflow points to the nearest under-full centroid; requires k to divide
    the number of points.
    """
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    if k > n:
        raise ValueError(f"cluster count {k} exceeds number of points {n}")
    if n % k != 0:
        raise ValueError(f"{n} points cannot be split into {k} equal clusters")
    rng = np.random.default_rng([seed, _CLUSTER_SALT])
    centers = features[rng.choice(n, size=k, replace=False)]
    labels = np.zeros(n, dtype=int)
    for _ in range(n_iter):
        dists = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if mask.any():
                centers[c] = features[mask].mean(axis=0)
    # Greedy rebalance to exactly n/k points per cluster: overfull clusters
    # give up their farthest members to the nearest centroid with room.
    size = n // k
    dists = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        while counts[c] > size:
            members = np.flatnonzero(labels == c)
            worst = members[dists[members, c].argmax()]
            open_clusters = np.flatnonzero(counts < size)
            target = open_clusters[dists[worst, open_clusters].argmin()]
            labels[worst] = target
            counts[c] -= 1
            counts[target] += 1
    return labels
