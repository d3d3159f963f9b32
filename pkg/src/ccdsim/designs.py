"""Cohort schedule generators for the five experimental designs.

A schedule fixes, for every user and period, the cohort label, the treatment
bit, and a personalization directive telling the engine whose feature vector
to serve. Cohort splits use exact counts from a seeded permutation so the
declared assignment probabilities used by inverse-probability estimators are
exact; the one-day-treated (CDT) samples are drawn without replacement across
the whole experiment so nobody is one-day-treated twice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Mapping, Optional

import numpy as np


class DesignError(ValueError):
    """Raised when a design spec is internally inconsistent or infeasible."""


class DesignKind(Enum):
    AB = "ab"
    CCD = "ccd"
    CCD_SWITCH = "ccd_switch"
    CCD_FREEZE = "ccd_freeze"
    CLUSTERED_CCD = "clustered_ccd"


class CohortLabel(Enum):
    T = "T"
    C = "C"
    CT = "CT"
    CC = "CC"
    CDT = "CDT"
    CDC = "CDC"
    CS = "CS"
    CF = "CF"


# Labels whose members carry w=1 at every period.
ALWAYS_TREATED = (CohortLabel.T, CohortLabel.CT, CohortLabel.CS, CohortLabel.CF)

_LABEL_CODE = {label: i for i, label in enumerate(CohortLabel)}
_CODE_LABEL = {i: label for label, i in _LABEL_CODE.items()}


class DirectiveKind(IntEnum):
    OWN_HISTORY = 0
    FROZEN = 1
    MIRROR = 2
    CLUSTER = 3
    GLOBAL_CONSTANT = 4


_DIRECTIVE_NAMES = {
    DirectiveKind.OWN_HISTORY: "own",
    DirectiveKind.FROZEN: "frozen",
    DirectiveKind.MIRROR: "mirror",
    DirectiveKind.CLUSTER: "cluster",
    DirectiveKind.GLOBAL_CONSTANT: "global",
}
_DIRECTIVE_FROM_NAME = {v: k for k, v in _DIRECTIVE_NAMES.items()}


class MatchMode(Enum):
    NEAREST_NEIGHBOR = "nearest_neighbor"
    RANDOM_WITHIN_CLUSTER = "random_within_cluster"


_SPLIT_SALT = 0xA551
_MATCH_SALT = 0x3A7C
_CLUSTER_GEN_SALT = 0xBA1A


@dataclass(frozen=True)
class DesignSpec:
    """Parameters of one experiment design.

    ``fractions`` keys:
      * ``treated``: fraction treated (AB: of everyone; CCD family: of the
        cookie cohort).
      * ``cookie``: fraction of users in the long-term cookie cohort (CCD family).
      * ``switch`` / ``freeze``: fraction of users in the CS / CF cohort.
      * ``cdt_daily``: absolute number of one-day-treated users per period.
    Users not in any long-term cohort form the cookie-day pool.
    """

    kind: DesignKind
    n: int
    horizon: int
    fractions: Mapping[str, float]
    cluster_count: Optional[int] = None
    leave_one_out: bool = False
    burn_in: int = 0
    seed: int = 0

    def counts(self) -> dict[str, int]:
        """Exact cohort sizes implied by the fractions."""
        if self.kind == DesignKind.AB:
            return {}
        f = dict(self.fractions)
        n_c = int(round(f.get("cookie", 0.0) * self.n))
        n_ct = int(round(f.get("treated", 0.0) * n_c))
        n_cc = n_c - n_ct
        n_cs = (
            int(round(f.get("switch", 0.0) * self.n))
            if self.kind == DesignKind.CCD_SWITCH
            else 0
        )
        n_cf = (
            int(round(f.get("freeze", 0.0) * self.n))
            if self.kind == DesignKind.CCD_FREEZE
            else 0
        )
        n_cd = self.n - n_c - n_cs - n_cf
        cdt_daily = int(f.get("cdt_daily", 0))
        return {
            "ct": n_ct,
            "cc": n_cc,
            "cs": n_cs,
            "cf": n_cf,
            "cd": n_cd,
            "cdt_daily": cdt_daily,
        }

    def validate(self) -> None:
        if self.n < 1:
            raise DesignError("population size must be >= 1")
        if self.horizon < 1:
            raise DesignError("horizon must be >= 1")
        if self.kind == DesignKind.AB:
            frac = self.fractions.get("treated")
            if frac is None or not 0.0 < frac <= 1.0:
                raise DesignError(f"AB treated fraction must be in (0, 1], got {frac}")
            return
        for key, value in self.fractions.items():
            if key == "cdt_daily":
                continue
            if not 0.0 <= value <= 1.0:
                raise DesignError(f"fraction {key}={value} outside [0, 1]")
        c = self.counts()
        if min(c["ct"], c["cc"], c["cs"], c["cf"], c["cd"]) < 0:
            raise DesignError(f"cohort fractions overcommit the population: {c}")
        if c["cdt_daily"] < 1:
            raise DesignError("cdt_daily must be a positive count")
        if c["cdt_daily"] * self.horizon > c["cd"]:
            raise DesignError(
                f"cookie-day pool exhausted: {c['cdt_daily']}/day x {self.horizon} "
                f"periods needs {c['cdt_daily'] * self.horizon} users, pool has {c['cd']}"
            )
        if self.kind == DesignKind.CCD_FREEZE and self.burn_in < 1:
            raise DesignError("freeze design needs burn_in >= 1 for the snapshot")
        if self.kind == DesignKind.CLUSTERED_CCD:
            if not self.cluster_count or self.cluster_count < 1:
                raise DesignError("clustered design needs cluster_count >= 1")
            if self.n % self.cluster_count != 0:
                raise DesignError(
                    f"cluster count {self.cluster_count} does not divide n={self.n}"
                )

    def probs(self) -> dict[CohortLabel, float]:
        """Declared per-period assignment probabilities (only labels with mass)."""
        if self.kind == DesignKind.AB:
            f = self.fractions["treated"]
            out = {CohortLabel.T: f}
            if f < 1.0:
                out[CohortLabel.C] = 1.0 - f
            return out
        c = self.counts()
        raw = {
            CohortLabel.CT: c["ct"] / self.n,
            CohortLabel.CC: c["cc"] / self.n,
            CohortLabel.CDT: c["cdt_daily"] / self.n,
            CohortLabel.CDC: (c["cd"] - c["cdt_daily"]) / self.n,
            CohortLabel.CS: c["cs"] / self.n,
            CohortLabel.CF: c["cf"] / self.n,
        }
        return {label: p for label, p in raw.items() if p > 0.0}


@dataclass
class CohortSchedule:
    """Per-user, per-period cohort labels, treatment bits, and serving directives."""

    kind: DesignKind
    g: np.ndarray  # (n, T) int8 label codes
    w: np.ndarray  # (n, T) int8 treatment bits
    day: np.ndarray  # (n,) scheduled one-day-treatment period, -1 if none
    directive_kind: np.ndarray  # (n, T) int8
    directive_arg: np.ndarray  # (n, T) int32 (match id / snapshot period / cluster id)
    probs: dict[CohortLabel, float]
    burn_in: int = 0
    leave_one_out: bool = False
    cluster_map: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def horizon(self) -> int:
        return self.g.shape[1]

    def labels(self) -> np.ndarray:
        """(n, T) array of label strings."""
        lut = np.array([label.value for label in CohortLabel])
        return lut[self.g]

    def members(self, label: CohortLabel, t: int) -> np.ndarray:
        """User indices carrying ``label`` at period t (1-based)."""
        return np.flatnonzero(self.g[:, t - 1] == _LABEL_CODE[label])

    def validate(self) -> None:
        code_treated = [_LABEL_CODE[label] for label in ALWAYS_TREATED]
        implied = np.isin(self.g, code_treated)
        cdt = self.g == _LABEL_CODE[CohortLabel.CDT]
        t_index = np.arange(1, self.horizon + 1)
        implied |= cdt & (self.day[:, None] == t_index[None, :])
        if not np.array_equal(self.w.astype(bool), implied):
            raise DesignError("treatment bits inconsistent with cohort labels")
        cd_codes = (_LABEL_CODE[CohortLabel.CDT], _LABEL_CODE[CohortLabel.CDC])
        in_cd = np.isin(self.g, cd_codes)
        if not (in_cd.all(axis=1) | (~in_cd).any(axis=1)).all():
            raise DesignError("cookie-day membership must be stable over time")
        if np.any(cdt.sum(axis=1) > 1):
            raise DesignError("a user appears one-day-treated on two different days")

    def with_global_constant_directives(self) -> "CohortSchedule":
        """The no-personalization variant: serve everyone the default vector."""
        kinds = np.full_like(self.directive_kind, DirectiveKind.GLOBAL_CONSTANT)
        args = np.full_like(self.directive_arg, -1)
        return replace(self, directive_kind=kinds, directive_arg=args)


def _empty_schedule(spec: DesignSpec) -> tuple[np.ndarray, ...]:
    n, horizon = spec.n, spec.horizon
    g = np.zeros((n, horizon), dtype=np.int8)
    w = np.zeros((n, horizon), dtype=np.int8)
    day = np.full(n, -1, dtype=np.int32)
    dk = np.full((n, horizon), DirectiveKind.OWN_HISTORY, dtype=np.int8)
    da = np.full((n, horizon), -1, dtype=np.int32)
    return g, w, day, dk, da


def assign_ab(spec: DesignSpec) -> CohortSchedule:
    """Independent Bernoulli treated/control split, constant over all periods."""
    if spec.kind != DesignKind.AB:
        raise DesignError(f"assign_ab got design kind {spec.kind}")
    spec.validate()
    g, w, day, dk, da = _empty_schedule(spec)
    rng = np.random.default_rng([spec.seed, _SPLIT_SALT])
    treated = rng.random(spec.n) < spec.fractions["treated"]
    g[treated] = _LABEL_CODE[CohortLabel.T]
    g[~treated] = _LABEL_CODE[CohortLabel.C]
    w[treated] = 1
    return CohortSchedule(
        kind=spec.kind, g=g, w=w, day=day, directive_kind=dk, directive_arg=da,
        probs=spec.probs(), burn_in=spec.burn_in,
    )


def _ccd_base(spec: DesignSpec) -> tuple[np.ndarray, ...]:
    """Shared CCD skeleton: permutation split plus daily CDT samples.

    Returns (g, w, day, dk, da, extra cohort slices) where extra slices are
    the CS or CF user arrays (possibly empty).
    """
    spec.validate()
    c = spec.counts()
    g, w, day, dk, da = _empty_schedule(spec)
    rng = np.random.default_rng([spec.seed, _SPLIT_SALT])
    perm = rng.permutation(spec.n)
    bounds = np.cumsum([c["ct"], c["cc"], c["cs"], c["cf"]])
    ct_users = perm[: bounds[0]]
    cc_users = perm[bounds[0] : bounds[1]]
    cs_users = perm[bounds[1] : bounds[2]]
    cf_users = perm[bounds[2] : bounds[3]]
    cd_users = perm[bounds[3] :]

    g[ct_users] = _LABEL_CODE[CohortLabel.CT]
    g[cc_users] = _LABEL_CODE[CohortLabel.CC]
    g[cs_users] = _LABEL_CODE[CohortLabel.CS]
    g[cf_users] = _LABEL_CODE[CohortLabel.CF]
    g[cd_users] = _LABEL_CODE[CohortLabel.CDC]
    for users in (ct_users, cs_users, cf_users):
        w[users] = 1

    s = c["cdt_daily"]
    # The permutation already randomizes the pool, so consecutive slices are a
    # uniform without-replacement day assignment.
    for t in range(1, spec.horizon + 1):
        sampled = cd_users[(t - 1) * s : t * s]
        g[sampled, t - 1] = _LABEL_CODE[CohortLabel.CDT]
        w[sampled, t - 1] = 1
        day[sampled] = t
    return g, w, day, dk, da, cs_users, cf_users


def assign_ccd(spec: DesignSpec) -> CohortSchedule:
    """Long-term treated/control cookies plus fresh one-day-treated samples."""
    if spec.kind != DesignKind.CCD:
        raise DesignError(f"assign_ccd got design kind {spec.kind}")
    g, w, day, dk, da, _, _ = _ccd_base(spec)
    return CohortSchedule(
        kind=spec.kind, g=g, w=w, day=day, directive_kind=dk, directive_arg=da,
        probs=spec.probs(), burn_in=spec.burn_in,
    )


def match_switch(
    pre_features: np.ndarray,
    cs_users: np.ndarray,
    cdt_users: np.ndarray,
    mode: MatchMode,
    cluster_map: Optional[np.ndarray] = None,
    seed: int = 0,
    salt: int = 0,
) -> dict[int, int]:
    """Map each switch-cohort user to a one-day-treated user to mirror.

    Nearest-neighbor matching minimizes Euclidean distance on pre-experiment
    feature vectors with ties broken toward the smallest user index; random
    within-cluster matching draws uniformly among same-cluster candidates,
    falling back to the full candidate set when the intersection is empty.
    """
    cs_users = np.asarray(cs_users)
    cdt_users = np.sort(np.asarray(cdt_users))
    if len(cdt_users) == 0:
        raise DesignError("cannot match: candidate set is empty")
    if mode == MatchMode.NEAREST_NEIGHBOR:
        diffs = pre_features[cs_users][:, None, :] - pre_features[cdt_users][None, :, :]
        d2 = (diffs**2).sum(axis=2)
        nearest = d2.argmin(axis=1)  # first minimum = smallest user index
        return {int(i): int(cdt_users[j]) for i, j in zip(cs_users, nearest)}
    if mode == MatchMode.RANDOM_WITHIN_CLUSTER:
        if cluster_map is None:
            raise DesignError("random-within-cluster matching needs a cluster map")
        rng = np.random.default_rng([seed, _MATCH_SALT, salt])
        out: dict[int, int] = {}
        for i in np.sort(cs_users):
            same = cdt_users[cluster_map[cdt_users] == cluster_map[i]]
            candidates = same if len(same) else cdt_users
            out[int(i)] = int(candidates[rng.integers(len(candidates))])
        return out
    raise DesignError(f"unknown match mode {mode}")


def assign_ccd_switch(
    spec: DesignSpec,
    pre_features: Optional[np.ndarray] = None,
    match_mode: MatchMode = MatchMode.NEAREST_NEIGHBOR,
    cluster_map: Optional[np.ndarray] = None,
) -> CohortSchedule:
    """CCD plus a switch cohort mirroring a matched one-day-treated user.

    The switch cohort is treated every period but served the matched user's
    personalization vector; matches are rebuilt each period because the
    one-day-treated sample changes daily.
    """
    if spec.kind != DesignKind.CCD_SWITCH:
        raise DesignError(f"assign_ccd_switch got design kind {spec.kind}")
    if match_mode == MatchMode.NEAREST_NEIGHBOR and pre_features is None:
        raise DesignError("nearest-neighbor matching needs pre-experiment features")
    g, w, day, dk, da, cs_users, _ = _ccd_base(spec)
    cdt_code = _LABEL_CODE[CohortLabel.CDT]
    for t in range(1, spec.horizon + 1):
        cdt_t = np.flatnonzero(g[:, t - 1] == cdt_code)
        if len(cdt_t) == 0:
            raise DesignError(f"no one-day-treated users at period {t}")
        matches = match_switch(
            pre_features, cs_users, cdt_t, match_mode,
            cluster_map=cluster_map, seed=spec.seed, salt=t,
        )
        for i, j in matches.items():
            dk[i, t - 1] = DirectiveKind.MIRROR
            da[i, t - 1] = j
    return CohortSchedule(
        kind=spec.kind, g=g, w=w, day=day, directive_kind=dk, directive_arg=da,
        probs=spec.probs(), burn_in=spec.burn_in,
    )


def assign_ccd_freeze(spec: DesignSpec) -> CohortSchedule:
    """CCD plus a treated cohort served its end-of-burn-in feature snapshot."""
    if spec.kind != DesignKind.CCD_FREEZE:
        raise DesignError(f"assign_ccd_freeze got design kind {spec.kind}")
    g, w, day, dk, da, _, cf_users = _ccd_base(spec)
    dk[cf_users] = DirectiveKind.FROZEN
    da[cf_users] = spec.burn_in
    return CohortSchedule(
        kind=spec.kind, g=g, w=w, day=day, directive_kind=dk, directive_arg=da,
        probs=spec.probs(), burn_in=spec.burn_in,
    )


def assign_clustered_ccd(
    spec: DesignSpec, cluster_map: Optional[np.ndarray] = None
) -> CohortSchedule:
    """CCD where every user is served their cluster's pooled features.

    The cluster map must exist before treatment labels are drawn (it is
    supplied or generated here from the spec seed alone), so it cannot depend
    on treatment assignment; it stays fixed for all periods.
    """
    if spec.kind != DesignKind.CLUSTERED_CCD:
        raise DesignError(f"assign_clustered_ccd got design kind {spec.kind}")
    spec.validate()
    k = spec.cluster_count
    if cluster_map is None:
        rng = np.random.default_rng([spec.seed, _CLUSTER_GEN_SALT])
        cluster_map = rng.permutation(np.repeat(np.arange(k), spec.n // k))
    else:
        cluster_map = np.asarray(cluster_map)
        if len(cluster_map) != spec.n:
            raise DesignError("cluster map length must equal population size")
        sizes = np.bincount(cluster_map, minlength=k)
        if len(sizes) != k or not np.all(sizes == spec.n // k):
            raise DesignError("cluster map must have exactly K equal-size clusters")
    g, w, day, dk, da, _, _ = _ccd_base(spec)
    dk[:, :] = DirectiveKind.CLUSTER
    da[:, :] = cluster_map[:, None]
    return CohortSchedule(
        kind=spec.kind, g=g, w=w, day=day, directive_kind=dk, directive_arg=da,
        probs=spec.probs(), burn_in=spec.burn_in,
        leave_one_out=spec.leave_one_out, cluster_map=cluster_map,
    )


def assign(spec: DesignSpec, **kwargs) -> CohortSchedule:
    """Dispatch to the generator for the spec's design kind."""
    dispatch = {
        DesignKind.AB: assign_ab,
        DesignKind.CCD: assign_ccd,
        DesignKind.CCD_SWITCH: assign_ccd_switch,
        DesignKind.CCD_FREEZE: assign_ccd_freeze,
        DesignKind.CLUSTERED_CCD: assign_clustered_ccd,
    }
    return dispatch[spec.kind](spec, **kwargs)


SCHEDULE_COLUMNS = ["user", "t", "cohort", "day", "w", "directive", "directive_arg"]


def write_schedule_csv(path, schedule: CohortSchedule) -> None:
    labels = schedule.labels()
    loo = schedule.leave_one_out
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCHEDULE_COLUMNS)
        for i in range(schedule.n):
            for t in range(1, schedule.horizon + 1):
                kind = DirectiveKind(schedule.directive_kind[i, t - 1])
                name = _DIRECTIVE_NAMES[kind]
                if kind == DirectiveKind.CLUSTER and loo:
                    name = "cluster_loo"
                writer.writerow(
                    [
                        i,
                        t,
                        labels[i, t - 1],
                        int(schedule.day[i]),
                        int(schedule.w[i, t - 1]),
                        name,
                        int(schedule.directive_arg[i, t - 1]),
                    ]
                )
