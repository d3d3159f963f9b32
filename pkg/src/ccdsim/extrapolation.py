"""Parametric effect curves, nonlinear least-squares fitting, and extrapolation.

Learning-style effects follow an exponential saturation curve
``beta0 * (1 - exp(-beta1 * t))`` while direct effects are constant. Because
the asymptote enters linearly given the rate, fitting profiles it out in
closed form over a log-spaced rate grid and polishes each start with damped
Gauss-Newton in (asymptote, log rate) space; the log parameterization keeps
the rate positive.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .causal import EffectKind, EffectSeries


class FamilyKind(Enum):
    EXPONENTIAL_SATURATION = "exponential_saturation"
    CONSTANT = "constant"


@dataclass(frozen=True)
class CurveFamily:
    """A parameterized effect curve; ``beta1`` is None for the constant family."""

    kind: FamilyKind
    beta0: float
    beta1: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind == FamilyKind.EXPONENTIAL_SATURATION:
            if self.beta1 is None or self.beta1 <= 0:
                raise ValueError("saturation curve needs rate beta1 > 0")

    @property
    def long_run(self) -> float:
        """The curve's limit as t grows without bound."""
        return self.beta0


def curve_value(family: CurveFamily, t) -> np.ndarray | float:
    """Evaluate the curve at time(s) t >= 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("curve time must be >= 0")
    if family.kind == FamilyKind.CONSTANT:
        out = np.full_like(t, family.beta0)
    else:
        out = family.beta0 * (1.0 - np.exp(-family.beta1 * t))
    return out if out.ndim else float(out)


@dataclass
class FitResult:
    family: CurveFamily
    rss: float
    stderr: tuple[float, ...]
    converged: bool
    iterations: int

    @property
    def long_run(self) -> float:
        return self.family.long_run


_RATE_GRID = np.logspace(-3.0, 0.0, 16)
_GN_MAX_ITER = 200
_GN_TOL = 1e-10


def _sat_residuals(y: np.ndarray, t: np.ndarray, beta0: float, log_rate: float):
    rate = math.exp(log_rate)
    x = 1.0 - np.exp(-rate * t)
    r = y - beta0 * x
    # Jacobian of residuals wrt (beta0, log_rate).
    j = np.column_stack([-x, -beta0 * t * np.exp(-rate * t) * rate])
    return r, j


def _gauss_newton(y: np.ndarray, t: np.ndarray, beta0: float, log_rate: float):
    """Damped Gauss-Newton from one start; returns (beta0, log_rate, rss, ok, iters)."""
    theta = np.array([beta0, log_rate])
    r, j = _sat_residuals(y, t, *theta)
    rss = float(r @ r)
    converged = False
    it = 0
    for it in range(1, _GN_MAX_ITER + 1):
        jtj = j.T @ j
        jtr = j.T @ r
        try:
            step = np.linalg.solve(jtj, -jtr)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jtj, -jtr, rcond=None)[0]
        scale = 1.0
        new_theta, new_rss, new_r, new_j = theta, rss, r, j
        for _ in range(40):
            cand = theta + scale * step
            rc, jc = _sat_residuals(y, t, *cand)
            rssc = float(rc @ rc)
            if rssc <= rss:
                new_theta, new_rss, new_r, new_j = cand, rssc, rc, jc
                break
            scale *= 0.5
        rel_change = np.max(
            np.abs(new_theta - theta) / np.maximum(np.abs(theta), 1e-12)
        )
        theta, rss, r, j = new_theta, new_rss, new_r, new_j
        if rel_change < _GN_TOL:
            converged = True
            break
    return float(theta[0]), float(theta[1]), rss, converged, it


def _sat_stderr(y: np.ndarray, t: np.ndarray, beta0: float, log_rate: float, rss: float):
    """(se_beta0, se_beta1) from the Gauss-Newton curvature approximation."""
    dof = len(y) - 2
    if dof <= 0:
        return (math.inf, math.inf)
    _, j = _sat_residuals(y, t, beta0, log_rate)
    sigma2 = rss / dof
    jtj = j.T @ j
    try:
        cov = sigma2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = sigma2 * np.linalg.pinv(jtj)
    se0 = math.sqrt(max(cov[0, 0], 0.0))
    se_log = math.sqrt(max(cov[1, 1], 0.0))
    return (se0, math.exp(log_rate) * se_log)


def nls_fit(series: EffectSeries, family_kind: FamilyKind) -> FitResult:
    """Least-squares fit of one curve family to an effect series (t = 1..T).

    Saturation fits profile the asymptote at each grid rate, refine every
    start with damped Gauss-Newton, and return the best local optimum. A flat
    series leaves the rate unidentified and is returned unconverged.
    """
    y = np.asarray(series.values, dtype=float)
    n_params = 1 if family_kind == FamilyKind.CONSTANT else 2
    if len(y) < n_params + 1:
        raise ValueError(
            f"series length {len(y)} too short for {family_kind.value} fit"
        )
    t = np.arange(1, len(y) + 1, dtype=float)
    if family_kind == FamilyKind.CONSTANT:
        beta = float(y.mean())
        rss = float(((y - beta) ** 2).sum())
        se = math.sqrt(rss / (len(y) - 1) / len(y))
        return FitResult(
            family=CurveFamily(FamilyKind.CONSTANT, beta),
            rss=rss,
            stderr=(se,),
            converged=True,
            iterations=0,
        )
    if np.ptp(y) == 0.0:
        # Any rate reproduces a constant only in the limit; flag as unidentified.
        return FitResult(
            family=CurveFamily(
                FamilyKind.EXPONENTIAL_SATURATION, float(y[0]), float(_RATE_GRID[-1])
            ),
            rss=float(((y - y.mean()) ** 2).sum()),
            stderr=(math.inf, math.inf),
            converged=False,
            iterations=0,
        )
    best = None
    for rate in _RATE_GRID:
        x = 1.0 - np.exp(-rate * t)
        beta0 = float((x @ y) / (x @ x))
        b0, lr, rss, ok, iters = _gauss_newton(y, t, beta0, math.log(rate))
        if best is None or rss < best[2]:
            best = (b0, lr, rss, ok, iters)
    b0, lr, rss, ok, iters = best
    se = _sat_stderr(y, t, b0, lr, rss)
    return FitResult(
        family=CurveFamily(FamilyKind.EXPONENTIAL_SATURATION, b0, math.exp(lr)),
        rss=rss,
        stderr=se,
        converged=ok,
        iterations=iters,
    )


def predict(fit: FitResult, s) -> np.ndarray | float:
    """Curve value at period(s) s, typically beyond the fitted horizon."""
    if not fit.converged:
        raise ValueError("cannot extrapolate from an unconverged fit")
    return curve_value(fit.family, s)


def long_run_total(fits: dict[EffectKind, FitResult]) -> float:
    """Sum of the three component asymptotes (learning + personalization + direct)."""
    needed = (EffectKind.USER_LEARNING, EffectKind.PERSONALIZATION, EffectKind.DIRECT)
    total = 0.0
    for kind in needed:
        if kind not in fits:
            raise ValueError(f"missing fit for {kind.value}")
        fit = fits[kind]
        if not fit.converged:
            raise ValueError(f"fit for {kind.value} did not converge")
        limit = fit.long_run
        if not math.isfinite(limit):
            raise ValueError(f"fit for {kind.value} has no finite long-run limit")
        total += limit
    return total


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic three-effect data-generating process."""

    beta0_s: float = 5.0
    beta0_p: float = 1.0
    beta1_p: float = 0.075
    beta0_u: float = -3.0
    beta1_u: float = 0.025
    noise_sd: float = 0.1
    horizon: int = 45
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beta1_p <= 0 or self.beta1_u <= 0:
            raise ValueError("saturation rates must be > 0")
        if self.noise_sd < 0:
            raise ValueError("noise sd must be >= 0")

    def truth(self) -> dict[EffectKind, CurveFamily]:
        return {
            EffectKind.USER_LEARNING: CurveFamily(
                FamilyKind.EXPONENTIAL_SATURATION, self.beta0_u, self.beta1_u
            ),
            EffectKind.PERSONALIZATION: CurveFamily(
                FamilyKind.EXPONENTIAL_SATURATION, self.beta0_p, self.beta1_p
            ),
            EffectKind.DIRECT: CurveFamily(FamilyKind.CONSTANT, self.beta0_s),
        }


_SYNTH_SALTS = {
    EffectKind.USER_LEARNING: 1,
    EffectKind.PERSONALIZATION: 2,
    EffectKind.DIRECT: 3,
}


def synth_series(spec: SynthSpec) -> dict[EffectKind, EffectSeries]:
    """Noisy learning/personalization/direct series from the synthetic process."""
    t = np.arange(1, spec.horizon + 1, dtype=float)
    out = {}
    for kind, family in spec.truth().items():
        rng = np.random.default_rng([spec.seed, 0x5E1E, _SYNTH_SALTS[kind]])
        noise = rng.normal(0.0, spec.noise_sd, size=spec.horizon)
        out[kind] = EffectSeries(kind=kind, values=curve_value(family, t) + noise)
    return out


_FIT_FAMILY = {
    EffectKind.USER_LEARNING: FamilyKind.EXPONENTIAL_SATURATION,
    EffectKind.PERSONALIZATION: FamilyKind.EXPONENTIAL_SATURATION,
    EffectKind.DIRECT: FamilyKind.CONSTANT,
}


@dataclass(frozen=True)
class MseRow:
    horizon: int
    kind: EffectKind
    mse: float


def _mse_one_horizon(args) -> list[MseRow]:
    spec, horizon, replicates, seed = args
    truth = {kind: fam.long_run for kind, fam in spec.truth().items()}
    sq_err = {kind: 0.0 for kind in truth}
    for r in range(replicates):
        rep = replace(spec, horizon=horizon, seed=seed * 1_000_003 + horizon * 1_009 + r)
        series = synth_series(rep)
        for kind, s in series.items():
            fit = nls_fit(s, _FIT_FAMILY[kind])
            sq_err[kind] += (fit.long_run - truth[kind]) ** 2
    return [
        MseRow(horizon=horizon, kind=kind, mse=sq_err[kind] / replicates)
        for kind in (EffectKind.USER_LEARNING, EffectKind.PERSONALIZATION, EffectKind.DIRECT)
    ]


def mse_study(
    spec: SynthSpec,
    horizons: Sequence[int],
    replicates: int,
    seed: int,
    workers: int = 1,
) -> list[MseRow]:
    """Replicate-averaged squared error of each long-run estimate per horizon."""
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    jobs = [(spec, int(h), replicates, seed) for h in horizons]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_mse_one_horizon, jobs))
    else:
        chunks = [_mse_one_horizon(job) for job in jobs]
    return [row for chunk in chunks for row in chunk]
