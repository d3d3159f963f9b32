"""CSV schemas and atomic writers for every artifact the toolkit emits.

All writers format floats via ``repr`` (shortest round-trip), write a header
row, and go through a temp-file rename so reruns with the same seed produce
byte-identical files and readers never see partial output.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .causal import EffectKind, EffectSeries
from .designs import CohortLabel, DesignKind, _CODE_LABEL, _LABEL_CODE
from .engine import Panel
from .estimators import StudySummary
from .extrapolation import FitResult, MseRow


class DataError(ValueError):
    """Raised when an input file does not match its documented schema."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def atomic_write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    os.replace(tmp, path)


EFFECT_SERIES_COLUMNS = ["kind", "t", "value", "stderr"]


def write_effect_series(path, series: EffectSeries) -> None:
    rows = []
    for t in range(1, series.horizon + 1):
        se = "" if series.stderr is None else _fmt(series.stderr[t - 1])
        rows.append([series.kind.value, t, series.values[t - 1], se])
    atomic_write_rows(path, EFFECT_SERIES_COLUMNS, rows)


def read_effect_series(path) -> EffectSeries:
    kinds, values, stderrs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EFFECT_SERIES_COLUMNS:
            raise DataError(f"{path}: expected columns {EFFECT_SERIES_COLUMNS}")
        for row in reader:
            kinds.append(row["kind"])
            values.append(float(row["value"]))
            stderrs.append(float(row["stderr"]) if row["stderr"] else np.nan)
    if len(set(kinds)) != 1:
        raise DataError(f"{path}: mixed effect kinds in one series file")
    stderr = None if np.isnan(stderrs).all() else np.array(stderrs)
    return EffectSeries(EffectKind(kinds[0]), np.array(values), stderr)


EFFECTS_COLUMNS = ["estimator", "kind", "t", "value", "stderr"]


def write_effects_csv(path, blocks: dict[str, EffectSeries]) -> None:
    """Multiple named estimator series in one long-format file."""
    rows = []
    for name, series in blocks.items():
        kind = series.kind.value if isinstance(series.kind, EffectKind) else str(series.kind)
        for t in range(1, series.horizon + 1):
            se = "" if series.stderr is None else _fmt(series.stderr[t - 1])
            rows.append([name, kind, t, series.values[t - 1], se])
    atomic_write_rows(path, EFFECTS_COLUMNS, rows)


def read_effects_csv(path) -> dict[str, EffectSeries]:
    raw: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EFFECTS_COLUMNS:
            raise DataError(f"{path}: expected columns {EFFECTS_COLUMNS}")
        for row in reader:
            raw.setdefault(row["estimator"], []).append(row)
    out = {}
    for name, rows in raw.items():
        rows.sort(key=lambda r: int(r["t"]))
        values = np.array([float(r["value"]) for r in rows])
        stderr = np.array(
            [float(r["stderr"]) if r["stderr"] else np.nan for r in rows]
        )
        kind_str = rows[0]["kind"]
        try:
            kind = EffectKind(kind_str)
        except ValueError:
            kind = EffectKind.TOTAL
        out[name] = EffectSeries(
            kind, values, None if np.isnan(stderr).all() else stderr
        )
    return out


TRUTH_COLUMNS = [
    "t",
    "total",
    "user_learning",
    "personalization",
    "direct",
    "personalization_asymptote",
]


def write_truth_csv(path, suite: dict[EffectKind, EffectSeries], asymptote: float) -> None:
    horizon = suite[EffectKind.TOTAL].horizon
    rows = []
    for t in range(1, horizon + 1):
        rows.append(
            [
                t,
                suite[EffectKind.TOTAL].values[t - 1],
                suite[EffectKind.USER_LEARNING].values[t - 1],
                suite[EffectKind.PERSONALIZATION].values[t - 1],
                suite[EffectKind.DIRECT].values[t - 1],
                asymptote,
            ]
        )
    atomic_write_rows(path, TRUTH_COLUMNS, rows)


PANEL_COLUMNS = ["user", "t", "cohort", "day", "w", "y", "action", "served_vector_hash"]


def _vector_hash(vec: np.ndarray) -> str:
    import hashlib

    return hashlib.blake2b(
        np.ascontiguousarray(vec, dtype=np.float64).tobytes(), digest_size=6
    ).hexdigest()


def write_panel_csv(path, panel: Panel) -> None:
    labels = np.array([label.value for label in CohortLabel])[panel.g]
    rows = []
    for i in range(panel.n):
        for t in range(1, panel.horizon + 1):
            vec_hash = (
                _vector_hash(panel.served[i, t - 1])
                if panel.served is not None
                else ""
            )
            rows.append(
                [
                    i,
                    t,
                    labels[i, t - 1],
                    int(panel.day[i]),
                    int(panel.w[i, t - 1]),
                    panel.y[i, t - 1],
                    panel.action_label[i, t - 1],
                    vec_hash,
                ]
            )
    atomic_write_rows(path, PANEL_COLUMNS, rows)


def read_panel_csv(
    path,
    probs: dict[CohortLabel, float],
    kind: DesignKind,
    burn_in: int = 0,
    cluster_map=None,
    leave_one_out: bool = False,
    served=None,
) -> Panel:
    """Rebuild a Panel from panel.csv plus design metadata from the config."""
    by_user: dict[int, dict[int, dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PANEL_COLUMNS:
            raise DataError(f"{path}: expected columns {PANEL_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            try:
                user = int(row["user"])
                t = int(row["t"])
                label = CohortLabel(row["cohort"])
                day = int(row["day"])
                w = int(row["w"])
                y = float(row["y"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: bad panel row at line {lineno}: {exc}")
            by_user.setdefault(user, {})[t] = {
                "label": label, "day": day, "w": w, "y": y,
                "action": row["action"],
            }
    if not by_user:
        raise DataError(f"{path}: empty panel")
    n = max(by_user) + 1
    horizons = {max(ts) for ts in by_user.values()}
    if len(by_user) != n or len(horizons) != 1:
        raise DataError(f"{path}: panel is not a complete n x T grid")
    horizon = horizons.pop()
    g = np.zeros((n, horizon), dtype=np.int8)
    w = np.zeros((n, horizon), dtype=np.int8)
    y = np.zeros((n, horizon))
    day = np.full(n, -1, dtype=np.int32)
    action_label = np.empty((n, horizon), dtype="<U24")
    for i, periods in by_user.items():
        if len(periods) != horizon:
            raise DataError(f"{path}: user {i} has {len(periods)} of {horizon} periods")
        for t, rec in periods.items():
            g[i, t - 1] = _LABEL_CODE[rec["label"]]
            w[i, t - 1] = rec["w"]
            y[i, t - 1] = rec["y"]
            action_label[i, t - 1] = rec["action"]
        day[i] = periods[1]["day"]
    return Panel(
        g=g, day=day, w=w, y=y,
        action=np.zeros((n, horizon), dtype=np.int64),
        action_label=action_label,
        probs=probs, kind=kind, served=served,
        cluster_map=cluster_map, leave_one_out=leave_one_out, burn_in=burn_in,
    )


FEATURES_COLUMNS = ["user", "t"]


def write_features_csv(path, panel: Panel) -> None:
    if panel.served is None:
        raise DataError("panel has no served-vector log to dump")
    d = panel.served.shape[2]
    header = FEATURES_COLUMNS + [f"f{j}" for j in range(d)]
    rows = []
    for i in range(panel.n):
        for t in range(1, panel.horizon + 1):
            rows.append([i, t, *panel.served[i, t - 1]])
    atomic_write_rows(path, header, rows)


def read_features_csv(path, n: int, horizon: int) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != FEATURES_COLUMNS:
            raise DataError(f"{path}: expected columns starting {FEATURES_COLUMNS}")
        dims = [c for c in reader.fieldnames if c.startswith("f")]
        served = np.zeros((n, horizon, len(dims)))
        for lineno, row in enumerate(reader, start=2):
            try:
                i, t = int(row["user"]), int(row["t"])
                served[i, t - 1] = [float(row[c]) for c in dims]
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: bad features row at line {lineno}: {exc}")
    return served


POPULATION_COLUMNS = ["user", "cluster", "u_aw", "u_s"]


def write_population_csv(path, prefs) -> None:
    rows = [
        [i, int(prefs.cluster_ids[i]), prefs.u[i, 0], prefs.u[i, 1]]
        for i in range(prefs.n)
    ]
    atomic_write_rows(path, POPULATION_COLUMNS, rows)


FITS_COLUMNS = [
    "kind", "family", "beta0", "beta1", "rss", "stderr0", "stderr1", "converged",
]


def write_fits_csv(path, fits: dict[str, FitResult], long_run: float | None) -> None:
    rows = []
    for name, fit in fits.items():
        beta1 = "" if fit.family.beta1 is None else _fmt(fit.family.beta1)
        se0 = _fmt(fit.stderr[0])
        se1 = _fmt(fit.stderr[1]) if len(fit.stderr) > 1 else ""
        rows.append(
            [
                name, fit.family.kind.value, fit.family.beta0, beta1,
                fit.rss, se0, se1, int(fit.converged),
            ]
        )
    if long_run is not None:
        rows.append(["long_run_total", "sum", long_run, "", "", "", "", 1])
    atomic_write_rows(path, FITS_COLUMNS, rows)


EXTRAPOLATION_COLUMNS = ["kind", "s", "value"]


def write_extrapolation_csv(path, curves: dict[str, FitResult], periods) -> None:
    from .extrapolation import predict

    rows = []
    for name, fit in curves.items():
        for s in periods:
            rows.append([name, int(s), float(predict(fit, float(s)))])
    atomic_write_rows(path, EXTRAPOLATION_COLUMNS, rows)


MSE_COLUMNS = ["horizon", "kind", "mse"]


def write_mse_csv(path, rows: list[MseRow]) -> None:
    atomic_write_rows(
        path, MSE_COLUMNS, [[r.horizon, r.kind.value, r.mse] for r in rows]
    )


STUDIES_COLUMNS = ["study", "imbalance", "bias", "variance"]


def write_studies_csv(path, studies: list[StudySummary]) -> None:
    rows = [
        [k, s.imbalance, s.bias, s.variance] for k, s in enumerate(studies)
    ]
    atomic_write_rows(path, STUDIES_COLUMNS, rows)


def read_studies_csv(path) -> list[StudySummary]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != STUDIES_COLUMNS:
            raise DataError(f"{path}: expected columns {STUDIES_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(
                    StudySummary(
                        imbalance=float(row["imbalance"]),
                        bias=float(row["bias"]),
                        variance=float(row["variance"]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"{path}: bad study row at line {lineno}: {exc}")
    return out
