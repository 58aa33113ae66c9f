"""Survival data containers, CSV IO and the per-stratum risk index.

The risk index is the piece every likelihood evaluation leans on: within a
stratum, subjects are ordered by descending observed time (ties broken by
original row index), so the risk set of any event time is a contiguous
prefix of that ordering.  Events sharing a stratum and a tied time share
one denominator, so they are grouped by distinct event time.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCovariateError,
    DomainError,
    ParseError,
    SchemaError,
)

__all__ = [
    "SurvivalDataset",
    "RiskIndex",
    "StandardizationTransform",
    "load_csv",
    "write_csv",
    "build_risk_index",
    "standardize",
]

_MANDATORY = ("time", "status", "stratum")


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival data with stratum labels and covariates.

    Attributes
    ----------
    time : ndarray of float, shape (n,)
        Observed times, finite and >= 0.
    status : ndarray of int, shape (n,)
        1 for an event, 0 for censoring.
    stratum : ndarray of int, shape (n,)
        Stratum codes, 0 .. J-1.
    stratum_labels : tuple of str
        Original stratum tokens, indexed by code.
    covariates : ndarray of float, shape (n, P)
    covariate_names : tuple of str
    """

    time: np.ndarray
    status: np.ndarray
    stratum: np.ndarray
    stratum_labels: tuple
    covariates: np.ndarray
    covariate_names: tuple

    def __post_init__(self):
        time = np.ascontiguousarray(self.time, dtype=float)
        status = np.ascontiguousarray(self.status, dtype=np.int64)
        stratum = np.ascontiguousarray(self.stratum, dtype=np.int64)
        X = np.ascontiguousarray(self.covariates, dtype=float)
        n = time.shape[0]
        if status.shape != (n,) or stratum.shape != (n,):
            raise DomainError("time, status and stratum must have equal length")
        if X.ndim != 2 or X.shape[0] != n:
            raise DomainError("covariate matrix must have one row per subject")
        if X.shape[1] != len(self.covariate_names):
            raise DomainError("covariate_names must match the covariate column count")
        if n == 0:
            raise DomainError("dataset is empty")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise DomainError("all times must be finite and >= 0")
        if not np.all((status == 0) | (status == 1)):
            raise DomainError("status must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates contain non-finite values")
        if status.sum() == 0:
            raise DomainError("dataset contains no events")
        if stratum.min() < 0 or stratum.max() >= len(self.stratum_labels):
            raise DomainError("stratum codes must index stratum_labels")
        for a in (time, status, stratum, X):
            a.flags.writeable = False
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "stratum", stratum)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "stratum_labels", tuple(self.stratum_labels))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        empty = [self.stratum_labels[j] for j in range(len(self.stratum_labels))
                 if status[stratum == j].sum() == 0]
        object.__setattr__(self, "strata_without_events", tuple(empty))
        if empty:
            warnings.warn(
                f"strata with zero events contribute nothing: {', '.join(map(str, empty))}",
                stacklevel=2)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def P(self) -> int:
        return self.covariates.shape[1]

    @property
    def J(self) -> int:
        return len(self.stratum_labels)

    @property
    def event_times(self) -> np.ndarray:
        return self.time[self.status == 1]

    def subset(self, rows) -> "SurvivalDataset":
        """Row subset keeping stratum codes and covariate names."""
        rows = np.asarray(rows)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return SurvivalDataset(
                self.time[rows], self.status[rows], self.stratum[rows],
                self.stratum_labels, self.covariates[rows], self.covariate_names)


class _StratumIndex:
    """Prefix/risk-set structure of one stratum with at least one event.

    ``order`` sorts the stratum's rows by descending time (ties by row
    index), so the risk set at distinct event time ``dt[g]`` is
    ``order[:L[g]]``.  ``d[g]`` events share that denominator; their original
    rows are ``event_rows[event_starts[g]:event_starts[g+1]]``.
    """

    __slots__ = ("order", "dt", "L", "d", "event_rows", "event_starts",
                 "event_group", "Xs", "Xs2", "SX", "mask_add")

    def __init__(self, order, time, status, X):
        self.order = order
        ts = time[order]
        ev_sorted = order[status[order] == 1]
        tev = time[ev_sorted]
        dt = np.unique(tev)[::-1]  # descending, so prefix lengths ascend
        self.dt = dt
        self.L = np.searchsorted(-ts, -dt, side="right")
        gid = np.searchsorted(-dt, -tev)
        self.event_rows = ev_sorted  # already grouped: tev is non-increasing
        self.event_group = gid
        starts = np.searchsorted(gid, np.arange(dt.size + 1))
        self.event_starts = starts
        self.d = np.diff(starts).astype(float)
        Xs = X[order]
        self.SX = np.add.reduceat(X[ev_sorted], starts[:-1], axis=0)
        self.Xs = np.asfortranarray(Xs)
        self.Xs2 = np.asfortranarray(Xs * Xs)
        # additive mask: 0 inside the risk-set prefix, -inf outside; adding it
        # to the linear predictor makes masked entries vanish under exp
        madd = np.zeros((order.size, dt.size), order="F")
        madd[np.arange(order.size)[:, None] >= self.L[None, :]] = -np.inf
        self.mask_add = madd


class RiskIndex:
    """Per-stratum risk-set structure for a dataset."""

    def __init__(self, dataset: SurvivalDataset):
        self.n = dataset.n
        self.strata = []
        for j in range(dataset.J):
            rows = np.flatnonzero(dataset.stratum == j)
            if rows.size == 0 or dataset.status[rows].sum() == 0:
                continue  # zero-event strata contribute nothing
            order = rows[np.lexsort((rows, -dataset.time[rows]))]
            self.strata.append(_StratumIndex(
                order, dataset.time, dataset.status, dataset.covariates))
        self.n_events = int(sum(s.event_rows.size for s in self.strata))

    def risk_set(self, stratum_index: int, event_row: int) -> np.ndarray:
        """Original rows at risk at the given event row's time (for checks)."""
        s = self.strata[stratum_index]
        g = s.event_group[np.flatnonzero(s.event_rows == event_row)[0]]
        return np.sort(s.order[:s.L[g]])


def build_risk_index(dataset: SurvivalDataset) -> RiskIndex:
    return RiskIndex(dataset)


@dataclass(frozen=True)
class StandardizationTransform:
    """Per-covariate centering/scaling applied before fitting.

    ``beta_original(t) = beta_standardized(t) / scale_p``; centering shifts
    are absorbed by the baseline hazard and need no inversion.
    """

    center: np.ndarray
    scale: np.ndarray
    names: tuple

    def to_dict(self) -> dict:
        return {"center": [float(v) for v in self.center],
                "scale": [float(v) for v in self.scale],
                "names": list(self.names)}


def standardize(dataset: SurvivalDataset):
    """Center and scale covariates to unit sample SD (denominator n-1).

    Returns the transformed dataset and the transform.  A zero-variance
    column cannot be scaled and raises DegenerateCovariateError.
    """
    X = dataset.covariates
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1) if dataset.n > 1 else np.zeros(dataset.P)
    bad = np.flatnonzero(~(scale > 0))
    if bad.size:
        raise DegenerateCovariateError(
            f"covariate '{dataset.covariate_names[bad[0]]}' has zero variance")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = SurvivalDataset(dataset.time, dataset.status, dataset.stratum,
                              dataset.stratum_labels, (X - center) / scale,
                              dataset.covariate_names)
    return out, StandardizationTransform(center, scale, dataset.covariate_names)


def load_csv(path) -> SurvivalDataset:
    """Read a dataset from CSV with columns time, status, stratum, <covariates>.

    Any column beyond the mandatory three is a covariate, in header order.
    Blank or non-numeric cells raise ParseError citing the 1-based data row
    and the column name; status outside {0, 1} raises DomainError.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        # leading '#' lines carry provenance comments from the CLI writers
        header = None
        for rec in reader:
            if rec and rec[0].lstrip().startswith("#"):
                continue
            header = rec
            break
        if header is None:
            raise SchemaError("empty file: no header row")
        header = [h.strip() for h in header]
        for col in _MANDATORY:
            if col not in header:
                raise SchemaError(f"missing mandatory column '{col}'")
        pos = {name: header.index(name) for name in _MANDATORY}
        cov_cols = [(i, name) for i, name in enumerate(header) if name not in _MANDATORY]
        times, status, labels, rows = [], [], [], []
        for r, rec in enumerate(reader, start=1):
            if len(rec) != len(header):
                raise ParseError(f"row {r} has {len(rec)} cells, expected {len(header)}")
            def cell(i, name, kind="numeric"):
                v = rec[i].strip()
                try:
                    x = float(v)
                except ValueError:
                    raise ParseError(f"row {r} column '{name}': cannot parse {v!r}") from None
                if not np.isfinite(x):
                    raise ParseError(f"row {r} column '{name}': non-finite value {v!r}")
                return x
            t = cell(pos["time"], "time")
            if t < 0:
                raise DomainError(f"row {r} column 'time': negative time {t}")
            s = cell(pos["status"], "status")
            if s not in (0.0, 1.0):
                raise DomainError(f"row {r} column 'status': status must be 0 or 1, got {rec[pos['status']]}")
            times.append(t)
            status.append(int(s))
            labels.append(rec[pos["stratum"]].strip())
            rows.append([cell(i, name) for i, name in cov_cols])
    if not times:
        raise SchemaError("file contains a header but no data rows")
    uniq = sorted(set(labels))
    code = {lab: j for j, lab in enumerate(uniq)}
    return SurvivalDataset(
        np.array(times), np.array(status), np.array([code[lab] for lab in labels]),
        tuple(uniq), np.array(rows, dtype=float).reshape(len(times), len(cov_cols)),
        tuple(name for _, name in cov_cols))


def write_csv(path, dataset: SurvivalDataset, header_comments=()) -> None:
    """Write a dataset in the load_csv column layout, deterministically."""
    with open(path, "w", newline="") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["time", "status", "stratum", *dataset.covariate_names])
        for i in range(dataset.n):
            w.writerow([f"{dataset.time[i]:.17g}", int(dataset.status[i]),
                        dataset.stratum_labels[dataset.stratum[i]],
                        *(f"{v:.17g}" for v in dataset.covariates[i])])
