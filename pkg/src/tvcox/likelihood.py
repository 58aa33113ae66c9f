"""Stratified Cox log partial likelihood with spline-expanded effects.

The linear predictor of subject ``i`` evaluated at time ``t`` is
``x_i' Theta B(t)`` where ``Theta`` is the P x K coefficient matrix and
``B(t)`` the spline basis vector.  With Breslow handling of ties the log
partial likelihood is

    l(Theta) = sum_events [ x_i' Theta B(T_i)
               - log sum_{i' in R(T_i)} exp(x_{i'}' Theta B(T_i)) ],

risk sets taken within the event's stratum.  Because the basis changes
with the event time, denominators cannot be shared across times; they are
shared across events tied at the same time, and each distinct time's risk
set is a contiguous prefix of the stratum's descending-time ordering.

All quantities for one stratum are computed in a single vectorized pass:
an (n_j x m) matrix of linear predictors (m = distinct event times), a
per-column max shift for stable exponentials, and masked matrix products
for the risk-set sums.  Flat coefficient vectors follow the row-major
convention theta = vec(Theta): block p occupies theta[p*K:(p+1)*K].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import RiskIndex, SurvivalDataset
from .errors import CapacityError, NumericOverflowError
from .splines import BasisMatrix

__all__ = [
    "LikelihoodReport",
    "ScoreResiduals",
    "as_matrix",
    "as_vector",
    "evaluate_report",
    "loglik",
    "gradient",
    "block_hessian",
    "block_hessians",
    "full_hessian",
    "score_residuals",
]

FULL_HESSIAN_GUARD = 2000  # refuse to build PK x PK beyond this


def as_matrix(theta, P: int, K: int) -> np.ndarray:
    """Coefficients as a P x K matrix from either layout."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape == (P, K):
        return theta
    if theta.shape == (P * K,):
        return theta.reshape(P, K)
    raise ValueError(f"theta must have shape ({P},{K}) or ({P * K},), got {theta.shape}")


def as_vector(theta, P: int, K: int) -> np.ndarray:
    """Row-major flat coefficients: block p at [p*K:(p+1)*K]."""
    return as_matrix(theta, P, K).reshape(-1)


@dataclass
class LikelihoodReport:
    """One evaluation of the likelihood and requested derivatives."""

    theta: np.ndarray            # P x K
    loglik: float | None
    gradient: np.ndarray | None  # flat, PK
    block_hessians: np.ndarray | None  # P x K x K
    full_hessian: np.ndarray | None    # PK x PK

    @property
    def P(self) -> int:
        return self.theta.shape[0]

    @property
    def K(self) -> int:
        return self.theta.shape[1]

    def gradient_block(self, p: int) -> np.ndarray:
        K = self.K
        return self.gradient[p * K:(p + 1) * K]


@dataclass
class ScoreResiduals:
    """Per-event score residuals Psi and the empirical information.

    ``psi[e]`` is the flattened (x_e - zbar) outer B(T_e) for event e;
    their sum equals the gradient, and V = Psi' Psi estimates the
    information without second derivatives.
    """

    psi: np.ndarray         # n_events x PK
    event_rows: np.ndarray  # original dataset rows, one per event
    total: np.ndarray       # column sum, equals the gradient
    V: np.ndarray           # PK x PK


def _group_basis(s, basis_values):
    # tied events share a time, hence identical basis rows; take the first
    return basis_values[s.event_rows[s.event_starts[:-1]]]


def _stratum_pass(s, M):
    """Shared per-stratum quantities at coefficients with basis mix M (m x P)."""
    with np.errstate(over="ignore", invalid="ignore"):
        eta = s.Xs @ M.T
        eta += s.mask_add
        shift = eta.max(axis=0)
        eta -= shift
        E = np.exp(eta, out=eta)  # masked entries exp(-inf) = 0
        S = E.sum(axis=0)
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(shift))):
            raw = s.Xs @ M.T
            bad = np.argwhere(~np.isfinite(raw))
            row = s.order[bad[0][0]] if bad.size else s.order[0]
            raise NumericOverflowError(
                f"non-finite linear predictor for subject row {int(row)}")
    return E, S, shift


def evaluate_report(dataset: SurvivalDataset, index: RiskIndex, basis: BasisMatrix,
                    theta, *, want_loglik: bool = True, want_gradient: bool = True,
                    want_blocks: bool = False, want_full: bool = False,
                    guard: int = FULL_HESSIAN_GUARD) -> LikelihoodReport:
    """Evaluate the likelihood and any of its derivatives in one pass.

    Parameters
    ----------
    basis : BasisMatrix
        Basis rows at every observed time (``evaluate_batch(spec, dataset.time)``);
        only event rows are read.
    theta : ndarray
        Coefficients, flat (PK) or matrix (P x K).

    Raises
    ------
    NumericOverflowError
        If a linear predictor is non-finite (diverged coefficients).
    CapacityError
        If the full Hessian is requested and P*K exceeds ``guard``.
    """
    P = dataset.P
    K = basis.values.shape[1]
    Theta = as_matrix(theta, P, K)
    if not np.all(np.isfinite(Theta)):
        raise NumericOverflowError("non-finite coefficients")
    if want_full and P * K > guard:
        raise CapacityError(f"full Hessian size {P * K} exceeds guard {guard}")

    ll = 0.0
    G = np.zeros((P, K)) if (want_gradient or want_full) else None
    Hb = np.zeros((P, K, K)) if want_blocks else None
    Hf = np.zeros((P, K, P, K)) if want_full else None
    iu = np.triu_indices(P) if want_full else None

    for s in index.strata:
        Bg = _group_basis(s, basis.values)
        M = Bg @ Theta.T
        E, S, shift = _stratum_pass(s, M)
        d = s.d
        if want_loglik:
            ll += float((s.SX * M).sum() - (d * (np.log(S) + shift)).sum())
        if G is None and Hb is None:
            continue
        Zbar = (E.T @ s.Xs) / S[:, None]
        A = s.SX - d[:, None] * Zbar
        if G is not None:
            G += A.T @ Bg
        if want_blocks or want_full:
            BB = Bg[:, :, None] * Bg[:, None, :]
        if want_blocks:
            Q = (E.T @ s.Xs2) / S[:, None]
            W = (Q - Zbar * Zbar) * d[:, None]
            Hb -= np.tensordot(W.T, BB, axes=1)
        if want_full:
            XX = s.Xs[:, iu[0]] * s.Xs[:, iu[1]]
            NN = (E.T @ XX) / S[:, None]
            Wf = (NN - Zbar[:, iu[0]] * Zbar[:, iu[1]]) * d[:, None]
            blocks = np.tensordot(Wf.T, BB, axes=1)
            for c in range(iu[0].size):
                p, q = iu[0][c], iu[1][c]
                Hf[p, :, q, :] -= blocks[c]
                if p != q:
                    Hf[q, :, p, :] -= blocks[c]

    return LikelihoodReport(
        theta=Theta.copy(),
        loglik=ll if want_loglik else None,
        gradient=G.reshape(-1) if G is not None else None,
        block_hessians=Hb,
        full_hessian=Hf.reshape(P * K, P * K) if want_full else None,
    )


def loglik(dataset, index, basis, theta) -> float:
    """Log partial likelihood at theta."""
    return evaluate_report(dataset, index, basis, theta,
                           want_gradient=False).loglik


def gradient(dataset, index, basis, theta) -> np.ndarray:
    """Flat gradient; equals the column sum of the score residuals."""
    return evaluate_report(dataset, index, basis, theta,
                           want_loglik=False).gradient


def block_hessians(dataset, index, basis, theta) -> np.ndarray:
    """All P diagonal blocks of the Hessian, shape (P, K, K)."""
    return evaluate_report(dataset, index, basis, theta, want_loglik=False,
                           want_gradient=False, want_blocks=True).block_hessians


def block_hessian(dataset, index, basis, theta, p: int) -> np.ndarray:
    """Hessian block of covariate p (negative semi-definite)."""
    return block_hessians(dataset, index, basis, theta)[p]


def full_hessian(dataset, index, basis, theta, guard: int = FULL_HESSIAN_GUARD) -> np.ndarray:
    """Dense PK x PK Hessian; guarded against accidental huge builds."""
    return evaluate_report(dataset, index, basis, theta, want_loglik=False,
                           want_gradient=False, want_full=True, guard=guard).full_hessian


def score_residuals(dataset: SurvivalDataset, index: RiskIndex, basis: BasisMatrix,
                    theta) -> ScoreResiduals:
    """Per-event residuals Psi and the empirical information V = Psi' Psi."""
    P = dataset.P
    K = basis.values.shape[1]
    Theta = as_matrix(theta, P, K)
    if not np.all(np.isfinite(Theta)):
        raise NumericOverflowError("non-finite coefficients")
    chunks = []
    rows = []
    for s in index.strata:
        Bg = _group_basis(s, basis.values)
        M = Bg @ Theta.T
        E, S, _ = _stratum_pass(s, M)
        Zbar = (E.T @ s.Xs) / S[:, None]
        dx = dataset.covariates[s.event_rows] - Zbar[s.event_group]
        psi = dx[:, :, None] * basis.values[s.event_rows][:, None, :]
        chunks.append(psi.reshape(s.event_rows.size, P * K))
        rows.append(s.event_rows)
    psi = np.concatenate(chunks) if chunks else np.zeros((0, P * K))
    event_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    return ScoreResiduals(psi=psi, event_rows=event_rows,
                          total=psi.sum(axis=0), V=psi.T @ psi)
