"""Nonnegative low-rank approximation under generalized KL divergence.

The divergence is gKL(A, B) = sum_ij (A_ij*log(A_ij/B_ij) - A_ij + B_ij) with
the convention 0*log(0/x) = 0.  Two properties of its minimizers carry the
whole smoothing construction and are what the tests pin down:

* the best rank-1 approximation has a closed form, the outer product of the
  row-sum and column-sum profiles, and preserves both sum vectors exactly;
* at any stationary point of higher rank the row and column sums of the
  approximation match the input's.  An iterative solver stops short of
  stationarity, so after convergence each column is rescaled to match the
  input column sums exactly and the remaining row-sum deviation is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import FactorizationError

# Guard against exact zeros in denominators/logs; well below any real count.
_TINY = 1e-300


class SparseMatrix:
    """Sparse nonnegative matrix with explicit dimensions.

    Stored entries are strictly positive; zeros are dropped on construction.
    """

    __slots__ = ("rows", "cols", "ii", "jj", "vals")

    def __init__(self, rows: int, cols: int, entries: Dict[Tuple[int, int], float]):
        if rows < 1 or cols < 1:
            raise ValueError("dimensions must be >= 1")
        items = [(i, j, float(v)) for (i, j), v in entries.items() if v != 0.0]
        for i, j, v in items:
            if v < 0.0:
                raise ValueError(f"negative entry at ({i}, {j}): {v}")
            if not (0 <= i < rows and 0 <= j < cols):
                raise ValueError(f"entry ({i}, {j}) outside {rows}x{cols}")
        items.sort()
        self.rows = rows
        self.cols = cols
        self.ii = np.array([i for i, _, _ in items], dtype=np.int64)
        self.jj = np.array([j for _, j, _ in items], dtype=np.int64)
        self.vals = np.array([v for _, _, v in items], dtype=np.float64)

    @classmethod
    def from_dense(cls, arr) -> "SparseMatrix":
        arr = np.asarray(arr, dtype=np.float64)
        entries = {
            (int(i), int(j)): arr[i, j] for i, j in zip(*np.nonzero(arr))
        }
        return cls(arr.shape[0], arr.shape[1], entries)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.ii, self.jj] = self.vals
        return out

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.rows)
        np.add.at(out, self.ii, self.vals)
        return out

    def col_sums(self) -> np.ndarray:
        out = np.zeros(self.cols)
        np.add.at(out, self.jj, self.vals)
        return out

    def total(self) -> float:
        return float(self.vals.sum())


class FactorPair:
    """Rank-kappa factorization L (rows x k) times R (k x cols).

    Arrays are frozen after construction; the pair is safe to share across
    threads.
    """

    __slots__ = ("L", "R")

    def __init__(self, L: np.ndarray, R: np.ndarray):
        L = np.ascontiguousarray(L, dtype=np.float64)
        R = np.ascontiguousarray(R, dtype=np.float64)
        if L.ndim != 2 or R.ndim != 2 or L.shape[1] != R.shape[0]:
            raise ValueError(f"incompatible factor shapes {L.shape} x {R.shape}")
        if (L < 0).any() or (R < 0).any():
            raise ValueError("factors must be nonnegative")
        L.setflags(write=False)
        R.setflags(write=False)
        self.L = L
        self.R = R

    @property
    def rank(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.L.shape[0], self.R.shape[1])

    def product(self) -> np.ndarray:
        return self.L @ self.R

    def row_sums(self) -> np.ndarray:
        return self.L @ self.R.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.L.sum(axis=0) @ self.R

    def total(self) -> float:
        return float(self.L.sum(axis=0) @ self.R.sum(axis=1))

    def values_at(self, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
        """Approximation values at the given coordinate lists, O(nnz*k)."""
        if len(ii) == 0:
            return np.zeros(0)
        return np.einsum("nk,kn->n", self.L[ii], self.R[:, jj])


@dataclass
class ConvergenceReport:
    iterations: int
    final_gkl: float
    max_row_residual: float
    max_col_residual: float
    rank: int
    converged: bool
    objective_history: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def gkl(A: Union[SparseMatrix, np.ndarray], B) -> float:
    """Generalized KL divergence sum_ij (A*log(A/B) - A + B), 0*log0 := 0.

    ``B`` may be a dense array or a FactorPair.  Returns math.inf when some
    A_ij > 0 sits on a zero of B.
    """
    if not isinstance(A, SparseMatrix):
        A = SparseMatrix.from_dense(A)
    if isinstance(B, FactorPair):
        b_at = B.values_at(A.ii, A.jj)
        b_total = B.total()
    else:
        B = np.asarray(B, dtype=np.float64)
        if B.shape != (A.rows, A.cols):
            raise ValueError(f"shape mismatch {B.shape} vs {(A.rows, A.cols)}")
        b_at = B[A.ii, A.jj]
        b_total = float(B.sum())
    if (b_at <= 0.0).any():
        return math.inf
    log_term = float(np.dot(A.vals, np.log(A.vals / b_at)))
    return log_term - A.total() + b_total


def best_rank1(M: SparseMatrix) -> FactorPair:
    """Closed-form best rank-1 gKL approximation: (row_sums/total) x col_sums.

    Both the row sums and the column sums of the product equal M's exactly
    (up to one rounding each), which is what the ensemble's exact-marginal
    guarantee leans on.
    """
    if M.nnz == 0:
        raise ValueError("best_rank1 of an all-zero matrix")
    total = M.total()
    L = (M.row_sums() / total).reshape(-1, 1)
    R = M.col_sums().reshape(1, -1)
    return FactorPair(L, R)


def sum_residual(M: SparseMatrix, F: FactorPair) -> Tuple[float, float]:
    """(max |row-sum deviation|, max |col-sum deviation|) of F vs M."""
    if F.shape != (M.rows, M.cols):
        raise ValueError(f"shape mismatch {F.shape} vs {(M.rows, M.cols)}")
    row = float(np.abs(F.row_sums() - M.row_sums()).max(initial=0.0))
    col = float(np.abs(F.col_sums() - M.col_sums()).max(initial=0.0))
    return row, col


def nmf_gkl(
    M: SparseMatrix,
    k: int,
    max_iters: int = 200,
    rel_tol: float = 1e-6,
    eps: float = 1e-12,
    seed: Union[int, np.random.SeedSequence] = 0,
    enforce_col_sums: bool = True,
) -> Tuple[FactorPair, ConvergenceReport]:
    """Rank-k nonnegative factorization of M under gKL.

    Lee-Seung multiplicative updates on the sparse support; the objective is
    non-increasing across iterations and is recorded per iteration in the
    report.  Stops when the relative objective improvement drops below
    ``rel_tol`` or after ``max_iters``.  Deterministic for a given seed.

    k is clamped (with a report warning) to the number of nonzero rows/
    columns.  k = 1 short-circuits to the closed form, which is the global
    optimum.  After convergence each column of the approximation is rescaled
    so its sum matches M's exactly; the row-sum deviation that remains is
    reported.  The rank-1 closed form preserves both sums to machine
    precision and is left unscaled.
    """
    if k < 1:
        raise ValueError(f"rank must be >= 1, got {k}")
    if M.nnz == 0:
        raise ValueError("cannot factorize an all-zero matrix")

    warnings: List[str] = []
    eff_rows = len(np.unique(M.ii))
    eff_cols = len(np.unique(M.jj))
    k_eff = min(k, eff_rows, eff_cols)
    if k_eff < k:
        warnings.append(
            f"rank {k} clamped to {k_eff} (effective dims {eff_rows}x{eff_cols})"
        )

    if k_eff == 1:
        pair = best_rank1(M)
        row_res, col_res = sum_residual(M, pair)
        obj = gkl(M, pair)
        return pair, ConvergenceReport(
            iterations=0,
            final_gkl=obj,
            max_row_residual=row_res,
            max_col_residual=col_res,
            rank=1,
            converged=True,
            objective_history=[obj],
            warnings=warnings,
        )

    rng = np.random.default_rng(seed)
    total_m = M.total()
    # Uniform in (0, 1], then scale so total(W@H) == total(M).
    W = 1.0 - rng.random((M.rows, k_eff))
    H = 1.0 - rng.random((k_eff, M.cols))
    W *= total_m / (W.sum(axis=0) @ H.sum(axis=1))

    ii, jj, vals = M.ii, M.jj, M.vals
    # Two fixed sparse templates over M's support: row-major for the W
    # update, column-major (the transpose) for the H update.  Only .data is
    # rewritten each iteration.
    S = sp.csr_matrix((vals, (ii, jj)), shape=(M.rows, M.cols))
    ST = sp.csr_matrix((vals, (jj, ii)), shape=(M.cols, M.rows))
    order_t = np.lexsort((ii, jj))  # template data order of ST

    def predicted() -> np.ndarray:
        return np.einsum("nk,kn->n", W[ii], H[:, jj])

    def objective() -> float:
        pred = np.maximum(predicted(), _TINY)
        approx_total = W.sum(axis=0) @ H.sum(axis=1)
        return float(np.dot(vals, np.log(vals / pred)) - total_m + approx_total)

    history = [objective()]
    iterations = 0
    converged = False
    for it in range(1, max_iters + 1):
        ratio = vals / np.maximum(predicted(), eps)
        S.data = ratio
        W *= (S @ H.T) / np.maximum(H.sum(axis=1), eps)

        ratio = vals / np.maximum(predicted(), eps)
        ST.data = ratio[order_t]
        H *= (ST @ W).T / np.maximum(W.sum(axis=0), eps)[:, None]

        if not (np.isfinite(W).all() and np.isfinite(H).all()):
            raise FactorizationError(f"non-finite factor values at iteration {it}")

        obj = objective()
        prev = history[-1]
        history.append(obj)
        iterations = it
        if obj > prev + 1e-9 * max(1.0, abs(prev)):
            warnings.append(f"objective increased at iteration {it}: {prev} -> {obj}")
        if prev - obj < rel_tol * max(abs(prev), _TINY):
            converged = True
            break

    if enforce_col_sums:
        target = M.col_sums()
        approx_cols = W.sum(axis=0) @ H
        H = H * (target / np.maximum(approx_cols, _TINY))[None, :]

    pair = FactorPair(W, H)
    row_res, col_res = sum_residual(M, pair)
    return pair, ConvergenceReport(
        iterations=iterations,
        final_gkl=gkl(M, pair),
        max_row_residual=row_res,
        max_col_residual=col_res,
        rank=k_eff,
        converged=converged,
        objective_history=history,
        warnings=warnings,
    )
