"""Sparse assembly, constraint elimination and direct solves.

Constraints are removed by master-slave elimination ``u = T u_hat + g``;
Dirichlet values are never imposed by penalty. Solves go through a
Jacobi-scaled sparse LU. For symmetric matrices the ordering and pivoting
are set so that SuperLU factors along the diagonal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConstraintError, ContractError, RankDeficiencyError, SolveError

log = logging.getLogger(__name__)

PIVOT_RATIO_TOL = 1e-8
RESIDUAL_TOL = 1e-10


class TripletMatrix:
    """Coordinate-format sink. Duplicates are summed by :func:`finalize`."""

    def __init__(self, n_rows: int, n_cols: int | None = None):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_rows if n_cols is None else n_cols)
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, i: int, j: int, v: float) -> None:
        self.add_arrays([i], [j], [v])

    def add_arrays(self, rows, cols, vals) -> None:
        r = np.asarray(rows, dtype=np.int64).ravel()
        c = np.asarray(cols, dtype=np.int64).ravel()
        v = np.asarray(vals, dtype=float).ravel()
        if not (r.shape == c.shape == v.shape):
            raise ContractError("triplet arrays must have equal length")
        if r.size and (r.min() < 0 or r.max() >= self.n_rows or c.min() < 0 or c.max() >= self.n_cols):
            raise ContractError("triplet index out of range")
        self._rows.append(r)
        self._cols.append(c)
        self._vals.append(v)

    def add_blocks(self, dofs: np.ndarray, blocks: np.ndarray) -> None:
        """Scatter element blocks ``blocks[e]`` (k x k) onto ``dofs[e]`` (k,)."""
        dofs = np.asarray(dofs, dtype=np.int64)
        k = dofs.shape[1]
        rows = np.repeat(dofs, k, axis=1)
        cols = np.tile(dofs, (1, k))
        self.add_arrays(rows, cols, blocks.reshape(dofs.shape[0], k * k))

    @property
    def nnz_raw(self) -> int:
        return sum(a.size for a in self._vals)

    def arrays(self):
        if not self._rows:
            e = np.zeros(0, dtype=np.int64)
            return e, e, np.zeros(0)
        return np.concatenate(self._rows), np.concatenate(self._cols), np.concatenate(self._vals)


def finalize(tm: TripletMatrix) -> sp.csr_matrix:
    """Compressed matrix with duplicates summed in emission order."""
    r, c, v = tm.arrays()
    m = sp.coo_matrix((v, (r, c)), shape=(tm.n_rows, tm.n_cols)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


@dataclass
class Tie:
    slave: int
    masters: tuple[int, ...]
    coeffs: tuple[float, ...]
    offset: float = 0.0


@dataclass
class ConstraintSet:
    n_dofs: int
    dirichlet: dict[int, float] = field(default_factory=dict)
    ties: list[Tie] = field(default_factory=list)

    def add_dirichlet(self, dof: int, value: float = 0.0) -> None:
        self.dirichlet[int(dof)] = float(value)

    def add_dirichlet_many(self, dofs, values=0.0) -> None:
        vals = np.broadcast_to(np.asarray(values, dtype=float), np.shape(dofs))
        for d, v in zip(np.ravel(dofs), np.ravel(vals)):
            self.dirichlet[int(d)] = float(v)

    def add_tie(self, slave: int, masters, coeffs, offset: float = 0.0) -> None:
        masters = tuple(int(m) for m in np.atleast_1d(masters))
        coeffs = tuple(float(c) for c in np.atleast_1d(coeffs))
        if len(masters) != len(coeffs):
            raise ContractError("tie needs one coefficient per master")
        self.ties.append(Tie(int(slave), masters, coeffs, float(offset)))

    def validate(self) -> None:
        slaves = [t.slave for t in self.ties]
        if len(set(slaves)) != len(slaves):
            raise ConstraintError("a dof is tied more than once")
        both = set(slaves) & set(self.dirichlet)
        if both:
            raise ConstraintError(f"dofs {sorted(both)[:5]} are both Dirichlet and slave")
        for d in list(self.dirichlet) + slaves + [m for t in self.ties for m in t.masters]:
            if not 0 <= d < self.n_dofs:
                raise ConstraintError(f"constraint dof {d} out of range")


@dataclass
class Transformation:
    """``u = T @ u_hat + g``; ``free`` lists the independent dofs in column order."""

    T: sp.csr_matrix
    g: np.ndarray
    free: np.ndarray

    def expand(self, u_hat: np.ndarray) -> np.ndarray:
        return self.T @ u_hat + self.g

    def restrict(self, u: np.ndarray) -> np.ndarray:
        return u[self.free]


def build_transformation(cons: ConstraintSet) -> Transformation:
    cons.validate()
    n = cons.n_dofs
    tie_of = {t.slave: t for t in cons.ties}
    dependent = set(tie_of) | set(cons.dirichlet)
    free = np.array([d for d in range(n) if d not in dependent], dtype=np.int64)
    col = {int(d): k for k, d in enumerate(free)}

    # Resolve each tied dof to (free-dof coefficients, constant); DFS detects cycles.
    resolved: dict[int, tuple[dict[int, float], float]] = {}
    state: dict[int, int] = {}

    def resolve(d: int):
        if d in resolved:
            return resolved[d]
        if d in cons.dirichlet:
            return {}, cons.dirichlet[d]
        if d not in tie_of:
            return {col[d]: 1.0}, 0.0
        if state.get(d) == 1:
            raise ConstraintError(f"cyclic tie through dof {d}")
        state[d] = 1
        t = tie_of[d]
        acc: dict[int, float] = {}
        const = t.offset
        for m, c in zip(t.masters, t.coeffs):
            sub, sc = resolve(m)
            for k, v in sub.items():
                acc[k] = acc.get(k, 0.0) + c * v
            const += c * sc
        state[d] = 2
        resolved[d] = (acc, const)
        return resolved[d]

    rows, cols, vals = [], [], []
    g = np.zeros(n)
    rows.extend(free.tolist())
    cols.extend(range(free.size))
    vals.extend([1.0] * free.size)
    for d, v in cons.dirichlet.items():
        g[d] = v
    for d in tie_of:
        acc, const = resolve(d)
        g[d] = const
        for k, v in acc.items():
            rows.append(d)
            cols.append(k)
            vals.append(v)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(n, free.size))
    return Transformation(T=T, g=g, free=free)


@dataclass
class ReducedSystem:
    K: sp.csr_matrix
    f: np.ndarray
    transform: Transformation

    def recover(self, u_hat: np.ndarray) -> np.ndarray:
        return self.transform.expand(u_hat)


def eliminate_constraints(K, f, cons: ConstraintSet | None) -> ReducedSystem:
    """``K_hat = T^T K T`` and ``f_hat = T^T (f - K g)``."""
    K = sp.csr_matrix(K)
    f = np.asarray(f, dtype=float)
    n = K.shape[0]
    if cons is None:
        cons = ConstraintSet(n)
    if cons.n_dofs != n or f.shape != (n,):
        raise ContractError("constraint set, matrix and load vector sizes disagree")
    tr = build_transformation(cons)
    T = tr.T
    Kh = (T.T @ K @ T).tocsr()
    Kh.sort_indices()
    fh = T.T @ (f - K @ tr.g)
    return ReducedSystem(K=Kh, f=fh, transform=tr)


def reactions(K, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``r = K u - f``; nonzero only on constrained (and tie-master) dofs."""
    return K @ u - f


def is_symmetric(K, tol: float = 1e-12) -> bool:
    K = sp.csr_matrix(K)
    if K.shape[0] != K.shape[1]:
        return False
    d = abs(K - K.T)
    scale = abs(K).max() if K.nnz else 0.0
    return (d.max() if d.nnz else 0.0) <= tol * max(scale, np.finfo(float).tiny)


class Factorization:
    """Jacobi-scaled sparse LU with a rank check, reusable across right-hand sides."""

    def __init__(self, K, symmetric: bool | None = None, pivot_tol: float = PIVOT_RATIO_TOL):
        K = sp.csc_matrix(K, dtype=float)
        n = K.shape[0]
        if K.shape != (n, n):
            raise ContractError("matrix must be square")
        self.n = n
        self.K = K
        self.symmetric = is_symmetric(K) if symmetric is None else symmetric
        diag = np.abs(K.diagonal())
        diag[diag == 0.0] = 1.0
        self.scale = 1.0 / np.sqrt(diag)
        S = sp.diags(self.scale)
        Ks = sp.csc_matrix(S @ K @ S)
        self._lu = None
        if n == 0:
            return
        if self.symmetric:
            kw = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        else:
            kw = dict(permc_spec="COLAMD")
        try:
            lu = splu(Ks, **kw)
        except RuntimeError as exc:
            raise RankDeficiencyError(f"matrix is exactly singular ({exc})", _dense_null(Ks, self.scale)) from None
        piv = np.abs(lu.U.diagonal())
        ratio = piv.min() / piv.max()
        if ratio < pivot_tol:
            k = int(np.sum(piv < pivot_tol * piv.max()))
            raise RankDeficiencyError(
                f"matrix is rank deficient: {k} pivot(s) below {pivot_tol:g} of the largest",
                _inverse_iteration_null(lu, k, self.scale),
            )
        self._lu = lu

    def solve(self, f: np.ndarray, check: bool = True) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if self.n == 0:
            return np.zeros(0)
        fs = self.scale * f
        ys = self._lu.solve(fs)
        u = self.scale * ys
        if check:
            nf = np.linalg.norm(f)
            res = self.K @ u - f
            if nf == 0.0:
                return np.zeros_like(u)
            if np.linalg.norm(res) > RESIDUAL_TOL * nf:
                # One step of iterative refinement before giving up.
                u = u - self.scale * self._lu.solve(self.scale * res)
                res = self.K @ u - f
                rel = np.linalg.norm(res) / nf
                if rel > RESIDUAL_TOL:
                    raise SolveError(f"residual {rel:.3e} exceeds {RESIDUAL_TOL:g} after refinement")
        return u


def _inverse_iteration_null(lu, k: int, scale: np.ndarray, iters: int = 3) -> np.ndarray:
    n = scale.size
    rng = np.random.default_rng(12345)
    x = rng.standard_normal((n, max(k, 1)))
    for _ in range(iters):
        for c in range(x.shape[1]):
            y = lu.solve(x[:, c])
            x[:, c] = y / np.linalg.norm(y)
        x, _ = np.linalg.qr(x)
    v = scale[:, None] * x
    return v / np.linalg.norm(v, axis=0)


def _dense_null(Ks, scale, max_n: int = 3000):
    n = Ks.shape[0]
    if n > max_n:
        return None
    w, V = np.linalg.eigh(Ks.toarray() if sp.issparse(Ks) else Ks)
    tol = 1e-10 * max(abs(w).max(), 1e-300)
    sel = np.abs(w) <= tol
    if not np.any(sel):
        return None
    v = scale[:, None] * V[:, sel]
    return v / np.linalg.norm(v, axis=0)


def solve(K, f, symmetric: bool | None = None) -> np.ndarray:
    """Direct solve with residual check ``||K u - f|| <= 1e-10 ||f||``."""
    return Factorization(K, symmetric=symmetric).solve(f)


def solve_constrained(K, f, cons: ConstraintSet | None):
    """Eliminate, solve and recover. Returns ``(u, r)`` with ``r = K u - f``."""
    red = eliminate_constraints(K, f, cons)
    uh = solve(red.K, red.f)
    u = red.recover(uh)
    return u, reactions(sp.csr_matrix(K), u, np.asarray(f, dtype=float))
