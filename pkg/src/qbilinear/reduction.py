"""Model order reduction for bilinear systems.

Covers stabilization of ``A``, (generalized) Lyapunov and Sylvester
solvers, square-root balanced truncation with simple or singular
perturbation truncation, BIRKA and the H2 error of a reduced model.

All matrices are handled densely; the systems targeted here have at most a
few thousand states.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment
from scipy.sparse.linalg import LinearOperator, bicg

from .errors import (
    NotConverged,
    ProjectorSingular,
    RankDeficient,
    SingularA22,
    SingularLyapunov,
    StillUnstable,
    TooLarge,
    ValidationError,
)
from .system import BilinearSystem

MAX_DENSE = 2000


# --- dense views -------------------------------------------------------------


@dataclass(frozen=True)
class Dense:
    """Dense ``(A, N_k, B, C)`` of ``x' = A x + sum_k u_k (N_k x + b_k) i``.

    ``B`` holds the ``b_k`` as columns; ``C`` holds the output rows.
    """

    A: np.ndarray
    N: tuple
    B: np.ndarray
    C: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


def dense(system: BilinearSystem, max_dim: int = MAX_DENSE) -> Dense:
    if system.dim > max_dim:
        raise TooLarge(f"dense reduction limited to {max_dim} states, system has {system.dim}")
    to = lambda M: M.toarray() if sp.issparse(M) else np.asarray(M)
    return Dense(to(system.A).astype(complex), tuple(to(Nk).astype(complex) for Nk in system.N),
                 np.asarray(system.b, dtype=complex).T.copy(), np.asarray(system.C, dtype=complex))


def _from_dense(template: BilinearSystem, d: Dense, x0, kind="reduced", meta=None) -> BilinearSystem:
    return BilinearSystem(kind=kind, A=d.A, N=list(d.N), b=d.B.T, C=d.C, D=[],
                          x_e=np.zeros(d.n, complex), x0=np.asarray(x0, complex),
                          labels=list(template.labels), y_offset=np.array(template.y_offset),
                          xi=template.xi, meta=dict(meta or {}))


# --- stabilization -----------------------------------------------------------


@dataclass(frozen=True)
class Shift:
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValidationError("shift alpha must be positive")


@dataclass(frozen=True)
class SplitUnstable:
    M: int = 1

    def __post_init__(self):
        if self.M < 0:
            raise ValidationError("M must be >= 0")


@dataclass
class StabilizedSystem:
    """Stable system plus what is needed to re-embed reduced models.

    For a split, ``S1``/``T1`` project onto the removed (least stable)
    invariant subspace and ``S2``/``T2`` onto the stable one, with
    ``[S1; S2] = [T1, T2]^{-1}``.
    """

    system: BilinearSystem
    method: object
    original: BilinearSystem
    S1: np.ndarray | None = None
    T1: np.ndarray | None = None
    S2: np.ndarray | None = None
    T2: np.ndarray | None = None
    removed_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    @property
    def M(self) -> int:
        return 0 if self.S1 is None else self.S1.shape[0]


def max_real_eigenvalue(A) -> float:
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    return float(np.max(np.linalg.eigvals(A).real))


def stabilize(system: BilinearSystem, method) -> StabilizedSystem:
    """Make ``A`` Hurwitz by a spectral shift or by splitting off its least stable part."""
    if isinstance(method, Shift):
        stable = replace(system, A=system.A - method.alpha * sp.identity(system.dim, format="csr"),
                         meta={**system.meta, "stabilized": f"shift {method.alpha}"})
        return StabilizedSystem(stable, method, system)
    if not isinstance(method, SplitUnstable):
        raise ValidationError(f"unknown stabilization {method!r}")
    d = dense(system)
    n, M = d.n, method.M
    if M >= n:
        raise ValidationError("cannot split off all components")
    if M == 0:
        eye = np.eye(n, dtype=complex)
        S1 = T1 = np.zeros((0, n), complex)
        S2 = T2 = eye
        T1 = np.zeros((n, 0), complex)
        lam_removed = np.zeros(0, complex)
        rest = np.linalg.eigvals(d.A)
    else:
        lam, vl, vr = la.eig(d.A, left=True, right=True)
        order = np.argsort(np.abs(lam.real), kind="stable")
        sel, rest_idx = order[:M], order[M:]
        R = vr[:, sel]
        L = vl[:, sel]
        L = L @ np.linalg.inv(R.conj().T @ L).conj().T  # biorthonormal: L^H R = I
        P = R @ L.conj().T
        U, s, _ = np.linalg.svd(np.eye(n) - P)
        Q = U[:, : n - M]
        T1, S1 = R, L.conj().T
        T2, S2 = Q, Q.conj().T @ (np.eye(n) - P)
        lam_removed = lam[sel]
        rest = lam[rest_idx]
    scale = max(1.0, float(np.max(np.abs(rest)))) if len(rest) else 1.0
    if len(rest) and np.max(rest.real) >= -1e-13 * scale:
        raise StillUnstable(f"max Re lambda = {np.max(rest.real):.3e} after removing {M} components")
    red = Dense(S2 @ d.A @ T2, tuple(S2 @ Nk @ T2 for Nk in d.N), S2 @ d.B, d.C @ T2)
    stable = _from_dense(system, red, S2 @ system.x0, kind=system.kind,
                         meta={**system.meta, "stabilized": f"split {M}"})
    return StabilizedSystem(stable, method, system, S1, T1, S2, T2, lam_removed)


# --- scaling and solvability -------------------------------------------------


def scale(system, xi: float):
    """``N -> N/xi``, ``b -> b/xi``; the stored ``xi`` keeps physical fields unchanged.

    A :class:`StabilizedSystem` is scaled as a whole (its stable part and the
    original it re-embeds into).
    """
    if xi < 1:
        raise ValidationError("scaling factor xi must be >= 1")
    if xi == 1:
        return system
    if isinstance(system, StabilizedSystem):
        return replace(system, system=scale(system.system, xi), original=scale(system.original, xi))
    return replace(system, N=[Nk / xi for Nk in system.N], b=system.b / xi, xi=system.xi * xi)


@dataclass(frozen=True)
class Solvability:
    lam: float
    a: float
    margin: float

    @property
    def ok(self) -> bool:
        return self.margin < 1.0


def solvability_check(A, N) -> Solvability:
    """Sufficient condition ``lambda^2/(2a) sum ||N_k||_2^2 < 1`` for the Gramians to exist.

    ``lambda`` is the condition number of the (column-normalized) eigenvector
    matrix of ``A``, ``a`` the distance of its spectrum from the imaginary axis.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A)
    lam, V = np.linalg.eig(A)
    a = -float(np.max(lam.real))
    if a <= 0:
        raise ValidationError("solvability check needs a stable A")
    V = V / np.linalg.norm(V, axis=0)
    kappa = float(np.linalg.cond(V))
    nsum = sum(float(np.linalg.norm(Nk.toarray() if sp.issparse(Nk) else Nk, 2)) ** 2 for Nk in N)
    return Solvability(kappa, a, kappa**2 / (2 * a) * nsum)


def fixed_point_radius(A, N, iters: int = 60, seed: int = 0) -> float:
    """Spectral radius of ``X -> L_A^{-1}(sum_k N_k X N_k^H)``.

    The fixed-point Gramian iteration converges iff this is below 1; it
    scales as ``1/xi^2`` under field scaling.  Estimated by power iteration.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=complex)
    N = [np.asarray(Nk.toarray() if sp.issparse(Nk) else Nk, dtype=complex) for Nk in N]
    if not N:
        return 0.0
    s = _Schur(A)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal(A.shape)
    X = X @ X.T + 0j
    rho = 0.0
    for _ in range(iters):
        Y = -_sylvester_schur(s, s, sum(Nk @ X @ Nk.conj().T for Nk in N))
        rho = float(np.linalg.norm(Y) / np.linalg.norm(X))
        X = Y / np.linalg.norm(Y)
    return rho


# --- Lyapunov and Sylvester solvers --------------------------------------------


class _Schur:
    """Complex Schur form ``A = U T U^H`` cached for repeated solves."""

    def __init__(self, A):
        self.T, self.U = la.schur(np.asarray(A, dtype=complex), output="complex")
        self.eig = np.diag(self.T).copy()


_trsyl = la.get_lapack_funcs("trsyl", (np.zeros(1, complex),))


def _sylvester_schur(sa: _Schur, sb: _Schur, Q):
    """Solve ``A X + X B^H + Q = 0`` using cached Schur forms of ``A`` and ``B``."""
    F = -(sa.U.conj().T @ Q @ sb.U)
    Y, scl, info = _trsyl(sa.T, sb.T, F, trana="N", tranb="C", isgn=1)
    if info < 0:
        raise ValueError(f"trsyl argument error {info}")
    return sa.U @ (Y / scl) @ sb.U.conj().T


def _check_disjoint(ea, eb, what):
    s = ea[:, None] + np.conj(eb)[None, :]
    scale = max(1.0, float(np.max(np.abs(ea))), float(np.max(np.abs(eb))))
    if np.min(np.abs(s)) < 1e-13 * scale:
        raise SingularLyapunov(f"{what}: eigenvalue pair with lambda_i + conj(mu_j) = 0")


def solve_lyapunov(A, Q):
    """``A W + W A^H + Q = 0`` by the Bartels-Stewart method."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=complex)
    s = _Schur(A)
    _check_disjoint(s.eig, s.eig, "Lyapunov equation")
    W = _sylvester_schur(s, s, np.asarray(Q, dtype=complex))
    return 0.5 * (W + W.conj().T)


def solve_sylvester(A, Ahat, Q):
    """``A X + X Ahat^H + Q = 0``."""
    sa, sb = _Schur(A), _Schur(Ahat)
    _check_disjoint(sa.eig, sb.eig, "Sylvester equation")
    return _sylvester_schur(sa, sb, np.asarray(Q, dtype=complex))


@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float
    converged: bool


def _gen_residual(A, Ahat, N, Nhat, Q, X):
    R = A @ X + X @ Ahat.conj().T + Q
    for Nk, Nh in zip(N, Nhat):
        R = R + Nk @ X @ Nh.conj().T
    return float(np.linalg.norm(R) / max(np.linalg.norm(Q), 1e-300))


def solve_generalized_sylvester(A, Ahat, N, Nhat, Q, method="iterative", tol=1e-10, max_iter=500,
                                return_info=False):
    """``A X + X Ahat^H + sum_k N_k X Nhat_k^H + Q = 0``.

    ``method='iterative'`` runs the fixed-point recursion with one standard
    Sylvester solve per step and stops when the relative update falls below
    ``tol``; ``'krylov'`` runs BiCG on the vectorized equation, preconditioned
    by the standard Sylvester solve.  ``Q = B Bhat^H`` gives the controllability
    form; the dual is obtained by passing ``A^H, Ahat^H, N^H, Nhat^H`` and
    ``Q = -C^H Chat``.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=complex)
    Ahat = np.asarray(Ahat.toarray() if sp.issparse(Ahat) else Ahat, dtype=complex)
    N = [np.asarray(Nk.toarray() if sp.issparse(Nk) else Nk, dtype=complex) for Nk in N]
    Nhat = [np.asarray(Nk.toarray() if sp.issparse(Nk) else Nk, dtype=complex) for Nk in Nhat]
    Q = np.asarray(Q, dtype=complex)
    sa = _Schur(A)
    sb = sa if Ahat is A else _Schur(Ahat)
    _check_disjoint(sa.eig, sb.eig, "generalized Sylvester equation")
    hermitian = Ahat is A and all(a is b for a, b in zip(N, Nhat))

    def lift(X):
        S = np.zeros_like(Q)
        for Nk, Nh in zip(N, Nhat):
            S = S + Nk @ X @ Nh.conj().T
        return S

    if method in ("iterative", "iter"):
        X = _sylvester_schur(sa, sb, Q)
        first = max(np.linalg.norm(X), 1e-300)
        it, converged, diverged = 0, not N, False
        for it in range(1, max_iter + 1):
            if not N:
                break
            Xn = _sylvester_schur(sa, sb, Q + lift(X))
            if hermitian:
                Xn = 0.5 * (Xn + Xn.conj().T)
            size = np.linalg.norm(Xn)
            if not np.isfinite(size) or size > 1e12 * first:
                diverged = True
                break
            delta = np.linalg.norm(Xn - X) / max(size, 1e-300)
            X = Xn
            if delta < tol:
                converged = True
                break
        if diverged:
            raise NotConverged("fixed-point iteration diverges: the bilinear terms are too strong "
                               "for the Gramians to exist; scale the field by a larger xi",
                               result=X, residual=np.inf)
        res = _gen_residual(A, Ahat, N, Nhat, Q, X)
        info = SolveInfo("iterative", it, res, converged)
    elif method in ("krylov", "bicg"):
        shape = Q.shape
        size = Q.size
        sah = _Schur(A.conj().T)
        sbh = _Schur(Ahat.conj().T)

        def L(v):
            X = v.reshape(shape)
            return (A @ X + X @ Ahat.conj().T + lift(X)).ravel()

        def Lh(v):
            Y = v.reshape(shape)
            out = A.conj().T @ Y + Y @ Ahat
            for Nk, Nh in zip(N, Nhat):
                out = out + Nk.conj().T @ Y @ Nh
            return out.ravel()

        # preconditioner: inverse of the standard Sylvester operator and its adjoint
        def P(v):
            return -_sylvester_schur(sa, sb, v.reshape(shape)).ravel()

        def Ph(v):
            return -_sylvester_schur(sah, sbh, v.reshape(shape)).ravel()

        op = LinearOperator((size, size), matvec=L, rmatvec=Lh, dtype=complex)
        pre = LinearOperator((size, size), matvec=P, rmatvec=Ph, dtype=complex)
        count = [0]

        def cb(_):
            count[0] += 1

        x0 = P(-Q.ravel())
        sol, flag = bicg(op, -Q.ravel(), x0=x0, rtol=tol, maxiter=max_iter, M=pre, callback=cb)
        X = sol.reshape(shape)
        if hermitian:
            X = 0.5 * (X + X.conj().T)
        res = _gen_residual(A, Ahat, N, Nhat, Q, X)
        info = SolveInfo("krylov", count[0], res, flag == 0)
    else:
        raise ValidationError(f"unknown solver method {method!r}")
    if not info.converged:
        raise NotConverged(f"{info.method} solver did not converge in {max_iter} iterations",
                           result=X, residual=info.residual)
    return (X, info) if return_info else X


def solve_generalized_lyapunov(A, N, Q, method="iterative", tol=1e-10, max_iter=500,
                               return_info=False):
    """``A W + W A^H + sum_k N_k W N_k^H + Q = 0`` (Hermitian solution)."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=complex)
    N = [np.asarray(Nk.toarray() if sp.issparse(Nk) else Nk, dtype=complex) for Nk in N]
    return solve_generalized_sylvester(A, A, N, N, Q, method, tol, max_iter, return_info)


@dataclass
class GramianPair:
    W_C: np.ndarray
    W_O: np.ndarray
    info: dict = field(default_factory=dict)


def gramians(system: BilinearSystem, method="iterative", tol=1e-10, max_iter=500) -> GramianPair:
    """Controllability and observability Gramians of a stable system."""
    d = dense(system)
    if max_real_eigenvalue(d.A) >= 0:
        raise ValidationError("Gramians need a stable A (stabilize first)")
    check = solvability_check(d.A, d.N)
    if not check.ok:
        warnings.warn(f"solvability bound violated (margin {check.margin:.3g}); consider a larger xi",
                      RuntimeWarning, stacklevel=2)
    WC, ic = solve_generalized_lyapunov(d.A, d.N, d.B @ d.B.conj().T, method, tol, max_iter, True)
    AH = d.A.conj().T
    NH = [Nk.conj().T for Nk in d.N]
    WO, io = solve_generalized_lyapunov(AH, NH, d.C.conj().T @ d.C, method, tol, max_iter, True)
    return GramianPair(WC, WO, {"controllability": ic, "observability": io, "solvability": check})


# --- balancing and truncation ------------------------------------------------


@dataclass
class ReductionResult:
    """Projection ``S`` (d x n), ``T`` (n x d) and the reduced model.

    ``stable`` is the reduced model of the stabilized system (suitable for
    H2 comparisons); ``reduced`` additionally re-embeds a split-off unstable
    component and acts on the original shifted coordinates.
    """

    S: np.ndarray
    T: np.ndarray
    hsv: np.ndarray | None
    stable: BilinearSystem
    method: str
    source: StabilizedSystem | None = None
    reduced: BilinearSystem | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reduced is None:
            self.reduced = self.stable


def _factor_psd(W):
    lam, U = np.linalg.eigh(0.5 * (W + W.conj().T))
    keep = lam > 1e-12 * max(float(lam.max()), 0.0)
    return U[:, keep] * np.sqrt(lam[keep])


def _as_stabilized(obj) -> StabilizedSystem:
    if isinstance(obj, StabilizedSystem):
        return obj
    return StabilizedSystem(obj, None, obj)


def balance_srbt(system, W_C=None, W_O=None, method="iterative", tol=1e-10,
                 max_iter=500) -> ReductionResult:
    """Square-root balancing; returns the full-order balanced realization.

    ``system`` may be a :class:`StabilizedSystem` (needed for re-embedding).
    Gramians are computed if not supplied.
    """
    src = _as_stabilized(system)
    sysd = src.system
    if W_C is None or W_O is None:
        g = gramians(sysd, method, tol, max_iter)
        W_C, W_O = g.W_C, g.W_O
    ZC, ZO = _factor_psd(W_C), _factor_psd(W_O)
    U, s, Vh = np.linalg.svd(ZO.conj().T @ ZC, full_matrices=False)
    keep = s > 1e-14 * s[0]
    U, s, V = U[:, keep], s[keep], Vh[keep].conj().T
    isq = 1.0 / np.sqrt(s)
    S = (isq[:, None] * U.conj().T) @ ZO.conj().T
    T = ZC @ (V * isq[None, :])
    d = dense(sysd)
    bal = Dense(S @ d.A @ T, tuple(S @ Nk @ T for Nk in d.N), S @ d.B, d.C @ T)
    out = _from_dense(sysd, bal, S @ sysd.x0, meta={"method": "srbt", "hsv": s})
    err_c = np.linalg.norm(S @ W_C @ S.conj().T - np.diag(s)) / np.linalg.norm(s)
    err_o = np.linalg.norm(T.conj().T @ W_O @ T - np.diag(s)) / np.linalg.norm(s)
    return ReductionResult(S, T, s, out, "SRBT", src, info={"balance_error": (err_c, err_o)})


def _embed(src: StabilizedSystem, red: Dense, S_red, T_red, meta) -> BilinearSystem:
    """Re-attach the split-off component ``x1`` to a reduced stable model."""
    orig = src.original
    ratio = src.system.xi / orig.xi
    if not np.isclose(ratio, 1.0):
        orig = scale(orig, ratio)
    if src.M == 0 or src.S1 is None:
        S2 = src.S2 if src.S2 is not None else None
        x0 = S_red @ (S2 @ orig.x0 if S2 is not None else src.system.x0)
        return _from_dense(orig, red, x0, meta=meta)
    d = dense(orig)
    S1, T1, S2, T2 = src.S1, src.T1, src.S2, src.T2
    St = np.vstack([S1, S_red @ S2])
    Tt = np.hstack([T1, T2 @ T_red])
    M = S1.shape[0]
    A = np.zeros((M + red.n,) * 2, complex)
    A[:M, :M] = S1 @ d.A @ T1
    A[M:, M:] = red.A
    Ns = []
    for Nk, Nr in zip(d.N, red.N):
        Nf = St @ Nk @ Tt
        Nf[M:, M:] = Nr
        Ns.append(Nf)
    B = np.vstack([S1 @ d.B, red.B])
    C = np.hstack([d.C @ T1, red.C])
    return _from_dense(orig, Dense(A, tuple(Ns), B, C), St @ orig.x0, meta=meta)


def truncate(result: ReductionResult, d: int, mode: str = "simple",
             embed: bool = True) -> ReductionResult:
    """Keep the ``d`` leading balanced states (``mode='simple'``) or average out the rest
    by singular perturbation (``mode='spt'``)."""
    mode = mode.lower()
    if mode in ("singularperturbation", "singular_perturbation"):
        mode = "spt"
    if mode not in ("simple", "spt"):
        raise ValidationError("mode must be 'simple' or 'spt'")
    bal = dense(result.stable)
    n = bal.n
    if not 1 <= d <= n:
        if d > n and result.hsv is not None:
            raise RankDeficient(f"balanced realization has rank {n} < {d}")
        raise ValidationError(f"need 1 <= d <= {n}")
    k1, k2 = slice(0, d), slice(d, n)
    A11, C1 = bal.A[k1, k1], bal.C[:, k1]
    N11 = [Nk[k1, k1] for Nk in bal.N]
    if mode == "spt" and d < n:
        A22 = bal.A[k2, k2]
        if np.linalg.cond(A22) > 1e14:
            raise SingularA22("A22 block is singular; singular perturbation undefined")
        G = np.linalg.solve(A22, bal.A[k2, k1])  # A22^{-1} A21
        A11 = A11 - bal.A[k1, k2] @ G
        N11 = [Nk[k1, k1] - Nk[k1, k2] @ G for Nk in bal.N]
        C1 = C1 - bal.C[:, k2] @ G
    red = Dense(A11, tuple(N11), bal.B[k1], C1)
    S_red, T_red = result.S[:d], result.T[:, :d]
    meta = {"method": f"srbt-{mode}", "d": d}
    stable = _from_dense(result.stable, red, result.stable.x0[:d], meta=meta)
    src = result.source
    full = _embed(src, red, S_red, T_red, meta) if (embed and src is not None) else stable
    return ReductionResult(S_red, T_red, None if result.hsv is None else result.hsv[:d], stable,
                           f"SRBT-{'Simple' if mode == 'simple' else 'SPT'}", src, full)


# --- BIRKA ---------------------------------------------------------------------


def _spectral_distance(a, b) -> float:
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


def birka(system, d: int, max_iter: int = 200, conv_tol: float = 1e-6, seed: int = 0,
          method: str = "iterative", solver_tol: float = 1e-10, solver_max_iter: int = 500,
          embed: bool = True) -> ReductionResult:
    """Bilinear iterative rational Krylov reduction to order ``d``."""
    src = _as_stabilized(system)
    full = dense(src.system)
    n = full.n
    if not 1 <= d <= n:
        raise ValidationError(f"need 1 <= d <= {n}")
    rng = np.random.default_rng(seed)

    def orth(X):
        q, _ = np.linalg.qr(X)
        return q

    def project(V, W):
        G = W.conj().T @ V
        if np.linalg.cond(G) > 1e12:
            raise ProjectorSingular("W^H V is singular; try another seed")
        S = np.linalg.solve(G, W.conj().T)
        return S, Dense(S @ full.A @ V, tuple(S @ Nk @ V for Nk in full.N), S @ full.B, full.C @ V)

    V = orth(rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d)))
    W = orth(rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d)))
    S, red = project(V, W)
    spec = np.linalg.eigvals(red.A)
    history, converged, it = [], False, 0
    AH = full.A.conj().T
    NH = [Nk.conj().T for Nk in full.N]
    for it in range(1, max_iter + 1):
        X = solve_generalized_sylvester(full.A, red.A, full.N, red.N, full.B @ red.B.conj().T,
                                        method, solver_tol, solver_max_iter)
        Y = solve_generalized_sylvester(AH, red.A.conj().T, NH, [Nk.conj().T for Nk in red.N],
                                        -full.C.conj().T @ red.C, method, solver_tol,
                                        solver_max_iter)
        V, W = orth(X), orth(Y)
        S, red = project(V, W)
        new_spec = np.linalg.eigvals(red.A)
        change = _spectral_distance(new_spec, spec)
        history.append(change)
        spec = new_spec
        if change < conv_tol:
            converged = True
            break
    meta = {"method": "birka", "d": d, "iterations": it, "converged": converged}
    stable = _from_dense(src.system, red, S @ src.system.x0, meta=meta)
    fullsys = _embed(src, red, S, V, meta) if (embed and src.M > 0) else stable
    res = ReductionResult(S, V, None, stable, "BIRKA", src, fullsys,
                          info={"history": history, "converged": converged, "iterations": it})
    if not converged:
        warnings.warn(f"BIRKA not converged after {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return res


# --- H2 error --------------------------------------------------------------------


@dataclass(frozen=True)
class H2Error:
    value: float  # tr(C_E W_E C_E^H)
    dual: float  # tr(B_E^H W_E,O B_E)
    reference: float  # tr(C W C^H) of the full system

    @property
    def relative(self) -> float:
        return self.value / self.reference if self.reference else float("nan")

    @property
    def consistent(self) -> bool:
        return abs(self.value - self.dual) <= 1e-6 * max(abs(self.reference), 1e-300)


def _stable_of(obj) -> BilinearSystem:
    if isinstance(obj, ReductionResult):
        return obj.stable
    if isinstance(obj, StabilizedSystem):
        return obj.system
    return obj


def h2_error(system, reduced, method="iterative", tol=1e-12, max_iter=1000) -> H2Error:
    """Squared H2 norm of the error system ``(full) - (reduced)``."""
    f, r = dense(_stable_of(system)), dense(_stable_of(reduced))
    if f.B.shape[1] != r.B.shape[1] or f.C.shape[0] != r.C.shape[0]:
        raise ValidationError("systems differ in inputs or outputs")
    n, d = f.n, r.n
    AE = la.block_diag(f.A, r.A)
    NE = [la.block_diag(a, b) for a, b in zip(f.N, r.N)]
    BE = np.vstack([f.B, r.B])
    CE = np.hstack([f.C, -r.C])
    WE = solve_generalized_lyapunov(AE, NE, BE @ BE.conj().T, method, tol, max_iter)
    WO = solve_generalized_lyapunov(AE.conj().T, [Nk.conj().T for Nk in NE], CE.conj().T @ CE,
                                    method, tol, max_iter)
    val = float(np.real(np.trace(CE @ WE @ CE.conj().T)))
    dual = float(np.real(np.trace(BE.conj().T @ WO @ BE)))
    ref = float(np.real(np.trace(f.C @ WE[:n, :n] @ f.C.conj().T)))
    return H2Error(val, dual, ref)
