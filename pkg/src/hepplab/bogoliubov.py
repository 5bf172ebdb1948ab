"""Quadratic fluctuation dynamics along a classical trajectory.

Along phi_t the second Taylor coefficient V2(t) of the potential defines a
time-dependent quadratic Hamiltonian.  This module builds it, integrates the
corresponding unitary propagator on a truncated Fock space and the real-linear
classical flow, and transports Wick symbols through the quadratic evolution.

Conventions: for a real-linear map z -> P z + Q conj(z), P and Q are stored as
matrices.  The interaction-picture flow is (L, Aa); the full flow is
(e^{-itA} L, e^{-itA} Aa).
"""
from dataclasses import dataclass, field
from math import factorial

import numpy as np

from . import ode
from .classical import taylor_coefficients
from .errors import NumericalError, RangeError, TransportMismatch
from .fock import free_evolution, number_op
from .settings import DEFAULT_TOLERANCES
from .tensor import SymTensor, conj_apply, embed
from .wick import (PolySymbol, compose_linear, quantize, quadratic_symbol,
                   second_order_operator)


# ---------------------------------------------------------------------------
# quadratic path

def _pairing_matrix(space):
    d = space.d
    Pi = np.zeros((d, d))
    pi = range(d) if space.pairing is None else space.pairing
    for i, j in enumerate(pi):
        Pi[i, j] = 1.0
    return Pi


def quadratic_generator_matrices(space, V2, t):
    """(X, Y, Z) of the interaction-picture generator at time t.

    F_{V2}(e^{-itA} z) = conj(z)^T X conj(z) + conj(z)^T Y z + z^T Z z.
    With S the full symmetric matrix of V2 and conj(w) = conj(z) + Pi z,
    F_{V2}(z) = conj(w)^T S conj(w) / sqrt(2).
    """
    S = embed(V2) if V2.n == 2 else np.zeros((space.d, space.d))
    S = np.asarray(S, dtype=complex) / np.sqrt(2)
    U = space.propagator(t)
    Pi = _pairing_matrix(space)
    Ub = U.conj()
    X = Ub.T @ S @ Ub
    Y = 2 * Ub.T @ S @ Pi @ U
    Z = U.T @ Pi.T @ S @ Pi @ U
    return X, Y, Z


def twisted_tensor(space, V2, t):
    """Gamma(e^{itA}) V2, the tensor of the interaction-picture generator."""
    U = space.propagator(-t)
    S = U @ embed(V2) @ U.T
    from .tensor import symmetrize
    return symmetrize(S, space.d)


@dataclass
class QuadraticPath:
    """V2(t) = second Taylor coefficient of V along phi_t."""

    V: object
    traj: object
    times: np.ndarray
    V2: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def space(self):
        return self.V.space

    def V2_at(self, t):
        lo, hi = self.traj.span
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise RangeError(f"time {t} outside the trajectory span [{lo}, {hi}]")
        return _second_coefficient(self.V, self.traj.phi_at(t))

    def matrices(self, t):
        return quadratic_generator_matrices(self.space, self.V2_at(t), t)

    def symbol(self, t):
        """The interaction-picture generator F_{V2(t)} o e^{-itA} as a symbol."""
        X, Y, Z = self.matrices(t)
        return quadratic_symbol(self.space.d, X, Y, Z)

    def norms(self):
        return np.array([T.norm() for T in self.V2])


def _second_coefficient(V, z):
    if len(V.tensors) < 3:
        return SymTensor.zeros(V.d, 2)
    return taylor_coefficients(V, z, 2)[2]


def build_V2_path(V, traj, grid):
    """Sample V2(t) on ``grid`` and check the twisted conjugation symmetry."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = traj.span
    if grid.min() < lo - 1e-12 or grid.max() > hi + 1e-12:
        raise RangeError(f"grid outside the trajectory span [{lo}, {hi}]")
    V2 = [_second_coefficient(V, traj.phi_at(t)) for t in grid]
    space = V.space
    worst = 0.0
    for t, T in zip(grid, V2):
        tw = twisted_tensor(space, T, t)
        # Gamma(c_t) with c_t = e^{2itA} c
        back = conj_apply(tw, space.pairing)
        U2 = space.propagator(-2 * t)
        img = embed(back)
        img = U2 @ img @ U2.T
        worst = max(worst, float(np.max(np.abs(img - embed(tw)), initial=0.0)))
    return QuadraticPath(V, traj, grid, V2, {"twisted_symmetry": worst})


# ---------------------------------------------------------------------------
# unitary propagator

@dataclass
class PropagatorPath:
    """U2(t_i, 0) on a time grid; U2(t, s) = U2(t, 0) U2(s, 0)^*."""

    basis: object
    times: np.ndarray
    U: list
    U_tilde: list
    eps: float
    diagnostics: dict = field(default_factory=dict)

    def index(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-10:
            raise RangeError(f"time {t} is not on the propagator grid")
        return i

    def at(self, t, s=0.0):
        Ut = self.U[self.index(t)]
        if s == 0.0:
            return Ut
        return Ut @ self.U[self.index(s)].conj().T

    def unitarity(self):
        eye = np.eye(self.basis.dim)
        return max(float(np.max(np.abs(U.conj().T @ U - eye))) for U in self.U)


def integrate_U2(basis, qpath, eps, tol=None, times=None, columns=None):
    """Propagator of i eps d/dt u = Wick_eps(F_{V2(t)} o e^{-itA}) u, then free factor.

    The interaction-picture generator is quadratic, so Wick_eps(.)/eps equals
    Wick_1(.) and the result does not depend on eps.
    """
    tol = DEFAULT_TOLERANCES.u2_tol if tol is None else tol
    times = qpath.times if times is None else np.asarray(times, dtype=float)
    if times[0] != 0.0:
        raise RangeError("propagator grid must start at 0")

    parts = _quadratic_wick_parts(basis, eps)

    def gen(t):
        X, Y, Z = qpath.matrices(t)
        return _assemble(parts, X, Y, Z)

    path = ode.magnus_propagator(gen, times, basis.dim, tol=tol, columns=columns)
    U = [free_evolution(basis, -t) @ Ut for t, Ut in zip(times, path.U)]
    return PropagatorPath(basis, times, U, path.U, eps,
                          {"steps": path.n_steps, "max_drift": path.max_drift})


def _quadratic_wick_parts(basis, eps):
    """Wick_eps(.)/eps of the elementary quadratic symbols, cached per basis."""
    key = ("quadratic_parts", eps)
    if key in basis._cache:
        return basis._cache[key]
    d = basis.d
    parts = {}
    for i in range(d):
        for j in range(d):
            E = np.zeros((d, d))
            E[i, j] = 1.0
            parts[("X", i, j)] = quantize(quadratic_symbol(d, X=E), eps, basis) / eps
            parts[("Y", i, j)] = quantize(quadratic_symbol(d, Y=E), eps, basis) / eps
            parts[("Z", i, j)] = quantize(quadratic_symbol(d, Z=E), eps, basis) / eps
    basis._cache[key] = parts
    return parts


def _assemble(parts, X, Y, Z):
    d = X.shape[0]
    H = None
    for i in range(d):
        for j in range(d):
            for name, M in (("X", X), ("Y", Y), ("Z", Z)):
                if M[i, j] != 0:
                    term = M[i, j] * parts[(name, i, j)]
                    H = term if H is None else H + term
    if H is None:
        H = np.zeros_like(parts[("Y", 0, 0)])
    return H


def growth_ratios(basis, prop, psi, k):
    """||(N+1)^{k/2} U2(t,0) psi|| / ||(N+1)^{k/2} psi|| along the grid."""
    weight = (basis.sector + 1.0) ** (k / 2)
    base = np.linalg.norm(weight * psi)
    return np.array([np.linalg.norm(weight * (U @ psi)) / base for U in prop.U])


def growth_bound(qpath, times, k):
    """exp(2 sqrt(2) k 3^{k/2} int_0^t ||V2||), the operator-norm envelope."""
    integ = cumulative_norm_integral(qpath, times)
    return np.exp(2 * np.sqrt(2) * k * 3 ** (k / 2) * integ)


def refined_growth_bound(qpath, times, psi_norm, psi_weighted, k, lam, c):
    """exp(sqrt2 k lam^k I) (k c^k I ||psi||^2 + ||(N+1)^{k/2} psi||^2)^{1/2}."""
    integ = cumulative_norm_integral(qpath, times)
    return np.exp(np.sqrt(2) * k * lam ** k * integ) * np.sqrt(
        k * c ** k * integ * psi_norm ** 2 + psi_weighted ** 2)


def cumulative_norm_integral(qpath, times):
    """int_0^t ||V2(s)|| ds at each time, by Gauss-Legendre on each interval."""
    x, w = np.polynomial.legendre.leggauss(6)
    out = [0.0]
    for a, b in zip(times[:-1], times[1:]):
        mid, half = (a + b) / 2, (b - a) / 2
        out.append(out[-1] + half * sum(wi * qpath.V2_at(mid + half * xi).norm() for xi, wi in zip(x, w)))
    return np.array(out)


# ---------------------------------------------------------------------------
# classical symplectic flow

@dataclass
class SymplecticMap:
    """Real-linear map z -> L z + Aa conj(z) (interaction picture) at time t."""

    L: np.ndarray
    Aa: np.ndarray
    t: float
    space: object = None

    def full(self):
        """(P, Q) of the full flow e^{-itA}(L + Aa conj)."""
        U = self.space.propagator(self.t)
        return U @ self.L, U @ self.Aa

    def apply(self, z, full=False):
        P, Q = self.full() if full else (self.L, self.Aa)
        z = np.asarray(z, dtype=complex)
        return P @ z + Q @ z.conj()

    def symplectic_defect(self, rng=None, n=10):
        rng = np.random.default_rng(0) if rng is None else rng
        d = self.L.shape[0]
        worst = 0.0
        for _ in range(n):
            u = rng.normal(size=d) + 1j * rng.normal(size=d)
            v = rng.normal(size=d) + 1j * rng.normal(size=d)
            s0 = -2 * np.vdot(u, v).imag
            s1 = -2 * np.vdot(self.apply(u), self.apply(v)).imag
            worst = max(worst, abs(s1 - s0))
        return worst


def integrate_symplectic(qpath, grid=None, tol=None, drift_limit=1e-7):
    """Integrate i dz/dt = Y z + 2 X conj(z) for the pair (L, Aa).

    With z = L z0 + Aa conj(z0):
        i L'  = Y L  + 2 X conj(Aa)
        i Aa' = Y Aa + 2 X conj(L)
    """
    tol = DEFAULT_TOLERANCES.ode_tol if tol is None else tol
    grid = qpath.times if grid is None else np.asarray(grid, dtype=float)
    d = qpath.space.d

    def rhs(t, y):
        L = y[: d * d].reshape(d, d)
        Aa = y[d * d:].reshape(d, d)
        X, Y, _ = qpath.matrices(t)
        Xs = X + X.T
        dL = -1j * (Y @ L + Xs @ Aa.conj())
        dA = -1j * (Y @ Aa + Xs @ L.conj())
        return np.concatenate([dL.ravel(), dA.ravel()])

    y0 = np.concatenate([np.eye(d, dtype=complex).ravel(), np.zeros(d * d, dtype=complex)])
    res = ode.dopri5(rhs, grid[0], y0, grid[-1], rtol=tol, atol=tol, t_eval=grid)
    ys = res(grid)
    maps = []
    worst = 0.0
    for t, y in zip(grid, ys):
        m = SymplecticMap(y[: d * d].reshape(d, d), y[d * d:].reshape(d, d), float(t), qpath.space)
        worst = max(worst, m.symplectic_defect())
        maps.append(m)
    if worst > drift_limit:
        raise NumericalError(f"symplectic drift {worst:.2e}")
    return maps


def map_at(maps, t):
    for m in maps:
        if abs(m.t - t) <= 1e-10:
            return m
    raise RangeError(f"no symplectic map stored at t={t}")


# ---------------------------------------------------------------------------
# symbol transport

def lambda_coefficients(smap):
    """(X, Y, Z) with Lambda b = sum X dbar dbar b + Y dbar d b + Z d d b.

    In the full-flow matrices (P, Q):
        mixed part   Y = -2 Q^* Q, i.e. -2 Tr(Aa^* Aa d dbar b),
        holomorphic  Z = P^* Q  (coefficient of d_i d_j),
        antiholo.    X = conj(Z).
    P^* Q = L^* Aa does not depend on the free factor.
    """
    L, Aa = smap.L, smap.Aa
    v = L.conj().T @ Aa
    v = (v + v.T) / 2
    M = Aa.conj().T @ Aa
    return v.conj(), -2 * M, v


def lambda_coefficients_chain(smap):
    """Coefficients of Lambda obtained from the pre-composition operator by the chain rule.

    The inverse flow is w -> P^* w - Q^T conj(w), so
        d_w    = conj(P) d - Q dbar,
        dbar_w = -conj(Q) d + P dbar
    (row i of each matrix acting on the derivative vector).
    """
    P, Q = smap.full()
    S_ = P @ Q.T
    R_ = Q.conj() @ Q.T
    Xp, Yp, Zp = S_.conj(), 2 * R_, S_
    Ri, Si = P.conj().T, -Q.T

    def sym(M):
        return (M + M.T) / 2

    Z = Ri @ Zp @ Ri.T + Si @ Xp @ Si.T + sym(Si @ Yp @ Ri.T)
    X = Si.conj() @ Zp @ Si.conj().T + Ri.conj() @ Xp @ Ri.conj().T + sym(Ri.conj() @ Yp @ Si.conj().T)
    Y = (2 * Si.conj() @ Zp @ Ri.T + 2 * Ri.conj() @ Xp @ Si.T
         + Ri.conj() @ Yp @ Ri.T + Si.conj() @ Yp.T @ Si.T)
    return sym(X), Y, sym(Z)


def lambda_op(b, smap):
    """Lambda applied to the symbol b (lowers the total order by two)."""
    X, Y, Z = lambda_coefficients(smap)
    return second_order_operator(b, X, Y, Z)


def compose_flow(b, smap):
    """b o phi_t with phi_t = e^{-itA}(L + Aa conj)."""
    P, Q = smap.full()
    return compose_linear(b, P, Q)


def transport_symbol(b, t, maps, prop=None, basis=None, transport_tol=None, guard=None):
    """b_hat = sum_k Lambda^k (b o phi_t) / (2^k k!).

    When ``prop`` and ``basis`` are given, the result is checked against
    U2(t,0)^* Wick_1(b) U2(t,0) on the sectors up to ``guard``.
    """
    smap = map_at(maps, t)
    term = compose_flow(b, smap)
    out = term
    for k in range(1, b.order // 2 + 1):
        term = lambda_op(term, smap)
        out = out + term * (1.0 / (2 ** k * factorial(k)))
    if prop is not None and basis is not None:
        dev = transport_deviation(b, out, prop.at(t), basis, guard)
        tol = DEFAULT_TOLERANCES.transport_tol if transport_tol is None else transport_tol
        if dev > tol:
            raise TransportMismatch(f"transport oracle deviation {dev:.3e} at t={t}", dev)
    return out


def transport_deviation(b, b_hat, U, basis, guard=None):
    """max |U^* Wick_1(b) U - Wick_1(b_hat)| on the guarded sectors.

    The truncated propagator is only exact well below the cutoff, so the
    default guard keeps the sectors up to M // 4.
    """
    guard = basis.M // 4 if guard is None else guard
    g = basis.guard(guard)
    lhs = U.conj().T @ quantize(b, 1.0, basis) @ U
    rhs = quantize(b_hat, 1.0, basis)
    return float(np.max(np.abs((lhs - rhs)[g, g])))


def transport_pre(b, smap):
    """Independent route: exp(Lambda_pre / 2) b composed with the flow.

    Normal ordering U^* a^*..a U, with U^* a_i U = sum_j P_ij a_j + Q_ij a_j^*,
    contracts pairs of factors with
        a a      -> (P Q^T)_ij
        a^* a^*  -> conj(P Q^T)_ij
        a^* a    -> (conj(Q) Q^T)_ij,
    so the symbol is exp(D) b evaluated at the flow, where D is the
    constant-coefficient operator below acting before the substitution.
    """
    P, Q = smap.full()
    S = P @ Q.T
    R = Q.conj() @ Q.T
    term = b
    out = b
    for k in range(1, b.order // 2 + 1):
        term = second_order_operator(term, S.conj(), 2 * R, S)
        out = out + term * (1.0 / (2 ** k * factorial(k)))
    return compose_linear(out, P, Q)


def number_weight(basis, k):
    return np.diag((basis.sector + 1.0) ** (k / 2))
