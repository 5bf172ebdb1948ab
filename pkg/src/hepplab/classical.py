"""Classical mean-field dynamics i dz/dt = A z + dbar F_V(z) on C^d.

Holds evaluation of F_V and its antiholomorphic gradient, Taylor
coefficients of the potential around a point, the adaptive flow solver with
the phase delta(t), a priori lifespan bounds and the action identity.
"""
import csv
from dataclasses import dataclass, field
from math import comb, factorial, sqrt

import numpy as np
from scipy import integrate, optimize

from . import ode
from .errors import IdentityViolation, RangeError, ShapeError, SolverError
from .settings import DEFAULT_TOLERANCES
from .tensor import SymTensor, contraction_matrix, from_sym1, sym_tensor_power
from .wick import PotentialSeries


def shifted(space, z):
    """w = z + c z."""
    z = np.asarray(z, dtype=complex)
    return z + space.conj(z)


def eval_potential(V, z):
    """F_V(z) and the Wirtinger gradient dF_V/dconj(z).

    With w = z + c z,

        F_V(z)      = sum_j <w^{(x)j}, V^(j)> / sqrt(j!)
        dbar F_V(z) = sum_j j/sqrt(j!) (<w^{(x)(j-1)}| (x) 1) V^(j).
    """
    z = np.asarray(z, dtype=complex)
    if len(z) != V.d:
        raise ShapeError("point has the wrong dimension")
    w = shifted(V.space, z)
    F = 0j
    grad = np.zeros(V.d, dtype=complex)
    for j, T in enumerate(V.tensors):
        if not np.any(T.coeffs):
            continue
        F += np.vdot(sym_tensor_power(w, j).coeffs, T.coeffs) / sqrt(factorial(j))
        if j >= 1:
            grad += j / sqrt(factorial(j)) * from_sym1(contraction_matrix(w, j, 1) @ T.coeffs)
    return complex(F), grad


def energy(V, z):
    """Classical energy <z, A z> + F_V(z)."""
    z = np.asarray(z, dtype=complex)
    F, _ = _evaluator(V)(z)
    return float(np.vdot(z, V.space.A @ z).real + F.real)


def taylor_coefficients(V, z0, lmax=None):
    """Tensors V_l(z0) with F_V(z + z0) = sum_l F_{V_l(z0)}(z).

    V_l(z0) = sum_{j >= l} sqrt(l!/j!) binom(j, l) (<w0^{(x)(j-l)}| (x) 1^{(x)l}) V^(j).
    """
    jmax = len(V.tensors) - 1
    lmax = jmax if lmax is None else lmax
    if lmax > jmax:
        raise ShapeError("lmax exceeds the potential degree")
    w0 = shifted(V.space, z0)
    out = []
    for ell in range(lmax + 1):
        acc = np.zeros_like(SymTensor.zeros(V.d, ell).coeffs)
        for j in range(ell, jmax + 1):
            T = V.tensors[j]
            if not np.any(T.coeffs):
                continue
            weight = sqrt(factorial(ell) / factorial(j)) * comb(j, ell)
            acc = acc + weight * (contraction_matrix(w0, j, ell) @ T.coeffs)
        out.append(SymTensor(V.d, ell, acc))
    return out


def taylor_series(V, z0):
    """The shifted datum (V_l(z0))_l as a PotentialSeries."""
    return PotentialSeries(V.space, taylor_coefficients(V, z0), tol=1e-7)


# ---------------------------------------------------------------------------
# a priori bounds

def lipschitz_g(x, tol=np.finfo(float).eps):
    """g(x) = sqrt(sum_k 4^k (k+1)(k+2)/k! x^{2k}), summed until the tail is negligible."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    y = 4.0 * x * x
    term = 2.0
    total = term
    k = 0
    while True:
        # ratio of consecutive terms
        term *= y * (k + 3) / ((k + 1) * (k + 1))
        k += 1
        total += term
        if term <= tol * total and k > y:
            break
    return sqrt(total)


def _lifespan_integrand(x):
    return np.exp(-2 * x * x) / np.sqrt(1 + 4 * x * x)


def bihari_G(u, Vnorm):
    """G(u) = (1/|V|) int_0^u e^{-2x^2} / sqrt(1 + 4x^2) dx."""
    val, _ = integrate.quad(_lifespan_integrand, 0, u, epsabs=0, epsrel=1e-13, limit=200)
    return val / Vnorm


def lifespan_bound(V, r0):
    """T0 = (1/|V|) int_{r0}^inf e^{-2x^2}/sqrt(1+4x^2) dx; inf when V = 0."""
    Vnorm = V if np.isscalar(V) else V.norm()
    if Vnorm == 0:
        return np.inf
    val, _ = integrate.quad(_lifespan_integrand, r0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return val / Vnorm


def bihari_envelope(Vnorm, r0, t):
    """G^{-1}(G(r0) + |t|), or inf once |t| reaches the lifespan bound."""
    if Vnorm == 0:
        return r0
    G0 = bihari_G(r0, Vnorm)
    Ginf = G0 + lifespan_bound(Vnorm, r0)
    target = G0 + abs(t)
    if target >= Ginf * (1 - 1e-12):
        return np.inf
    hi = max(2 * r0, 1.0)
    while bihari_G(hi, Vnorm) < target:
        hi *= 2
    return optimize.brentq(lambda u: bihari_G(u, Vnorm) - target, r0, hi, xtol=1e-14, rtol=1e-14)


# ---------------------------------------------------------------------------
# flow

def _evaluator(V):
    """Callable z -> (F, dbar F) for a PotentialSeries or any object with ``evaluate``."""
    if isinstance(V, PotentialSeries):
        return lambda z: eval_potential(V, z)
    return V.evaluate


@dataclass
class Trajectory:
    """Classical solution phi_t with its phase delta(t).

    ``t``, ``phi``, ``delta`` are the accepted solver steps; ``samples``
    holds the uniform resampling.  Interpolation uses the solver's continuous
    extension.
    """

    space: object
    t: np.ndarray
    phi: np.ndarray
    delta: np.ndarray
    parts: list
    diagnostics: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    def _locate(self, s):
        for part in self.parts:
            lo, hi = min(part.t[0], part.t[-1]), max(part.t[0], part.t[-1])
            if lo - 1e-12 <= s <= hi + 1e-12:
                return part
        raise RangeError(f"time {s} outside the trajectory span")

    def state(self, s):
        """Interaction-picture state and phase (tilde phi, delta) at time s."""
        y = self._locate(s)(s)[0]
        return y[:-1], y[-1].real

    def phi_at(self, s):
        tilde, _ = self.state(s)
        return self.space.propagator(s) @ tilde

    def delta_at(self, s):
        return self.state(s)[1]

    @property
    def span(self):
        return float(self.t.min()), float(self.t.max())

    def energies(self, V):
        return np.array([energy(V, z) for z in self.phi])

    def to_csv(self, path, V=None):
        d = self.space.d
        header = ["t"] + [f"re_phi{i + 1}" for i in range(d)] + [f"im_phi{i + 1}" for i in range(d)] + ["delta", "h"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for t, z, dl in zip(self.t, self.phi, self.delta):
                h = energy(V, z) if V is not None else float("nan")
                wr.writerow([repr(float(t))] + [repr(float(x)) for x in z.real]
                            + [repr(float(x)) for x in z.imag] + [repr(float(dl)), repr(h)])


def integrate_flow(V, phi0, T, tol=None, override=False, backward=False, t_eval=None,
                   n_samples=101, dt_min=1e-12, check_envelope=True):
    """Solve the classical field equation on [0, T] (and [-T, 0] if ``backward``).

    Works in the interaction picture i d(tilde phi)/dt = e^{itA} dbar F_V(e^{-itA} tilde phi)
    and carries the phase as an extra state, d delta/dt = Re<phi, dbar F_V(phi)> - F_V(phi).
    """
    tol = DEFAULT_TOLERANCES.ode_tol if tol is None else tol
    space = V.space
    phi0 = np.asarray(phi0, dtype=complex)
    if len(phi0) != space.d:
        raise ShapeError("initial state has the wrong dimension")
    Vnorm = V.norm() if hasattr(V, "norm") else None
    r0 = float(np.linalg.norm(phi0))
    T0 = lifespan_bound(Vnorm, r0) if Vnorm is not None else np.inf
    if abs(T) >= T0 and not override:
        raise RangeError(f"T={T} is beyond the lifespan bound {T0:.4g}; pass override=True")
    evaluate = _evaluator(V)
    evals, evecs = space._evals, space._evecs

    def rhs(t, y):
        tilde = y[:-1]
        phase_out = np.exp(-1j * t * evals)
        phi = evecs @ (phase_out * (evecs.conj().T @ tilde))
        F, grad = evaluate(phi)
        back = evecs @ (np.conj(phase_out) * (evecs.conj().T @ grad))
        ddelta = np.vdot(phi, grad).real - F.real
        return np.concatenate([-1j * back, [ddelta]])

    envelope_checks = {"max_ratio": 0.0}

    def check(t, y):
        if not check_envelope or Vnorm is None or Vnorm == 0 or abs(t) >= T0:
            return
        env = bihari_envelope(Vnorm, r0, t)
        nrm = float(np.linalg.norm(y[:-1]))
        envelope_checks["max_ratio"] = max(envelope_checks["max_ratio"], nrm / env)
        if nrm > env * (1 + 1e-8) + 10 * tol:
            raise SolverError(f"norm {nrm:.6g} exceeds the a priori envelope {env:.6g} at t={t:.4g}")

    y0 = np.concatenate([phi0, [0.0]])
    parts = []
    ends = [T] + ([-T] if backward else [])
    for end in ends:
        stops = None if t_eval is None else [s for s in t_eval if s * end > 0]
        parts.append(ode.dopri5(rhs, 0.0, y0, end, rtol=tol, atol=tol * max(1.0, r0),
                                dt_min=dt_min, t_eval=stops, step_check=check))
    ts = [p.t for p in parts]
    ys = [p.y for p in parts]
    if backward:
        t_all = np.concatenate([ts[1][::-1], ts[0][1:]])
        y_all = np.concatenate([ys[1][::-1], ys[0][1:]])
    else:
        t_all, y_all = ts[0], ys[0]
    phi = np.array([space.propagator(t) @ y[:-1] for t, y in zip(t_all, y_all)])
    traj = Trajectory(space, t_all, phi, y_all[:, -1].real, parts)
    traj.diagnostics = {
        "rtol": tol,
        "accepted": sum(p.n_accepted for p in parts),
        "rejected": sum(p.n_rejected for p in parts),
        "evaluations": sum(p.n_evals for p in parts),
        "lifespan_bound": T0,
        "envelope_max_ratio": envelope_checks["max_ratio"],
        "delta_imag": float(np.max(np.abs(y_all[:, -1].imag))),
    }
    grid = np.linspace(-T if backward else 0.0, T, n_samples)
    traj.samples = {"t": grid,
                    "phi": np.array([traj.phi_at(s) for s in grid]),
                    "delta": np.array([traj.delta_at(s) for s in grid])}
    return traj


# ---------------------------------------------------------------------------
# residuals and identities

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _step_quadrature(traj, fun, t_end):
    """int_0^{t_end} fun(s) ds, Gauss-Legendre on each accepted step."""
    part = traj._locate(t_end)
    nodes = part.t
    sign = 1.0 if t_end >= 0 else -1.0
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        if (a - t_end) * sign >= -1e-15:
            break
        b = b if (b - t_end) * sign <= 0 else t_end
        mid, half = (a + b) / 2, (b - a) / 2
        total = total + half * sum(w * fun(mid + half * x) for x, w in zip(_GL_X, _GL_W))
    return total


def mild_residual(traj, V, t):
    """|| phi_t - e^{-itA} phi_0 + i int_0^t e^{-i(t-s)A} dbar F_V(phi_s) ds ||."""
    evaluate = _evaluator(V)
    space = traj.space
    phi0 = traj.phi_at(0.0)

    def integrand(s):
        return space.propagator(-s) @ evaluate(traj.phi_at(s))[1]

    duhamel = space.propagator(t) @ _step_quadrature(traj, integrand, t)
    res = traj.phi_at(t) - space.propagator(t) @ phi0 + 1j * duhamel
    return float(np.linalg.norm(res))


def to_real(z):
    """(q, p) with z = (q + i p)/sqrt(2)."""
    z = np.asarray(z, dtype=complex)
    return sqrt(2) * z.real, sqrt(2) * z.imag


def classical_action_check(traj, V, probe_times=None, action_tol=None, raise_on_fail=True):
    """Compare delta(t) with S_t - (q_t.p_t - q_0.p_0)/2.

    S_t is the integral of p.dq/dt - h(q, p) along the solution, with
    dq/dt taken from the equation of motion.
    """
    action_tol = DEFAULT_TOLERANCES.action_tol if action_tol is None else action_tol
    evaluate = _evaluator(V)
    A = traj.space.A
    lo, hi = traj.span
    if probe_times is None:
        probe_times = np.linspace(0, hi, 6)[1:]

    def lagrangian(s):
        z = traj.phi_at(s)
        F, grad = evaluate(z)
        zdot = -1j * (A @ z + grad)
        _, p = to_real(z)
        qdot, _ = to_real(zdot)
        h = np.vdot(z, A @ z).real + F.real
        return float(p @ qdot - h)

    q0, p0 = to_real(traj.phi_at(0.0))
    rows = []
    for t in probe_times:
        S = _step_quadrature(traj, lagrangian, t)
        q, p = to_real(traj.phi_at(t))
        boundary = 0.5 * (q @ p - q0 @ p0)
        dev = abs(traj.delta_at(t) - (S - boundary))
        rows.append({"t": float(t), "delta": traj.delta_at(t), "action": S,
                     "boundary": boundary, "deviation": dev})
    worst = max(r["deviation"] for r in rows)
    report = {"rows": rows, "max_deviation": worst, "tolerance": action_tol, "passed": worst <= action_tol}
    if raise_on_fail and worst > action_tol:
        raise IdentityViolation(f"action identity violated by {worst:.3e}", worst)
    return report
