"""Adaptive integrators: Dormand-Prince 5(4) with dense output, and a
sixth-order Magnus scheme for unitary propagators."""
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupSuspected, NumericalError

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension of order 4: y(t + x h) = y + h K^T P [x, x^2, x^3, x^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@dataclass
class OdeResult:
    """Accepted steps of an adaptive run with dense output.

    Calling the result interpolates with the solver's order-4 continuous
    extension; :meth:`hermite` gives the cubic Hermite interpolant built
    from the stored derivatives.
    """

    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    stages: np.ndarray = None
    n_accepted: int = 0
    n_rejected: int = 0
    n_evals: int = 0
    rtol: float = 0.0
    atol: float = 0.0
    info: dict = field(default_factory=dict)

    def _check_span(self, s):
        t = self.t
        lo, hi = min(t[0], t[-1]), max(t[0], t[-1])
        if np.any(s < lo - 1e-12 * max(1, abs(lo))) or np.any(s > hi + 1e-12 * max(1, abs(hi))):
            raise ValueError("interpolation outside the integrated span")

    def __call__(self, s):
        """Continuous-extension interpolation at time(s) s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.stages is None or len(self.t) < 2:
            return self.hermite(s)
        self._check_span(s)
        t = self.t
        forward = t[-1] >= t[0]
        key = t if forward else -t
        idx = np.clip(np.searchsorted(key, s if forward else -s, side="right") - 1, 0, len(t) - 2)
        h = (t[idx + 1] - t[idx])
        x = (s - t[idx]) / h
        powers = np.stack([x, x ** 2, x ** 3, x ** 4], axis=-1)
        coef = powers @ _P.T  # (m, 7)
        incr = np.einsum("ms,msd->md", coef, self.stages[idx])
        return self.y[idx] + h[:, None] * incr

    def hermite(self, s):
        """Cubic Hermite interpolation at time(s) s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        self._check_span(s)
        t = self.t
        forward = t[-1] >= t[0]
        tt = t if forward else t[::-1]
        yy = self.y if forward else self.y[::-1]
        dd = self.dy if forward else self.dy[::-1]
        idx = np.clip(np.searchsorted(tt, s, side="right") - 1, 0, len(tt) - 2)
        t0, t1 = tt[idx], tt[idx + 1]
        h = t1 - t0
        x = ((s - t0) / h)[:, None]
        h = h[:, None]
        h00 = 2 * x ** 3 - 3 * x ** 2 + 1
        h10 = x ** 3 - 2 * x ** 2 + x
        h01 = -2 * x ** 3 + 3 * x ** 2
        h11 = x ** 3 - x ** 2
        out = h00 * yy[idx] + h10 * h * dd[idx] + h01 * yy[idx + 1] + h11 * h * dd[idx + 1]
        return out


def _error_norm(err, y0, y1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def dopri5(f, t0, y0, t_end, rtol=1e-10, atol=1e-12, h0=None, dt_min=1e-12,
           max_steps=200000, t_eval=None, step_check=None, per_unit_step=True):
    """Integrate y' = f(t, y) from t0 to t_end (either direction).

    With ``per_unit_step`` the local error estimate is held below tol * |h|
    rather than tol, which makes the global error shrink faster than the
    tolerance (about tol^{5/4}).
    Steps are shortened to land exactly on the times in ``t_eval``.
    ``step_check(t, y)`` is called after every accepted step.
    Returns an :class:`OdeResult` holding every accepted step.
    """
    y = np.array(y0, dtype=complex)
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    stops = [] if t_eval is None else sorted({float(s) for s in t_eval
                                              if (s - t0) * direction > 0 and (t_end - s) * direction > 0},
                                             key=lambda s: (s - t0) * direction)
    stops.append(float(t_end))
    ts, ys, dys, stages = [t0], [y.copy()], [], []
    k1 = f(t0, y)
    dys.append(k1.copy())
    nev = 1
    if span == 0:
        return OdeResult(np.array(ts), np.array(ys), np.array(dys), None, 0, 0, nev, rtol, atol)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
        d1 = np.sqrt(np.mean(np.abs(k1 / scale) ** 2))
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h0 = min(h0, span)
    h = h0
    t = t0
    err_prev = 1e-4
    beta1, beta2 = 0.7 / 5, 0.4 / 5
    acc = rej = 0
    stop_i = 0
    while stop_i < len(stops):
        target = stops[stop_i]
        remaining = (target - t) * direction
        if h >= remaining * (1 - 1e-12):
            h_try, landing = remaining, True
        else:
            h_try, landing = h, False
        if h_try < dt_min:
            if landing:
                # snap onto a stop that is closer than the minimum step
                h_try = remaining
            else:
                raise BlowupSuspected(f"step size collapsed below {dt_min:g} at t={t:.6g}", t)
        hs = direction * h_try
        k = [k1]
        for i in range(1, 7):
            yi = y + hs * sum(a * kk for a, kk in zip(_A[i], k))
            k.append(f(t + _C[i] * hs, yi))
        nev += 6
        y_new = y + hs * sum(b * kk for b, kk in zip(_B5, k) if b != 0)
        err = hs * sum(e * kk for e, kk in zip(_E, k) if e != 0)
        en = _error_norm(err, y, y_new, rtol, atol)
        if per_unit_step:
            en /= h_try
        if not np.all(np.isfinite(y_new)):
            en = np.inf
        if en <= 1.0:
            t = target if landing else t + hs
            y = y_new
            k1 = k[6]
            ts.append(t)
            ys.append(y.copy())
            dys.append(k1.copy())
            stages.append(np.array(k))
            acc += 1
            if step_check is not None:
                step_check(t, y)
            if landing:
                stop_i += 1
            fac = 0.9 * max(en, 1e-10) ** (-beta1) * err_prev ** beta2
            if per_unit_step:
                # the scaled estimate behaves like h^4
                fac = fac ** 1.25
            fac = min(5.0, max(0.2, fac))
            err_prev = max(en, 1e-4)
            h = h_try * fac if not landing else max(h, h_try * fac)
        else:
            rej += 1
            order = 4 if per_unit_step else 5
            fac = 0.9 * en ** (-1 / order) if np.isfinite(en) else 0.1
            h = h_try * max(0.1, fac)
            if h < dt_min:
                raise BlowupSuspected(f"step size collapsed below {dt_min:g} at t={t:.6g}", t)
        if acc + rej > max_steps:
            raise BlowupSuspected(f"step budget exhausted at t={t:.6g}", t)
    return OdeResult(np.array(ts), np.array(ys), np.array(dys), np.array(stages), acc, rej, nev, rtol, atol)


# ---------------------------------------------------------------------------
# unitary propagators

def polar_unitary(U):
    """Closest unitary to U (polar factor), via SVD."""
    W, _, Vh = np.linalg.svd(U)
    return W @ Vh


def _expm_hermitian(H, factor):
    w, V = np.linalg.eigh((H + H.conj().T) / 2)
    return (V * np.exp(factor * w)) @ V.conj().T


def _magnus_step(gen, t, h):
    """Sixth-order Magnus step for U' = -i H(t) U with three Gauss nodes."""
    r = np.sqrt(15) / 10
    A1 = -1j * h * gen(t + (0.5 - r) * h)
    A2 = -1j * h * gen(t + 0.5 * h)
    A3 = -1j * h * gen(t + (0.5 + r) * h)
    a1 = A2
    a2 = (np.sqrt(15) / 3) * (A3 - A1)
    a3 = (10 / 3) * (A3 - 2 * A2 + A1)

    def comm(X, Y):
        return X @ Y - Y @ X

    C1 = comm(a1, a2)
    C2 = -comm(a1, 2 * a3 + C1) / 60
    Omega = a1 + a3 / 12 + comm(-20 * a1 - a3 + C1, a2 + C2) / 240
    # Omega is anti-Hermitian; exponentiate i Omega as a Hermitian matrix
    return _expm_hermitian(1j * Omega, -1j)


@dataclass
class UnitaryPath:
    t: np.ndarray
    U: list
    n_steps: int
    max_drift: float


def magnus_propagator(gen, times, dim, tol=1e-10, h0=None, h_min=1e-8,
                      check=None, drift_limit=1e-6, columns=None):
    """Solve i U' = H(t) U, U(times[0]) = 1, sampling U at each of ``times``.

    Step control compares one step against two half steps on ``columns``
    (all columns when None).  After every accepted step the propagator is
    re-projected onto the unitaries; drift above ``drift_limit`` is an error.
    """
    times = np.asarray(times, dtype=float)
    U = np.eye(dim, dtype=complex)
    out = [U.copy()]
    t = times[0]
    h = h0 if h0 is not None else max(1e-3, (times[-1] - times[0]) / 50 if len(times) > 1 else 1e-2)
    cols = slice(None) if columns is None else columns
    n_steps = 0
    max_drift = 0.0
    for target in times[1:]:
        while t < target - 1e-14:
            step = min(h, target - t)
            full = _magnus_step(gen, t, step)
            half = _magnus_step(gen, t + step / 2, step / 2) @ _magnus_step(gen, t, step / 2)
            err = np.max(np.abs((full - half)[:, cols]), initial=0.0)
            if err <= tol or step <= h_min:
                U = half @ U
                drift = np.max(np.abs(U.conj().T @ U - np.eye(dim)))
                max_drift = max(max_drift, drift)
                if drift > drift_limit:
                    raise NumericalError(f"unitarity drift {drift:.2e} before correction")
                U = polar_unitary(U)
                t = t + step
                n_steps += 1
                # local error ~ h^7
                grow = 0.9 * (tol / max(err, 1e-300)) ** (1 / 7)
                h = step * min(3.0, max(0.3, grow))
            else:
                h = step * max(0.2, 0.9 * (tol / err) ** (1 / 7))
        t = target
        out.append(U.copy())
    return UnitaryPath(times, out, n_steps, max_drift)
