"""Spatially cut-off polynomial field model on a momentum lattice.

Lattice conventions
-------------------
Momenta are k_i = (i - (d-1)/2) dk, i = 0..d-1, so the pairing i <-> d-1-i
sends k to -k.  A continuum function z(k) is stored as the vector
z_i = c z(k_i) with c = sqrt(dk), which makes sum |z_i|^2 the Riemann sum
of int |z|^2 dk.  A symmetric kernel K(k_1..k_j) becomes the tensor
c^j K(k_{i_1}, .., k_{i_j}).

With f_i = (conj z_i + z_{pi(i)}) / sqrt(omega_i), the real field at x is

    S(x) = sum_i c f_i e^{-i k_i x},

and the interaction symbol and its gradient are

    F(z)        = int g(x) P(S(x)) dx,
    dbar F(z)_i = c omega_i^{-1/2} int g(x) P'(S(x)) e^{-i k_i x} dx.

Every k_i is an integer multiple of dk/2, so S is periodic in x with period
4 pi / dk; the x-integrals are evaluated by the trapezoidal rule over one
period, which is exact up to the tail of g outside the period.
"""
import re
from dataclasses import dataclass, field
from functools import cached_property
from math import factorial, pi, sqrt

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from .classical import _step_quadrature, energy, integrate_flow
from .errors import InvalidModel, SizeCap
from .settings import SIZE_CAP
from .tensor import ModeSpace, symmetrize
from .wick import PotentialSeries


# ---------------------------------------------------------------------------
# cutoff profiles

@dataclass(frozen=True)
class GaussProfile:
    """g(x) = exp(-x^2 / (2 w^2)) / (w sqrt(2 pi)), unit mass."""

    width: float = 1.0

    def __call__(self, x):
        w = self.width
        return np.exp(-0.5 * (np.asarray(x) / w) ** 2) / (w * sqrt(2 * pi))

    def ghat(self, k):
        return np.exp(-0.5 * (self.width * np.asarray(k, dtype=float)) ** 2)

    @property
    def l1(self):
        return 1.0

    @property
    def extent(self):
        # g(x) / g(0) < 1e-18 beyond this
        return 9.2 * self.width

    @property
    def bandwidth(self):
        # ghat(k) < 1e-18 beyond this
        return 9.2 / self.width

    def h1_norm(self):
        w = self.width
        l2 = 1 / (2 * w * sqrt(pi))
        dl2 = 1 / (4 * w ** 3 * sqrt(pi))
        return sqrt(l2 + dl2)

    def describe(self):
        return f"gauss({self.width!r})"


@dataclass(frozen=True)
class BumpProfile:
    """Smooth compactly supported bump on [-R, R] scaled to the given mass."""

    radius: float = 1.0
    mass: float = 1.0

    def _raw(self, x):
        u = np.asarray(x, dtype=float) / self.radius
        out = np.zeros_like(u)
        inside = np.abs(u) < 1
        out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
        return out

    @cached_property
    def _norm(self):
        val, _ = integrate.quad(lambda x: float(self._raw(np.array([x]))[0]), -self.radius, self.radius,
                                epsabs=1e-14, epsrel=1e-12, limit=200)
        return self.mass / val

    def __call__(self, x):
        return self._norm * self._raw(x)

    def ghat(self, k):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        # kernels evaluate many repeated sums of grid momenta
        keys, inverse = np.unique(np.round(np.abs(k), 12), return_inverse=True)
        vals = np.empty_like(keys)
        for i, kk in enumerate(keys):
            vals[i], _ = integrate.quad(lambda x: float(self(np.array([x]))[0]) * np.cos(kk * x),
                                        -self.radius, self.radius, epsabs=1e-14, epsrel=1e-12, limit=400)
        return vals[inverse.reshape(k.shape)]

    @property
    def l1(self):
        return self.mass

    @property
    def extent(self):
        return self.radius

    @property
    def bandwidth(self):
        # the bump is C^infinity, its transform decays faster than any power
        return 60.0 / self.radius

    def h1_norm(self):
        x = np.linspace(-self.radius, self.radius, 4001)
        g = self(x)
        dg = np.gradient(g, x)
        return sqrt(integrate.trapezoid(g ** 2 + dg ** 2, x))

    def describe(self):
        return f"bump({self.radius!r})"


def parse_profile(text):
    m = re.fullmatch(r"\s*(gauss|bump)\s*\(\s*([0-9.eE+-]+)\s*\)\s*", text)
    if not m:
        raise InvalidModel(f"unknown cutoff profile {text!r}")
    value = float(m.group(2))
    if value <= 0:
        raise InvalidModel("profile scale must be positive")
    return GaussProfile(value) if m.group(1) == "gauss" else BumpProfile(value)


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True, eq=False)
class GridModel:
    """Lattice model: dispersion, cutoff and polynomial coefficients.

    Odd ``d`` is accepted so that a single k = 0 mode can be used; the
    pairing is then still i <-> d-1-i.
    """

    d: int
    dk: float
    m0: float
    profile: object
    beta: tuple

    @cached_property
    def k(self):
        return (np.arange(self.d) - (self.d - 1) / 2) * self.dk

    @cached_property
    def omega(self):
        return np.sqrt(self.m0 ** 2 + self.k ** 2)

    @property
    def pairing(self):
        return tuple(range(self.d - 1, -1, -1))

    @cached_property
    def space(self):
        return ModeSpace.diagonal(self.omega, pairing=self.pairing, m0=self.m0)

    @property
    def c_norm(self):
        return sqrt(self.dk)

    @property
    def degree(self):
        return len(self.beta) - 1

    @cached_property
    def ghat_grid(self):
        return self.profile.ghat(self.k)

    # polynomial -------------------------------------------------------------

    def P(self, s):
        return np.polynomial.polynomial.polyval(s, self.beta)

    def dP(self, s):
        return np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.beta))

    @cached_property
    def inf_P(self):
        crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(self.beta)) \
            if self.degree >= 2 else np.array([])
        real = crit[np.abs(crit.imag) < 1e-9].real
        vals = self.P(real) if len(real) else np.array([self.P(0.0)])
        return float(np.min(vals))

    @property
    def energy_floor(self):
        """c = ||g||_1 max(0, -inf P) in h(z) >= ||omega^{1/2} z||^2 - c."""
        return self.profile.l1 * max(0.0, -self.inf_P)

    # real-space grid ----------------------------------------------------------

    @cached_property
    def _xgrid(self):
        half = self.dk / 2
        period = 2 * pi / half
        # frequencies in units of dk/2 reached by P'(S) e^{-ikx} and by g
        top = self.degree * (self.d - 1) + int(np.ceil(self.profile.bandwidth / half))
        nx = sfft.next_fast_len(2 * top + 2)
        m = np.arange(nx)
        x = m * period / nx
        x = np.where(x >= period / 2, x - period, x)
        twist = np.exp(2j * pi * (self.d - 1) * m / nx)
        return nx, period, x, self.profile(x), twist

    def field(self, z):
        """Real-space field S(x_m) on the periodic x-grid."""
        nx, _, _, _, twist = self._xgrid
        f = (np.conj(z) + z[list(self.pairing)]) / np.sqrt(self.omega)
        F = np.zeros(nx, dtype=complex)
        F[2 * np.arange(self.d)] = f
        # S(x_m) = c sum_i f_i e^{-i k_i x_m}; k_i x_m = 2 pi (2i - (d-1)) m / nx
        return (self.c_norm * twist * sfft.fft(F)).real

    def _project(self, G):
        """c omega^{-1/2} int G(x) e^{-i k x} dx at the lattice momenta."""
        nx, period, _, _, twist = self._xgrid
        coeffs = sfft.fft(G * twist) * (period / nx)
        return self.c_norm * coeffs[2 * np.arange(self.d)] / np.sqrt(self.omega)

    def evaluate(self, z):
        """F_V(z) and dbar F_V(z) by the real-space route."""
        z = np.asarray(z, dtype=complex)
        nx, period, _, g, _ = self._xgrid
        S = self.field(z)
        F = float(np.sum(g * self.P(S)) * period / nx)
        return complex(F), self._project(g * self.dP(S))

    def x_grid(self):
        return self._xgrid[2]

    def describe(self):
        beta = ",".join(repr(b) for b in self.beta)
        return f"grid(d={self.d},dk={self.dk!r},m0={self.m0!r},g={self.profile.describe()},beta=[{beta}])"


def build_model(d, dk, m0, g_profile, beta):
    """Validated GridModel.

    Raises InvalidModel for an odd or non-positive leading polynomial degree,
    m0 <= 0, or a lattice whose x-period cannot contain the cutoff.
    """
    beta = tuple(float(b) for b in beta)
    while len(beta) > 1 and beta[-1] == 0:
        beta = beta[:-1]
    deg = len(beta) - 1
    if deg < 2 or deg % 2 or beta[-1] <= 0:
        raise InvalidModel("P must have even degree >= 2 and a positive leading coefficient")
    if m0 <= 0:
        raise InvalidModel("m0 must be positive")
    if d < 1 or dk <= 0:
        raise InvalidModel("need d >= 1 and dk > 0")
    if isinstance(g_profile, str):
        g_profile = parse_profile(g_profile)
    if 2 * pi / dk < g_profile.extent:
        raise InvalidModel(f"dk={dk} is too coarse: the x-period {4 * pi / dk:.3g} does not contain the cutoff")
    model = GridModel(int(d), float(dk), float(m0), g_profile, beta)
    x = np.linspace(-g_profile.extent, g_profile.extent, 201)
    gx = g_profile(x)
    if np.any(gx < -1e-15) or np.max(np.abs(gx - g_profile(-x))) > 1e-12:
        raise InvalidModel("cutoff must be even and nonnegative")
    return model


# ---------------------------------------------------------------------------
# tensors

def _dense_kernel(model, j, modes):
    """c^j ghat(k_1+..+k_j) prod omega^{-1/2} on the selected modes."""
    k = model.k[modes]
    w = model.omega[modes] ** -0.5
    n = len(modes)
    if n ** j > SIZE_CAP:
        raise SizeCap(n, j, n ** j, SIZE_CAP)
    if j == 0:
        return np.array(model.profile.ghat(0.0), dtype=complex).reshape(())
    total = np.zeros((n,) * j)
    weight = np.ones((n,) * j)
    for slot in range(j):
        shape = [1] * j
        shape[slot] = n
        total = total + k.reshape(shape)
        weight = weight * w.reshape(shape)
    gh = np.asarray(model.profile.ghat(total.ravel())).reshape(total.shape)
    return (model.c_norm ** j) * gh * weight


def _mode_subspace(model, modes):
    modes = list(range(model.d)) if modes is None else sorted(int(i) for i in modes)
    pos = {m: i for i, m in enumerate(modes)}
    try:
        pairing = tuple(pos[model.d - 1 - m] for m in modes)
    except KeyError:
        raise InvalidModel("mode selection must be closed under k -> -k") from None
    return modes, ModeSpace.diagonal(model.omega[modes], pairing=pairing, m0=model.m0)


def build_potential_tensors(model, jmax_cap=None, modes=None):
    """V^(j) = sqrt(j!) 2^{-j/2} beta_j w_j on the lattice, as a PotentialSeries.

    With w_j = 2^{j/2} ghat(sum k) prod omega^{-1/2} this is
    sqrt(j!) beta_j ghat(sum k) prod omega^{-1/2}, times c^j.  ``modes``
    restricts to a pairing-closed subset of the grid.
    """
    modes, space = _mode_subspace(model, modes)
    deg = model.degree
    if jmax_cap is not None and deg > jmax_cap:
        raise SizeCap(len(modes), deg, len(modes) ** deg, jmax_cap)
    tensors = []
    for j, b in enumerate(model.beta):
        if b == 0:
            tensors.append(None)
            continue
        raw = sqrt(factorial(j)) * b * _dense_kernel(model, j, modes)
        tensors.append(symmetrize(raw, len(modes)))
    return PotentialSeries(space, tensors)


def lowest_pair(model):
    """Indices of the smallest |k| (one mode for odd d, a pair for even d)."""
    d = model.d
    return [d // 2] if d % 2 else [d // 2 - 1, d // 2]


# ---------------------------------------------------------------------------
# nonlinearity

def nonlinearity_eval(model, phi):
    """The field nonlinearity dbar F_V(phi) by the real-space route."""
    return model.evaluate(phi)[1]


def nonlinearity_direct(model, phi):
    """Same quantity by direct summation over all index tuples (O(d^{2n-1}))."""
    phi = np.asarray(phi, dtype=complex)
    d = model.d
    f = (np.conj(phi) + phi[list(model.pairing)]) / np.sqrt(model.omega)
    out = np.zeros(d, dtype=complex)
    c = model.c_norm
    for j in range(1, model.degree + 1):
        b = model.beta[j]
        if b == 0:
            continue
        if d ** j > SIZE_CAP:
            raise SizeCap(d, j, d ** j, SIZE_CAP)
        total = np.zeros((d,) * j)
        prod = np.ones((d,) * j, dtype=complex)
        for slot in range(j):
            shape = [1] * j
            shape[slot] = d
            total = total + model.k.reshape(shape)
            if slot < j - 1:
                prod = prod * f.reshape(shape)
        gh = np.asarray(model.profile.ghat(total.ravel())).reshape(total.shape)
        summed = (gh * prod).reshape(-1, d).sum(axis=0)
        out += j * b * c ** j * summed / np.sqrt(model.omega)
    return out


# ---------------------------------------------------------------------------
# dynamics

def integrate_field(model, phi0, T, tol=None, t_eval=None, n_samples=101, backward=False):
    """Classical flow i phi' = omega phi + dbar F_V(phi) with the real-space nonlinearity.

    The energy h = ||omega^{1/2} z||^2 + F_V(z) is recorded along the run, and
    the lower bound h >= ||omega^{1/2} z||^2 - ||g||_1 |inf P| is checked.
    """
    traj = integrate_flow(model, np.asarray(phi0, dtype=complex), T, tol=tol, override=True,
                          t_eval=t_eval, n_samples=n_samples, backward=backward, check_envelope=False)
    h = np.array([energy(model, z) for z in traj.phi])
    kinetic = np.array([np.vdot(z, model.omega * z).real for z in traj.phi])
    floor = model.energy_floor
    traj.diagnostics.update({
        "energy_drift": float(np.max(np.abs(h - h[0]))),
        "energy_bound_margin": float(np.min(h - (kinetic - floor))),
        "energy_bound_ok": bool(np.all(h >= kinetic - floor - 1e-12 * (1 + np.abs(h)))),
    })
    return traj


def delta_rate(model, z):
    """d delta / dt = -beta_0 ||g||_1 + sum_{j>=1} (j-2)/2 beta_j int g S^j dx."""
    nx, period, _, g, _ = model._xgrid
    S = model.field(z)
    rate = 0.0
    for j, b in enumerate(model.beta):
        if b == 0 or j == 2:
            continue
        if j == 0:
            rate -= b * model.profile.l1
        else:
            rate += (j - 2) / 2 * b * float(np.sum(g * S ** j) * period / nx)
    return rate


def delta_circ(model, traj, times=None):
    """Phase samples delta(t) from the explicit formula, integrated along ``traj``."""
    times = traj.samples["t"] if times is None else np.atleast_1d(times)
    out = []
    for t in times:
        if t == 0:
            out.append(0.0)
            continue
        out.append(float(_step_quadrature(traj, lambda s: delta_rate(model, traj.phi_at(s)), t)))
    return np.array(out)


# ---------------------------------------------------------------------------
# real-space equation

@dataclass
class ResidualReport:
    value: float
    h_t: float
    enabled: bool
    note: str = ""


def candidate_field(model, z):
    """Candidate real field zeta(x) = (1/2pi) int (conj z(k) + z(-k)) / sqrt(2 omega) e^{-ikx} dk.

    On the lattice this is S(x) / (2 pi sqrt(2)).
    """
    return model.field(z) / (2 * pi * sqrt(2))


def candidate_transform(model, z):
    """Lattice Fourier data of the candidate field, zeta(x) = (dk/2pi) sum_i zeta_hat(k_i) e^{i k_i x}.

    zeta_hat(k) = (conj z(-k) + z(k)) / sqrt(2 omega(k)), with z(k) = z_i / c.
    """
    z = np.asarray(z, dtype=complex)
    pi_ = list(model.pairing)
    return (np.conj(z[pi_]) + z) / np.sqrt(2 * model.omega) / model.c_norm


def realspace_nonlinearity(model, zeta_hat):
    """Q(zeta)(x) = -(1/2pi) sum_j j beta_j 2^{j/2} int prod_{m<j} zeta_hat(-k_m) ghat(sum k) e^{i k_j x} dk,
    with every dk-integral replaced by the lattice sum dk * sum_i."""
    nx, period, x, g, twist = model._xgrid
    dk = model.dk
    # Z(y) = dk sum_m zeta_hat(-k_m) e^{-i k_m y}
    rev = zeta_hat[list(model.pairing)]
    F = np.zeros(nx, dtype=complex)
    F[2 * np.arange(model.d)] = rev
    Z = dk * twist * sfft.fft(F)
    inner = np.zeros(nx, dtype=complex)
    for j, b in enumerate(model.beta):
        if j == 0 or b == 0:
            continue
        inner += j * b * 2 ** (j / 2) * Z ** (j - 1)
    # B_i = int g(y) e^{-i k_i y} inner(y) dy, then Q(x) = -(1/2pi) dk sum_i B_i e^{i k_i x}
    B = (sfft.fft(g * inner * twist) * (period / nx))[2 * np.arange(model.d)]
    phases = np.exp(1j * np.outer(x, model.k))
    return -(dk / (2 * pi)) * (phases @ B)


def realspace_residual(model, traj, t, h_t=1e-2, candidate=True):
    """Discrete residual of (d_t^2 - d_x^2 + m0^2) zeta - Q(zeta) at time t.

    zeta is the candidate map of ``candidate_field``; the second time
    derivative is the centered difference with step ``h_t``.  The x-grid
    norm is the trapezoidal L2 norm over one period.
    """
    if not candidate:
        return ResidualReport(float("nan"), h_t, False,
                              "no map from the mode field to a real field is fixed; candidate map disabled")
    nx, period, x, _, _ = model._xgrid
    zs = [traj.phi_at(s) for s in (t - h_t, t, t + h_t)]
    zeta = [candidate_field(model, z) for z in zs]
    dtt = (zeta[0] - 2 * zeta[1] + zeta[2]) / h_t ** 2
    zh = candidate_transform(model, zs[1])
    # (-d_x^2 + m0^2) acts as omega^2 on each lattice mode
    phases = np.exp(1j * np.outer(x, model.k))
    spatial = (model.dk / (2 * pi)) * (phases @ (model.omega ** 2 * zh))
    res = dtt + spatial.real - realspace_nonlinearity(model, zh).real
    return ResidualReport(float(np.sqrt(np.sum(res ** 2) * period / nx)), h_t, True,
                          "candidate map zeta = S / (2 pi sqrt 2)")


def second_difference_ratio(omega_max, h):
    """Ratio r(h)/r(h/2) of the error of the centered second difference on e^{i omega t}.

    r(h) = omega^2 - 4 sin^2(omega h / 2) / h^2 ~ omega^4 h^2 / 12 - omega^6 h^4 / 360,
    so the ratio approaches 4 from below.
    """
    def r(hh):
        return omega_max ** 2 - 4 * np.sin(omega_max * hh / 2) ** 2 / hh ** 2
    return float(r(h) / r(h / 2))


# ---------------------------------------------------------------------------
# analytic (exponential-series) interaction

def bump_profile_unit_ball():
    """chi: radial C_c^infinity bump of mass one in the unit ball."""
    return BumpProfile(1.0, 1.0)


@dataclass
class HKPreset:
    V: PotentialSeries
    a: tuple
    kappa: float
    r: float
    chi_l2: float
    report: dict = field(default_factory=dict)


def hk_kernel(model_k, omega, kappa, r, chi, j, c):
    """c^j prod u_kappa(k_m) F(1_{|x|<=r})(sum k) with u_kappa = sqrt 2 omega^{-1/2} chi_hat(k/kappa)."""
    n = len(model_k)
    u = sqrt(2) * omega ** -0.5 * chi.ghat(model_k / kappa)
    if j == 0:
        return np.array(2 * r, dtype=complex).reshape(())
    total = np.zeros((n,) * j)
    weight = np.ones((n,) * j)
    for slot in range(j):
        shape = [1] * j
        shape[slot] = n
        total = total + model_k.reshape(shape)
        weight = weight * u.reshape(shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        box = np.where(np.abs(total) < 1e-14, 2 * r, 2 * np.sin(total * r) / np.where(total == 0, 1, total))
    return c ** j * box * weight


def hk_preset(d, dk, m0, kappa, r, a_coeffs, alpha=None, lam=None, alpha_prime=None):
    """Analytic interaction V^(j) = sqrt(j!) 2^{-j/2} a_j f_j on the lattice.

    ``a_coeffs`` is the truncated coefficient list a_0..a_J.  When ``alpha``
    and ``lam`` are given, the decay sum sum_j e^{2 alpha lam^j} ||V^(j)||^2 is
    reported together with the coefficient series
    sum_j e^{2 alpha' lam^j} j! a_j^2; a non-finite or unconverged report
    raises InvalidModel.
    """
    if kappa < 1:
        raise InvalidModel("kappa must be at least 1")
    k = (np.arange(d) - (d - 1) / 2) * dk
    omega = np.sqrt(m0 ** 2 + k ** 2)
    chi = bump_profile_unit_ball()
    c = sqrt(dk)
    space = ModeSpace.diagonal(omega, pairing=tuple(range(d - 1, -1, -1)), m0=m0)
    tensors = []
    for j, a in enumerate(a_coeffs):
        if a == 0:
            tensors.append(None)
            continue
        raw = sqrt(factorial(j)) * 2 ** (-j / 2) * a * hk_kernel(k, omega, kappa, r, chi, j, c)
        tensors.append(symmetrize(raw, d))
    V = PotentialSeries(space, tensors)
    chi_l2 = sqrt(integrate.quad(lambda x: float(chi(np.array([x]))[0]) ** 2, -1, 1, epsabs=1e-15)[0])
    preset = HKPreset(V, tuple(a_coeffs), kappa, r, chi_l2)
    norms = np.array([T.norm() for T in V.tensors])
    # lattice analogue of r^{2 dim} V_dim^2 j! ((2 pi kappa)^dim ||chi||^2 / m0)^j a_j^2, dim = 1, V_1 = 2
    bounds = np.array([sqrt(r ** 2 * 4 * factorial(j) * (2 * pi * kappa * chi_l2 ** 2 / m0) ** j * a ** 2)
                       for j, a in enumerate(a_coeffs)])
    preset.report = {"norms": norms.tolist(), "norm_bounds": bounds.tolist()}
    if alpha is not None and lam is not None:
        terms = np.array([np.exp(2 * alpha * lam ** j) * nj ** 2 for j, nj in enumerate(norms)])
        ap = alpha if alpha_prime is None else alpha_prime
        coeff_terms = np.array([np.exp(2 * ap * lam ** j) * factorial(j) * a ** 2
                                for j, a in enumerate(a_coeffs)])
        total, ctotal = float(np.sum(terms)), float(np.sum(coeff_terms))
        # the list is a truncation, so the sums are finite sums; reject overflow
        # and series whose terms still grow at the truncation order
        growing = len(terms) > 1 and (terms[-1] > terms[-2] or coeff_terms[-1] > coeff_terms[-2])
        converged = bool(np.isfinite(total) and np.isfinite(ctotal) and not growing)
        preset.report.update({"alpha": alpha, "lambda": lam, "alpha_prime": ap,
                              "decay_sum": total, "coefficient_sum": ctotal,
                              "last_term_ratio": float(terms[-1] / total) if total else 0.0,
                              "finite": converged})
        if not converged:
            raise InvalidModel(f"decay report is not finite at alpha={alpha}, lambda={lam}")
    V.decay = preset.report
    return preset


# ---------------------------------------------------------------------------
# model spec files

_SPEC_KEYS = {"d", "dk", "m0", "g", "beta", "jmax"}


def parse_model_spec(text):
    """Parse ``key = value`` lines (d, dk, m0, g = gauss(w), beta = [..], jmax).

    Returns (GridModel, jmax or None).
    """
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidModel(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SPEC_KEYS:
            raise InvalidModel(f"line {lineno}: unknown model key {key!r}")
        vals[key] = value
    missing = {"d", "dk", "m0", "beta"} - set(vals)
    if missing:
        raise InvalidModel(f"model spec lacks {sorted(missing)}")
    beta = [float(b) for b in vals["beta"].strip("[] ").split(",") if b.strip()]
    model = build_model(int(vals["d"]), float(vals["dk"]), float(vals["m0"]),
                        parse_profile(vals.get("g", "gauss(1.0)")), beta)
    return model, (int(vals["jmax"]) if "jmax" in vals else None)


def load_model_spec(path):
    with open(path) as fh:
        return parse_model_spec(fh.read())
