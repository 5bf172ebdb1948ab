"""Seeded invariant suites shared by ``hepplab validate`` and the acceptance tests.

Each suite takes a numpy Generator and returns a list of :class:`Check`
records.  Checks compare two independent computations of the same matrix or
number and record the worst deviation against a fixed tolerance.  No timing
information is recorded, so a suite run is reproducible bit for bit.
"""
from dataclasses import asdict, dataclass
from math import factorial, sqrt

import numpy as np

from . import bogoliubov as bg
from . import classical as cl
from . import fock, pphi2, wick
from .hepp import build_pipeline, convergence_study, assemble_approximant, exact_evolve, phase_aligned_distance
from .settings import DEFAULT_TOLERANCES
from .tensor import (ModeSpace, SymTensor, basis_size, contract_partial, conj_apply, embed,
                     enumerate_multi_indices, polarization, sym_product, sym_tensor_power, symmetrize)


@dataclass
class Check:
    suite: str
    name: str
    value: float
    tol: float
    cases: int = 1

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.suite}/{self.name}: {self.value:.3e} (tol {self.tol:.1e}, {self.cases} cases)"


# ---------------------------------------------------------------------------
# random data

def cvec(rng, d, scale=1.0):
    return scale * (rng.normal(size=d) + 1j * rng.normal(size=d))


def random_symbol(rng, d, orders, scale=1.0):
    """PolySymbol with complex Gaussian kernels for each (p, q) in ``orders``."""
    terms = {}
    for p, q in orders:
        shape = (basis_size(d, q), basis_size(d, p))
        terms[(p, q)] = scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    return wick.PolySymbol(d, terms)


def random_orders(rng, max_total, n_terms=2):
    pairs = [(p, q) for p in range(max_total + 1) for q in range(max_total + 1 - p)]
    pick = rng.choice(len(pairs), size=min(n_terms, len(pairs)), replace=False)
    return [pairs[i] for i in sorted(pick)]


def random_hermitian(rng, d, shift=1.0):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (X + X.conj().T) / 2
    w = np.linalg.eigvalsh(H)
    return H + (shift - w.min()) * np.eye(d)


def random_potential(rng, space, degrees, scale=0.1):
    """Conjugation-invariant PotentialSeries with random tensors of the given orders."""
    jmax = max(degrees)
    tensors = [None] * (jmax + 1)
    for j in degrees:
        T = SymTensor(space.d, j, cvec(rng, basis_size(space.d, j), scale))
        tensors[j] = (T + conj_apply(T, space.pairing)) * 0.5
    return wick.PotentialSeries(space, tensors)


def _guard_dev(X, Y, basis, nmax):
    g = basis.guard(nmax)
    return float(np.max(np.abs((X - Y)[g, g]), initial=0.0))


# ---------------------------------------------------------------------------
# symmetric tensors

def tensor_suite(rng, cases=20):
    out = []
    worst = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 4))
        raw = cvec(rng, d ** 3).reshape(d, d, d)
        avg = sum(np.transpose(raw, p) for p in
                  [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6
        worst = max(worst, float(np.max(np.abs(embed(symmetrize(raw, d)) - avg))))
    out.append(Check("tensor", "symmetrize_vs_permutation_average", worst, 1e-13, cases))
    worst = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 4))
        us = [cvec(rng, d) for _ in range(3)]
        worst = max(worst, float(np.max(np.abs(polarization(us).coeffs - sym_product(us).coeffs))))
    out.append(Check("tensor", "polarization_vs_slotwise_product", worst, 1e-12, cases))
    worst = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 4))
        j = int(rng.integers(1, 5))
        T = SymTensor(d, j, cvec(rng, basis_size(d, j)))
        w = cvec(rng, d)
        keep = int(rng.integers(0, j + 1))
        staged = contract_partial(contract_partial(T, w, keep), w, 0).coeffs[0]
        direct = np.vdot(sym_tensor_power(w, j).coeffs, T.coeffs)
        worst = max(worst, abs(staged - direct) / max(1.0, abs(direct)))
    out.append(Check("tensor", "staged_contraction", worst, 1e-12, cases))
    worst = 0.0
    for d in range(1, 5):
        for n in range(9):
            worst = max(worst, abs(len(enumerate_multi_indices(d, n)) - basis_size(d, n)))
    out.append(Check("tensor", "basis_cardinality", float(worst), 0.0, 36))
    return out


# ---------------------------------------------------------------------------
# Fock space: CCR, Weyl relations, conjugation identities

def ccr_suite(rng, cases=20, d=2, M=8, eps=0.5):
    basis = fock.FockBasis(d, M)
    out = []
    w1 = w2 = w3 = 0.0
    for _ in range(cases):
        u, v = cvec(rng, d), cvec(rng, d)
        au, adu = fock.annihilation_op(basis, u, eps), fock.creation_op(basis, u, eps)
        av, adv = fock.annihilation_op(basis, v, eps), fock.creation_op(basis, v, eps)
        eye = np.eye(basis.dim)
        w1 = max(w1, _guard_dev(fock.commutator(au, adv), eps * np.vdot(u, v) * eye, basis, M - 1))
        w2 = max(w2, _guard_dev(fock.commutator(au, av), 0 * eye, basis, M - 2))
        w3 = max(w3, _guard_dev(fock.commutator(adu, adv), 0 * eye, basis, M - 2))
    out.append(Check("ccr", "a_adag_commutator", w1, 1e-12, cases))
    out.append(Check("ccr", "a_a_commutator", w2, 1e-12, cases))
    out.append(Check("ccr", "adag_adag_commutator", w3, 1e-12, cases))

    # Weyl relations need a large cutoff; probe only low sectors
    big = fock.FockBasis(d, 30)
    worst_w = worst_n = 0.0
    n_weyl = max(3, cases // 4)
    N = fock.number_op(big, eps)
    for _ in range(n_weyl):
        u1, u2 = cvec(rng, d, 0.4), cvec(rng, d, 0.4)
        sigma = -2 * np.vdot(u1, u2).imag
        lhs = fock.weyl_op(big, u1, eps) @ fock.weyl_op(big, u2, eps)
        rhs = np.exp(1j * eps * sigma / 4) * fock.weyl_op(big, u1 + u2, eps)
        worst_w = max(worst_w, _guard_dev(lhs, rhs, big, 4))
        W = fock.weyl_op(big, u1, eps)
        moved = W.conj().T @ N @ W
        expect = N + eps * fock.field_op(big, 1j * u1, eps) + eps ** 2 / 2 * np.vdot(u1, u1).real * np.eye(big.dim)
        worst_n = max(worst_n, _guard_dev(moved, expect, big, 4))
    out.append(Check("ccr", "weyl_composition_phase", worst_w, 1e-8, n_weyl))
    out.append(Check("ccr", "weyl_number_translation", worst_n, 1e-8, n_weyl))

    worst = 0.0
    N1 = fock.number_op(basis, 1.0)
    B = np.diag(1.0 / (basis.sector + 1.0))
    for _ in range(cases):
        u = cvec(rng, d)
        A_app = N1 + np.eye(basis.dim) + fock.field_op(basis, 1j * u, eps) \
            + eps / 2 * np.vdot(u, u).real * np.eye(basis.dim)
        lhs = B @ A_app - A_app @ B
        rhs = -1j * B @ fock.field_op(basis, u, eps) @ B
        worst = max(worst, _guard_dev(lhs, rhs, basis, M - 2))
    out.append(Check("ccr", "resolvent_commutator", worst, 1e-10, cases))

    worst_f = worst_fw = 0.0
    space = ModeSpace(random_hermitian(rng, d), 1.0)
    basis_a = fock.FockBasis(space, 30)
    for _ in range(n_weyl):
        t = float(rng.uniform(-2, 2))
        u = cvec(rng, d, 0.4)
        F = fock.free_evolution(basis_a, t)
        ut = space.propagator(-t) @ u
        lhs = F @ fock.field_op(basis_a, u, eps) @ F.conj().T
        worst_f = max(worst_f, _guard_dev(lhs, fock.field_op(basis_a, ut, eps), basis_a, 28))
        lhs = F @ fock.weyl_op(basis_a, u, eps) @ F.conj().T
        worst_fw = max(worst_fw, _guard_dev(lhs, fock.weyl_op(basis_a, ut, eps), basis_a, 4))
    out.append(Check("ccr", "free_evolution_field", worst_f, 1e-9, n_weyl))
    out.append(Check("ccr", "free_evolution_weyl", worst_fw, 1e-8, n_weyl))
    return out


# ---------------------------------------------------------------------------
# Wick calculus

def wick_suite(rng, cases=200, d=2, M=8):
    basis = fock.FockBasis(d, M)
    out = []
    # two quantization routes
    worst = 0.0
    for _ in range(cases):
        b = random_symbol(rng, d, random_orders(rng, 4))
        eps = float(rng.uniform(0.05, 1.0))
        sec = wick.quantize(b, eps, basis)
        lad = wick.quantize(b, eps, basis, method="ladder")
        worst = max(worst, _guard_dev(sec, lad, basis, M - b.order) / max(1.0, b.norm()))
    out.append(Check("wick", "quantization_two_routes", worst, 1e-11, cases))

    worst = 0.0
    for _ in range(cases):
        b1 = random_symbol(rng, d, random_orders(rng, 2))
        b2 = random_symbol(rng, d, random_orders(rng, 2))
        eps = float(rng.uniform(0.05, 1.0))
        lhs = wick.quantize(b1, eps, basis) @ wick.quantize(b2, eps, basis)
        rhs = wick.quantize(wick.compose_symbols(b1, b2, eps), eps, basis)
        scale = max(1.0, b1.norm() * b2.norm())
        worst = max(worst, _guard_dev(lhs, rhs, basis, M - b1.order - b2.order) / scale)
    out.append(Check("wick", "composition", worst, 1e-10, cases))

    worst = 0.0
    for _ in range(cases):
        b = random_symbol(rng, d, random_orders(rng, 4))
        eps = float(rng.uniform(0.05, 1.0))
        lhs = wick.quantize(b, eps, basis).conj().T
        rhs = wick.quantize(b.conj(), eps, basis)
        worst = max(worst, _guard_dev(lhs, rhs, basis, M) / max(1.0, b.norm()))
    out.append(Check("wick", "adjoint", worst, 1e-12, cases))

    worst = 0.0
    for _ in range(cases):
        (p, q), = random_orders(rng, 4, 1)
        b = random_symbol(rng, d, [(p, q)])
        eps = float(rng.uniform(0.01, 1.0))
        lhs = wick.quantize(b, eps, basis, method="ladder")
        rhs = eps ** ((p + q) / 2) * wick.quantize(b, 1.0, basis)
        worst = max(worst, _guard_dev(lhs, rhs, basis, M - p - q) / max(1.0, b.norm()))
    out.append(Check("wick", "homogeneity", worst, 1e-11, cases))

    space = ModeSpace(random_hermitian(rng, d), 1.0)
    basis_a = fock.FockBasis(space, M)
    worst = 0.0
    for _ in range(cases):
        b = random_symbol(rng, d, random_orders(rng, 4))
        eps = float(rng.uniform(0.05, 1.0))
        t = float(rng.uniform(-2, 2))
        F = fock.free_evolution(basis_a, t)
        lhs = F @ wick.quantize(b, eps, basis_a) @ F.conj().T
        rhs = wick.quantize(wick.compose_linear(b, space.propagator(t)), eps, basis_a)
        worst = max(worst, _guard_dev(lhs, rhs, basis_a, M) / max(1.0, b.norm()))
    out.append(Check("wick", "free_covariance", worst, 1e-9, cases))

    # translation by Weyl conjugation, d = 1 with a large cutoff
    tb = fock.FockBasis(1, 60)
    worst = 0.0
    for _ in range(cases):
        b = random_symbol(rng, 1, random_orders(rng, 4))
        eps = float(rng.uniform(0.25, 1.0))
        u = cvec(rng, 1, 0.3)
        D = fock.displacement_op(tb, u, eps)
        lhs = D.conj().T @ wick.quantize(b, eps, tb) @ D
        rhs = wick.quantize(wick.translate_symbol(b, u), eps, tb)
        worst = max(worst, _guard_dev(lhs, rhs, tb, 6) / max(1.0, b.norm()))
    out.append(Check("wick", "translation", worst, 1e-9, cases))

    worst = 0.0
    for _ in range(cases):
        b = random_symbol(rng, d, random_orders(rng, 4))
        z, h = cvec(rng, d), cvec(rng, d)
        worst = max(worst, abs(wick.taylor_evaluate(b, z, h) - b(z + h)) / max(1.0, abs(b(z + h))))
    out.append(Check("wick", "taylor_reconstruction", worst, 1e-10, cases))
    return out


# ---------------------------------------------------------------------------
# classical layer

def classical_suite(rng, energy_tol=None, action_tol=None):
    tol = DEFAULT_TOLERANCES
    energy_tol = tol.energy_tol if energy_tol is None else energy_tol
    action_tol = tol.action_tol if action_tol is None else action_tol
    out = []
    model = pphi2.build_model(32, 0.5, 1.0, pphi2.GaussProfile(1.0), [0.0, 0.0, 0.5, 0.0, 0.2])
    phi0 = cvec(rng, 32, 0.3)
    traj = pphi2.integrate_field(model, phi0, 2.0, tol=1e-11)
    out.append(Check("classical", "energy_conservation_d32", traj.diagnostics["energy_drift"], energy_tol))
    out.append(Check("classical", "energy_lower_bound", 0.0 if traj.diagnostics["energy_bound_ok"] else 1.0, 0.0))

    space = ModeSpace.diagonal([1.0])
    V = random_potential(rng, space, [2, 3, 4], 0.1)
    tr = cl.integrate_flow(V, [0.5], 1.0, tol=1e-11, override=True)
    rep = cl.classical_action_check(tr, V, action_tol=action_tol, raise_on_fail=False)
    out.append(Check("classical", "action_identity", rep["max_deviation"], action_tol))

    # envelope: a short horizon inside the lifespan bound with checks armed
    T0 = cl.lifespan_bound(V, 0.5)
    tr_env = cl.integrate_flow(V, [0.5], 0.9 * T0, tol=1e-11)
    out.append(Check("classical", "bihari_envelope_ratio",
                     max(0.0, tr_env.diagnostics["envelope_max_ratio"] - 1.0), 0.0))
    Vs = random_potential(rng, space, [2, 3, 4], 0.3)

    out.append(Check("classical", "mild_residual_halving", mild_residual_halving(Vs), 0.5))

    worst = 0.0
    for d, beta in [(2, [0.1, -0.3, 0.4, 0.0, 0.3]), (3, [0.2, 0.1, 0.0, 0.4, 0.1]), (4, [0.3, 0.2, 0.5, 0.1, 0.2])]:
        m = pphi2.build_model(d, 0.5, 1.0, pphi2.GaussProfile(1.0), beta)
        Vm = pphi2.build_potential_tensors(m)
        z0 = cvec(rng, d, 0.3)
        ts = np.linspace(0.0, 1.0, 6)
        a = pphi2.delta_circ(m, pphi2.integrate_field(m, z0, 1.0, tol=1e-12), ts)
        tg = cl.integrate_flow(Vm, z0, 1.0, tol=1e-12, override=True, check_envelope=False)
        worst = max(worst, float(np.max(np.abs(a - [tg.delta_at(s) for s in ts]))))
    out.append(Check("classical", "delta_dual_path", worst, 1e-8, 3))
    return out


def mild_residual_halving(V, phi0=(1.0,), T=1.0, tol0=1e-7, n_halvings=10):
    """Residual reduction per halving of the solver tolerance.

    Adaptive runs at neighbouring tolerances take different step sequences,
    so a single pair is noisy; the factor is 2^{-s} with s the fitted slope of
    log residual against log tolerance over a halving sequence.
    """
    from scipy import stats
    probes = np.linspace(T / 10, T, 10)
    tols = tol0 * 0.5 ** np.arange(n_halvings + 1)
    res = []
    for rtol in tols:
        t = cl.integrate_flow(V, list(phi0), T, tol=rtol, override=True)
        res.append(max(cl.mild_residual(t, V, s) for s in probes))
    slope = stats.linregress(np.log(tols), np.log(res)).slope
    return float(2.0 ** -slope)


# ---------------------------------------------------------------------------
# quadratic dynamics

def _quartic_chain(rng, T=1.0, n_grid=11, M=40):
    space = ModeSpace.diagonal([1.0])
    V = random_potential(rng, space, [2, 3, 4], 0.1)
    grid = np.linspace(0.0, T, n_grid)
    traj = cl.integrate_flow(V, [0.5], T, override=True, t_eval=grid)
    qpath = bg.build_V2_path(V, traj, grid)
    maps = bg.integrate_symplectic(qpath, grid)
    basis = fock.FockBasis(space, M)
    return V, traj, qpath, maps, basis


def bogoliubov_suite(rng, n_symbols=10, transport_tol=None):
    transport_tol = DEFAULT_TOLERANCES.transport_tol if transport_tol is None else transport_tol
    out = []
    V, traj, qpath, maps, basis = _quartic_chain(rng)
    prop = bg.integrate_U2(basis, qpath, 1.0)
    times = [0.3, 0.6, 1.0]
    worst = 0.0
    for _ in range(n_symbols):
        b = random_symbol(rng, 1, random_orders(rng, 4, 3), 0.5)
        for t in times:
            bh = bg.transport_symbol(b, t, maps)
            # the truncated propagator is only exact well below the cutoff
            dev = bg.transport_deviation(b, bh, prop.at(t), basis, guard=basis.M // 4)
            worst = max(worst, dev / max(1.0, b.norm()))
    out.append(Check("bogoliubov", "transport_oracle", worst, transport_tol, n_symbols * len(times)))

    paths = [bg.integrate_U2(basis, qpath, e) for e in (0.5, 0.25, 0.3)]
    dev = max(float(np.max(np.abs(x - y))) for p in paths[1:] for x, y in zip(paths[0].U_tilde, p.U_tilde))
    out.append(Check("bogoliubov", "U2_eps_independence", dev, 1e-8))
    out.append(Check("bogoliubov", "U2_unitarity", prop.unitarity(), 1e-9))
    out.append(Check("bogoliubov", "symplectic_defect", max(m.symplectic_defect(rng) for m in maps), 1e-10))
    return out


# ---------------------------------------------------------------------------
# P(phi)_2 layer

def pphi2_suite(rng, cases=5):
    out = []
    worst = 0.0
    for _ in range(cases):
        m = pphi2.build_model(8, 0.5, 1.0, pphi2.GaussProfile(1.0), list(rng.uniform(0.05, 0.5, 5)))
        z = cvec(rng, 8, 0.5)
        a, b = pphi2.nonlinearity_eval(m, z), pphi2.nonlinearity_direct(m, z)
        worst = max(worst, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b)))))
    out.append(Check("pphi2", "fft_vs_direct_d8", worst, 1e-10, cases))
    worst = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 5))
        m = pphi2.build_model(d, 0.5, 1.0, pphi2.GaussProfile(1.0), list(rng.uniform(0.05, 0.5, 5)))
        V = pphi2.build_potential_tensors(m)
        z = cvec(rng, d, 0.5)
        worst = max(worst, float(np.max(np.abs(pphi2.nonlinearity_eval(m, z) - cl.eval_potential(V, z)[1]))))
    out.append(Check("pphi2", "fft_vs_tensor_gradient", worst, 1e-9, cases))
    a = [0.3 ** j / factorial(j) for j in range(8)]
    preset = pphi2.hk_preset(4, 0.5, 1.0, 1.0, 1.0, a, alpha=0.1, lam=1.5, alpha_prime=0.2)
    rep = preset.report
    out.append(Check("pphi2", "hk_report_finite", 0.0 if rep["finite"] else 1.0, 0.0))
    ratio = max(n / b for n, b in zip(rep["norms"], rep["norm_bounds"]) if b > 0)
    out.append(Check("pphi2", "hk_norm_vs_bound", max(0.0, ratio - 1.1), 0.0))
    return out


# ---------------------------------------------------------------------------
# expansion engine (fast checks only)

def hepp_suite(rng, tol_exact=None):
    tol_exact = DEFAULT_TOLERANCES.tol_exact if tol_exact is None else tol_exact
    out = []
    space = ModeSpace.diagonal([1.0])
    V0 = wick.PotentialSeries(space, [None, None, None])
    pipe = build_pipeline(V0, [0.5], 1.0, 0, n_grid=33)
    worst = 0.0
    for eps in (0.2, 0.05):
        basis = fock.FockBasis(space, 60)
        psi = pipe.fbasis.vacuum()
        start = fock.coherent_state(basis, [0.5], eps).vector
        for t in (0.5, 1.0):
            app = assemble_approximant(t, eps, 0, psi, pipe.traj, pipe.prop, pipe.corrections, basis)
            exact = fock.free_evolution(basis, -t) @ start
            worst = max(worst, 1 - abs(np.vdot(exact, app.vector)))
    out.append(Check("hepp", "free_field_fidelity_defect", worst, 1e-9))

    Vq = random_potential(rng, space, [0, 1, 2], 0.2)
    reps = convergence_study(Vq, [0.5], 1.0, [0], model_id="subquadratic", override=True)
    out.append(Check("hepp", "subquadratic_exactness", max(reps[0].err_norm), tol_exact, len(reps[0].eps)))
    return out


SUITES = {
    "tensor": tensor_suite,
    "ccr": ccr_suite,
    "wick": wick_suite,
    "classical": classical_suite,
    "bogoliubov": bogoliubov_suite,
    "pphi2": pphi2_suite,
    "hepp": hepp_suite,
}


def run_suites(seed, cases=20, tolerances=None, names=None):
    """Run the named suites (all by default), each with its own child generator."""
    tol = DEFAULT_TOLERANCES if tolerances is None else tolerances
    names = list(SUITES) if names is None else list(names)
    children = np.random.SeedSequence(seed).spawn(len(SUITES))
    seeds = dict(zip(SUITES, children))
    checks = []
    for name in names:
        rng = np.random.default_rng(seeds[name])
        if name == "wick":
            checks += wick_suite(rng, cases=cases)
        elif name in ("tensor", "ccr"):
            checks += SUITES[name](rng, cases=cases)
        elif name == "classical":
            checks += classical_suite(rng, tol.energy_tol, tol.action_tol)
        elif name == "bogoliubov":
            checks += bogoliubov_suite(rng, transport_tol=tol.transport_tol)
        elif name == "hepp":
            checks += hepp_suite(rng, tol.tol_exact)
        else:
            checks += SUITES[name](rng)
    return checks
