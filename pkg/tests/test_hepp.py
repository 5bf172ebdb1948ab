import json
from math import ceil, sqrt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cvec
from hepplab import fock, hepp, wick
from hepplab.errors import InsufficientData, QuadratureError, ShapeError
from hepplab.settings import DEFAULT_TOLERANCES
from hepplab.tensor import ModeSpace, SymTensor

seeds = st.integers(0, 2 ** 32 - 1)
SPACE1 = ModeSpace.diagonal([1.0])


def series(*coeffs):
    return wick.PotentialSeries(SPACE1, [None if c is None else SymTensor(1, j, [c]) for j, c in enumerate(coeffs)])


@pytest.fixture(scope="module")
def quartic_pipe():
    return hepp.build_pipeline(series(None, None, None, None, 0.05), [0.4], 1.0, 2, n_grid=65, override=True)


# ---------------------------------------------------------------------------
# correction symbols

def test_subquadratic_has_no_corrections():
    pipe = hepp.build_pipeline(series(0.1, 0.2, 0.3), [0.4], 1.0, 2, n_grid=17, override=True)
    c = pipe.corrections
    assert c.diagnostics["exact_regime"]
    for k in (1, 2):
        assert all(not b.terms for b in c.b[k])


def test_correction_invariants(quartic_pipe):
    c = quartic_pipe.corrections
    assert all(b.distance(wick.PolySymbol.constant(1, 1.0)) == 0 for b in c.b[0])
    for k in (1, 2):
        assert c.at(k, 0.0).norm() == 0
        assert max(b.order for b in c.b[k]) <= 3 * k
    assert c.max_orders()[0] == 0
    payload = json.loads(json.dumps(c.to_dict(times=[0.0, 1.0])))
    assert payload["N"] == 2 and payload["times"] == [0.0, 1.0]
    with pytest.raises(ValueError):
        c.at(1, 0.123)


def test_cubic_first_correction_grid_halving():
    V = series(None, None, None, 0.1)
    b1 = [hepp.build_pipeline(V, [0.4], 1.0, 1, n_grid=n, override=True, quad_tol=1.0).corrections.at(1, 1.0)
          for n in (9, 17, 33)]
    assert all(b.order <= 3 for b in b1)
    assert b1[0].distance(b1[1]) / b1[1].distance(b1[2]) >= 4


def test_coarse_grid_is_refused():
    with pytest.raises(QuadratureError):
        hepp.build_pipeline(series(None, None, None, 0.1), [0.4], 1.0, 1, n_grid=9, override=True)


def test_order_cap():
    pipe = hepp.build_pipeline(series(0.0), [0.1], 0.5, 0, n_grid=9)
    with pytest.raises(ShapeError):
        hepp.compute_corrections(pipe.V, pipe.traj, pipe.maps, pipe.prop, 4)


# ---------------------------------------------------------------------------
# exact evolution

def test_exact_evolution_paths_agree(rng):
    V = series(None, None, None, None, 0.1)
    basis = fock.FockBasis(SPACE1, 30)
    psi0 = np.zeros(basis.dim, dtype=complex)
    psi0[:8] = cvec(rng, 8)
    psi0 /= np.linalg.norm(psi0)
    a = hepp.exact_evolve(basis, V, 0.5, 0.8, psi0)
    b = hepp.exact_evolve(basis, V, 0.5, 0.8, psi0, method="ode", tol=1e-12)
    assert np.linalg.norm(a - b) < 1e-8
    assert abs(np.linalg.norm(a) - 1) < 1e-10
    assert np.allclose(hepp.exact_evolve(basis, V, 0.5, 0.0, psi0), psi0)
    assert np.allclose(hepp.exact_evolve(basis, V, 0.5, 0.0, psi0, method="ode"), psi0)


def test_exact_evolution_free(rng):
    basis = fock.FockBasis(SPACE1, 20)
    psi0 = cvec(rng, basis.dim)
    psi0 /= np.linalg.norm(psi0)
    out = hepp.exact_evolve(basis, series(0.0), 0.25, 0.7, psi0)
    assert np.allclose(out, fock.free_evolution(basis, -0.7) @ psi0, atol=1e-12)


def test_exact_evolution_errors():
    basis = fock.FockBasis(SPACE1, 5)
    with pytest.raises(ShapeError):
        hepp.exact_evolve(basis, series(0.0), 0.5, 1.0, 2 * basis.vacuum())
    with pytest.raises(ValueError):
        hepp.exact_evolve(basis, series(0.0), 0.5, 1.0, basis.vacuum(), method="magic")


# ---------------------------------------------------------------------------
# approximant

def test_free_field_approximant_is_coherent_evolution():
    pipe = hepp.build_pipeline(series(0.0), [0.6 + 0.2j], 1.0, 0, n_grid=17)
    eps = 0.1
    basis = fock.FockBasis(SPACE1, hepp.truncation_size(pipe.radius2, eps, 0))
    start = fock.coherent_state(basis, [0.6 + 0.2j], eps).vector
    for t in (0.5, 1.0):
        app = hepp.assemble_approximant(t, eps, 0, pipe.fbasis.vacuum(), pipe.traj, pipe.prop,
                                        pipe.corrections, basis)
        exact = fock.free_evolution(basis, -t) @ start
        assert abs(np.vdot(exact, app.vector)) > 1 - 1e-9
        assert app.warning == (app.tail > DEFAULT_TOLERANCES.tail_tol)


def test_zeroth_order_norm(quartic_pipe):
    eps = 0.2
    basis = fock.FockBasis(SPACE1, hepp.truncation_size(quartic_pipe.radius2, eps, 0))
    app = hepp.assemble_approximant(1.0, eps, 0, quartic_pipe.fbasis.vacuum(), quartic_pipe.traj,
                                    quartic_pipe.prop, quartic_pipe.corrections, basis)
    assert abs(np.linalg.norm(app.vector) - 1) < 1e-8 + app.tail


def test_approximant_rejects_psi_near_cutoff(quartic_pipe):
    psi = np.zeros(quartic_pipe.fbasis.dim, dtype=complex)
    psi[-1] = 1.0
    basis = fock.FockBasis(SPACE1, 30)
    with pytest.raises(ShapeError):
        hepp.assemble_approximant(0.5, 0.2, 1, psi, quartic_pipe.traj, quartic_pipe.prop,
                                  quartic_pipe.corrections, basis)


def test_subquadratic_formula_is_exact():
    reps = hepp.convergence_study(series(0.1, 0.2, 0.3), [0.5], 1.0, [0, 1],
                                  eps_grid=(0.32, 0.16, 0.08), n_grid=33, override=True)
    for rep in reps.values():
        assert rep.exact_regime and np.isnan(rep.slope)
        assert max(rep.err_norm) < DEFAULT_TOLERANCES.tol_exact


def test_free_model_error_floor():
    reps = hepp.convergence_study(series(0.0), [0.5], 1.0, [0], eps_grid=(0.32, 0.16), n_grid=17)
    assert max(reps[0].err_norm) < 1e-9


def test_remainder_derivative_diagnostic(quartic_pipe):
    eps = 0.2
    basis = fock.FockBasis(SPACE1, hepp.truncation_size(quartic_pipe.radius2, eps, 1) + 10)
    rows = hepp.theta_derivative_check([0.25, 0.5, 0.75], eps, 1, quartic_pipe.fbasis.vacuum(),
                                       quartic_pipe.traj, quartic_pipe.prop, quartic_pipe.corrections,
                                       basis, quartic_pipe.V)
    for row in rows:
        assert row["relative_mismatch"] < 1e-4
        assert row["within_bound"]


# ---------------------------------------------------------------------------
# reports and helpers

def test_truncation_size():
    n = ceil(1.0 / 0.1)
    assert hepp.truncation_size(1.0, 0.1, 1) == n + ceil(8 * sqrt(n)) + 3 + 6
    assert hepp.truncation_size(1.0, 0.1, 1, extra=4) == hepp.truncation_size(1.0, 0.1, 1) + 4


def test_fit_slope_recovers_power_law():
    eps = np.array([0.32, 0.16, 0.08, 0.04, 0.02])
    slope, ci, intercept = hepp.fit_slope(eps, 3 * eps ** 0.75)
    assert abs(slope - 0.75) < 1e-12 and abs(intercept - np.log(3)) < 1e-12
    noisy = 3 * eps ** 0.75 * np.exp(np.array([0.05, -0.03, 0.02, -0.04, 0.01]))
    slope, ci, _ = hepp.fit_slope(eps, noisy)
    ref = np.polyfit(np.log(eps), np.log(noisy), 1)[0]
    assert abs(slope - ref) < 1e-12 and ci[0] < slope < ci[1]


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0, 2 * np.pi))
def test_phase_aligned_distance(seed, theta):
    rng = np.random.default_rng(seed)
    a, b = cvec(rng, 5), cvec(rng, 5)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert hepp.phase_aligned_distance(a, np.exp(1j * theta) * a) < 1e-12
    expect = sqrt(max(0.0, 2 - 2 * abs(np.vdot(a, b))))
    assert abs(hepp.phase_aligned_distance(a, b) - expect) < 1e-12
    assert hepp.phase_aligned_distance(a, b) <= np.linalg.norm(a - b) + 1e-12


def make_report(N, errs):
    n = len(errs)
    return hepp.ConvergenceReport("m", N, [0.32, 0.16, 0.08, 0.04][:n], [10] * n, [0.0] * n,
                                  list(errs), list(errs), [0.1] * n)


def test_ordering_check():
    good = {0: make_report(0, [1e-1, 5e-2, 3e-2, 2e-2]), 1: make_report(1, [2e-1, 3e-2, 1e-2, 5e-3])}
    assert hepp.ordering_check(good)
    bad = {0: good[0], 1: make_report(1, [1e-3, 1e-3, 1e-3, 3e-2])}
    assert not hepp.ordering_check(bad)


def test_report_serialization(tmp_path):
    rep = make_report(1, [1e-1, 5e-2, 3e-2, 2e-2])
    rep.slope, rep.slope_ci = 0.9, (0.8, 1.0)
    data = json.loads(rep.to_json(tmp_path / "r.json"))
    assert data == json.loads((tmp_path / "r.json").read_text())
    assert data["slope_ci"] == [0.8, 1.0] and data["N"] == 1
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "eps,M,tail,err_norm,err_fidelity,runtime_s"
    assert len(lines) == 5 and lines[1].split(",")[1] == "10"


def test_study_argument_errors():
    with pytest.raises(ShapeError):
        hepp.convergence_study(series(0.0), [0.1], 1.0, [0], eps_grid=(1.5, 0.5), n_grid=9)
    with pytest.raises(InsufficientData):
        hepp.convergence_study(series(None, None, None, None, 0.05), [0.4], 1.0, [0],
                               eps_grid=(0.32, 0.16, 0.08), n_grid=33, override=True)
