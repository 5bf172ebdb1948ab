from functools import reduce
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cvec, guarded, occupation_ladder
from hepplab import fock, wick
from hepplab.errors import InvalidPotential, ShapeError
from hepplab.suites import random_orders, random_symbol
from hepplab.tensor import ModeSpace, SymTensor, basis_size, from_sym1, multi_indices, sym_tensor_power

seeds = st.integers(0, 2 ** 32 - 1)


def ladder_product_oracle(b, eps, basis):
    """sum C[beta, alpha] (a^*)^beta a^alpha with C = sqrt(q!/beta!) K sqrt(p!/alpha!)."""
    raw = [occupation_ladder(basis, i) for i in range(basis.d)]
    eye = np.eye(basis.dim)
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for (p, q), K in b.terms.items():
        alphas, betas = multi_indices(b.d, p), multi_indices(b.d, q)
        for ib, beta in enumerate(betas):
            wb = np.sqrt(factorial(q) / np.prod([factorial(x) for x in beta]))
            create = reduce(np.matmul, [np.linalg.matrix_power(raw[i].T, n) for i, n in enumerate(beta)], eye)
            for ia, alpha in enumerate(alphas):
                if K[ib, ia] == 0:
                    continue
                wa = np.sqrt(factorial(p) / np.prod([factorial(x) for x in alpha]))
                kill = reduce(np.matmul, [np.linalg.matrix_power(raw[i], n) for i, n in enumerate(alpha)], eye)
                out += eps ** ((p + q) / 2) * wb * K[ib, ia] * wa * (create @ kill)
    return out


def direct_eval(b, z):
    """<z^{(x)q}, K z^{(x)p}> summed over the terms."""
    return sum(np.vdot(sym_tensor_power(z, q).coeffs, K @ sym_tensor_power(z, p).coeffs)
               for (p, q), K in b.terms.items())


def test_symbol_shape_check():
    with pytest.raises(ShapeError):
        wick.PolySymbol(2, {(1, 1): np.eye(3)})


def test_evaluation_matches_definition(rng):
    b = random_symbol(rng, 3, [(0, 0), (1, 2), (2, 2), (3, 0)])
    z = cvec(rng, 3)
    assert abs(b(z) - direct_eval(b, z)) < 1e-12 * (1 + abs(b(z)))


def test_symbol_from_constant_potential():
    space = ModeSpace.diagonal([1.0, 1.5])
    V = wick.PotentialSeries(space, [SymTensor(2, 0, [0.7])])
    b = wick.symbol_from_potential(V)
    assert b.order == 0
    assert np.isclose(b(np.array([0.3, 1j])), 0.7)


def test_symbol_from_linear_potential(rng):
    space = ModeSpace.diagonal([1.0, 2.0])
    v = rng.normal(size=2)
    V = wick.PotentialSeries(space, [None, SymTensor(2, 1, v)])
    b = wick.symbol_from_potential(V)
    # w = z + conj z is real, so F(z) = sum_i v_i 2 Re z_i
    vm = from_sym1(v)
    assert np.isclose(b(np.array([1.0, 0.0])), 2 * vm[0])
    z = cvec(rng, 2)
    assert np.isclose(b(z), 2 * np.dot(vm, z.real))


def test_symbol_from_quadratic_potential_single_mode():
    c = 0.37
    space = ModeSpace.diagonal([1.0])
    V = wick.PotentialSeries(space, [None, None, SymTensor(1, 2, [c])])
    b = wick.symbol_from_potential(V)
    for z in (0.3 + 0.4j, -1.2 + 0.1j):
        hand = c * (z ** 2 + np.conj(z) ** 2 + 2 * abs(z) ** 2) / np.sqrt(2)
        assert abs(b(np.array([z])) - hand) < 1e-14


def test_potential_must_be_conjugation_invariant():
    space = ModeSpace.diagonal([1.0, 1.0])
    with pytest.raises(InvalidPotential):
        wick.PotentialSeries(space, [None, SymTensor(2, 1, [1j, 0])])


def test_derivatives_of_linear_symbol(rng):
    u = cvec(rng, 2)
    b = wick.PolySymbol.bra(u)
    for z in (cvec(rng, 2), cvec(rng, 2)):
        assert np.allclose(wick.derive_symbol(b, z, 1, 0), wick.derive_symbol(b, np.zeros(2), 1, 0))
        assert np.allclose(wick.derive_symbol(b, z, 0, 1), 0)


def test_mixed_derivative_of_quartic_by_finite_differences():
    b = wick.PolySymbol(1, {(2, 2): np.array([[1.0]])})
    z0, h = 0.7, 1e-5
    f = lambda x, y: b(np.array([x + 1j * y])).real
    # d_z d_zbar = Laplacian / 4
    lap = (f(z0 + h, 0) + f(z0 - h, 0) + f(z0, h) + f(z0, -h) - 4 * f(z0, 0)) / h ** 2
    got = wick.derive_symbol(b, np.array([z0 + 0j]), 1, 1)[0, 0]
    assert abs(got - lap / 4) < 1e-6
    assert abs(got - 4 * z0 ** 2) < 1e-13


def test_taylor_reconstruction_from_derivatives(rng):
    b = random_symbol(rng, 2, [(2, 2), (1, 2), (0, 1)])
    z, h = cvec(rng, 2), cvec(rng, 2, 0.5)
    total = 0
    for k in range(3):
        for j in range(3):
            K = wick.derive_symbol(b, z, k, j)
            total += np.vdot(sym_tensor_power(h, j).coeffs, K @ sym_tensor_power(h, k).coeffs) / (
                factorial(j) * factorial(k))
    assert abs(total - b(z + h)) < 1e-11 * (1 + abs(b(z + h)))
    assert abs(wick.taylor_evaluate(b, z, h) - b(z + h)) < 1e-11 * (1 + abs(b(z + h)))


def test_quantization_table(rng):
    basis = fock.FockBasis(2, 6)
    eps = 0.35
    u = cvec(rng, 2)
    assert np.allclose(wick.quantize(wick.PolySymbol.bra(u), eps, basis), fock.annihilation_op(basis, u, eps))
    assert np.allclose(wick.quantize(wick.PolySymbol.ket(u), eps, basis), fock.creation_op(basis, u, eps))
    assert np.allclose(wick.quantize(wick.PolySymbol.one_body(np.eye(2)), eps, basis), fock.number_op(basis, eps))
    assert np.allclose(wick.quantize(wick.PolySymbol.field(u), eps, basis), fock.field_op(basis, u, eps))
    B = cvec(rng, 4).reshape(2, 2)
    assert np.allclose(wick.quantize(wick.PolySymbol.one_body(B), eps, basis), fock.dgamma_op(basis, B, eps))


@pytest.mark.parametrize("orders", [[(2, 1)], [(1, 2)], [(2, 2), (0, 3)], [(0, 0), (3, 1)]])
def test_quantization_against_ladder_products(rng, orders):
    basis = fock.FockBasis(2, 7)
    b = random_symbol(rng, 2, orders)
    eps = 0.42
    oracle = ladder_product_oracle(b, eps, basis)
    for method in ("sector", "ladder"):
        got = wick.quantize(b, eps, basis, method=method)
        assert np.max(np.abs(guarded(got - oracle, basis, basis.M - b.order))) < 1e-11 * max(1, b.norm())


def test_coherent_expectation_is_symbol(rng):
    basis = fock.FockBasis(2, 40)
    eps = 0.2
    b = random_symbol(rng, 2, [(1, 1), (2, 0), (1, 2)])
    u = cvec(rng, 2, 0.3)
    psi = fock.coherent_state(basis, u, eps).vector
    assert abs(np.vdot(psi, wick.quantize(b, eps, basis) @ psi) - b(u)) < 1e-10


def test_compose_annihilator_creator(rng):
    u = cvec(rng, 2)
    eps = 0.3
    c = wick.compose_symbols(wick.PolySymbol.bra(u), wick.PolySymbol.ket(u), eps)
    for _ in range(5):
        z = cvec(rng, 2)
        assert abs(c(z) - (abs(np.vdot(u, z)) ** 2 + eps * np.vdot(u, u).real)) < 1e-12


def test_compose_with_constant(rng):
    b = random_symbol(rng, 2, [(1, 2), (2, 0)])
    c = wick.compose_symbols(wick.PolySymbol.constant(2, 2.5), b, 0.4)
    assert c.distance(b * 2.5) < 1e-13


@settings(max_examples=15, deadline=None)
@given(seeds, st.floats(0.05, 1.0))
def test_composition_matrix_oracle(seed, eps):
    rng = np.random.default_rng(seed)
    basis = fock.FockBasis(2, 8)
    b1 = random_symbol(rng, 2, random_orders(rng, 2))
    b2 = random_symbol(rng, 2, random_orders(rng, 2))
    lhs = wick.quantize(b1, eps, basis) @ wick.quantize(b2, eps, basis)
    rhs = wick.quantize(wick.compose_symbols(b1, b2, eps), eps, basis)
    guard = basis.M - b1.order - b2.order
    assert np.max(np.abs(guarded(lhs - rhs, basis, guard))) < 1e-10 * max(1, b1.norm() * b2.norm())


def test_composition_associative(rng):
    basis = fock.FockBasis(2, 10)
    eps = 0.3
    b1, b2, b3 = (random_symbol(rng, 2, [(1, 0), (1, 1)], 0.5) for _ in range(3))
    left = wick.compose_symbols(wick.compose_symbols(b1, b2, eps), b3, eps)
    right = wick.compose_symbols(b1, wick.compose_symbols(b2, b3, eps), eps)
    assert left.distance(right) < 1e-12
    mats = [wick.quantize(b, eps, basis) for b in (b1, b2, b3)]
    product = mats[0] @ mats[1] @ mats[2]
    assert np.max(np.abs(guarded(product - wick.quantize(left, eps, basis), basis, basis.M - 6))) < 1e-9


def test_adjoint(rng):
    basis = fock.FockBasis(2, 7)
    b = random_symbol(rng, 2, [(2, 1), (0, 3), (1, 1)])
    eps = 0.6
    lhs = wick.quantize(b, eps, basis).conj().T
    assert np.max(np.abs(lhs - wick.quantize(b.conj(), eps, basis))) < 1e-12 * b.norm()


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.01, 1.0))
def test_homogeneity(seed, eps):
    rng = np.random.default_rng(seed)
    basis = fock.FockBasis(2, 7)
    (p, q), = random_orders(rng, 4, 1)
    b = random_symbol(rng, 2, [(p, q)])
    lhs = wick.quantize(b, eps, basis)
    rhs = eps ** ((p + q) / 2) * wick.quantize(b, 1.0, basis)
    assert np.max(np.abs(guarded(lhs - rhs, basis, basis.M - p - q))) < 1e-11 * max(1, b.norm())


def test_linearity(rng):
    basis = fock.FockBasis(2, 6)
    b1, b2 = random_symbol(rng, 2, [(1, 1)]), random_symbol(rng, 2, [(2, 0), (1, 1)])
    a = 0.3 - 1.2j
    lhs = wick.quantize(b1 * a + b2, 0.5, basis)
    rhs = a * wick.quantize(b1, 0.5, basis) + wick.quantize(b2, 0.5, basis)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_free_covariance(rng):
    X = cvec(rng, 4).reshape(2, 2)
    space = ModeSpace(X @ X.conj().T + np.eye(2), 1.0)
    basis = fock.FockBasis(space, 8)
    b = random_symbol(rng, 2, [(2, 1), (1, 1), (0, 2)])
    eps, t = 0.4, 0.8
    F = fock.free_evolution(basis, t)
    lhs = F @ wick.quantize(b, eps, basis) @ F.conj().T
    moved = lambda z: b(space.propagator(t) @ z)
    rhs_symbol = wick.compose_linear(b, space.propagator(t))
    z = cvec(rng, 2)
    assert abs(rhs_symbol(z) - moved(z)) < 1e-12 * (1 + abs(moved(z)))
    assert np.max(np.abs(lhs - wick.quantize(rhs_symbol, eps, basis))) < 1e-9


def test_translation_examples(rng):
    u0, u = cvec(rng, 2), cvec(rng, 2)
    c = wick.PolySymbol.constant(2, 1.5)
    assert wick.translate_symbol(c, u).distance(c) < 1e-15
    t = wick.translate_symbol(wick.PolySymbol.bra(u0), u)
    z = cvec(rng, 2)
    assert abs(t(z) - (np.vdot(u0, z) + np.vdot(u0, u))) < 1e-13
    quartic = random_symbol(rng, 1, [(2, 2), (3, 1), (0, 4)])
    moved = wick.translate_symbol(quartic, np.array([0.3]))
    for _ in range(30):
        z = cvec(rng, 1)
        assert abs(moved(z) - quartic(z + 0.3)) < 1e-11 * (1 + abs(quartic(z + 0.3)))


def test_translation_by_displacement(rng):
    basis = fock.FockBasis(1, 60)
    eps = 0.5
    b = random_symbol(rng, 1, [(2, 1), (1, 1)])
    u = cvec(rng, 1, 0.3)
    D = fock.displacement_op(basis, u, eps)
    lhs = D.conj().T @ wick.quantize(b, eps, basis) @ D
    rhs = wick.quantize(wick.translate_symbol(b, u), eps, basis)
    assert np.max(np.abs(guarded(lhs - rhs, basis, 6))) < 1e-9


# C(p, q, alpha, beta) measured once as the largest ratio over 20 random
# kernels on a 2-mode basis cut at 14 particles (all values <= 1.0) and frozen
NUMBER_ESTIMATE_C = 1.0


@pytest.mark.parametrize("p,q", [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2), (3, 1)])
def test_number_estimate(rng, p, q):
    basis = fock.FockBasis(2, 14)
    weight = basis.sector + 1.0
    g = basis.guard(basis.M - p - q)
    for al, be in [(q, p), ((p + q) / 2, (p + q) / 2), (p + q, 0)]:
        b = random_symbol(rng, 2, [(p, q)])
        for eps in (1.0, 0.5, 0.1, 0.01):
            W = wick.quantize(b, eps, basis)
            op = (weight[:, None] ** (-al / 2)) * W * (weight[None, :] ** (-be / 2))
            norm = np.linalg.norm(op[g, g], 2)
            assert norm <= NUMBER_ESTIMATE_C * eps ** ((p + q) / 2) * b.norm() * (1 + 1e-12)


def test_json_round_trip(rng):
    b = random_symbol(rng, 2, [(1, 2), (0, 0)])
    back = wick.PolySymbol.from_json(b.to_json())
    assert back.distance(b) == 0
