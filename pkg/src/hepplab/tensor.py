"""Symmetric tensor algebra over a finite-mode one-particle space.

A symmetric n-tensor over d modes is stored by its coefficients in the
orthonormal basis

    e_alpha = sqrt(n!/alpha!) * S_n(e_{i_1} (x) ... (x) e_{i_n}),

indexed by multi-indices alpha (occupation counts) of order n in
lexicographic order.  In this basis ``z^{(x)n}`` has coefficients
``sqrt(n!/alpha!) * z**alpha``, which is also the occupation-number basis of
the Fock space.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial, lgamma

import numpy as np

from .errors import ShapeError, SizeCap
from . import settings


# ---------------------------------------------------------------------------
# mode space

@dataclass(frozen=True, eq=False)
class ModeSpace:
    """Finite-mode one-particle space C^d with a Hermitian energy matrix.

    Parameters
    ----------
    A : (d, d) array
        Hermitian one-particle operator.
    m0 : float
        Positive lower bound of the spectrum of ``A``.
    pairing : sequence of int or None
        Mode permutation ``pi`` with ``pi o pi = id``.  The conjugation is
        ``(c z)_i = conj(z_{pi(i)})``; ``None`` means componentwise
        conjugation.
    """

    A: np.ndarray
    m0: float
    pairing: tuple = None
    _evals: np.ndarray = field(init=False, repr=False)
    _evecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError("A must be a square matrix")
        object.__setattr__(self, "A", A)
        if self.pairing is not None:
            pi = tuple(int(i) for i in self.pairing)
            if sorted(pi) != list(range(A.shape[0])):
                raise ShapeError("pairing must be a permutation of the modes")
            if any(pi[pi[i]] != i for i in range(len(pi))):
                raise ShapeError("pairing must be an involution")
            object.__setattr__(self, "pairing", pi)
        evals, evecs = np.linalg.eigh((A + A.conj().T) / 2)
        object.__setattr__(self, "_evals", evals)
        object.__setattr__(self, "_evecs", evecs)

    @classmethod
    def diagonal(cls, omega, pairing=None, m0=None):
        omega = np.asarray(omega, dtype=float)
        return cls(np.diag(omega), float(omega.min()) if m0 is None else m0, pairing)

    @property
    def d(self):
        return self.A.shape[0]

    def conj(self, z):
        """Apply the antilinear conjugation to a vector (or to the last axis)."""
        z = np.asarray(z)
        if self.pairing is None:
            return z.conj()
        return z.conj()[..., list(self.pairing)]

    def conj_matrix(self, B):
        """Matrix of c B c for a complex-linear map B."""
        B = np.asarray(B)
        if self.pairing is None:
            return B.conj()
        pi = list(self.pairing)
        return B.conj()[np.ix_(pi, pi)]

    def propagator(self, t):
        """e^{-itA} as a dense matrix."""
        return (self._evecs * np.exp(-1j * t * self._evals)) @ self._evecs.conj().T

    def check(self, rng=None, tol=1e-12):
        """Verify hermiticity, the spectral bound and A c = c A."""
        A = self.A
        if np.max(np.abs(A - A.conj().T), initial=0.0) > tol:
            raise ValueError("A is not Hermitian")
        if self._evals.min() < self.m0 - 1e-10:
            raise ValueError("spectrum of A below m0")
        rng = np.random.default_rng(0) if rng is None else rng
        z = rng.normal(size=self.d) + 1j * rng.normal(size=self.d)
        if np.linalg.norm(self.conj(A @ z) - A @ self.conj(z)) > tol * (1 + np.linalg.norm(z)):
            raise ValueError("A does not commute with the conjugation")
        return True


# ---------------------------------------------------------------------------
# multi-indices

def basis_size(d, n):
    return comb(n + d - 1, d - 1) if n >= 0 else 0


def _check_cap(d, n, cap=None):
    cap = settings.SIZE_CAP if cap is None else cap
    size = basis_size(d, n)
    if size > cap:
        raise SizeCap(d, n, size, cap)
    return size


@lru_cache(maxsize=None)
def _multi_indices(d, n):
    if d == 1:
        out = np.array([[n]], dtype=np.int64)
    else:
        blocks = []
        for first in range(n + 1):
            rest = _multi_indices(d - 1, n - first)
            blocks.append(np.hstack([np.full((len(rest), 1), first, dtype=np.int64), rest]))
        out = np.vstack(blocks)
    out.flags.writeable = False
    return out


def multi_indices(d, n, cap=None):
    """All multi-indices of order n over d modes as an int array (D, d)."""
    if d < 1 or n < 0:
        raise ShapeError("need d >= 1 and n >= 0")
    _check_cap(d, n, cap)
    return _multi_indices(d, n)


def enumerate_multi_indices(d, n, cap=None):
    """Lexicographically sorted list of the multi-indices of order n."""
    return [tuple(int(c) for c in row) for row in multi_indices(d, n, cap)]


@lru_cache(maxsize=None)
def _pascal(nmax, kmax):
    table = np.zeros((nmax + 1, kmax + 1), dtype=np.int64)
    for a in range(nmax + 1):
        for b in range(min(a, kmax) + 1):
            table[a, b] = comb(a, b)
    return table


def rank(counts):
    """Position of multi-indices in the lexicographic order of their order.

    ``counts`` has shape (..., d); the result has shape (...).
    """
    counts = np.asarray(counts, dtype=np.int64)
    d = counts.shape[-1]
    n = counts.sum(axis=-1)
    size = int(n.max(initial=0)) + d + 1
    pascal = _pascal(size, d)
    remaining = n.copy()
    out = np.zeros_like(n)
    for i in range(d - 1):
        k = d - 1 - i
        c = counts[..., i]
        out += pascal[remaining + k, k] - pascal[remaining - c + k, k]
        remaining = remaining - c
    return out


@lru_cache(maxsize=None)
def _log_factorials(d, n):
    alphas = _multi_indices(d, n)
    return np.array([sum(lgamma(c + 1) for c in row) for row in alphas])


@lru_cache(maxsize=None)
def sym_weights(d, n):
    """sqrt(n!/alpha!) for every multi-index of order n."""
    w = np.exp(0.5 * (lgamma(n + 1) - _log_factorials(d, n)))
    w.flags.writeable = False
    return w


@lru_cache(maxsize=None)
def inv_alpha_factorial(d, n):
    """1/alpha! for every multi-index of order n."""
    out = np.exp(-_log_factorials(d, n))
    out.flags.writeable = False
    return out


def monomials(z, n):
    """z**alpha for every multi-index alpha of order n."""
    z = np.asarray(z, dtype=complex)
    alphas = multi_indices(len(z), n)
    if n == 0:
        return np.ones(1, dtype=complex)
    return np.prod(z[None, :] ** alphas, axis=1)


@lru_cache(maxsize=None)
def split_table(d, n, p):
    """Decomposition of order-n basis vectors along the first p slots.

    Returns arrays ``(g, a, r, c)`` listing every gamma of order n and every
    alpha <= gamma of order p, with rho = gamma - alpha and

        e_gamma = sum_alpha c * e_alpha (x) e_rho,
        c = sqrt(gamma! p! (n-p)! / (n! alpha! rho!)).

    The same number is <e_gamma, e_alpha (x) e_rho>, so the table also
    symmetrizes products of basis vectors.
    """
    if not 0 <= p <= n:
        raise ShapeError("need 0 <= p <= n")
    gammas = _multi_indices(d, n)
    alphas = _multi_indices(d, p)
    lf_g = _log_factorials(d, n)
    lf_a = _log_factorials(d, p)
    base = lgamma(p + 1) + lgamma(n - p + 1) - lgamma(n + 1)
    g_idx, a_idx, rho = [], [], []
    for ia, alpha in enumerate(alphas):
        ok = np.all(gammas >= alpha[None, :], axis=1)
        sel = np.nonzero(ok)[0]
        g_idx.append(sel)
        a_idx.append(np.full(len(sel), ia))
        rho.append(gammas[sel] - alpha[None, :])
    g_idx = np.concatenate(g_idx)
    a_idx = np.concatenate(a_idx)
    rho = np.vstack(rho) if rho else np.zeros((0, d), dtype=np.int64)
    r_idx = rank(rho)
    lf_r = _log_factorials(d, n - p)
    coef = np.exp(0.5 * (base + lf_g[g_idx] - lf_a[a_idx] - lf_r[r_idx]))
    for arr in (g_idx, a_idx, r_idx, coef):
        arr.flags.writeable = False
    return g_idx, a_idx, r_idx, coef


# ---------------------------------------------------------------------------
# symmetric tensors

@dataclass(frozen=True, eq=False)
class SymTensor:
    """Element of the n-th symmetric tensor power of C^d."""

    d: int
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if len(c) != basis_size(self.d, self.n):
            raise ShapeError(f"expected {basis_size(self.d, self.n)} coefficients, got {len(c)}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, d, n):
        return cls(d, n, np.zeros(basis_size(d, n), dtype=complex))

    @classmethod
    def basis_vector(cls, d, alpha):
        alpha = np.asarray(alpha, dtype=np.int64)
        n = int(alpha.sum())
        c = np.zeros(basis_size(d, n), dtype=complex)
        c[int(rank(alpha))] = 1.0
        return cls(d, n, c)

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other):
        """<self, other>, antilinear in self."""
        self._same(other)
        return complex(np.vdot(self.coeffs, other.coeffs))

    def _same(self, other):
        if (self.d, self.n) != (other.d, other.n):
            raise ShapeError("order or mode mismatch")

    def __add__(self, other):
        self._same(other)
        return SymTensor(self.d, self.n, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._same(other)
        return SymTensor(self.d, self.n, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SymTensor(self.d, self.n, self.coeffs * scalar)

    __rmul__ = __mul__

    def embed(self):
        """Dense d**n array of the full tensor."""
        return embed(self)


def _tuple_ranks(d, n):
    """Multi-index rank of every index tuple in C-order of the dense tensor."""
    if n == 0:
        return np.zeros(1, dtype=np.int64)
    grids = np.indices((d,) * n).reshape(n, -1).T
    counts = np.zeros((len(grids), d), dtype=np.int64)
    for slot in range(n):
        counts[np.arange(len(grids)), grids[:, slot]] += 1
    return rank(counts)


def embed(T):
    """Full d**n coefficient array of a SymTensor (test oracle helper)."""
    d, n = T.d, T.n
    ranks = _tuple_ranks(d, n)
    scale = 1.0 / sym_weights(d, n)
    return (T.coeffs * scale)[ranks].reshape((d,) * n) if n else T.coeffs.copy()


def symmetrize(raw, d=None):
    """Project a full n-tensor onto the symmetric subspace."""
    raw = np.asarray(raw, dtype=complex)
    n = raw.ndim
    if d is None:
        d = raw.shape[0] if n else 1
    if raw.shape != (d,) * n:
        raise ShapeError(f"raw tensor must have shape {(d,) * n}")
    _check_cap(d, n)
    ranks = _tuple_ranks(d, n)
    sums = np.zeros(basis_size(d, n), dtype=complex)
    np.add.at(sums, ranks, raw.reshape(-1))
    return SymTensor(d, n, sums / sym_weights(d, n))


def to_sym1(u):
    """Coefficients of a mode vector in the order-1 basis.

    The lexicographic order lists e_d first, so the order-1 coefficient
    vector is the mode vector reversed.
    """
    return np.asarray(u)[..., ::-1]


def from_sym1(coeffs):
    """Mode vector of an order-1 coefficient vector."""
    return np.asarray(coeffs)[..., ::-1]


def sym_tensor_power(z, n):
    """z^{(x)n} as a SymTensor."""
    z = np.asarray(z, dtype=complex)
    _check_cap(len(z), n)
    return SymTensor(len(z), n, sym_weights(len(z), n) * monomials(z, n))


def sym_product(vectors):
    """S_n(u_1 (x) ... (x) u_n) computed slot by slot."""
    vectors = [np.asarray(u, dtype=complex) for u in vectors]
    d = len(vectors[0])
    coeffs = np.ones(1, dtype=complex)
    for m, u in enumerate(vectors):
        # merge an order-m tensor with an order-1 tensor
        g, a, r, c = split_table(d, m + 1, 1)
        new = np.zeros(basis_size(d, m + 1), dtype=complex)
        np.add.at(new, g, c * to_sym1(u)[a] * coeffs[r])
        coeffs = new
    return SymTensor(d, len(vectors), coeffs)


def polarization(vectors):
    """S_n(u_1 (x) ... (x) u_n) through the signed sum of n-th powers."""
    vectors = [np.asarray(u, dtype=complex) for u in vectors]
    n, d = len(vectors), len(vectors[0])
    total = np.zeros(basis_size(d, n), dtype=complex)
    for signs in np.indices((2,) * n).reshape(n, -1).T:
        rho = 1 - 2 * signs
        w = sum(s * u for s, u in zip(rho, vectors))
        total += np.prod(rho) * sym_tensor_power(w, n).coeffs
    return SymTensor(d, n, total / (2 ** n * factorial(n)))


def contraction_matrix(w, j, keep):
    """Matrix of T -> (<w^{(x)(j-keep)}| (x) 1^{(x)keep}) T from order j to order keep."""
    w = np.asarray(w, dtype=complex)
    d = len(w)
    if not 0 <= keep <= j:
        raise ShapeError("need 0 <= keep <= j")
    # e_gamma = sum c e_rho (x) e_kappa with rho the contracted part (order j-keep)
    g, rho_idx, kappa_idx, c = split_table(d, j, j - keep)
    wbar = sym_weights(d, j - keep) * monomials(w.conj(), j - keep)
    mat = np.zeros((basis_size(d, keep), basis_size(d, j)), dtype=complex)
    np.add.at(mat, (kappa_idx, g), c * wbar[rho_idx])
    return mat


def contract_partial(T, w, keep):
    """Pair j-keep slots of T against w, leaving a symmetric tensor of order keep.

    The pairing is antilinear in w.  ``keep=0`` returns the scalar
    <w^{(x)j}, T> as an order-0 tensor.
    """
    if not 0 <= keep <= T.n:
        raise ShapeError(f"cannot keep {keep} slots of an order-{T.n} tensor")
    w = np.asarray(w, dtype=complex)
    if len(w) != T.d:
        raise ShapeError("vector length does not match the mode count")
    return SymTensor(T.d, keep, contraction_matrix(w, T.n, keep) @ T.coeffs)


@lru_cache(maxsize=None)
def _pairing_permutation(pairing, n):
    alphas = _multi_indices(len(pairing), n)
    moved = np.zeros_like(alphas)
    moved[:, list(pairing)] = alphas
    return rank(moved)


def conj_apply(T, pairing=None):
    """Lift the conjugation to the n-th symmetric power (antilinear)."""
    if isinstance(pairing, ModeSpace):
        pairing = pairing.pairing
    if pairing is None:
        return SymTensor(T.d, T.n, T.coeffs.conj())
    target = _pairing_permutation(tuple(pairing), T.n)
    new = np.empty_like(T.coeffs)
    new[target] = T.coeffs.conj()
    return SymTensor(T.d, T.n, new)
