"""Truncated bosonic Fock space on the occupation-number basis.

States with total particle number at most ``M`` are ordered sector by
sector, and lexicographically by occupation counts inside each sector, so
the vacuum is flat index 0.  All operators are dense complex matrices and
are compressions P Op P of the untruncated operators; identities are exact
on sectors far enough below ``M`` (the guard band).
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .errors import NumericalError, ShapeError, SizeCap
from .settings import DEFAULT_TOLERANCES, SIZE_CAP
from .tensor import ModeSpace, basis_size, multi_indices, rank


class FockBasis:
    """Occupation basis of the Fock space over ``space`` cut at ``M`` particles."""

    def __init__(self, space, M):
        if isinstance(space, int):
            space = ModeSpace.diagonal(np.ones(space))
        if M < 0:
            raise ShapeError("M must be nonnegative")
        self.space = space
        self.d = space.d
        self.M = int(M)
        sizes = [basis_size(self.d, n) for n in range(self.M + 1)]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.dim = int(self.offsets[-1])
        if self.dim > SIZE_CAP:
            raise SizeCap(self.d, self.M, self.dim, SIZE_CAP)
        self.occupations = np.vstack([multi_indices(self.d, n) for n in range(self.M + 1)])
        self.sector = self.occupations.sum(axis=1)
        self._cache = {}

    def __repr__(self):
        return f"FockBasis(d={self.d}, M={self.M}, dim={self.dim})"

    def index(self, counts):
        """Flat index of the occupation vector(s) ``counts``."""
        counts = np.asarray(counts, dtype=np.int64)
        n = counts.sum(axis=-1)
        if np.any(n > self.M):
            raise ShapeError("occupation beyond the cutoff")
        return self.offsets[n] + rank(counts)

    def sector_slice(self, n):
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def guard(self, nmax):
        """Slice of the flat indices of sectors 0..nmax."""
        nmax = min(int(nmax), self.M)
        if nmax < 0:
            return slice(0, 0)
        return slice(0, int(self.offsets[nmax + 1]))

    def vacuum(self):
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def basis_vector(self, counts):
        v = np.zeros(self.dim, dtype=complex)
        v[int(self.index(counts))] = 1.0
        return v

    def sector_norms(self, psi):
        """Norm of each sector component of ``psi``."""
        return np.sqrt(np.bincount(self.sector, weights=np.abs(psi) ** 2, minlength=self.M + 1))

    @cached_property
    def annihilators(self):
        """Sparse a_i at eps = 1, one per mode."""
        ops = []
        for i in range(self.d):
            cols = np.nonzero(self.occupations[:, i] > 0)[0]
            lowered = self.occupations[cols].copy()
            lowered[:, i] -= 1
            rows = self.index(lowered)
            vals = np.sqrt(self.occupations[cols, i].astype(float))
            ops.append(sparse.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim)))
        return ops

    @cached_property
    def creators(self):
        return [a.T.tocsr() for a in self.annihilators]

    def _check_vector(self, u):
        u = np.asarray(u, dtype=complex).reshape(-1)
        if len(u) != self.d:
            raise ShapeError(f"mode vector of length {len(u)} on a {self.d}-mode basis")
        return u


def build_basis(space, M):
    return FockBasis(space, M)


def ladder_op(basis, u, eps, kind):
    """Creation (linear in u) or annihilation (antilinear in u) operator."""
    u = basis._check_vector(u)
    out = sparse.csr_matrix((basis.dim, basis.dim), dtype=complex)
    if kind in ("creation", "create", "+"):
        for ui, ad in zip(u, basis.creators):
            if ui != 0:
                out = out + ui * ad
    elif kind in ("annihilation", "annihilate", "-"):
        for ui, a in zip(u, basis.annihilators):
            if ui != 0:
                out = out + np.conj(ui) * a
    else:
        raise ValueError(f"unknown ladder kind {kind!r}")
    return np.sqrt(eps) * out.toarray()


def creation_op(basis, u, eps):
    return ladder_op(basis, u, eps, "creation")


def annihilation_op(basis, u, eps):
    return ladder_op(basis, u, eps, "annihilation")


def field_op(basis, u, eps):
    """Segal field (a^*(u) + a(u)) / sqrt(2)."""
    return (creation_op(basis, u, eps) + annihilation_op(basis, u, eps)) / np.sqrt(2)


def hermitian_exp(H, factor):
    """exp(factor * H) for Hermitian H and scalar factor, via eigh."""
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return (V * np.exp(factor * w)) @ V.conj().T


def weyl_op(basis, u, eps):
    """W_eps(u) = exp(i Phi_eps(u))."""
    return hermitian_exp(field_op(basis, u, eps), 1j)


def displacement_op(basis, u, eps):
    """exp((a^*_eps(u) - a_eps(u)) / eps), equal to W_eps(-i sqrt(2) u / eps)."""
    u = basis._check_vector(u)
    return weyl_op(basis, -1j * np.sqrt(2) * u / eps, eps)


def dgamma_op(basis, B, eps):
    """Second quantization eps * sum_ij B_ij a_i^* a_j."""
    B = np.asarray(B, dtype=complex)
    if B.shape != (basis.d, basis.d):
        raise ShapeError("one-particle matrix has the wrong size")
    out = sparse.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i in range(basis.d):
        for j in range(basis.d):
            if B[i, j] != 0:
                out = out + B[i, j] * (basis.creators[i] @ basis.annihilators[j])
    return eps * out.toarray()


def number_op(basis, eps):
    return np.diag(eps * basis.sector.astype(complex))


def _dgamma_A_eig(basis):
    key = "dgamma_A_eig"
    if key not in basis._cache:
        A = basis.space.A
        if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
            diag = basis.occupations @ np.real(np.diag(A))
            basis._cache[key] = (diag, None)
        else:
            basis._cache[key] = np.linalg.eigh(dgamma_op(basis, A, 1.0))
    return basis._cache[key]


def free_evolution(basis, t, eps=1.0):
    """exp(i (t/eps) dGamma_eps(A)) = exp(i t dGamma_1(A)); eps drops out."""
    w, V = _dgamma_A_eig(basis)
    if V is None:
        return np.diag(np.exp(1j * t * w))
    return (V * np.exp(1j * t * w)) @ V.conj().T


@dataclass
class CoherentState:
    vector: np.ndarray
    tail_mass: float
    warning: bool = False


def coherent_state(basis, u, eps, tail_tol=None):
    """W_eps(-i sqrt(2) u / eps) Omega from its explicit series, not renormalized.

    Coefficient on the occupation state alpha is
    exp(-|u|^2 / (2 eps)) * (u / sqrt(eps))**alpha / sqrt(alpha!).
    """
    u = basis._check_vector(u)
    tail_tol = DEFAULT_TOLERANCES.tail_tol if tail_tol is None else tail_tol
    occ = basis.occupations
    logfact = gammaln(occ + 1.0).sum(axis=1)
    amp = u / np.sqrt(eps)
    with np.errstate(divide="ignore"):
        powers = np.prod(np.where(occ > 0, amp[None, :] ** occ, 1.0), axis=1)
    vec = np.exp(-np.vdot(u, u).real / (2 * eps)) * powers * np.exp(-0.5 * logfact)
    tail = max(0.0, 1.0 - float(np.vdot(vec, vec).real))
    return CoherentState(vec, tail, tail > tail_tol)


def commutator(X, Y):
    return X @ Y - Y @ X
