"""Polynomial Wick symbols and their quantization.

A symbol is a finite sum of monomials b(z) = <z^{(x)q}, K z^{(x)p}> where the
kernel K maps order-p symmetric tensors to order-q ones.  Kernels are dense
matrices in the orthonormal symmetric bases of ``tensor``.

Writing K in coordinates gives b(z) = sum C[beta, alpha] conj(z)^beta z^alpha
with C = diag(sqrt(q!/beta!)) K diag(sqrt(p!/alpha!)).  The coordinate form
is what the polynomial algebra (products, Wirtinger derivatives) works on.
"""
import json
from functools import lru_cache
from math import factorial, lgamma, sqrt

import numpy as np

from . import settings
from .errors import InvalidPotential, ShapeError
from .tensor import (
    ModeSpace, SymTensor, basis_size, conj_apply, contraction_matrix,
    inv_alpha_factorial, monomials, multi_indices, rank, split_table, sym_weights,
)


# ---------------------------------------------------------------------------
# index tables

@lru_cache(maxsize=None)
def _add_table(d, n1, n2):
    """rank(alpha1 + alpha2) for all pairs, shape (D(n1), D(n2))."""
    a1 = multi_indices(d, n1)
    a2 = multi_indices(d, n2)
    out = rank(a1[:, None, :] + a2[None, :, :])
    out.flags.writeable = False
    return out


@lru_cache(maxsize=None)
def _lower_table(d, n, i):
    """For alpha of order n-1: rank of alpha + e_i in order n, and alpha_i + 1."""
    alphas = multi_indices(d, n - 1)
    raised = alphas.copy()
    raised[:, i] += 1
    idx = rank(raised)
    fac = raised[:, i].astype(float)
    idx.flags.writeable = False
    return idx, fac


def _to_coeffs(K, d, p, q):
    return sym_weights(d, q)[:, None] * K * sym_weights(d, p)[None, :]


def _to_kernel(C, d, p, q):
    return C / sym_weights(d, q)[:, None] / sym_weights(d, p)[None, :]


# ---------------------------------------------------------------------------
# symbols

class PolySymbol:
    """Finite sum of (p, q) monomial symbols over C^d.

    ``terms`` maps (p, q) to the kernel, a D(q) x D(p) complex matrix.
    """

    def __init__(self, d, terms=None):
        self.d = int(d)
        self.terms = {}
        for (p, q), K in (terms or {}).items():
            K = np.array(K, dtype=complex)
            shape = (basis_size(self.d, q), basis_size(self.d, p))
            if K.shape != shape:
                raise ShapeError(f"kernel for {(p, q)} has shape {K.shape}, expected {shape}")
            if p + q > settings.ORDER_CAP:
                raise ShapeError(f"total order {p + q} exceeds the cap {settings.ORDER_CAP}")
            if (p, q) in self.terms:
                self.terms[(p, q)] = self.terms[(p, q)] + K
            else:
                self.terms[(p, q)] = K

    # construction ---------------------------------------------------------

    @classmethod
    def constant(cls, d, c):
        return cls(d, {(0, 0): np.array([[c]], dtype=complex)})

    @classmethod
    def zero(cls, d):
        return cls(d)

    @classmethod
    def from_coeffs(cls, d, coeffs):
        return cls(d, {(p, q): _to_kernel(C, d, p, q) for (p, q), C in coeffs.items()})

    @classmethod
    def bra(cls, u):
        """b(z) = <u, z>, quantized to a(u)."""
        u = np.asarray(u, dtype=complex)
        return cls(len(u), {(1, 0): u.conj()[::-1][None, :]})

    @classmethod
    def ket(cls, u):
        """b(z) = <z, u>, quantized to a^*(u)."""
        u = np.asarray(u, dtype=complex)
        return cls(len(u), {(0, 1): u[::-1][:, None]})

    @classmethod
    def one_body(cls, B):
        """b(z) = <z, B z>, quantized to dGamma(B)."""
        B = np.asarray(B, dtype=complex)
        # order-1 bases list modes in reverse
        return cls(B.shape[0], {(1, 1): B[::-1, ::-1]})

    @classmethod
    def field(cls, u):
        """b(z) = sqrt(2) Re<u, z>, quantized to the Segal field."""
        return (cls.bra(u) + cls.ket(u)) * (1 / sqrt(2))

    # basic algebra --------------------------------------------------------

    @property
    def order(self):
        return max((p + q for p, q in self.terms), default=0)

    @property
    def max_p(self):
        return max((p for p, _ in self.terms), default=0)

    @property
    def max_q(self):
        return max((q for _, q in self.terms), default=0)

    def coeffs(self, p, q):
        K = self.terms.get((p, q))
        if K is None:
            return np.zeros((basis_size(self.d, q), basis_size(self.d, p)), dtype=complex)
        return _to_coeffs(K, self.d, p, q)

    def all_coeffs(self):
        return {pq: _to_coeffs(K, self.d, *pq) for pq, K in self.terms.items()}

    def copy(self):
        return PolySymbol(self.d, {k: v.copy() for k, v in self.terms.items()})

    def __add__(self, other):
        if not isinstance(other, PolySymbol):
            other = PolySymbol.constant(self.d, other)
        self._same(other)
        out = self.copy()
        for k, v in other.terms.items():
            out.terms[k] = out.terms[k] + v if k in out.terms else v.copy()
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other if isinstance(other, PolySymbol) else -other)

    def __mul__(self, scalar):
        if isinstance(scalar, PolySymbol):
            return multiply(self, scalar)
        return PolySymbol(self.d, {k: v * scalar for k, v in self.terms.items()})

    def __rmul__(self, scalar):
        return self * scalar

    def _same(self, other):
        if other.d != self.d:
            raise ShapeError("symbols over different mode counts")

    def conj(self):
        """Complex-conjugate symbol; its quantization is the adjoint."""
        return PolySymbol(self.d, {(q, p): K.conj().T for (p, q), K in self.terms.items()})

    def pruned(self, tol=0.0):
        return PolySymbol(self.d, {k: v for k, v in self.terms.items() if np.max(np.abs(v)) > tol})

    def norm(self):
        """Euclidean norm of all kernels together."""
        return float(np.sqrt(sum(np.sum(np.abs(K) ** 2) for K in self.terms.values())))

    def distance(self, other):
        return (self - other).norm()

    def __call__(self, z):
        return eval_symbol(self, z)

    def __repr__(self):
        parts = ", ".join(f"{pq}" for pq in sorted(self.terms))
        return f"PolySymbol(d={self.d}, terms=[{parts}])"

    # serialization --------------------------------------------------------

    def to_dict(self):
        terms = []
        for (p, q) in sorted(self.terms):
            K = self.terms[(p, q)]
            terms.append({"p": p, "q": q, "rows": K.shape[0], "cols": K.shape[1],
                          "re": K.real.ravel().tolist(), "im": K.imag.ravel().tolist()})
        return {"d": self.d, "terms": terms}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        terms = {}
        for t in data["terms"]:
            K = (np.array(t["re"]) + 1j * np.array(t["im"])).reshape(t["rows"], t["cols"])
            terms[(t["p"], t["q"])] = K
        return cls(data["d"], terms)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# polynomial algebra in coordinates

def _mul_coeffs(C1, C2, d, p1, q1, p2, q2):
    rows = _add_table(d, q1, q2)
    cols = _add_table(d, p1, p2)
    out = np.zeros((basis_size(d, q1 + q2), basis_size(d, p1 + p2)), dtype=complex)
    vals = C1[:, None, :, None] * C2[None, :, None, :]
    np.add.at(out, (rows[:, :, None, None], cols[None, None, :, :]), vals)
    return out


def multiply(b1, b2):
    """Pointwise product of two symbols."""
    b1._same(b2)
    d = b1.d
    coeffs = {}
    for (p1, q1), K1 in b1.terms.items():
        C1 = _to_coeffs(K1, d, p1, q1)
        for (p2, q2), K2 in b2.terms.items():
            C2 = _to_coeffs(K2, d, p2, q2)
            C = _mul_coeffs(C1, C2, d, p1, q1, p2, q2)
            key = (p1 + p2, q1 + q2)
            coeffs[key] = coeffs[key] + C if key in coeffs else C
    return PolySymbol.from_coeffs(d, coeffs)


def _dz_coeffs(C, d, p, i):
    idx, fac = _lower_table(d, p, i)
    return C[:, idx] * fac[None, :]


def _dzbar_coeffs(C, d, q, i):
    idx, fac = _lower_table(d, q, i)
    return C[idx, :] * fac[:, None]


def diff(b, i, bar=False):
    """Wirtinger derivative d/dz_i (or d/dconj(z_i) when ``bar``)."""
    coeffs = {}
    for (p, q), K in b.terms.items():
        if (q if bar else p) == 0:
            continue
        C = _to_coeffs(K, b.d, p, q)
        if bar:
            coeffs[(p, q - 1)] = _dzbar_coeffs(C, b.d, q, i)
        else:
            coeffs[(p - 1, q)] = _dz_coeffs(C, b.d, p, i)
    return PolySymbol.from_coeffs(b.d, coeffs)


def eval_symbol(b, z):
    """b(z) = sum <z^{(x)q}, K z^{(x)p}>."""
    z = np.asarray(z, dtype=complex)
    if len(z) != b.d:
        raise ShapeError("point has the wrong dimension")
    total = 0j
    for (p, q), K in b.terms.items():
        left = sym_weights(b.d, q) * monomials(z, q)
        right = sym_weights(b.d, p) * monomials(z, p)
        total += np.vdot(left, K @ right)
    return complex(total)


# ---------------------------------------------------------------------------
# derivatives as kernels, Taylor expansion, translation

def derive_symbol(b, z, k, j):
    """Kernel of the mixed derivative (d-bar)^j d^k b at z, of order (k -> j).

    For a monomial of order (p, q) this is

        p!/(p-k)! q!/(q-j)! (<z^{(x)(q-j)}| (x) 1) K S_p(|z^{(x)(p-k)}> (x) 1),

    and the results of all monomials are summed.
    """
    z = np.asarray(z, dtype=complex)
    out = np.zeros((basis_size(b.d, j), basis_size(b.d, k)), dtype=complex)
    for (p, q), K in b.terms.items():
        if p < k or q < j:
            continue
        left = contraction_matrix(z, q, j)
        right = contraction_matrix(z, p, k).conj().T
        pref = factorial(p) / factorial(p - k) * factorial(q) / factorial(q - j)
        out += pref * (left @ K @ right)
    return out


def translate_symbol(b, u):
    """The symbol z -> b(z + u), through the Taylor expansion around u."""
    u = np.asarray(u, dtype=complex)
    terms = {}
    for k in range(b.max_p + 1):
        for j in range(b.max_q + 1):
            K = derive_symbol(b, u, k, j) / (factorial(j) * factorial(k))
            if np.any(K != 0):
                terms[(k, j)] = K
    return PolySymbol(b.d, terms)


def taylor_evaluate(b, z, h):
    """sum_{j,k} <h^{(x)j}, derive_symbol(b, z, k, j) h^{(x)k}> / (j! k!)."""
    return eval_symbol(translate_symbol(b, z), h)


# ---------------------------------------------------------------------------
# composition

def _derivative_tree(b, max_order, bar):
    """All derivatives d^kappa b (or d-bar^kappa b) with |kappa| <= max_order."""
    d = b.d
    out = {(0,) * d: b}
    frontier = {(0,) * d: b}
    for _ in range(max_order):
        nxt = {}
        for kappa, sym in frontier.items():
            for i in range(d):
                new = list(kappa)
                new[i] += 1
                new = tuple(new)
                if new in nxt:
                    continue
                # derive from the predecessor lowest in i so each kappa is built once
                nxt[new] = diff(sym, i, bar=bar)
        nxt = {k: v for k, v in nxt.items() if v.terms}
        out.update(nxt)
        frontier = nxt
        if not frontier:
            break
    return out


def compose_symbols(b1, b2, eps):
    """Symbol of Wick(b1) Wick(b2): sum_k eps^k / k! <d^k b1, dbar^k b2>.

    In coordinates the pairing of the k-th derivatives reduces to
    sum_{|kappa|=k} k!/kappa! d_z^kappa b1 * d_zbar^kappa b2.
    """
    b1._same(b2)
    kmax = min(b1.max_p, b2.max_q)
    left = _derivative_tree(b1, kmax, bar=False)
    right = _derivative_tree(b2, kmax, bar=True)
    out = PolySymbol(b1.d)
    for kappa, dl in left.items():
        dr = right.get(kappa)
        if dr is None:
            continue
        k = sum(kappa)
        weight = eps ** k / np.prod([factorial(c) for c in kappa])
        out = out + multiply(dl, dr) * weight
    return out


# ---------------------------------------------------------------------------
# composition with real-linear maps

def linear_symbols(L, Aa):
    """The coordinate functions z -> (L z + Aa conj(z))_i as symbols."""
    L = np.asarray(L, dtype=complex)
    Aa = np.zeros_like(L) if Aa is None else np.asarray(Aa, dtype=complex)
    d = L.shape[1]
    out = []
    for i in range(L.shape[0]):
        terms = {(1, 0): L[i, ::-1][None, :]}
        if np.any(Aa[i] != 0):
            terms[(0, 1)] = Aa[i, ::-1][:, None]
        out.append(PolySymbol(d, terms))
    return out


def _powers(sym, n):
    out = [PolySymbol.constant(sym.d, 1.0)]
    for _ in range(n):
        out.append(multiply(out[-1], sym))
    return out


def compose_linear(b, L, Aa=None):
    """The symbol z -> b(L z + Aa conj(z)) for a real-linear map."""
    L = np.asarray(L, dtype=complex)
    d_out = L.shape[1]
    lin = linear_symbols(L, Aa)
    nmax = max(b.max_p, b.max_q)
    pw = [_powers(s, nmax) for s in lin]
    pw_bar = [_powers(s.conj(), nmax) for s in lin]
    out = PolySymbol(d_out)
    for (p, q), K in b.terms.items():
        C = _to_coeffs(K, b.d, p, q)
        alphas = multi_indices(b.d, p)
        betas = multi_indices(b.d, q)
        # cache the holomorphic factors of each alpha
        hol = []
        for alpha in alphas:
            f = PolySymbol.constant(d_out, 1.0)
            for i, a in enumerate(alpha):
                if a:
                    f = multiply(f, pw[i][a])
            hol.append(f)
        for ib, beta in enumerate(betas):
            g = PolySymbol.constant(d_out, 1.0)
            for i, c in enumerate(beta):
                if c:
                    g = multiply(g, pw_bar[i][c])
            row = C[ib]
            acc = None
            for ia in np.nonzero(row)[0]:
                term = hol[ia] * row[ia]
                acc = term if acc is None else acc + term
            if acc is not None:
                out = out + multiply(g, acc)
    return out


# ---------------------------------------------------------------------------
# second-order constant-coefficient operators

def second_order_operator(b, X=None, Y=None, Z=None):
    """sum X_ij dbar_i dbar_j b + sum Y_ij dbar_i d_j b + sum Z_ij d_i d_j b."""
    d = b.d
    out = PolySymbol(d)
    dz = [diff(b, j) for j in range(d)]
    dzb = [diff(b, i, bar=True) for i in range(d)]
    for i in range(d):
        for j in range(d):
            if X is not None and X[i, j] != 0:
                out = out + diff(dzb[i], j, bar=True) * X[i, j]
            if Y is not None and Y[i, j] != 0:
                out = out + diff(dzb[i], j) * Y[i, j]
            if Z is not None and Z[i, j] != 0:
                out = out + diff(dz[i], j) * Z[i, j]
    return out


# ---------------------------------------------------------------------------
# quantization

def _sector_table(basis, p, q):
    """Sparse structure of the sector formula for kernels of order (p, q), eps = 1."""
    key = ("wick_sector", p, q)
    if key in basis._cache:
        return basis._cache[key]
    d, M = basis.d, basis.M
    rows, cols, kr, kc, vals = [], [], [], [], []
    betas = multi_indices(d, q)
    lf = lambda n: np.log(inv_alpha_factorial(d, n))  # -log alpha!
    for n in range(p, M + 1):
        m = n + q - p
        if m > M:
            continue
        pref = 0.5 * (lgamma(n + 1) + lgamma(m + 1)) - lgamma(n - p + 1)
        g, a, r, c1 = split_table(d, n, p)
        rho = multi_indices(d, n - p)[r]
        gam = rho[:, None, :] + betas[None, :, :]
        gam_idx = rank(gam)
        # <e_gamma, e_beta (x) e_rho> = sqrt(gamma! q! (m-q)! / (m! beta! rho!))
        log_c2 = 0.5 * (-lf(m)[gam_idx] + lgamma(q + 1) + lgamma(m - q + 1)
                        - lgamma(m + 1) + lf(q)[None, :] + lf(n - p)[r][:, None])
        coef = np.exp(pref + log_c2) * c1[:, None]
        nb = len(betas)
        rows.append((basis.offsets[m] + gam_idx).ravel())
        cols.append(np.repeat(basis.offsets[n] + g, nb))
        kr.append(np.tile(np.arange(nb), len(g)))
        kc.append(np.repeat(a, nb))
        vals.append(coef.ravel())
    if rows:
        table = tuple(np.concatenate(x) for x in (rows, cols, kr, kc, vals))
    else:
        table = tuple(np.zeros(0, dtype=t) for t in (np.int64,) * 4 + (float,))
    basis._cache[key] = table
    return table


def quantize(b, eps, basis, method="sector"):
    """Dense matrix of Wick_eps(b) compressed to the sectors <= M.

    ``method="sector"`` uses the sector formula
    sqrt(n! (n+q-p)!)/(n-p)! eps^{(p+q)/2} S(K (x) 1) on each sector;
    ``method="ladder"`` sums normal-ordered products of ladder matrices.
    """
    if b.d != basis.d:
        raise ShapeError("symbol and basis have different mode counts")
    if method == "ladder":
        return _quantize_ladder(b, eps, basis)
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for (p, q), K in b.terms.items():
        rows, cols, kr, kc, vals = _sector_table(basis, p, q)
        np.add.at(out, (rows, cols), vals * K[kr, kc] * eps ** ((p + q) / 2))
    return out


def _ladder_power(basis, alpha, creation):
    key = ("ladder_pow", tuple(int(a) for a in alpha), creation)
    if key not in basis._cache:
        ops = basis.creators if creation else basis.annihilators
        from scipy import sparse
        out = sparse.identity(basis.dim, format="csr")
        for i, a in enumerate(alpha):
            for _ in range(int(a)):
                out = ops[i] @ out
        basis._cache[key] = out
    return basis._cache[key]


def _quantize_ladder(b, eps, basis):
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for (p, q), K in b.terms.items():
        C = _to_coeffs(K, b.d, p, q)
        alphas = multi_indices(b.d, p)
        betas = multi_indices(b.d, q)
        for ib, beta in enumerate(betas):
            for ia, alpha in enumerate(alphas):
                if C[ib, ia] == 0:
                    continue
                prod = _ladder_power(basis, beta, True) @ _ladder_power(basis, alpha, False)
                out += (C[ib, ia] * eps ** ((p + q) / 2)) * prod.toarray()
    return out


# ---------------------------------------------------------------------------
# interaction potentials

class PotentialSeries:
    """Interaction datum V = (V^(0), ..., V^(jmax)) of conjugation-symmetric tensors.

    ``tensors[j]`` is a SymTensor of order j (or None for zero).
    """

    def __init__(self, space, tensors, decay=None, tol=1e-10):
        self.space = space
        d = space.d
        self.tensors = []
        for j, T in enumerate(tensors):
            if T is None:
                T = SymTensor.zeros(d, j)
            if not isinstance(T, SymTensor):
                T = SymTensor(d, j, T)
            if T.n != j or T.d != d:
                raise InvalidPotential(f"entry {j} must be an order-{j} tensor over {d} modes")
            self.tensors.append(T)
        self.decay = decay
        for j, T in enumerate(self.tensors):
            dev = np.max(np.abs(conj_apply(T, space.pairing).coeffs - T.coeffs), initial=0.0)
            if dev > tol * max(1.0, T.norm()):
                raise InvalidPotential(f"V^({j}) is not invariant under the conjugation (dev {dev:.2e})")

    @property
    def jmax(self):
        nz = [j for j, T in enumerate(self.tensors) if np.any(T.coeffs != 0)]
        return max(nz, default=0)

    @property
    def d(self):
        return self.space.d

    def norm(self):
        return float(np.sqrt(sum(T.norm() ** 2 for T in self.tensors)))

    def decay_sum(self, alpha, lam):
        return float(sum(np.exp(2 * alpha * lam ** j) * T.norm() ** 2
                         for j, T in enumerate(self.tensors)))

    def single(self, j):
        """The series holding only V^(j)."""
        tensors = [None] * (j + 1)
        tensors[j] = self.tensors[j]
        return PotentialSeries(self.space, tensors)

    @classmethod
    def from_tensor(cls, space, T):
        tensors = [None] * (T.n + 1)
        tensors[T.n] = T
        return cls(space, tensors, tol=1e-8)


def _shifted_linear(space):
    """Symbols conj(w_i) = conj(z_i) + z_{pi(i)} where w = z + c z."""
    d = space.d
    pi = list(range(d)) if space.pairing is None else list(space.pairing)
    out = []
    for i in range(d):
        hol = np.zeros(d, dtype=complex)
        hol[pi[i]] = 1.0
        anti = np.zeros(d, dtype=complex)
        anti[i] = 1.0
        out.append(PolySymbol(d, {(1, 0): hol[::-1][None, :], (0, 1): anti[::-1][:, None]}))
    return out


def symbol_from_potential(V):
    """The symbol F_V(z) = sum_j <(z + c z)^{(x)j} / sqrt(j!), V^(j)>.

    With w = z + c z, <w^{(x)j}, e_gamma> = sqrt(j!/gamma!) conj(w)^gamma, so
    F_V = sum_gamma V_gamma conj(w)^gamma / sqrt(gamma!).
    """
    d = V.d
    lin = _shifted_linear(V.space)
    jmax = len(V.tensors) - 1
    pw = [_powers(s, jmax) for s in lin]
    out = PolySymbol(d)
    for j, T in enumerate(V.tensors):
        if not np.any(T.coeffs != 0):
            continue
        scale = np.sqrt(inv_alpha_factorial(d, j))
        for ig, gamma in enumerate(multi_indices(d, j)):
            c = T.coeffs[ig] * scale[ig]
            if c == 0:
                continue
            f = PolySymbol.constant(d, c)
            for i, g in enumerate(gamma):
                if g:
                    f = multiply(f, pw[i][g])
            out = out + f
    return out


def symbol_of_tensor(space, T):
    """F_{V} for the series holding the single tensor T."""
    return symbol_from_potential(PotentialSeries.from_tensor(space, T))


def _pair_coeffs(M, d):
    """Coefficients over order-2 multi-indices of sum_ij M_ij x_i x_j."""
    out = np.zeros(basis_size(d, 2), dtype=complex)
    idx = multi_indices(d, 2)
    for r, a in enumerate(idx):
        nz = np.nonzero(a)[0]
        if len(nz) == 1:
            i = nz[0]
            out[r] = M[i, i]
        else:
            out[r] = M[nz[0], nz[1]] + M[nz[1], nz[0]]
    return out


def quadratic_symbol(d, X=None, Y=None, Z=None):
    """b(z) = sum X_ij conj(z_i z_j) + sum Y_ij conj(z_i) z_j + sum Z_ij z_i z_j."""
    coeffs = {}
    if X is not None:
        coeffs[(0, 2)] = _pair_coeffs(np.asarray(X, dtype=complex), d)[:, None]
    if Y is not None:
        coeffs[(1, 1)] = np.asarray(Y, dtype=complex)[::-1, ::-1]
    if Z is not None:
        coeffs[(2, 0)] = _pair_coeffs(np.asarray(Z, dtype=complex), d)[None, :]
    return PolySymbol.from_coeffs(d, coeffs)
