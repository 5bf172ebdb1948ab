import itertools
from functools import reduce

import numpy as np
import pytest


def cvec(rng, d, scale=1.0):
    return scale * (rng.normal(size=d) + 1j * rng.normal(size=d))


def outer_all(vectors):
    """Dense u1 (x) u2 (x) ... as a d^n array."""
    return reduce(np.multiply.outer, vectors)


def permutation_average(raw):
    n = raw.ndim
    perms = list(itertools.permutations(range(n)))
    return sum(np.transpose(raw, p) for p in perms) / len(perms)


def guarded(X, basis, nmax):
    g = basis.guard(nmax)
    return X[g, g] if X.ndim == 2 else X[g]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def occupation_ladder(basis, i):
    """a_i at eps = 1 built from a dictionary of occupation tuples."""
    where = {tuple(o): k for k, o in enumerate(basis.occupations)}
    a = np.zeros((basis.dim, basis.dim))
    for k, occ in enumerate(basis.occupations):
        if occ[i] > 0:
            low = list(occ)
            low[i] -= 1
            a[where[tuple(low)], k] = np.sqrt(occ[i])
    return a


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the lines are printed in the terminal summary."""
    def record(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
