import itertools

import numpy as np
import pytest

from clpbounds.problems import NuisanceModel, ObservedData, build_iv


def random_bounded_lp(rng, J, K, degenerate=False):
    """Random ``A`` with a sum-to-one row, ``b = A p0`` for an interior simplex point.

    The sum-to-one row keeps the feasible set bounded.  With ``degenerate``
    the witness ``p0`` has zeros, which tends to produce degenerate vertices.
    """
    while True:
        A = np.vstack([rng.integers(0, 2, size=(J - 1, K)).astype(float),
                       np.ones((1, K))])
        if np.linalg.matrix_rank(A) == J:
            break
    p0 = rng.dirichlet(np.ones(K))
    if degenerate:
        p0[rng.random(K) < 0.4] = 0.0
        p0 = p0 / p0.sum() if p0.sum() > 0 else np.full(K, 1.0 / K)
    c = rng.normal(size=K)
    return A, A @ p0, c


def brute_force_bounds(A, b, c, tol=1e-9):
    """Min and max of ``<c, p>`` over all feasible basic solutions.

    Independent of the package: plain ``itertools`` over column subsets.
    """
    J, K = A.shape
    vals = []
    for cols in itertools.combinations(range(K), J):
        AB = A[:, cols]
        if abs(np.linalg.det(AB)) < 1e-10:
            continue
        pB = np.linalg.solve(AB, b)
        if np.all(pB >= -tol):
            vals.append(float(c[list(cols)] @ pB))
    return min(vals), max(vals)


def joint_po_matrix(L0, L1):
    """Hand-built margin matrix for two arms (cells ordered y0 slowest)."""
    cells = list(itertools.product(range(L0), range(L1)))
    rows = [[1.0 if y0 == l else 0.0 for (y0, _) in cells] for l in range(1, L0)]
    rows += [[1.0 if y1 == l else 0.0 for (_, y1) in cells] for l in range(1, L1)]
    rows.append([1.0] * len(cells))
    return np.array(rows), cells


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def iv_population(n, L, rng):
    """Latent types (y0, y1, d0, d1) from an x-dependent joint; returns data and truth."""
    A, cells = build_iv(L, full_margins=True)
    x = rng.normal(size=n)
    logits = np.outer(x, np.linspace(-1, 1, cells.shape[0])) + np.sin(np.arange(cells.shape[0]))
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)[:, None]
    k = (p.cumsum(axis=1) < u).sum(axis=1)
    k = np.minimum(k, cells.shape[0] - 1)
    z = rng.integers(0, 2, size=n)
    d = cells[k, 2 + z]
    y = cells[k, d]
    jz = np.zeros((n, 2, 2, L))
    for zz in (0, 1):
        for dd in (0, 1):
            for yy in range(L):
                mask = (cells[:, 2 + zz] == dd) & (cells[:, dd] == yy)
                jz[:, zz, dd, yy] = p[:, mask].sum(axis=1)
    nm = NuisanceModel(np.full((n, 2), 0.5), joint_given_instrument=jz)
    return ObservedData(x, d, y, z), nm


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
