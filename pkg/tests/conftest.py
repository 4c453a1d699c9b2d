"""Shared fixtures: the expensive near-fold seeds are built once per session."""

import pytest

from ratetip.lin import ptop_fold_connections, solve_codim1_ptop


@pytest.fixture(scope="session")
def fold_pair():
    """Near-fold codim-0 PtoP connections bounding the family in r at a = 0.1."""
    return ptop_fold_connections(0.1)


@pytest.fixture(scope="session")
def codim1_pair(fold_pair):
    """Tangent PtoP solutions at both critical rates (r1, r2) for a = 0.1."""
    lo, hi = fold_pair
    return solve_codim1_ptop(0.1, lo), solve_codim1_ptop(0.1, hi)
