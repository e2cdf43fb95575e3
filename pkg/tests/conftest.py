import os

import numpy as np
import pytest

from cvmps.grids import ModeLayout, QuadratureGrid
from cvmps.qtt import Mpo, Mps


def random_mps(n, bond, rng, normalize=True):
    dims = [1] + [min(bond, 2 ** min(j, n - j)) for j in range(1, n)] + [1]
    sites = [
        rng.standard_normal((dims[j], 2, dims[j + 1])) + 1j * rng.standard_normal((dims[j], 2, dims[j + 1]))
        for j in range(n)
    ]
    psi = Mps(sites)
    if normalize:
        from cvmps.qtt import norm, scale

        psi = scale(psi, 1.0 / norm(psi))
    return psi


def random_mpo(n, bond, rng):
    dims = [1] + [bond] * (n - 1) + [1]
    return Mpo(
        [
            rng.standard_normal((dims[j], 2, 2, dims[j + 1])) + 1j * rng.standard_normal((dims[j], 2, 2, dims[j + 1]))
            for j in range(n)
        ]
    )


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_layout():
    # 5 + 5 bits; wide enough that alpha = 1 states stay inside the box
    return ModeLayout(QuadratureGrid(-6.0, 8.0, 5), QuadratureGrid(-7.0, 7.0, 5))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CVMPS_LONG") == "1":
        return
    skip = pytest.mark.skip(reason="long run; set CVMPS_LONG=1")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``record(key, passed, detail)`` stores one PASS/FAIL line, shown in the
    terminal summary."""

    def record(key, passed, detail):
        line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
        _ACCEPTANCE[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 9):
        key = f"A{k}"
        terminalreporter.write_line(_ACCEPTANCE.get(key, f"{key} NOT RUN: deselected or skipped in this session"))
