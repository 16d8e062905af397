import importlib
from pathlib import Path

import numpy as np
import pytest

from flexdispatch.grid import Branch, Bus, GridModel

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "flexdispatch" / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def case33_text():
    return (DATA_DIR / "case33bw.m").read_text()


@pytest.fixture(scope="session")
def case33(case33_text):
    from flexdispatch.matpower import parse_matpower

    return parse_matpower(case33_text)


@pytest.fixture
def chain2():
    """Slack 1 -- bus 2, r = x = 0.05 pu."""
    return GridModel(
        buses=(Bus(1, 0.0, 0.0, 0.9, 1.1), Bus(2, 0.0, 0.0, 0.9, 1.1)),
        branches=(Branch(1, 2, 0.05, 0.05),),
        slack_bus=1, v0=1.0, base_mva=10.0)


@pytest.fixture
def star4():
    """Slack with four leaves."""
    buses = [Bus(1, 0.0, 0.0, 0.9, 1.1)]
    branches = []
    for j in range(2, 6):
        buses.append(Bus(j, 0.01, 0.005, 0.9, 1.1))
        branches.append(Branch(1, j, 0.02, 0.01))
    return GridModel(buses=tuple(buses), branches=tuple(branches),
                     slack_bus=1, v0=1.0, base_mva=10.0)


def kernel_backends():
    """All importable kernel implementations, pure first."""
    mods = [importlib.import_module("flexdispatch._kernels.pure")]
    try:
        mods.append(importlib.import_module("flexdispatch._kernels._core"))
    except ImportError:
        pass
    return mods


@pytest.fixture(params=kernel_backends(), ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def kernels(request):
    return request.param


def random_tree_model(rng, n_bus, v_lo=0.5, v_hi=1.5, load_scale=0.02):
    """Random radial model with bus 1 as slack."""
    buses = [Bus(1, 0.0, 0.0, v_lo, v_hi)]
    branches = []
    for j in range(2, n_bus + 1):
        parent = int(rng.integers(1, j))
        buses.append(Bus(j, float(rng.uniform(0, load_scale)),
                         float(rng.uniform(0, load_scale / 2)), v_lo, v_hi))
        branches.append(Branch(parent, j, float(rng.uniform(0.01, 0.1)),
                               float(rng.uniform(0.01, 0.1))))
    return GridModel(buses=tuple(buses), branches=tuple(branches),
                     slack_bus=1, v0=1.0, base_mva=10.0)


def random_column(rng, n, full_support=True):
    """Random target column, penalty row and cost vector for column tests."""
    pbar = rng.uniform(0.1, 1.0, n)
    if not full_support and n > 2:
        pbar[rng.integers(0, n)] = 0.0
    pbar = pbar / pbar.sum()
    gamma = rng.uniform(0.5, 2.0, n)
    c = rng.uniform(-1.0, 1.0, n)
    return c, gamma, pbar


TOY_CASE = """function mpc = toy
mpc.version = '2';
mpc.baseMVA = 10;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 12.66 1 1 1;
  2 1 0.5 0.2 0 0 1 1 0 12.66 1 1.1 0.9;
];
mpc.branch = [
  1 2 0.05 0.05 0 0 0 0 0 0 1;
];
"""

TOY_SCENARIO = """
[horizon]
T = 3

[prices]
mode = constant
constant = 1.0

[seed]
seed = 7

[ensemble 2]
states = 2
p = 0.0 1.0
q = 0.0 0.5
target_row = 0.7 0.3
target_row = 0.4 0.6
gamma = 1.0
rho0 = 1.0 0.0

[algorithm]
delta = auto
tol_primal = 1e-6
tol_dual = 1e-6
max_iter = 300
"""


@pytest.fixture
def toy_case_text():
    return TOY_CASE


@pytest.fixture
def toy_scenario_text():
    return TOY_SCENARIO
