import sys
from pathlib import Path

import numpy as np
import pytest

from lwropt.config import load_problem
from lwropt.costexpr import Function
from lwropt.fluxmodel import affine_flux_model, build_flux_model
from lwropt.groups import Group, GroupSpec
from lwropt.planner import plan

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def model():
    """v = 2 - rho on [0, 2]."""
    return affine_flux_model(2.0, 1.0)


@pytest.fixture(scope="session")
def generic_model():
    """Same law, built without the closed-form shortcut."""
    return build_flux_model(lambda r: 2.0 - np.asarray(r, dtype=float), 2.0)


def two_group_spec(G=2.51):
    return GroupSpec(Function("-t"), [Group("g1", G, Function("exp(t - 4)")),
                                      Group("g2", G, Function("exp(t - 7.6)"))])


def one_group_spec(G=1.0, psi="exp(t - 4)"):
    return GroupSpec(Function("-t"), [Group("g", G, Function(psi))])


@pytest.fixture(scope="session")
def example4_config():
    return load_problem(CONFIGS / "example4.json")


@pytest.fixture(scope="session")
def example4_plan(example4_config):
    cfg = example4_config
    return plan(cfg.spec(), cfg.model(), cfg.length, cfg.solver)


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(acc.RESULTS):
        ok, detail = acc.RESULTS[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}: {detail}")
