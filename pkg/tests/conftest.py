from pathlib import Path

import pytest

from magcal.core import AlignedMonthTable
from magcal.preprocess import prepare_month
from magcal.synthgen import MissionConfig, generate_month

SMALL = MissionConfig(n_months=3, samples_per_day=96, seed=5)


@pytest.fixture(scope="session")
def small_cfg() -> MissionConfig:
    return SMALL


@pytest.fixture(scope="session")
def small_bundles(small_cfg):
    return [generate_month(i, small_cfg) for i in range(small_cfg.n_months)]


@pytest.fixture(scope="session")
def small_aligned(small_bundles) -> list[AlignedMonthTable]:
    return [prepare_month(b) for b in small_bundles]


@pytest.fixture(scope="session")
def small_raw(tmp_path_factory, small_bundles) -> Path:
    root = tmp_path_factory.mktemp("small_mission")
    for b in small_bundles:
        b.write(root / "raw")
    return root


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
