import numpy as np
import pytest

from tupleworks import BlockPartition, Sample


def make_sample(arm, y, block, covariates=None):
    """Sample plus BlockPartition from flat (arm, y, block) arrays."""
    arm = np.asarray(arm)
    block = np.asarray(block)
    n_units = arm.size
    num_arms = int(arm.max())
    cov = np.zeros((n_units, 1)) if covariates is None else covariates
    sample = Sample([f"u{i}" for i in range(n_units)], cov, num_arms, arm, y)
    members = [np.flatnonzero(block == j) for j in range(block.max() + 1)]
    return sample, BlockPartition.from_blocks(members)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance line; printed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
