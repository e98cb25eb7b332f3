import numpy as np
import pytest

from affordance_recovery.field import WorkspaceGrid


def edt_oracle(occ: np.ndarray, s: float, diag: float) -> np.ndarray:
    """Nearest occupied voxel center by exhaustive pairwise distances."""
    g = occ.shape[0]
    idx = np.argwhere(np.ones_like(occ))
    occupied = np.argwhere(occ)
    if len(occupied) == 0:
        return np.full(occ.shape, diag)
    d = np.sqrt((((idx[:, None, :] - occupied[None, :, :]) * s) ** 2).sum(-1)).min(1)
    return d.reshape(g, g, g)


@pytest.fixture
def small_grid():
    return WorkspaceGrid((0.0, 0.0, 0.0), 0.1, 8)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
