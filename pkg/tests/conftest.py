import sys
from pathlib import Path

import pytest

# make the oracle helpers importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

from eptransfer.basis import BasisSpec, assemble_operator_blocks  # noqa: E402
from eptransfer.spectral import ReducedProblem  # noqa: E402
from eptransfer.twolevel import fit_model, sample_octagon  # noqa: E402
from eptransfer.units import EP_ENERGY, EP_POINT  # noqa: E402


@pytest.fixture(scope="session")
def ep_blocks():
    """Production basis: N_max = 35 with the default scale and rotation."""
    return assemble_operator_blocks(BasisSpec(35))


@pytest.fixture(scope="session")
def ep_reduced(ep_blocks):
    return ReducedProblem(ep_blocks)


@pytest.fixture(scope="session")
def ep_samples(ep_reduced):
    return sample_octagon(ep_reduced, EP_POINT, 1e-3, EP_ENERGY)


@pytest.fixture(scope="session")
def ep_model(ep_samples):
    """Two-level model fitted on the 1e-3 octagon around the reference EP."""
    return fit_model(ep_samples, EP_POINT, radius=1e-3)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[key])
