import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from magwell.montgomery import minimizer_state
from magwell.model2d import Field2DConfig, run_sweep

REFERENCE_BAND_DATA = {
    # k: (alpha_min, nu_hat, lambda_1); reference values for this operator
    # family, stable to 1e-2
    1: (0.35, 0.57, 1.98),
    2: (0.00, 0.66, 2.50),
    3: (0.16, 0.68, 2.61),
    4: (0.00, 0.76, 2.98),
    5: (0.10, 0.81, 3.18),
    6: (0.00, 0.87, 3.47),
    7: (0.07, 0.92, 3.66),
}


@pytest.fixture(scope="session")
def states():
    """Converged minimizer states for k = 1..7 (module-level cache shared)."""
    return {k: minimizer_state(k) for k in range(1, 8)}


@pytest.fixture(scope="session")
def sweep2d():
    """The full k=1 validation sweep; shared by the acceptance criteria."""
    config = Field2DConfig.default(k=1)
    return config, run_sweep(config, m_count=4)
