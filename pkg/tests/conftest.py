import numpy as np
import pytest

from mhect import FixedQR, GridSpec, batch_reactor, synthesize_certificate
from mhect.cli import bench_certificate

Q_BENCH = np.diag([1000.0, 1000.0, 100.0])
R_BENCH = np.array([[100.0]])
VERTS = GridSpec(vertices_only=True, affinity_asserted=True)


@pytest.fixture(scope="session")
def reactor():
    return batch_reactor()


@pytest.fixture(scope="session")
def ref_cert():
    """The published reference weights for the reactor benchmark."""
    return bench_certificate()


@pytest.fixture(scope="session")
def synth_cert(reactor):
    """A certificate synthesized from scratch; shared because the solve is
    the slowest fixture in the suite."""
    return synthesize_certificate(reactor, 0.4, FixedQR(Q_BENCH, R_BENCH), VERTS)
