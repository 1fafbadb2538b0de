import numpy as np
import pytest

from expimd import BeadConfiguration, IsotropicHarmonic, SystemSpec


@pytest.fixture
def toy_system():
    """betahw = 3 quantum-regime harmonic toy, P = 10, 3D."""
    return SystemSpec(mass=1.0, beta=3.0, hbar=1.0, num_beads=10, dim=3,
                      potential=IsotropicHarmonic(1.0, 1.0))


def random_config(spec, rng, scale=1.0, momenta=False):
    pos = scale * rng.standard_normal(spec.shape)
    mom = scale * rng.standard_normal(spec.shape) if momenta else None
    return BeadConfiguration(pos, mom)
