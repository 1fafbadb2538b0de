"""Finite-temperature quantum statistics of two identical particles.

Ring-polymer path-integral molecular dynamics over two necklace topologies,
with boson/fermion averages obtained by exchange weighting of the
distinguishable ensemble. Well-tempered metadynamics on the exchange
spring-energy difference defeats the fermionic sign problem; Bennett's
acceptance ratio and a virial estimator provide two independent routes to
energies, validated against analytic and exact-diagonalization references.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, ExpimdError, NoOverlapError,
                     NumericsError, OverflowGuardError, ShapeError,
                     SignCollapseError)
from .model import (BeadConfiguration, SymmetryChannel, SystemSpec, Topology,
                    collective_variable_s, cv_gradient, potential_energy,
                    spring_energy, symmetry_weight, symmetry_weight_signed)
from .potentials import (DotParams, FreeParticles, IsotropicHarmonic,
                         PotentialSpec, QuantumDot, solve_dot_frequencies)
from .metadynamics import BiasState
from .sampler import (IntegratorSpec, SampleBatch, Trajectory, TrajectorySample,
                      WallSpec, equilibrate_then_sample, initialize_configuration,
                      run_trajectory, total_energy, total_force)
from .estimators import (BennettResult, EstimateResult, Histogram1D, Histogram2D,
                         WeightedAccumulator, bennett_ratio, density_difference,
                         fermion_energy_via_free_energy, virial_energy,
                         weighted_average)
from .oracle import (HarmonicReference, SpectrumTable, dot_exact_diagonalize,
                     dot_thermal_energy, harmonic_mean_pair_distance,
                     harmonic_pair_distribution, harmonic_partition)
from .config import RunConfig, parse_config, parse_config_text

__all__ = [name for name in dir() if not name.startswith("_")]
