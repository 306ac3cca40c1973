"""SympFlow: symplectic time-dependent neural flow maps for Hamiltonian ODEs.

The model composes exact flows of learned one-coordinate potentials, so it is
symplectic by construction and the identity at t = 0, and its generating
time-dependent Hamiltonian can be extracted in closed form. Training combines
the physics-informed residual of the equations of motion with a
Hamiltonian-matching penalty on the extracted Hamiltonian.
"""

from . import diffeng, flows, integrators, kernels, potential, systems, training
from .errors import IntegrationError, NumericalError, TrainingError
from .flows import (
    FlowLayer,
    SympFlowModel,
    forward,
    jacobian,
    load_checkpoint,
    network_hamiltonian,
    pair_hamiltonian,
    rollout,
    save_checkpoint,
    time_derivative,
)
from .potential import BaselineFlowNet, PotentialNet, QuadraticPotential, init_potential
from .systems import DomainBox, HamiltonianSystem, PhasePoint, get_system, sample_domain
from .training import TrainingConfig, adam_step, hamiltonian_matching_loss, pi_loss, total_loss, train

__version__ = "0.1.0"


def kernel_backend():
    """Name of the selected kernel implementation ("cython" or "numpy")."""
    return kernels.IMPLEMENTATION
