"""Hybrid gate-based / measurement-based VQE toolkit."""

from .pauli import Hamiltonian, PauliString, PauliTerm, group_commuting
from .statevector import DynamicCircuit, NoiseModel, QuantumState
from .tableau import StabilizerTableau
from .mbqc import GadgetSpec, Pattern, compile_gadget, gadget_pattern, reduce
from .estimation import MitigationConfig, estimate_energy
from .vqe import Ansatz, OptimizerConfig, run_vqe

__version__ = "0.1.0"
