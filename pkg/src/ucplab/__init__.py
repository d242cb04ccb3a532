"""Desk-scale laboratory for scale-free unique continuation of Schroedinger
eigenfunctions and its consequences for Delone-Anderson operators."""

__version__ = "0.1.0"

from .anderson import (CouplingDistribution, DeloneAndersonModel, EigenvalueLifting,  # noqa: E402
                       WegnerEstimator, modulus_of_continuity, sample_potential, sme_check, ssf,
                       uncertainty_check)
from .constants import CarlemanConfig, ConstantsReport, c_lf, c_quc_corollary, c_quc_full, c_sfuc  # noqa: E402
from .geometry import (BoxSpec, DeloneArrangement, generate_delone, lattice_sites,  # noqa: E402
                       reflect_extend_points, right_near_neighbor, split_delone, validate_delone)
from .operator import (DiscreteHamiltonian, EigenPair, Grid, GridFunction, build_hamiltonian,  # noqa: E402
                       count_in_interval, eigs_lowest, gradient_mass, mass, rho_switch)
from .ucp import UCPVerifier, classify_sites, extend_function, mass_ratio  # noqa: E402
