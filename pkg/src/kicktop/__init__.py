"""Numerical toolkit for the quantum and classical kicked top.

Classical SALI chaos detection, parity-reduced Floquet spectra, Krylov
generation of spin coherent states and Husimi-function statistics
(Wehrl entropy, overlap index, mixed-state fraction).
"""

from kicktop.spin import (
    SpinSystem,
    SpinOperators,
    CoherentState,
    KrylovConvergenceError,
    build_spin_operators,
    krylov_expm_action,
    make_coherent_state,
    direct_scs_oracle,
    wigner_d_column,
    theta_columns,
)
from kicktop.classical import (
    PhaseGrid,
    ChaoticMask,
    classical_map,
    jacobian,
    involution,
    sali_trajectory,
    classify_phase_space,
    chaotic_fraction,
)
from kicktop.floquet import (
    ParitySector,
    FloquetSpectrum,
    build_floquet,
    diagonalize,
    spacing_ratios,
    normalized_mean_ratio,
    shannon_entropy,
    shannon_elm_in_basis,
    symmetry_line_points,
)
from kicktop.husimi import (
    CoherentFrame,
    HusimiField,
    EigenstateRecord,
    PowerLawFit,
    build_frame,
    husimi,
    wehrl_entropy,
    wehrl_elm,
    overlap_index,
    joint_distribution,
    mixed_fraction,
    fit_power_law,
    sliding_window_exponents,
    grid_convergence_audit,
)

__version__ = "0.1.0"
