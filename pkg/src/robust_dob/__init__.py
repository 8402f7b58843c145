"""Disturbance-observer-based robust output feedback for MIMO normal-form
plants with an uncertain, state-dependent input gain.

Modules: :mod:`plant` and :mod:`satellite` (models), :mod:`synthesis`
(gain design), :mod:`controller`, :mod:`simulator`, :mod:`analysis`
(verification of the fast-variable theory) and :mod:`cli`.
"""

from .analysis import (
    Metrics,
    check_gain_bound,
    compute_metrics,
    eta_from_states,
    eta_from_trajectory,
    fast_dynamics_residual,
    quasi_steady_controller_state,
    quasi_steady_eta,
    sector_check,
    xi_from_states,
)
from .controller import ControllerState, SmoothSaturation, controller_output, controller_rhs, smooth_sat
from .plant import (
    NominalModel,
    NormalFormPlant,
    RelativeDegreeVector,
    SingularGainError,
    build_structural_matrices,
    plant_rhs,
)
from .satellite import SatelliteParams, constant_gain_nominal, satellite_gain_samples, satellite_plant
from .simulator import SimConfig, simulate_closed_loop, simulate_nominal, sweep_tau
from .synthesis import (
    ControllerParams,
    GainVector,
    SectorDisk,
    SynthesisError,
    assemble_filter_matrices,
    estimate_saturation_levels,
    inner_coeffs_from_roots,
    make_controller_params,
    nyquist_check,
    search_a1,
    spr_check,
    synthesize,
)
from .trajectory import Trajectory, read_csv, write_csv

__version__ = "0.1.0"
