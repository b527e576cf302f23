"""Sparse stabilizing feedback design and runtime frequency safety for
inverter-intensive microgrids."""

__version__ = "0.1.0"

from .design import (GainResult, SparsityOptions, SweepEntry, admm_sparse_gain,
                     gain_from_dict, gain_to_dict, gamma_sweep, h2_cost,
                     h2_gradient, load_gain, polish, reweight, save_gain,
                     soft_threshold)
from .errors import (CbfInfeasibleError, ConfigError, ConvergenceError,
                     NumericalBlowupError, StabilityLossError,
                     UnstableSystemError)
from .kernels import (DesignWeights, StabilityReport, check_stability,
                      solve_are, solve_lyapunov, spectral_abscissa)
from .network import (BusSpec, LinearModel, LineSpec, NetworkSpec,
                      assemble_laplacian, assemble_state_space,
                      inertia_damping, line_coupling, load_network,
                      parse_network, serialize_network, setpoint_offset,
                      setpoint_offsets)
from .safety import (ControlBounds, SafetyEnvelope, TopologyReport,
                     barrier_values, control_bounds_all, cross_layer_topology,
                     nominal_control, qp_filter, safe_control_bounds)
from .sim import (DisturbanceModel, SafetyMetrics, SimConfig, SimTrace,
                  run_closed_loop, safety_metrics, sample_disturbance,
                  sample_initial_state, step_linear, step_nonlinear,
                  write_trace_csv)
