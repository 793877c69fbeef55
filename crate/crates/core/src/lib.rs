//! PDE backstepping boundary stabilization of a Timoshenko beam with
//! anti-damping and anti-stiffness at the uncontrolled end.

pub mod analysis;
pub mod backstepping;
pub mod error;
pub mod kernel;
pub mod params;
pub mod quadrature;
pub mod riemann;
pub mod simulator;

pub use analysis::{energy_h1, energy_riemann, fit_decay_rate, lyapunov_v, monitor_target, theorem_constant_c2, DecayReport, LyapunovConfig};
pub use backstepping::{
    apply_inverse_kernels, control_physical, control_riemann, inverse_kernels, invert_transform, target_matrices, transform_to_target, xi_kernels,
    ControlSignal, InverseKernelSet, TargetState, TargetSystem, XiKernels,
};
pub use error::{Error, Result};
pub use kernel::{extract_gains, kernel_residuals, solve_kernels, solve_kernels_with, GainSet, KernelOptions, KernelSet};
pub use params::{assemble_matrices, BeamParams, ControllerParams, SpatialGrid, SystemMatrices};
pub use riemann::{from_riemann, to_riemann, PhysicalState, RiemannState};
pub use simulator::{simulate, step, Mode, SimConfig, TimeSeries};
