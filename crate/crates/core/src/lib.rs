//! One-dimensional total-variation recovery from Gaussian measurements:
//! signal classes with controlled jump separation, an equality-constrained
//! TV solver with an exact LP cross-check, Monte-Carlo estimation of the
//! descent-cone statistical dimension, and a deterministic phase-transition
//! experiment harness with CSV/SVG output.

pub mod conegeom;
pub mod linops;
pub mod phaselab;
pub mod signals;
mod simplex;
pub mod solver;

pub use conegeom::{
    estimate_statistical_dimension, polar_cone_distance_sq, ConeError, ConeWidthEstimate,
    SubdifferentialModel,
};
pub use linops::{derive_seed, sample_gaussian_vector, GradientOperator, LinopError, MeasurementEnsemble};
pub use phaselab::{
    read_grid_csv, render_heatmap_svg, run_phase_grid, transition_location, write_grid_csv,
    ExperimentSpec, HeatmapOverlays, PhaseCell, PhaseError, PhaseGrid, SignalClass,
    TransitionLocation,
};
pub use signals::{
    detect_jumps, discretize_pc, make_dense_jump, make_equidistant, separation, theoretical_rate,
    LevelSource, PiecewiseConstantSpec, RateBound, Separation, Signal, SignalError,
};
pub use solver::{
    check_recovery, solve_tv, solve_tv_oracle, SolveResult, SolveStatus, SolverConfig, SolverError,
};
