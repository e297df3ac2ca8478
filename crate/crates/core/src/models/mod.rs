//! Dynamics of the coalescing path models.

pub mod brownian;
pub mod lattice;
pub mod paths;
pub mod poisson;

pub use brownian::{
    bridge_crossing_probability, brownian_gap_step, brownian_gap_step_detail, brownian_triple_at,
    ContinuousTriple,
};
pub use lattice::{
    howard_increment_pmf, howard_increment_pmf_adaptive, howard_increment_variance, howard_step,
    lattice_step, scheidegger_step, sigma0, ssrw_triple_step, DiscreteTriple, GapPair, HowardEnv,
    IncrementPmf, LatticeEnv, ScalingParams, ScheideggerEnv, Site,
};
pub use paths::check_noncrossing;
pub use poisson::{
    build_poisson_forest, forest_from_points, forest_triple_jump, poisson_in_m0,
    poisson_triple_jump, poisson_tube_union, validate_poisson_state, Ancestor, JumpEvent,
    PoissonForest, TubeUnion, Window,
};
