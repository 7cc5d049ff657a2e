//! Reference computations the branching dynamics is checked against.
//!
//! * Exact quantum mechanics on a small grid: the box Hamiltonian, unitary
//!   propagation, the Gaussian localization channel and von Neumann entropy.
//! * Interference of coherent and tagged superpositions.
//! * Classical diffusion: a reflected random walk, the reflecting-wall
//!   diffusion equation, and an exact site-lumped weighted ensemble.

mod classical;
mod grid;
mod states;

pub use classical::{
    classical_random_walk_oracle, lumped_weighted_reference, reflecting_diffusion_histogram, MIN_WALKERS,
};
pub use grid::{
    build_box_hamiltonian, grw_localization_channel, unitary_step, von_neumann_entropy, BoxHamiltonian, Grid,
    GridDensityMatrix, GridWavefunction, MIN_GRID_POINTS,
};
pub use states::{
    fringe_content, interference_visibility, random_mixed_state, random_pure_state, visibility_of, TaggedComponent,
    TaggedState,
};
