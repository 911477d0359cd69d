//! Joint 2D-topology / 3D-geometry trajectory auto-encoding for molecules.
//!
//! The crate is organised as a pipeline:
//!
//! * [`molgraph`] parses molecules and relaxes them into dense one-hot tensors.
//! * [`schedule`] and [`trajectory`] build forward diffusion trajectories
//!   (continuous, absorbing, uniform and cold-3D variants).
//! * [`frames`] provides node-wise equivariant frames for the 3D score head.
//! * [`autodiff`] is the reverse-mode engine every trainable part runs on.
//! * [`network`] holds the twin-encoder score network.
//! * [`loss`], [`training`] and [`sampling`] implement the objective,
//!   the optimisation loop and reverse-time generation.
//! * [`evalsuite`] collects symmetry checks, analytic toys and probes;
//!   [`selftest`] is the quick battery behind `mjae selftest`.
//! * [`toy`] holds a 20-molecule corpus with embedded conformers.

pub mod autodiff;
pub mod config;
pub mod evalsuite;
pub mod frames;
pub mod loss;
pub mod molgraph;
pub mod network;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod selftest;
pub mod toy;
pub mod training;
pub mod trajectory;

pub use autodiff::{Tape, Tensor, Var};
pub use config::Config;
pub use molgraph::{DenseTensors, MoleculeGraph};
pub use network::{ModelParams, ScoreNetwork};
pub use schedule::NoiseSchedule;
