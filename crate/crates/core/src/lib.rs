//! Channel estimation for stacked-intelligent-metasurface (SIM) aided
//! multi-user uplinks under Rician fading.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: element layout, Rayleigh-Sommerfeld propagation matrices,
//!   the wave-domain cascade, steering vectors, spatial correlation, path loss.
//! * [`channel`]: Rician user channels, orthogonal pilots and the uplink
//!   pilot phase.
//! * [`estimator`]: the MMSE estimate, its covariances and the NMSE in closed
//!   form and by Monte Carlo.
//! * [`optimizer`]: the average-NMSE objective, its closed-form gradient with
//!   respect to every layer's phases, projected gradient descent on the
//!   unit-modulus torus and a random-codebook baseline.
//! * [`harness`]: scenario configuration, sweeps, baselines and result files.
//!
//! All numerical code is generic over the real scalar ([`Real`]); the aliases
//! below fix it to `f64`, which is what the harness and CLI use.

pub mod channel;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod optimizer;
pub mod rng;
pub mod scalar;

pub use error::{Result, SimError};
pub use scalar::Real;

pub type SimLayout = geometry::SimLayout<f64>;
pub type PropagationSet = geometry::PropagationSet<f64>;
pub type PhaseStack = geometry::PhaseStack<f64>;
pub type SimStack = geometry::SimStack<f64>;
pub type CorrelationModel = geometry::CorrelationModel<f64>;
pub type UserChannel = channel::UserChannel<f64>;
pub type PilotBook = channel::PilotBook<f64>;
pub type PilotObservation = channel::PilotObservation<f64>;
pub type EstimationArtifacts = estimator::EstimationArtifacts<f64>;
pub type NmseProblem = optimizer::NmseProblem<f64>;
pub type GradientContext = optimizer::GradientContext<f64>;
pub type OptimizerResult = optimizer::OptimizerResult<f64>;

pub type SimLayout32 = geometry::SimLayout<f32>;
pub type SimStack32 = geometry::SimStack<f32>;
pub type NmseProblem32 = optimizer::NmseProblem<f32>;
