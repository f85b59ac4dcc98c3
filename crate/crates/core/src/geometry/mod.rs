//! Deterministic SIM model: element geometry, Rayleigh-Sommerfeld propagation
//! between layers, the wave-domain cascade, LoS steering vectors, spatial
//! correlation and path loss.

mod cascade;
mod correlation;
mod layout;

pub use cascade::{apply_cascade, compose_cascade, PhaseStack, SimStack};
pub use correlation::{read_correlation_file, CorrelationKind, CorrelationModel, PSD_TOLERANCE};
pub use layout::{
    build_layout, build_propagation_set, diffraction_coefficient, path_loss, steering_vector,
    LayoutParams, Point, PropagationSet, SimLayout,
};
