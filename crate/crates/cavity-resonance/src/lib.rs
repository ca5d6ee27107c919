//! Resonances created when a small aperture couples a closed rectangular
//! cavity to a semi-infinite waveguide.
//!
//! The cavity eigenvalues embedded in the continuous spectrum of the guide
//! turn into complex poles once the aperture opens. They are located as zeros
//! of a tracked eigenvalue of a Birman–Schwinger operator on the separating
//! wall.

pub mod bs_operator;
pub mod cli;
pub mod geometry;
pub mod greens;
pub mod modes;
pub mod oracle;
pub mod quadrature;
pub mod resonance;
pub mod spectrum;
