//! Dual-path multichannel linear prediction dereverberation followed by
//! `ℓ1`-regularized distortionless beamforming, with the simulation,
//! order-selection and evaluation tooling needed to run Monte Carlo
//! experiments.
//!
//! The processing chain is [`tf::stft`] → [`mclp::estimate_filters`] →
//! [`beam::estimate_weights`] → [`tf::istft`]; [`harness`] wires it to
//! simulated rooms from [`room`] and scores it with [`metrics`].

pub mod beam;
pub mod container;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mclp;
pub mod metrics;
pub mod order;
pub mod prox;
pub mod room;
pub mod tf;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/stft.md")]
    mod stft {}
    #[doc = include_str!("../../../book/src/room.md")]
    mod room {}
    #[doc = include_str!("../../../book/src/mclp.md")]
    mod mclp {}
    #[doc = include_str!("../../../book/src/beamformer.md")]
    mod beamformer {}
    #[doc = include_str!("../../../book/src/orders.md")]
    mod orders {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/container.md")]
    mod container {}
}
