//! Coupling-conditioned neural quantum states.
//!
//! One transformer wavefunction `psi(sigma | gamma)` is trained on an
//! ensemble of Hamiltonians from a family, indexed by their couplings
//! `gamma`. The trained model gives variational ground states across the
//! family and, through derivatives in `gamma`, the fidelity susceptibility.
//!
//! See the guide under `book/` for a walk through the modules.

pub mod autodiff;
pub mod checkpoint;
pub mod couplings;
pub mod error;
pub mod exact;
pub mod fidelity;
pub mod hamiltonian;
pub mod lattice;
pub mod observables;
pub mod runner;
pub mod sampler;
pub mod sr;
pub mod stats;
pub mod vit;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/hamiltonians.md")]
    mod hamiltonians {}
    #[doc = include_str!("../../../book/src/wavefunction.md")]
    mod wavefunction {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/observables.md")]
    mod observables {}
    #[doc = include_str!("../../../book/src/fidelity.md")]
    mod fidelity {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
}
