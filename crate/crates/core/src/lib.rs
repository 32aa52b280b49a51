//! Generalized recursive reasoning for small multi-agent games.
//!
//! The crate is `no_std` (it only needs `alloc`) and contains every numerical
//! piece of the laboratory:
//!
//! - [`games`]: two-player normal-form games and the n-player Beauty Contest.
//! - [`reasoning`]: soft operators, the opponent posterior, level-k rollouts and
//!   Poisson level mixtures.
//! - [`dynamics`]: level-k gradient-ascent fields on 2x2 games, the quadratic
//!   Lyapunov function and an RK4 integrator.
//! - [`analysis`]: exact best responses, Nash checks, exact level-k chains and
//!   the pure-Nash persistence verifier.
//! - [`learning`]: a small reverse-mode autodiff tape, MLPs and the recursive
//!   soft actor-critic trainer.
//!
//! File formats, CSV output and the command line live in the `gr2` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod analysis;
pub mod dynamics;
mod error;
pub mod fmath;
pub mod games;
pub mod learning;
pub mod reasoning;

pub use error::{Error, Result};
