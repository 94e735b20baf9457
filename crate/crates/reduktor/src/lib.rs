//! Averaged dynamics of quantum systems subject to reductions at Poisson
//! times, on doubly stochastic matrices.
//!
//! [`channel`] builds the evolution maps `M(t)` from a system–bath model,
//! [`volterra`] solves for their Poisson average `M̄(T)`, [`jump_mc`]
//! simulates the jump process directly and [`asymptotics`] studies the limit.
//! The guide in `book/` walks through the same material with examples.

pub mod asymptotics;
pub mod channel;
pub mod config;
pub mod dstoch;
pub mod io;
pub mod jump_mc;
pub mod scalar;
pub mod source;
pub mod volterra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/dstoch.md")]
    mod dstoch {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/averaged.md")]
    mod averaged {}
    #[doc = include_str!("../../../book/src/scalar.md")]
    mod scalar {}
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    mod asymptotics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
