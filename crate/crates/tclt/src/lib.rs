//! Renormalization, Rokhlin towers and non-homogeneous Markov chains for
//! deterministic random walks driven by an irrational rotation, with exact
//! arithmetic in a real quadratic field throughout.
//!
//! The guide in `book/` walks through each module; its code blocks are
//! compiled and run as doctests.

pub mod qfield;
pub mod renorm;
pub mod towers;
pub mod markov;
pub mod walk;
pub mod selftest;
pub mod cli;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/field.md")]
    mod field {}
    #[doc = include_str!("../../../book/src/renormalization.md")]
    mod renormalization {}
    #[doc = include_str!("../../../book/src/towers.md")]
    mod towers {}
    #[doc = include_str!("../../../book/src/markov.md")]
    mod markov {}
    #[doc = include_str!("../../../book/src/walk.md")]
    mod walk {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
