//! Finite-element laboratory for the Laplacian obstacle problem on a disk,
//! where the quadrature order is a controlled perturbation of the operator,
//! together with a finite-dimensional engine that checks Strang/Falk-type
//! bounds for perturbed variational inequalities on random instances.
//!
//! The crate is `no_std` (with `alloc`); all file formats, CLI and threading
//! live in the companion `pvi-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod abstract_vi;
pub mod assembly;
pub mod fmath;
pub mod linalg;
pub mod mesh;
pub mod pdas;
pub mod poly;
pub mod quadrature;
pub mod rng;
pub mod sparse;
pub mod study;

use alloc::string::String;
use alloc::vec::Vec;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    Precondition(&'static str),
    /// A matrix required to be (semi)definite failed a factorization or
    /// eigenvalue test. Signals e.g. the under-integrated q <= p-1 regime.
    NotPositiveDefinite(&'static str),
    /// An iteration did not converge; carries the last iterate.
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_iterate: Vec<f64>,
    },
    /// Geometry failure (singular element map, inverted Jacobian, ...).
    Geometry(String),
    /// Too few usable records to fit a convergence rate.
    UndefinedRate(&'static str),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::NotPositiveDefinite(what) => write!(f, "matrix not positive definite: {what}"),
            Error::NonConvergence {
                what, iterations, ..
            } => {
                write!(f, "{what} did not converge after {iterations} iterations")
            }
            Error::Geometry(msg) => write!(f, "geometry error: {msg}"),
            Error::UndefinedRate(msg) => write!(f, "undefined rate: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
