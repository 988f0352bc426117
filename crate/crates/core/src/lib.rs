//! Design and verification toolkit for fractional-order PI^λ speed
//! controllers on DC motors.
//!
//! The pipeline runs from physical motor parameters ([`motor`]) to a
//! quasipolynomial plant model ([`quasipoly`]), stability regions in the
//! `(Kp, Ki)` plane ([`locus`]), gain/phase-margin driven controller
//! selection ([`margins`]), relay-feedback auto-tuning of an integer PI
//! baseline ([`relay`]), closed-loop time simulation ([`timesim`]) and
//! commensurate-order stability certification ([`matignon`]).

// `!(x < tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod locus;
pub mod margins;
pub mod matignon;
pub mod motor;
pub mod plot;
pub mod quasipoly;
pub mod relay;
pub mod timesim;

pub use error::{Error, Result};
pub use quasipoly::{FractionalTransferFunction, PiLambdaController, QuasiPolynomial};
