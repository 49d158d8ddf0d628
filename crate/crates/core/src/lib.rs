// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Decoherence suppression by periodic forcing of a small quantum system
//! coupled to a thermal fermionic reservoir.
//!
//! The crate checks dynamical-decoupling conditions for periodic control
//! schedules, assembles the second-order level-shift generator and the
//! resulting decoherence rate, and simulates the spin-fermion model exactly
//! on a finite set of reservoir modes.

pub mod error;
pub mod linalg;
pub mod quad;
pub mod system;
pub mod control;
pub mod reservoir;
pub mod weakcoupling;
pub mod exactsim;
pub mod experiment;

pub use error::{Error, Result};
pub use linalg::CMatrix;
