//! Volumetric muscle-compartment segmentation from ultrasound direction fields,
//! fiber-architecture measurement by streamline tractography, and validation
//! against surface-EMG activation centers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod architecture;
pub mod emg;
pub mod error;
pub mod flow;
pub mod growing;
pub mod io;
pub mod model;
pub mod phantom;
pub mod registration;
pub mod tractography;

pub use error::{Error, Result};
