//! Batch pipeline over the segmentation, registration, tractography and EMG
//! stages, driven by a run manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod manifest;
pub mod phantom_io;
pub mod pipeline;

use std::fmt;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the on-disk artifact formats (VVOL header, manifests, reports).
pub const FORMAT_VERSION: &str = "1";
pub const VERSION_LINE: &str = concat!("pipeline ", env!("CARGO_PKG_VERSION"), ", format 1");

/// Invalid manifest or inputs, optionally attributed to the stage that would
/// consume them.
#[derive(Debug)]
pub struct ValidationError {
    pub stage: Option<String>,
    pub message: String,
}

impl ValidationError {
    pub fn new(stage: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            stage: stage.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "stage {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ValidationError {}
