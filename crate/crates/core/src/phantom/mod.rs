//! Synthetic datasets with known ground truth.
//!
//! All randomness comes from ChaCha8 streams seeded by the spec, so a given
//! spec reproduces its outputs exactly.

mod emg;
mod movie;
mod subject;
mod tensor;
mod warp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use emg::{make_emg_phantom, EmgPhantom, EmgPhantomSpec};
pub use movie::{make_flow_movie, render_movie, FlowMovie, FlowMovieSpec, Motion};
pub use subject::{make_subject, SlicePhantom, SubjectPhantom, SubjectSpec};
pub use tensor::{
    dwi_from_field, make_tensor_phantom, stick, DwiProtocol, FiberModel, Geometry, Layout, RegionTruth, TensorPhantom,
    TensorPhantomSpec,
};
pub use warp::{ellipse, half_ellipse, make_registration_pair, RegistrationPair, RegistrationPairSpec, Warp};

/// Any phantom, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomSpec {
    FlowMovie(FlowMovieSpec),
    RegistrationPair(RegistrationPairSpec),
    Tensor(TensorPhantomSpec),
    Subject(SubjectSpec),
    Emg(EmgPhantomSpec),
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Smooth random texture: a sum of plane waves with wavelengths between 9 and
/// 25 pixels.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<[f64; 4]>,
}

impl Texture {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..24)
            .map(|_| {
                let k = rng.random_range(0.25..0.7);
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = rng.random_range(0.5..1.0);
                [k * th.cos(), k * th.sin(), phase, amp]
            })
            .collect();
        Self { waves }
    }

    /// Intensity at pixel coordinates `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| w[3] * (w[0] * x + w[1] * y + w[2]).sin())
            .sum()
    }
}
