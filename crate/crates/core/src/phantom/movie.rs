use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rng, Texture};
use crate::error::{Error, Result};
use crate::model::{DirectionField, Grid2, Image2D, Mask2D};

/// Prescribed motion in pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum Motion {
    Uniform { velocity: [f64; 2] },
    /// Columns `< split` move with `left`, the rest with `right`.
    TwoRegion { split: usize, left: [f64; 2], right: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMovieSpec {
    pub dims: [usize; 2],
    #[serde(default = "unit_spacing")]
    pub spacing_mm: [f64; 2],
    pub frames: usize,
    pub motion: Motion,
    /// Standard deviation of additive per-frame noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit_spacing() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone)]
pub struct FlowMovie {
    pub frames: Vec<Image2D>,
    /// Per-pixel prescribed displacement per frame, in mm.
    pub truth: DirectionField,
    /// One mask per moving region.
    pub regions: Vec<Mask2D>,
}

/// Frames of independently textured regions, each translating with its own
/// velocity. Pixels with region `None` hold a static texture.
pub fn render_movie(
    grid: Grid2,
    frames: usize,
    region_of: impl Fn(usize, usize) -> Option<usize>,
    velocities: &[[f64; 2]],
    noise: f64,
    seed: u64,
) -> Result<FlowMovie> {
    if frames < 2 {
        return Err(Error::arg("a movie needs at least two frames"));
    }
    if !(noise >= 0.0) {
        return Err(Error::arg("noise must be non-negative"));
    }
    let [nx, ny] = grid.dims;
    let labels: Vec<Option<usize>> = (0..grid.len()).map(|idx| {
        let [i, j] = grid.ij(idx);
        region_of(i, j)
    }).collect();
    if labels.iter().flatten().any(|&r| r >= velocities.len()) {
        return Err(Error::arg("region index without a velocity"));
    }
    let mut tex_rng = rng(seed, 0);
    let background = Texture::new(&mut tex_rng);
    let textures: Vec<Texture> = velocities.iter().map(|_| Texture::new(&mut tex_rng)).collect();
    let mut noise_rng = rng(seed, 1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let data: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let [i, j] = grid.ij(idx);
                let (x, y) = (i as f64, j as f64);
                let v = match labels[idx] {
                    Some(r) => {
                        let [vx, vy] = velocities[r];
                        textures[r].eval(x - vx * t as f64, y - vy * t as f64)
                    }
                    None => background.eval(x, y),
                };
                v + noise * normal.sample(&mut noise_rng)
            })
            .collect();
        out.push(Image2D::new(grid, data)?);
    }
    let disp: Vec<[f64; 2]> = labels
        .iter()
        .map(|l| match l {
            Some(r) => [velocities[*r][0] * grid.spacing[0], velocities[*r][1] * grid.spacing[1]],
            None => [0.0, 0.0],
        })
        .collect();
    let regions = (0..velocities.len())
        .map(|r| Mask2D::new([nx, ny], labels.iter().map(|l| *l == Some(r)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowMovie {
        frames: out,
        truth: DirectionField::from_displacements(grid, &disp)?,
        regions,
    })
}

pub fn make_flow_movie(spec: &FlowMovieSpec) -> Result<FlowMovie> {
    let grid = Grid2::new(spec.dims, spec.spacing_mm)?;
    match &spec.motion {
        Motion::Uniform { velocity } => {
            render_movie(grid, spec.frames, |_, _| Some(0), &[*velocity], spec.noise, spec.seed)
        }
        Motion::TwoRegion { split, left, right } => {
            if *split == 0 || *split >= spec.dims[0] {
                return Err(Error::arg("split column must lie inside the image"));
            }
            let s = *split;
            render_movie(
                grid,
                spec.frames,
                |i, _| Some(if i < s { 0 } else { 1 }),
                &[*left, *right],
                spec.noise,
                spec.seed,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{estimate_flow, FlowParams};

    fn spec(motion: Motion) -> FlowMovieSpec {
        FlowMovieSpec {
            dims: [64, 48],
            spacing_mm: [1.0, 1.0],
            frames: 4,
            motion,
            noise: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let m = make_flow_movie(&spec(Motion::Uniform { velocity: [0.0, 0.0] })).unwrap();
        for f in &m.frames[1..] {
            assert_eq!(f, &m.frames[0]);
        }
        assert!(m.truth.magnitudes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn translation_truth_is_uniform() {
        let m = make_flow_movie(&spec(Motion::Uniform { velocity: [2.0, 0.0] })).unwrap();
        assert!(m.truth.displacements().iter().all(|d| *d == [2.0, 0.0]));
        // Frame t+1 is frame t shifted by 2 px.
        for j in 0..48 {
            for i in 2..64 {
                assert!((m.frames[1].get(i, j) - m.frames[0].get(i - 2, j)).abs() < 1e-9);
            }
        }
        let d = estimate_flow(&m.frames[0], &m.frames[1], &FlowParams::default()).unwrap();
        let c = d.displacement(24 * 64 + 32);
        assert!((c[0] - 2.0).abs() < 0.1 && c[1].abs() < 0.1, "{c:?}");
    }

    #[test]
    fn two_regions_move_orthogonally() {
        let m = make_flow_movie(&spec(Motion::TwoRegion {
            split: 32,
            left: [1.0, 0.0],
            right: [0.0, 1.0],
        }))
        .unwrap();
        assert_eq!(m.regions[0].count(), 32 * 48);
        assert_eq!(m.truth.direction(5, 5), [1.0, 0.0]);
        assert_eq!(m.truth.direction(50, 5), [0.0, 1.0]);
        for j in 1..48 {
            assert!((m.frames[1].get(40, j) - m.frames[0].get(40, j - 1)).abs() < 1e-9);
            assert!((m.frames[1].get(10, j) - m.frames[0].get(9, j)).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = FlowMovieSpec {
            noise: 0.1,
            ..spec(Motion::Uniform { velocity: [0.3, 0.1] })
        };
        let a = make_flow_movie(&s).unwrap();
        let b = make_flow_movie(&s).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let c = make_flow_movie(&FlowMovieSpec { seed: 8, ..s }).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }
}
