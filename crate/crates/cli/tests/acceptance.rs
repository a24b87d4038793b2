//! One line per acceptance criterion, each checked against an analytic or
//! independently computed oracle.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use compartmenter::phantom_io::write_phantom;
use compartmenter::pipeline::{run_pipeline, RunOptions};
use compartmenter_core::architecture::{measure, range_check, volume_ratio, ArchitectureReport, Ranges, Region};
use compartmenter_core::emg::{activation_center, containment_accuracy, preprocess, project_boundaries, EmgParams};
use compartmenter_core::flow::{aggregate_direction, FlowParams};
use compartmenter_core::growing::{dynamic_threshold, grow_region, GrowParams};
use compartmenter_core::model::raster::fill_polygon;
use compartmenter_core::model::{Contour, Grid3, LabelVolume, Mask2D, Streamline};
use compartmenter_core::phantom::{
    ellipse, make_flow_movie, make_registration_pair, make_subject, make_tensor_phantom, DwiProtocol, FiberModel,
    FlowMovieSpec, Geometry, Layout, Motion, PhantomSpec, RegistrationPairSpec, SubjectSpec, TensorPhantom,
    TensorPhantomSpec, Warp,
};
use compartmenter_core::registration::{
    loft_masks, map_contour, min_weight_match, sample_contour, MatchMode, Modality, SampledSet,
};
use compartmenter_core::tractography::{
    eigen, farthest_streamline_sample, filter_smooth, fit_tensor, fractional_anisotropy, track, TensorField,
    TrackParams,
};
use nalgebra::{Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String)>;
type Criterion = fn() -> Check;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn mask_dice(a: &Mask2D, b: &Mask2D) -> f64 {
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count() as f64;
    2.0 * inter / (a.count() + b.count()) as f64
}

fn contour_dice(a: &Contour, b: &Contour) -> f64 {
    let (lo_a, hi_a) = a.bounds();
    let (lo_b, hi_b) = b.bounds();
    let lo = [lo_a.x.min(lo_b.x) - 1.0, lo_a.y.min(lo_b.y) - 1.0];
    let hi = [hi_a.x.max(hi_b.x) + 1.0, hi_a.y.max(hi_b.y) + 1.0];
    let h = 0.05;
    let dims = [((hi[0] - lo[0]) / h) as usize, ((hi[1] - lo[1]) / h) as usize];
    mask_dice(
        &fill_polygon(a.points(), dims, [h, h], lo),
        &fill_polygon(b.points(), dims, [h, h], lo),
    )
}

// 1. Region growing on the two-region motion phantom.
fn growing() -> Check {
    let n = 512;
    let movie = make_flow_movie(&FlowMovieSpec {
        dims: [n, n],
        spacing_mm: [1.0, 1.0],
        frames: 12,
        motion: Motion::TwoRegion {
            split: n / 2,
            left: [0.4, 0.0],
            right: [0.0, 0.4],
        },
        noise: 0.0,
        seed: 1,
    })?;
    let t0 = Instant::now();
    let field = aggregate_direction(&movie.frames, &FlowParams::default())?;
    let flow_s = t0.elapsed().as_secs_f64();
    let fds = Mask2D::new([n, n], vec![true; n * n])?;
    let p = GrowParams::default();
    let t1 = Instant::now();
    let left = grow_region(&field, &fds, &[[n / 4, n / 2]], &p)?;
    let right = grow_region(&field, &fds, &[[3 * n / 4, n / 2]], &p)?;
    let grow_s = 0.5 * t1.elapsed().as_secs_f64();
    let d = [mask_dice(&left, &movie.regions[0]), mask_dice(&right, &movie.regions[1])];

    let area = (n * n) as f64;
    let q = Point2::new(100.0, 100.0);
    let r_eq = (area / std::f64::consts::PI).sqrt();
    let t_at_seed = dynamic_threshold(&[q], &q, area, &p);
    let t_at_radius = dynamic_threshold(&[q], &Point2::new(100.0 + r_eq, 100.0), area, &p);
    let pass = d.iter().all(|&x| x >= 0.95) && grow_s < 1.0 && t_at_seed == 30.0 && (t_at_radius - 5.0).abs() < 1e-12;
    Ok((
        pass,
        format!(
            "Dice {:.4}/{:.4} (>= 0.95), grow {:.3} s per slice (< 1 s), flow {:.2} s, t(r=0) {t_at_seed}, t(r=1) {t_at_radius:.12}",
            d[0], d[1], grow_s, flow_s
        ),
    ))
}

fn random_set(n: usize, seed: u64, w: f64, h: f64, source: Modality) -> SampledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampledSet {
        points: (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h)))
            .collect(),
        source,
        slice_z: 0.0,
    }
}

// 2. Sparse matching against the exact dense solver.
fn matching() -> Check {
    let u = random_set(500, 11, 30.0, 20.0, Modality::Ultrasound);
    let v = random_set(500, 12, 32.0, 19.0, Modality::Mri);
    let dense = min_weight_match(&u, &v, MatchMode::Dense)?;
    let sparse = min_weight_match(&u, &v, MatchMode::Sparse { k: 32 })?;
    let gap = (sparse.total_cost - dense.total_cost) / dense.total_cost;
    let same = min_weight_match(&u, &SampledSet { source: Modality::Mri, ..u.clone() }, MatchMode::Sparse { k: 32 })?;

    let big_u = random_set(10_000, 13, 40.0, 25.0, Modality::Ultrasound);
    let big_v = random_set(10_000, 14, 44.0, 23.0, Modality::Mri);
    let t = Instant::now();
    min_weight_match(&big_u, &big_v, MatchMode::Sparse { k: 32 })?;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        gap.abs() <= 0.01 && same.total_cost == 0.0 && secs < 60.0,
        format!(
            "n=500 sparse/dense cost gap {:.4}% (<= 1%), identical sets cost {}, n=10000 sparse {secs:.1} s (< 60 s)",
            100.0 * gap,
            same.total_cost
        ),
    ))
}

// 3. Compartment carried through a bump warp.
fn deformation() -> Check {
    let radii = [20.0, 12.0];
    let center = [30.0, 20.0];
    let pair = make_registration_pair(&RegistrationPairSpec {
        center,
        radii,
        slice_z: 0.0,
        vertices: 128,
        warp: Warp::Bump {
            center,
            radius: radii[0],
            amplitude: 0.1,
            offset: [3.0, -2.0],
        },
    })?;
    let u = sample_contour(&pair.us_outline, 0.25, 2000, Modality::Ultrasound)?;
    let v = sample_contour(&pair.mri_outline, 0.25, 2000, Modality::Mri)?;
    let m = min_weight_match(&u, &v, MatchMode::Sparse { k: 32 })?;
    let mapped = map_contour(&m, &pair.us_compartment)?;
    let d = contour_dice(&mapped, &pair.truth_compartment);
    Ok((d >= 0.9, format!("mapped vs warped compartment Dice {d:.4} (>= 0.9)")))
}

fn circle(c: [f64; 2], r: f64, z: f64, label: u16) -> Result<Contour> {
    Ok(ellipse(c, [r, r], 96, z, label)?)
}

// 4. Lofting at the input slices and on a frustum.
fn lofting() -> Check {
    let g = Grid3::new([100, 100, 31], [0.4, 0.4, 1.0], [0.2, 0.2, 0.0])?;
    let knots: Vec<Contour> = [0.0, 10.0, 20.0, 30.0]
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let c = [20.0 + 0.8 * k as f64, 20.0 - 0.5 * k as f64];
            Ok(ellipse(c, [9.0 + (k % 2) as f64 * 2.0, 7.0 + k as f64], 96, z, 1)?)
        })
        .collect::<Result<_>>()?;
    let v = loft_masks(&knots, &g)?;
    let mut worst = 1.0f64;
    for c in &knots {
        let k = c.slice_z().round() as usize;
        let truth = fill_polygon(c.points(), [100, 100], [0.4, 0.4], [0.2, 0.2]);
        let mut got = Mask2D::empty([100, 100]);
        for j in 0..100 {
            for i in 0..100 {
                got.set(i, j, v.get(i, j, k) == 1);
            }
        }
        worst = worst.min(mask_dice(&got, &truth));
    }

    let (r1, r2, h) = (6.0, 12.0, 30.0);
    let fg = Grid3::new([100, 100, 30], [0.4, 0.4, 1.0], [0.2, 0.2, 0.5])?;
    let frustum: Vec<Contour> = [0.0, 10.0, 20.0, 30.0]
        .iter()
        .map(|&z| circle([20.0, 20.0], r1 + (r2 - r1) * z / h, z, 2))
        .collect::<Result<_>>()?;
    let fv = loft_masks(&frustum, &fg)?;
    let vol = fv.count_label(2) as f64 * fg.voxel_volume();
    let analytic = std::f64::consts::PI * h / 3.0 * (r1 * r1 + r1 * r2 + r2 * r2);
    let err = rel(vol, analytic);
    Ok((
        worst >= 0.98 && err <= 0.03,
        format!(
            "knot-slice Dice min {worst:.4} (>= 0.98), frustum volume {vol:.0} vs {analytic:.0} mm3 ({:.2}%, <= 3%)",
            100.0 * err
        ),
    ))
}

fn tensor_phantom(geometry: Geometry, fiber: FiberModel, layout: Layout) -> Result<TensorPhantom> {
    Ok(make_tensor_phantom(&TensorPhantomSpec {
        geometry,
        fiber,
        layout,
        margin: 1,
        eigenvalues: [2.0e-3, 4.0e-4, 4.0e-4],
        dwi: None,
    })?)
}

/// Tracks, smooths and subsamples one region as the pipeline does.
fn tracts(field: &TensorField, mask: &LabelVolume, label: u16, p: &TrackParams) -> Result<(Vec<Streamline>, Vec<Streamline>)> {
    let raw = track(field, mask, label, p)?;
    let smooth = filter_smooth(&raw, p);
    let n = p.target_count.min(smooth.len());
    Ok((raw.clone(), farthest_streamline_sample(&smooth, n, None)?))
}

fn max_turn_deg(s: &Streamline) -> f64 {
    s.points()
        .windows(3)
        .map(|w| {
            let a = w[1] - w[0];
            let b = w[2] - w[1];
            (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
        })
        .fold(0.0, f64::max)
}

fn min_interior_fa(field: &TensorField, s: &Streamline) -> f64 {
    let pts = s.points();
    pts[1..pts.len() - 1]
        .iter()
        .map(|p| fractional_anisotropy(&eigen(&field.interpolate(p)).0))
        .fold(1.0, f64::min)
}

// 5. Tractography on the axial box.
fn tractography() -> Check {
    let p = tensor_phantom(Geometry::Box { size_mm: [20, 10, 60] }, FiberModel::Axial, Layout::Single)?;
    let tp = TrackParams::default();
    let (raw, picked) = tracts(&p.field, &p.mask, 1, &tp)?;
    let r = measure(&p.mask, Region::Muscle, &picked)?;
    let turn = raw.iter().map(max_turn_deg).fold(0.0, f64::max);
    let fa = raw.iter().map(|s| min_interior_fa(&p.field, s)).fold(1.0, f64::min);
    let shortest = raw.iter().map(|s| s.length()).fold(f64::INFINITY, f64::min);

    let fit_src = make_tensor_phantom(&TensorPhantomSpec {
        geometry: Geometry::Box { size_mm: [5, 4, 6] },
        fiber: FiberModel::Pennate { theta_deg: 40.0 },
        layout: Layout::Single,
        margin: 1,
        eigenvalues: [1.7e-3, 5.0e-4, 3.0e-4],
        dwi: Some(DwiProtocol::default()),
    })?;
    let fit = fit_tensor(fit_src.dwi.as_ref().context("phantom without DWI")?)?;
    let fit_err = fit
        .tensors()
        .iter()
        .zip(fit_src.field.tensors())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);

    let pass = (r.fl_mm - 60.0).abs() <= 1.0
        && r.pa_deg.abs() <= 0.5
        && (r.pcsa_mm2 - 200.0).abs() <= 5.0
        && turn <= 20.0 + 1e-9
        && fa >= 0.1
        && shortest >= 10.0
        && fit_err <= 1e-9;
    Ok((
        pass,
        format!(
            "FL {:.3} mm (60 +- 1), PA {:.3} deg (0 +- 0.5), PCSA {:.2} mm2 (200 +- 5), {} tracks: max turn {turn:.2} deg, min FA {fa:.3}, min length {shortest:.1} mm; tensor fit error {fit_err:.1e}",
            r.fl_mm,
            r.pa_deg,
            r.pcsa_mm2,
            raw.len()
        ),
    ))
}

fn identity_error(r: &ArchitectureReport) -> f64 {
    rel(r.pcsa_mm2 * r.fl_mm, r.mv_mm3 * r.pa_deg.to_radians().cos())
}

// 6. PCSA identity and joint rigid invariance.
fn architecture_identity() -> Check {
    let mut worst = 0.0f64;
    let mut reports = Vec::new();
    for (geometry, fiber) in [
        (Geometry::Box { size_mm: [20, 10, 60] }, FiberModel::Axial),
        (Geometry::Box { size_mm: [9, 10, 115] }, FiberModel::Pennate { theta_deg: 5.0 }),
        (Geometry::Cylinder { radii_mm: [8.0, 5.0], length_mm: 30 }, FiberModel::Axial),
    ] {
        let p = tensor_phantom(geometry, fiber, Layout::Single)?;
        let tp = TrackParams {
            target_count: 500,
            candidate_count: 3000,
            ..TrackParams::default()
        };
        let (_, picked) = tracts(&p.field, &p.mask, 1, &tp)?;
        let r = measure(&p.mask, Region::Muscle, &picked)?;
        worst = worst.max(identity_error(&r));
        reports.push((p, picked, r));
    }

    // Cyclic axis permutation (x, y, z) -> (z, x, y) plus a shift: a proper
    // rotation that maps voxel centers onto voxel centers.
    let (p, tracks, before) = &reports[1];
    let g = *p.mask.grid();
    let shift = Vector3::new(7.0, -4.0, 11.0);
    let [nx, ny, nz] = g.dims;
    let o = g.origin;
    let rg = Grid3::new([nz, nx, ny], [g.spacing[2], g.spacing[0], g.spacing[1]], [
        o[2] + shift.x,
        o[0] + shift.y,
        o[1] + shift.z,
    ])?;
    let rmask = LabelVolume::from_fn(rg, |[a, b, c]| p.mask.get(b, c, a))?;
    let rot = |q: &Point3<f64>| Point3::new(q.z, q.x, q.y) + shift;
    let rtracks: Vec<Streamline> = tracks.iter().map(|s| s.map_points(rot)).collect();
    let after = measure(&rmask, Region::Muscle, &rtracks)?;
    let drift = [
        rel(after.fl_mm, before.fl_mm),
        rel(after.pa_deg, before.pa_deg),
        rel(after.mv_mm3, before.mv_mm3),
        rel(after.pcsa_mm2, before.pcsa_mm2),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    worst = worst.max(identity_error(&after));
    Ok((
        worst <= 1e-9 && drift <= 1e-6,
        format!("max |PCSA*FL - MV*cos(PA)| / MV*cos(PA) = {worst:.1e} (<= 1e-9), rigid drift {drift:.1e} (<= 1e-6)"),
    ))
}

// 7. Physiological ranges on the oblique phantom.
fn ranges() -> Check {
    let p = tensor_phantom(
        Geometry::Box { size_mm: [9, 10, 115] },
        FiberModel::Pennate { theta_deg: 5.0 },
        Layout::Single,
    )?;
    let (_, picked) = tracts(&p.field, &p.mask, 1, &TrackParams::default())?;
    let r = measure(&p.mask, Region::Muscle, &picked)?;
    let check = range_check(&r, &Ranges::default());
    let ratio = r.fl_ml.context("muscle report without FL/ML")?;
    Ok((
        check.pa && check.fl_ml == Some(true),
        format!(
            "PA {:.2} deg in [0, 10]: {}, FL/ML {ratio:.3} in [0.2, 0.6]: {} (designed 5 deg, {:.3})",
            r.pa_deg,
            check.pa,
            check.fl_ml == Some(true),
            p.truth[0].fl_mm / p.truth[0].ml_mm.unwrap_or(f64::NAN)
        ),
    ))
}

// 8. Compartments that truncate fibers shorten the median fiber.
fn subdivision() -> Check {
    let p = tensor_phantom(
        Geometry::Box { size_mm: [12, 12, 60] },
        FiberModel::Axial,
        Layout::SplitZ { lengths_mm: vec![25, 35] },
    )?;
    let tp = TrackParams {
        target_count: 1000,
        candidate_count: 5000,
        ..TrackParams::default()
    };
    let (_, whole) = tracts(&p.field, &p.mask.merged(), 1, &tp)?;
    let muscle = measure(&p.mask, Region::Muscle, &whole)?;
    let mut parts = Vec::new();
    for l in [1u16, 2] {
        let (_, t) = tracts(&p.field, &p.mask, l, &tp)?;
        parts.push(measure(&p.mask, Region::Compartment(l), &t)?.fl_mm);
    }
    Ok((
        parts.iter().all(|&f| f < muscle.fl_mm),
        format!(
            "compartment FL {:.2} / {:.2} mm < whole-muscle FL {:.2} mm",
            parts[0], parts[1], muscle.fl_mm
        ),
    ))
}

/// Weighted mean of electrode positions over the true amplitudes above
/// `threshold` of their maximum.
fn dense_center(positions: &[Point2<f64>], amplitudes: &[f64], threshold: f64) -> Point2<f64> {
    let peak = amplitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = Vector2::zeros();
    let mut w = 0.0;
    for (q, a) in positions.iter().zip(amplitudes) {
        let v = a / peak;
        if v > threshold {
            acc += q.coords * v;
            w += v;
        }
    }
    Point2::from(acc / w)
}

// 9. EMG validation loop on the subject phantom.
fn emg_loop() -> Check {
    let spec = SubjectSpec {
        frames: 4,
        seed: 21,
        ..SubjectSpec::default()
    };
    let s = make_subject(&spec)?;
    let params = EmgParams {
        min_duration_s: spec.emg_duration_s,
        trim_s: 0.5,
        ..EmgParams::default()
    };
    let thr = 0.8;
    let boundaries = project_boundaries(&s.truth_masks, &s.emg_grid)?;
    let positions = s.emg_grid.positions();
    let mut centers = Vec::new();
    let mut offset = 0.0f64;
    for (&finger, ph) in &s.emg {
        let c = activation_center(&preprocess(&ph.recordings, &params)?, thr)?;
        offset = offset.max((c - dense_center(&positions, &ph.amplitudes, thr)).norm());
        centers.push((finger, c));
    }
    let acc = containment_accuracy(&centers, &boundaries)?.accuracy;

    let control: Vec<_> = [1u16, 2]
        .iter()
        .map(|&f| {
            let ph = s.emg_negative_control(f)?;
            Ok((f, activation_center(&preprocess(&ph.recordings, &params)?, thr)?))
        })
        .collect::<Result<_>>()?;
    let control_acc = containment_accuracy(&control, &boundaries)?.accuracy;

    let square = Contour::new(
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(10.0, 10.0),
            Point2::new(0.0, 10.0),
        ],
        0.0,
        1,
    )?;
    let constructed: Vec<_> = (0..40)
        .map(|k| {
            let inside = k < 38;
            let x = if inside { 1.0 + 0.2 * k as f64 } else { 12.0 + k as f64 };
            (1u16, Point2::new(x, 5.0))
        })
        .collect();
    let c40 = containment_accuracy(&constructed, &[square])?.accuracy;
    Ok((
        acc == 1.0 && control_acc == 0.0 && offset <= 0.5 && c40 == 0.95,
        format!(
            "containment {acc} (1.0), negative control {control_acc} (0.0), center vs dense oracle {offset:.3} mm (<= 0.5), 38/40 -> {c40}"
        ),
    ))
}

fn pipeline_run(dir: &Path, workers: usize) -> Result<std::collections::BTreeMap<String, String>> {
    let spec = PhantomSpec::Subject(SubjectSpec {
        frames: 16,
        emg_duration_s: 2.0,
        seed: 8,
        ..SubjectSpec::default()
    });
    let manifest = write_phantom(&spec, dir)?;
    let opts = RunOptions {
        workers: Some(workers),
        force: Vec::new(),
    };
    Ok(run_pipeline(&manifest, &opts)?.report.artifacts)
}

// 10. Artifact checksums independent of the worker count.
fn determinism() -> Check {
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    let one = pipeline_run(a.path(), 1)?;
    let eight = pipeline_run(b.path(), 8)?;
    ensure!(!one.is_empty(), "no artifacts recorded");
    let differing = one.iter().filter(|(k, v)| eight.get(*k) != Some(v)).count() + eight.len().abs_diff(one.len());
    Ok((
        differing == 0,
        format!("{} artifacts, {differing} checksums differ between 1 and 8 workers", one.len()),
    ))
}

// 11. Volume fractions and grouped ratios.
fn fractions() -> Check {
    let split = tensor_phantom(
        Geometry::Box { size_mm: [10, 8, 20] },
        FiberModel::Axial,
        Layout::SplitX { widths_mm: vec![6, 4] },
    )?;
    let tp = TrackParams {
        target_count: 100,
        candidate_count: 1000,
        ..TrackParams::default()
    };
    let mut f = Vec::new();
    for l in [1u16, 2] {
        let (_, t) = tracts(&split.field, &split.mask, l, &tp)?;
        f.push(
            measure(&split.mask, Region::Compartment(l), &t)?
                .volume_fraction
                .context("compartment without fraction")?,
        );
    }
    let fingers = tensor_phantom(
        Geometry::Box { size_mm: [46, 6, 10] },
        FiberModel::Axial,
        Layout::SplitX { widths_mm: vec![10, 13, 13, 10] },
    )?;
    let ratio = volume_ratio(&fingers.mask, &[2, 3], &[1, 4])?;
    Ok((
        f[0] == 0.6 && f[1] == 0.4 && (ratio - 1.3).abs() <= 0.01,
        format!("fractions {:.3}/{:.3} (0.600/0.400), middle&ring : index&little = {ratio:.3} (1.30 +- 0.01)", f[0], f[1]),
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("region growing recovery", growing),
        ("registration energy optimality", matching),
        ("deformation recovery", deformation),
        ("lofting exactness", lofting),
        ("tractography fidelity", tractography),
        ("architecture identity", architecture_identity),
        ("physiological ranges", ranges),
        ("compartment subdivision", subdivision),
        ("EMG validation loop", emg_loop),
        ("determinism", determinism),
        ("volume fractions", fractions),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(anyhow::anyhow!("panicked: {msg}"))
        });
        let (pass, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1} s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
