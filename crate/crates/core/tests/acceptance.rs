//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p carom-core --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use carom_core::calib::{estimate_projection, CameraModel, GroundTransform, Intrinsics, MapFrame, MapKind, PointCorrespondence};
use carom_core::geom::{
    box3d_from_mask, convex_hull, heading_from_vp, orthogonal_vps, ransac_heading_vp, Box3D, BoxConfig, FlowVector,
    GeomConfig, RansacConfig, Rect,
};
use carom_core::io::to_jsonl;
use carom_core::scene::{resimulate, Scene, SpeedChange, WhatIfEdit};
use carom_core::shape::{
    build_prior, carve, fit_shape, reconstruct_shapes, synthetic_models, template_for, CameraStream, ShapeConfig,
    ShapePrior, View, VoxelGrid,
};
use carom_core::synth::{
    evaluate, generate, truth_as_records, EvalConfig, MetricsReport, Scenario, SpeedProfile, TruthRecord, VehicleSpec,
};
use carom_core::track::{aggregate_speed, angle_diff, StateRecord, TrackConfig, Tracker, VelocityConfig};
use carom_core::{TypeDimensionPrior, VehicleType};
use nalgebra::{DVector, Point2, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run_pipeline(s: &Scenario) -> (Vec<StateRecord>, Vec<TruthRecord>, MetricsReport, carom_core::synth::SynthOutput) {
    let out = generate(s).unwrap();
    let mut tracker = Tracker::new(
        s.calibration().unwrap(),
        GeomConfig::default(),
        TrackConfig {
            frame_dt: s.frame_dt(),
            ..TrackConfig::default()
        },
        TypeDimensionPrior::builtin(),
    );
    let recs = tracker.run(&out.detections).unwrap();
    let report = evaluate(&recs, &out.truth, &EvalConfig::default()).unwrap();
    (recs, out.truth.clone(), report, out)
}

fn bin(r: &MetricsReport, max_range: f64) -> f64 {
    r.bins
        .iter()
        .find(|b| b.max_range == max_range)
        .and_then(|b| b.l_diff)
        .unwrap_or(f64::INFINITY)
}

fn noiseless_benchmark() -> Outcome {
    let t0 = Instant::now();
    let (_, _, r, _) = run_pipeline(&Scenario::benchmark(1));
    let secs = t0.elapsed().as_secs_f64();
    let (l50, l120, v) = (bin(&r, 50.0), bin(&r, 120.0), r.v_diff.unwrap_or(f64::INFINITY));
    outcome(
        l50 < 0.3 && l120 < 0.8 && v < 0.3 && secs < 60.0,
        format!(
            "L-Diff<=50m {l50:.3} m (<0.3), <=120m {l120:.3} m (<0.8), V-Diff {v:.3} m/s (<0.3), runtime {secs:.1} s (<60), MOTA {:.3}",
            r.mota
        ),
    )
}

fn noisy_benchmark() -> Outcome {
    let mut s = Scenario::benchmark(1);
    s.noise.mask_noise_px = 2.0;
    s.noise.flow_jitter_px = 0.5;
    let (_, _, r, _) = run_pipeline(&s);
    let l50 = bin(&r, 50.0);
    outcome(l50 < 1.0, format!("mask noise 2 px, flow jitter 0.5 px: L-Diff<=50m {l50:.3} m (<1.0)"))
}

fn calibration_dlt() -> Outcome {
    let k = Intrinsics::centered(1100.0, (1280, 720));
    let cam = CameraModel::look_from(&k, Point3::new(-3.0, 2.0, 12.0), 0.35, 0.22, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let world: Vec<Point3<f64>> = (0..40)
        .map(|_| {
            let r = rng.random_range(20.0..90.0);
            let a = 0.35 + rng.random_range(-0.45..0.45);
            Point3::new(-3.0 + r * f64::cos(a), 2.0 + r * f64::sin(a), rng.random_range(0.0..6.0))
        })
        .collect();
    let image: Vec<Point2<f64>> = world.iter().map(|p| cam.project(p).unwrap()).collect();
    let corr = |img: &[Point2<f64>]| -> Vec<PointCorrespondence<f64>> {
        world
            .iter()
            .zip(img)
            .map(|(w, i)| PointCorrespondence {
                image_point: *i,
                world_point: *w,
            })
            .collect()
    };
    let exact = estimate_projection(&corr(&image), (1280, 720)).unwrap();
    let rms0 = exact.reprojection_rms(world.iter().zip(&image));

    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut sum = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noisy: Vec<Point2<f64>> = image
            .iter()
            .map(|p| p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let fit = estimate_projection(&corr(&noisy), (1280, 720)).unwrap();
        let rms = fit.reprojection_rms(world.iter().zip(&noisy));
        worst = worst.max(rms);
        sum += rms;
    }
    outcome(
        rms0 < 1e-6 && worst < 2.0,
        format!(
            "noiseless RMS {rms0:.2e} px (<1e-6); 1 px noise over 100 seeds: mean {:.3} px, max {worst:.3} px (<2)",
            sum / 100.0
        ),
    )
}

fn heading_ransac() -> Outcome {
    let cam = CameraModel::look_from(
        &Intrinsics::centered(1000.0, (1280, 720)),
        Point3::new(0.0, 0.0, 10.0),
        0.3,
        0.25,
        0.0,
    )
    .unwrap();
    let t = GroundTransform::from_camera(&cam).unwrap();
    let horizon = *cam.horizon().unwrap();
    let (inliers, outliers) = (30usize, 20usize);
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let heading: f64 = rng.random_range(0.0..TAU);
        let range: f64 = rng.random_range(25.0..60.0);
        let bearing: f64 = 0.3 + rng.random_range(-0.3..0.3);
        let base = Point3::new(range * bearing.cos(), range * bearing.sin(), 0.0);
        let d = Vector3::new(heading.cos(), heading.sin(), 0.0);
        let (c, s) = (heading.cos(), heading.sin());
        let mut flows: Vec<FlowVector<f64>> = (0..inliers)
            .map(|_| {
                let (u, v) = (rng.random_range(-2.2..2.2), rng.random_range(-0.9..0.9));
                let p = base + Vector3::new(c * u - s * v, s * u + c * v, rng.random_range(0.2..1.4));
                FlowVector::new(cam.project(&p).unwrap(), cam.project(&(p + d * 0.5)).unwrap())
            })
            .collect();
        let center = cam.project(&(base + Vector3::new(0.0, 0.0, 0.7))).unwrap();
        let typical = flows.iter().map(|f| f.length()).sum::<f64>() / inliers as f64;
        for _ in 0..outliers {
            let p = center + Vector2::new(rng.random_range(-40.0..40.0), rng.random_range(-25.0..25.0));
            let a = rng.random_range(0.0..TAU);
            let len = typical * rng.random_range(0.5..1.5);
            flows.push(FlowVector::new(p, p + Vector2::new(a.cos(), a.sin()) * len));
        }
        let cfg = RansacConfig {
            seed: trial,
            ..RansacConfig::default()
        };
        let err = ransac_heading_vp(&flows, &horizon, &cfg)
            .ok()
            .and_then(|vp| heading_from_vp(&center, &vp, &t).ok())
            .map_or(PI, |h| angle_diff(h, heading).abs());
        worst = worst.max(err);
        if err.to_degrees() <= 1.0 {
            good += 1;
        }
    }
    let frac = good as f64 / 200.0;
    outcome(
        frac >= 0.95,
        format!("40% outliers: {good}/200 trials within 1 deg ({:.1}%, need 95%)", frac * 100.0),
    )
}

fn tangent_box() -> Outcome {
    let cam = CameraModel::look_from(
        &Intrinsics::centered(1000.0, (1280, 720)),
        Point3::new(0.0, 0.0, 10.0),
        0.2,
        0.22,
        0.0,
    )
    .unwrap();
    let t = GroundTransform::from_camera(&cam).unwrap();
    let truth = Box3D::upright(Point3::new(39.0, 9.0, 0.0), 0.9, Vector3::new(4.7, 1.85, 1.45));
    let range = truth.center_bottom.coords.xy().norm();
    let pts: Vec<Point2<f64>> = truth.corners().iter().map(|p| cam.project(p).unwrap()).collect();
    let contour = convex_hull(&pts);
    let loc = Rect::bounding(&contour).unwrap().center();
    let vps = orthogonal_vps(&loc, truth.heading, &t, &cam).unwrap();
    let dims_range = TypeDimensionPrior::builtin().range(VehicleType::Sedan);
    let est = box3d_from_mask(&contour, &vps, &t, &cam, &dims_range, &BoxConfig::default()).unwrap();
    let rel: Vec<f64> = (0..3)
        .map(|i| (est.bbox.dims[i] - truth.dims[i]).abs() / truth.dims[i])
        .collect();
    let center = (est.bbox.center_bottom - truth.center_bottom).norm();
    outcome(
        !est.degenerate && rel.iter().all(|r| *r < 0.1) && center < 0.3,
        format!(
            "range {range:.1} m: dim errors {:.2e}/{:.2e}/{:.2e} (<10%), center {center:.2e} m (<0.3)",
            rel[0], rel[1], rel[2]
        ),
    )
}

fn velocity_window() -> Outcome {
    let dt = 1.0 / 30.0;
    let cfg = VelocityConfig::default();
    let mut exact = true;
    // fast: distance binds; slow: pair count binds
    for (speed, want) in [(20.0, 7usize), (15.0, 10), (10.0, 15), (5.0, 30), (1.0, 30)] {
        let d = speed * dt;
        let oracle = (1..=40usize)
            .take_while(|&n| n <= 30 && (n == 1 || n as f64 * d <= 5.0 + 1e-12))
            .last()
            .unwrap();
        let (v, n) = aggregate_speed(vec![d; 40], dt, &cfg).unwrap();
        exact &= n == want && n == oracle && (v - speed).abs() < 1e-9;
    }
    let s = Scenario {
        frames: 200,
        vehicles: vec![VehicleSpec {
            vehicle_type: VehicleType::Sedan,
            dims: [4.7, 1.85, 1.45],
            waypoints: vec![[100.0, 22.0], [10.0, 22.0]],
            speed: SpeedProfile::Constant(15.0),
            start_frame: 0,
        }],
        ..Scenario::benchmark(2)
    };
    let (recs, _, _, _) = run_pipeline(&s);
    let first = recs.iter().map(|r| r.frame).min().unwrap_or(0);
    let settled: Vec<f64> = recs
        .iter()
        .filter(|r| !r.predicted && r.frame >= first + 30)
        .map(|r| (r.speed - 15.0).abs() / 15.0)
        .collect();
    let worst = settled.iter().copied().fold(0.0, f64::max);
    outcome(
        exact && !settled.is_empty() && worst < 0.02,
        format!(
            "window rule exact: {exact}; 15 m/s after warm-up: worst {:.2}% over {} records (<2%)",
            worst * 100.0,
            settled.len()
        ),
    )
}

fn prior() -> ShapePrior<f64> {
    build_prior(synthetic_models(5, 84, 50, 50), 50, 50, 20).unwrap()
}

/// Gradient descent on `|h - (mean + S v)|^2 + lambda |v - t|^2`.
fn brute_force(p: &ShapePrior<f64>, h: &[f64], t: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let s = p.basis_matrix();
    let mut v = DVector::zeros(p.components);
    let step = 0.4 / (1.0 + lambda);
    for _ in 0..5000 {
        let r = DVector::from_vec(p.reconstruct(v.as_slice())) - DVector::from_column_slice(h);
        let g = s.transpose() * r * 2.0 + (&v - t) * (2.0 * lambda);
        v -= g * step;
    }
    v
}

fn shape() -> Outcome {
    let body = Box3D::upright(Point3::new(3.0, -2.0, 0.0), 0.3, Vector3::new(4.8, 1.8, 1.5));
    let pose = Box3D::upright(body.center_bottom, body.heading, Vector3::new(5.2, 2.0, 1.7));
    let views: Vec<View<f64>> = (0..4)
        .map(|q| {
            let a = 0.3 + q as f64 * FRAC_PI_2;
            let eye = pose.center_bottom + Vector3::new(a.cos() * 40.0, a.sin() * 40.0, 8.0);
            let k = Intrinsics::centered(1000.0, (1280, 720));
            let camera = CameraModel::look_from(&k, eye, a + PI, (8.0f64 / 40.0).atan(), 0.0).unwrap();
            let pts: Vec<Point2<f64>> = body.corners().iter().map(|p| camera.project(p).unwrap()).collect();
            View {
                mask: convex_hull(&pts),
                camera,
                pose,
            }
        })
        .collect();
    let grid = carve(&views, 0.1).unwrap();
    let mut truth = VoxelGrid::for_extent(&pose.dims, 0.1, false).unwrap();
    let [nx, ny, nz] = truth.dims();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let c = grid.center(i, j, k);
                truth.set(i, j, k, c.x.abs() < 2.4 && c.y.abs() < 0.9 && c.z < 1.5);
            }
        }
    }
    let iou = grid.iou(&truth);

    let p = prior();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h: Vec<f64> = (0..2500).map(|_| rng.random_range(0.0..2.0)).collect();
    let ty = VehicleType::Van;
    let t = p.template_coefficients(ty).unwrap();
    let mut fit_err: f64 = 0.0;
    for lambda in [0.0, 0.1] {
        let v = DVector::from_vec(fit_shape(&h, &p, ty, lambda).unwrap().coefficients);
        fit_err = fit_err.max((v - brute_force(&p, &h, &t, lambda)).amax());
    }
    let stiff = DVector::from_vec(fit_shape(&h, &p, ty, 1e9).unwrap().coefficients);
    let template = DVector::from_vec(template_for(ty, &p).unwrap().coefficients);
    let stiff_err = (stiff - template).amax();
    outcome(
        iou >= 0.9 && fit_err < 1e-6 && stiff_err < 1e-6,
        format!(
            "carving IoU {iou:.3} (>=0.9); fit vs minimizer {fit_err:.1e} (<1e-6); lambda 1e9 vs template {stiff_err:.1e} (<1e-6)"
        ),
    )
}

fn truth_record(frame: u64, id: u32) -> TruthRecord {
    TruthRecord {
        frame,
        time: frame as f64 / 10.0,
        vehicle_id: id,
        vehicle_type: VehicleType::Sedan,
        position: [frame as f64, 10.0 * id as f64, 0.0],
        velocity: [10.0, 0.0, 0.0],
        speed: 10.0,
        heading: 0.0,
        dims: [4.5, 1.8, 1.5],
        visibility: 1.0,
        occluded: 0.0,
        range: 30.0,
    }
}

fn clear_metrics() -> Outcome {
    let truth: Vec<TruthRecord> = (0..10).flat_map(|f| (1..=3).map(move |id| truth_record(f, id))).collect();
    let perfect = evaluate(&truth_as_records(&truth), &truth, &EvalConfig::default()).unwrap();

    // vehicle 1 tracked 0.5 m off; vehicle 2 changes track at frame 5;
    // vehicle 3 missed at frames 2 and 3; one stray hypothesis at frame 7
    let mut pred = Vec::new();
    for mut r in truth_as_records(&truth) {
        match r.track_id {
            1 => r.position[0] += 0.5,
            2 if r.frame >= 5 => r.track_id = 4,
            3 if r.frame == 2 || r.frame == 3 => continue,
            _ => {}
        }
        r.track_id += 100;
        pred.push(r);
    }
    let mut stray = pred[0].clone();
    stray.frame = 7;
    stray.track_id = 200;
    stray.position = [100.0, 100.0, 0.0];
    pred.push(stray);
    let r = evaluate(&pred, &truth, &EvalConfig::default()).unwrap();
    // by hand: 30 objects, FN 2, FP 1, MME 1; 28 matches, ten of them 0.5 m off;
    // vehicle 3 tracked 8/10 is not above 80%
    let counts = (r.objects, r.images, r.vehicles, r.fn_, r.fp, r.mme, r.ide, r.mt, r.ml, r.matches);
    let hand = (30, 10, 3, 2, 1, 1, 1, 2, 0, 28);
    let mota_ok = (r.mota - (1.0 - 4.0 / 30.0)).abs() < 1e-15 && (r.moda - 0.9).abs() < 1e-15;
    let l_ok = r.l_diff.is_some_and(|l| (l - 5.0 / 28.0).abs() < 1e-15) && r.v_diff == Some(0.0);
    let perfect_ok = perfect.mota == 1.0 && perfect.moda == 1.0;
    outcome(
        counts == hand && mota_ok && l_ok && perfect_ok,
        format!(
            "crafted case MOTA {:.4} (26/30), MODA {:.4} (27/30), FN/FP/MME {}/{}/{}, MT/ML {}/{}; perfect input MOTA {} MODA {}",
            r.mota, r.moda, r.fn_, r.fp, r.mme, r.mt, r.ml, perfect.mota, perfect.moda
        ),
    )
}

fn full_pipeline_bytes(seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let mut s = Scenario::benchmark(seed);
    s.frames = 400;
    s.noise.mask_noise_px = 1.0;
    s.noise.flow_jitter_px = 0.5;
    s.noise.wheel_outliers = 4;
    let (recs, _, report, out) = run_pipeline(&s);
    let cal = s.calibration().unwrap();
    let streams = [CameraStream {
        calibration: &cal,
        detections: &out.detections,
    }];
    let shapes = reconstruct_shapes(&recs, &streams, &prior(), &ShapeConfig::default()).unwrap();
    let mut tracks = Vec::new();
    to_jsonl(&mut tracks, &recs).unwrap();
    let shapes = serde_json::to_vec_pretty(&shapes).unwrap();
    let report = serde_json::to_vec_pretty(&report).unwrap();
    (tracks, shapes, report)
}

fn determinism() -> Outcome {
    let a = full_pipeline_bytes(9);
    let b = full_pipeline_bytes(9);
    outcome(
        a == b && !a.0.is_empty(),
        format!(
            "two runs, seed 9: tracks {} B {}, shapes {} B {}, report {} B {}",
            a.0.len(),
            if a.0 == b.0 { "identical" } else { "DIFFER" },
            a.1.len(),
            if a.1 == b.1 { "identical" } else { "DIFFER" },
            a.2.len(),
            if a.2 == b.2 { "identical" } else { "DIFFER" },
        ),
    )
}

fn resim_identity() -> Outcome {
    let s = Scenario::benchmark(1);
    let (recs, _, _, _) = run_pipeline(&s);
    let mut tracks: BTreeMap<u32, Vec<StateRecord>> = BTreeMap::new();
    for r in recs {
        tracks.entry(r.track_id).or_default().push(r);
    }
    let scene = Scene {
        map: MapFrame::new(MapKind::Planar2d, 1.0, [0.0; 3], 0.0).unwrap(),
        calibration: PathBuf::from("calibration.json"),
        backdrop: None,
        prior: None,
        frame_dt: s.frame_dt(),
        tracks,
        shapes: BTreeMap::new(),
    };
    let mut worst: f64 = 0.0;
    let mut samples = 0usize;
    let mut same_frames = true;
    for (id, recs) in &scene.tracks {
        for k in [0, recs.len() / 3, recs.len() - 1] {
            let edit = WhatIfEdit {
                track_id: *id,
                edit_frame: recs[k].frame,
                change: SpeedChange::Scale { speed_scale: 1.0 },
            };
            let out = resimulate(&scene, &edit).unwrap();
            same_frames &= out.records.iter().map(|r| r.frame).eq(recs.iter().map(|r| r.frame));
            for (a, b) in out.records.iter().zip(recs) {
                let d = (0..3).map(|i| (a.position[i] - b.position[i]).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(d);
                samples += 1;
            }
        }
    }
    outcome(
        same_frames && worst < 1e-9,
        format!("{samples} samples over {} tracks: max deviation {worst:.1e} m (<1e-9)", scene.tracks.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("noiseless localization", noiseless_benchmark),
        ("noise robustness", noisy_benchmark),
        ("calibration", calibration_dlt),
        ("heading RANSAC", heading_ransac),
        ("tangent-line box", tangent_box),
        ("velocity windowing", velocity_window),
        ("shape", shape),
        ("metrics harness", clear_metrics),
        ("determinism", determinism),
        ("re-simulation identity", resim_identity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
