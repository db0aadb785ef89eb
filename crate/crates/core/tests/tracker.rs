use std::collections::{BTreeMap, BTreeSet};

use carom_core::geom::GeomConfig;
use carom_core::io::to_jsonl;
use carom_core::synth::{evaluate, generate, EvalConfig, Scenario, SpeedProfile, SynthOutput, VehicleSpec};
use carom_core::track::{DetectionRecord, StateRecord, TrackConfig, TrackStatus, Tracker};
use carom_core::{TypeDimensionPrior, VehicleType};

fn vehicle(ty: VehicleType, dims: [f64; 3], from: [f64; 2], to: [f64; 2], speed: f64, start: u64) -> VehicleSpec {
    VehicleSpec {
        vehicle_type: ty,
        dims,
        waypoints: vec![from, to],
        speed: SpeedProfile::Constant(speed),
        start_frame: start,
    }
}

fn scenario(frames: u64, vehicles: Vec<VehicleSpec>) -> Scenario {
    Scenario {
        frames,
        vehicles,
        ..Scenario::benchmark(3)
    }
}

fn tracker(s: &Scenario) -> Tracker {
    let cfg = TrackConfig {
        frame_dt: s.frame_dt(),
        ..TrackConfig::default()
    };
    Tracker::new(s.calibration().unwrap(), GeomConfig::default(), cfg, TypeDimensionPrior::builtin())
}

fn run(s: &Scenario, dets: &[DetectionRecord]) -> (Tracker, Vec<StateRecord>) {
    let mut t = tracker(s);
    let recs = t.run(dets).unwrap();
    (t, recs)
}

fn two_lanes() -> (Scenario, SynthOutput) {
    let s = scenario(
        240,
        vec![
            vehicle(VehicleType::Sedan, [4.7, 1.85, 1.45], [90.0, 20.0], [15.0, 20.0], 11.0, 0),
            vehicle(VehicleType::Van, [5.2, 2.0, 2.1], [20.0, 27.0], [95.0, 27.0], 9.0, 0),
        ],
    );
    let out = generate(&s).unwrap();
    (s, out)
}

fn track_ids(recs: &[StateRecord], ty: VehicleType) -> BTreeSet<u32> {
    recs.iter().filter(|r| r.vehicle_type == ty).map(|r| r.track_id).collect()
}

#[test]
fn benchmark_has_no_identity_switches() {
    let s = Scenario::benchmark(1);
    let out = generate(&s).unwrap();
    let (_, recs) = run(&s, &out.detections);
    let r = evaluate(&recs, &out.truth, &EvalConfig::default()).unwrap();
    assert_eq!((r.mme, r.ide), (0, 0));
    assert_eq!(r.mt, s.vehicles.len());
    let ids: BTreeSet<u32> = recs.iter().map(|r| r.track_id).collect();
    assert_eq!(ids.len(), s.vehicles.len());
}

#[test]
fn reacquired_after_three_missed_frames() {
    let (s, out) = two_lanes();
    let gap = 100..103u64;
    let dets: Vec<DetectionRecord> = out
        .detections
        .iter()
        .filter(|d| !(d.vehicle_type == VehicleType::Sedan && gap.contains(&d.frame)))
        .cloned()
        .collect();
    let (_, recs) = run(&s, &dets);
    let ids = track_ids(&recs, VehicleType::Sedan);
    assert_eq!(ids.len(), 1, "sedan split into tracks {ids:?}");
    let sedan: BTreeMap<u64, &StateRecord> = recs
        .iter()
        .filter(|r| r.vehicle_type == VehicleType::Sedan)
        .map(|r| (r.frame, r))
        .collect();
    for f in gap.clone() {
        assert!(sedan[&f].predicted, "frame {f} should be predicted");
    }
    assert!(!sedan[&103].predicted);
    assert_eq!(track_ids(&recs, VehicleType::Van).len(), 1);
}

#[test]
fn thirty_one_misses_close_the_track() {
    let (s, out) = two_lanes();
    let last_seen = 80u64;
    let dets: Vec<DetectionRecord> = out
        .detections
        .iter()
        .filter(|d| !(d.vehicle_type == VehicleType::Sedan && d.frame > last_seen))
        .cloned()
        .collect();
    let (t, recs) = run(&s, &dets);
    let sedan: Vec<&StateRecord> = recs.iter().filter(|r| r.vehicle_type == VehicleType::Sedan).collect();
    let coast: Vec<u64> = sedan.iter().filter(|r| r.frame > last_seen).map(|r| r.frame).collect();
    let max_coast = TrackConfig::default().max_coast as u64;
    assert_eq!(coast, (last_seen + 1..=last_seen + max_coast).collect::<Vec<_>>());
    assert!(sedan.iter().filter(|r| r.frame > last_seen).all(|r| r.predicted));
    let id = sedan[0].track_id;
    assert_eq!(t.track(id).unwrap().status, TrackStatus::Closed);
}

#[test]
fn planar_map_keeps_records_on_the_ground() {
    let (s, out) = two_lanes();
    let (_, recs) = run(&s, &out.detections);
    assert!(!recs.is_empty());
    for r in &recs {
        assert_eq!(r.position[2], 0.0);
        assert_eq!(r.velocity[2], 0.0);
    }
}

#[test]
fn same_input_same_bytes() {
    let mut s = Scenario::benchmark(5);
    s.frames = 300;
    s.noise.mask_noise_px = 1.5;
    s.noise.flow_jitter_px = 0.5;
    s.noise.wheel_outliers = 5;
    let out = generate(&s).unwrap();
    let bytes = || {
        let (_, recs) = run(&s, &out.detections);
        let mut buf = Vec::new();
        to_jsonl(&mut buf, &recs).unwrap();
        buf
    };
    assert_eq!(bytes(), bytes());
}

#[test]
fn ten_metres_per_second_recovered() {
    let s = scenario(
        240,
        vec![vehicle(VehicleType::Sedan, [4.7, 1.85, 1.45], [100.0, 22.0], [15.0, 22.0], 10.0, 0)],
    );
    let out = generate(&s).unwrap();
    let (_, recs) = run(&s, &out.detections);
    let first = recs.iter().map(|r| r.frame).min().unwrap();
    let settled: Vec<&StateRecord> = recs.iter().filter(|r| r.frame >= first + 30 && !r.predicted).collect();
    assert!(settled.len() > 100);
    for r in settled {
        assert!((r.speed - 10.0).abs() < 0.2, "frame {} speed {}", r.frame, r.speed);
    }
}
