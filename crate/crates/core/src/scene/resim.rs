use serde::{Deserialize, Serialize};

use super::{blend, exact, Pose, Scene, SceneError};
use crate::track::StateRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeedChange {
    /// Multiplies the recorded speed profile.
    Scale { speed_scale: f64 },
    /// Constant speed (m/s).
    Absolute { speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhatIfEdit {
    pub track_id: u32,
    pub edit_frame: u64,
    #[serde(flatten)]
    pub change: SpeedChange,
}

/// A track replayed under an edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resimulated {
    pub track_id: u32,
    pub records: Vec<StateRecord>,
    /// First frame at which the vehicle sits at the end of its path.
    pub stopped_from: Option<u64>,
}

/// Recorded positions as an arc-length parameterised polyline.
struct Path<'a> {
    records: &'a [StateRecord],
    s: Vec<f64>,
}

impl<'a> Path<'a> {
    fn new(records: &'a [StateRecord]) -> Self {
        let mut s = Vec::with_capacity(records.len());
        let mut acc = 0.0;
        for (k, r) in records.iter().enumerate() {
            if k > 0 {
                let p = &records[k - 1].position;
                acc += (0..3).map(|i| (r.position[i] - p[i]).powi(2)).sum::<f64>().sqrt();
            }
            s.push(acc);
        }
        Self { records, s }
    }

    fn total(&self) -> f64 {
        *self.s.last().unwrap_or(&0.0)
    }

    /// Arc length reached at time `t` on the recorded motion.
    fn at_time(&self, t: f64) -> f64 {
        let r = self.records;
        if t <= r[0].time {
            return 0.0;
        }
        let j = r.partition_point(|x| x.time < t);
        if j >= r.len() {
            return self.total();
        }
        if r[j].time == t {
            return self.s[j];
        }
        let f = (t - r[j - 1].time) / (r[j].time - r[j - 1].time);
        self.s[j - 1] + (self.s[j] - self.s[j - 1]) * f
    }

    /// Pose at arc length `s`, attributes blended along the segment.
    fn at_length(&self, s: f64) -> Pose {
        let j = self.s.partition_point(|&x| x < s);
        if j == 0 {
            return exact(&self.records[0]);
        }
        if j >= self.s.len() {
            return exact(&self.records[self.records.len() - 1]);
        }
        let f = (s - self.s[j - 1]) / (self.s[j] - self.s[j - 1]);
        if f >= 1.0 {
            return exact(&self.records[j]);
        }
        blend(&self.records[j - 1], &self.records[j], f)
    }
}

fn to_record(template: &StateRecord, frame: u64, time: f64, pose: &Pose, speed: f64) -> StateRecord {
    let mut r = StateRecord {
        frame,
        time,
        position: pose.position,
        velocity: [speed * pose.heading.cos(), speed * pose.heading.sin(), 0.0],
        speed,
        heading: pose.heading,
        dims: pose.dims,
        predicted: false,
        raw: None,
        ..template.clone()
    };
    r.corners = r.bbox().corners().map(|p| [p.x, p.y, p.z]);
    r
}

/// Replays one vehicle along its recorded path under `edit`. Records before
/// the edit frame are kept; afterwards the vehicle runs until the end of its
/// original lifespan or, if slower, until it reaches the path end or the
/// scene ends. A vehicle reaching the path end halts there.
pub fn resimulate(scene: &Scene, edit: &WhatIfEdit) -> Result<Resimulated, SceneError> {
    let records = scene.tracks.get(&edit.track_id).ok_or(SceneError::UnknownTrack(edit.track_id))?;
    let valid = match edit.change {
        SpeedChange::Scale { speed_scale } => speed_scale.is_finite() && speed_scale >= 0.0,
        SpeedChange::Absolute { speed } => speed.is_finite() && speed >= 0.0,
    };
    if !valid {
        return Err(SceneError::InvalidEdit("speed must be finite and non-negative".into()));
    }
    let (first, last) = (&records[0], &records[records.len() - 1]);
    if edit.edit_frame < first.frame || edit.edit_frame > last.frame {
        return Err(SceneError::FrameOutOfLifespan {
            track: edit.track_id,
            frame: edit.edit_frame,
        });
    }
    let path = Path::new(records);
    let time_of = |f: u64| -> f64 {
        match records.binary_search_by_key(&f, |r| r.frame) {
            Ok(k) => records[k].time,
            Err(_) => first.time + (f - first.frame) as f64 * scene.frame_dt,
        }
    };
    let te = time_of(edit.edit_frame);
    let se = path.at_time(te);
    let total = path.total();

    let mut out: Vec<StateRecord> = records.iter().filter(|r| r.frame < edit.edit_frame).cloned().collect();
    let mut stopped_from = None;
    let end_frame = scene.last_frame().max(last.frame);
    for f in edit.edit_frame..=end_frame {
        let t = if f <= last.frame {
            time_of(f)
        } else {
            last.time + (f - last.frame) as f64 * scene.frame_dt
        };
        let (s, speed_at) = match edit.change {
            SpeedChange::Scale { speed_scale } => {
                let tau = te + speed_scale * (t - te);
                let s = path.at_time(tau);
                (s, speed_scale * path.at_length(s).speed)
            }
            SpeedChange::Absolute { speed } => (se + speed * (t - te), speed),
        };
        if f > last.frame && stopped_from.is_some() {
            break;
        }
        let at_end = s >= total - 1e-9;
        let s = s.min(total);
        let pose = path.at_length(s);
        let speed = if at_end { 0.0 } else { speed_at };
        if at_end && stopped_from.is_none() {
            stopped_from = Some(f);
        }
        out.push(to_record(first, f, t, &pose, speed));
    }
    Ok(Resimulated {
        track_id: edit.track_id,
        records: out,
        stopped_from,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{record, scene};
    use super::*;

    fn distance_to_polyline(p: &[f64; 3], recs: &[StateRecord]) -> f64 {
        recs.windows(2)
            .map(|w| {
                let (a, b) = (w[0].position, w[1].position);
                let d: Vec<f64> = (0..3).map(|k| b[k] - a[k]).collect();
                let len2: f64 = d.iter().map(|x| x * x).sum();
                let f = if len2 == 0.0 {
                    0.0
                } else {
                    ((0..3).map(|k| (p[k] - a[k]) * d[k]).sum::<f64>() / len2).clamp(0.0, 1.0)
                };
                (0..3).map(|k| (a[k] + d[k] * f - p[k]).powi(2)).sum::<f64>().sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Curved, variable-speed track.
    fn curvy() -> super::super::Scene {
        let mut s = scene();
        let recs = (0..=40)
            .map(|f| {
                let t = f as f64 / 10.0;
                let mut r = record(3, f, 8.0 * t + 0.5 * t * t, 3.0 * (t * 0.8).sin(), 8.0 + t);
                r.heading = 0.3 * (t * 0.8).cos();
                r
            })
            .collect();
        s.tracks.insert(3, recs);
        s
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = curvy();
        let edit = WhatIfEdit {
            track_id: 3,
            edit_frame: 12,
            change: SpeedChange::Scale { speed_scale: 1.0 },
        };
        let r = resimulate(&s, &edit).unwrap();
        let orig = &s.tracks[&3];
        assert_eq!(r.records.len(), orig.len());
        for (a, b) in r.records.iter().zip(orig) {
            assert_eq!(a.frame, b.frame);
            for k in 0..3 {
                assert!((a.position[k] - b.position[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn double_speed_halves_remaining_time() {
        let s = scene();
        let edit = WhatIfEdit {
            track_id: 1,
            edit_frame: 4,
            change: SpeedChange::Scale { speed_scale: 2.0 },
        };
        let r = resimulate(&s, &edit).unwrap();
        // 16 frames remained; now 8
        assert_eq!(r.stopped_from, Some(12));
        let at = |f: u64| r.records.iter().find(|x| x.frame == f).unwrap();
        assert!((at(8).position[0] - 12.0).abs() < 1e-9);
        assert!((at(8).speed - 20.0).abs() < 1e-9);
        assert!((at(12).position[0] - 20.0).abs() < 1e-9);
        assert_eq!(at(14).speed, 0.0);
        assert_eq!(r.records.last().unwrap().frame, 20);
    }

    #[test]
    fn half_speed_runs_past_original_end_until_scene_end() {
        let mut s = scene();
        s.tracks.insert(9, (0..=40).map(|f| record(9, f, 50.0, 50.0, 0.0)).collect());
        let edit = WhatIfEdit {
            track_id: 1,
            edit_frame: 10,
            change: SpeedChange::Scale { speed_scale: 0.5 },
        };
        let r = resimulate(&s, &edit).unwrap();
        // 10 m left at 5 m/s: path end at frame 30
        assert_eq!(r.stopped_from, Some(30));
        assert_eq!(r.records.last().unwrap().frame, 30);
        assert!((r.records.last().unwrap().position[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn zero_speed_freezes() {
        let s = curvy();
        let edit = WhatIfEdit {
            track_id: 3,
            edit_frame: 20,
            change: SpeedChange::Absolute { speed: 0.0 },
        };
        let r = resimulate(&s, &edit).unwrap();
        let p = s.tracks[&3][20].position;
        for x in r.records.iter().filter(|x| x.frame >= 20) {
            assert!((0..3).all(|k| (x.position[k] - p[k]).abs() < 1e-9));
            assert_eq!(x.speed, 0.0);
        }
    }

    #[test]
    fn positions_stay_on_path() {
        let s = curvy();
        for change in [
            SpeedChange::Scale { speed_scale: 1.7 },
            SpeedChange::Scale { speed_scale: 0.3 },
            SpeedChange::Absolute { speed: 5.0 },
        ] {
            let r = resimulate(&s, &WhatIfEdit { track_id: 3, edit_frame: 5, change }).unwrap();
            for x in &r.records {
                assert!(distance_to_polyline(&x.position, &s.tracks[&3]) < 1e-6);
            }
        }
    }

    #[test]
    fn edit_errors() {
        let s = scene();
        let e = |track_id, edit_frame, change| resimulate(&s, &WhatIfEdit { track_id, edit_frame, change });
        let one = SpeedChange::Scale { speed_scale: 1.0 };
        assert!(matches!(e(8, 0, one), Err(SceneError::UnknownTrack(8))));
        assert!(matches!(e(2, 3, one), Err(SceneError::FrameOutOfLifespan { .. })));
        assert!(matches!(
            e(1, 3, SpeedChange::Absolute { speed: -1.0 }),
            Err(SceneError::InvalidEdit(_))
        ));
    }

    #[test]
    fn edit_json_shapes() {
        let e: WhatIfEdit = serde_json::from_str(r#"{"track_id":1,"edit_frame":4,"speed_scale":2.0}"#).unwrap();
        assert_eq!(e.change, SpeedChange::Scale { speed_scale: 2.0 });
        let e: WhatIfEdit = serde_json::from_str(r#"{"track_id":1,"edit_frame":4,"speed":3.5}"#).unwrap();
        assert_eq!(e.change, SpeedChange::Absolute { speed: 3.5 });
    }
}
