use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{hungarian, SynthError, TruthRecord};
use crate::track::StateRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ground distance gate for a match (m).
    pub gate_m: f64,
    /// Ground-truth objects less visible than this are ignored.
    pub min_visibility: f64,
    /// Tracked fraction above which a vehicle is mostly tracked.
    pub mostly_tracked: f64,
    /// Tracked fraction below which a vehicle is mostly lost.
    pub mostly_lost: f64,
    /// Hidden fraction that counts as a total occlusion.
    pub total_occlusion: f64,
    /// Upper edges of the range bins (m).
    pub range_bins: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gate_m: 2.0,
            min_visibility: 0.2,
            mostly_tracked: 0.8,
            mostly_lost: 0.2,
            total_occlusion: 0.8,
            range_bins: vec![50.0, 120.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceBin {
    pub max_range: f64,
    pub pairs: usize,
    pub l_diff: Option<f64>,
    pub v_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mota: f64,
    pub moda: f64,
    pub mme: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub objects: usize,
    pub images: usize,
    pub vehicles: usize,
    /// Vehicles with at least one identity switch.
    pub ide: usize,
    pub to: usize,
    pub po: usize,
    pub mt: usize,
    pub ml: usize,
    /// Matched object-frames.
    pub matches: usize,
    /// Mean location difference over matches (m).
    pub l_diff: Option<f64>,
    /// Mean speed difference over matches (m/s).
    pub v_diff: Option<f64>,
    pub bins: Vec<DistanceBin>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

impl MetricsReport {
    /// Plain-text tables: tracking counts, then location and speed.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>7} {:>7} {:>5} {:>5} {:>5} {:>8} {:>7} {:>9} {:>5} {:>4} {:>4} {:>4} {:>4}",
            "MOTA", "MODA", "MME", "FP", "FN", "#Objects", "#Images", "#Vehicles", "#IDE", "#TO", "#PO", "MT", "ML"
        );
        let _ = writeln!(
            s,
            "{:>6.1}% {:>6.1}% {:>5} {:>5} {:>5} {:>8} {:>7} {:>9} {:>5} {:>4} {:>4} {:>4} {:>4}",
            self.mota * 100.0,
            self.moda * 100.0,
            self.mme,
            self.fp,
            self.fn_,
            self.objects,
            self.images,
            self.vehicles,
            self.ide,
            self.to,
            self.po,
            self.mt,
            self.ml
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>10} {:>8} {:>10} {:>12}", "range (m)", "pairs", "L-Diff (m)", "V-Diff (m/s)");
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{:>10} {:>8} {:>10} {:>12}",
                format!("<= {}", b.max_range),
                b.pairs,
                fmt_opt(b.l_diff, 3),
                fmt_opt(b.v_diff, 3)
            );
        }
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:>10} {:>12}",
            "all",
            self.matches,
            fmt_opt(self.l_diff, 3),
            fmt_opt(self.v_diff, 3)
        );
        s
    }
}

fn ground_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// CLEAR-style scoring with a ground-plane distance gate.
///
/// Correspondences from the previous frame are kept while they stay within
/// the gate; the rest are assigned by minimum total distance. A ground-truth
/// object matched to a different track than last time is a mismatch.
/// Predictions near an object below `min_visibility` are neither matches nor
/// false positives.
pub fn evaluate(pred: &[StateRecord], truth: &[TruthRecord], cfg: &EvalConfig) -> Result<MetricsReport, SynthError> {
    let mut gt_by_frame: BTreeMap<u64, Vec<&TruthRecord>> = BTreeMap::new();
    for t in truth {
        gt_by_frame.entry(t.frame).or_default().push(t);
    }
    let mut pr_by_frame: BTreeMap<u64, Vec<&StateRecord>> = BTreeMap::new();
    for p in pred {
        pr_by_frame.entry(p.frame).or_default().push(p);
    }
    let range = match (gt_by_frame.keys().next(), gt_by_frame.keys().next_back()) {
        (Some(&a), Some(&b)) => Some((a, b)),
        _ => None,
    };
    if let Some(&f) = pr_by_frame.keys().find(|f| range.is_none_or(|(a, b)| **f < a || **f > b)) {
        return Err(SynthError::FrameMismatch { frame: f });
    }

    let mut last: BTreeMap<u32, u32> = BTreeMap::new();
    let (mut mme, mut fp, mut fn_, mut objects) = (0usize, 0usize, 0usize, 0usize);
    let mut ide: BTreeSet<u32> = BTreeSet::new();
    let mut lifetime: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut to: BTreeSet<u32> = BTreeSet::new();
    let mut po: BTreeSet<u32> = BTreeSet::new();
    let mut pairs: Vec<(f64, f64, f64)> = Vec::new();

    let empty = Vec::new();
    if let Some((first, last_frame)) = range {
        for frame in first..=last_frame {
            let gts = gt_by_frame.get(&frame).unwrap_or(&empty);
            let hyps = pr_by_frame.get(&frame).map(|v| v.as_slice()).unwrap_or(&[]);
            let counted: Vec<&TruthRecord> =
                gts.iter().copied().filter(|g| g.visibility >= cfg.min_visibility).collect();
            let ignored: Vec<&TruthRecord> =
                gts.iter().copied().filter(|g| g.visibility < cfg.min_visibility).collect();
            for g in gts.iter() {
                if g.occluded > cfg.total_occlusion {
                    to.insert(g.vehicle_id);
                }
            }
            for g in &counted {
                if g.occluded > 0.01 {
                    po.insert(g.vehicle_id);
                }
                lifetime.entry(g.vehicle_id).or_default().1 += 1;
            }
            objects += counted.len();

            let mut g_match: Vec<Option<usize>> = vec![None; counted.len()];
            let mut h_used = vec![false; hyps.len()];
            for (gi, g) in counted.iter().enumerate() {
                let Some(&tid) = last.get(&g.vehicle_id) else {
                    continue;
                };
                if let Some(hi) = hyps.iter().position(|h| h.track_id == tid) {
                    if !h_used[hi] && ground_dist(&g.position, &hyps[hi].position) <= cfg.gate_m {
                        g_match[gi] = Some(hi);
                        h_used[hi] = true;
                    }
                }
            }
            let free_g: Vec<usize> = (0..counted.len()).filter(|&i| g_match[i].is_none()).collect();
            let free_h: Vec<usize> = (0..hyps.len()).filter(|&i| !h_used[i]).collect();
            let big = cfg.gate_m * 1e3 + 1.0;
            let mut cost = Vec::with_capacity(free_g.len() * free_h.len());
            for &gi in &free_g {
                for &hi in &free_h {
                    let d = ground_dist(&counted[gi].position, &hyps[hi].position);
                    cost.push(if d <= cfg.gate_m { d } else { big });
                }
            }
            for (r, c) in hungarian(&cost, free_g.len(), free_h.len()).into_iter().enumerate() {
                if let Some(c) = c {
                    if cost[r * free_h.len() + c] <= cfg.gate_m {
                        g_match[free_g[r]] = Some(free_h[c]);
                        h_used[free_h[c]] = true;
                    }
                }
            }

            for (gi, g) in counted.iter().enumerate() {
                match g_match[gi] {
                    Some(hi) => {
                        let h = hyps[hi];
                        if let Some(prev) = last.insert(g.vehicle_id, h.track_id) {
                            if prev != h.track_id {
                                mme += 1;
                                ide.insert(g.vehicle_id);
                            }
                        }
                        lifetime.entry(g.vehicle_id).or_default().0 += 1;
                        let dl = ((g.position[0] - h.position[0]).powi(2)
                            + (g.position[1] - h.position[1]).powi(2)
                            + (g.position[2] - h.position[2]).powi(2))
                        .sqrt();
                        pairs.push((g.range, dl, (g.speed - h.speed).abs()));
                    }
                    None => fn_ += 1,
                }
            }
            for (hi, h) in hyps.iter().enumerate() {
                if h_used[hi] {
                    continue;
                }
                let near_ignored = ignored.iter().any(|g| ground_dist(&g.position, &h.position) <= cfg.gate_m);
                if !near_ignored {
                    fp += 1;
                }
            }
        }
    }

    let vehicles = lifetime.len();
    let mut mt = 0;
    let mut ml = 0;
    for (tracked, life) in lifetime.values() {
        let frac = *tracked as f64 / *life as f64;
        if frac > cfg.mostly_tracked {
            mt += 1;
        } else if frac < cfg.mostly_lost {
            ml += 1;
        }
    }
    let denom = objects.max(1) as f64;
    let bins = cfg
        .range_bins
        .iter()
        .map(|&r| {
            let sel: Vec<&(f64, f64, f64)> = pairs.iter().filter(|p| p.0 <= r).collect();
            DistanceBin {
                max_range: r,
                pairs: sel.len(),
                l_diff: mean(&sel.iter().map(|p| p.1).collect::<Vec<_>>()),
                v_diff: mean(&sel.iter().map(|p| p.2).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(MetricsReport {
        mota: 1.0 - (fn_ + fp + mme) as f64 / denom,
        moda: 1.0 - (fn_ + fp) as f64 / denom,
        mme,
        fp,
        fn_,
        objects,
        images: range.map_or(0, |(a, b)| (b - a + 1) as usize),
        vehicles,
        ide: ide.len(),
        to: to.len(),
        po: po.len(),
        mt,
        ml,
        matches: pairs.len(),
        l_diff: mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()),
        v_diff: mean(&pairs.iter().map(|p| p.2).collect::<Vec<_>>()),
        bins,
    })
}

/// Ground truth restated as tracker output, one track per vehicle.
pub fn truth_as_records(truth: &[TruthRecord]) -> Vec<StateRecord> {
    truth
        .iter()
        .map(|t| {
            let b = crate::geom::Box3D::upright(
                nalgebra::Point3::from(t.position),
                t.heading,
                nalgebra::Vector3::from(t.dims),
            );
            StateRecord {
                frame: t.frame,
                time: t.time,
                track_id: t.vehicle_id,
                position: t.position,
                velocity: t.velocity,
                speed: t.speed,
                heading: t.heading,
                dims: t.dims,
                corners: b.corners().map(|c| [c.x, c.y, c.z]),
                vehicle_type: t.vehicle_type,
                predicted: false,
                raw: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleType;

    pub(crate) fn gt(frame: u64, id: u32, x: f64) -> TruthRecord {
        TruthRecord {
            frame,
            time: frame as f64 / 30.0,
            vehicle_id: id,
            vehicle_type: VehicleType::Sedan,
            position: [x, 10.0 * id as f64, 0.0],
            velocity: [10.0, 0.0, 0.0],
            speed: 10.0,
            heading: 0.0,
            dims: [4.5, 1.8, 1.5],
            visibility: 1.0,
            occluded: 0.0,
            range: 30.0,
        }
    }

    #[test]
    fn perfect_output_scores_one() {
        let truth: Vec<_> = (0..10).flat_map(|f| (1..=3).map(move |id| gt(f, id, f as f64))).collect();
        let r = evaluate(&truth_as_records(&truth), &truth, &EvalConfig::default()).unwrap();
        assert_eq!((r.mota, r.moda), (1.0, 1.0));
        assert_eq!((r.fp, r.fn_, r.mme, r.objects, r.images, r.vehicles, r.mt, r.ml), (0, 0, 0, 30, 10, 3, 3, 0));
        assert_eq!((r.l_diff, r.v_diff), (Some(0.0), Some(0.0)));
    }

    #[test]
    fn seven_of_ten_is_neither_mt_nor_ml() {
        let truth: Vec<_> = (0..10).map(|f| gt(f, 1, 0.0)).collect();
        let pred: Vec<_> = truth_as_records(&truth).into_iter().filter(|r| r.frame < 7).collect();
        let r = evaluate(&pred, &truth, &EvalConfig::default()).unwrap();
        assert_eq!((r.mt, r.ml, r.fn_), (0, 0, 3));
    }

    #[test]
    fn prediction_outside_truth_frames() {
        let truth = vec![gt(0, 1, 0.0)];
        let mut pred = truth_as_records(&truth);
        pred[0].frame = 5;
        assert!(matches!(
            evaluate(&pred, &truth, &EvalConfig::default()),
            Err(SynthError::FrameMismatch { frame: 5 })
        ));
    }

    #[test]
    fn corrupting_k_matches_adds_k_false_negatives() {
        let truth: Vec<_> = (0..10).flat_map(|f| (1..=3).map(move |id| gt(f, id, f as f64))).collect();
        let base = evaluate(&truth_as_records(&truth), &truth, &EvalConfig::default()).unwrap();
        for k in [1usize, 4, 7] {
            let mut bad = truth.clone();
            for t in bad.iter_mut().filter(|t| t.vehicle_id == 2).take(k) {
                t.position[0] += 50.0;
            }
            let r = evaluate(&truth_as_records(&truth), &bad, &EvalConfig::default()).unwrap();
            assert_eq!(r.fn_, base.fn_ + k);
        }
    }

    #[test]
    fn low_visibility_objects_are_ignored() {
        let mut truth = vec![gt(0, 1, 0.0), gt(0, 2, 0.0)];
        truth[1].visibility = 0.1;
        let r = evaluate(&truth_as_records(&truth), &truth, &EvalConfig::default()).unwrap();
        assert_eq!((r.objects, r.fp, r.fn_), (1, 0, 0));
        let r = evaluate(&truth_as_records(&truth[..1]), &truth, &EvalConfig::default()).unwrap();
        assert_eq!((r.objects, r.fp, r.fn_), (1, 0, 0));
    }
}
