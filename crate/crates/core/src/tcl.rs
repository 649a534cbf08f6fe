//! Temporally consistent labeling.
//!
//! Every observation of a point in the co-visible set votes for the class it
//! sees with a weight equal to its local inverse depth; observations closer
//! than `dist_min` carry no weight. The point takes the class with the largest
//! accumulated vote.

use rayon::prelude::*;

use crate::covisibility::{self, CoVisibleSet, Mode};
use crate::dataset::{ClassId, SequenceDataset, SparsePoint, VOID};
use crate::error::{Error, Result};
use crate::geometry::Visibility;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Host label if it is among the tied maxima, otherwise the lowest class id.
    #[default]
    HostThenLowest,
    LowestId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TclConfig {
    /// Minimum object distance in meters; 0 disables the cutoff.
    pub dist_min: f64,
    /// Keyframes considered on each side of the host.
    pub window: usize,
    pub mode: Mode,
    pub tie_break: TieBreak,
    pub visibility: Visibility,
}

impl Default for TclConfig {
    fn default() -> Self {
        Self {
            dist_min: 3.0,
            window: 7,
            mode: Mode::Stereo,
            tie_break: TieBreak::default(),
            visibility: Visibility::default(),
        }
    }
}

impl TclConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dist_min.is_finite() && self.dist_min >= 0.0) {
            return Err(Error::Config(format!(
                "dist_min must be finite and non-negative, got {}",
                self.dist_min
            )));
        }
        Ok(())
    }

    /// Exclusive upper bound on the inverse depth of a voting observation.
    pub fn inv_depth_cutoff(&self) -> f64 {
        if self.dist_min > 0.0 {
            1.0 / self.dist_min
        } else {
            f64::INFINITY
        }
    }
}

/// Accumulated vote mass per class, in 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteSet {
    pub weights: Vec<f64>,
}

impl VoteSet {
    pub fn zeros(class_count: usize) -> Self {
        Self {
            weights: vec![0.0; class_count],
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

pub fn accumulate_votes(set: &CoVisibleSet, class_count: usize, cfg: &TclConfig) -> VoteSet {
    let cutoff = cfg.inv_depth_cutoff();
    let mut votes = VoteSet::zeros(class_count);
    for obs in &set.observations {
        debug_assert!(
            (obs.label as usize) < class_count,
            "label {} >= C",
            obs.label
        );
        if obs.inv_depth_local < cutoff {
            if let Some(w) = votes.weights.get_mut(obs.label as usize) {
                *w += obs.inv_depth_local;
            }
        }
    }
    votes
}

/// Arg-max over the votes; `None` (unlabeled) when there is no evidence.
pub fn assign_label(
    votes: &VoteSet,
    host_label: Option<ClassId>,
    tie_break: TieBreak,
) -> Option<ClassId> {
    let max = votes.weights.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return None;
    }
    if tie_break == TieBreak::HostThenLowest {
        if let Some(h) = host_label {
            if votes.weights.get(h as usize) == Some(&max) {
                return Some(h);
            }
        }
    }
    votes
        .weights
        .iter()
        .position(|&w| w == max)
        .map(|c| c as ClassId)
}

/// Single-frame prediction at the point's host pixel.
pub fn baseline_label(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
) -> Result<Option<ClassId>> {
    let kf = &ds.keyframes[host];
    let map = kf
        .labels_left
        .as_ref()
        .ok_or_else(|| Error::Config(format!("keyframe {} has no left label map", kf.id)))?;
    let label = map.sample(point.pixel())?;
    Ok((label != VOID).then_some(label))
}

/// Labels for every point of a dataset, grouped by keyframe position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointLabels {
    pub per_keyframe: Vec<Vec<Option<ClassId>>>,
}

impl PointLabels {
    pub fn get(&self, keyframe: usize, point: usize) -> Option<ClassId> {
        self.per_keyframe[keyframe][point]
    }

    pub fn len(&self) -> usize {
        self.per_keyframe.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(keyframe position, point index, label)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Option<ClassId>)> + '_ {
        self.per_keyframe
            .iter()
            .enumerate()
            .flat_map(|(k, labels)| labels.iter().enumerate().map(move |(i, &l)| (k, i, l)))
    }

    fn from_flat(ds: &SequenceDataset, flat: Vec<Option<ClassId>>) -> Self {
        let mut it = flat.into_iter();
        let per_keyframe = ds
            .keyframes
            .iter()
            .map(|kf| it.by_ref().take(kf.points.len()).collect())
            .collect();
        Self { per_keyframe }
    }
}

fn point_refs(ds: &SequenceDataset) -> Vec<(usize, &SparsePoint)> {
    ds.keyframes
        .iter()
        .enumerate()
        .flat_map(|(k, kf)| kf.points.iter().map(move |p| (k, p)))
        .collect()
}

/// Full temporal labeling of one point.
pub fn label_point(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
    cfg: &TclConfig,
) -> Option<ClassId> {
    let set = covisibility::collect(ds, host, point, cfg.window, cfg.mode, &cfg.visibility);
    let votes = accumulate_votes(&set, ds.palette.class_count(), cfg);
    let host_label = ds.keyframes[host]
        .labels_left
        .as_ref()
        .and_then(|m| m.sample(point.pixel()).ok())
        .filter(|&c| c != VOID);
    assign_label(&votes, host_label, cfg.tie_break)
}

/// Labels every sparse point. Work is spread over the current rayon pool; the
/// result does not depend on the number of workers.
pub fn label_all_points(ds: &SequenceDataset, cfg: &TclConfig) -> Result<PointLabels> {
    cfg.validate()?;
    covisibility::check_mode(ds, cfg.mode)?;
    let refs = point_refs(ds);
    let flat = refs
        .par_iter()
        .map(|&(host, p)| label_point(ds, host, p, cfg))
        .collect();
    Ok(PointLabels::from_flat(ds, flat))
}

/// Host-pixel labels for every point.
pub fn baseline_all_points(ds: &SequenceDataset) -> Result<PointLabels> {
    let refs = point_refs(ds);
    let flat = refs
        .par_iter()
        .map(|&(host, p)| baseline_label(ds, host, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointLabels::from_flat(ds, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covisibility::Observation;
    use crate::dataset::Side;
    use crate::geometry::Pixel;
    use proptest::prelude::*;

    const CAR: ClassId = 3;
    const ROAD: ClassId = 0;

    fn obs(inv_depth: f64, label: ClassId) -> Observation {
        Observation {
            frame: 0,
            side: Side::Left,
            pixel: Pixel::new(0.0, 0.0),
            inv_depth_local: inv_depth,
            label,
        }
    }

    fn set(items: &[(f64, ClassId)]) -> CoVisibleSet {
        CoVisibleSet {
            observations: items.iter().map(|&(d, c)| obs(d, c)).collect(),
        }
    }

    #[test]
    fn depth_weighted_summation() {
        let cfg = TclConfig::default();
        let votes = accumulate_votes(&set(&[(0.10, CAR), (0.20, ROAD), (0.05, CAR)]), 5, &cfg);
        assert!((votes.weights[CAR as usize] - 0.15).abs() < 1e-15);
        assert_eq!(votes.weights[ROAD as usize], 0.20);
        assert_eq!(assign_label(&votes, None, cfg.tie_break), Some(ROAD));
    }

    #[test]
    fn close_observations_carry_no_weight() {
        let cfg = TclConfig::default();
        let votes = accumulate_votes(&set(&[(0.5, CAR)]), 5, &cfg);
        assert!(votes.is_empty());
        // exactly at dist_min is excluded as well
        let cfg = TclConfig {
            dist_min: 4.0,
            ..TclConfig::default()
        };
        assert!(accumulate_votes(&set(&[(0.25, CAR)]), 5, &cfg).is_empty());
        let cfg = TclConfig {
            dist_min: 0.0,
            ..TclConfig::default()
        };
        assert_eq!(
            accumulate_votes(&set(&[(5.0, CAR)]), 5, &cfg).weights[CAR as usize],
            5.0
        );
    }

    #[test]
    fn empty_set_is_unlabeled() {
        let votes = accumulate_votes(&CoVisibleSet::default(), 4, &TclConfig::default());
        assert_eq!(votes, VoteSet::zeros(4));
        assert_eq!(
            assign_label(&votes, Some(1), TieBreak::HostThenLowest),
            None
        );
    }

    #[test]
    fn ties() {
        let votes = VoteSet {
            weights: vec![0.2, 0.0, 0.0, 0.2],
        };
        assert_eq!(
            assign_label(&votes, Some(CAR), TieBreak::HostThenLowest),
            Some(CAR)
        );
        assert_eq!(
            assign_label(&votes, Some(1), TieBreak::HostThenLowest),
            Some(0)
        );
        assert_eq!(assign_label(&votes, Some(CAR), TieBreak::LowestId), Some(0));
    }

    #[test]
    fn single_class_always_wins() {
        let votes = accumulate_votes(&set(&[(0.1, 0), (0.02, 0)]), 1, &TclConfig::default());
        assert_eq!(assign_label(&votes, None, TieBreak::default()), Some(0));
    }

    fn arb_obs() -> impl Strategy<Value = Vec<(f64, ClassId)>> {
        prop::collection::vec((1e-3f64..2.0, 0u8..6), 0..40)
    }

    proptest! {
        #[test]
        fn scaling_keeps_labels(items in arb_obs(), scale in 1e-3f64..1e3, host in prop::option::of(0u8..6)) {
            let cfg = TclConfig { dist_min: 0.0, ..TclConfig::default() };
            let scaled: Vec<_> = items.iter().map(|&(d, c)| (d * scale, c)).collect();
            let a = assign_label(&accumulate_votes(&set(&items), 6, &cfg), host, cfg.tie_break);
            let b = assign_label(&accumulate_votes(&set(&scaled), 6, &cfg), host, cfg.tie_break);
            // exact ties can break under rounding; compare only when the winner is strict
            let votes = accumulate_votes(&set(&items), 6, &cfg);
            let mut sorted = votes.weights.clone();
            sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
            if sorted[0] > sorted[1] * (1.0 + 1e-9) || sorted[0] == 0.0 {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn evidence_is_monotone(items in arb_obs(), extra in (1e-3f64..2.0, 0u8..6)) {
            let cfg = TclConfig::default();
            let before = accumulate_votes(&set(&items), 6, &cfg);
            let mut more = items.clone();
            more.push(extra);
            let after = accumulate_votes(&set(&more), 6, &cfg);
            for c in 0..6 {
                if c == extra.1 as usize {
                    prop_assert!(after.weights[c] >= before.weights[c]);
                } else {
                    prop_assert_eq!(after.weights[c], before.weights[c]);
                }
            }
        }

        #[test]
        fn vote_mass_is_conserved(items in arb_obs()) {
            let cfg = TclConfig::default();
            let cutoff = cfg.inv_depth_cutoff();
            let votes = accumulate_votes(&set(&items), 6, &cfg);
            let accepted: Vec<_> = items.iter().filter(|(d, _)| *d < cutoff).collect();
            for c in 0..6u8 {
                let expected: f64 = accepted.iter().filter(|(_, l)| *l == c).map(|(d, _)| d).sum();
                prop_assert_eq!(votes.weights[c as usize], expected);
            }
            let total: f64 = accepted.iter().map(|(d, _)| d).sum();
            prop_assert!((votes.total() - total).abs() <= 1e-12 * (1.0 + total));
            prop_assert!(votes.weights.iter().all(|&w| w >= 0.0));
        }
    }
}
