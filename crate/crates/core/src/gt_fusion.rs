//! Per-point ground truth from labeled LiDAR scans and 2D ground-truth maps.
//!
//! LiDAR scans are associated keyframe by keyframe using the provided poses:
//! points are projected into the keyframe, matched to VO points in the image
//! plane, checked for depth agreement and finally kept only where the 3D label
//! agrees with the 2D ground truth at the host pixel.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::{ClassId, ClassPalette, LabelMap, SequenceDataset, SparsePoint, VOID};
use crate::error::{Error, Result};
use crate::geometry::{self, CameraIntrinsics, Pixel, Point3, Visibility};

pub use crate::dataset::{LidarPoint, LidarScan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// LiDAR points farther than this (camera z, meters) are ignored, and VO
    /// points beyond it are excluded as too far.
    pub max_range: f64,
    pub radius_px: f64,
    /// Accepted `|z_lidar - z_vo| / z_lidar`.
    pub depth_tol_rel: f64,
    pub margin: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            max_range: 100.0,
            radius_px: 2.0,
            depth_tol_rel: 0.1,
            margin: Visibility::default().margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarProjection {
    pub pixel: Pixel,
    pub depth: f64,
    pub label: ClassId,
    /// Index of the source point in its scan.
    pub index: usize,
}

/// Projects a scan given in the keyframe's camera frame; points behind the
/// camera, beyond `max_range` or outside the image are dropped.
pub fn project_lidar(
    scan: &LidarScan,
    cam: &CameraIntrinsics,
    max_range: f64,
    margin: f64,
) -> Vec<LidarProjection> {
    let vis = Visibility { z_min: 0.0, margin };
    scan.points
        .iter()
        .enumerate()
        .filter_map(|(index, lp)| {
            let [x, y, z] = lp.position.map(f64::from);
            if z > max_range {
                return None;
            }
            geometry::project(&Point3::new(x, y, z), cam, &vis).map(|p| LidarProjection {
                pixel: p.pixel,
                depth: z,
                label: lp.class,
                index,
            })
        })
        .collect()
}

/// Uniform grid over projected LiDAR points for radius queries.
#[derive(Debug, Clone)]
pub struct ProjectionIndex {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
    projections: Vec<LidarProjection>,
}

impl ProjectionIndex {
    pub fn new(projections: Vec<LidarProjection>, width: u32, height: u32, cell: f64) -> Self {
        let cell = cell.max(1.0);
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in projections.iter().enumerate() {
            let (c, r) = Self::cell_of(cell, cols, rows, p.pixel);
            buckets[r * cols + c].push(i);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
            projections,
        }
    }

    fn cell_of(cell: f64, cols: usize, rows: usize, px: Pixel) -> (usize, usize) {
        let c = (px.u / cell).floor().clamp(0.0, (cols - 1) as f64) as usize;
        let r = (px.v / cell).floor().clamp(0.0, (rows - 1) as f64) as usize;
        (c, r)
    }

    pub fn projections(&self) -> &[LidarProjection] {
        &self.projections
    }

    /// Closest projection within `radius`; equal distances go to the lower
    /// scan index.
    pub fn nearest(&self, px: Pixel, radius: f64) -> Option<&LidarProjection> {
        let reach = (radius / self.cell).ceil() as isize;
        let (c0, r0) = Self::cell_of(self.cell, self.cols, self.rows, px);
        let mut best: Option<(f64, &LidarProjection)> = None;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (c, r) = (c0 as isize + dc, r0 as isize + dr);
                if c < 0 || r < 0 || c >= self.cols as isize || r >= self.rows as isize {
                    continue;
                }
                for &i in &self.buckets[r as usize * self.cols + c as usize] {
                    let p = &self.projections[i];
                    let d2 = (p.pixel.u - px.u).powi(2) + (p.pixel.v - px.v).powi(2);
                    if d2 > radius * radius {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, bp)) => d2 < bd || (d2 == bd && p.index < bp.index),
                    };
                    if better {
                        best = Some((d2, p));
                    }
                }
            }
        }
        best.map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchOutcome {
    Matched { label: ClassId, depth: f64 },
    NoMatch,
    DepthReject,
}

/// Associates one VO point with its nearest projected LiDAR point.
pub fn match_2d(
    point: &SparsePoint,
    index: &ProjectionIndex,
    radius_px: f64,
    depth_tol_rel: f64,
) -> MatchOutcome {
    let Some(candidate) = index.nearest(point.pixel(), radius_px) else {
        return MatchOutcome::NoMatch;
    };
    let vo_depth = 1.0 / point.inv_depth;
    if (candidate.depth - vo_depth).abs() / candidate.depth > depth_tol_rel {
        return MatchOutcome::DepthReject;
    }
    MatchOutcome::Matched {
        label: candidate.label,
        depth: candidate.depth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExclusionReason {
    TooFar,
    NoMatch,
    DepthReject,
    Void,
    Inconsistent2d3d,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::TooFar,
        ExclusionReason::NoMatch,
        ExclusionReason::DepthReject,
        ExclusionReason::Void,
        ExclusionReason::Inconsistent2d3d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::TooFar => "too_far",
            ExclusionReason::NoMatch => "no_match",
            ExclusionReason::DepthReject => "depth_reject",
            ExclusionReason::Void => "void",
            ExclusionReason::Inconsistent2d3d => "inconsistent_2d3d",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExclusionReason {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown exclusion reason '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    Label(ClassId),
    Excluded(ExclusionReason),
}

impl GroundTruth {
    pub fn label(self) -> Option<ClassId> {
        match self {
            GroundTruth::Label(c) => Some(c),
            GroundTruth::Excluded(_) => None,
        }
    }
}

/// Combines a point's 3D match with the 2D ground-truth class at its host
/// pixel.
pub fn fuse_point(outcome: MatchOutcome, gt2d: ClassId, palette: &ClassPalette) -> GroundTruth {
    match outcome {
        MatchOutcome::NoMatch => GroundTruth::Excluded(ExclusionReason::NoMatch),
        MatchOutcome::DepthReject => GroundTruth::Excluded(ExclusionReason::DepthReject),
        MatchOutcome::Matched { label, .. } => {
            if !palette.is_evaluated(label) || !palette.is_evaluated(gt2d) {
                GroundTruth::Excluded(ExclusionReason::Void)
            } else if label != gt2d {
                GroundTruth::Excluded(ExclusionReason::Inconsistent2d3d)
            } else {
                GroundTruth::Label(label)
            }
        }
    }
}

/// Ground truth for every point, grouped like the dataset's keyframes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthAssignment {
    pub per_keyframe: Vec<Vec<GroundTruth>>,
}

impl GroundTruthAssignment {
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, GroundTruth)> + '_ {
        self.per_keyframe
            .iter()
            .enumerate()
            .flat_map(|(k, v)| v.iter().enumerate().map(move |(i, &g)| (k, i, g)))
    }

    pub fn len(&self) -> usize {
        self.per_keyframe.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.iter()
            .filter(|(_, _, g)| *g == GroundTruth::Excluded(reason))
            .count()
    }

    pub fn labeled(&self) -> usize {
        self.iter().filter(|(_, _, g)| g.label().is_some()).count()
    }
}

fn keyframe_ground_truth(
    points: &[SparsePoint],
    scan: &LidarScan,
    gt2d: &LabelMap,
    ds: &SequenceDataset,
    cfg: &FusionConfig,
) -> Result<Vec<GroundTruth>> {
    let cam = ds.intrinsics();
    let index = ProjectionIndex::new(
        project_lidar(scan, cam, cfg.max_range, cfg.margin),
        cam.width,
        cam.height,
        cfg.radius_px.max(1.0),
    );
    points
        .iter()
        .map(|p| {
            if 1.0 / p.inv_depth > cfg.max_range {
                return Ok(GroundTruth::Excluded(ExclusionReason::TooFar));
            }
            let outcome = match_2d(p, &index, cfg.radius_px, cfg.depth_tol_rel);
            let label_2d = if matches!(outcome, MatchOutcome::Matched { .. }) {
                gt2d.sample(p.pixel())?
            } else {
                VOID
            };
            Ok(fuse_point(outcome, label_2d, &ds.palette))
        })
        .collect()
}

/// Fuses LiDAR and 2D ground truth for the whole dataset, keyframes in parallel.
pub fn fuse(ds: &SequenceDataset, cfg: &FusionConfig) -> Result<GroundTruthAssignment> {
    let empty = LidarScan::default();
    let per_keyframe = ds
        .keyframes
        .par_iter()
        .map(|kf| {
            if kf.points.is_empty() {
                return Ok(Vec::new());
            }
            let gt2d = kf.gt2d.as_ref().ok_or_else(|| {
                Error::Config(format!("keyframe {} has points but no gt2d map", kf.id))
            })?;
            let scan = kf.lidar.as_ref().unwrap_or(&empty);
            keyframe_ground_truth(&kf.points, scan, gt2d, ds, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthAssignment { per_keyframe })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassInfo;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn lp(x: f32, y: f32, z: f32, class: ClassId) -> LidarPoint {
        LidarPoint {
            position: [x, y, z],
            class,
        }
    }

    fn palette() -> ClassPalette {
        let names = ["road", "building", "car", "vegetation", "sky"];
        ClassPalette::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| ClassInfo {
                    id: i as ClassId,
                    name: n.to_string(),
                    color: [0, 0, 0],
                    eval_included: *n != "sky",
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn lidar_projection_rules() {
        let scan = LidarScan {
            points: vec![
                lp(0.0, 0.0, 10.0, 0),
                lp(0.0, 0.0, 120.0, 1),
                lp(0.0, 0.0, -5.0, 2),
                lp(100.0, 0.0, 10.0, 2),
            ],
        };
        let out = project_lidar(&scan, &cam(), 100.0, 1.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pixel, Pixel::new(320.0, 240.0));
        assert_eq!(out[0].depth, 10.0);
        assert_eq!(out[0].label, 0);
        assert_eq!(project_lidar(&scan, &cam(), 150.0, 1.0).len(), 2);
    }

    fn index_of(points: Vec<(f64, f64, f64, ClassId)>) -> ProjectionIndex {
        let projections = points
            .into_iter()
            .enumerate()
            .map(|(index, (u, v, depth, label))| LidarProjection {
                pixel: Pixel::new(u, v),
                depth,
                label,
                index,
            })
            .collect();
        ProjectionIndex::new(projections, 640, 480, 2.0)
    }

    fn vo(u: f64, v: f64, depth: f64) -> SparsePoint {
        SparsePoint {
            host_kf: 0,
            u,
            v,
            inv_depth: 1.0 / depth,
        }
    }

    #[test]
    fn matching_cases() {
        let idx = index_of(vec![(100.0, 100.0, 20.0, 1), (201.5, 50.0, 20.0, 2)]);
        assert_eq!(
            match_2d(&vo(100.0, 100.0, 20.0), &idx, 2.0, 0.1),
            MatchOutcome::Matched {
                label: 1,
                depth: 20.0
            }
        );
        // 1.5 px away, |20 - 26| / 20 = 0.3
        assert_eq!(
            match_2d(&vo(200.0, 50.0, 26.0), &idx, 2.0, 0.1),
            MatchOutcome::DepthReject
        );
        assert_eq!(
            match_2d(&vo(300.0, 300.0, 20.0), &idx, 2.0, 0.1),
            MatchOutcome::NoMatch
        );
        assert_eq!(
            match_2d(&vo(200.0, 50.0, 20.0), &idx, 1.0, 0.1),
            MatchOutcome::NoMatch
        );
    }

    #[test]
    fn nearest_prefers_lower_index_on_ties() {
        let idx = index_of(vec![
            (11.0, 10.0, 5.0, 3),
            (9.0, 10.0, 5.0, 2),
            (10.0, 12.5, 5.0, 1),
        ]);
        assert_eq!(idx.nearest(Pixel::new(10.0, 10.0), 2.0).unwrap().index, 0);
        let idx = index_of(vec![(9.0, 10.0, 5.0, 2), (11.0, 10.0, 5.0, 3)]);
        assert_eq!(idx.nearest(Pixel::new(10.0, 10.0), 2.0).unwrap().label, 2);
    }

    #[test]
    fn nearest_agrees_with_linear_scan() {
        let mut pts = Vec::new();
        for i in 0..500u32 {
            let u = (i * 37 % 640) as f64 + 0.25 * (i % 4) as f64;
            let v = (i * 91 % 480) as f64 + 0.5 * (i % 2) as f64;
            pts.push((u, v, 10.0, (i % 4) as ClassId));
        }
        let idx = index_of(pts.clone());
        for q in 0..400u32 {
            let px = Pixel::new((q * 53 % 640) as f64 + 0.3, (q * 17 % 480) as f64 + 0.7);
            for radius in [1.0, 2.0, 5.0, 15.0] {
                let brute = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((p.0 - px.u).powi(2) + (p.1 - px.v).powi(2), i))
                    .filter(|(d, _)| *d <= radius * radius)
                    .min_by(|a, b| a.partial_cmp(b).unwrap())
                    .map(|(_, i)| i);
                assert_eq!(idx.nearest(px, radius).map(|p| p.index), brute);
            }
        }
    }

    #[test]
    fn fusion_rules() {
        let pal = palette();
        let m = |label| MatchOutcome::Matched { label, depth: 10.0 };
        assert_eq!(fuse_point(m(1), 1, &pal), GroundTruth::Label(1));
        assert_eq!(
            fuse_point(m(2), 3, &pal),
            GroundTruth::Excluded(ExclusionReason::Inconsistent2d3d)
        );
        assert_eq!(
            fuse_point(m(1), 4, &pal),
            GroundTruth::Excluded(ExclusionReason::Void)
        );
        assert_eq!(
            fuse_point(m(1), VOID, &pal),
            GroundTruth::Excluded(ExclusionReason::Void)
        );
        assert_eq!(
            fuse_point(m(VOID), 1, &pal),
            GroundTruth::Excluded(ExclusionReason::Void)
        );
        assert_eq!(
            fuse_point(MatchOutcome::NoMatch, 1, &pal),
            GroundTruth::Excluded(ExclusionReason::NoMatch)
        );
        assert_eq!(
            fuse_point(MatchOutcome::DepthReject, 1, &pal),
            GroundTruth::Excluded(ExclusionReason::DepthReject)
        );
    }

    #[test]
    fn reason_names_round_trip() {
        for r in ExclusionReason::ALL {
            assert_eq!(r.as_str().parse::<ExclusionReason>().unwrap(), r);
        }
        assert!("bogus".parse::<ExclusionReason>().is_err());
    }
}
