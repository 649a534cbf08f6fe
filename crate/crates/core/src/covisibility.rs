//! Co-visible observation sets: where a sparse point shows up in the label
//! maps of the neighboring keyframes.

use crate::dataset::{ClassId, SequenceDataset, Side, SparsePoint, VOID};
use crate::error::{Error, Result};
use crate::geometry::{self, Pixel, Visibility};

/// Which label streams contribute observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Left images only; right projections are skipped entirely.
    Mono,
    /// Left images and their rectified right counterparts.
    Stereo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Position of the observing keyframe in the sequence.
    pub frame: usize,
    pub side: Side,
    pub pixel: Pixel,
    /// Inverse depth of the point in the observing camera.
    pub inv_depth_local: f64,
    pub label: ClassId,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoVisibleSet {
    pub observations: Vec<Observation>,
}

impl CoVisibleSet {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Fails when `mode` needs data the dataset does not carry.
pub fn check_mode(ds: &SequenceDataset, mode: Mode) -> Result<()> {
    if mode == Mode::Stereo && ds.is_mono_only() {
        return Err(Error::Config(
            "stereo mode needs right label maps (labels/right/) for every labeled keyframe".into(),
        ));
    }
    Ok(())
}

/// Collects the observations of the point stored at `ds.keyframes[host].points[index]`.
///
/// Frames within `window` positions of the host are visited in sequence order;
/// each contributes its left observation followed, in stereo mode, by the right
/// one. The host itself contributes its stored pixel and inverse depth.
/// Void-labeled observations are dropped.
pub fn covisible_set(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
    window: usize,
    mode: Mode,
    vis: &Visibility,
) -> Result<CoVisibleSet> {
    check_mode(ds, mode)?;
    Ok(collect(ds, host, point, window, mode, vis))
}

pub(crate) fn collect(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
    window: usize,
    mode: Mode,
    vis: &Visibility,
) -> CoVisibleSet {
    let cam = ds.intrinsics();
    let host_kf = &ds.keyframes[host];
    let first = host.saturating_sub(window);
    let last = (host + window).min(ds.keyframes.len() - 1);
    let camera_point = match geometry::unproject(point.pixel(), point.inv_depth, cam) {
        Ok(p) => p,
        Err(_) => return CoVisibleSet::default(),
    };

    let mut observations = Vec::new();
    for frame in first..=last {
        let kf = &ds.keyframes[frame];
        let projection = if frame == host {
            Some(geometry::Projection {
                pixel: point.pixel(),
                inv_depth: point.inv_depth,
            })
        } else {
            let local = geometry::transform(&host_kf.pose, &kf.pose, &camera_point);
            geometry::project(&local, cam, vis)
        };
        let Some(left) = projection else { continue };

        if let Some(label) = observed_label(kf.labels_left.as_ref(), left.pixel) {
            observations.push(Observation {
                frame,
                side: Side::Left,
                pixel: left.pixel,
                inv_depth_local: left.inv_depth,
                label,
            });
        }
        if mode == Mode::Stereo {
            let Some(right) = geometry::project_to_right(left.pixel, left.inv_depth, &ds.rig, vis)
            else {
                continue;
            };
            if let Some(label) = observed_label(kf.labels_right.as_ref(), right.pixel) {
                observations.push(Observation {
                    frame,
                    side: Side::Right,
                    pixel: right.pixel,
                    inv_depth_local: right.inv_depth,
                    label,
                });
            }
        }
    }
    CoVisibleSet { observations }
}

fn observed_label(map: Option<&crate::dataset::LabelMap>, pixel: Pixel) -> Option<ClassId> {
    map.and_then(|m| m.sample(pixel).ok())
        .filter(|&c| c != VOID)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassPalette, Keyframe, LabelMap};
    use crate::geometry::{CameraIntrinsics, KeyframePose, StereoRig};
    use nalgebra::Vector3;

    /// Static fronto-parallel scene, camera stepping 0.1 m along x per keyframe.
    fn sliding(n: usize, with_right: bool) -> SequenceDataset {
        let cam = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let rig = StereoRig::new(cam, 0.5).unwrap();
        let keyframes = (0..n)
            .map(|i| {
                let mut kf = Keyframe::new(
                    i as u32,
                    KeyframePose::from_translation(Vector3::new(0.1 * i as f64, 0.0, 0.0)),
                );
                kf.labels_left = Some(LabelMap::uniform(640, 480, 2));
                if with_right {
                    kf.labels_right = Some(LabelMap::uniform(640, 480, 2));
                }
                kf
            })
            .collect();
        SequenceDataset {
            rig,
            keyframes,
            palette: ClassPalette::generic(4).unwrap(),
        }
    }

    fn point(host: usize) -> SparsePoint {
        SparsePoint {
            host_kf: host as u32,
            u: 320.0,
            v: 240.0,
            inv_depth: 0.1,
        }
    }

    #[test]
    fn zero_window_is_host_only() {
        let ds = sliding(5, true);
        let set = covisible_set(&ds, 2, &point(2), 0, Mode::Mono, &Visibility::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.observations[0].frame, 2);
        assert_eq!(set.observations[0].side, Side::Left);
        assert_eq!(set.observations[0].label, 2);
    }

    #[test]
    fn full_window_counts() {
        let ds = sliding(20, true);
        let vis = Visibility::default();
        let stereo = covisible_set(&ds, 3, &point(3), 3, Mode::Stereo, &vis).unwrap();
        let lefts = stereo
            .observations
            .iter()
            .filter(|o| o.side == Side::Left)
            .count();
        assert_eq!(lefts, 4 + 3);
        let set = covisible_set(&ds, 10, &point(10), 3, Mode::Stereo, &vis).unwrap();
        assert_eq!(set.len(), 7 * 2);
        let mono = covisible_set(&ds, 10, &point(10), 3, Mode::Mono, &vis).unwrap();
        assert_eq!(mono.len(), 7);
        assert!(mono
            .observations
            .iter()
            .all(|o| set.observations.contains(o)));
    }

    #[test]
    fn window_clipped_at_sequence_start() {
        let ds = sliding(8, true);
        let set =
            covisible_set(&ds, 0, &point(0), 3, Mode::Stereo, &Visibility::default()).unwrap();
        // frames 0..=3, left and right each
        assert_eq!(set.len(), 8);
    }

    #[test]
    fn point_passed_by_the_camera_is_dropped() {
        let mut ds = sliding(3, false);
        // keyframe 2 sits 3 m ahead of a point at depth 2 m
        ds.keyframes[2].pose = KeyframePose::from_translation(Vector3::new(0.0, 0.0, 3.0));
        let p = SparsePoint {
            host_kf: 0,
            u: 320.0,
            v: 240.0,
            inv_depth: 0.5,
        };
        let set = covisible_set(&ds, 0, &p, 2, Mode::Mono, &Visibility::default()).unwrap();
        assert!(set.observations.iter().all(|o| o.frame != 2));
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn void_observations_dropped_and_stereo_refused_on_mono_data() {
        let mut ds = sliding(3, false);
        ds.keyframes[1].labels_left = Some(LabelMap::uniform(640, 480, VOID));
        let vis = Visibility::default();
        let set = covisible_set(&ds, 0, &point(0), 2, Mode::Mono, &vis).unwrap();
        assert!(set.observations.iter().all(|o| o.frame != 1));
        assert!(matches!(
            covisible_set(&ds, 0, &point(0), 2, Mode::Stereo, &vis),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn local_inverse_depth_matches_geometry() {
        let mut ds = sliding(6, true);
        for (i, kf) in ds.keyframes.iter_mut().enumerate() {
            kf.pose = KeyframePose::from_axis_angle(
                Vector3::new(0.2, 1.0, 0.1),
                0.02 * i as f64,
                Vector3::new(0.1 * i as f64, 0.02, 0.3 * i as f64),
            );
        }
        let p = SparsePoint {
            host_kf: 2,
            u: 301.5,
            v: 222.25,
            inv_depth: 0.08,
        };
        let set = covisible_set(&ds, 2, &p, 3, Mode::Stereo, &Visibility::default()).unwrap();
        let cam = ds.intrinsics();
        let x = geometry::unproject(p.pixel(), p.inv_depth, cam).unwrap();
        assert!(set.len() >= 10);
        for o in &set.observations {
            let local = geometry::transform(&ds.keyframes[2].pose, &ds.keyframes[o.frame].pose, &x);
            assert!((o.inv_depth_local - 1.0 / local.z).abs() <= 1e-9);
        }
    }
}
