//! Evaluation of the windowed direct-VO photometric energy for given poses and
//! inverse depths. Nothing here optimizes; the energy is a check on ingested or
//! synthesized data.

use rayon::prelude::*;

use crate::dataset::{IntensityImage, SequenceDataset, Side, SparsePoint};
use crate::error::{Error, Result};
use crate::geometry::{self, Pixel, Visibility};

/// Pixel offsets sampled around every point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPattern {
    offsets: Vec<(f64, f64)>,
}

impl ResidualPattern {
    pub fn new(offsets: Vec<(f64, f64)>) -> Result<Self> {
        if !offsets.contains(&(0.0, 0.0)) {
            return Err(Error::Domain("residual pattern must contain (0, 0)".into()));
        }
        Ok(Self { offsets })
    }

    /// The eight-pixel spread pattern used by direct sparse odometry.
    pub fn spread8() -> Self {
        Self {
            offsets: vec![
                (0.0, -2.0),
                (-1.0, -1.0),
                (1.0, -1.0),
                (-2.0, 0.0),
                (0.0, 0.0),
                (2.0, 0.0),
                (-1.0, 1.0),
                (0.0, 2.0),
            ],
        }
    }

    pub fn single() -> Self {
        Self {
            offsets: vec![(0.0, 0.0)],
        }
    }

    pub fn offsets(&self) -> &[(f64, f64)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

impl Default for ResidualPattern {
    fn default() -> Self {
        Self::spread8()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricConfig {
    /// Weight of the stereo term.
    pub lambda: f64,
    /// Huber threshold in intensity units; 0 uses plain squared residuals.
    pub huber_delta: f64,
    pub pattern: ResidualPattern,
    pub visibility: Visibility,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            huber_delta: 0.0,
            pattern: ResidualPattern::default(),
            visibility: Visibility::default(),
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("huber_delta", self.huber_delta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Robust cost of a single residual.
    pub fn cost(&self, r: f64) -> f64 {
        let a = r.abs();
        if self.huber_delta > 0.0 && a > self.huber_delta {
            2.0 * self.huber_delta * a - self.huber_delta * self.huber_delta
        } else {
            r * r
        }
    }
}

fn image(ds: &SequenceDataset, frame: usize, side: Side) -> Result<&IntensityImage> {
    let kf = &ds.keyframes[frame];
    kf.image(side).ok_or_else(|| {
        Error::Config(format!(
            "keyframe {} has no {} grayscale image",
            kf.id,
            side.dir_name()
        ))
    })
}

fn host_samples(
    img: &IntensityImage,
    point: &SparsePoint,
    cfg: &PhotometricConfig,
) -> Option<Vec<(Pixel, f64)>> {
    cfg.pattern
        .offsets()
        .iter()
        .map(|&(du, dv)| {
            let px = Pixel::new(point.u + du, point.v + dv);
            img.bilinear(px).map(|i| (px, i))
        })
        .collect()
}

fn residual_energy(
    samples: &[(Pixel, f64)],
    target: &IntensityImage,
    cfg: &PhotometricConfig,
    mut warp: impl FnMut(Pixel) -> Option<Pixel>,
) -> Option<f64> {
    let mut energy = 0.0;
    for &(px, host_intensity) in samples {
        let q = warp(px)?;
        let i = target.bilinear(q)?;
        energy += cfg.cost(i - host_intensity);
    }
    Some(energy)
}

/// Temporal term of one point against the left image of `target`.
/// `Ok(None)` means the point (any pattern pixel) is not visible there.
pub fn point_energy_temporal(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
    target: usize,
    cfg: &PhotometricConfig,
) -> Result<Option<f64>> {
    let host_img = image(ds, host, Side::Left)?;
    let target_img = image(ds, target, Side::Left)?;
    let Some(samples) = host_samples(host_img, point, cfg) else {
        return Ok(None);
    };
    let cam = ds.intrinsics();
    let host_pose = &ds.keyframes[host].pose;
    let target_pose = &ds.keyframes[target].pose;
    // Same viewpoint: the warp is the identity, evaluated without round-off.
    let same_view = host == target || host_pose == target_pose;
    Ok(residual_energy(&samples, target_img, cfg, |px| {
        if same_view {
            let in_front = 1.0 / point.inv_depth > cfg.visibility.z_min;
            return (in_front && cam.contains(px, cfg.visibility.margin)).then_some(px);
        }
        let x = geometry::unproject(px, point.inv_depth, cam).ok()?;
        let local = geometry::transform(host_pose, target_pose, &x);
        geometry::project(&local, cam, &cfg.visibility).map(|p| p.pixel)
    }))
}

/// Stereo term of one point against the right image of its host.
pub fn point_energy_stereo(
    ds: &SequenceDataset,
    host: usize,
    point: &SparsePoint,
    cfg: &PhotometricConfig,
) -> Result<Option<f64>> {
    let host_img = image(ds, host, Side::Left)?;
    let right_img = image(ds, host, Side::Right)?;
    let Some(samples) = host_samples(host_img, point, cfg) else {
        return Ok(None);
    };
    Ok(residual_energy(&samples, right_img, cfg, |px| {
        geometry::project_to_right(px, point.inv_depth, &ds.rig, &cfg.visibility).map(|p| p.pixel)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEnergy {
    pub keyframe_id: u32,
    pub temporal: f64,
    /// Stereo term, already multiplied by lambda.
    pub stereo: f64,
}

impl FrameEnergy {
    pub fn total(&self) -> f64 {
        self.temporal + self.stereo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub total: f64,
    /// Contributions grouped by host keyframe.
    pub frames: Vec<FrameEnergy>,
    /// Number of individual pattern residuals that entered the sum.
    pub residuals: usize,
}

/// Windowed energy over the keyframe positions in `frames`. Every point hosted
/// in the window is compared with every other window frame's left image and,
/// weighted by lambda, with its own right image. Invisible terms add nothing.
///
/// Points are evaluated in parallel and reduced sequentially in storage order,
/// so totals are bit-stable.
pub fn window_energy(
    ds: &SequenceDataset,
    frames: &[usize],
    cfg: &PhotometricConfig,
) -> Result<EnergyReport> {
    cfg.validate()?;
    let use_stereo = cfg.lambda > 0.0;
    for &f in frames {
        if f >= ds.keyframes.len() {
            return Err(Error::Config(format!("keyframe position {f} out of range")));
        }
        image(ds, f, Side::Left)?;
        if use_stereo {
            image(ds, f, Side::Right)?;
        }
    }
    let pattern_len = cfg.pattern.len();

    let mut out = EnergyReport {
        total: 0.0,
        frames: Vec::with_capacity(frames.len()),
        residuals: 0,
    };
    for &host in frames {
        let per_point: Vec<(f64, f64, usize)> = ds.keyframes[host]
            .points
            .par_iter()
            .map(|p| -> Result<(f64, f64, usize)> {
                let mut temporal = 0.0;
                let mut count = 0;
                for &target in frames.iter().filter(|&&t| t != host) {
                    if let Some(e) = point_energy_temporal(ds, host, p, target, cfg)? {
                        temporal += e;
                        count += pattern_len;
                    }
                }
                let mut stereo = 0.0;
                if use_stereo {
                    if let Some(e) = point_energy_stereo(ds, host, p, cfg)? {
                        stereo = cfg.lambda * e;
                        count += pattern_len;
                    }
                }
                Ok((temporal, stereo, count))
            })
            .collect::<Result<_>>()?;
        let mut frame = FrameEnergy {
            keyframe_id: ds.keyframes[host].id,
            temporal: 0.0,
            stereo: 0.0,
        };
        for (t, s, n) in per_point {
            frame.temporal += t;
            frame.stereo += s;
            out.total += t + s;
            out.residuals += n;
        }
        out.frames.push(frame);
    }
    Ok(out)
}
