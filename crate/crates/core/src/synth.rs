//! Synthetic sequences with exact geometry and labels.
//!
//! Scenes are built from labeled axis-aligned planes and boxes. Rays through
//! pixel centers are intersected in closed form, so every inverse depth, label
//! map and LiDAR return is known exactly. Label maps can then be corrupted
//! with a seeded noise model to imitate segmentation errors.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    ClassId, ClassInfo, ClassPalette, IntensityImage, Keyframe, LabelMap, LidarPoint, LidarScan,
    SequenceDataset, SparsePoint, VOID,
};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, KeyframePose, Point3, StereoRig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

/// Intensity as a function of the world position of a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    Constant(f64),
    Ramp {
        base: f64,
        gradient: [f64; 3],
    },
    Checkerboard {
        low: f64,
        high: f64,
        size: f64,
    },
    /// `mean + amplitude * mean(sin(2 pi x_i / period_i))` over the three axes.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        periods: [f64; 3],
    },
}

impl Texture {
    pub fn intensity(&self, p: &Point3) -> f64 {
        match *self {
            Texture::Constant(v) => v,
            Texture::Ramp { base, gradient } => {
                base + gradient[0] * p.x + gradient[1] * p.y + gradient[2] * p.z
            }
            Texture::Checkerboard { low, high, size } => {
                let cell = (p.x / size).floor() + (p.y / size).floor() + (p.z / size).floor();
                if cell.rem_euclid(2.0) == 0.0 {
                    low
                } else {
                    high
                }
            }
            Texture::Sinusoid {
                mean,
                amplitude,
                periods,
            } => {
                let s: f64 = [p.x, p.y, p.z]
                    .iter()
                    .zip(periods)
                    .map(|(c, period)| (2.0 * PI * c / period).sin())
                    .sum();
                mean + amplitude * s / 3.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// `coord[axis] = offset`, limited to `bounds` on the two remaining axes
    /// taken in x, y, z order.
    Plane {
        axis: Axis,
        offset: f64,
        bounds: [(f64, f64); 2],
    },
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: ClassId,
    pub texture: Texture,
}

const UNBOUNDED: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);
const HIT_EPS: f64 = 1e-9;

impl Primitive {
    pub fn plane(
        axis: Axis,
        offset: f64,
        bounds: [(f64, f64); 2],
        class: ClassId,
        texture: Texture,
    ) -> Self {
        Self {
            shape: Shape::Plane {
                axis,
                offset,
                bounds,
            },
            class,
            texture,
        }
    }

    pub fn cuboid(min: [f64; 3], max: [f64; 3], class: ClassId, texture: Texture) -> Self {
        Self {
            shape: Shape::Box { min, max },
            class,
            texture,
        }
    }

    fn validate(&self, class_count: usize) -> Result<()> {
        if self.class as usize >= class_count {
            return Err(Error::Generation(format!(
                "primitive class {} outside palette of {class_count}",
                self.class
            )));
        }
        let ok = match self.shape {
            Shape::Plane { offset, bounds, .. } => {
                offset.is_finite() && bounds.iter().all(|(lo, hi)| lo < hi)
            }
            Shape::Box { min, max } => {
                (0..3).all(|i| min[i] < max[i] && min[i].is_finite() && max[i].is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Generation(format!(
                "degenerate primitive {:?}",
                self.shape
            )))
        }
    }

    /// Ray parameter of the first intersection in front of the origin.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self.shape {
            Shape::Plane {
                axis,
                offset,
                bounds,
            } => {
                let a = axis as usize;
                if dir[a] == 0.0 {
                    return None;
                }
                let s = (offset - origin[a]) / dir[a];
                if !(s > HIT_EPS) {
                    return None;
                }
                let others = match axis {
                    Axis::X => [1, 2],
                    Axis::Y => [0, 2],
                    Axis::Z => [0, 1],
                };
                for (k, &i) in others.iter().enumerate() {
                    let c = origin[i] + s * dir[i];
                    if c < bounds[k].0 || c > bounds[k].1 {
                        return None;
                    }
                }
                Some(s)
            }
            Shape::Box { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[i] - origin[i]) / dir[i];
                    let t1 = (max[i] - origin[i]) / dir[i];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    t_near = t_near.max(lo);
                    t_far = t_far.min(hi);
                }
                (t_near <= t_far && t_near > HIT_EPS).then_some(t_near)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Intensity rendered where no primitive is hit.
    pub background: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals the camera-frame depth for rays built by [`ray`].
    pub depth: f64,
    pub class: ClassId,
    pub intensity: f64,
}

impl SceneSpec {
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        nearest_hit(self.primitives.iter(), origin, dir)
    }

    /// Fronto-parallel plane at `z = depth` in world coordinates.
    pub fn plane(depth: f64, class: ClassId) -> Self {
        Self {
            primitives: vec![Primitive::plane(
                Axis::Z,
                depth,
                [UNBOUNDED, UNBOUNDED],
                class,
                Texture::Sinusoid {
                    mean: 128.0,
                    amplitude: 90.0,
                    periods: [1.3, 0.9, 2.1],
                },
            )],
            background: 0.0,
        }
    }

    /// A straight street seen from a forward-driving camera 1.6 m above the
    /// road: road, sidewalks, terrain verges, facades, walls, fences, poles
    /// with signs, vegetation and parked cars, closed by a far facade. Uses the
    /// ten classes of [`street_palette`].
    pub fn street(seed: u64) -> Self {
        use street_class::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tex = |base: f64, size: f64| Texture::Checkerboard {
            low: base,
            high: base + 40.0,
            size,
        };
        let along = (-60.0, 400.0);
        let mut p = vec![
            Primitive::plane(Axis::Y, 1.6, [(-7.0, 7.0), along], ROAD, tex(60.0, 1.0)),
            Primitive::plane(
                Axis::Y,
                1.45,
                [(4.0, 7.0), along],
                SIDEWALK,
                tex(120.0, 0.5),
            ),
            Primitive::plane(
                Axis::Y,
                1.45,
                [(-7.0, -4.0), along],
                SIDEWALK,
                tex(120.0, 0.5),
            ),
            Primitive::plane(Axis::Y, 1.55, [(7.0, 12.0), along], TERRAIN, tex(90.0, 0.7)),
            Primitive::plane(
                Axis::Y,
                1.55,
                [(-12.0, -7.0), along],
                TERRAIN,
                tex(90.0, 0.7),
            ),
            Primitive::plane(
                Axis::X,
                12.0,
                [(-14.0, 1.6), along],
                BUILDING,
                tex(150.0, 2.0),
            ),
            Primitive::plane(
                Axis::X,
                -12.0,
                [(-11.0, 1.6), along],
                BUILDING,
                tex(150.0, 2.0),
            ),
            Primitive::plane(
                Axis::Z,
                250.0,
                [(-200.0, 200.0), (-40.0, 1.6)],
                BUILDING,
                tex(170.0, 4.0),
            ),
        ];
        let mut z = 5.0;
        while z < 240.0 {
            let side: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
            match rng.random_range(0..5u32) {
                0 => {
                    // parked car on the road edge
                    let x0 = side * 2.0;
                    let x1 = side * 3.8;
                    let len = rng.random_range(3.8..4.8);
                    p.push(Primitive::cuboid(
                        [x0.min(x1), 0.1, z],
                        [x0.max(x1), 1.6, z + len],
                        CAR,
                        tex(40.0, 0.6),
                    ));
                }
                1 => {
                    // pole with a sign on the sidewalk edge
                    let x = side * 6.5;
                    p.push(Primitive::cuboid(
                        [x - 0.08, -3.5, z],
                        [x + 0.08, 1.45, z + 0.16],
                        POLE,
                        tex(100.0, 0.3),
                    ));
                    p.push(Primitive::cuboid(
                        [x.min(x - side * 0.9), -3.5, z - 0.05],
                        [x.max(x - side * 0.9), -2.7, z],
                        TRAFFIC_SIGN,
                        tex(200.0, 0.2),
                    ));
                }
                2 => {
                    let x0 = side * 8.0;
                    let x1 = side * rng.random_range(9.5..11.0);
                    let h = rng.random_range(-4.0..-1.5);
                    let len = rng.random_range(2.0..5.0);
                    p.push(Primitive::cuboid(
                        [x0.min(x1), h, z],
                        [x0.max(x1), 1.55, z + len],
                        VEGETATION,
                        tex(70.0, 0.4),
                    ));
                }
                3 => {
                    let x = side * 11.7;
                    let len = rng.random_range(6.0..15.0);
                    p.push(Primitive::cuboid(
                        [x - 0.2, -1.0, z],
                        [x + 0.2, 1.55, z + len],
                        WALL,
                        tex(180.0, 1.0),
                    ));
                }
                _ => {
                    let x = side * 7.3;
                    let len = rng.random_range(5.0..12.0);
                    p.push(Primitive::cuboid(
                        [x - 0.03, 0.3, z],
                        [x + 0.03, 1.55, z + len],
                        FENCE,
                        tex(110.0, 0.25),
                    ));
                }
            }
            z += rng.random_range(6.0..14.0);
        }
        Self {
            primitives: p,
            background: 210.0,
        }
    }

    /// Ground plane with randomly placed boxes of random classes in front of a
    /// back wall.
    pub fn boxes(seed: u64, class_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = class_count.max(1) as ClassId;
        let texture = |rng: &mut ChaCha8Rng| Texture::Checkerboard {
            low: rng.random_range(20.0..120.0),
            high: rng.random_range(130.0..240.0),
            size: rng.random_range(0.2..1.5),
        };
        let mut primitives = vec![
            Primitive::plane(
                Axis::Y,
                1.6,
                [(-100.0, 100.0), (-50.0, 300.0)],
                0,
                texture(&mut rng),
            ),
            Primitive::plane(
                Axis::Z,
                150.0,
                [(-150.0, 150.0), (-80.0, 1.6)],
                classes.min(2) - 1,
                texture(&mut rng),
            ),
        ];
        for _ in 0..40 {
            let x: f64 = rng.random_range(-15.0..15.0);
            let z = rng.random_range(8.0..120.0);
            let w = rng.random_range(0.5..4.0);
            let d = rng.random_range(0.5..4.0);
            let h = rng.random_range(0.5..6.0);
            if x.abs() < w / 2.0 + 1.5 {
                continue; // keep the driving corridor free
            }
            let class = rng.random_range(0..classes);
            let t = texture(&mut rng);
            primitives.push(Primitive::cuboid(
                [x - w / 2.0, 1.6 - h, z],
                [x + w / 2.0, 1.6, z + d],
                class,
                t,
            ));
        }
        Self {
            primitives,
            background: 200.0,
        }
    }
}

/// Class ids used by [`SceneSpec::street`].
pub mod street_class {
    use crate::dataset::ClassId;

    pub const ROAD: ClassId = 0;
    pub const SIDEWALK: ClassId = 1;
    pub const BUILDING: ClassId = 2;
    pub const WALL: ClassId = 3;
    pub const FENCE: ClassId = 4;
    pub const POLE: ClassId = 5;
    pub const TRAFFIC_SIGN: ClassId = 6;
    pub const VEGETATION: ClassId = 7;
    pub const TERRAIN: ClassId = 8;
    pub const CAR: ClassId = 9;
}

/// Ten street classes plus a void sky entry.
pub fn street_palette() -> ClassPalette {
    let entries: [(&str, [u8; 3]); 10] = [
        ("road", [128, 64, 128]),
        ("sidewalk", [244, 35, 232]),
        ("building", [70, 70, 70]),
        ("wall", [102, 102, 156]),
        ("fence", [190, 153, 153]),
        ("pole", [153, 153, 153]),
        ("traffic_sign", [220, 220, 0]),
        ("vegetation", [107, 142, 35]),
        ("terrain", [152, 251, 152]),
        ("car", [0, 0, 142]),
    ];
    let mut classes: Vec<ClassInfo> = entries
        .iter()
        .enumerate()
        .map(|(i, (name, color))| ClassInfo {
            id: i as ClassId,
            name: name.to_string(),
            color: *color,
            eval_included: true,
        })
        .collect();
    classes.push(ClassInfo {
        id: VOID,
        name: "sky".into(),
        color: [70, 130, 180],
        eval_included: false,
    });
    ClassPalette::new(classes).expect("static palette is valid")
}

/// Camera ray through pixel `(u, v)` in world coordinates. The direction has
/// unit camera-frame z component, so the ray parameter of a hit is its depth.
pub fn ray(
    pose: &KeyframePose,
    cam: &CameraIntrinsics,
    u: f64,
    v: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let d_cam = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    (*pose.translation(), pose.rotation() * d_cam)
}

/// Pose of the right camera of the rig.
pub fn right_pose(left: &KeyframePose, rig: &StereoRig) -> KeyframePose {
    left.compose(&KeyframePose::from_translation(Vector3::new(
        rig.baseline,
        0.0,
        0.0,
    )))
}

pub fn lateral_trajectory(n: usize, step: f64) -> Vec<KeyframePose> {
    (0..n)
        .map(|k| KeyframePose::from_translation(Vector3::new(step * k as f64, 0.0, 0.0)))
        .collect()
}

pub fn forward_trajectory(n: usize, step: f64) -> Vec<KeyframePose> {
    (0..n)
        .map(|k| KeyframePose::from_translation(Vector3::new(0.0, 0.0, step * k as f64)))
        .collect()
}

/// Forward motion at 1 m per keyframe with gentle lateral sway and yaw.
pub fn street_trajectory(n: usize) -> Vec<KeyframePose> {
    (0..n)
        .map(|k| {
            let k = k as f64;
            KeyframePose::from_axis_angle(
                Vector3::y(),
                0.03 * (0.2 * k).sin(),
                Vector3::new(0.5 * (0.3 * k).sin(), 0.0, k),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    /// Accepted camera depth range for sparse points, meters.
    pub depth_range: (f64, f64),
    /// Pixels kept free at the image border when choosing point locations.
    pub border: u32,
    pub render_images: bool,
    /// Grid stride in pixels for synthetic LiDAR returns; `None` skips LiDAR.
    pub lidar_stride: Option<u32>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            depth_range: (3.5, 150.0),
            border: 2,
            render_images: true,
            lidar_stride: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: SequenceDataset,
    /// True class of every point, grouped like the dataset's keyframes.
    pub true_labels: Vec<Vec<ClassId>>,
}

fn nearest_hit<'a>(
    prims: impl Iterator<Item = &'a Primitive>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<Hit> {
    let mut best: Option<(f64, &Primitive)> = None;
    for prim in prims {
        if let Some(s) = prim.intersect(origin, dir) {
            if best.is_none_or(|(b, _)| s < b) {
                best = Some((s, prim));
            }
        }
    }
    best.map(|(s, prim)| Hit {
        depth: s,
        class: prim.class,
        intensity: prim.texture.intensity(&Point3::from(origin + dir * s)),
    })
}

/// Pixel rectangle (inclusive) that can contain hits on a primitive.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

fn corners(shape: &Shape) -> Option<Vec<Vector3<f64>>> {
    let (min, max) = match *shape {
        Shape::Box { min, max } => (min, max),
        Shape::Plane {
            axis,
            offset,
            bounds,
        } => {
            if bounds
                .iter()
                .any(|(lo, hi)| !lo.is_finite() || !hi.is_finite())
            {
                return None;
            }
            let a = axis as usize;
            let mut min = [0.0; 3];
            let mut max = [0.0; 3];
            min[a] = offset;
            max[a] = offset;
            for (k, i) in (0..3).filter(|&i| i != a).enumerate() {
                min[i] = bounds[k].0;
                max[i] = bounds[k].1;
            }
            (min, max)
        }
    };
    Some(
        (0..8)
            .map(|c| {
                Vector3::new(
                    if c & 1 == 0 { min[0] } else { max[0] },
                    if c & 2 == 0 { min[1] } else { max[1] },
                    if c & 4 == 0 { min[2] } else { max[2] },
                )
            })
            .collect(),
    )
}

/// Screen-space culling for one camera. `None` means the primitive cannot be
/// hit from this pose. Convex shapes entirely in front of the camera project
/// inside the hull of their projected corners; anything else gets the whole
/// image.
fn footprint(prim: &Primitive, pose: &KeyframePose, cam: &CameraIntrinsics) -> Option<Footprint> {
    let full = Footprint {
        x0: 0,
        x1: cam.width - 1,
        y0: 0,
        y1: cam.height - 1,
    };
    let Some(corners) = corners(&prim.shape) else {
        return Some(full);
    };
    let local: Vec<Point3> = corners
        .iter()
        .map(|c| pose.inverse_transform_point(&Point3::from(*c)))
        .collect();
    if local.iter().all(|p| p.z <= 0.0) {
        return None;
    }
    if local.iter().any(|p| p.z <= 1e-6) {
        return Some(full);
    }
    let (mut u0, mut u1, mut v0, mut v1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &local {
        let u = cam.fx * p.x / p.z + cam.cx;
        let v = cam.fy * p.y / p.z + cam.cy;
        u0 = u0.min(u);
        u1 = u1.max(u);
        v0 = v0.min(v);
        v1 = v1.max(v);
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    if u1 < -1.0 || v1 < -1.0 || u0 > w || v0 > h {
        return None;
    }
    Some(Footprint {
        x0: (u0 - 1.0).floor().max(0.0) as u32,
        x1: (u1 + 1.0).ceil().min(w - 1.0) as u32,
        y0: (v0 - 1.0).floor().max(0.0) as u32,
        y1: (v1 + 1.0).ceil().min(h - 1.0) as u32,
    })
}

/// Casts the ray through every pixel of a `stride` grid, visiting only the
/// primitives whose footprint covers the pixel.
fn cast_grid(
    scene: &SceneSpec,
    pose: &KeyframePose,
    cam: &CameraIntrinsics,
    stride: u32,
    mut visit: impl FnMut(u32, u32, Option<Hit>),
) {
    let prints: Vec<(&Primitive, Footprint)> = scene
        .primitives
        .iter()
        .filter_map(|p| footprint(p, pose, cam).map(|f| (p, f)))
        .collect();
    let mut row: Vec<(&Primitive, Footprint)> = Vec::with_capacity(prints.len());
    for y in (0..cam.height).step_by(stride as usize) {
        row.clear();
        row.extend(prints.iter().filter(|(_, f)| f.y0 <= y && y <= f.y1));
        for x in (0..cam.width).step_by(stride as usize) {
            let (o, d) = ray(pose, cam, x as f64, y as f64);
            let cands = row
                .iter()
                .filter(|(_, f)| f.x0 <= x && x <= f.x1)
                .map(|(p, _)| *p);
            visit(x, y, nearest_hit(cands, &o, &d));
        }
    }
}

struct Render {
    labels: LabelMap,
    depth: Vec<f64>,
    image: Option<IntensityImage>,
}

fn render(
    scene: &SceneSpec,
    pose: &KeyframePose,
    cam: &CameraIntrinsics,
    images: bool,
) -> Result<Render> {
    let (w, h) = (cam.width, cam.height);
    let n = w as usize * h as usize;
    let mut ids = Vec::with_capacity(n);
    let mut depth = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(if images { n } else { 0 });
    cast_grid(scene, pose, cam, 1, |_, _, hit| match hit {
        Some(hit) => {
            ids.push(hit.class);
            depth.push(hit.depth);
            if images {
                intensity.push(hit.intensity.round().clamp(0.0, 255.0) as f32);
            }
        }
        None => {
            ids.push(VOID);
            depth.push(f64::INFINITY);
            if images {
                intensity.push(scene.background.round().clamp(0.0, 255.0) as f32);
            }
        }
    });
    let image = if images {
        Some(IntensityImage::new(w, h, intensity)?)
    } else {
        None
    };
    Ok(Render {
        labels: LabelMap::new(w, h, ids)?,
        depth,
        image,
    })
}

fn sample_lidar(
    scene: &SceneSpec,
    pose: &KeyframePose,
    cam: &CameraIntrinsics,
    stride: u32,
) -> LidarScan {
    let mut points = Vec::new();
    cast_grid(scene, pose, cam, stride.max(1), |x, y, hit| {
        if let Some(hit) = hit {
            let s = hit.depth;
            let xn = (x as f64 - cam.cx) / cam.fx;
            let yn = (y as f64 - cam.cy) / cam.fy;
            points.push(LidarPoint {
                position: [(xn * s) as f32, (yn * s) as f32, s as f32],
                class: hit.class,
            });
        }
    });
    LidarScan { points }
}

/// Renders a sequence along `trajectory` and picks `points_per_kf` sparse
/// points per keyframe at distinct integer pixels whose depth lies in
/// `opts.depth_range`.
pub fn generate(
    scene: &SceneSpec,
    trajectory: &[KeyframePose],
    rig: &StereoRig,
    palette: &ClassPalette,
    points_per_kf: usize,
    opts: &SynthOptions,
) -> Result<SynthOutput> {
    for prim in &scene.primitives {
        prim.validate(palette.class_count())?;
    }
    let cam = rig.intrinsics;
    if cam.width <= 2 * opts.border || cam.height <= 2 * opts.border {
        return Err(Error::Generation("image too small for the border".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut keyframes = Vec::with_capacity(trajectory.len());
    let mut true_labels = Vec::with_capacity(trajectory.len());

    for (k, pose) in trajectory.iter().enumerate() {
        let left = render(scene, pose, &cam, opts.render_images)?;
        let right = render(scene, &right_pose(pose, rig), &cam, opts.render_images)?;

        let mut kf = Keyframe::new(k as u32, *pose);
        let mut truth = Vec::with_capacity(points_per_kf);
        let mut taken = vec![false; left.depth.len()];
        let budget = points_per_kf;
        let max_attempts = 50 * budget + 10_000;
        let mut attempts = 0;
        while kf.points.len() < budget {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Generation(format!(
                    "keyframe {k}: only {} of {budget} points hit geometry in the depth range",
                    kf.points.len()
                )));
            }
            let x = rng.random_range(opts.border..cam.width - opts.border);
            let y = rng.random_range(opts.border..cam.height - opts.border);
            let idx = y as usize * cam.width as usize + x as usize;
            let depth = left.depth[idx];
            if taken[idx] || !(depth >= opts.depth_range.0 && depth <= opts.depth_range.1) {
                continue;
            }
            taken[idx] = true;
            kf.points.push(SparsePoint {
                host_kf: k as u32,
                u: x as f64,
                v: y as f64,
                inv_depth: 1.0 / depth,
            });
            truth.push(left.labels.ids()[idx]);
        }

        kf.gt2d = Some(left.labels.clone());
        kf.labels_left = Some(left.labels);
        kf.labels_right = Some(right.labels);
        kf.image_left = left.image;
        kf.image_right = right.image;
        kf.lidar = opts
            .lidar_stride
            .map(|s| sample_lidar(scene, pose, &cam, s));
        keyframes.push(kf);
        true_labels.push(truth);
    }

    let dataset = SequenceDataset {
        rig: *rig,
        keyframes,
        palette: palette.clone(),
    };
    dataset.validate()?;
    Ok(SynthOutput {
        dataset,
        true_labels,
    })
}

/// Segmentation noise applied to predicted label maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Probability of replacing a non-void pixel by a uniformly drawn wrong class.
    pub flip_rate: f64,
    /// Pixels within this Chebyshev distance of a label change use
    /// `boundary_flip_rate` instead.
    pub boundary_band_px: u32,
    pub boundary_flip_rate: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn uniform(flip_rate: f64, seed: u64) -> Self {
        Self {
            flip_rate,
            boundary_band_px: 0,
            boundary_flip_rate: flip_rate,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for r in [self.flip_rate, self.boundary_flip_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!("flip rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn boundary_mask(map: &LabelMap, band: u32) -> Vec<bool> {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let b = band as i64;
    let mut mask = vec![false; (w * h) as usize];
    if band == 0 {
        return mask;
    }
    for y in 0..h {
        for x in 0..w {
            let c = map.get(x as u32, y as u32);
            'search: for yy in (y - b).max(0)..=(y + b).min(h - 1) {
                for xx in (x - b).max(0)..=(x + b).min(w - 1) {
                    if map.get(xx as u32, yy as u32) != c {
                        mask[(y * w + x) as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    mask
}

/// Replaces pixels of a label map with wrong classes; returns the number of
/// flipped pixels.
pub fn corrupt_map(
    map: &mut LabelMap,
    noise: &NoiseModel,
    class_count: usize,
    rng: &mut impl Rng,
) -> usize {
    if class_count < 2 {
        return 0;
    }
    let band = boundary_mask(map, noise.boundary_band_px);
    let mut flipped = 0;
    for (i, id) in map.ids_mut().iter_mut().enumerate() {
        if *id == VOID {
            continue;
        }
        let rate = if band[i] {
            noise.boundary_flip_rate
        } else {
            noise.flip_rate
        };
        if rng.random::<f64>() < rate {
            let r = rng.random_range(0..class_count - 1) as ClassId;
            *id = if r >= *id { r + 1 } else { r };
            flipped += 1;
        }
    }
    flipped
}

/// Corrupts every left and right label map of `ds`; gt2d maps are untouched.
/// Deterministic for a given seed.
pub fn corrupt(ds: &mut SequenceDataset, noise: &NoiseModel) -> Result<usize> {
    noise.validate()?;
    let classes = ds.palette.class_count();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut flipped = 0;
    for kf in &mut ds.keyframes {
        for map in [&mut kf.labels_left, &mut kf.labels_right]
            .into_iter()
            .flatten()
        {
            flipped += corrupt_map(map, noise, classes, &mut rng);
        }
    }
    Ok(flipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Plane,
    Street,
    Boxes,
}

impl FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plane" => Ok(SceneKind::Plane),
            "street" => Ok(SceneKind::Street),
            "boxes" => Ok(SceneKind::Boxes),
            other => Err(format!("unknown scene '{other}' (plane, street, boxes)")),
        }
    }
}

/// 640x480 rig with a 0.54 m baseline.
pub fn default_rig() -> StereoRig {
    let cam =
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).expect("static intrinsics");
    StereoRig::new(cam, 0.54).expect("static baseline")
}

/// One of the stock scenes with its trajectory and palette, optionally
/// corrupted with uniform label noise seeded from `seed`.
pub fn stock_sequence(
    kind: SceneKind,
    keyframes: usize,
    points_per_kf: usize,
    noise: f64,
    seed: u64,
    opts: SynthOptions,
) -> Result<SynthOutput> {
    let rig = default_rig();
    let palette = street_palette();
    let (scene, trajectory) = match kind {
        SceneKind::Plane => (
            SceneSpec::plane(10.0, 0),
            lateral_trajectory(keyframes, 0.2),
        ),
        SceneKind::Street => (SceneSpec::street(seed), street_trajectory(keyframes)),
        SceneKind::Boxes => (
            SceneSpec::boxes(seed, palette.class_count()),
            street_trajectory(keyframes),
        ),
    };
    let mut out = generate(
        &scene,
        &trajectory,
        &rig,
        &palette,
        points_per_kf,
        &SynthOptions { seed, ..opts },
    )?;
    if noise > 0.0 {
        corrupt(
            &mut out.dataset,
            &NoiseModel::uniform(
                noise,
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            ),
        )?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_rig() -> StereoRig {
        let cam = CameraIntrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60).unwrap();
        StereoRig::new(cam, 0.5).unwrap()
    }

    #[test]
    fn fronto_parallel_plane_depths() {
        let rig = small_rig();
        let palette = ClassPalette::generic(3).unwrap();
        let scene = SceneSpec::plane(10.0, 2);
        let opts = SynthOptions {
            depth_range: (0.1, 1e3),
            lidar_stride: None,
            ..Default::default()
        };
        let out = generate(
            &scene,
            &lateral_trajectory(3, 0.3),
            &rig,
            &palette,
            50,
            &opts,
        )
        .unwrap();
        for (kf, truth) in out.dataset.keyframes.iter().zip(&out.true_labels) {
            assert_eq!(kf.points.len(), 50);
            for (p, &t) in kf.points.iter().zip(truth) {
                assert!((p.inv_depth - 0.1).abs() < 1e-15);
                assert_eq!(t, 2);
            }
        }
    }

    #[test]
    fn approaching_the_plane() {
        let rig = small_rig();
        let palette = ClassPalette::generic(1).unwrap();
        let opts = SynthOptions {
            depth_range: (0.1, 1e3),
            ..Default::default()
        };
        let out = generate(
            &SceneSpec::plane(10.0, 0),
            &forward_trajectory(8, 1.0),
            &rig,
            &palette,
            20,
            &opts,
        )
        .unwrap();
        for (k, kf) in out.dataset.keyframes.iter().enumerate() {
            for p in &kf.points {
                let expected = 1.0 / (10.0 - k as f64);
                assert!((p.inv_depth - expected).abs() <= 1e-12 * expected);
            }
        }
    }

    #[test]
    fn lidar_returns_lie_on_surfaces() {
        let rig = small_rig();
        let palette = ClassPalette::generic(1).unwrap();
        let out = generate(
            &SceneSpec::plane(10.0, 0),
            &lateral_trajectory(1, 0.0),
            &rig,
            &palette,
            5,
            &SynthOptions::default(),
        )
        .unwrap();
        let scan = out.dataset.keyframes[0].lidar.as_ref().unwrap();
        assert_eq!(scan.points.len(), 40 * 30);
        assert!(scan
            .points
            .iter()
            .all(|p| p.position[2] == 10.0 && p.class == 0));
    }

    #[test]
    fn box_and_bounded_plane_intersections() {
        let cube = Primitive::cuboid(
            [-1.0, -1.0, 4.0],
            [1.0, 1.0, 6.0],
            0,
            Texture::Constant(0.0),
        );
        let o = Vector3::zeros();
        assert_eq!(cube.intersect(&o, &Vector3::new(0.0, 0.0, 1.0)), Some(4.0));
        assert_eq!(cube.intersect(&o, &Vector3::new(1.0, 0.0, 1.0)), None);
        assert_eq!(
            cube.intersect(&Vector3::new(0.0, 0.0, 7.0), &Vector3::new(0.0, 0.0, 1.0)),
            None
        );
        let floor = Primitive::plane(
            Axis::Y,
            2.0,
            [(-1.0, 1.0), (0.0, 10.0)],
            0,
            Texture::Constant(0.0),
        );
        assert_eq!(floor.intersect(&o, &Vector3::new(0.0, 0.5, 1.0)), Some(4.0));
        assert_eq!(floor.intersect(&o, &Vector3::new(0.0, 0.1, 1.0)), None);
        assert_eq!(floor.intersect(&o, &Vector3::new(0.0, -0.5, 1.0)), None);
    }

    #[test]
    fn generation_fails_without_geometry() {
        let rig = small_rig();
        let palette = ClassPalette::generic(1).unwrap();
        let scene = SceneSpec {
            primitives: vec![],
            background: 0.0,
        };
        let err = generate(
            &scene,
            &lateral_trajectory(2, 0.1),
            &rig,
            &palette,
            5,
            &SynthOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("keyframe 0"));
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut map = LabelMap::new(4, 2, vec![0, 1, 2, VOID, 1, 1, 0, 2]).unwrap();
        let before = map.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            corrupt_map(&mut map, &NoiseModel::uniform(0.0, 0), 3, &mut rng),
            0
        );
        assert_eq!(map, before);
    }

    #[test]
    fn full_noise_on_two_classes_swaps() {
        let ids = vec![0, 1, VOID, 1, 0, 0];
        let mut map = LabelMap::new(3, 2, ids.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        corrupt_map(&mut map, &NoiseModel::uniform(1.0, 0), 2, &mut rng);
        let expected: Vec<_> = ids
            .iter()
            .map(|&c| if c == VOID { VOID } else { 1 - c })
            .collect();
        assert_eq!(map.ids(), &expected[..]);
    }

    #[test]
    fn flip_fraction_within_binomial_bounds() {
        let mut map = LabelMap::uniform(1000, 1000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let flipped = corrupt_map(&mut map, &NoiseModel::uniform(0.2, 0), 6, &mut rng);
        let frac = flipped as f64 / 1e6;
        assert!((0.1988..=0.2012).contains(&frac), "{frac}");
        assert_eq!(map.ids().iter().filter(|&&c| c != 3).count(), flipped);
        assert!(map.ids().iter().all(|&c| c < 6));
    }

    #[test]
    fn boundary_band_uses_its_own_rate() {
        let mut ids = vec![0u8; 20 * 10];
        for y in 0..10 {
            for x in 10..20 {
                ids[y * 20 + x] = 1;
            }
        }
        let mut map = LabelMap::new(20, 10, ids).unwrap();
        let noise = NoiseModel {
            flip_rate: 0.0,
            boundary_band_px: 2,
            boundary_flip_rate: 1.0,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flipped = corrupt_map(&mut map, &noise, 2, &mut rng);
        // columns 8..=11 are within 2 px of the 9|10 edge
        assert_eq!(flipped, 4 * 10);
    }

    #[test]
    fn corruption_leaves_ground_truth_and_is_seeded() {
        let rig = small_rig();
        let palette = ClassPalette::generic(4).unwrap();
        let out = generate(
            &SceneSpec::plane(10.0, 1),
            &lateral_trajectory(2, 0.1),
            &rig,
            &palette,
            10,
            &SynthOptions::default(),
        )
        .unwrap();
        let mut a = out.dataset.clone();
        let mut b = out.dataset.clone();
        corrupt(&mut a, &NoiseModel::uniform(0.3, 5)).unwrap();
        corrupt(&mut b, &NoiseModel::uniform(0.3, 5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(
            a.keyframes[0].labels_left,
            out.dataset.keyframes[0].labels_left
        );
        assert_eq!(a.keyframes[0].gt2d, out.dataset.keyframes[0].gt2d);
    }

    #[test]
    fn culled_rendering_matches_brute_force() {
        let cam = CameraIntrinsics::new(125.0, 125.0, 80.0, 60.0, 160, 120).unwrap();
        for seed in [1, 2] {
            for scene in [SceneSpec::street(seed), SceneSpec::boxes(seed, 10)] {
                for pose in street_trajectory(30).iter().step_by(7) {
                    let r = render(&scene, pose, &cam, true).unwrap();
                    for y in 0..cam.height {
                        for x in 0..cam.width {
                            let (o, d) = ray(pose, &cam, x as f64, y as f64);
                            let i = (y * cam.width + x) as usize;
                            match scene.cast(&o, &d) {
                                Some(h) => {
                                    assert_eq!(r.labels.ids()[i], h.class);
                                    assert_eq!(r.depth[i], h.depth);
                                }
                                None => assert_eq!(r.labels.ids()[i], VOID),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn street_scene_is_valid() {
        let scene = SceneSpec::street(1);
        for p in &scene.primitives {
            p.validate(10).unwrap();
        }
        let (o, d) = ray(
            &KeyframePose::identity(),
            &default_rig().intrinsics,
            320.0,
            479.0,
        );
        let hit = scene.cast(&o, &d).unwrap();
        assert_eq!(hit.class, street_class::ROAD);
        let (o, d) = ray(
            &KeyframePose::identity(),
            &default_rig().intrinsics,
            320.0,
            0.0,
        );
        assert!(scene
            .cast(&o, &d)
            .is_none_or(|h| h.class != street_class::ROAD));
    }
}
