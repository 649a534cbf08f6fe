//! Rigid-body poses, the pinhole camera and the rectified stereo rig.
//!
//! Camera frames follow the usual computer-vision convention: x right, y down,
//! z along the optical axis. Poses are world-from-camera.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A visible projection: image location plus the inverse depth of the point in
/// the projecting camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    pub inv_depth: f64,
}

/// Slack in pixels applied to image bounds tests.
pub const BOUNDS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::Domain(format!(
                "focal lengths must be finite and positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::Domain(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// True when `pixel` lies in `[margin, width - margin] x [margin, height - margin]`,
    /// widened by [`BOUNDS_TOLERANCE`] so that round-off in a projection
    /// round trip cannot push a pixel on the boundary outside.
    pub fn contains(&self, pixel: Pixel, margin: f64) -> bool {
        let lo = margin - BOUNDS_TOLERANCE;
        pixel.u >= lo
            && pixel.u <= self.width as f64 - lo
            && pixel.v >= lo
            && pixel.v <= self.height as f64 - lo
    }
}

/// Rectified stereo pair; the right camera sits `baseline` meters along +x of
/// the left one and shares its intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self> {
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(Error::Domain(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(Self {
            intrinsics,
            baseline,
        })
    }

    /// Horizontal disparity in pixels for a point at the given inverse depth.
    pub fn disparity(&self, inv_depth: f64) -> f64 {
        self.intrinsics.fx * self.baseline * inv_depth
    }
}

/// Visibility predicate shared by every projection in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    /// Points with camera depth at or below this value are not visible.
    pub z_min: f64,
    /// Pixel margin kept free at every image border.
    pub margin: f64,
}

impl Default for Visibility {
    fn default() -> Self {
        Self {
            z_min: 0.1,
            margin: 1.0,
        }
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl KeyframePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation
            .iter()
            .chain(translation.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("pose contains non-finite values".into()));
        }
        let gram_error = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_error > ROTATION_TOLERANCE {
            return Err(Error::Domain(format!(
                "rotation is not orthonormal (max |R^T R - I| = {gram_error:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Domain(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if angle == 0.0 || axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Parses the row-major 3x4 layout `r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera-frame point to world frame.
    pub fn transform_point(&self, point: &Point3) -> Point3 {
        Point3::from(self.rotation * point.coords + self.translation)
    }

    /// World-frame point to camera frame.
    pub fn inverse_transform_point(&self, point: &Point3) -> Point3 {
        Point3::from(self.rotation.transpose() * (point.coords - self.translation))
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &KeyframePose) -> KeyframePose {
        KeyframePose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> KeyframePose {
        let rt = self.rotation.transpose();
        KeyframePose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(self.translation)
    }
}

/// Back-projects a pixel with known inverse depth into the camera frame.
pub fn unproject(pixel: Pixel, inv_depth: f64, intrinsics: &CameraIntrinsics) -> Result<Point3> {
    if !(inv_depth.is_finite() && inv_depth > 0.0) {
        return Err(Error::Domain(format!(
            "inverse depth must be positive, got {inv_depth}"
        )));
    }
    let depth = 1.0 / inv_depth;
    Ok(Point3::new(
        (pixel.u - intrinsics.cx) / intrinsics.fx * depth,
        (pixel.v - intrinsics.cy) / intrinsics.fy * depth,
        depth,
    ))
}

/// Projects a camera-frame point, or `None` when it is behind the near plane or
/// lands outside the image minus the visibility margin.
pub fn project(
    point: &Point3,
    intrinsics: &CameraIntrinsics,
    vis: &Visibility,
) -> Option<Projection> {
    if !(point.z > vis.z_min) {
        return None;
    }
    let pixel = Pixel::new(
        intrinsics.fx * point.x / point.z + intrinsics.cx,
        intrinsics.fy * point.y / point.z + intrinsics.cy,
    );
    if !intrinsics.contains(pixel, vis.margin) {
        return None;
    }
    Some(Projection {
        pixel,
        inv_depth: 1.0 / point.z,
    })
}

/// Moves a point from the camera frame of `src` into the camera frame of `dst`.
pub fn transform(src: &KeyframePose, dst: &KeyframePose, point: &Point3) -> Point3 {
    let world = src.rotation * point.coords + src.translation;
    Point3::from(dst.rotation.transpose() * (world - dst.translation))
}

/// Maps a left-image projection into the rectified right image.
pub fn project_to_right(
    pixel_left: Pixel,
    inv_depth: f64,
    rig: &StereoRig,
    vis: &Visibility,
) -> Option<Projection> {
    if !(inv_depth > 0.0) {
        return None;
    }
    let pixel = Pixel::new(pixel_left.u - rig.disparity(inv_depth), pixel_left.v);
    if !rig.intrinsics.contains(pixel, vis.margin) {
        return None;
    }
    Some(Projection { pixel, inv_depth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 320.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 640.0, 240.0, 640, 480).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 320.0, 0.0, 640, 480).is_err());
        assert!(StereoRig::new(vga(), 0.0).is_err());
    }

    #[test]
    fn unproject_on_axis() {
        let p = unproject(Pixel::new(320.0, 240.0), 0.5, &vga()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_unit_slope() {
        let p = unproject(Pixel::new(820.0, 240.0), 0.1, &vga()).unwrap();
        assert_relative_eq!(p, Point3::new(10.0, 0.0, 10.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_hand_evaluated() {
        // ((400-320)/500, (300-240)/500, 1) * 4
        let p = unproject(Pixel::new(400.0, 300.0), 0.25, &vga()).unwrap();
        assert_relative_eq!(p, Point3::new(0.64, 0.48, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_rejects_bad_depth() {
        assert!(unproject(Pixel::new(1.0, 1.0), 0.0, &vga()).is_err());
        assert!(unproject(Pixel::new(1.0, 1.0), -0.5, &vga()).is_err());
        assert!(unproject(Pixel::new(1.0, 1.0), f64::NAN, &vga()).is_err());
    }

    #[test]
    fn project_basic_cases() {
        let vis = Visibility::default();
        let pr = project(&Point3::new(0.0, 0.0, 10.0), &vga(), &vis).unwrap();
        assert_eq!(pr.pixel, Pixel::new(320.0, 240.0));
        assert_eq!(pr.inv_depth, 0.1);
        assert!(project(&Point3::new(0.0, 0.0, -1.0), &vga(), &vis).is_none());
        assert!(project(&Point3::new(0.0, 0.0, 0.1), &vga(), &vis).is_none());
        // x = 6.4 at z = 10 lands on u = 640, beyond the 1 px margin.
        assert!(project(&Point3::new(6.4, 0.0, 10.0), &vga(), &vis).is_none());
    }

    #[test]
    fn transform_identity_and_translation() {
        let a = KeyframePose::from_axis_angle(
            Vector3::new(0.3, 1.0, -0.2),
            0.7,
            Vector3::new(1.0, 2.0, 3.0),
        );
        let p = Point3::new(0.4, -1.5, 7.0);
        assert_relative_eq!(transform(&a, &a, &p), p, epsilon = 1e-12);

        let src = KeyframePose::identity();
        let dst = KeyframePose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(
            transform(&src, &dst, &Point3::new(0.0, 0.0, 5.0)),
            Point3::new(-1.0, 0.0, 5.0)
        );
    }

    #[test]
    fn transform_rotated_source() {
        // R_y(90deg) = [[0,0,1],[0,1,0],[-1,0,0]]; R * (0,0,2) = (2,0,0).
        let r = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        let src = KeyframePose::new(r, Vector3::zeros()).unwrap();
        let out = transform(&src, &KeyframePose::identity(), &Point3::new(0.0, 0.0, 2.0));
        assert_eq!(out, Point3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn right_projection() {
        let rig = StereoRig::new(vga(), 0.5).unwrap();
        let vis = Visibility::default();
        let pr = project_to_right(Pixel::new(320.0, 240.0), 0.1, &rig, &vis).unwrap();
        assert_relative_eq!(pr.pixel.u, 295.0, epsilon = 1e-12);
        assert_eq!(pr.pixel.v, 240.0);
        assert_eq!(pr.inv_depth, 0.1);

        let far = project_to_right(Pixel::new(320.0, 240.0), 1e-12, &rig, &vis).unwrap();
        assert_relative_eq!(far.pixel.u, 320.0, epsilon = 1e-9);

        assert!(project_to_right(Pixel::new(10.0, 240.0), 0.1, &rig, &vis).is_none());
    }

    #[test]
    fn pose_validation() {
        let scaled = Matrix3::identity() * 1.01;
        assert!(KeyframePose::new(scaled, Vector3::zeros()).is_err());
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(KeyframePose::new(reflection, Vector3::zeros()).is_err());
        let pose = KeyframePose::from_axis_angle(Vector3::y(), 0.4, Vector3::new(1.0, 2.0, 3.0));
        let back = KeyframePose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(back, pose);
    }

    fn arb_pose() -> impl Strategy<Value = KeyframePose> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.0f64..3.0,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_map(|(axis, angle, t)| {
                KeyframePose::from_axis_angle(Vector3::from(axis), angle, Vector3::from(t))
            })
    }

    proptest! {
        #[test]
        fn project_inverts_unproject(u in 1.0f64..639.0, v in 1.0f64..479.0, d in 1e-3f64..10.0) {
            let cam = vga();
            let p = unproject(Pixel::new(u, v), d, &cam).unwrap();
            let vis = Visibility { z_min: 0.0, margin: 1.0 };
            let pr = project(&p, &cam, &vis).unwrap();
            prop_assert!((pr.pixel.u - u).abs() <= 1e-9 * u);
            prop_assert!((pr.pixel.v - v).abs() <= 1e-9 * v);
            prop_assert!((pr.inv_depth - d).abs() <= 1e-9 * d);
        }

        #[test]
        fn transform_round_trip(a in arb_pose(), b in arb_pose(), p in prop::array::uniform3(-20.0f64..20.0)) {
            let p = Point3::from(p);
            let back = transform(&a, &b, &transform(&b, &a, &p));
            prop_assert!((back - p).norm() <= 1e-9 * (1.0 + p.coords.norm()));
            let same = transform(&a, &a, &p);
            prop_assert!((same - p).norm() <= 1e-12 * (1.0 + p.coords.norm()));
        }

        #[test]
        fn disparity_monotone(d1 in 0.0f64..10.0, d2 in 0.0f64..10.0) {
            let rig = StereoRig::new(vga(), 0.54).unwrap();
            prop_assert!(rig.disparity(d1) >= 0.0);
            if d1 < d2 {
                prop_assert!(rig.disparity(d1) <= rig.disparity(d2));
            }
        }
    }
}
