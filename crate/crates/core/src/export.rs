//! Semantic point clouds in the global frame and their PLY serialization.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::{ClassId, ClassPalette, SequenceDataset};
use crate::error::{Error, Result};
use crate::geometry::{self, KeyframePose, Point3};
use crate::tcl::PointLabels;

/// Label byte written for points without a class.
pub const UNLABELED_ID: u8 = 255;
pub const UNLABELED_COLOR: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Point3,
    pub class: Option<ClassId>,
    pub color: [u8; 3],
    /// Host keyframe id; unknown for points read back from a file.
    pub source_kf: Option<u32>,
}

/// Unprojects every point in its host frame and moves it to the world frame.
/// Points are emitted in keyframe order, then point order.
pub fn build_cloud(ds: &SequenceDataset, labels: &PointLabels) -> Result<Vec<LabeledPoint>> {
    if labels.per_keyframe.len() != ds.keyframes.len()
        || ds
            .keyframes
            .iter()
            .zip(&labels.per_keyframe)
            .any(|(kf, l)| kf.points.len() != l.len())
    {
        return Err(Error::Config(
            "labels do not cover every point of the sequence".into(),
        ));
    }
    let cam = ds.intrinsics();
    let mut cloud = Vec::with_capacity(ds.point_count());
    for (kf, kf_labels) in ds.keyframes.iter().zip(&labels.per_keyframe) {
        for (p, &class) in kf.points.iter().zip(kf_labels) {
            let local = geometry::unproject(p.pixel(), p.inv_depth, cam)?;
            cloud.push(LabeledPoint {
                position: kf.pose.transform_point(&local),
                class,
                color: class.map_or(UNLABELED_COLOR, |c| ds.palette.color(c)),
                source_kf: Some(kf.id),
            });
        }
    }
    Ok(cloud)
}

/// Keeps the points whose class is in `classes`; unlabeled points never pass.
pub fn filter_cloud(cloud: &[LabeledPoint], classes: &[ClassId]) -> Vec<LabeledPoint> {
    cloud
        .iter()
        .filter(|p| p.class.is_some_and(|c| classes.contains(&c)))
        .copied()
        .collect()
}

/// Resolves comma-separated class names against the palette.
pub fn parse_filter(spec: &str, palette: &ClassPalette) -> Result<Vec<ClassId>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            palette
                .by_name(name)
                .map(|c| c.id)
                .ok_or_else(|| Error::Config(format!("unknown class '{name}' in filter")))
        })
        .collect()
}

const PLY_PROPERTIES: [&str; 7] = [
    "property float x",
    "property float y",
    "property float z",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
    "property uchar label",
];
const VERTEX_BYTES: usize = 16;

/// Serializes a cloud as binary little-endian PLY, optionally restricted to
/// the classes in `filter`.
pub fn ply_bytes(cloud: &[LabeledPoint], filter: Option<&[ClassId]>) -> Vec<u8> {
    let kept: Vec<&LabeledPoint> = match filter {
        Some(classes) => cloud
            .iter()
            .filter(|p| p.class.is_some_and(|c| classes.contains(&c)))
            .collect(),
        None => cloud.iter().collect(),
    };
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        kept.len()
    );
    for prop in PLY_PROPERTIES {
        header.push_str(prop);
        header.push('\n');
    }
    header.push_str("end_header\n");

    let mut out = Vec::with_capacity(header.len() + kept.len() * VERTEX_BYTES);
    out.extend_from_slice(header.as_bytes());
    for p in kept {
        for c in [p.position.x, p.position.y, p.position.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&p.color);
        out.push(p.class.unwrap_or(UNLABELED_ID));
    }
    out
}

pub fn export_ply(cloud: &[LabeledPoint], path: &Path, filter: Option<&[ClassId]>) -> Result<()> {
    let bytes = ply_bytes(cloud, filter);
    crate::pipeline::create_parent(path)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads files in the exact layout written by [`ply_bytes`].
pub fn parse_ply(bytes: &[u8], file: &str) -> Result<Vec<LabeledPoint>> {
    const END: &[u8] = b"end_header\n";
    let header_end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse(file, 0, "missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse(file, 0, "header is not text"))?;
    let lines: Vec<&str> = header.lines().collect();
    let expect = |i: usize, want: &str| -> Result<()> {
        if lines.get(i).map(|l| l.trim()) == Some(want) {
            Ok(())
        } else {
            Err(Error::parse(file, i + 1, format!("expected '{want}'")))
        }
    };
    expect(0, "ply")?;
    expect(1, "format binary_little_endian 1.0")?;
    let count: usize = lines
        .get(2)
        .and_then(|l| l.trim().strip_prefix("element vertex "))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::parse(file, 3, "expected 'element vertex N'"))?;
    for (i, prop) in PLY_PROPERTIES.iter().enumerate() {
        expect(3 + i, prop)?;
    }
    expect(3 + PLY_PROPERTIES.len(), "end_header")?;

    let body = &bytes[header_end..];
    if body.len() != count * VERTEX_BYTES {
        return Err(Error::parse(
            file,
            0,
            format!(
                "expected {} vertex bytes, found {}",
                count * VERTEX_BYTES,
                body.len()
            ),
        ));
    }
    Ok(body
        .chunks_exact(VERTEX_BYTES)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
            LabeledPoint {
                position: Point3::new(f(0), f(1), f(2)),
                color: [rec[12], rec[13], rec[14]],
                class: (rec[15] != UNLABELED_ID).then_some(rec[15]),
                source_kf: None,
            }
        })
        .collect())
}

pub fn read_ply(path: &Path) -> Result<Vec<LabeledPoint>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, &path.display().to_string())
}

/// Applies one rigid transform per cloud and concatenates in argument order.
/// Overlapping points are kept as they are.
pub fn merge(
    clouds: &[Vec<LabeledPoint>],
    transforms: &[KeyframePose],
) -> Result<Vec<LabeledPoint>> {
    if clouds.len() != transforms.len() {
        return Err(Error::Config(format!(
            "{} clouds but {} transforms",
            clouds.len(),
            transforms.len()
        )));
    }
    Ok(clouds
        .iter()
        .zip(transforms)
        .flat_map(|(cloud, t)| {
            cloud.iter().map(move |p| LabeledPoint {
                position: t.transform_point(&p.position),
                ..*p
            })
        })
        .collect())
}
