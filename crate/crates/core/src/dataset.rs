//! Sequence directory format: calibration, keyframe poses, sparse points, label
//! maps and the optional grayscale images, ground-truth maps and LiDAR scans.
//!
//! ```text
//! calib.txt              fx fy cx cy width height baseline
//! poses.txt              kf_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
//! palette.txt            id name r g b eval_included
//! points/<kf_id>.txt     u v inv_depth
//! labels/{left,right}/<kf_id>.png
//! images/{left,right}/<kf_id>.png
//! gt2d/<kf_id>.png
//! lidar/<kf_id>.bin      f32 x, f32 y, f32 z, u32 class (little endian)
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageReader};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, KeyframePose, Pixel, StereoRig};

pub type ClassId = u8;

/// Reserved class id carrying no class evidence.
pub const VOID: ClassId = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn dir_name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePoint {
    /// Id of the keyframe hosting the point.
    pub host_kf: u32,
    pub u: f64,
    pub v: f64,
    pub inv_depth: f64,
}

impl SparsePoint {
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.u, self.v)
    }
}

/// Dense row-major grid of class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    ids: Vec<ClassId>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, ids: Vec<ClassId>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::Domain(format!(
                "label map of {width}x{height} needs {} ids, got {}",
                width as usize * height as usize,
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn uniform(width: u32, height: u32, class: ClassId) -> Self {
        Self {
            width,
            height,
            ids: vec![class; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ids(&self) -> &[ClassId] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [ClassId] {
        &mut self.ids
    }

    pub fn get(&self, x: u32, y: u32) -> ClassId {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, class: ClassId) {
        self.ids[y as usize * self.width as usize + x as usize] = class;
    }

    /// Nearest-neighbor lookup of the cell containing `pixel`.
    pub fn sample(&self, pixel: Pixel) -> Result<ClassId> {
        let x = pixel.u.round();
        let y = pixel.v.round();
        if !(x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64) {
            return Err(Error::Domain(format!(
                "pixel ({}, {}) outside {}x{} label map",
                pixel.u, pixel.v, self.width, self.height
            )));
        }
        Ok(self.get(x as u32, y as u32))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = read_gray_png(path)?;
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            ids: img.into_raw(),
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width, self.height, self.ids.clone())
            .expect("label map buffer matches its dimensions");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Grayscale intensity image, stored as `f32` in memory and as 8-bit PNG on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl IntensityImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Domain(
                "intensity images need at least 2x2 pixels".into(),
            ));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::Domain(format!(
                "intensity image of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear interpolation; `None` outside `[0, width-1] x [0, height-1]`.
    /// Exact at integer pixel positions.
    pub fn bilinear(&self, pixel: Pixel) -> Option<f64> {
        let (u, v) = (pixel.u, pixel.v);
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= max_u && v <= max_v) {
            return None;
        }
        let x0 = (u.floor() as u32).min(self.width - 2);
        let y0 = (v.floor() as u32).min(self.height - 2);
        let ax = u - x0 as f64;
        let ay = v - y0 as f64;
        let i00 = self.get(x0, y0) as f64;
        let i10 = self.get(x0 + 1, y0) as f64;
        let i01 = self.get(x0, y0 + 1) as f64;
        let i11 = self.get(x0 + 1, y0 + 1) as f64;
        if ax == 0.0 && ay == 0.0 {
            return Some(i00);
        }
        let top = i00 + ax * (i10 - i00);
        let bottom = i01 + ax * (i11 - i01);
        Some(top + ay * (bottom - top))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = read_gray_png(path)?;
        let (width, height) = img.dimensions();
        let data = img.into_raw().into_iter().map(f32::from).collect();
        Self::new(width, height, data)
    }

    /// Writes the image rounded and clamped to 8 bits.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self
            .data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let img = GrayImage::from_raw(self.width, self.height, bytes)
            .expect("intensity buffer matches its dimensions");
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    /// Position in the keyframe's left-camera frame, meters.
    pub position: [f32; 3],
    pub class: ClassId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LidarScan {
    pub points: Vec<LidarPoint>,
}

impl LidarScan {
    pub const RECORD_BYTES: usize = 16;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * Self::RECORD_BYTES);
        for p in &self.points {
            for c in p.position {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&u32::from(p.class).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        if !bytes.len().is_multiple_of(Self::RECORD_BYTES) {
            return Err(Error::parse(
                file,
                0,
                format!("size {} is not a multiple of 16 bytes", bytes.len()),
            ));
        }
        let mut points = Vec::with_capacity(bytes.len() / Self::RECORD_BYTES);
        for (i, rec) in bytes.chunks_exact(Self::RECORD_BYTES).enumerate() {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let position = [f(0), f(1), f(2)];
            let class = u32::from_le_bytes(rec[12..16].try_into().unwrap());
            if !position.iter().all(|c| c.is_finite()) {
                return Err(Error::parse(file, i + 1, "non-finite coordinate"));
            }
            let class = ClassId::try_from(class)
                .map_err(|_| Error::parse(file, i + 1, format!("class id {class} out of range")))?;
            points.push(LidarPoint { position, class });
        }
        Ok(Self { points })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub color: [u8; 3],
    pub eval_included: bool,
}

/// Class names, display colors and the evaluation mask.
///
/// Non-void ids are contiguous `0..class_count()`. An entry for the void id
/// may be present for its color but is never evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPalette {
    classes: Vec<ClassInfo>,
    void: Option<ClassInfo>,
}

impl ClassPalette {
    pub fn new(entries: Vec<ClassInfo>) -> Result<Self> {
        let mut classes = Vec::new();
        let mut void = None;
        let mut names = HashSet::new();
        for e in entries {
            if !names.insert(e.name.clone()) {
                return Err(Error::Domain(format!("duplicate class name '{}'", e.name)));
            }
            if e.id == VOID {
                if e.eval_included {
                    return Err(Error::Domain("void class cannot be eval_included".into()));
                }
                void = Some(e);
            } else {
                classes.push(e);
            }
        }
        classes.sort_by_key(|c| c.id);
        if classes.is_empty() {
            return Err(Error::Domain(
                "palette needs at least one non-void class".into(),
            ));
        }
        for (expected, c) in classes.iter().enumerate() {
            if c.id as usize != expected {
                return Err(Error::Domain(format!(
                    "palette ids must be contiguous from 0; found {} at position {expected}",
                    c.id
                )));
            }
        }
        Ok(Self { classes, void })
    }

    /// Palette with `count` generic classes, all evaluated.
    pub fn generic(count: usize) -> Result<Self> {
        if count == 0 || count > VOID as usize {
            return Err(Error::Domain(format!(
                "class count {count} outside 1..=255"
            )));
        }
        let entries = (0..count)
            .map(|i| ClassInfo {
                id: i as ClassId,
                name: format!("class{i}"),
                color: generic_color(i),
                eval_included: true,
            })
            .collect();
        Self::new(entries)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassInfo> {
        if id == VOID {
            self.void.as_ref()
        } else {
            self.classes.get(id as usize)
        }
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn is_evaluated(&self, id: ClassId) -> bool {
        id != VOID
            && self
                .classes
                .get(id as usize)
                .is_some_and(|c| c.eval_included)
    }

    pub fn eval_mask(&self) -> Vec<bool> {
        self.classes.iter().map(|c| c.eval_included).collect()
    }

    pub fn color(&self, id: ClassId) -> [u8; 3] {
        self.get(id).map_or([0, 0, 0], |c| c.color)
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in content_lines(text) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::parse(
                    file,
                    i,
                    format!("expected 6 fields, got {}", fields.len()),
                ));
            }
            let int = |s: &str, what: &str| {
                s.parse::<u8>()
                    .map_err(|_| Error::parse(file, i, format!("invalid {what} '{s}'")))
            };
            let eval_included = match fields[5] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::parse(
                        file,
                        i,
                        format!("invalid eval flag '{other}'"),
                    ))
                }
            };
            entries.push(ClassInfo {
                id: int(fields[0], "class id")?,
                name: fields[1].to_string(),
                color: [
                    int(fields[2], "red")?,
                    int(fields[3], "green")?,
                    int(fields[4], "blue")?,
                ],
                eval_included,
            });
        }
        Self::new(entries).map_err(|e| Error::parse(file, 0, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in self.classes.iter().chain(self.void.iter()) {
            let [r, g, b] = c.color;
            let _ = writeln!(
                out,
                "{} {} {r} {g} {b} {}",
                c.id,
                c.name,
                u8::from(c.eval_included)
            );
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &file_label(path))
    }
}

fn generic_color(i: usize) -> [u8; 3] {
    let h = (i as u32).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: u32,
    pub pose: KeyframePose,
    pub points: Vec<SparsePoint>,
    pub labels_left: Option<LabelMap>,
    pub labels_right: Option<LabelMap>,
    pub image_left: Option<IntensityImage>,
    pub image_right: Option<IntensityImage>,
    pub gt2d: Option<LabelMap>,
    pub lidar: Option<LidarScan>,
}

impl Keyframe {
    pub fn new(id: u32, pose: KeyframePose) -> Self {
        Self {
            id,
            pose,
            points: Vec::new(),
            labels_left: None,
            labels_right: None,
            image_left: None,
            image_right: None,
            gt2d: None,
            lidar: None,
        }
    }

    pub fn labels(&self, side: Side) -> Option<&LabelMap> {
        match side {
            Side::Left => self.labels_left.as_ref(),
            Side::Right => self.labels_right.as_ref(),
        }
    }

    pub fn image(&self, side: Side) -> Option<&IntensityImage> {
        match side {
            Side::Left => self.image_left.as_ref(),
            Side::Right => self.image_right.as_ref(),
        }
    }
}

/// A keyframe sequence with everything the labeling and evaluation stages read.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub rig: StereoRig,
    pub keyframes: Vec<Keyframe>,
    pub palette: ClassPalette,
}

impl SequenceDataset {
    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.rig.intrinsics
    }

    pub fn point_count(&self) -> usize {
        self.keyframes.iter().map(|k| k.points.len()).sum()
    }

    /// True when some keyframe with a left label map lacks its right one.
    pub fn is_mono_only(&self) -> bool {
        self.keyframes
            .iter()
            .any(|k| k.labels_left.is_some() && k.labels_right.is_none())
    }

    pub fn keyframe_index(&self, id: u32) -> Option<usize> {
        self.keyframes.binary_search_by_key(&id, |k| k.id).ok()
    }

    /// Checks every cross-file invariant.
    pub fn validate(&self) -> Result<()> {
        let cam = self.intrinsics();
        let classes = self.palette.class_count();
        let check_map = |map: &LabelMap, what: &str, id: u32| -> Result<()> {
            if map.width() != cam.width || map.height() != cam.height {
                return Err(Error::Domain(format!(
                    "{what} of keyframe {id} is {}x{}, calibration says {}x{}",
                    map.width(),
                    map.height(),
                    cam.width,
                    cam.height
                )));
            }
            if let Some(bad) = map
                .ids()
                .iter()
                .find(|&&c| c != VOID && c as usize >= classes)
            {
                return Err(Error::Domain(format!(
                    "{what} of keyframe {id} contains class {bad}, palette has {classes}"
                )));
            }
            Ok(())
        };
        for (i, kf) in self.keyframes.iter().enumerate() {
            if i > 0 && kf.id <= self.keyframes[i - 1].id {
                return Err(Error::Domain(format!(
                    "keyframe ids must be strictly increasing ({} after {})",
                    kf.id,
                    self.keyframes[i - 1].id
                )));
            }
            for p in &kf.points {
                if p.host_kf != kf.id {
                    return Err(Error::Domain(format!(
                        "point hosted in {} stored under keyframe {}",
                        p.host_kf, kf.id
                    )));
                }
                if !(p.inv_depth.is_finite() && p.inv_depth > 0.0) {
                    return Err(Error::Domain(format!(
                        "keyframe {}: inverse depth {} is not positive",
                        kf.id, p.inv_depth
                    )));
                }
                if !(p.u >= 0.0
                    && p.v >= 0.0
                    && p.u <= (cam.width - 1) as f64
                    && p.v <= (cam.height - 1) as f64)
                {
                    return Err(Error::Domain(format!(
                        "keyframe {}: point ({}, {}) outside the image",
                        kf.id, p.u, p.v
                    )));
                }
            }
            if !kf.points.is_empty() && kf.labels_left.is_none() {
                return Err(Error::Domain(format!(
                    "keyframe {} hosts points but has no left label map",
                    kf.id
                )));
            }
            for (map, what) in [
                (&kf.labels_left, "left label map"),
                (&kf.labels_right, "right label map"),
                (&kf.gt2d, "gt2d map"),
            ] {
                if let Some(map) = map {
                    check_map(map, what, kf.id)?;
                }
            }
            for img in [&kf.image_left, &kf.image_right].into_iter().flatten() {
                if img.width() != cam.width || img.height() != cam.height {
                    return Err(Error::Domain(format!(
                        "image of keyframe {} does not match calibration size",
                        kf.id
                    )));
                }
            }
            if let Some(scan) = &kf.lidar {
                if let Some(p) = scan
                    .points
                    .iter()
                    .find(|p| p.class != VOID && p.class as usize >= classes)
                {
                    return Err(Error::Domain(format!(
                        "lidar scan of keyframe {} contains class {}",
                        kf.id, p.class
                    )));
                }
            }
        }
        Ok(())
    }
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn rel_label(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .map(|p| p.display().to_string())
        .unwrap_or_else(|_| path.display().to_string())
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_floats(line: &str, file: &str, lineno: usize, expected: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(Error::parse(
            file,
            lineno,
            format!("expected {expected} fields"),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(file, lineno, format!("invalid number '{f}'")))
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let to_err = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(to_err)?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(Error::Domain(format!(
            "{}: expected 8-bit single-channel PNG, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

fn optional<T>(path: PathBuf, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.is_file() {
        read(&path).map(Some)
    } else {
        Ok(None)
    }
}

pub fn parse_calibration(text: &str, file: &str) -> Result<StereoRig> {
    let mut lines = content_lines(text);
    let (lineno, line) = lines
        .next()
        .ok_or_else(|| Error::parse(file, 1, "empty calibration"))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(Error::parse(file, lineno, "expected 7 fields"));
    }
    let float = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::parse(file, lineno, format!("invalid number '{s}'")))
    };
    let int = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::parse(file, lineno, format!("invalid image size '{s}'")))
    };
    let cam = CameraIntrinsics::new(
        float(fields[0])?,
        float(fields[1])?,
        float(fields[2])?,
        float(fields[3])?,
        int(fields[4])?,
        int(fields[5])?,
    )
    .map_err(|e| Error::parse(file, lineno, e.to_string()))?;
    StereoRig::new(cam, float(fields[6])?).map_err(|e| Error::parse(file, lineno, e.to_string()))
}

pub fn parse_poses(text: &str, file: &str) -> Result<Vec<(u32, KeyframePose)>> {
    let mut poses: Vec<(u32, KeyframePose)> = Vec::new();
    for (lineno, line) in content_lines(text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(Error::parse(file, lineno, "expected 13 fields"));
        }
        let id = fields[0].parse::<u32>().map_err(|_| {
            Error::parse(file, lineno, format!("invalid keyframe id '{}'", fields[0]))
        })?;
        if let Some((prev, _)) = poses.last() {
            if id <= *prev {
                return Err(Error::parse(
                    file,
                    lineno,
                    "keyframe ids must be strictly increasing",
                ));
            }
        }
        let values = parse_floats(&fields[1..].join(" "), file, lineno, 12)?;
        let values: [f64; 12] = values.try_into().expect("twelve values");
        let pose = KeyframePose::from_row_major(&values)
            .map_err(|e| Error::parse(file, lineno, e.to_string()))?;
        poses.push((id, pose));
    }
    Ok(poses)
}

pub fn parse_points(text: &str, file: &str, host_kf: u32) -> Result<Vec<SparsePoint>> {
    content_lines(text)
        .map(|(lineno, line)| {
            let v = parse_floats(line, file, lineno, 3)?;
            if v[2] <= 0.0 {
                return Err(Error::parse(file, lineno, "inverse depth must be positive"));
            }
            Ok(SparsePoint {
                host_kf,
                u: v[0],
                v: v[1],
                inv_depth: v[2],
            })
        })
        .collect()
}

/// Loads and validates a sequence directory.
pub fn load_sequence(dir: &Path) -> Result<SequenceDataset> {
    let calib_path = dir.join("calib.txt");
    let rig = parse_calibration(&read_text(&calib_path)?, "calib.txt")?;
    let poses = parse_poses(&read_text(&dir.join("poses.txt"))?, "poses.txt")?;
    let palette = ClassPalette::load(&dir.join("palette.txt"))?;

    let mut keyframes = Vec::with_capacity(poses.len());
    for (id, pose) in poses {
        let mut kf = Keyframe::new(id, pose);
        let points_path = dir.join("points").join(format!("{id}.txt"));
        if points_path.is_file() {
            kf.points = parse_points(&read_text(&points_path)?, &rel_label(dir, &points_path), id)?;
        }
        let png = |sub: &str| dir.join(sub).join(format!("{id}.png"));
        kf.labels_left = optional(png("labels/left"), LabelMap::read_png)?;
        kf.labels_right = optional(png("labels/right"), LabelMap::read_png)?;
        kf.image_left = optional(png("images/left"), IntensityImage::read_png)?;
        kf.image_right = optional(png("images/right"), IntensityImage::read_png)?;
        kf.gt2d = optional(png("gt2d"), LabelMap::read_png)?;
        let lidar_path = dir.join("lidar").join(format!("{id}.bin"));
        kf.lidar = optional(lidar_path.clone(), |p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            LidarScan::from_bytes(&bytes, &rel_label(dir, &lidar_path))
        })?;
        keyframes.push(kf);
    }

    let ds = SequenceDataset {
        rig,
        keyframes,
        palette,
    };
    ds.validate()?;
    Ok(ds)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `ds` in the sequence directory format; optional components are only
/// written when present.
pub fn save_sequence(ds: &SequenceDataset, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let cam = ds.intrinsics();
    write_text(
        &dir.join("calib.txt"),
        &format!(
            "{} {} {} {} {} {} {}\n",
            cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, ds.rig.baseline
        ),
    )?;
    write_text(&dir.join("palette.txt"), &ds.palette.to_text())?;

    let mut poses = String::new();
    for kf in &ds.keyframes {
        let _ = write!(poses, "{}", kf.id);
        for v in kf.pose.to_row_major() {
            let _ = write!(poses, " {v}");
        }
        poses.push('\n');
    }
    write_text(&dir.join("poses.txt"), &poses)?;

    let mut created = HashSet::new();
    let mut subdir = |sub: &str| -> Result<PathBuf> {
        let path = dir.join(sub);
        if created.insert(sub.to_string()) {
            ensure_dir(&path)?;
        }
        Ok(path)
    };
    for kf in &ds.keyframes {
        let id = kf.id;
        if !kf.points.is_empty() {
            let mut text = String::with_capacity(kf.points.len() * 32);
            for p in &kf.points {
                let _ = writeln!(text, "{} {} {}", p.u, p.v, p.inv_depth);
            }
            write_text(&subdir("points")?.join(format!("{id}.txt")), &text)?;
        }
        for (map, sub) in [
            (&kf.labels_left, "labels/left"),
            (&kf.labels_right, "labels/right"),
            (&kf.gt2d, "gt2d"),
        ] {
            if let Some(map) = map {
                map.write_png(&subdir(sub)?.join(format!("{id}.png")))?;
            }
        }
        for (img, sub) in [
            (&kf.image_left, "images/left"),
            (&kf.image_right, "images/right"),
        ] {
            if let Some(img) = img {
                img.write_png(&subdir(sub)?.join(format!("{id}.png")))?;
            }
        }
        if let Some(scan) = &kf.lidar {
            let path = subdir("lidar")?.join(format!("{id}.bin"));
            fs::write(&path, scan.to_bytes()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> SequenceDataset {
        let cam = CameraIntrinsics::new(50.0, 50.0, 16.0, 12.0, 32, 24).unwrap();
        let rig = StereoRig::new(cam, 0.5).unwrap();
        let palette = ClassPalette::generic(3).unwrap();
        let mut keyframes = Vec::new();
        for id in [0u32, 1, 5] {
            let pose = KeyframePose::from_axis_angle(
                nalgebra::Vector3::new(0.1, 1.0, 0.0),
                0.05 * id as f64,
                nalgebra::Vector3::new(0.1 * id as f64, 0.0, id as f64 / 3.0),
            );
            let mut kf = Keyframe::new(id, pose);
            kf.points = vec![
                SparsePoint {
                    host_kf: id,
                    u: 3.25,
                    v: 4.5,
                    inv_depth: 0.1 / 3.0,
                },
                SparsePoint {
                    host_kf: id,
                    u: 20.0,
                    v: 11.0,
                    inv_depth: 0.7,
                },
            ];
            let mut left = LabelMap::uniform(32, 24, 1);
            left.set(3, 3, VOID);
            kf.labels_left = Some(left);
            kf.labels_right = Some(LabelMap::uniform(32, 24, 2));
            kf.gt2d = Some(LabelMap::uniform(32, 24, 0));
            kf.image_left =
                Some(IntensityImage::from_fn(32, 24, |x, y| (x * 3 + y) as f32).unwrap());
            kf.lidar = Some(LidarScan {
                points: vec![LidarPoint {
                    position: [0.25, -1.5, 12.125],
                    class: 2,
                }],
            });
            keyframes.push(kf);
        }
        SequenceDataset {
            rig,
            keyframes,
            palette,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&ds, dir.path()).unwrap();
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert!(!back.is_mono_only());
    }

    #[test]
    fn missing_right_labels_flag_mono() {
        let mut ds = tiny_dataset();
        for kf in &mut ds.keyframes {
            kf.labels_right = None;
        }
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&ds, dir.path()).unwrap();
        assert!(!dir.path().join("labels/right").exists());
        let back = load_sequence(dir.path()).unwrap();
        assert!(back.is_mono_only());
    }

    #[test]
    fn short_pose_line_names_file_and_line() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&ds, dir.path()).unwrap();
        let path = dir.path().join("poses.txt");
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("9 1 0 0 0 0 1 0 0 0 0 1\n");
        fs::write(&path, text).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "poses.txt:4: expected 13 fields");
    }

    #[test]
    fn missing_calibration_is_fatal() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("calib.txt")).unwrap();
        assert!(matches!(load_sequence(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn malformed_point_line() {
        let err = parse_points("1 2 0.5\n1 2\n", "points/3.txt", 3).unwrap_err();
        assert_eq!(err.to_string(), "points/3.txt:2: expected 3 fields");
        let err = parse_points("1 2 -0.5\n", "points/3.txt", 3).unwrap_err();
        assert!(err.to_string().starts_with("points/3.txt:1:"));
    }

    #[test]
    fn label_sampling_rule() {
        let mut map = LabelMap::uniform(32, 24, 7);
        assert_eq!(map.sample(Pixel::new(5.0, 5.0)).unwrap(), 7);
        map.set(10, 21, 3);
        assert_eq!(map.sample(Pixel::new(10.4, 20.6)).unwrap(), 3);
        assert_eq!(map.sample(Pixel::new(10.0, 21.0)).unwrap(), 3);
        assert!(map.sample(Pixel::new(31.6, 3.0)).is_err());
        assert!(map.sample(Pixel::new(-0.6, 3.0)).is_err());
    }

    #[test]
    fn bilinear_is_exact_on_affine_images() {
        let img =
            IntensityImage::from_fn(16, 8, |x, y| 2.0 * x as f32 + 0.5 * y as f32 + 3.0).unwrap();
        assert_eq!(img.bilinear(Pixel::new(4.0, 3.0)), Some(12.5));
        let v = img.bilinear(Pixel::new(4.25, 3.5)).unwrap();
        assert!((v - (2.0 * 4.25 + 0.5 * 3.5 + 3.0)).abs() < 1e-12);
        assert_eq!(img.bilinear(Pixel::new(15.0, 7.0)), Some(36.5));
        assert_eq!(img.bilinear(Pixel::new(15.01, 7.0)), None);
    }

    #[test]
    fn palette_rules() {
        let ok = "0 road 128 64 128 1\n1 sidewalk 244 35 232 1\n255 void 0 0 0 0\n";
        let p = ClassPalette::parse(ok, "palette.txt").unwrap();
        assert_eq!(p.class_count(), 2);
        assert!(!p.is_evaluated(VOID));
        assert_eq!(p.by_name("sidewalk").unwrap().id, 1);
        assert_eq!(ClassPalette::parse(&p.to_text(), "palette.txt").unwrap(), p);

        assert!(ClassPalette::parse("0 a 0 0 0 1\n0 b 0 0 0 1\n", "palette.txt").is_err());
        assert!(ClassPalette::parse("0 a 0 0 0 1\n1 a 0 0 0 1\n", "palette.txt").is_err());
        assert!(ClassPalette::parse("0 a 0 0 0 1\n255 void 0 0 0 1\n", "palette.txt").is_err());
        assert!(ClassPalette::parse("0 a 0 0 0 1\n2 b 0 0 0 1\n", "palette.txt").is_err());
    }

    #[test]
    fn validate_catches_bad_label_values() {
        let mut ds = tiny_dataset();
        ds.keyframes[0].labels_left.as_mut().unwrap().set(0, 0, 9);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn lidar_bytes_round_trip() {
        let scan = LidarScan {
            points: vec![
                LidarPoint {
                    position: [1.0, 2.0, 3.0],
                    class: 4,
                },
                LidarPoint {
                    position: [-0.5, 0.0, 99.5],
                    class: VOID,
                },
            ],
        };
        let bytes = scan.to_bytes();
        assert_eq!(bytes.len(), 32);
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(LidarScan::from_bytes(&bytes, "x.bin").unwrap(), scan);
        assert!(LidarScan::from_bytes(&bytes[..20], "x.bin").is_err());
    }
}
