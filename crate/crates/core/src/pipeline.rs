//! Orchestration shared by the command-line tool: labeling modes, the text
//! formats for per-point labels and ground truth, and pooled evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::covisibility::Mode;
use crate::dataset::{ClassId, ClassPalette, SequenceDataset};
use crate::error::{Error, Result};
use crate::export;
use crate::gt_fusion::{ExclusionReason, GroundTruth, GroundTruthAssignment};
use crate::metrics::ConfusionMatrix;
use crate::tcl::{self, PointLabels, TclConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Baseline,
    TclMono,
    TclStereo,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::TclMono => "tcl-mono",
            RunMode::TclStereo => "tcl-stereo",
        }
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(RunMode::Baseline),
            "tcl-mono" => Ok(RunMode::TclMono),
            "tcl-stereo" => Ok(RunMode::TclStereo),
            other => Err(format!(
                "unknown mode '{other}' (baseline, tcl-mono, tcl-stereo)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    /// `mode` inside is overridden by `RunConfig::mode`.
    pub tcl: TclConfig,
    /// Class names to keep in the exported map.
    pub filter: Option<Vec<String>>,
    pub out: PathBuf,
    /// Defaults to `labels.txt` next to `out`.
    pub labels_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn labels_path(&self) -> PathBuf {
        self.labels_out.clone().unwrap_or_else(|| {
            self.out
                .parent()
                .map_or_else(|| PathBuf::from("labels.txt"), |p| p.join("labels.txt"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub points: usize,
    pub unlabeled: usize,
    pub exported: usize,
    pub map_path: PathBuf,
    pub labels_path: PathBuf,
}

/// Labels every point with the selected mode.
pub fn label(ds: &SequenceDataset, mode: RunMode, tcl_cfg: &TclConfig) -> Result<PointLabels> {
    match mode {
        RunMode::Baseline => tcl::baseline_all_points(ds),
        RunMode::TclMono => tcl::label_all_points(
            ds,
            &TclConfig {
                mode: Mode::Mono,
                ..*tcl_cfg
            },
        ),
        RunMode::TclStereo => tcl::label_all_points(
            ds,
            &TclConfig {
                mode: Mode::Stereo,
                ..*tcl_cfg
            },
        ),
    }
}

/// Labels, exports the map and writes the labels file.
pub fn run(ds: &SequenceDataset, cfg: &RunConfig) -> Result<RunSummary> {
    let filter = cfg
        .filter
        .as_ref()
        .map(|names| export::parse_filter(&names.join(","), &ds.palette))
        .transpose()?;
    log::info!(
        "labeling {} points in {} keyframes ({})",
        ds.point_count(),
        ds.keyframes.len(),
        cfg.mode.as_str()
    );
    let labels = label(ds, cfg.mode, &cfg.tcl)?;
    let cloud = export::build_cloud(ds, &labels)?;
    let exported = match &filter {
        Some(classes) => export::filter_cloud(&cloud, classes).len(),
        None => cloud.len(),
    };
    export::export_ply(&cloud, &cfg.out, filter.as_deref())?;
    let labels_path = cfg.labels_path();
    write_file(&labels_path, &labels_text(ds, &labels))?;
    log::info!("wrote {} and {}", cfg.out.display(), labels_path.display());
    Ok(RunSummary {
        points: labels.len(),
        unlabeled: labels.iter().filter(|(_, _, l)| l.is_none()).count(),
        exported,
        map_path: cfg.out.clone(),
        labels_path,
    })
}

/// Writes `text` to `path`, creating missing parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `kf_id point_index label` per point, `-1` for unlabeled.
pub fn labels_text(ds: &SequenceDataset, labels: &PointLabels) -> String {
    let mut out = String::new();
    for (k, i, l) in labels.iter() {
        let id = ds.keyframes[k].id;
        match l {
            Some(c) => writeln!(out, "{id} {i} {c}"),
            None => writeln!(out, "{id} {i} -1"),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// `kf_id point_index gt_label_or_-1 reason` per point; `reason` is `ok` for
/// labeled points.
pub fn gt_text(ds: &SequenceDataset, gt: &GroundTruthAssignment) -> String {
    let mut out = String::new();
    for (k, i, g) in gt.iter() {
        let id = ds.keyframes[k].id;
        match g {
            GroundTruth::Label(c) => writeln!(out, "{id} {i} {c} ok"),
            GroundTruth::Excluded(r) => writeln!(out, "{id} {i} -1 {r}"),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

type PointKey = (u32, usize);

fn parse_label_field(field: &str, file: &str, line: usize) -> Result<Option<ClassId>> {
    if field == "-1" {
        return Ok(None);
    }
    field
        .parse::<ClassId>()
        .map(Some)
        .map_err(|_| Error::parse(file, line, format!("invalid label '{field}'")))
}

fn parse_key(fields: &[&str], file: &str, line: usize) -> Result<PointKey> {
    let kf = fields[0]
        .parse()
        .map_err(|_| Error::parse(file, line, format!("invalid keyframe id '{}'", fields[0])))?;
    let idx = fields[1]
        .parse()
        .map_err(|_| Error::parse(file, line, format!("invalid point index '{}'", fields[1])))?;
    Ok((kf, idx))
}

pub fn parse_labels(text: &str, file: &str) -> Result<BTreeMap<PointKey, Option<ClassId>>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::parse(file, line, "expected 3 fields"));
        }
        let key = parse_key(&fields, file, line)?;
        if out
            .insert(key, parse_label_field(fields[2], file, line)?)
            .is_some()
        {
            return Err(Error::parse(file, line, "duplicate point"));
        }
    }
    Ok(out)
}

pub fn parse_gt(text: &str, file: &str) -> Result<BTreeMap<PointKey, GroundTruth>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::parse(file, line, "expected 4 fields"));
        }
        let key = parse_key(&fields, file, line)?;
        let gt = match (parse_label_field(fields[2], file, line)?, fields[3]) {
            (Some(c), "ok") => GroundTruth::Label(c),
            (None, reason) => GroundTruth::Excluded(
                reason
                    .parse::<ExclusionReason>()
                    .map_err(|e| Error::parse(file, line, e))?,
            ),
            (Some(_), other) => {
                return Err(Error::parse(
                    file,
                    line,
                    format!("labeled point with reason '{other}'"),
                ))
            }
        };
        if out.insert(key, gt).is_some() {
            return Err(Error::parse(file, line, "duplicate point"));
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<PointKey, Option<ClassId>>> {
    parse_labels(&read_file(path)?, &path.display().to_string())
}

pub fn read_gt(path: &Path) -> Result<BTreeMap<PointKey, GroundTruth>> {
    parse_gt(&read_file(path)?, &path.display().to_string())
}

/// Adds one sequence to a confusion matrix. Every point with a ground-truth
/// label must have an entry in `labels`; unlabeled predictions are skipped
/// unless `strict`.
pub fn accumulate_sequence(
    cm: &mut ConfusionMatrix,
    labels: &BTreeMap<PointKey, Option<ClassId>>,
    gt: &BTreeMap<PointKey, GroundTruth>,
    strict: bool,
) -> Result<()> {
    for (key, g) in gt {
        let Some(truth) = g.label() else { continue };
        let pred = labels.get(key).ok_or_else(|| {
            Error::Config(format!("no label for keyframe {} point {}", key.0, key.1))
        })?;
        match pred {
            Some(p) => cm.accumulate(*p, truth)?,
            None if strict => cm.record_unlabeled(truth)?,
            None => {}
        }
    }
    Ok(())
}

/// Pools several `(labels, gt)` file pairs into one matrix.
pub fn evaluate_files(
    pairs: &[(PathBuf, PathBuf)],
    palette: &ClassPalette,
    strict: bool,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::for_palette(palette);
    for (labels, gt) in pairs {
        accumulate_sequence(&mut cm, &read_labels(labels)?, &read_gt(gt)?, strict)?;
    }
    Ok(cm)
}

/// In-memory variant used by tests and experiments.
pub fn evaluate(
    labels: &PointLabels,
    gt: &GroundTruthAssignment,
    palette: &ClassPalette,
    strict: bool,
) -> Result<ConfusionMatrix> {
    if labels.per_keyframe.len() != gt.per_keyframe.len() {
        return Err(Error::Config(
            "labels and ground truth cover different keyframes".into(),
        ));
    }
    let mut cm = ConfusionMatrix::for_palette(palette);
    for (k, i, g) in gt.iter() {
        let Some(truth) = g.label() else { continue };
        let pred = labels
            .per_keyframe
            .get(k)
            .and_then(|v| v.get(i))
            .ok_or_else(|| {
                Error::Config(format!("no label for keyframe position {k} point {i}"))
            })?;
        match pred {
            Some(p) => cm.accumulate(*p, truth)?,
            None if strict => cm.record_unlabeled(truth)?,
            None => {}
        }
    }
    Ok(cm)
}

/// Fraction of points whose label equals `truth`; unlabeled points count as wrong.
pub fn accuracy(labels: &PointLabels, truth: &[Vec<ClassId>]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (got, want) in labels.per_keyframe.iter().zip(truth) {
        for (g, w) in got.iter().zip(want) {
            total += 1;
            correct += usize::from(*g == Some(*w));
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
