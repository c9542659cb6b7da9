use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_atomic, IoError};
use crate::color::Color;
use crate::things::{build_syntax, ImageMeta, RawBox, SyntaxMatrix, ThingError};

/// Per-image box cap applied on load unless configured otherwise.
pub const DEFAULT_BOX_CAP: usize = 200;

const EDGE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSource {
    Annotation,
    Proposal,
}

/// One box of a windows file, top-left corner in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<BoxSource>,
}

impl BoxRecord {
    pub fn raw(&self) -> RawBox {
        RawBox {
            x: self.x,
            y: self.y,
            width: self.w,
            height: self.h,
            color: self.color,
        }
    }

    fn check(&self, width: u32, height: u32) -> Result<(), String> {
        let vals = [self.x, self.y, self.w, self.h];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("non-positive size {}x{}", self.w, self.h));
        }
        if self.x < -EDGE_SLACK
            || self.y < -EDGE_SLACK
            || self.x + self.w > width as f64 + EDGE_SLACK
            || self.y + self.h > height as f64 + EDGE_SLACK
        {
            return Err(format!(
                "box ({}, {}, {}x{}) exceeds the {width}x{height} image",
                self.x, self.y, self.w, self.h
            ));
        }
        Ok(())
    }
}

/// One image of a windows file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowsRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default)]
    pub boxes: Vec<BoxRecord>,
}

impl WindowsRecord {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            image_id: self.image_id.clone(),
            width: self.width,
            height: self.height,
            scene_label: self.scene.clone(),
        }
    }

    pub fn raw_boxes(&self) -> Vec<RawBox> {
        self.boxes.iter().map(BoxRecord::raw).collect()
    }

    pub fn syntax(&self, pixels: Option<&RgbImage>) -> Result<SyntaxMatrix, ThingError> {
        build_syntax(&self.raw_boxes(), &self.meta(), pixels)
    }

    /// Things syntax, decoding `<images_dir>/<image_id>.{png,jpg,jpeg}` only
    /// when some box has no color label.
    pub fn syntax_with_images(&self, images_dir: Option<&Path>) -> Result<SyntaxMatrix, IoError> {
        if self.boxes.iter().all(|b| b.color.is_some()) {
            return Ok(self.syntax(None)?);
        }
        let missing = |message: String| IoError::Pixels {
            image_id: self.image_id.clone(),
            message,
        };
        let dir = images_dir.ok_or_else(|| missing("unlabeled boxes and no image directory".into()))?;
        let path = ["png", "jpg", "jpeg"]
            .iter()
            .map(|ext| dir.join(format!("{}.{ext}", self.image_id)))
            .find(|p| p.is_file())
            .ok_or_else(|| missing(format!("unlabeled boxes and no image file in {}", dir.display())))?;
        let img = image::open(&path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
        Ok(self.syntax(Some(&img.to_rgb8()))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep at most this many boxes per image, largest by area first.
    pub box_cap: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            box_cap: Some(DEFAULT_BOX_CAP),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadWarning {
    pub line: usize,
    pub image_id: String,
    pub box_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<WindowsRecord>,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Deserialize)]
struct InBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default)]
    color: Option<i64>,
    #[serde(default)]
    source: Option<BoxSource>,
}

#[derive(Deserialize)]
struct InRecord {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    scene: Option<String>,
    #[serde(default)]
    boxes: Vec<InBox>,
}

fn schema(line: usize, message: impl Into<String>) -> IoError {
    IoError::Schema {
        line,
        message: message.into(),
    }
}

/// Parses one line of a windows file. Blank lines yield `None`. Record-level
/// problems are errors; invalid boxes are dropped and reported as warnings.
pub fn parse_windows_line(
    text: &str,
    line: usize,
    options: &LoadOptions,
) -> Result<Option<(WindowsRecord, Vec<LoadWarning>)>, IoError> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    let rec: InRecord = serde_json::from_str(text).map_err(|e| schema(line, e.to_string()))?;
    if rec.image_id.is_empty() {
        return Err(schema(line, "empty image_id"));
    }
    if rec.width == 0 || rec.height == 0 {
        return Err(schema(line, format!("image dimensions must be at least 1x1 (got {}x{})", rec.width, rec.height)));
    }
    let mut warnings = Vec::new();
    let mut boxes = Vec::with_capacity(rec.boxes.len());
    for (i, b) in rec.boxes.into_iter().enumerate() {
        let color = match b.color {
            None => Ok(None),
            Some(c) => u8::try_from(c)
                .ok()
                .and_then(|c| Color::from_index(c as usize))
                .map(Some)
                .ok_or_else(|| format!("color index {c} outside 0..=10")),
        };
        let checked = color.and_then(|color| {
            let b = BoxRecord {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
                color,
                source: b.source,
            };
            b.check(rec.width, rec.height).map(|_| b)
        });
        match checked {
            Ok(b) => boxes.push(b),
            Err(reason) => {
                log::warn!("line {line}: image {}: dropping box {i}: {reason}", rec.image_id);
                warnings.push(LoadWarning {
                    line,
                    image_id: rec.image_id.clone(),
                    box_index: i,
                    reason,
                });
            }
        }
    }
    if let Some(cap) = options.box_cap {
        if boxes.len() > cap {
            log::info!("line {line}: image {}: keeping the {cap} largest of {} boxes", rec.image_id, boxes.len());
            boxes = largest(boxes, cap);
        }
    }
    let record = WindowsRecord {
        image_id: rec.image_id,
        width: rec.width,
        height: rec.height,
        scene: rec.scene,
        boxes,
    };
    Ok(Some((record, warnings)))
}

// keeps file order among the survivors
fn largest(boxes: Vec<BoxRecord>, cap: usize) -> Vec<BoxRecord> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        let (aa, ab) = (boxes[a].w * boxes[a].h, boxes[b].w * boxes[b].h);
        ab.total_cmp(&aa).then(a.cmp(&b))
    });
    let keep: BTreeSet<usize> = order.into_iter().take(cap).collect();
    boxes
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, b)| b)
        .collect()
}

pub fn read_windows<R: BufRead>(reader: R, options: &LoadOptions) -> Result<LoadReport, IoError> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if let Some((record, warnings)) = parse_windows_line(&text, line, options)? {
            if !seen.insert(record.image_id.clone()) {
                return Err(schema(line, format!("duplicate image_id {:?}", record.image_id)));
            }
            report.records.push(record);
            report.warnings.extend(warnings);
        }
    }
    Ok(report)
}

pub fn load_windows_with(path: &Path, options: &LoadOptions) -> Result<LoadReport, IoError> {
    let file = File::open(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })?;
    read_windows(BufReader::new(file), options)
}

/// Loads a windows file with the default box cap.
pub fn load_windows(path: &Path) -> Result<Vec<WindowsRecord>, IoError> {
    Ok(load_windows_with(path, &LoadOptions::default())?.records)
}

pub fn write_windows<W: Write>(mut writer: W, records: &[WindowsRecord]) -> Result<(), IoError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_windows(path: &Path, records: &[WindowsRecord]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_windows(&mut buf, records)?;
    write_atomic(path, &buf)
}

/// Disjoint holdout and test image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub holdout: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn new(holdout: Vec<String>, test: Vec<String>) -> Result<Self, IoError> {
        let split = DatasetSplit { holdout, test };
        let shared = split.shared_ids();
        if shared > 0 {
            return Err(IoError::OverlappingSplit(shared));
        }
        Ok(split)
    }

    fn shared_ids(&self) -> usize {
        let h: HashSet<&String> = self.holdout.iter().collect();
        self.test.iter().filter(|id| h.contains(id)).count()
    }

    pub fn is_disjoint(&self) -> bool {
        self.shared_ids() == 0
    }

    /// Moves `per_class` randomly chosen images of every scene label into the
    /// holdout; the rest are test images. Unlabeled images form their own
    /// group.
    pub fn holdout_per_class(records: &[WindowsRecord], per_class: usize, seed: u64) -> DatasetSplit {
        let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in records {
            groups
                .entry(r.scene.as_deref().unwrap_or(""))
                .or_default()
                .push(&r.image_id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut holdout = BTreeSet::new();
        for ids in groups.values_mut() {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            holdout.extend(ids.iter().take(per_class).map(|s| s.to_string()));
        }
        let test = records
            .iter()
            .filter(|r| !holdout.contains(&r.image_id))
            .map(|r| r.image_id.clone())
            .collect();
        DatasetSplit {
            holdout: holdout.into_iter().collect(),
            test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> LoadOptions {
        LoadOptions::default()
    }

    #[test]
    fn empty_input() {
        let r = read_windows("".as_bytes(), &opts()).unwrap();
        assert!(r.records.is_empty() && r.warnings.is_empty());
        let r = read_windows("\n  \n".as_bytes(), &opts()).unwrap();
        assert!(r.records.is_empty());
    }

    #[test]
    fn out_of_bounds_box_is_dropped_with_a_warning() {
        let text = r#"{"image_id":"a","width":100,"height":50,"scene":"x","boxes":[
            {"x":0,"y":0,"w":10,"h":10,"color":4},
            {"x":10,"y":10,"w":20,"h":30},
            {"x":95,"y":0,"w":10,"h":10},
            {"x":50,"y":25,"w":50,"h":25,"source":"proposal"}]}"#
            .replace('\n', "");
        let r = read_windows(text.as_bytes(), &opts()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].boxes.len(), 3);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!((r.warnings[0].line, r.warnings[0].box_index), (1, 2));
        assert_eq!(r.records[0].boxes[0].color, Some(Color::Green));
        assert_eq!(r.records[0].boxes[2].source, Some(BoxSource::Proposal));
    }

    #[test]
    fn bad_color_and_size_are_box_level() {
        let text = r#"{"image_id":"a","width":10,"height":10,"boxes":[{"x":0,"y":0,"w":1,"h":1,"color":11},{"x":0,"y":0,"w":0,"h":1},{"x":0,"y":0,"w":1,"h":1,"color":-1}]}"#;
        let r = read_windows(text.as_bytes(), &opts()).unwrap();
        assert!(r.records[0].boxes.is_empty());
        assert_eq!(r.warnings.len(), 3);
    }

    #[test]
    fn schema_errors_carry_the_line() {
        let good = r#"{"image_id":"a","width":10,"height":10,"boxes":[]}"#;
        for bad in [
            r#"{"image_id":"b","width":10}"#,
            r#"{"image_id":"b","width":-3,"height":10}"#,
            r#"{"image_id":"b","width":0,"height":10}"#,
            r#"{"image_id":"","width":1,"height":10}"#,
            r#"{"image_id":"b","width":10,"height":10,"boxes":[{"x":0,"y":0,"w":1}]}"#,
            r#"{"image_id":"b","width":10,"height":10,"boxes":[{"x":0,"y":0,"w":1,"h":1,"source":"magic"}]}"#,
            r#"not json"#,
            r#"{"image_id":"a","width":10,"height":10}"#,
        ] {
            let text = format!("{good}\n\n{bad}\n");
            match read_windows(text.as_bytes(), &opts()) {
                Err(IoError::Schema { line, .. }) => assert_eq!(line, 3, "{bad}"),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn cap_keeps_largest_boxes_in_file_order() {
        let boxes: Vec<BoxRecord> = [3.0, 9.0, 1.0, 5.0, 9.0]
            .iter()
            .map(|&s| BoxRecord { x: 0.0, y: 0.0, w: s, h: 1.0, color: None, source: None })
            .collect();
        let rec = WindowsRecord { image_id: "a".into(), width: 10, height: 10, scene: None, boxes };
        let mut buf = Vec::new();
        write_windows(&mut buf, &[rec]).unwrap();
        let r = read_windows(&buf[..], &LoadOptions { box_cap: Some(3) }).unwrap();
        let widths: Vec<f64> = r.records[0].boxes.iter().map(|b| b.w).collect();
        assert_eq!(widths, [9.0, 5.0, 9.0]);
        let r = read_windows(&buf[..], &LoadOptions { box_cap: None }).unwrap();
        assert_eq!(r.records[0].boxes.len(), 5);
    }

    #[test]
    fn save_load_round_trip() {
        let records = vec![
            WindowsRecord {
                image_id: "img-1".into(),
                width: 640,
                height: 480,
                scene: Some("kitchen".into()),
                boxes: vec![
                    BoxRecord { x: 0.1, y: 1.0 / 3.0, w: 12.25, h: 7.0, color: Some(Color::Red), source: Some(BoxSource::Annotation) },
                    BoxRecord { x: 600.0, y: 400.0, w: 40.0, h: 80.0, color: None, source: None },
                ],
            },
            WindowsRecord { image_id: "img-2".into(), width: 1, height: 1, scene: None, boxes: vec![] },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        save_windows(&path, &records).unwrap();
        assert_eq!(load_windows(&path).unwrap(), records);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_windows(Path::new("/nonexistent/w.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/w.jsonl"));
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let records: Vec<WindowsRecord> = (0..30)
            .map(|i| WindowsRecord {
                image_id: format!("{i}"),
                width: 10,
                height: 10,
                scene: Some(if i % 3 == 0 { "a" } else { "b" }.into()),
                boxes: vec![],
            })
            .collect();
        let s = DatasetSplit::holdout_per_class(&records, 4, 1);
        assert_eq!(s.holdout.len(), 8);
        assert_eq!(s.test.len(), 22);
        assert!(s.is_disjoint());
        assert_eq!(s, DatasetSplit::holdout_per_class(&records, 4, 1));
        assert!(matches!(
            DatasetSplit::new(vec!["1".into()], vec!["1".into(), "2".into()]),
            Err(IoError::OverlappingSplit(1))
        ));
    }
}

#[cfg(test)]
mod pixel_tests {
    use image::Rgb;

    use super::*;

    #[test]
    fn colors_come_from_image_files_when_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let rec = WindowsRecord {
            image_id: "p1".into(),
            width: 40,
            height: 20,
            scene: None,
            boxes: vec![BoxRecord { x: 0.0, y: 0.0, w: 10.0, h: 10.0, color: None, source: None }],
        };
        assert!(matches!(rec.syntax_with_images(None), Err(IoError::Pixels { .. })));
        assert!(matches!(rec.syntax_with_images(Some(dir.path())), Err(IoError::Pixels { .. })));
        // stored at half resolution; box coordinates are rescaled
        RgbImage::from_pixel(20, 10, Rgb([0, 160, 0])).save(dir.path().join("p1.png")).unwrap();
        let w = rec.syntax_with_images(Some(dir.path())).unwrap();
        assert_eq!(w.rows[0].color, Color::Green);
    }
}
