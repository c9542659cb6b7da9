use std::path::Path;

use serde::Deserialize;

use super::windows::{BoxRecord, BoxSource, WindowsRecord};
use super::IoError;
use crate::things::{ImageMeta, RawBox};

/// Axis-aligned bounding rectangle of a polygon.
pub fn polygon_to_bbox(points: &[(f64, f64)]) -> Result<RawBox, IoError> {
    if points.len() < 3 {
        return Err(IoError::InvalidGeometry(format!(
            "a polygon needs at least 3 points (got {})",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(IoError::InvalidGeometry("non-finite polygon point".into()));
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !(x1 > x0 && y1 > y0) {
        return Err(IoError::InvalidGeometry(format!(
            "degenerate polygon with bounding box {}x{}",
            x1 - x0,
            y1 - y0
        )));
    }
    Ok(RawBox::new(x0, y0, x1 - x0, y1 - y0))
}

#[derive(Deserialize)]
struct LabelMeFile {
    #[serde(rename = "imagePath", default)]
    image_path: Option<String>,
    #[serde(rename = "imageWidth")]
    image_width: u32,
    #[serde(rename = "imageHeight")]
    image_height: u32,
    #[serde(default)]
    shapes: Vec<LabelMeShape>,
}

#[derive(Deserialize)]
struct LabelMeShape {
    #[serde(default)]
    label: String,
    points: Vec<(f64, f64)>,
    #[serde(default)]
    shape_type: Option<String>,
}

/// Converts a LabelMe JSON annotation into a windows record: each polygon
/// becomes its bounding box, clipped to the image. Shapes that cannot be
/// boxed are skipped and described in the returned warnings. Object labels,
/// occlusion and attribute flags are ignored.
pub fn labelme_to_record(
    json: &str,
    image_id: Option<&str>,
    scene: Option<&str>,
) -> Result<(WindowsRecord, Vec<String>), IoError> {
    let file: LabelMeFile = serde_json::from_str(json).map_err(|e| IoError::Schema {
        line: e.line(),
        message: e.to_string(),
    })?;
    let id = match (image_id, &file.image_path) {
        (Some(id), _) => id.to_string(),
        (None, Some(p)) => Path::new(p)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        (None, None) => String::new(),
    };
    if id.is_empty() {
        return Err(IoError::Schema {
            line: 1,
            message: "no image id given and no imagePath in the annotation".into(),
        });
    }
    if file.image_width == 0 || file.image_height == 0 {
        return Err(IoError::InvalidGeometry(format!(
            "image dimensions {}x{}",
            file.image_width, file.image_height
        )));
    }
    let meta = ImageMeta::new(id.clone(), file.image_width, file.image_height);
    let mut boxes = Vec::new();
    let mut warnings = Vec::new();
    for (i, shape) in file.shapes.iter().enumerate() {
        let bbox = match shape.shape_type.as_deref().unwrap_or("polygon") {
            "polygon" => polygon_to_bbox(&shape.points),
            "rectangle" if shape.points.len() == 2 => {
                let (a, b) = (shape.points[0], shape.points[1]);
                polygon_to_bbox(&[a, b, (a.0, b.1)])
            }
            other => Err(IoError::InvalidGeometry(format!("unsupported shape type {other:?}"))),
        };
        let clipped = bbox.and_then(|b| {
            b.clip_to(&meta)
                .ok_or_else(|| IoError::InvalidGeometry("shape lies outside the image".into()))
        });
        match clipped {
            Ok(b) => boxes.push(BoxRecord {
                x: b.x,
                y: b.y,
                w: b.width,
                h: b.height,
                color: None,
                source: Some(BoxSource::Annotation),
            }),
            Err(e) => warnings.push(format!("shape {i} ({}): {e}", shape.label)),
        }
    }
    Ok((
        WindowsRecord {
            image_id: id,
            width: file.image_width,
            height: file.image_height,
            scene: scene.map(str::to_string),
            boxes,
        },
        warnings,
    ))
}
