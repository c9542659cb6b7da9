//! Things syntax: per-window position, size, aspect ratio and dominant color.
//!
//! A [`RawBox`] in pixel coordinates becomes a resolution-independent
//! [`ThingWindow`]; the windows of one image stack into a [`SyntaxMatrix`].

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::{dominant_color, Color};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThingError {
    #[error("invalid geometry: box dimensions must be positive (got {width}x{height})")]
    NonPositiveDimension { width: f64, height: f64 },
    #[error("invalid geometry: box does not intersect the {image_width}x{image_height} image")]
    OutsideImage { image_width: u32, image_height: u32 },
    #[error("invalid image: dimensions must be at least 1x1 (got {width}x{height})")]
    InvalidImage { width: u32, height: u32 },
    #[error("invalid input: empty pixel region")]
    EmptyRegion,
    #[error("configuration error: box {index} has no color label and no pixels were supplied")]
    MissingColorSource { index: usize },
}

/// Image identity and pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_label: Option<String>,
}

impl ImageMeta {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        ImageMeta {
            image_id: image_id.into(),
            width,
            height,
            scene_label: None,
        }
    }

    pub fn with_scene(mut self, scene: impl Into<String>) -> Self {
        self.scene_label = Some(scene.into());
        self
    }

    fn check(&self) -> Result<(), ThingError> {
        if self.width == 0 || self.height == 0 {
            return Err(ThingError::InvalidImage {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Axis-aligned window in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Color>,
}

impl RawBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        RawBox {
            x,
            y,
            width,
            height,
            color: None,
        }
    }

    pub fn with_color(mut self, color: Color) -> Self {
        self.color = Some(color);
        self
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Intersection with the image rectangle, or `None` when nothing of
    /// positive area remains.
    pub fn clip_to(&self, meta: &ImageMeta) -> Option<RawBox> {
        if ![self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite()) {
            return None;
        }
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.width).min(meta.width as f64);
        let y1 = (self.y + self.height).min(meta.height as f64);
        if x1 - x0 > 0.0 && y1 - y0 > 0.0 {
            Some(RawBox {
                x: x0,
                y: y0,
                width: x1 - x0,
                height: y1 - y0,
                color: self.color,
            })
        } else {
            None
        }
    }
}

/// Aspect-ratio code of a box: 0.5 for squares, below 0.5 for tall boxes and
/// above 0.5 for broad ones. The result lies in (0, 1) and increases with
/// `width / height`.
pub fn aspect_ratio(width: f64, height: f64) -> Result<f64, ThingError> {
    if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
        return Err(ThingError::NonPositiveDimension { width, height });
    }
    if width <= height {
        Ok(0.5 * (width / height))
    } else {
        // extreme aspect ratios would otherwise round up to 1.0
        Ok((1.0 - 0.5 * (height / width)).min(1.0f64.next_down()))
    }
}

/// Resolution-normalized geometry of one box, before a color is attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBox {
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub ratio: f64,
}

impl NormalizedBox {
    pub fn with_color(self, color: Color) -> ThingWindow {
        ThingWindow {
            x: self.x,
            y: self.y,
            size: self.size,
            ratio: self.ratio,
            color,
        }
    }
}

/// Clips `raw` to the image and normalizes center, area and shape by the
/// image dimensions.
pub fn normalize_box(raw: &RawBox, meta: &ImageMeta) -> Result<NormalizedBox, ThingError> {
    meta.check()?;
    if !(raw.width > 0.0 && raw.height > 0.0) {
        return Err(ThingError::NonPositiveDimension {
            width: raw.width,
            height: raw.height,
        });
    }
    let b = raw.clip_to(meta).ok_or(ThingError::OutsideImage {
        image_width: meta.width,
        image_height: meta.height,
    })?;
    let iw = meta.width as f64;
    let ih = meta.height as f64;
    Ok(NormalizedBox {
        x: ((b.x + b.width / 2.0) / iw).clamp(0.0, 1.0),
        y: ((b.y + b.height / 2.0) / ih).clamp(0.0, 1.0),
        size: ((b.width / iw) * (b.height / ih)).clamp(f64::MIN_POSITIVE, 1.0),
        ratio: aspect_ratio(b.width, b.height)?,
    })
}

/// One row of the things syntax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThingWindow {
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub ratio: f64,
    pub color: Color,
}

impl ThingWindow {
    /// The 5-D feature vector `[x, y, size, ratio, color/10]`.
    pub fn features(&self) -> [f64; 5] {
        [self.x, self.y, self.size, self.ratio, self.color.as_feature()]
    }

    pub fn value(&self, property: Property) -> f64 {
        match property {
            Property::Horizontal => self.x,
            Property::Vertical => self.y,
            Property::Size => self.size,
            Property::Ratio => self.ratio,
            Property::Color => self.color.as_feature(),
        }
    }

    /// Window for a block drawn in unit-canvas coordinates.
    pub fn from_unit_block(x: f64, y: f64, w: f64, h: f64, color: Color) -> Result<Self, ThingError> {
        Ok(ThingWindow {
            x: x + w / 2.0,
            y: y + h / 2.0,
            size: w * h,
            ratio: aspect_ratio(w, h)?,
            color,
        })
    }
}

/// The stacked windows of one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntaxMatrix {
    pub image_id: String,
    pub rows: Vec<ThingWindow>,
}

impl SyntaxMatrix {
    pub fn new(image_id: impl Into<String>, rows: Vec<ThingWindow>) -> Self {
        SyntaxMatrix {
            image_id: image_id.into(),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenates the rows of several matrices.
    pub fn merge<'a, I>(image_id: impl Into<String>, parts: I) -> Self
    where
        I: IntoIterator<Item = &'a SyntaxMatrix>,
    {
        let rows = parts.into_iter().flat_map(|m| m.rows.iter().copied()).collect();
        SyntaxMatrix::new(image_id, rows)
    }
}

/// Dominant color of the pixels under `raw`. Pixel coordinates are rescaled
/// when the decoded image size differs from `meta`.
pub fn box_color(raw: &RawBox, meta: &ImageMeta, pixels: &RgbImage) -> Result<Color, ThingError> {
    let (pw, ph) = pixels.dimensions();
    if pw == 0 || ph == 0 {
        return Err(ThingError::EmptyRegion);
    }
    let sx = pw as f64 / meta.width as f64;
    let sy = ph as f64 / meta.height as f64;
    let x0 = ((raw.x * sx).floor().max(0.0) as u32).min(pw - 1);
    let y0 = ((raw.y * sy).floor().max(0.0) as u32).min(ph - 1);
    let x1 = (((raw.x + raw.width) * sx).ceil() as u32).clamp(x0 + 1, pw);
    let y1 = (((raw.y + raw.height) * sy).ceil() as u32).clamp(y0 + 1, ph);
    let region = (y0..y1).flat_map(|yy| (x0..x1).map(move |xx| pixels.get_pixel(xx, yy).0));
    dominant_color(region)
}

/// Builds the syntax matrix of one image, one row per box in input order.
///
/// Colors come from each box's label when present, else from the pixels.
/// Boxes that clip to nothing are dropped with a warning.
pub fn build_syntax(
    boxes: &[RawBox],
    meta: &ImageMeta,
    pixels: Option<&RgbImage>,
) -> Result<SyntaxMatrix, ThingError> {
    meta.check()?;
    let mut rows = Vec::with_capacity(boxes.len());
    for (i, raw) in boxes.iter().enumerate() {
        let geom = match normalize_box(raw, meta) {
            Ok(g) => g,
            Err(e @ (ThingError::OutsideImage { .. } | ThingError::NonPositiveDimension { .. })) => {
                log::warn!("{}: dropping box {i}: {e}", meta.image_id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let color = match (raw.color, pixels) {
            (Some(c), _) => c,
            (None, Some(px)) => {
                let clipped = raw.clip_to(meta).expect("normalize_box accepted the box");
                box_color(&clipped, meta, px)?
            }
            (None, None) => return Err(ThingError::MissingColorSource { index: i }),
        };
        rows.push(geom.with_color(color));
    }
    Ok(SyntaxMatrix::new(meta.image_id.clone(), rows))
}

/// The five window properties, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Horizontal,
    Vertical,
    Size,
    Ratio,
    Color,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::Horizontal,
        Property::Vertical,
        Property::Size,
        Property::Ratio,
        Property::Color,
    ];

    /// The four properties quantized with fitted cut points.
    pub const CONTINUOUS: [Property; 4] = [
        Property::Horizontal,
        Property::Vertical,
        Property::Size,
        Property::Ratio,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Horizontal => "horizontal",
            Property::Vertical => "vertical",
            Property::Size => "size",
            Property::Ratio => "ratio",
            Property::Color => "color",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "horizontal" | "x" => Ok(Property::Horizontal),
            "vertical" | "y" => Ok(Property::Vertical),
            "size" => Ok(Property::Size),
            "ratio" | "shape" => Ok(Property::Ratio),
            "color" | "colour" => Ok(Property::Color),
            other => Err(format!("unknown property {other:?}")),
        }
    }
}

/// A non-empty subset of the five properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Property>", into = "Vec<Property>")]
pub struct PropertyMask(u8);

impl PropertyMask {
    pub const FULL: PropertyMask = PropertyMask(0b1_1111);

    pub fn new<I: IntoIterator<Item = Property>>(props: I) -> Option<Self> {
        let bits = props.into_iter().fold(0u8, |acc, p| acc | (1 << p.index()));
        (bits != 0).then_some(PropertyMask(bits))
    }

    pub fn contains(self, p: Property) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_full(self) -> bool {
        self == Self::FULL
    }

    /// Selected properties in canonical order.
    pub fn properties(self) -> impl Iterator<Item = Property> {
        Property::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl Default for PropertyMask {
    fn default() -> Self {
        Self::FULL
    }
}

impl From<PropertyMask> for Vec<Property> {
    fn from(m: PropertyMask) -> Self {
        m.properties().collect()
    }
}

impl TryFrom<Vec<Property>> for PropertyMask {
    type Error = String;

    fn try_from(v: Vec<Property>) -> Result<Self, Self::Error> {
        PropertyMask::new(v).ok_or_else(|| "property mask must not be empty".to_string())
    }
}

impl fmt::Display for PropertyMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.properties().map(Property::name).collect();
        f.write_str(&names.join("+"))
    }
}
