//! The eleven basic color names and nearest-prototype color labeling.
//!
//! Every pixel is converted from sRGB (D65) to CIELAB and assigned to the
//! closest of eleven fixed prototypes. A region's dominant color is the most
//! frequent label, ties going to the lowest index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::things::ThingError;

/// One of the eleven basic color names, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum Color {
    Black = 0,
    Blue = 1,
    Brown = 2,
    Grey = 3,
    Green = 4,
    Orange = 5,
    Pink = 6,
    Purple = 7,
    Red = 8,
    White = 9,
    Yellow = 10,
}

impl Color {
    pub const COUNT: usize = 11;

    pub const ALL: [Color; Color::COUNT] = [
        Color::Black,
        Color::Blue,
        Color::Brown,
        Color::Grey,
        Color::Green,
        Color::Orange,
        Color::Pink,
        Color::Purple,
        Color::Red,
        Color::White,
        Color::Yellow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Color> {
        Color::ALL.get(index).copied()
    }

    /// Lower-case color word.
    pub fn name(self) -> &'static str {
        match self {
            Color::Black => "black",
            Color::Blue => "blue",
            Color::Brown => "brown",
            Color::Grey => "grey",
            Color::Green => "green",
            Color::Orange => "orange",
            Color::Pink => "pink",
            Color::Purple => "purple",
            Color::Red => "red",
            Color::White => "white",
            Color::Yellow => "yellow",
        }
    }

    /// Color index scaled into [0, 1], the numeric form used as the fifth
    /// feature dimension.
    pub fn as_feature(self) -> f64 {
        self.index() as f64 / 10.0
    }

    /// sRGB prototype for this color name.
    pub fn prototype_rgb(self) -> [u8; 3] {
        PROTOTYPES_RGB[self.index()]
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Color> for u8 {
    fn from(c: Color) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Color {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Color::from_index(v as usize).ok_or_else(|| format!("color index {v} outside 0..=10"))
    }
}

impl FromStr for Color {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let lower = if lower == "gray" { "grey".to_string() } else { lower };
        Color::ALL
            .iter()
            .copied()
            .find(|c| c.name() == lower)
            .ok_or_else(|| format!("unknown color name {s:?}"))
    }
}

// sRGB prototypes; CIELAB values are derived from these at startup.
const PROTOTYPES_RGB: [[u8; 3]; Color::COUNT] = [
    [0, 0, 0],       // black
    [0, 0, 255],     // blue
    [139, 69, 19],   // brown
    [128, 128, 128], // grey
    [0, 160, 0],     // green
    [255, 140, 0],   // orange
    [255, 150, 200], // pink
    [128, 0, 160],   // purple
    [220, 20, 20],   // red
    [255, 255, 255], // white
    [255, 230, 0],   // yellow
];

fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Converts an sRGB triple to CIELAB under the D65 white point.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);

    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;

    const XN: f64 = 0.950_47;
    const YN: f64 = 1.0;
    const ZN: f64 = 1.088_83;

    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }

    let fx = f(x / XN);
    let fy = f(y / YN);
    let fz = f(z / ZN);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn prototypes_lab() -> &'static [[f64; 3]; Color::COUNT] {
    use std::sync::OnceLock;
    static LAB: OnceLock<[[f64; 3]; Color::COUNT]> = OnceLock::new();
    LAB.get_or_init(|| PROTOTYPES_RGB.map(srgb_to_lab))
}

/// Nearest prototype (Euclidean distance in CIELAB) for a single pixel.
pub fn nearest_color(rgb: [u8; 3]) -> Color {
    let lab = srgb_to_lab(rgb);
    let mut best = Color::Black;
    let mut best_d = f64::INFINITY;
    for (c, p) in Color::ALL.iter().zip(prototypes_lab()) {
        let d = (lab[0] - p[0]).powi(2) + (lab[1] - p[1]).powi(2) + (lab[2] - p[2]).powi(2);
        // strict comparison keeps the lowest index on ties
        if d < best_d {
            best_d = d;
            best = *c;
        }
    }
    best
}

/// Dominant color of a region: the mode of per-pixel nearest prototypes.
pub fn dominant_color<I>(pixels: I) -> Result<Color, ThingError>
where
    I: IntoIterator<Item = [u8; 3]>,
{
    let mut counts = [0usize; Color::COUNT];
    let mut cache = std::collections::HashMap::new();
    let mut total = 0usize;
    for px in pixels {
        let c = *cache.entry(px).or_insert_with(|| nearest_color(px));
        counts[c.index()] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(ThingError::EmptyRegion);
    }
    let mut best = 0;
    for (i, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = i;
        }
    }
    Ok(Color::ALL[best])
}
