use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::things::{build_syntax, ImageMeta, RawBox, SyntaxMatrix, ThingError};

/// Longest image side after the rescale that precedes noise injection.
pub const NOISE_SCALE_PX: f64 = 320.0;

/// Noise levels in pixels used by the robustness sweeps.
pub const NOISE_GRID: [f64; 7] = [2.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0];

/// Box fields that receive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseTargets {
    pub x: bool,
    pub y: bool,
    pub width: bool,
    pub height: bool,
}

impl NoiseTargets {
    pub const ALL: NoiseTargets = NoiseTargets {
        x: true,
        y: true,
        width: true,
        height: true,
    };
    pub const POSITION: NoiseTargets = NoiseTargets {
        x: true,
        y: true,
        width: false,
        height: false,
    };
    pub const WIDTH: NoiseTargets = NoiseTargets {
        x: false,
        y: false,
        width: true,
        height: false,
    };
    pub const HEIGHT: NoiseTargets = NoiseTargets {
        x: false,
        y: false,
        width: false,
        height: true,
    };
}

impl fmt::Display for NoiseTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == NoiseTargets::ALL {
            return f.write_str("all");
        }
        let names: Vec<&str> = [(self.x, "x"), (self.y, "y"), (self.width, "w"), (self.height, "h")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for NoiseTargets {
    type Err = String;

    /// `all`, `position`, or fields among x, y, w, h joined by `+`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "all" => return Ok(NoiseTargets::ALL),
            "position" => return Ok(NoiseTargets::POSITION),
            _ => {}
        }
        let mut t = NoiseTargets {
            x: false,
            y: false,
            width: false,
            height: false,
        };
        for part in s.split('+') {
            match part {
                "x" => t.x = true,
                "y" => t.y = true,
                "w" | "width" => t.width = true,
                "h" | "height" => t.height = true,
                other => return Err(format!("unknown noise target {other:?} (expected x, y, w, h, position or all)")),
            }
        }
        Ok(t)
    }
}

/// Where the colors of noisy boxes came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorPath {
    /// Recomputed from the pixels under the moved box.
    Recomputed,
    /// Original labels carried over.
    KeptLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyImage {
    /// The image at its rescaled size.
    pub meta: ImageMeta,
    pub boxes: Vec<RawBox>,
}

/// Rescales the image so its longer side is 320 px, adds zero-mean Gaussian
/// noise of `sigma` pixels to the targeted fields of every box, then clips
/// each box to the image with a 1 px minimum width and height.
pub fn inject_noise(boxes: &[RawBox], meta: &ImageMeta, sigma: f64, seed: u64, targets: NoiseTargets) -> NoisyImage {
    let scale = NOISE_SCALE_PX / meta.width.max(meta.height).max(1) as f64;
    let width = ((meta.width as f64 * scale).round() as u32).max(1);
    let height = ((meta.height as f64 * scale).round() as u32).max(1);
    let sx = width as f64 / meta.width.max(1) as f64;
    let sy = height as f64 / meta.height.max(1) as f64;
    let (iw, ih) = (width as f64, height as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite");
    let mut draw = |on: bool| if on && sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };

    let noisy = boxes
        .iter()
        .map(|b| {
            let x = b.x * sx + draw(targets.x);
            let y = b.y * sy + draw(targets.y);
            let w = (b.width * sx + draw(targets.width)).max(1.0);
            let h = (b.height * sy + draw(targets.height)).max(1.0);
            let (x0, x1) = clip_span(x, w, iw);
            let (y0, y1) = clip_span(y, h, ih);
            RawBox {
                x: x0,
                y: y0,
                width: x1 - x0,
                height: y1 - y0,
                color: b.color,
            }
        })
        .collect();
    NoisyImage {
        meta: ImageMeta {
            width,
            height,
            ..meta.clone()
        },
        boxes: noisy,
    }
}

// clip [start, start+len) to [0, limit) keeping at least one pixel
fn clip_span(start: f64, len: f64, limit: f64) -> (f64, f64) {
    let floor = 1.0f64.min(limit);
    let lo = start.clamp(0.0, limit - floor);
    let hi = (start + len).clamp(lo + floor, limit);
    (lo, hi)
}

/// Things syntax of a noisy image. With pixels, colors are recomputed from
/// the moved boxes; otherwise the original labels are kept.
pub fn noisy_syntax(noisy: &NoisyImage, pixels: Option<&RgbImage>) -> Result<(SyntaxMatrix, ColorPath), ThingError> {
    match pixels {
        Some(img) => {
            let unlabeled: Vec<RawBox> = noisy.boxes.iter().map(|b| RawBox { color: None, ..*b }).collect();
            Ok((build_syntax(&unlabeled, &noisy.meta, Some(img))?, ColorPath::Recomputed))
        }
        None => Ok((build_syntax(&noisy.boxes, &noisy.meta, None)?, ColorPath::KeptLabel)),
    }
}
