use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::windows::{BoxRecord, BoxSource, WindowsRecord};
use crate::color::Color;

/// Built-in synthetic scene classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// Tall things (ratio below 0.2) around the vertical center line.
    Corridor,
    /// Wide things (ratio above 0.8) stacked on three shelf levels.
    Shelfscape,
}

impl Archetype {
    pub const ALL: [Archetype; 2] = [Archetype::Corridor, Archetype::Shelfscape];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Corridor => "corridor",
            Archetype::Shelfscape => "shelfscape",
        }
    }

    fn palette(self) -> &'static [Color] {
        match self {
            Archetype::Corridor => &[Color::Grey, Color::Brown, Color::White, Color::Black],
            Archetype::Shelfscape => &[Color::Red, Color::Orange, Color::Yellow, Color::Pink, Color::Brown],
        }
    }

    fn sample_box<R: Rng>(self, rng: &mut R, width: f64, height: f64) -> BoxRecord {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let (w, h, cx, cy) = match self {
            Archetype::Corridor => {
                let ratio = rng.random_range(0.05..0.19);
                let h = rng.random_range(0.15..0.7) * height;
                let w = (2.0 * ratio * h).min(width);
                let cx = (0.5 + 0.05 * unit.sample(rng)) * width;
                let cy = rng.random_range(0.3..0.7) * height;
                (w, h, cx, cy)
            }
            Archetype::Shelfscape => {
                let ratio: f64 = rng.random_range(0.81..0.97);
                let mut w = rng.random_range(0.1..0.5) * width;
                let mut h = w * 2.0 * (1.0 - ratio);
                if h > height {
                    w *= height / h;
                    h = height;
                }
                let level = [0.25, 0.5, 0.75].choose(rng).copied().unwrap_or(0.5);
                let cx = rng.random_range(0.1..0.9) * width;
                let cy = (level + 0.02 * unit.sample(rng)) * height;
                (w, h, cx, cy)
            }
        };
        // shifting keeps the aspect ratio, clipping would not
        let x = (cx - w / 2.0).clamp(0.0, width - w);
        let y = (cy - h / 2.0).clamp(0.0, height - h);
        BoxRecord {
            x,
            y,
            w,
            h,
            color: self.palette().choose(rng).copied(),
            source: Some(BoxSource::Annotation),
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown archetype {s:?} (expected corridor or shelfscape)"))
    }
}

/// `images_per_class` labeled images per archetype, 5 to 30 boxes each.
/// Every archetype draws from its own stream of the seeded generator, so one
/// class does not change when others are added or removed.
pub fn generate_synthetic(archetypes: &[Archetype], images_per_class: usize, seed: u64) -> Vec<WindowsRecord> {
    let mut out = Vec::with_capacity(archetypes.len() * images_per_class);
    for &arch in archetypes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(arch as u64);
        for i in 0..images_per_class {
            let width: u32 = rng.random_range(480..=800);
            let height: u32 = rng.random_range(360..=640);
            let n = rng.random_range(5..=30);
            let boxes = (0..n)
                .map(|_| arch.sample_box(&mut rng, width as f64, height as f64))
                .collect();
            out.push(WindowsRecord {
                image_id: format!("{}-{i:04}", arch.name()),
                width,
                height,
                scene: Some(arch.name().to_string()),
                boxes,
            });
        }
    }
    out
}
