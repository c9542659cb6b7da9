//! Example-free scene retrieval from the things syntax of an image: the
//! position, size, aspect ratio and dominant color of its nameless thing
//! windows.
//!
//! Scenes are queried either with abstract statements ("Green small squared
//! thing at top middle"), scored against statement histograms, or with block
//! illustrations, encoded as Fisher vectors over a diagonal GMM.

pub mod analysis;
pub mod color;
pub mod encoder;
pub mod grammar;
pub mod index;
pub mod io;
pub mod retrieval;
pub mod things;

pub use color::Color;
pub use things::{ImageMeta, Property, PropertyMask, RawBox, SyntaxMatrix, ThingWindow};
