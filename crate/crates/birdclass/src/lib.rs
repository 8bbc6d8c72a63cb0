//! Fine-grained bird species classification pipeline.
//!
//! The crate covers the full flow from raw images to an evaluated model:
//! manifest ingestion and stratified splitting ([`dataset`]), per-species
//! data augmentation ([`augment`]), detector-driven ROI cropping
//! ([`detect`]), two-stage transfer training of a compact reference CNN
//! ([`train`]), two-model max-confidence ensemble inference ([`ensemble`]),
//! and confusion-matrix evaluation ([`eval`]). [`pipeline`] wires the
//! stages together behind a single declarative run configuration, and
//! [`synth`] generates a small procedural dataset for exercising the whole
//! thing on a laptop.
//!
//! Data-parallel inner loops (augmentation, batch gradients, batch
//! inference) go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise. Both
//! paths produce identical results.

pub mod augment;
pub mod dataset;
pub mod detect;
pub mod ensemble;
pub mod eval;
pub mod exec;
pub mod pipeline;
pub mod raster;
mod rng;
pub mod synth;
pub mod train;

pub use dataset::{ImageRecord, Manifest, SpeciesLabel, NUM_SPECIES};
pub use raster::Image;
