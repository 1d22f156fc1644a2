//! Stroke-5 sketches, photos, rasterization and the synthetic pair corpus.

mod dataset;
mod raster;
mod stroke;
mod synth;

pub use dataset::{
    normalize_offsets, scale_offsets, Corpus, LabeledPair, LabeledPairSet, UnlabeledPhoto,
    UnlabeledPhotoSet,
};
pub use raster::{
    draw_line, line_pixels, rasterize, rasterize_polyline, RasterConfig, RasterImage,
};
pub use stroke::{PenState, StrokePoint, StrokeSequence, DEFAULT_MAX_LEN};
pub use synth::{
    generate_corpus, generate_synthetic_pair, CorpusSizes, ShapeFamily, ShapeSpec, SyntheticPair,
};
