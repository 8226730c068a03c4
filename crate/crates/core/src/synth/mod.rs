//! Seeded synthetic scenes: textured shapes over cluttered backgrounds, with
//! pixel masks and visible-extent boxes, split into class-disjoint auxiliary
//! and target datasets.

mod dataset;
mod generate;
mod render;
mod shapes;

pub use dataset::{
    image_tensor, read_manifest, read_mask, write_mask, ClassInfo, Dataset, DatasetManifest, Sample, Split, Splits,
};
pub use generate::{generate_pair, subsample_aux, DataConfig};
pub use render::{render_scene, Background, InstanceSpec, ObjectTexture, RenderedScene, SceneSpec, Scribble};
pub use shapes::ShapeKind;
