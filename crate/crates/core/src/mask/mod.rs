//! Raster and box algebra: annotation conversions, multi-class pseudo-mask
//! assembly, overlap resolution and segmentation metrics. Everything here is
//! a pure function of its inputs.

mod metrics;
mod ops;
mod types;

pub use metrics::{miou, ConfusionCounts, IoUReport};
pub use ops::{
    assemble_multiclass, box_fill_mask, box_map, psi, tight_box, OverlapRate, PROB_SUM_TOLERANCE,
};
pub use types::{BinaryMask, ClassBoxMap, ClassIndexMask, InstanceBox, PixelLabels};
