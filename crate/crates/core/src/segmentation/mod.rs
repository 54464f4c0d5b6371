//! Target extraction and the search restrictions derived from it.

mod augment;
mod constraints;
mod discs;
mod unet;

pub use augment::{augment_dataset, AugmentPolicy, JointTransform};
pub use constraints::{dilate, mask_to_search_constraints, SearchConstraints};
pub use discs::{disc_scene, disc_with_area, render_discs, Disc};
pub use unet::{
    keep_largest_component, segment, train_segmentation, SegmentationSchedule, SegmentationTrace, UNet, UNetConfig,
    GRANULE, LEVELS,
};

/// Dilation applied to masks before they restrict stereo search.
pub const DEFAULT_DILATION: usize = 4;
