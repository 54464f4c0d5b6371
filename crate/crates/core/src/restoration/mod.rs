//! Bubble and projected-pattern synthesis, and the three-resolution
//! removal network.

mod bubbles;
mod dataset;
mod pattern;
mod removal;

pub use bubbles::{synth_bubbles, Bubble, BubbleAmount, BubbleDistance, BubbleField, BubbleProfile};
pub use dataset::{
    bubble_sample, desk_pattern, mean_abs_residual, pattern_sample, read_manifest, task_sample, write_manifest,
    ManifestEntry, RestorationSample, Task,
};
pub use pattern::{pattern_layer, synth_pattern, ProjectedPattern};
pub use removal::{
    augment_pairs, removal_forward, train_removal, RemovalConfig, RemovalNet, RemovalSchedule, RemovalTrace,
};
