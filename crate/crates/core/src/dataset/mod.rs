//! Images, label masks and sequence-structured datasets.
//!
//! On disk a dataset is `root/<sequence>/images/*.png` with matching
//! `root/<sequence>/masks/*.png` (same file stem). Masks are single-channel
//! 8-bit rasters holding class IDs directly.

mod loader;
mod mask;
mod overlay;
pub mod synthetic;

pub use loader::{
    load_dataset, split_train_val, Binarized, Frame, FramePaths, FrameSource, Sequence, Sequences,
    SequenceDataset,
};
pub use mask::{
    encode_one_hot, to_binary, ClassMap, ImageTensor, LabelMask, Normalization, OneHotMask,
};
pub use overlay::{render_overlay, Palette};
