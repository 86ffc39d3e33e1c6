//! Frame preprocessing: HoG descriptors, face cropping and augmentation.

mod augment;
mod crop;
mod frame;
mod hog;

pub use augment::{augment, parse_augment_spec, AugmentOp, AugmentedSet};
pub use crop::{
    crop_face, FaceDetector, FixedRectDetector, FullFrameDetector, NoFaceDetector, Rect,
};
pub use frame::{decode_pgm, encode_pgm, read_pgm, write_pgm, Frame};
pub use hog::{
    bin_weights, cell_histograms, compute_gradients, hog_descriptor, normalize_blocks,
    write_descriptors_csv, CellHistograms, ChannelPolicy, GradientField, HogConfig, HogDescriptor,
};
