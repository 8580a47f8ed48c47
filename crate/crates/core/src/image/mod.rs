//! Image I/O, ground-truth label decomposition, synthetic rain and dataset
//! handling.

mod dataset;
mod filter;
mod io;
mod rain;
pub mod synthetic;

pub use dataset::{sample_patches, Batch, Dataset, DatasetManifest, LoadedPair, TrainingSample};
pub use filter::{decompose_label, gaussian_kernel_1d, lowpass, LOWPASS_SIGMA, LOWPASS_SIZE};
pub use io::{display_to_signed, encode_png, load_image, save_image, signed_to_display};
pub use rain::{
    rain_layer, streak_count, streaks, synthesize_rain, RainParams, Streak, MAX_JITTER_DEGREES,
};
