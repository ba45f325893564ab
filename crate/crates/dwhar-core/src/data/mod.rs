//! Data pipeline: recordings, manifests, windowing, normalization, splits,
//! and the synthetic generator.

pub mod recording;
pub mod split;
pub mod synth;
pub mod windows;

pub use recording::{
    channel_names, load_recordings, parse_recording, read_manifest, write_manifest,
    write_recording, Manifest, ManifestEntry, Recording,
};
pub use split::{holdout_split, loso_split, LosoFold};
pub use synth::{synth_class_names, synth_generate, SynthSpec};
pub use windows::{apply_norm_stats, slide_windows, window_recordings, zscore_normalize, SensorBatch};
