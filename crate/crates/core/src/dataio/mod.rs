//! Dataset manifests, WAV ingestion, noise augmentation and the synthetic
//! keyword corpus used for self-contained runs.

mod augment;
mod dataset;
mod manifest;
pub mod synth;
mod wav;

pub use augment::{mix_at_snr, AugmentSpec, MixResult};
pub use dataset::{keyword_span, labels_for, load_examples, PreparedUtterance};
pub use manifest::{
    duration_outliers, load_manifest, load_snips_metadata, parse_manifest, validate_disjoint,
    write_manifest, Label, ManifestEntry,
};
pub use wav::{read_raw_pcm, read_wav, write_wav};
