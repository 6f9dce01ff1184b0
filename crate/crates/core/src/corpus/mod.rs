//! Corpus formats, label-shuffling augmentation and the synthetic generator.

mod augment;
mod formats;
mod synth;

pub use augment::{
    augment_corpus, check_probability, shuffle_labels, shuffle_labels_with, DEFAULT_SHUFFLE_PROB,
    SHUFFLED_SUFFIX,
};
pub use formats::{
    format_manifest, load_corpus, parse_manifest, read_features, read_manifest, write_features,
    write_manifest, Features, ManifestEntry, Utterance, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use synth::{
    generate_synthetic_corpus, Realization, Split, SynthSpec, SynthUtterance, SyntheticCorpus,
    SUBSET_MANIFESTS,
};
