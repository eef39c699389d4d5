//! Simplicity bias on the Toy256 family: description lengths, complexity
//! bounds, topological similarity and how they line up with learning speed.

mod coding;
mod measures;
mod toy256;

pub use coding::{decode, describe_and_encode, huffman_bits, huffman_lengths, DescriptionForm, MappingDescription, Token};
pub use measures::{hamming, kc_bounds, topsim, KcBounds};
pub use toy256::{
    mapping_points, mapping_topsim, run_seed, run_toy256, summarize, write_records_csv, write_summary_json, ExperimentRecord, SeedSummary, Toy256Config,
    Toy256Report,
};
