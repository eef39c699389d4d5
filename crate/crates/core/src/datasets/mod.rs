//! Seeded generators: Toy-Gaussian with its exact Bayes posterior, label
//! noise, the Toy256 mapping family and uniform 2-gram corpora.

mod mappings;
mod toy_gaussian;
mod two_gram;

pub use mappings::{
    classify_assignment, code_bits, enumerate_mappings, object_attributes, write_mappings_json, Encoding, MappingClass, MappingSpec,
    Toy256Inputs, OBJECTS,
};
pub use toy_gaussian::{
    bayes_posterior, difficulty_group, flip_labels, flip_labels_indexed, gen_toy_gaussian, stratified_split, write_examples_csv, Difficulty,
    LabeledExample, ToyGaussian, ToyGaussianSpec, DEFAULT_THRESHOLDS,
};
pub use two_gram::{gen_two_gram, TwoGramData, TwoGramSpec};
