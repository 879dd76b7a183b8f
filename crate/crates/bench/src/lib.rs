//! Shared fixtures for the benchmarks.

use dapper_core::corpus::Corpus;
use dapper_core::mstep::GlobalState;
use dapper_core::synthgen::{generate, SynthConfig};
use dapper_core::trainer::{init_state, TrainConfig};

/// A synthetic corpus with `k` topics and `p` personas, a matching
/// configuration, and a freshly initialized model.
pub fn fixture(k: usize, p: usize, docs_per_slice: usize) -> (Corpus, TrainConfig, GlobalState) {
    let syn = SynthConfig {
        num_topics: k,
        num_personas: p,
        num_slices: 4,
        num_authors: 50,
        vocab_size: 1000,
        docs_per_slice,
        alpha_offsets: None,
        ..SynthConfig::separable()
    };
    let (corpus, _) = generate(&syn, 0).expect("valid synthetic configuration");
    let config = TrainConfig {
        num_topics: k,
        num_personas: p,
        num_slices: 4,
        ..TrainConfig::default()
    };
    let state = init_state(&corpus, &config, 0).expect("valid configuration");
    (corpus, config, state)
}
