//! Fixtures shared by the benchmarks.

use tflm_core::corpus::{
    builtin_generator, generate_synthetic_corpus, SynthOptions, SyntheticCorpus,
};

/// A deterministic corpus from the built-in generator.
pub fn corpus(count: usize, seed: u64) -> SyntheticCorpus {
    let options = SynthOptions {
        count,
        max_depth: 30,
        seed,
        require_bug: true,
    };
    generate_synthetic_corpus(&builtin_generator(), &options).expect("built-in generator samples")
}
