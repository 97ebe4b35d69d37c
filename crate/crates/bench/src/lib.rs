//! Fixtures shared by the criterion benches.

use amn_core::corpus::EncodedSnippet;
use amn_core::synth::{sparse_signal_config, sparse_signal_corpus};
use amn_core::trainer::prepare;
use amn_core::{Dataset, PersonaModel, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub data: Dataset,
    pub model: PersonaModel<f32>,
}

/// An untrained model of `variant` on the sparse-signal synthetic corpus,
/// at the dimensions the trend experiments use.
pub fn fixture(variant: &str) -> Fixture {
    let corpus = sparse_signal_corpus(0)
        .generate()
        .expect("valid synthetic config");
    let cfg = sparse_signal_config(variant, 0).expect("known variant");
    let (data, model) =
        prepare(&cfg, &corpus.quotes, &corpus.descriptions, None).expect("fixture builds");
    Fixture { data, model }
}

impl Fixture {
    /// The first `N_diag` training snippets of `trope`.
    pub fn batch(&self, trope: usize) -> Vec<&EncodedSnippet> {
        let pool = self.data.pool(Split::Train, trope);
        (0..self.model.cfg.n_diag)
            .map(|i| &self.data.snippets[pool[i % pool.len()]])
            .collect()
    }
}

pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}
