//! Synthetic corpora with planted trope signal, for smoke tests and the
//! trend experiments.
//!
//! Every stream is filler drawn from one shared noise vocabulary. A
//! signal-bearing snippet additionally carries marker tokens of its trope
//! in the character's lines. Within each trope and split, snippets come in
//! blocks of `signal_period` with exactly one signal snippet per block.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::VariantConfig;
use crate::corpus::{tokenize, RawQuote, Split, TropeDescription};
use crate::error::{AmnError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tropes: usize,
    pub train_per_trope: usize,
    pub val_per_trope: usize,
    pub test_per_trope: usize,
    /// One signal snippet per this many; 1 makes every snippet informative.
    pub signal_period: usize,
    pub markers_per_trope: usize,
    /// Marker tokens inserted into a signal snippet.
    pub markers_per_snippet: usize,
    pub noise_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub characters_per_trope: usize,
    pub movies: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tropes: 4,
            train_per_trope: 40,
            val_per_trope: 8,
            test_per_trope: 16,
            signal_period: 1,
            markers_per_trope: 3,
            markers_per_snippet: 2,
            noise_words: 60,
            min_tokens: 4,
            max_tokens: 8,
            characters_per_trope: 4,
            movies: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub quotes: Vec<RawQuote>,
    pub descriptions: Vec<TropeDescription>,
}

pub fn trope_id(t: usize) -> String {
    format!("trope{t:02}")
}

pub fn marker(t: usize, j: usize) -> String {
    format!("mark{t}n{j}")
}

pub fn is_marker(token: &str) -> bool {
    token.starts_with("mark")
}

/// Whether the character lines of `quote` contain a marker token.
pub fn carries_signal(quote: &RawQuote) -> bool {
    tokenize(&quote.char_lines).iter().any(|t| is_marker(t))
}

fn noise_line<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<String> {
    let n = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    (0..n)
        .map(|_| format!("w{}", rng.gen_range(0..cfg.noise_words)))
        .collect()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AmnError::Config(m.into()));
        if self.n_tropes == 0 || self.train_per_trope == 0 {
            return bad("need at least one trope and one training snippet per trope");
        }
        if self.signal_period == 0 || self.markers_per_trope == 0 || self.noise_words == 0 {
            return bad("signal_period, markers_per_trope and noise_words must be positive");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if self.characters_per_trope == 0 || self.movies == 0 {
            return bad("need at least one character per trope and one movie");
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SynthCorpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut movie_of = Vec::new();
        for _ in 0..self.n_tropes * self.characters_per_trope {
            movie_of.push(rng.gen_range(0..self.movies));
        }
        let mut quotes = Vec::new();
        for (split, per) in [
            (Split::Train, self.train_per_trope),
            (Split::Val, self.val_per_trope),
            (Split::Test, self.test_per_trope),
        ] {
            for t in 0..self.n_tropes {
                let mut signal = vec![false; per];
                for block in signal.chunks_mut(self.signal_period) {
                    let i = rng.gen_range(0..block.len());
                    block[i] = true;
                }
                for &sig in &signal {
                    let mut d = noise_line(self, &mut rng);
                    if sig {
                        for _ in 0..self.markers_per_snippet.max(1) {
                            let pos = rng.gen_range(0..=d.len());
                            d.insert(pos, marker(t, rng.gen_range(0..self.markers_per_trope)));
                        }
                    }
                    let c = rng.gen_range(0..self.characters_per_trope);
                    let ci = t * self.characters_per_trope + c;
                    quotes.push(RawQuote {
                        trope_id: trope_id(t),
                        character: format!("char{ci}"),
                        movie: format!("movie{}", movie_of[ci]),
                        char_lines: d.join(" "),
                        context: noise_line(self, &mut rng).join(" "),
                        others_lines: noise_line(self, &mut rng).join(" "),
                        split,
                    });
                }
            }
        }
        let descriptions = (0..self.n_tropes)
            .map(|t| {
                let mut words: Vec<String> =
                    (0..self.markers_per_trope).map(|j| marker(t, j)).collect();
                words.extend(noise_line(self, &mut rng).into_iter().take(2));
                words.shuffle(&mut rng);
                TropeDescription {
                    trope_id: trope_id(t),
                    description: words.join(" "),
                }
            })
            .collect();
        Ok(SynthCorpus {
            quotes,
            descriptions,
        })
    }
}

/// Small model dimensions shared by the synthetic experiments.
fn experiment_dims(cfg: &mut VariantConfig) {
    cfg.vocab_size = 200;
    cfg.seq_len = 12;
    cfg.d_emb = 16;
    cfg.d_h = 16;
    cfg.d_a = 32;
    cfg.d_v = 16;
    cfg.mem_size = 32;
    cfg.top_k = 4;
    cfg.desc_proj_dim = 8;
    cfg.adam.lr = 5e-3;
}

/// The default four-trope corpus with a marker in every snippet.
pub fn overfit_corpus(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        ..SynthConfig::default()
    }
}

pub fn overfit_config(seed: u64) -> VariantConfig {
    let mut cfg = VariantConfig::default()
        .with_variant("attn_3")
        .expect("valid variant name");
    experiment_dims(&mut cfg);
    cfg.epochs = 200;
    cfg.seed = seed;
    cfg
}

/// Twelve tropes, one signal snippet in four. With few tropes a model can
/// recognise one of them by the absence of any marker, and its batches then
/// say nothing about where attention lands.
pub fn sparse_signal_corpus(seed: u64) -> SynthConfig {
    SynthConfig {
        n_tropes: 12,
        train_per_trope: 256,
        val_per_trope: 16,
        test_per_trope: 64,
        signal_period: 4,
        max_tokens: 10,
        seed,
        ..SynthConfig::default()
    }
}

pub fn sparse_signal_config(variant: &str, seed: u64) -> Result<VariantConfig> {
    let mut cfg = VariantConfig::default().with_variant(variant)?;
    experiment_dims(&mut cfg);
    cfg.epochs = 800;
    cfg.seed = seed;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_signal_per_block() {
        let cfg = SynthConfig {
            signal_period: 4,
            train_per_trope: 16,
            ..SynthConfig::default()
        };
        let corpus = cfg.generate().unwrap();
        let train: Vec<&RawQuote> = corpus
            .quotes
            .iter()
            .filter(|q| q.split == Split::Train && q.trope_id == trope_id(1))
            .collect();
        assert_eq!(train.len(), 16);
        for block in train.chunks(4) {
            assert_eq!(block.iter().filter(|q| carries_signal(q)).count(), 1);
        }
        for q in &train {
            for tok in tokenize(&q.char_lines).iter().filter(|t| is_marker(t)) {
                assert!(tok.starts_with("mark1n"));
            }
            assert!(!tokenize(&q.context).iter().any(|t| is_marker(t)));
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = cfg.generate().unwrap();
        let b = cfg.generate().unwrap();
        assert_eq!(a.quotes, b.quotes);
        assert_eq!(a.quotes.len(), 4 * (40 + 8 + 16));
        assert!(a.quotes.iter().all(carries_signal));
        assert_eq!(a.descriptions.len(), 4);
        assert!(a.descriptions[2].description.contains("mark2n0"));
        assert!(a.quotes.iter().all(|q| q.validate().is_ok()));
    }

    #[test]
    fn rejects_degenerate_settings() {
        let cfg = SynthConfig {
            signal_period: 0,
            ..SynthConfig::default()
        };
        assert!(cfg.generate().is_err());
    }
}
