//! Finite-difference verification of the full model loss.

use crate::autodiff::{finite_difference_check_with, CheckOptions, GradCheckReport};
use crate::config::{VariantConfig, VariantName};
use crate::corpus::{Dataset, EncodedSnippet, Split};
use crate::error::Result;
use crate::model::{PersonaModel, Target};
use crate::objectives::TripletKind;
use crate::synth::SynthConfig;

/// The tiny configuration of `variant` as used for gradient checks.
///
/// Weights are drawn from a wider range than for training so activations
/// and gradients are not vanishingly small, and every margin exceeds the
/// range of cosine differences so each hinge sits in its linear region
/// (away from its kink, with gradient flowing through it).
pub fn gradcheck_config(variant: VariantName) -> VariantConfig {
    let mut cfg = VariantConfig::tiny();
    cfg.set_variant(variant);
    cfg.init_scale = 0.5;
    cfg.margin_t = 2.5;
    cfg.margin_mt = 2.5;
    cfg.margin_mr = 2.5;
    cfg
}

/// Five-point differences with `eps = 1e-3` and at most `2 * max_coords`
/// coordinates per parameter.
pub fn default_check_options(max_coords: Option<usize>) -> CheckOptions {
    CheckOptions {
        eps: 1e-3,
        max_coords,
        seed: 0,
        five_point: true,
    }
}

/// A four-trope synthetic dataset sized for `cfg` and a double-precision
/// model on it.
pub fn gradcheck_fixture(cfg: &VariantConfig) -> Result<(Dataset, PersonaModel<f64>)> {
    let synth = SynthConfig {
        n_tropes: 4,
        train_per_trope: 4,
        val_per_trope: 0,
        test_per_trope: 0,
        noise_words: 30,
        min_tokens: 2,
        max_tokens: cfg.seq_len.max(2),
        seed: cfg.seed,
        ..SynthConfig::default()
    }
    .generate()?;
    let data = Dataset::build(
        &synth.quotes,
        &synth.descriptions,
        cfg.vocab_size,
        cfg.seq_len,
    )?;
    let model = PersonaModel::new(cfg, &data.vocab, &data.catalog, None)?;
    Ok((data, model))
}

/// Checks the training loss of one batch of trope 0 against central
/// differences for every parameter of the variant.
pub fn model_gradcheck(cfg: &VariantConfig, opts: CheckOptions) -> Result<GradCheckReport> {
    let (data, model) = gradcheck_fixture(cfg)?;
    let pool = data.pool(Split::Train, 0);
    let batch: Vec<&EncodedSnippet> = (0..cfg.n_diag)
        .map(|i| &data.snippets[pool[i % pool.len()]])
        .collect();
    let target = Target {
        trope: 0,
        negative: (model.heads.triplet != TripletKind::None).then_some(1),
    };
    finite_difference_check_with(
        |g| {
            let out = model.forward(g, &batch, Some(target))?;
            Ok(out.loss.expect("target given").0)
        },
        &model.store,
        opts,
    )
}
