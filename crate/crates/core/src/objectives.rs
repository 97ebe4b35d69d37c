//! Training objectives: cross-entropy over tropes, description triplet
//! losses (plain and memory-mixed), the read-write memory ranking and
//! classification losses, and their softmax-weighted combination.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::config::{BetaMode, MarginMode, MemoryKind, TropeTrip, VariantConfig};
use crate::error::{AmnError, Result};
use crate::memory::{RwMemory, RwRead};
use crate::nn::Linear;

/// Slots of the loss-weight logits.
pub const CE: usize = 0;
pub const TRIPLET: usize = 1;
pub const MR: usize = 2;
pub const MCE: usize = 3;

/// Slots of the margin vector.
pub const MARGIN_T: usize = 0;
pub const MARGIN_MT: usize = 1;
pub const MARGIN_MR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletKind {
    None,
    Trope,
    Memory,
}

/// Which losses contribute, in slot order `[CE, triplet, MR, MCE]`.
pub fn active_losses(cfg: &VariantConfig) -> [bool; 4] {
    let rw = cfg.memory == MemoryKind::Rw;
    [true, cfg.tropetrip != TropeTrip::Off, rw, rw]
}

pub fn triplet_kind(cfg: &VariantConfig) -> TripletKind {
    match (cfg.tropetrip, cfg.uses_memory()) {
        (TropeTrip::Off, _) => TripletKind::None,
        (_, false) => TripletKind::Trope,
        (_, true) => TripletKind::Memory,
    }
}

/// Output heads, margins and loss weights.
#[derive(Clone, Debug)]
pub struct LossHeads {
    pub f_p: Linear,
    pub f_d: Option<Linear>,
    pub f_dm: Option<Linear>,
    pub f_pm: Option<Linear>,
    /// Learnable projection of description embeddings (`-500` variants).
    pub desc_proj: Option<Linear>,
    pub mix_logit: Option<ParamId>,
    /// `[α_T, α_MT, α_MR]`, frozen unless margins are learnable.
    pub margins: ParamId,
    pub beta_logits: ParamId,
    pub active: [bool; 4],
    pub triplet: TripletKind,
    pub n_tropes: usize,
}

impl LossHeads {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        cfg: &VariantConfig,
        n_tropes: usize,
        d_desc: usize,
        rng: &mut R,
    ) -> Self {
        let s = cfg.init_scale;
        let d_z = cfg.persona_dim();
        let triplet = triplet_kind(cfg);
        let f_p = Linear::new(store, "head.f_p", d_z, n_tropes, s, rng);
        let desc_proj = (cfg.tropetrip == TropeTrip::On500)
            .then(|| Linear::new(store, "head.desc_proj", d_desc, cfg.desc_proj_dim, s, rng));
        let d_target = if desc_proj.is_some() {
            cfg.desc_proj_dim
        } else {
            d_desc
        };
        let f_d = (triplet != TripletKind::None)
            .then(|| Linear::new(store, "head.f_d", d_z, d_target, s, rng));
        let (f_dm, mix_logit) = if triplet == TripletKind::Memory {
            (
                Some(Linear::new(store, "head.f_dm", d_z, d_target, s, rng)),
                Some(store.add("head.mix_logit", Tensor::scalar(F::zero()), false)),
            )
        } else {
            (None, None)
        };
        let f_pm = (cfg.memory == MemoryKind::Rw)
            .then(|| Linear::new(store, "head.f_pm", cfg.top_k, n_tropes, s, rng));
        let margins = store.add(
            "head.margins",
            Tensor::row(vec![
                F::c(cfg.margin_t),
                F::c(cfg.margin_mt),
                F::c(cfg.margin_mr),
            ]),
            cfg.margin_mode == MarginMode::Fixed,
        );
        let beta_logits = store.add(
            "head.beta_logits",
            Tensor::zeros(&[1, 4]),
            cfg.beta_mode == BetaMode::Uniform,
        );
        LossHeads {
            f_p,
            f_d,
            f_dm,
            f_pm,
            desc_proj,
            mix_logit,
            margins,
            beta_logits,
            active: active_losses(cfg),
            triplet,
            n_tropes,
        }
    }

    /// Description embedding of a trope in the space the triplet heads map
    /// into.
    pub fn description<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        table: Var,
        trope: usize,
    ) -> Result<Var> {
        let row = g.tape.slice_rows(table, trope, 1)?;
        match &self.desc_proj {
            Some(p) => p.forward(g, row),
            None => Ok(row),
        }
    }

    pub fn margin<F: Real>(&self, g: &mut Graph<'_, F>, slot: usize) -> Result<Var> {
        let m = g.param(self.margins);
        g.tape.pick(m, slot)
    }

    /// Keeps learnable margins at or above the floor.
    pub fn clamp_margins<F: Real>(&self, store: &mut ParamStore<F>, floor: f64) {
        if store.entry(self.margins).frozen {
            return;
        }
        for m in store.get_mut(self.margins).data_mut() {
            *m = m.max(F::c(floor));
        }
    }
}

fn check_target(target: usize, n: usize) -> Result<()> {
    if target >= n {
        return Err(AmnError::InvalidArgument(format!(
            "trope index {target} outside 0..{n}"
        )));
    }
    Ok(())
}

/// `J_CE = -log softmax(logits)[target]` and `q`, for `logits: [1, N_P]`.
pub fn classification_loss<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    target: usize,
) -> Result<(Var, Var)> {
    check_target(target, g.tape.value(logits).len())?;
    let q = g.tape.softmax(logits)?;
    let log_q = g.tape.log_softmax(logits);
    let picked = g.tape.pick(log_q, target)?;
    Ok((g.tape.scale(picked, -F::one()), q))
}

/// `max(0, s(rep, neg) - s(rep, pos) + margin)` with cosine similarity.
pub fn hinge_triplet<F: Real>(
    g: &mut Graph<'_, F>,
    rep: Var,
    pos: Var,
    neg: Var,
    margin: Var,
) -> Result<Var> {
    let sp = g.tape.cosine_similarity(rep, pos)?;
    let sn = g.tape.cosine_similarity(rep, neg)?;
    hinge(g, sp, sn, margin)
}

/// `max(0, s_n - s_p + margin)` on scalar vars.
pub fn hinge<F: Real>(g: &mut Graph<'_, F>, sp: Var, sn: Var, margin: Var) -> Result<Var> {
    let gap = g.tape.sub(sn, sp)?;
    let pre = g.tape.add(gap, margin)?;
    Ok(g.tape.relu(pre))
}

pub fn trope_triplet_loss<F: Real>(
    g: &mut Graph<'_, F>,
    z: Var,
    pos: Var,
    neg: Var,
    f_d: &Linear,
    margin: Var,
) -> Result<Var> {
    let rep = f_d.forward(g, z)?;
    hinge_triplet(g, rep, pos, neg, margin)
}

/// Mixes `f_D(z)` and `f_DM(z_hat)` with `γ = sigmoid(mix_logit)` before
/// the hinge.
#[allow(clippy::too_many_arguments)]
pub fn memory_triplet_loss<F: Real>(
    g: &mut Graph<'_, F>,
    z: Var,
    z_hat: Var,
    pos: Var,
    neg: Var,
    f_d: &Linear,
    f_dm: &Linear,
    mix_logit: Var,
    margin: Var,
) -> Result<Var> {
    let rep = f_d.forward(g, z)?;
    let rep_m = f_dm.forward(g, z_hat)?;
    let gamma = g.tape.sigmoid(mix_logit);
    let one = g.tape.constant(Tensor::scalar(F::one()));
    let rest = g.tape.sub(one, gamma)?;
    let a = g.tape.scalar_mul(gamma, rep)?;
    let b = g.tape.scalar_mul(rest, rep_m)?;
    let mixed = g.tape.add(a, b)?;
    hinge_triplet(g, mixed, pos, neg, margin)
}

/// Ranking hinge between the most similar right-label and wrong-label
/// keys, preferring the retrieved neighbors. `None` when the memory holds
/// no key of one of the two kinds.
pub fn rw_ranking_loss<F: Real>(
    g: &mut Graph<'_, F>,
    z: Var,
    read: &RwRead,
    mem: &RwMemory<F>,
    target: usize,
    margin: Var,
) -> Result<Option<Var>> {
    let zv = g.tape.value(z).data().to_vec();
    let side = |g: &mut Graph<'_, F>, same: bool| -> Result<Option<Var>> {
        if let Some(i) = read.labels.iter().position(|&l| (l == target) == same) {
            return g.tape.pick(read.sim_vars, i).map(Some);
        }
        match mem.best_with_label(&zv, target, same) {
            Some((slot, _)) => {
                let key = g.tape.constant(Tensor::row(mem.key(slot).to_vec()));
                g.tape.cosine_similarity(z, key).map(Some)
            }
            None => Ok(None),
        }
    };
    let (Some(sp), Some(sn)) = (side(g, true)?, side(g, false)?) else {
        log::debug!("read-write memory lacks a positive or negative key for trope {target}; ranking loss is 0");
        return Ok(None);
    };
    hinge(g, sp, sn, margin).map(Some)
}

/// Cross-entropy of `f_PM` applied to the neighbor labels scaled by
/// `1 / N_P`.
pub fn rw_classification_loss<F: Real>(
    g: &mut Graph<'_, F>,
    labels: &[usize],
    n_tropes: usize,
    f_pm: &Linear,
    target: usize,
) -> Result<(Var, Var)> {
    if labels.len() != f_pm.d_in {
        return Err(AmnError::shape(
            "rw_classification_loss",
            &[labels.len()],
            &[f_pm.d_in],
        ));
    }
    let x = Tensor::row(
        labels
            .iter()
            .map(|&l| F::c(l as f64 / n_tropes as f64))
            .collect(),
    );
    let x = g.tape.constant(x);
    let logits = f_pm.forward(g, x)?;
    classification_loss(g, logits, target)
}

/// Per-slot loss values; `None` for losses that are inactive or were not
/// computed.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub parts: [Option<Var>; 4],
}

/// `J = Σ β_i J_i` over active slots with `β = softmax` of the active
/// logits; inactive slots get `β = 0` exactly. Active slots without a
/// value contribute 0. Returns `(J, β)`.
pub fn combined_loss<F: Real>(
    g: &mut Graph<'_, F>,
    parts: &LossParts,
    active: [bool; 4],
    beta_logits: Var,
) -> Result<(Var, Var)> {
    if !active.iter().any(|&a| a) {
        return Err(AmnError::InvalidArgument("no active loss".into()));
    }
    let beta = g.tape.softmax_masked(beta_logits, active.to_vec())?;
    let mut total = None;
    for (i, part) in parts.parts.iter().enumerate() {
        let Some(j) = part else { continue };
        if !active[i] {
            continue;
        }
        let b = g.tape.pick(beta, i)?;
        let term = g.tape.mul(b, *j)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.tape.add(acc, term)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.tape.constant(Tensor::scalar(F::zero())),
    };
    Ok((total, beta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j_ce: f64,
    pub j_t: Option<f64>,
    pub j_mt: Option<f64>,
    pub j_mr: Option<f64>,
    pub j_mce: Option<f64>,
    pub j_total: f64,
    pub betas: [f64; 4],
    pub triplet: TripletKind,
}

impl LossBreakdown {
    pub fn read<F: Real>(
        g: &Graph<'_, F>,
        parts: &LossParts,
        total: Var,
        beta: Var,
        triplet: TripletKind,
    ) -> Self {
        let val = |v: Option<Var>| v.map(|v| g.value(v).item().as_f64());
        let b = g.value(beta).data();
        let j_trip = val(parts.parts[TRIPLET]);
        LossBreakdown {
            j_ce: val(parts.parts[CE]).unwrap_or(0.0),
            j_t: j_trip.filter(|_| triplet == TripletKind::Trope),
            j_mt: j_trip.filter(|_| triplet == TripletKind::Memory),
            j_mr: val(parts.parts[MR]),
            j_mce: val(parts.parts[MCE]),
            j_total: g.value(total).item().as_f64(),
            betas: [b[0].as_f64(), b[1].as_f64(), b[2].as_f64(), b[3].as_f64()],
            triplet,
        }
    }

    /// `Σ β_i J_i` recomputed from the recorded parts.
    pub fn recombined(&self) -> f64 {
        let trip = self.j_t.or(self.j_mt);
        [Some(self.j_ce), trip, self.j_mr, self.j_mce]
            .iter()
            .zip(self.betas)
            .map(|(j, b)| j.unwrap_or(0.0) * b)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(g: &mut Graph<'_, f64>, v: f64) -> Var {
        g.tape.constant(Tensor::scalar(v))
    }

    #[test]
    fn perfect_and_uniform_cross_entropy() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.tape.constant(Tensor::row(vec![0.0; 72]));
        let (j, q) = classification_loss(&mut g, logits, 5).unwrap();
        assert!((g.value(j).item() - 72f64.ln()).abs() < 1e-6);
        assert!((g.value(j).item() - 4.2767).abs() < 1e-4);
        assert!((g.value(q).data()[5] - 1.0 / 72.0).abs() < 1e-12);

        let logits = g.tape.constant(Tensor::row(vec![0.0, 800.0, 0.0]));
        let (j, _) = classification_loss(&mut g, logits, 1).unwrap();
        assert_eq!(g.value(j).item(), 0.0);
        assert!(classification_loss(&mut g, logits, 3).is_err());
    }

    #[test]
    fn hinge_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let m = scalar(&mut g, 0.2);
        for (sp, sn, want) in [(0.9, 0.1, 0.0), (0.1, 0.9, 1.0)] {
            let (a, b) = (scalar(&mut g, sp), scalar(&mut g, sn));
            let j = hinge(&mut g, a, b, m).unwrap();
            assert!((g.value(j).item() - want).abs() < 1e-12);
        }
        let rep = g.tape.constant(Tensor::row(vec![0.3, -1.0, 2.0]));
        let d = g.tape.constant(Tensor::row(vec![1.0, 1.0, 0.5]));
        let j = hinge_triplet(&mut g, rep, d, d, m).unwrap();
        assert!((g.value(j).item() - 0.2).abs() < 1e-12);
        // A zero description has similarity 0 rather than failing.
        let zero = g.tape.constant(Tensor::row(vec![0.0; 3]));
        assert!(hinge_triplet(&mut g, rep, zero, d, m).is_ok());
    }

    #[test]
    fn memory_triplet_reduces_to_the_plain_one() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f_d = Linear::new(&mut store, "f", 3, 2, 0.5, &mut rng);
        let mix = store.add("mix", Tensor::scalar(0.7), false);
        let mut g = Graph::new(&store);
        let z = g.tape.constant(Tensor::row(vec![0.2, -0.4, 0.9]));
        let pos = g.tape.constant(Tensor::row(vec![1.0, 0.2]));
        let neg = g.tape.constant(Tensor::row(vec![-0.3, 1.0]));
        let m = scalar(&mut g, 0.3);
        let mix = g.param(mix);
        let a = memory_triplet_loss(&mut g, z, z, pos, neg, &f_d, &f_d, mix, m).unwrap();
        let b = trope_triplet_loss(&mut g, z, pos, neg, &f_d, m).unwrap();
        assert!((g.value(a).item() - g.value(b).item()).abs() < 1e-12);
    }

    #[test]
    fn ranking_loss_from_neighbors_and_fallbacks() {
        let mem = RwMemory {
            keys: Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap(),
            values: vec![0, 1, 0],
            ages: vec![0; 3],
            k: 1,
            n_labels: 2,
        };
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let z = g.tape.constant(Tensor::row(vec![0.0, 1.0]));
        let read = mem.read(&mut g, z).unwrap();
        assert_eq!(read.neighbors, vec![1]);
        let m = scalar(&mut g, 0.1);
        // Positive for label 0 falls back to slot 2 (s = 0.8); negative is slot 1 (s = 1).
        let j = rw_ranking_loss(&mut g, z, &read, &mem, 0, m)
            .unwrap()
            .unwrap();
        assert!((g.value(j).item() - (1.0 - 0.8 + 0.1)).abs() < 1e-12);
        // Label 1: neighbor is positive (s = 1), best negative is slot 2 (s = 0.8).
        let j = rw_ranking_loss(&mut g, z, &read, &mem, 1, m)
            .unwrap()
            .unwrap();
        assert_eq!(g.value(j).item(), 0.0);

        let pure = RwMemory {
            values: vec![1, 1, 1],
            ..mem
        };
        let read = pure.read(&mut g, z).unwrap();
        assert!(rw_ranking_loss(&mut g, z, &read, &pure, 1, m)
            .unwrap()
            .is_none());
    }

    #[test]
    fn ranking_hinge_worked_example() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (sp, sn, m) = (
            scalar(&mut g, 0.2),
            scalar(&mut g, 0.8),
            scalar(&mut g, 0.1),
        );
        let j = hinge(&mut g, sp, sn, m).unwrap();
        assert!((g.value(j).item() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn memory_classification_uniform_is_log_n() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Linear::new(&mut store, "pm", 3, 5, 0.5, &mut rng);
        store.get_mut(f.w).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let (j, _) = rw_classification_loss(&mut g, &[1, 4, 2], 5, &f, 3).unwrap();
        assert!((g.value(j).item() - 5f64.ln()).abs() < 1e-12);
        assert!(rw_classification_loss(&mut g, &[1, 4], 5, &f, 3).is_err());
    }

    #[test]
    fn combination_weights() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.tape.constant(Tensor::row(vec![0.3, -2.0, 5.0, 1.0]));
        let (a, b) = (scalar(&mut g, 2.0), scalar(&mut g, 4.0));
        let parts = LossParts {
            parts: [Some(a), Some(b), None, None],
        };
        let (j, beta) = combined_loss(&mut g, &parts, [true, false, false, false], logits).unwrap();
        assert_eq!(g.value(j).item(), 2.0);
        assert_eq!(g.value(beta).data(), &[1.0, 0.0, 0.0, 0.0]);

        let flat = g.tape.constant(Tensor::row(vec![0.0; 4]));
        let (j, _) = combined_loss(&mut g, &parts, [true, true, false, false], flat).unwrap();
        assert!((g.value(j).item() - 3.0).abs() < 1e-12);

        assert!(combined_loss(&mut g, &parts, [false; 4], flat).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f_p = Linear::new(&mut store, "p", 4, 3, 0.5, &mut rng);
        let f_d = Linear::new(&mut store, "d", 4, 2, 0.5, &mut rng);
        let f_dm = Linear::new(&mut store, "dm", 4, 2, 0.5, &mut rng);
        let mix = store.add("mix", Tensor::scalar(0.3), false);
        let beta = store.add("beta", Tensor::row(vec![0.1, -0.2, 0.0, 0.0]), false);
        let margin = store.add("margin", Tensor::scalar(0.9), false);
        let report = finite_difference_check(
            |g| {
                let z = g.tape.constant(Tensor::row(vec![0.4, -0.1, 0.8, 0.3]));
                let zh = g.tape.constant(Tensor::row(vec![-0.2, 0.5, 0.1, 0.6]));
                let pos = g.tape.constant(Tensor::row(vec![0.7, -0.4]));
                let neg = g.tape.constant(Tensor::row(vec![0.2, 0.9]));
                let logits = f_p.forward(g, z)?;
                let (ce, _) = classification_loss(g, logits, 2)?;
                let (mix, m) = (g.param(mix), g.param(margin));
                let mt = memory_triplet_loss(g, z, zh, pos, neg, &f_d, &f_dm, mix, m)?;
                let parts = LossParts {
                    parts: [Some(ce), Some(mt), None, None],
                };
                let b = g.param(beta);
                combined_loss(g, &parts, [true, true, false, false], b).map(|r| r.0)
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let beta = report.params.iter().find(|p| p.name == "beta").unwrap();
        assert!(beta.max_abs_grad > 0.0);
    }
}
