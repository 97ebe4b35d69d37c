//! The full persona model: encoder, optional memory, output heads and the
//! training loss for one batch of same-trope snippets.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::config::{MemoryKind, VariantConfig, LEARNABLE_MARGIN_FLOOR};
use crate::corpus::{embed_description, EncodedSnippet, TropeCatalog, Vocabulary};
use crate::encoder::{EncoderParams, PersonaRep, SnippetEncoding};
use crate::error::{AmnError, Result};
use crate::memory::{KsMemoryParams, KsRead, RwMemory, RwRead};
use crate::objectives::{
    classification_loss, combined_loss, memory_triplet_loss, rw_classification_loss,
    rw_ranking_loss, trope_triplet_loss, LossBreakdown, LossHeads, LossParts, TripletKind, CE,
    MARGIN_MR, MARGIN_MT, MARGIN_T, MCE, MR, TRIPLET,
};

/// Name of the frozen description-embedding table in the parameter store.
pub const DESC_EMBEDDINGS: &str = "desc.embeddings";

#[derive(Clone, Debug)]
pub struct PersonaModel<F> {
    pub cfg: VariantConfig,
    pub store: ParamStore<F>,
    pub encoder: EncoderParams,
    pub heads: LossHeads,
    pub desc: ParamId,
    pub ks: Option<KsMemoryParams>,
    pub rw: Option<RwMemory<F>>,
    pub n_tropes: usize,
}

/// The supervised target of a batch. `negative` is the trope contrasted in
/// the triplet losses; `None` skips them.
#[derive(Clone, Copy, Debug)]
pub struct Target {
    pub trope: usize,
    pub negative: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub words: SnippetEncoding,
    pub rep: PersonaRep,
    /// Classifier input: `z`, plus the memory read when a memory is active.
    pub z_class: Var,
    pub logits: Var,
    pub q: Var,
    pub ks: Option<KsRead>,
    pub rw: Option<RwRead>,
    pub loss: Option<(Var, LossBreakdown)>,
}

/// Plain-value summary of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub trope: usize,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub gamma: [f64; 3],
    /// Snippet-level attention per stream (`None` for unused streams).
    pub inter_weights: [Option<Vec<f64>>; 3],
}

impl<F: Real> PersonaModel<F> {
    /// Initializes every parameter from `cfg.seed`. Pretrained vectors
    /// replace the random rows of tokens they cover.
    pub fn new(
        cfg: &VariantConfig,
        vocab: &Vocabulary,
        catalog: &TropeCatalog,
        pretrained: Option<&HashMap<String, Vec<f32>>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let n_tropes = catalog.len();
        if n_tropes == 0 {
            return Err(AmnError::InvalidArgument("no tropes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, cfg, vocab.len(), &mut rng);
        if let Some(vectors) = pretrained {
            let table = store.get_mut(encoder.embedding);
            let dim = table.cols();
            let mut hits = 0;
            for (id, tok) in vocab.tokens().iter().enumerate() {
                if let Some(v) = vectors.get(tok) {
                    if v.len() != dim {
                        return Err(AmnError::shape("pretrained_embeddings", &[v.len()], &[dim]));
                    }
                    for (dst, &x) in table.data_mut()[id * dim..(id + 1) * dim].iter_mut().zip(v) {
                        *dst = F::c(x as f64);
                    }
                    hits += 1;
                }
            }
            log::info!("pretrained vectors cover {hits} of {} tokens", vocab.len());
        }

        let table = store.get(encoder.embedding).clone();
        let mut desc_data = Vec::with_capacity(n_tropes * cfg.d_emb);
        for i in 0..n_tropes {
            desc_data.extend(embed_description(catalog.description(i), vocab, &table));
        }
        let desc_table = Tensor::new(vec![n_tropes, cfg.d_emb], desc_data)?;
        let desc = store.add(DESC_EMBEDDINGS, desc_table.clone(), true);

        let ks = match cfg.memory {
            MemoryKind::Ks => Some(KsMemoryParams::new(
                &mut store,
                desc_table,
                cfg.d_v,
                cfg.persona_dim(),
                cfg.n_hop,
                cfg.init_scale,
                &mut rng,
            )?),
            _ => None,
        };
        let heads = LossHeads::new(&mut store, cfg, n_tropes, cfg.d_emb, &mut rng);
        let rw = match cfg.memory {
            MemoryKind::Rw => Some(RwMemory::new_random(
                cfg.mem_size,
                cfg.persona_dim(),
                cfg.top_k,
                n_tropes,
                &mut rng,
            )?),
            _ => None,
        };
        Ok(PersonaModel {
            cfg: cfg.clone(),
            store,
            encoder,
            heads,
            desc,
            ks,
            rw,
            n_tropes,
        })
    }

    pub fn cast<G: Real>(&self) -> PersonaModel<G> {
        PersonaModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            desc: self.desc,
            ks: self.ks.clone(),
            rw: self.rw.as_ref().map(|m| m.cast()),
            n_tropes: self.n_tropes,
        }
    }

    /// Runs one batch through `graph`, which must be built on this
    /// model's store (or a perturbed copy with the same layout).
    pub fn forward(
        &self,
        g: &mut Graph<'_, F>,
        snippets: &[&EncodedSnippet],
        target: Option<Target>,
    ) -> Result<ModelOutput> {
        if snippets.len() != self.cfg.n_diag {
            return Err(AmnError::InvalidArgument(format!(
                "batch has {} snippets, variant expects {}",
                snippets.len(),
                self.cfg.n_diag
            )));
        }
        let words = self.encoder.encode_snippets(g, snippets)?;
        let rep = self.encoder.encode_inter_snippet(g, &words)?;
        let z = rep.z;

        let ks = match &self.ks {
            Some(ks) => Some(ks.read(g, z)?),
            None => None,
        };
        let rw = match &self.rw {
            Some(mem) => Some(mem.read(g, z)?),
            None => None,
        };
        let z_hat = ks.map(|r| r.z_hat).or(rw.as_ref().map(|r| r.z_hat));
        let z_class = match z_hat {
            Some(zh) => g.tape.add(z, zh)?,
            None => z,
        };
        let logits = self.heads.f_p.forward(g, z_class)?;
        let q = g.tape.softmax(logits)?;

        let loss = match target {
            Some(t) => Some(self.loss(g, z, z_hat, logits, rw.as_ref(), t)?),
            None => None,
        };
        Ok(ModelOutput {
            words,
            rep,
            z_class,
            logits,
            q,
            ks,
            rw,
            loss,
        })
    }

    fn loss(
        &self,
        g: &mut Graph<'_, F>,
        z: Var,
        z_hat: Option<Var>,
        logits: Var,
        rw: Option<&RwRead>,
        target: Target,
    ) -> Result<(Var, LossBreakdown)> {
        let h = &self.heads;
        let mut parts = LossParts::default();
        parts.parts[CE] = Some(classification_loss(g, logits, target.trope)?.0);

        if let (Some(neg), Some(f_d)) = (target.negative, &h.f_d) {
            if neg == target.trope || neg >= self.n_tropes {
                return Err(AmnError::InvalidArgument(format!(
                    "negative trope {neg} for target {}",
                    target.trope
                )));
            }
            let table = g.param(self.desc);
            let pos = h.description(g, table, target.trope)?;
            let negv = h.description(g, table, neg)?;
            parts.parts[TRIPLET] = Some(match h.triplet {
                TripletKind::Memory => {
                    let m = h.margin(g, MARGIN_MT)?;
                    let mix = g.param(h.mix_logit.expect("memory triplet head"));
                    let f_dm = h.f_dm.as_ref().expect("memory triplet head");
                    memory_triplet_loss(
                        g,
                        z,
                        z_hat.expect("memory read"),
                        pos,
                        negv,
                        f_d,
                        f_dm,
                        mix,
                        m,
                    )?
                }
                _ => {
                    let m = h.margin(g, MARGIN_T)?;
                    trope_triplet_loss(g, z, pos, negv, f_d, m)?
                }
            });
        }

        if let (Some(read), Some(mem), Some(f_pm)) = (rw, &self.rw, &h.f_pm) {
            let m = h.margin(g, MARGIN_MR)?;
            parts.parts[MR] = rw_ranking_loss(g, z, read, mem, target.trope, m)?;
            parts.parts[MCE] =
                Some(rw_classification_loss(g, &read.labels, self.n_tropes, f_pm, target.trope)?.0);
        }

        let beta_logits = g.param(h.beta_logits);
        let (total, beta) = combined_loss(g, &parts, h.active, beta_logits)?;
        let breakdown = LossBreakdown::read(g, &parts, total, beta, h.triplet);
        Ok((total, breakdown))
    }

    /// Forward pass without a target on a fresh graph.
    pub fn predict(&self, snippets: &[&EncodedSnippet]) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, snippets, None)?;
        let vals = |v: Var| -> Vec<f64> { g.value(v).data().iter().map(|x| x.as_f64()).collect() };
        let q = vals(out.q);
        let trope = q
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > q[best] { i } else { best });
        let gv = vals(out.rep.gamma);
        Ok(Prediction {
            trope,
            z: vals(out.rep.z),
            gamma: [gv[0], gv[1], gv[2]],
            inter_weights: out.rep.inter_weights.map(|w| w.map(vals)),
            q,
        })
    }

    /// Applies the read-write memory update for a trained batch.
    pub fn rw_write(&mut self, z: &[F], trope: usize, neighbors: &[usize]) -> Result<()> {
        match &mut self.rw {
            Some(mem) => mem.write(z, trope, neighbors),
            None => Ok(()),
        }
    }

    /// Post-step projection of constrained parameters.
    pub fn after_step(&mut self) {
        self.heads
            .clamp_margins(&mut self.store, LEARNABLE_MARGIN_FLOOR);
    }
}
