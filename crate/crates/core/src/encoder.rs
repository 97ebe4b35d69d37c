//! Two-level attentive encoder.
//!
//! The word level runs a bidirectional GRU over each stream of each snippet
//! and pools the hidden states with additive self-attention. The snippet
//! level repeats the same pattern over the `N_diag` snippet embeddings of a
//! stream, and the three stream summaries are mixed with softmax-normalized
//! weights into the persona representation `z`.
//!
//! All sequences in a batch share one length, so the GRUs process the batch
//! as the rows of a matrix; padding only matters to the attention mask.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::config::{Activation, AttentionMode, InputMode, VariantConfig};
use crate::corpus::EncodedSnippet;
use crate::error::{AmnError, Result};
use crate::nn::{uniform, Linear};

pub const STREAMS: [&str; 3] = ["d", "e", "o"];

/// One direction of a GRU.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub w_u: ParamId,
    pub w_r: ParamId,
    pub w_c: ParamId,
    pub u_u: ParamId,
    pub u_r: ParamId,
    pub u_c: ParamId,
    pub b_u: ParamId,
    pub b_r: ParamId,
    pub b_c: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruParams {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_h: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut mat = |suffix: &str, rows: usize| {
            store.add(
                format!("{name}.{suffix}"),
                uniform(rng, &[rows, d_h], scale),
                false,
            )
        };
        let (w_u, w_r, w_c) = (mat("w_u", d_in), mat("w_r", d_in), mat("w_c", d_in));
        let (u_u, u_r, u_c) = (mat("u_u", d_h), mat("u_r", d_h), mat("u_c", d_h));
        let mut bias =
            |suffix: &str| store.add(format!("{name}.{suffix}"), Tensor::zeros(&[1, d_h]), false);
        let (b_u, b_r, b_c) = (bias("b_u"), bias("b_r"), bias("b_c"));
        GruParams {
            w_u,
            w_r,
            w_c,
            u_u,
            u_r,
            u_c,
            b_u,
            b_r,
            b_c,
            d_in,
            d_h,
        }
    }

    /// Input projections `x W + b` of every gate, for all rows at once.
    fn project<F: Real>(&self, g: &mut Graph<'_, F>, x: Var) -> Result<[Var; 3]> {
        let mut out = [x; 3];
        for (slot, (w, b)) in out.iter_mut().zip([
            (self.w_u, self.b_u),
            (self.w_r, self.b_r),
            (self.w_c, self.b_c),
        ]) {
            let (w, b) = (g.param(w), g.param(b));
            let xw = g.tape.matmul(x, w)?;
            *slot = g.tape.add(xw, b)?;
        }
        Ok(out)
    }

    fn step_projected<F: Real>(&self, g: &mut Graph<'_, F>, xp: [Var; 3], h: Var) -> Result<Var> {
        let (u_u, u_r, u_c) = (g.param(self.u_u), g.param(self.u_r), g.param(self.u_c));
        let t = &mut g.tape;
        let hu = t.matmul(h, u_u)?;
        let pre_u = t.add(xp[0], hu)?;
        let update = t.sigmoid(pre_u);
        let hr = t.matmul(h, u_r)?;
        let pre_r = t.add(xp[1], hr)?;
        let reset = t.sigmoid(pre_r);
        let rh = t.mul(reset, h)?;
        let rhu = t.matmul(rh, u_c)?;
        let pre_c = t.add(xp[2], rhu)?;
        let cand = t.tanh(pre_c);
        // (1 - u) * h + u * c
        let diff = t.sub(cand, h)?;
        let step = t.mul(update, diff)?;
        t.add(h, step)
    }

    /// `x: [n, d_in]`, `h: [n, d_h]` to the next hidden state `[n, d_h]`.
    pub fn step<F: Real>(&self, g: &mut Graph<'_, F>, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (g.tape.shape(x).to_vec(), g.tape.shape(h).to_vec());
        if xs.len() != 2
            || hs.len() != 2
            || xs[1] != self.d_in
            || hs[1] != self.d_h
            || xs[0] != hs[0]
        {
            return Err(AmnError::shape("gru_cell_step", &xs, &hs));
        }
        let xp = self.project(g, x)?;
        self.step_projected(g, xp, h)
    }

    /// Runs over `steps` positions of `n` rows. `inputs` stacks the positions
    /// as `[steps * n, d_in]`; states are returned in position order.
    pub fn run<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        inputs: Var,
        n: usize,
        steps: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let s = g.tape.shape(inputs).to_vec();
        if s.len() != 2 || s[0] != n * steps || s[1] != self.d_in {
            return Err(AmnError::shape("gru_run", &s, &[n * steps, self.d_in]));
        }
        let proj = self.project(g, inputs)?;
        let mut h = g.tape.constant(Tensor::zeros(&[n, self.d_h]));
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let mut xp = proj;
            for x in xp.iter_mut() {
                *x = g.tape.slice_rows(*x, t * n, n)?;
            }
            h = self.step_projected(g, xp, h)?;
            states[t] = h;
        }
        Ok(states)
    }
}

#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiGru {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_h: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        BiGru {
            fwd: GruParams::new(store, &format!("{name}.fwd"), d_in, d_h, scale, rng),
            bwd: GruParams::new(store, &format!("{name}.bwd"), d_in, d_h, scale, rng),
        }
    }

    /// Per position, the forward and backward states concatenated:
    /// `[n, 2 d_h]`.
    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        inputs: Var,
        n: usize,
        steps: usize,
    ) -> Result<Vec<Var>> {
        let f = self.fwd.run(g, inputs, n, steps, false)?;
        let b = self.bwd.run(g, inputs, n, steps, true)?;
        f.into_iter()
            .zip(b)
            .map(|(hf, hb)| g.tape.concat(&[hf, hb]))
            .collect()
    }
}

/// Two-layer scoring network `a_t = layer2(act(layer1(h_t)))`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub layer1: Linear,
    pub layer2: Linear,
    pub activation: Activation,
}

/// Pooled summaries `[n, d]` and attention weights `[n, steps]`.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub summary: Var,
    pub weights: Var,
}

impl AttentionParams {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_a: usize,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        AttentionParams {
            layer1: Linear::new(store, &format!("{name}.l1"), d_in, d_a, scale, rng),
            layer2: Linear::new(store, &format!("{name}.l2"), d_a, 1, scale, rng),
            activation,
        }
    }

    /// Attends over `states` (one `[n, d]` tensor per position).
    /// `mask[i * steps + t]` marks position `t` of row `i` as valid; rows
    /// without a valid position attend uniformly.
    pub fn attend<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        states: &[Var],
        mask: Vec<bool>,
    ) -> Result<Attended> {
        let steps = states.len();
        let first = *states
            .first()
            .ok_or_else(|| AmnError::InvalidArgument("attention over zero positions".into()))?;
        let n = g.tape.shape(first)[0];
        if mask.len() != n * steps {
            return Err(AmnError::shape("attend", &[n, steps], &[mask.len()]));
        }
        let stacked = g.tape.concat_rows(states)?;
        let hidden = self.layer1.forward(g, stacked)?;
        let hidden = match self.activation {
            Activation::Tanh => g.tape.tanh(hidden),
            Activation::None => hidden,
        };
        let scores = self.layer2.forward(g, hidden)?;
        let scores = g.tape.reshape(scores, &[steps, n])?;
        let scores = g.tape.transpose(scores)?;
        let weights = g.tape.softmax_masked(scores, mask)?;
        let wt = g.tape.transpose(weights)?;
        let wcol = g.tape.reshape(wt, &[steps * n, 1])?;
        let weighted = g.tape.mul(stacked, wcol)?;
        // Row i of the summary sums rows t * n + i of `weighted`.
        let mut select = vec![F::zero(); n * steps * n];
        for i in 0..n {
            for t in 0..steps {
                select[i * steps * n + t * n + i] = F::one();
            }
        }
        let select = g.tape.constant(Tensor::new(vec![n, steps * n], select)?);
        let summary = g.tape.matmul(select, weighted)?;
        Ok(Attended { summary, weights })
    }
}

/// BiGRU followed by attention pooling.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    pub gru: BiGru,
    pub attn: AttentionParams,
}

impl SequenceEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_h: usize,
        d_a: usize,
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        SequenceEncoder {
            gru: BiGru::new(store, &format!("{name}.gru"), d_in, d_h, scale, rng),
            attn: AttentionParams::new(
                store,
                &format!("{name}.attn"),
                2 * d_h,
                d_a,
                activation,
                scale,
                rng,
            ),
        }
    }

    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        inputs: Var,
        n: usize,
        steps: usize,
        mask: Vec<bool>,
    ) -> Result<Attended> {
        let states = self.gru.encode(g, inputs, n, steps)?;
        self.attn.attend(g, &states, mask)
    }
}

/// Snippet-level encoder of one stream.
#[derive(Clone, Debug)]
pub enum InterEncoder {
    Recurrent(SequenceEncoder),
    /// Attention directly over the snippet embeddings, no recurrence.
    AttentionOnly(AttentionParams),
}

/// Word-level encodings of a batch: per stream, `[n, 2 d_h]` summaries and
/// `[n, T]` weights. Streams outside the input mode are `None`.
#[derive(Clone, Debug)]
pub struct SnippetEncoding {
    pub streams: [Option<Attended>; 3],
    pub n: usize,
}

/// Output of the snippet-level encoder.
#[derive(Clone, Debug)]
pub struct PersonaRep {
    /// `D^s, E^s, O^s` as `[1, 2 d_h]`.
    pub summaries: [Option<Var>; 3],
    /// Per stream, weights over the batch's snippets, `[1, N_diag]`.
    pub inter_weights: [Option<Var>; 3],
    /// Mixture weights `[1, 3]`.
    pub gamma: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub word: Vec<SequenceEncoder>,
    pub inter: Option<Vec<InterEncoder>>,
    pub gamma_logits: ParamId,
    pub input: InputMode,
    pub seq_len: usize,
}

impl EncoderParams {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        cfg: &VariantConfig,
        vocab_len: usize,
        rng: &mut R,
    ) -> Self {
        let s = cfg.init_scale;
        let embedding = store.add("embedding", uniform(rng, &[vocab_len, cfg.d_emb], s), false);
        let names: Vec<&str> = if cfg.share_streams {
            vec!["shared"]
        } else {
            STREAMS.to_vec()
        };
        let word = names
            .iter()
            .map(|st| {
                SequenceEncoder::new(
                    store,
                    &format!("word.{st}"),
                    cfg.d_emb,
                    cfg.d_h,
                    cfg.d_a,
                    cfg.attn_activation,
                    s,
                    rng,
                )
            })
            .collect();
        let inter = (cfg.attention == AttentionMode::Attn).then(|| {
            names
                .iter()
                .map(|st| {
                    let name = format!("inter.{st}");
                    if cfg.inter_recurrence {
                        InterEncoder::Recurrent(SequenceEncoder::new(
                            store,
                            &name,
                            cfg.persona_dim(),
                            cfg.d_h,
                            cfg.d_a,
                            cfg.attn_activation,
                            s,
                            rng,
                        ))
                    } else {
                        InterEncoder::AttentionOnly(AttentionParams::new(
                            store,
                            &format!("{name}.attn"),
                            cfg.persona_dim(),
                            cfg.d_a,
                            cfg.attn_activation,
                            s,
                            rng,
                        ))
                    }
                })
                .collect()
        });
        let gamma_logits = store.add("gamma_logits", Tensor::zeros(&[1, 3]), false);
        EncoderParams {
            embedding,
            word,
            inter,
            gamma_logits,
            input: cfg.input,
            seq_len: cfg.seq_len,
        }
    }

    fn active_streams(&self) -> &'static [usize] {
        match self.input {
            InputMode::Char => &[0],
            InputMode::Three => &[0, 1, 2],
        }
    }

    fn word_encoder(&self, stream: usize) -> &SequenceEncoder {
        &self.word[stream.min(self.word.len() - 1)]
    }

    /// Word-level encoding of every snippet of the batch.
    pub fn encode_snippets<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        snippets: &[&EncodedSnippet],
    ) -> Result<SnippetEncoding> {
        let n = snippets.len();
        if n == 0 {
            return Err(AmnError::InvalidArgument("empty snippet batch".into()));
        }
        let steps = self.seq_len;
        let embedding = g.param(self.embedding);
        let mut streams = [None, None, None];
        for &s in self.active_streams() {
            let mut ids = vec![0usize; steps * n];
            let mut mask = vec![false; n * steps];
            for (i, snip) in snippets.iter().enumerate() {
                let (sid, len) = snip.stream(s);
                if sid.len() != steps {
                    return Err(AmnError::shape("bigru_encode", &[sid.len()], &[steps]));
                }
                if len > steps {
                    return Err(AmnError::InvalidArgument(format!(
                        "valid length {len} exceeds sequence length {steps}"
                    )));
                }
                for t in 0..steps {
                    ids[t * n + i] = sid[t];
                }
                mask[i * steps..i * steps + len].fill(true);
            }
            let inputs = g.tape.gather_rows(embedding, &ids)?;
            streams[s] = Some(self.word_encoder(s).encode(g, inputs, n, steps, mask)?);
        }
        Ok(SnippetEncoding { streams, n })
    }

    /// Snippet-level encoding and the stream mixture.
    pub fn encode_inter_snippet<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        enc: &SnippetEncoding,
    ) -> Result<PersonaRep> {
        let n = enc.n;
        if n == 0 {
            return Err(AmnError::InvalidArgument(
                "N_diag must be at least 1".into(),
            ));
        }
        let mut summaries = [None, None, None];
        let mut inter_weights = [None, None, None];
        for &s in self.active_streams() {
            let emb = enc.streams[s].expect("active stream encoded").summary;
            let pooled = match &self.inter {
                None => {
                    if n != 1 {
                        return Err(AmnError::InvalidArgument(format!(
                            "baseline encodes one snippet, got {n}"
                        )));
                    }
                    let w = g.tape.constant(Tensor::filled(&[1, 1], F::one()));
                    Attended {
                        summary: emb,
                        weights: w,
                    }
                }
                Some(inter) => match &inter[s.min(inter.len() - 1)] {
                    InterEncoder::Recurrent(seq) => seq.encode(g, emb, 1, n, vec![true; n])?,
                    InterEncoder::AttentionOnly(attn) => {
                        let rows = (0..n)
                            .map(|t| g.tape.slice_rows(emb, t, 1))
                            .collect::<Result<Vec<_>>>()?;
                        attn.attend(g, &rows, vec![true; n])?
                    }
                },
            };
            summaries[s] = Some(pooled.summary);
            inter_weights[s] = Some(pooled.weights);
        }
        let (gamma, z) = match self.input {
            InputMode::Char => {
                let gamma = g
                    .tape
                    .constant(Tensor::row(vec![F::one(), F::zero(), F::zero()]));
                (gamma, summaries[0].unwrap())
            }
            InputMode::Three => {
                let logits = g.param(self.gamma_logits);
                let gamma = g.tape.softmax(logits)?;
                let mut z = None;
                for (i, s) in summaries.iter().enumerate() {
                    let w = g.tape.pick(gamma, i)?;
                    let term = g.tape.scalar_mul(w, s.unwrap())?;
                    z = Some(match z {
                        None => term,
                        Some(acc) => g.tape.add(acc, term)?,
                    });
                }
                (gamma, z.unwrap())
            }
        };
        Ok(PersonaRep {
            summaries,
            inter_weights,
            gamma,
            z,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_gru(store: &mut ParamStore<f64>, d: usize) -> GruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = GruParams::new(store, "g", d, d, 0.08, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        gru
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let mut store = ParamStore::new();
        let gru = zero_gru(&mut store, 3);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::row(vec![0.4, -1.0, 2.0]));
        let h = g.tape.constant(Tensor::row(vec![1.0, -2.0, 0.5]));
        let out = gru.step(&mut g, x, h).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -1.0, 0.25]);

        let zero = g.tape.constant(Tensor::zeros(&[1, 3]));
        let out = gru.step(&mut g, x, zero).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 3]);
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let mut store = ParamStore::new();
        let gru = zero_gru(&mut store, 3);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::row(vec![0.0; 2]));
        let h = g.tape.constant(Tensor::row(vec![0.0; 3]));
        assert!(gru.step(&mut g, x, h).is_err());
    }

    #[test]
    fn gru_step_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = GruParams::new(&mut store, "g", 3, 4, 0.5, &mut rng);
        let report = finite_difference_check(
            |g| {
                let x = g.tape.constant(Tensor::row(vec![0.3, -0.7, 1.1]));
                let h = g.tape.constant(Tensor::row(vec![0.2, -0.1, 0.4, 0.05]));
                let h1 = gru.step(g, x, h)?;
                let h2 = gru.step(g, x, h1)?;
                let sq = g.tape.mul(h2, h2)?;
                Ok(g.tape.sum(sq))
            },
            &store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn single_step_bigru_sees_the_same_input_both_ways() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bi = BiGru::new(&mut store, "b", 2, 3, 0.5, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::row(vec![0.5, -0.5]));
        let states = bi.encode(&mut g, x, 1, 1).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(g.tape.shape(states[0]), &[1, 6]);
        let zero = g.tape.constant(Tensor::zeros(&[1, 3]));
        let f = bi.fwd.step(&mut g, x, zero).unwrap();
        let b = bi.bwd.step(&mut g, x, zero).unwrap();
        let both = [g.value(f).data(), g.value(b).data()].concat();
        assert_eq!(g.value(states[0]).data(), both.as_slice());
    }

    fn identity_attention(store: &mut ParamStore<f64>) -> AttentionParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let attn = AttentionParams::new(store, "a", 1, 1, Activation::None, 0.1, &mut rng);
        store.get_mut(attn.layer1.w).data_mut()[0] = 1.0;
        store.get_mut(attn.layer2.w).data_mut()[0] = 1.0;
        attn
    }

    #[test]
    fn attention_with_hand_set_scores() {
        // Identity scoring: a_t = h_t, so scores are [0, ln 3].
        let mut store = ParamStore::new();
        let attn = identity_attention(&mut store);
        let mut g = Graph::new(&store);
        let h1 = g.tape.constant(Tensor::row(vec![0.0]));
        let h2 = g.tape.constant(Tensor::row(vec![3f64.ln()]));
        let out = attn.attend(&mut g, &[h1, h2], vec![true, true]).unwrap();
        let w = g.value(out.weights).data();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        let s = g.value(out.summary).item();
        assert!((s - 0.75 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_single_position_and_symmetry() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = AttentionParams::new(&mut store, "a", 2, 3, Activation::Tanh, 0.5, &mut rng);
        let mut g = Graph::new(&store);
        let h = g.tape.constant(Tensor::row(vec![0.3, -0.8]));
        let out = attn.attend(&mut g, &[h], vec![true]).unwrap();
        assert_eq!(g.value(out.weights).data(), &[1.0]);
        assert_eq!(g.value(out.summary).data(), &[0.3, -0.8]);

        let out = attn.attend(&mut g, &[h, h], vec![true, true]).unwrap();
        assert_eq!(g.value(out.weights).data(), &[0.5, 0.5]);
    }

    #[test]
    fn attention_masks_padding_and_falls_back_to_uniform() {
        let mut store = ParamStore::new();
        let attn = identity_attention(&mut store);
        let mut g = Graph::new(&store);
        // Two rows, three positions; row 0 has one valid position, row 1 none.
        let states: Vec<Var> = [[1.0, 2.0], [5.0, -1.0], [9.0, 0.0]]
            .iter()
            .map(|r| g.tape.constant(Tensor::matrix(2, 1, r.to_vec()).unwrap()))
            .collect();
        let mask = vec![true, false, false, false, false, false];
        let out = attn.attend(&mut g, &states, mask).unwrap();
        let w = g.value(out.weights).data();
        assert_eq!(&w[..3], &[1.0, 0.0, 0.0]);
        for &v in &w[3..] {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = g.value(out.summary).data();
        assert_eq!(s[0], 1.0);
        assert!((s[1] - (2.0 - 1.0 + 0.0) / 3.0).abs() < 1e-12);
    }
}
