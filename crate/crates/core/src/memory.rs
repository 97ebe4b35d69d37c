//! Knowledge-store (read-only, multi-hop) and read-write (rare-event)
//! memories addressed by persona embeddings.

use rand::Rng;

use crate::autodiff::{cosine, l2_norm, normalize, Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{AmnError, Result};
use crate::nn::{uniform, Linear};

/// Keys are frozen description embeddings `[N_P, d_K]`; values are learned
/// trope embeddings `[N_P, d_V]`.
#[derive(Clone, Debug)]
pub struct KsMemoryParams {
    pub keys: ParamId,
    pub values: ParamId,
    pub f_z: Linear,
    pub f_r: Linear,
    /// Projects the read value into key space when `d_V != d_K`.
    pub f_v: Option<Linear>,
    pub f_out: Linear,
    pub n_hop: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct KsRead {
    pub z_hat: Var,
    /// Addressing weights of the last hop, `[1, N_P]`.
    pub p: Var,
}

impl KsMemoryParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        keys: Tensor<F>,
        d_v: usize,
        d_z: usize,
        n_hop: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if keys.shape().len() != 2 || keys.shape()[0] == 0 {
            return Err(AmnError::InvalidArgument(
                "knowledge store needs at least one key".into(),
            ));
        }
        if n_hop == 0 {
            return Err(AmnError::InvalidArgument("n_hop must be positive".into()));
        }
        let (n_p, d_k) = (keys.shape()[0], keys.shape()[1]);
        let keys = store.add("ks.keys", keys, true);
        let values = store.add("ks.values", uniform(rng, &[n_p, d_v], scale), false);
        let f_z = Linear::new(store, "ks.f_z", d_z, d_k, scale, rng);
        let f_r = Linear::new(store, "ks.f_r", d_k, d_k, scale, rng);
        let f_v = (d_v != d_k).then(|| Linear::new(store, "ks.f_v", d_v, d_k, scale, rng));
        let f_out = Linear::new(store, "ks.f_out", d_k, d_z, scale, rng);
        Ok(KsMemoryParams {
            keys,
            values,
            f_z,
            f_r,
            f_v,
            f_out,
            n_hop,
        })
    }

    /// `z: [1, d_z]`.
    pub fn read<F: Real>(&self, g: &mut Graph<'_, F>, z: Var) -> Result<KsRead> {
        let keys = g.param(self.keys);
        let values = g.param(self.values);
        let keys_t = g.tape.transpose(keys)?;
        let mut state = self.f_z.forward(g, z)?;
        let mut p = None;
        for _ in 0..self.n_hop {
            let scores = g.tape.matmul(state, keys_t)?;
            let weights = g.tape.softmax(scores)?;
            let mut read = g.tape.matmul(weights, values)?;
            if let Some(f_v) = &self.f_v {
                read = f_v.forward(g, read)?;
            }
            let carried = self.f_r.forward(g, state)?;
            state = g.tape.add(carried, read)?;
            p = Some(weights);
        }
        let z_hat = self.f_out.forward(g, state)?;
        Ok(KsRead {
            z_hat,
            p: p.expect("n_hop >= 1"),
        })
    }
}

/// Mutable memory of past persona embeddings: unit keys `[N_M, dim]`,
/// trope labels and ages.
#[derive(Clone, Debug, PartialEq)]
pub struct RwMemory<F> {
    pub keys: Tensor<F>,
    pub values: Vec<usize>,
    pub ages: Vec<u32>,
    pub k: usize,
    pub n_labels: usize,
}

#[derive(Clone, Debug)]
pub struct RwRead {
    pub z_hat: Var,
    /// Neighbor slots, most similar first.
    pub neighbors: Vec<usize>,
    pub labels: Vec<usize>,
    /// Cosine similarity of the query to each neighbor.
    pub sims: Vec<f64>,
    /// `[1, k]` cosine similarities on the tape.
    pub sim_vars: Var,
}

impl<F: Real> RwMemory<F> {
    /// Random unit keys, random labels, zero ages.
    pub fn new_random<R: Rng>(
        n_m: usize,
        dim: usize,
        k: usize,
        n_labels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || k > n_m {
            return Err(AmnError::InvalidArgument(format!(
                "need 1 <= k <= N_M, got k = {k}, N_M = {n_m}"
            )));
        }
        if n_labels == 0 || dim == 0 {
            return Err(AmnError::InvalidArgument(
                "empty label set or key dimension".into(),
            ));
        }
        let mut data = Vec::with_capacity(n_m * dim);
        for _ in 0..n_m {
            let row = loop {
                let row: Vec<F> = (0..dim).map(|_| F::c(rng.gen_range(-1.0..1.0))).collect();
                if l2_norm(&row) > F::c(1e-3) {
                    break normalize(&row);
                }
            };
            data.extend(row);
        }
        Ok(RwMemory {
            keys: Tensor::new(vec![n_m, dim], data)?,
            values: (0..n_m).map(|_| rng.gen_range(0..n_labels)).collect(),
            ages: vec![0; n_m],
            k,
            n_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.keys.cols()
    }

    pub fn key(&self, slot: usize) -> &[F] {
        self.keys.row_slice(slot)
    }

    pub fn similarities(&self, z: &[F]) -> Vec<F> {
        (0..self.len()).map(|i| cosine(z, self.key(i))).collect()
    }

    /// The `k` most similar slots and their similarities, most similar
    /// first, ties to the lower slot.
    pub fn nearest(&self, z: &[F]) -> Result<Vec<(usize, F)>> {
        if z.len() != self.dim() {
            return Err(AmnError::shape("rw_read", &[z.len()], self.keys.shape()));
        }
        if l2_norm(z) == F::zero() {
            log::debug!(
                "zero query to read-write memory; taking the first {} slots",
                self.k
            );
        }
        let mut scored: Vec<(usize, F)> = self.similarities(z).into_iter().enumerate().collect();
        let order =
            |a: &(usize, F), b: &(usize, F)| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0));
        if self.k < scored.len() {
            scored.select_nth_unstable_by(self.k - 1, order);
            scored.truncate(self.k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    /// Most similar slot (whole memory) whose label equals `label`, or
    /// differs from it when `same` is false.
    pub fn best_with_label(&self, z: &[F], label: usize, same: bool) -> Option<(usize, F)> {
        self.similarities(z)
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| (self.values[i] == label) == same)
            .fold(None, |best, (i, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((i, s)),
            })
    }

    /// Softmax over the top-`k` cosine similarities; `z_hat` mixes the
    /// neighbor keys, which are constants.
    pub fn read(&self, g: &mut Graph<'_, F>, z: Var) -> Result<RwRead> {
        let near = self.nearest(g.tape.value(z).data())?;
        let mut sim_vars = Vec::with_capacity(near.len());
        let mut selected = Vec::with_capacity(near.len() * self.dim());
        for &(slot, _) in &near {
            let key = g.tape.constant(Tensor::row(self.key(slot).to_vec()));
            sim_vars.push(g.tape.cosine_similarity(z, key)?);
            selected.extend_from_slice(self.key(slot));
        }
        let sims = g.tape.concat(&sim_vars)?;
        let sims = g.tape.reshape(sims, &[1, near.len()])?;
        let weights = g.tape.softmax(sims)?;
        let selected = g
            .tape
            .constant(Tensor::new(vec![near.len(), self.dim()], selected)?);
        let z_hat = g.tape.matmul(weights, selected)?;
        Ok(RwRead {
            z_hat,
            labels: near.iter().map(|&(i, _)| self.values[i]).collect(),
            neighbors: near.iter().map(|&(i, _)| i).collect(),
            sims: near.iter().map(|&(_, s)| s.as_f64()).collect(),
            sim_vars: sims,
        })
    }

    /// Rare-event update: merge into the top neighbor when its label is
    /// right, otherwise overwrite the oldest slot.
    pub fn write(&mut self, z: &[F], label: usize, neighbors: &[usize]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(AmnError::shape("rw_write", &[z.len()], self.keys.shape()));
        }
        if label >= self.n_labels {
            return Err(AmnError::InvalidArgument(format!(
                "label {label} outside 0..{}",
                self.n_labels
            )));
        }
        let top = *neighbors
            .first()
            .ok_or_else(|| AmnError::InvalidArgument("write without neighbors".into()))?;
        let dim = self.dim();
        let (slot, key) = if self.values[top] == label {
            let merged: Vec<F> = z.iter().zip(self.key(top)).map(|(&a, &b)| a + b).collect();
            (top, merged)
        } else {
            let oldest =
                self.ages.iter().enumerate().fold(
                    0,
                    |best, (i, &a)| if a > self.ages[best] { i } else { best },
                );
            (oldest, z.to_vec())
        };
        let mut key = normalize(&key);
        if key.iter().all(|&v| v == F::zero()) {
            // Unit norm must hold; keep the slot's previous direction.
            key = self.key(slot).to_vec();
        }
        self.keys.data_mut()[slot * dim..(slot + 1) * dim].copy_from_slice(&key);
        self.values[slot] = label;
        for (i, a) in self.ages.iter_mut().enumerate() {
            *a = if i == slot { 0 } else { a.saturating_add(1) };
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.k == 0 || self.k > self.len() {
            return Err(AmnError::InvalidArgument("k outside 1..=N_M".into()));
        }
        for i in 0..self.len() {
            let norm = l2_norm(self.key(i)).as_f64();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(AmnError::InvalidArgument(format!(
                    "key {i} has norm {norm}"
                )));
            }
            if self.values[i] >= self.n_labels {
                return Err(AmnError::InvalidArgument(format!(
                    "slot {i} has label {}",
                    self.values[i]
                )));
            }
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> RwMemory<G> {
        RwMemory {
            keys: self.keys.cast(),
            values: self.values.clone(),
            ages: self.ages.clone(),
            k: self.k,
            n_labels: self.n_labels,
        }
    }
}
