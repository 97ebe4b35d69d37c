//! Character and movie embeddings from persona representations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::corpus::{chunk_with_wrap, Dataset, EncodedSnippet};
use crate::error::Result;
use crate::model::PersonaModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Character,
    Movie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityEmbedding {
    pub kind: EntityKind,
    pub id: String,
    pub quote_count: usize,
    pub vector: Vec<f64>,
}

/// A character's vector is the mean persona embedding over batches of its
/// own quotes (`N_diag` per batch, wrapping to fill the last one). A
/// movie's vector weights its characters by their share of its quotes.
/// Characters come first, each group sorted by id.
pub fn export_embeddings<F: Real>(
    model: &PersonaModel<F>,
    data: &Dataset,
) -> Result<Vec<EntityEmbedding>> {
    let mut by_char: BTreeMap<&str, (Vec<usize>, &str)> = BTreeMap::new();
    for (i, m) in data.meta.iter().enumerate() {
        by_char
            .entry(&m.character)
            .or_insert_with(|| (Vec::new(), &m.movie))
            .0
            .push(i);
    }
    let mut characters = Vec::with_capacity(by_char.len());
    let mut movies: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (name, (idx, movie)) in &by_char {
        let batches = chunk_with_wrap(idx, model.cfg.n_diag);
        if batches.is_empty() {
            log::warn!("character {name} has no quotes; skipped");
            continue;
        }
        let mut mean = vec![0.0; model.cfg.persona_dim()];
        for b in &batches {
            let snippets: Vec<&EncodedSnippet> = b.iter().map(|&i| &data.snippets[i]).collect();
            let z = model.predict(&snippets)?.z;
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= batches.len() as f64;
        }
        movies.entry(movie).or_default().push(characters.len());
        characters.push(EntityEmbedding {
            kind: EntityKind::Character,
            id: name.to_string(),
            quote_count: idx.len(),
            vector: mean,
        });
    }
    let mut out = characters.clone();
    for (movie, members) in movies {
        let total: usize = members.iter().map(|&c| characters[c].quote_count).sum();
        let mut vector = vec![0.0; model.cfg.persona_dim()];
        for &c in &members {
            let share = characters[c].quote_count as f64 / total as f64;
            for (v, x) in vector.iter_mut().zip(&characters[c].vector) {
                *v += share * x;
            }
        }
        out.push(EntityEmbedding {
            kind: EntityKind::Movie,
            id: movie.to_string(),
            quote_count: total,
            vector,
        });
    }
    Ok(out)
}

/// Majority trope of each character's quotes (ties to the lower index).
pub fn character_tropes(data: &Dataset) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (m, s) in data.meta.iter().zip(&data.snippets) {
        let c = counts
            .entry(&m.character)
            .or_insert_with(|| vec![0; data.n_tropes()]);
        c[s.trope_index] += 1;
    }
    counts
        .into_iter()
        .map(|(name, c)| {
            let best = c
                .iter()
                .enumerate()
                .fold(0, |b, (i, &n)| if n > c[b] { i } else { b });
            (name.to_string(), best)
        })
        .collect()
}
