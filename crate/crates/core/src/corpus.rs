//! Dialogue snippet ingestion: JSON-lines readers, tokenization, the
//! vocabulary, fixed-length encoding, and per-trope batch sampling.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{AmnError, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const OOV_TOKEN: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = AmnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AmnError::InvalidArgument(format!(
                "unknown split `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One line of the snippet corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawQuote {
    pub trope_id: String,
    pub character: String,
    pub movie: String,
    pub char_lines: String,
    pub context: String,
    pub others_lines: String,
    pub split: Split,
}

impl RawQuote {
    pub fn validate(&self) -> Result<()> {
        if self.trope_id.is_empty() {
            return Err(AmnError::InvalidArgument("empty trope_id".into()));
        }
        if self.char_lines.is_empty() && self.context.is_empty() && self.others_lines.is_empty() {
            return Err(AmnError::InvalidArgument(
                "quote has no character lines, context, or other lines".into(),
            ));
        }
        Ok(())
    }

    pub fn streams(&self) -> [&str; 3] {
        [&self.char_lines, &self.context, &self.others_lines]
    }
}

/// One line of the description file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TropeDescription {
    pub trope_id: String,
    pub description: String,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| AmnError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, item));
    }
    Ok(out)
}

pub fn read_quotes(path: &Path) -> Result<Vec<RawQuote>> {
    read_jsonl::<RawQuote>(path)?
        .into_iter()
        .map(|(line, q)| {
            q.validate().map_err(|e| AmnError::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            Ok(q)
        })
        .collect()
}

pub fn read_descriptions(path: &Path) -> Result<Vec<TropeDescription>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, d)| d).collect())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercases and splits on whitespace; every other non-alphanumeric
/// character becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Token to id mapping with `PAD = 0` and `OOV = 1` reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabularyRepr {
            tokens: self.tokens.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(d)?;
        Vocabulary::from_tokens(repr.tokens).map_err(serde::de::Error::custom)
    }
}

impl Vocabulary {
    /// Keeps the `max_size - 2` most frequent train-split tokens, ties broken
    /// lexicographically.
    pub fn build(quotes: &[RawQuote], max_size: usize) -> Result<Self> {
        if max_size < 2 {
            return Err(AmnError::InvalidArgument(format!(
                "vocabulary size {max_size} leaves no room for PAD and OOV"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_train = 0;
        for q in quotes.iter().filter(|q| q.split == Split::Train) {
            n_train += 1;
            for stream in q.streams() {
                for tok in tokenize(stream) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if n_train == 0 {
            return Err(AmnError::EmptyTrainSplit);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(ranked.into_iter().take(max_size - 2).map(|(t, _)| t));
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[OOV] != OOV_TOKEN {
            return Err(AmnError::InvalidArgument(
                "vocabulary must start with the PAD and OOV tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(2) {
            if index.insert(t.clone(), i).is_some() {
                return Err(AmnError::InvalidArgument(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, `None` when out of vocabulary.
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(OOV)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Ordered trope ids with their description text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "CatalogRepr", into = "CatalogRepr")]
pub struct TropeCatalog {
    trope_ids: Vec<String>,
    descriptions: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct CatalogRepr {
    trope_ids: Vec<String>,
    descriptions: Vec<String>,
}

impl From<CatalogRepr> for TropeCatalog {
    fn from(r: CatalogRepr) -> Self {
        TropeCatalog::from_parts(r.trope_ids, r.descriptions)
    }
}

impl From<TropeCatalog> for CatalogRepr {
    fn from(c: TropeCatalog) -> Self {
        CatalogRepr {
            trope_ids: c.trope_ids,
            descriptions: c.descriptions,
        }
    }
}

impl TropeCatalog {
    /// Distinct trope ids across all splits in sorted order.
    pub fn build(quotes: &[RawQuote], descriptions: &[TropeDescription]) -> Self {
        let ids: BTreeSet<&str> = quotes.iter().map(|q| q.trope_id.as_str()).collect();
        let text: HashMap<&str, &str> = descriptions
            .iter()
            .map(|d| (d.trope_id.as_str(), d.description.as_str()))
            .collect();
        let trope_ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
        let descriptions = trope_ids
            .iter()
            .map(|id| match text.get(id.as_str()) {
                Some(t) => t.to_string(),
                None => {
                    log::warn!("trope `{id}` has no description; using a zero embedding");
                    String::new()
                }
            })
            .collect();
        Self::from_parts(trope_ids, descriptions)
    }

    pub fn from_parts(trope_ids: Vec<String>, descriptions: Vec<String>) -> Self {
        let index = trope_ids
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TropeCatalog {
            trope_ids,
            descriptions,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.trope_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trope_ids.is_empty()
    }

    pub fn index_of(&self, trope_id: &str) -> Result<usize> {
        self.index
            .get(trope_id)
            .copied()
            .ok_or_else(|| AmnError::UnknownTrope(trope_id.to_string()))
    }

    pub fn trope_id(&self, index: usize) -> &str {
        &self.trope_ids[index]
    }

    pub fn trope_ids(&self) -> &[String] {
        &self.trope_ids
    }

    pub fn description(&self, index: usize) -> &str {
        &self.descriptions[index]
    }
}

/// A quote as three fixed-length id streams.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSnippet {
    pub d_ids: Vec<usize>,
    pub e_ids: Vec<usize>,
    pub o_ids: Vec<usize>,
    pub d_len: usize,
    pub e_len: usize,
    pub o_len: usize,
    pub trope_index: usize,
}

impl EncodedSnippet {
    /// `(ids, valid_len)` for stream 0 (D), 1 (E) or 2 (O).
    pub fn stream(&self, s: usize) -> (&[usize], usize) {
        match s {
            0 => (&self.d_ids, self.d_len),
            1 => (&self.e_ids, self.e_len),
            2 => (&self.o_ids, self.o_len),
            _ => panic!("stream index {s} out of range"),
        }
    }

    pub fn seq_len(&self) -> usize {
        self.d_ids.len()
    }
}

fn encode_stream(text: &str, vocab: &Vocabulary, seq_len: usize) -> (Vec<usize>, usize) {
    let mut ids: Vec<usize> = tokenize(text)
        .iter()
        .take(seq_len)
        .map(|t| vocab.id(t))
        .collect();
    let len = ids.len();
    ids.resize(seq_len, PAD);
    (ids, len)
}

pub fn encode_snippet(
    quote: &RawQuote,
    vocab: &Vocabulary,
    catalog: &TropeCatalog,
    seq_len: usize,
) -> Result<EncodedSnippet> {
    if seq_len == 0 {
        return Err(AmnError::InvalidArgument(
            "sequence length must be positive".into(),
        ));
    }
    let trope_index = catalog.index_of(&quote.trope_id)?;
    let (d_ids, d_len) = encode_stream(&quote.char_lines, vocab, seq_len);
    let (e_ids, e_len) = encode_stream(&quote.context, vocab, seq_len);
    let (o_ids, o_len) = encode_stream(&quote.others_lines, vocab, seq_len);
    Ok(EncodedSnippet {
        d_ids,
        e_ids,
        o_ids,
        d_len,
        e_len,
        o_len,
        trope_index,
    })
}

/// Tokens of the first `len` positions of an encoded stream.
pub fn decode(ids: &[usize], len: usize, vocab: &Vocabulary) -> Vec<String> {
    ids[..len]
        .iter()
        .map(|&i| vocab.token(i).to_string())
        .collect()
}

/// Mean of the word vectors of the in-vocabulary tokens of `text`; zero when
/// none of them is known.
pub fn embed_description<F: Real>(text: &str, vocab: &Vocabulary, table: &Tensor<F>) -> Vec<F> {
    let dim = table.cols();
    let mut acc = vec![F::zero(); dim];
    let mut n = 0usize;
    for tok in tokenize(text) {
        if let Some(id) = vocab.get(&tok) {
            for (a, &w) in acc.iter_mut().zip(table.row_slice(id)) {
                *a = *a + w;
            }
            n += 1;
        }
    }
    if n == 0 {
        log::warn!("description has no in-vocabulary token; using a zero embedding");
        return acc;
    }
    let n = F::from_usize(n).unwrap();
    acc.iter().map(|&a| a / n).collect()
}

/// Reads a text file of `token v1 v2 ... vd` lines.
pub fn read_word_vectors(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f32>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let err = |message: String| AmnError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let values = parts
            .map(|p| p.parse::<f32>().map_err(|e| err(format!("{p}: {e}"))))
            .collect::<Result<Vec<f32>>>()?;
        if values.len() != dim {
            return Err(err(format!(
                "expected {dim} values, found {}",
                values.len()
            )));
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

/// Where an encoded snippet came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnippetMeta {
    pub character: String,
    pub movie: String,
    pub split: Split,
}

/// The encoded corpus grouped by split and trope.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub catalog: TropeCatalog,
    pub seq_len: usize,
    pub snippets: Vec<EncodedSnippet>,
    pub meta: Vec<SnippetMeta>,
    pools: HashMap<Split, Vec<Vec<usize>>>,
}

/// `N_diag` snippets of one trope, as indices into [`Dataset::snippets`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersonaBatch {
    pub trope_index: usize,
    pub members: Vec<usize>,
}

impl Dataset {
    /// Builds the vocabulary and catalog from `quotes`, then encodes them.
    pub fn build(
        quotes: &[RawQuote],
        descriptions: &[TropeDescription],
        vocab_size: usize,
        seq_len: usize,
    ) -> Result<Self> {
        let vocab = Vocabulary::build(quotes, vocab_size)?;
        let catalog = TropeCatalog::build(quotes, descriptions);
        Self::with_vocab(quotes, vocab, catalog, seq_len)
    }

    pub fn with_vocab(
        quotes: &[RawQuote],
        vocab: Vocabulary,
        catalog: TropeCatalog,
        seq_len: usize,
    ) -> Result<Self> {
        let mut snippets = Vec::with_capacity(quotes.len());
        let mut meta = Vec::with_capacity(quotes.len());
        let mut pools: HashMap<Split, Vec<Vec<usize>>> = HashMap::new();
        for q in quotes {
            let enc = encode_snippet(q, &vocab, &catalog, seq_len)?;
            let pool = pools
                .entry(q.split)
                .or_insert_with(|| vec![Vec::new(); catalog.len()]);
            pool[enc.trope_index].push(snippets.len());
            snippets.push(enc);
            meta.push(SnippetMeta {
                character: q.character.clone(),
                movie: q.movie.clone(),
                split: q.split,
            });
        }
        Ok(Dataset {
            vocab,
            catalog,
            seq_len,
            snippets,
            meta,
            pools,
        })
    }

    pub fn n_tropes(&self) -> usize {
        self.catalog.len()
    }

    /// Snippet indices of `trope` in `split`.
    pub fn pool(&self, split: Split, trope: usize) -> &[usize] {
        self.pools
            .get(&split)
            .and_then(|p| p.get(trope))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.pools
            .get(&split)
            .map_or(0, |p| p.iter().map(Vec::len).sum())
    }

    /// Uniform draw of `n_diag` snippets of `trope`: without replacement when
    /// the pool is large enough, with replacement otherwise.
    pub fn sample_batch<R: Rng>(
        &self,
        split: Split,
        trope: usize,
        n_diag: usize,
        rng: &mut R,
    ) -> Result<PersonaBatch> {
        if trope >= self.n_tropes() {
            return Err(AmnError::UnknownTrope(format!("#{trope}")));
        }
        if n_diag == 0 {
            return Err(AmnError::InvalidArgument(
                "N_diag must be at least 1".into(),
            ));
        }
        let pool = self.pool(split, trope);
        if pool.is_empty() {
            return Err(AmnError::InvalidArgument(format!(
                "trope `{}` has no {split} snippets",
                self.catalog.trope_id(trope)
            )));
        }
        let members = if pool.len() >= n_diag {
            pool.choose_multiple(rng, n_diag).copied().collect()
        } else {
            (0..n_diag)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect()
        };
        Ok(PersonaBatch {
            trope_index: trope,
            members,
        })
    }

    /// Deterministic evaluation batches: each trope's snippets in corpus
    /// order, cut into chunks of `n_diag`; a short final chunk is completed
    /// by wrapping around to the start of the trope's pool.
    pub fn eval_batches(&self, split: Split, n_diag: usize) -> Vec<PersonaBatch> {
        let mut out = Vec::new();
        for trope in 0..self.n_tropes() {
            for members in chunk_with_wrap(self.pool(split, trope), n_diag) {
                out.push(PersonaBatch {
                    trope_index: trope,
                    members,
                });
            }
        }
        out
    }
}

pub(crate) fn chunk_with_wrap(pool: &[usize], n: usize) -> Vec<Vec<usize>> {
    if pool.is_empty() || n == 0 {
        return Vec::new();
    }
    let n_chunks = pool.len().div_ceil(n);
    (0..n_chunks)
        .map(|c| (0..n).map(|j| pool[(c * n + j) % pool.len()]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn quote(trope: &str, d: &str, split: Split) -> RawQuote {
        RawQuote {
            trope_id: trope.into(),
            character: "c".into(),
            movie: "m".into(),
            char_lines: d.into(),
            context: String::new(),
            others_lines: String::new(),
            split,
        }
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Hello, World!"), vec!["hello", ",", "world", "!"]);
        assert_eq!(tokenize("don't"), vec!["don", "'", "t"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocab_orders_by_frequency() {
        let q = [quote("p", "a a b", Split::Train)];
        let v = Vocabulary::build(&q, 10).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn vocab_truncates_to_max_size() {
        let q = [quote("p", "a a b", Split::Train)];
        let v = Vocabulary::build(&q, 3).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("b"), OOV);
    }

    #[test]
    fn vocab_ties_break_lexicographically_and_ignore_other_splits() {
        let q = [
            quote("p", "zeta alpha", Split::Train),
            quote("p", "omega omega omega", Split::Test),
        ];
        let v = Vocabulary::build(&q, 10).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "alpha", "zeta"]);
    }

    #[test]
    fn vocab_rejects_empty_train_split() {
        let q = [quote("p", "a", Split::Val)];
        assert!(matches!(
            Vocabulary::build(&q, 10),
            Err(AmnError::EmptyTrainSplit)
        ));
    }

    #[test]
    fn encode_pads_and_truncates() {
        let q = [quote("p", "Hello.", Split::Train)];
        let v = Vocabulary::build(&q, 10).unwrap();
        let cat = TropeCatalog::build(&q, &[]);
        let e = encode_snippet(&q[0], &v, &cat, 4).unwrap();
        assert_eq!(e.d_ids, vec![v.id("hello"), v.id("."), 0, 0]);
        assert_eq!(e.d_len, 2);
        assert_eq!(e.e_ids, vec![0; 4]);
        assert_eq!(e.e_len, 0);

        let long = quote("p", "hello hello hello hello hello hello", Split::Train);
        let e = encode_snippet(&long, &v, &cat, 4).unwrap();
        assert_eq!(e.d_ids.len(), 4);
        assert_eq!(e.d_len, 4);
    }

    #[test]
    fn encode_rejects_unknown_trope() {
        let q = [quote("p", "a", Split::Train)];
        let v = Vocabulary::build(&q, 10).unwrap();
        let cat = TropeCatalog::build(&q, &[]);
        let other = quote("nope", "a", Split::Train);
        let err = encode_snippet(&other, &v, &cat, 4).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn description_embedding_is_token_mean() {
        let q = [quote("p", "u v", Split::Train)];
        let v = Vocabulary::build(&q, 10).unwrap();
        let table =
            Tensor::<f64>::from_f64(&[4, 2], &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, -4.0]).unwrap();
        let (u, w) = (
            table.row_slice(v.id("u")).to_vec(),
            table.row_slice(v.id("v")).to_vec(),
        );
        assert_eq!(embed_description("u u u", &v, &table), u);
        assert_eq!(
            embed_description("u v", &v, &table),
            vec![(u[0] + w[0]) / 2.0, (u[1] + w[1]) / 2.0]
        );
        assert_eq!(embed_description("", &v, &table), vec![0.0, 0.0]);
        assert_eq!(
            embed_description("unknown words", &v, &table),
            vec![0.0, 0.0]
        );
    }

    fn pool_dataset(n: usize) -> Dataset {
        let quotes: Vec<RawQuote> = (0..n)
            .map(|i| quote("p", &format!("w{i}"), Split::Train))
            .chain(std::iter::once(quote("q", "x", Split::Train)))
            .collect();
        Dataset::build(&quotes, &[], 100, 4).unwrap()
    }

    #[test]
    fn sampling_without_replacement_when_pool_is_large() {
        let ds = pool_dataset(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ds.sample_batch(Split::Train, 0, 8, &mut rng).unwrap();
        assert_eq!(b.members.len(), 8);
        let mut m = b.members.clone();
        m.sort_unstable();
        m.dedup();
        assert_eq!(m.len(), 8);
        assert!(b.members.iter().all(|&i| ds.snippets[i].trope_index == 0));
    }

    #[test]
    fn sampling_with_replacement_when_pool_is_small() {
        let ds = pool_dataset(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ds.sample_batch(Split::Train, 0, 8, &mut rng).unwrap();
        assert_eq!(b.members.len(), 8);
        assert!(b.members.iter().all(|&i| ds.snippets[i].trope_index == 0));
    }

    #[test]
    fn sampling_is_seed_deterministic_and_rejects_unknown_trope() {
        let ds = pool_dataset(20);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ds.sample_batch(Split::Train, 0, 5, &mut rng).unwrap()
        };
        assert_eq!(draw(7), draw(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ds.sample_batch(Split::Train, 9, 5, &mut rng).is_err());
        assert!(ds.sample_batch(Split::Val, 0, 5, &mut rng).is_err());
    }

    #[test]
    fn eval_batches_wrap_the_last_chunk() {
        assert_eq!(
            chunk_with_wrap(&[10, 11, 12, 13, 14], 2),
            vec![vec![10, 11], vec![12, 13], vec![14, 10]]
        );
        assert_eq!(chunk_with_wrap(&[4], 3), vec![vec![4, 4, 4]]);
    }
}
