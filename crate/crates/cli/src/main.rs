use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amn_core::config::variant_matrix;
use amn_core::corpus::{
    read_descriptions, read_quotes, read_word_vectors, write_jsonl, EncodedSnippet,
};
use amn_core::synth::{overfit_config, overfit_corpus, sparse_signal_corpus};
use amn_core::trainer::{
    character_tropes, checkpoint, cluster_and_purity, default_check_options, evaluate,
    export_embeddings, gradcheck_config, model_gradcheck, prepare, train, EntityKind,
};
use amn_core::{Dataset, PersonaModel, Split, VariantConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "amn",
    version,
    about = "Attentive memory network for persona classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Quotes as JSON lines.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Trope descriptions as JSON lines.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint; the step log goes to --out.
    Train(Shared),
    /// Evaluate a checkpoint; per-batch predictions and attention go to --out.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Export character and movie embeddings as JSON lines.
    Embed(Shared),
    /// Cluster character embeddings and report purity against their tropes.
    Cluster {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        k: usize,
    },
    /// Finite-difference check of every variant on a tiny model.
    Gradcheck(Shared),
    /// Overfit a synthetic corpus and check a checkpoint round trip.
    Selftest(Shared),
    /// Write a synthetic corpus: quotes to --corpus, descriptions to --descriptions.
    Synth {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_enum, default_value = "overfit")]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Four tropes, a marker in every snippet.
    Overfit,
    /// Twelve tropes, a marker in one snippet of four.
    Sparse,
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("--{flag} is required"))
}

fn load_config(shared: &Shared) -> Result<VariantConfig> {
    let mut cfg = match &shared.config {
        Some(p) => {
            VariantConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => VariantConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_checkpoint(shared: &Shared) -> Result<(PersonaModel<f32>, Dataset)> {
    let path = required(&shared.checkpoint, "checkpoint")?;
    let (model, vocab, catalog) =
        checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let quotes = read_quotes(required(&shared.corpus, "corpus")?)?;
    let data = Dataset::with_vocab(&quotes, vocab, catalog, model.cfg.seq_len)?;
    Ok((model, data))
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_train(shared: &Shared) -> Result<()> {
    let cfg = load_config(shared)?;
    let quotes = read_quotes(required(&shared.corpus, "corpus")?)?;
    let descriptions = read_descriptions(required(&shared.descriptions, "descriptions")?)?;
    let ckpt = required(&shared.checkpoint, "checkpoint")?;
    let pretrained = match &cfg.pretrained_embeddings {
        Some(p) => Some(read_word_vectors(Path::new(p), cfg.d_emb)?),
        None => None,
    };
    let (data, model) = prepare(&cfg, &quotes, &descriptions, pretrained.as_ref())?;
    log::info!(
        "{}: {} quotes, {} tropes, vocabulary {}",
        cfg.variant_name(),
        data.snippets.len(),
        data.n_tropes(),
        data.vocab.len()
    );
    let mut sink = shared.out.as_deref().map(open_out).transpose()?;
    let outcome = train(model, &data, sink.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = sink {
        w.flush()?;
    }
    checkpoint::save(ckpt, &outcome.model, &data.vocab, &data.catalog)?;
    let val = (data.split_len(Split::Val) > 0)
        .then(|| evaluate(&outcome.model, &data, Split::Val))
        .transpose()?
        .map(|e| e.metrics);
    println!(
        "{}",
        json!({
            "variant": cfg.variant_name(),
            "best_epoch": outcome.best_epoch,
            "diverged": outcome.diverged,
            "val": val,
            "checkpoint": ckpt,
        })
    );
    if outcome.diverged.is_some() {
        bail!("training diverged");
    }
    Ok(())
}

fn cmd_eval(shared: &Shared, split: Split) -> Result<()> {
    let (model, data) = load_checkpoint(shared)?;
    let outcome = evaluate(&model, &data, split)?;
    if let Some(path) = &shared.out {
        let mut w = open_out(path)?;
        for (i, batch) in data
            .eval_batches(split, model.cfg.n_diag)
            .iter()
            .enumerate()
        {
            let snippets: Vec<&EncodedSnippet> =
                batch.members.iter().map(|&m| &data.snippets[m]).collect();
            let p = model.predict(&snippets)?;
            let rec = json!({
                "batch": i,
                "trope": data.catalog.trope_id(batch.trope_index),
                "predicted": data.catalog.trope_id(p.trope),
                "snippets": batch.members,
                "q": p.q,
                "gamma": p.gamma,
                "snippet_attention": {
                    "d": p.inter_weights[0],
                    "e": p.inter_weights[1],
                    "o": p.inter_weights[2],
                },
            });
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    println!(
        "{}",
        json!({ "split": split.to_string(), "metrics": outcome.metrics })
    );
    Ok(())
}

fn cmd_embed(shared: &Shared) -> Result<()> {
    let (model, data) = load_checkpoint(shared)?;
    let out = required(&shared.out, "out")?;
    let embeddings = export_embeddings(&model, &data)?;
    write_jsonl(out, &embeddings)?;
    log::info!("wrote {} embeddings to {}", embeddings.len(), out.display());
    Ok(())
}

fn cmd_cluster(shared: &Shared, k: usize) -> Result<()> {
    let (model, data) = load_checkpoint(shared)?;
    let tropes = character_tropes(&data);
    let characters: Vec<_> = export_embeddings(&model, &data)?
        .into_iter()
        .filter(|e| e.kind == EntityKind::Character)
        .collect();
    let items: Vec<Vec<f64>> = characters.iter().map(|e| e.vector.clone()).collect();
    let truth: Vec<usize> = characters.iter().map(|e| tropes[&e.id]).collect();
    let result = cluster_and_purity(&items, &truth, k, model.cfg.linkage, model.cfg.distance)?;
    if let Some(path) = &shared.out {
        let rows: Vec<_> = characters
            .iter()
            .zip(&result.assignment)
            .map(|(e, c)| json!({ "id": e.id, "cluster": c, "trope": data.catalog.trope_id(tropes[&e.id]) }))
            .collect();
        write_jsonl(path, &rows)?;
    }
    println!(
        "{}",
        json!({ "characters": items.len(), "k": result.k, "purity": result.purity })
    );
    Ok(())
}

fn cmd_gradcheck(shared: &Shared) -> Result<()> {
    let configs: Vec<VariantConfig> = match &shared.config {
        Some(_) => vec![load_config(shared)?],
        None => variant_matrix(2)
            .into_iter()
            .map(|v| {
                let mut cfg = gradcheck_config(v);
                if let Some(seed) = shared.seed {
                    cfg.seed = seed;
                }
                cfg
            })
            .collect(),
    };
    let mut worst = 0.0f64;
    let mut reports = Vec::new();
    for cfg in &configs {
        let report = model_gradcheck(cfg, default_check_options(Some(16)))?;
        let status = if report.max_rel_error < GRADCHECK_TOLERANCE {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{status:4} {:<40} {:.3e}",
            cfg.variant_name(),
            report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
        reports.push(json!({ "variant": cfg.variant_name(), "report": report }));
    }
    if let Some(path) = &shared.out {
        write_jsonl(path, &reports)?;
    }
    println!("worst relative error {worst:.3e}");
    if !(worst < GRADCHECK_TOLERANCE) {
        bail!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}

fn cmd_selftest(shared: &Shared) -> Result<()> {
    let seed = shared.seed.unwrap_or(0);
    let corpus = overfit_corpus(seed).generate()?;
    let cfg = overfit_config(seed);
    let (data, model) = prepare(&cfg, &corpus.quotes, &corpus.descriptions, None)?;
    let trained = train(model, &data, None)?.model;
    let acc = evaluate(&trained, &data, Split::Train)?.metrics.accuracy;
    println!("synthetic overfit: train accuracy {acc:.3}");

    let mut bytes = Vec::new();
    checkpoint::write(&mut bytes, &trained, &data.vocab, &data.catalog)?;
    let (loaded, _, _) = checkpoint::read(bytes.as_slice())?;
    let before = evaluate(&trained, &data, Split::Test)?;
    let after = evaluate(&loaded, &data, Split::Test)?;
    let round_trip = before.predicted == after.predicted && before.metrics == after.metrics;
    println!("checkpoint round trip identical: {round_trip}");
    if acc < 0.99 || !round_trip {
        bail!("selftest failed");
    }
    Ok(())
}

fn cmd_synth(shared: &Shared, preset: Preset) -> Result<()> {
    let seed = shared.seed.unwrap_or(0);
    let synth = match preset {
        Preset::Overfit => overfit_corpus(seed),
        Preset::Sparse => sparse_signal_corpus(seed),
    };
    let corpus = synth.generate()?;
    write_jsonl(required(&shared.corpus, "corpus")?, &corpus.quotes)?;
    write_jsonl(
        required(&shared.descriptions, "descriptions")?,
        &corpus.descriptions,
    )?;
    println!(
        "{}",
        json!({ "quotes": corpus.quotes.len(), "tropes": corpus.descriptions.len(), "seed": seed })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(s) => cmd_train(&s),
        Command::Eval { shared, split } => cmd_eval(&shared, split.into()),
        Command::Embed(s) => cmd_embed(&s),
        Command::Cluster { shared, k } => cmd_cluster(&shared, k),
        Command::Gradcheck(s) => cmd_gradcheck(&s),
        Command::Selftest(s) => cmd_selftest(&s),
        Command::Synth { shared, preset } => cmd_synth(&shared, preset),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
