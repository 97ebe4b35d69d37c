use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = amn(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "amn {args:?} failed: {stderr}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "\
variant = attn_3_rw-mem
n_diag = 3
vocab_size = 200
seq_len = 12
d_emb = 16
d_h = 16
d_a = 16
d_v = 16
mem_size = 16
top_k = 3
lr = 0.005
epochs = 200
";

#[test]
fn synth_train_eval_embed_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    fs::write(p("small.cfg"), SMALL).unwrap();
    let (corpus, desc, ckpt, cfg) = (
        p("quotes.jsonl"),
        p("desc.jsonl"),
        p("model.amn"),
        p("small.cfg"),
    );

    let made = ok(&[
        "synth",
        "--corpus",
        s(&corpus),
        "--descriptions",
        s(&desc),
        "--seed",
        "4",
    ]);
    assert_eq!(made["tropes"], 4);
    assert_eq!(made["quotes"], 4 * (40 + 8 + 16));

    let trained = ok(&[
        "train",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--descriptions",
        s(&desc),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&p("log.jsonl")),
    ]);
    assert_eq!(trained["variant"], "attn_3_rw-mem_ndialog3");
    assert!(trained["diverged"].is_null());
    let log = jsonl(&p("log.jsonl"));
    assert_eq!(log.iter().filter(|r| r["kind"] == "epoch").count(), 200);
    assert_eq!(log.iter().filter(|r| r["kind"] == "step").count(), 200 * 4);

    let eval = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--split",
        "test",
        "--out",
        s(&p("pred.jsonl")),
    ]);
    let acc = eval["metrics"]["accuracy"].as_f64().unwrap();
    assert!(acc > 0.5, "{eval}");
    let preds = jsonl(&p("pred.jsonl"));
    // 16 test quotes per trope in batches of 3, the last one wrapped.
    assert_eq!(preds.len(), 4 * 6);
    for r in &preds {
        let q: Vec<f64> = serde_json::from_value(r["q"].clone()).unwrap();
        assert_eq!(q.len(), 4);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert_eq!(r["snippet_attention"]["d"].as_array().unwrap().len(), 3);
    }
    let hits = preds
        .iter()
        .filter(|r| r["trope"] == r["predicted"])
        .count();
    assert!((hits as f64 / preds.len() as f64 - acc).abs() < 1e-12);

    let again = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--split",
        "test",
    ]);
    assert_eq!(again, eval);

    let emb = p("emb.jsonl");
    ok_silent(&[
        "embed",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--out",
        s(&emb),
    ]);
    let rows = jsonl(&emb);
    assert!(rows.iter().any(|r| r["kind"] == "character"));
    assert!(rows.iter().any(|r| r["kind"] == "movie"));
    assert!(rows
        .iter()
        .all(|r| r["vector"].as_array().unwrap().len() == 32));

    let clustered = ok(&[
        "cluster",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--k",
        "4",
    ]);
    assert_eq!(clustered["k"], 4);
    let purity = clustered["purity"].as_f64().unwrap();
    assert!(purity > 0.0 && purity <= 1.0);
}

fn ok_silent(args: &[&str]) {
    let out = amn(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gradcheck_on_a_single_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "variant = attn_3_tropetrip_ks-mem\nn_diag = 2\nvocab_size = 30\nseq_len = 5\nd_emb = 4\nd_h = 3\n\
         d_a = 4\nd_v = 3\ndesc_proj_dim = 3\ninit_scale = 0.5\nmargin_t = 2.5\nmargin_mt = 2.5\nmargin_mr = 2.5\n",
    )
    .unwrap();
    let out = amn(&["gradcheck", "--config", s(&cfg)]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("ok   attn_3_tropetrip_ks-mem"), "{stdout}");
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = amn(&["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus is required"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "d_hidden = 4\n").unwrap();
    let out = amn(&["gradcheck", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `d_hidden`"));

    let ckpt = dir.path().join("junk.amn");
    fs::write(&ckpt, b"not a model").unwrap();
    let corpus = dir.path().join("q.jsonl");
    fs::write(&corpus, "").unwrap();
    let out = amn(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&corpus)]);
    assert!(!out.status.success());
}
