use amn_core::corpus::Split;
use amn_core::synth::{overfit_config, overfit_corpus};
use amn_core::trainer::checkpoint::{named_tensors, read, read_raw, write, MAGIC};
use amn_core::trainer::{evaluate, prepare, train};
use amn_core::{Dataset, PersonaModel, VariantConfig};

fn trained(variant: &str, epochs: usize) -> (Dataset, PersonaModel<f32>) {
    let corpus = overfit_corpus(3).generate().unwrap();
    let mut cfg: VariantConfig = overfit_config(3).with_variant(variant).unwrap();
    cfg.n_diag = cfg.n_diag.min(4);
    cfg.epochs = epochs;
    let (data, model) = prepare(&cfg, &corpus.quotes, &corpus.descriptions, None).unwrap();
    let model = train(model, &data, None).unwrap().model;
    (data, model)
}

fn bytes(data: &Dataset, model: &PersonaModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    write(&mut out, model, &data.vocab, &data.catalog).unwrap();
    out
}

#[test]
fn round_trip_is_bit_identical_for_each_memory_kind() {
    for variant in [
        "baseline_char",
        "attn_3_tropetrip-500_ks-mem",
        "attn_3_tropetrip_rw-mem",
    ] {
        let (data, model) = trained(variant, 3);
        let b = bytes(&data, &model);
        assert_eq!(&b[..4], MAGIC);
        let (loaded, vocab, catalog) = read(b.as_slice()).unwrap();
        assert_eq!(vocab, data.vocab);
        assert_eq!(catalog, data.catalog);
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.rw, model.rw, "{variant}");
        for ((na, ta), (nb, tb)) in named_tensors(&model).iter().zip(&named_tensors(&loaded)) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert!(
                ta.data()
                    .iter()
                    .zip(tb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits()),
                "{na}"
            );
        }
        let a = evaluate(&model, &data, Split::Test).unwrap();
        let c = evaluate(&loaded, &data, Split::Test).unwrap();
        assert_eq!(a.predicted, c.predicted);
        assert_eq!(a.metrics, c.metrics);
        // Writing the loaded model reproduces the file byte for byte.
        assert_eq!(bytes(&data, &loaded), b);
    }
}

#[test]
fn read_write_memory_is_stored_as_three_tensors() {
    let (data, model) = trained("attn_3_rw-mem", 2);
    let raw = read_raw(bytes(&data, &model).as_slice()).unwrap();
    let names: Vec<&str> = raw.tensors.iter().map(|(n, _)| n.as_str()).collect();
    for name in ["rw.keys", "rw.values", "rw.ages"] {
        assert!(names.contains(&name), "{name}");
    }
    let mem = model.rw.as_ref().unwrap();
    let ages = &raw.tensors.iter().find(|(n, _)| n == "rw.ages").unwrap().1;
    assert_eq!(
        ages.data().iter().map(|&a| a as u32).collect::<Vec<_>>(),
        mem.ages
    );
}

#[test]
fn corrupt_files_are_rejected() {
    let (data, model) = trained("attn_char_rw-mem", 1);
    let good = bytes(&data, &model);

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(read(bad_magic.as_slice()).is_err());

    assert!(read(&good[..good.len() / 2]).is_err());

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(read(trailing.as_slice()).is_err());

    // A negative age in slot 0, the first value of the last tensor.
    let raw = read_raw(good.as_slice()).unwrap();
    let (name, ages) = raw.tensors.last().unwrap();
    assert_eq!(name, "rw.ages");
    let tail = 4 * ages.len();
    let json_len: usize = {
        let v = serde_json::to_vec(&raw.vocab).unwrap().len();
        let c = serde_json::to_vec(&raw.config).unwrap().len();
        let k = serde_json::to_vec(&raw.catalog).unwrap().len();
        v + c + k + 12
    };
    let at = good.len() - json_len - tail;
    let mut negative = good.clone();
    negative[at..at + 4].copy_from_slice(&(-1.0f32).to_le_bytes());
    assert!(read(negative.as_slice()).is_err());
}

#[test]
fn missing_tensor_is_rejected() {
    let (data, model) = trained("attn_char", 1);
    let mut raw = read_raw(bytes(&data, &model).as_slice()).unwrap();
    raw.tensors.pop();
    let mut out = Vec::new();
    // Re-encode by hand with one tensor missing.
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(raw.tensors.len() as u32).to_le_bytes());
    for (name, t) in &raw.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for block in [
        serde_json::to_vec(&raw.vocab).unwrap(),
        serde_json::to_vec(&raw.config).unwrap(),
        serde_json::to_vec(&raw.catalog).unwrap(),
    ] {
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(&block);
    }
    let err = read(out.as_slice()).unwrap_err().to_string();
    assert!(err.contains("missing tensor"), "{err}");
}
