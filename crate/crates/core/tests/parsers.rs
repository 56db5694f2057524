//! Replays the fuzz corpus through the parsers and throws arbitrary bytes at
//! them. Mirrors the checks in `fuzz/fuzz_targets`.

use std::path::PathBuf;

use amem::{FitTrace, MixtureModel, WeightedDataset};
use proptest::prelude::*;

type Check = fn(&[u8]) -> bool;

fn check_dataset(bytes: &[u8]) -> bool {
    let Ok(set) = WeightedDataset::read_csv(bytes) else {
        return false;
    };
    let mut buf = Vec::new();
    set.write_csv(&mut buf).unwrap();
    let again = WeightedDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(again.flat_points(), set.flat_points());
    assert_eq!(again.len(), set.len());
    true
}

fn check_model(bytes: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return false;
    };
    let Ok(model) = MixtureModel::read_json(text) else {
        return false;
    };
    let again = MixtureModel::read_json(&model.to_json()).unwrap();
    assert_eq!((again.len(), again.dim()), (model.len(), model.dim()));
    true
}

fn check_trace(bytes: &[u8]) -> bool {
    let Ok(trace) = FitTrace::read_csv(bytes) else {
        return false;
    };
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let again = FitTrace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(again.records.len(), trace.records.len());
    for (a, b) in again.records.iter().zip(&trace.records) {
        assert!(a.objective.to_bits() == b.objective.to_bits() || (a.objective.is_nan() && b.objective.is_nan()));
        assert_eq!((a.iter, a.k_active, a.choice, a.kills), (b.iter, b.k_active, b.choice, b.kills));
    }
    true
}

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

fn accepted(target: &str, check: Check) -> Vec<String> {
    corpus(target).into_iter().filter(|(_, b)| check(b)).map(|(n, _)| n).collect()
}

#[test]
fn dataset_corpus() {
    assert_eq!(accepted("dataset_csv", check_dataset), ["unweighted_1d.csv", "vps_12.csv", "weighted_2d.csv"]);
}

#[test]
fn model_corpus() {
    assert_eq!(accepted("model_json", check_model), ["unit_1d.json", "vws_k3.json"]);
}

#[test]
fn trace_corpus() {
    assert_eq!(accepted("trace_csv", check_trace), ["small.csv", "vws_aamem.csv", "vws_aem_k5.csv"]);
}

fn mutate(seed: &[u8], edits: &[(usize, u8)]) -> Vec<u8> {
    let mut out = seed.to_vec();
    for &(pos, byte) in edits {
        if out.is_empty() {
            out.push(byte);
        } else {
            let i = pos % (out.len() + 1);
            match byte % 3 {
                0 if i < out.len() => out[i] = byte,
                1 if i < out.len() => {
                    out.remove(i);
                }
                _ => out.insert(i.min(out.len()), byte),
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        check_dataset(&bytes);
        check_model(&bytes);
        check_trace(&bytes);
    }

    #[test]
    fn mutated_seeds_never_panic(which in 0usize..14, edits in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
        let mut all: Vec<(Check, Vec<u8>)> = Vec::new();
        for (t, f) in [("dataset_csv", check_dataset as Check), ("model_json", check_model), ("trace_csv", check_trace)] {
            all.extend(corpus(t).into_iter().map(|(_, b)| (f, b)));
        }
        let (check, seed) = &all[which % all.len()];
        check(&mutate(seed, &edits));
    }
}
