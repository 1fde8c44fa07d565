use std::fs;
use std::path::Path;
use std::sync::Arc;

use gzsl_core::data::{
    load_manifest, save_manifest, ClassVocabulary, Dataset, LabelSpace, ManifestData, Sample,
};
use gzsl_core::synth::{generate, SynthSpec};
use gzsl_core::Error;
use proptest::prelude::*;

fn write_manifest(dir: &Path, classes: &[(&str, bool)], train_labels: &[Vec<u8>]) -> std::path::PathBuf {
    let c = classes.len();
    let d = 3;
    let v = 2;
    let entries: Vec<String> = classes
        .iter()
        .enumerate()
        .map(|(i, (n, s))| format!(r#"{{"name":"{n}","seen":{s},"embedding_row":{i}}}"#))
        .collect();
    let json = format!(
        r#"{{"classes":[{}],"d":{d},"v":{v},"embeddings":"emb.csv","splits":{{
            "train":{{"features":"tr_x.csv","labels":"tr_y.csv"}},
            "val":{{"features":"va_x.csv","labels":"va_y.csv"}},
            "test":{{"features":"va_x.csv","labels":"va_y.csv"}}}}}}"#,
        entries.join(",")
    );
    fs::write(dir.join("m.json"), json).unwrap();
    let emb: String = (0..c).map(|i| format!("{},{},1\n", i as f64 * 0.5, 1.0 - i as f64)).collect();
    fs::write(dir.join("emb.csv"), emb).unwrap();
    let rows = |labels: &[Vec<u8>]| -> (String, String) {
        let x = labels.iter().enumerate().map(|(i, _)| format!("{i}.25,-1\n")).collect();
        let y = labels
            .iter()
            .map(|l| l.iter().map(u8::to_string).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        (x, y)
    };
    let (x, y) = rows(train_labels);
    fs::write(dir.join("tr_x.csv"), x).unwrap();
    fs::write(dir.join("tr_y.csv"), y).unwrap();
    let val: Vec<Vec<u8>> = (0..c).map(|i| (0..c).map(|j| u8::from(i == j)).collect()).collect();
    let (x, y) = rows(&val);
    fs::write(dir.join("va_x.csv"), x).unwrap();
    fs::write(dir.join("va_y.csv"), y).unwrap();
    dir.join("m.json")
}

fn one_hot(c: usize, i: usize) -> Vec<u8> {
    (0..c).map(|j| u8::from(i == j)).collect()
}

#[test]
fn ten_seen_four_unseen_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..14).map(|i| format!("finding_{i}")).collect();
    let classes: Vec<(&str, bool)> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i < 10)).collect();
    let train: Vec<Vec<u8>> = (0..10).map(|i| one_hot(14, i)).collect();
    let data = load_manifest(write_manifest(dir.path(), &classes, &train)).unwrap();
    assert_eq!(data.vocab.num_classes(), 14);
    assert_eq!(data.vocab.num_seen(), 10);
    assert_eq!(data.vocab.unseen_ids(), &[10, 11, 12, 13]);
    assert_eq!(data.train.label_space, LabelSpace::SeenOnly);
    assert_eq!(data.train.samples[3].labels, one_hot(10, 3));
}

#[test]
fn unseen_positive_in_training_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let classes = [("a", true), ("b", true), ("c", false)];
    let train = vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1], vec![1, 0, 0]];
    let err = load_manifest(write_manifest(dir.path(), &classes, &train)).unwrap_err();
    match err {
        Error::InductiveViolation { sample, class } => {
            assert_eq!(sample, 2);
            assert_eq!(class, "c");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn non_binary_label_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let classes = [("a", true), ("b", true), ("c", false)];
    let train = vec![vec![1, 0, 0], vec![0, 2, 0]];
    match load_manifest(write_manifest(dir.path(), &classes, &train)).unwrap_err() {
        Error::InvalidDataset(v) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].sample, Some(1));
            assert!(v[0].reason.contains("non-binary label"));
        }
        other => panic!("unexpected error {other}"),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn assert_same_data(a: &ManifestData, b: &ManifestData) {
    assert_eq!(a.vocab, b.vocab);
    assert_eq!(a.semantics.as_array(), b.semantics.as_array());
    for (x, y) in [(&a.train, &b.train), (&a.val, &b.val), (&a.test, &b.test)] {
        assert_eq!(x.label_space, y.label_space);
        assert_eq!(x.samples, y.samples);
    }
}

#[test]
fn small_synthetic_manifest_round_trips_byte_identically() {
    let spec = SynthSpec {
        num_classes: 3,
        num_seen: 2,
        semantic_dim: 16,
        feature_dim: 8,
        n_train: 5,
        n_val: 5,
        n_test: 5,
        max_labels_per_sample: 2,
        seed: 4,
        ..Default::default()
    };
    let bench = generate(&spec).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let loaded = load_manifest(save_manifest(first.path(), &bench.data).unwrap()).unwrap();
    assert_same_data(&loaded, &bench.data);
    save_manifest(second.path(), &loaded).unwrap();
    assert_eq!(dir_bytes(first.path()), dir_bytes(second.path()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_generated_manifest_round_trips(seed in any::<u64>(), noise in 0.0f64..3.0, c in 3usize..7) {
        let spec = SynthSpec {
            num_classes: c,
            num_seen: c - 1,
            semantic_dim: 5,
            feature_dim: 4,
            n_train: 6,
            n_val: 4,
            n_test: 4,
            noise_sigma: noise,
            max_labels_per_sample: 2,
            seed,
            ..Default::default()
        };
        let bench = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let loaded = load_manifest(save_manifest(dir.path(), &bench.data).unwrap()).unwrap();
        assert_same_data(&loaded, &bench.data);
    }

    #[test]
    fn accepted_training_splits_carry_no_unseen_positive(
        labels in proptest::collection::vec(proptest::collection::vec(0u8..2, 5), 1..20)
    ) {
        let vocab = Arc::new(ClassVocabulary::new(
            ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
            &[true, false, true, true, false],
        ).unwrap());
        let samples: Vec<Sample> = labels.iter().map(|l| Sample::new(vec![0.0], l.clone())).collect();
        let raw_unseen: usize = labels.iter().map(|l| usize::from(l[1]) + usize::from(l[4])).sum();
        let ds = Dataset::new(samples, LabelSpace::AllClasses, 1, vocab.clone());
        match ds.into_training_split() {
            Ok(train) => {
                prop_assert_eq!(raw_unseen, 0);
                let full = train.all_class_labels();
                let unseen: usize = full.iter().map(|l| vocab.unseen_ids().iter().map(|&c| l[c] as usize).sum::<usize>()).sum();
                prop_assert_eq!(unseen, 0);
                prop_assert_eq!(full, labels);
            }
            Err(Error::InductiveViolation { sample, .. }) => {
                prop_assert!(raw_unseen > 0);
                let first = labels.iter().position(|l| l[1] == 1 || l[4] == 1).unwrap();
                prop_assert_eq!(sample, first);
            }
            Err(e) => prop_assert!(false, "unexpected error {}", e),
        }
    }
}
