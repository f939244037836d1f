use std::collections::HashSet;

use proptest::prelude::*;

use flaketriage::dataset::{
    check_4n, load_corpus, load_registry, restrict_corpus, sample_shot_indices, save_corpus, save_registry,
    split_indices, CategoryId, CategoryRegistry, FewShotConfig, LabeledExample, SplitSpec,
};
use flaketriage::{Error, RawLog};

fn registry(k: usize) -> CategoryRegistry {
    CategoryRegistry::from_names((0..k).map(|i| format!("cat_{i}"))).unwrap()
}

fn labels_strategy() -> impl Strategy<Value = (usize, Vec<CategoryId>)> {
    (2usize..6).prop_flat_map(|k| {
        prop::collection::vec(4usize..40, k).prop_map(move |counts| {
            let labels = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
            (k, labels)
        })
    })
}

proptest! {
    #[test]
    fn split_partitions_every_category((k, labels) in labels_strategy(), seed in any::<u64>()) {
        let reg = registry(k);
        let spec = SplitSpec::default().with_seed(seed);
        let s = split_indices(&labels, &spec, &reg).unwrap();
        let all: Vec<usize> = s.learn.iter().chain(&s.valid).chain(&s.test).copied().collect();
        let uniq: HashSet<usize> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert_eq!(uniq.len(), labels.len());
        for c in 0..k {
            let n = labels.iter().filter(|&&l| l == c).count();
            let count = |v: &[usize]| v.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(count(&s.learn), n / 4);
            prop_assert_eq!(count(&s.valid), n / 4);
            prop_assert_eq!(count(&s.test), n - 2 * (n / 4));
        }
        prop_assert_eq!(split_indices(&labels, &spec, &reg).unwrap(), s);
    }

    #[test]
    fn shots_are_exact_and_distinct((k, labels) in labels_strategy(), n in 1usize..4, seed in any::<u64>()) {
        let reg = registry(k);
        let idx = sample_shot_indices(&labels, &FewShotConfig { shots_per_category: n, seed }, &reg).unwrap();
        prop_assert_eq!(idx.len(), n * k);
        prop_assert_eq!(idx.iter().collect::<HashSet<_>>().len(), idx.len());
        for c in 0..k {
            prop_assert_eq!(idx.iter().filter(|&&i| labels[i] == c).count(), n);
        }
    }
}

#[test]
fn shot_sampling_reports_short_categories() {
    let reg = registry(2);
    let labels = vec![0, 0, 0, 1];
    let err = sample_shot_indices(&labels, &FewShotConfig { shots_per_category: 2, seed: 0 }, &reg).unwrap_err();
    assert!(matches!(err, Error::InsufficientExamples { ref category, needed: 2, found: 1 } if category == "cat_1"));
}

fn example(id: &str, cat: CategoryId, text: &str) -> LabeledExample {
    LabeledExample {
        id: id.into(),
        raw: RawLog::from_text(text),
        category: cat,
    }
}

#[test]
fn four_n_check_lists_short_categories() {
    let reg = registry(3);
    let mut data: Vec<LabeledExample> = (0..8).map(|i| example(&format!("a{i}"), 0, "x")).collect();
    data.extend((0..7).map(|i| example(&format!("b{i}"), 1, "x")));
    data.extend((0..9).map(|i| example(&format!("c{i}"), 2, "x")));
    assert_eq!(check_4n(&data, 2, &reg), vec!["cat_1".to_string()]);
    assert!(check_4n(&data, 1, &reg).is_empty());
}

#[test]
fn corpus_and_registry_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reg = registry(2);
    let data = vec![
        example("j1", 0, "line one\nline \"two\"\n\ttabbed"),
        example("j2", 1, ""),
        example("j3", 1, "only"),
    ];
    let path = dir.path().join("corpus.jsonl");
    save_corpus(&path, &reg, &data).unwrap();
    let (reg2, back) = load_corpus(&path, None).unwrap();
    assert_eq!(reg2.names(), reg.names());
    assert_eq!(back, data);

    let reg_path = dir.path().join("registry.txt");
    save_registry(&reg_path, &reg).unwrap();
    assert_eq!(load_registry(&reg_path).unwrap(), reg);

    let other = CategoryRegistry::from_names(["cat_0"]).unwrap();
    assert!(matches!(load_corpus(&path, Some(&other)), Err(Error::UnknownCategory(c)) if c == "cat_1"));
}

#[test]
fn corpus_parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"id\":\"a\",\"category\":\"x\",\"log\":\"l\"}\n\nnot json\n").unwrap();
    assert!(matches!(load_corpus(&path, None), Err(Error::Parse { line: 3, .. })));
    let missing = dir.path().join("missing.jsonl");
    let err = load_corpus(&missing, None).unwrap_err();
    assert!(err.to_string().contains("missing.jsonl"));
}

#[test]
fn restriction_relabels_densely() {
    let reg = registry(4);
    let data: Vec<LabeledExample> = (0..4).map(|c| example(&format!("e{c}"), c, "x")).collect();
    let (sub, kept) = restrict_corpus(&data, &reg, &[3, 1]).unwrap();
    assert_eq!(sub.names(), vec!["cat_1", "cat_3"]);
    let labels: Vec<(String, CategoryId)> = kept.iter().map(|e| (e.id.clone(), e.category)).collect();
    assert_eq!(labels, vec![("e1".into(), 0), ("e3".into(), 1)]);
    assert!(restrict_corpus(&data, &reg, &[9]).is_err());
}
