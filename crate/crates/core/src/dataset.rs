//! Labeled corpora, the category registry, stratified splitting and few-shot
//! sampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::RawLog;
use crate::seed;

pub type CategoryId = usize;

/// Priority failure categories, ordered by priority rank 1 to 13.
pub const PRIORITY_CATEGORIES: [&str; 13] = [
    "misconfigured_env_variable",
    "job_execution_timeout",
    "dependency_installation_failure",
    "runner_pod_waiting_timeout",
    "api_gateway_deployment_error",
    "container_registry_server_error",
    "git_transient_error",
    "flaky_ui_test",
    "external_file_invalid_format",
    "host_resolution_failure",
    "runner_image_pull_failure",
    "remote_call_timeout",
    "helm_resource_error",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    pub rank: u32,
}

/// Ordered set of categories with contiguous ids `0..K`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryRegistry {
    categories: Vec<Category>,
    by_name: HashMap<String, CategoryId>,
}

impl CategoryRegistry {
    /// Builds a registry from `(name, rank)` pairs; ids follow input order.
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut reg = CategoryRegistry::default();
        for (name, rank) in entries {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::invalid("empty category name"));
            }
            let id = reg.categories.len();
            if reg.by_name.insert(name.clone(), id).is_some() {
                return Err(Error::invalid(format!("duplicate category `{name}`")));
            }
            reg.categories.push(Category { id, name, rank });
        }
        Ok(reg)
    }

    /// Ranks are assigned from list position, starting at 1.
    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(names.into_iter().zip(1..))
    }

    /// The 13 priority categories.
    pub fn priority() -> Self {
        Self::from_names(PRIORITY_CATEGORIES).expect("static list is valid")
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: CategoryId) -> &str {
        &self.categories[id].name
    }

    pub fn get(&self, id: CategoryId) -> Option<&Category> {
        self.categories.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    /// Ids of categories whose rank falls in `lo..=hi`.
    pub fn ids_by_rank(&self, lo: u32, hi: u32) -> Vec<CategoryId> {
        self.categories
            .iter()
            .filter(|c| (lo..=hi).contains(&c.rank))
            .map(|c| c.id)
            .collect()
    }

    /// A registry holding only `ids` (kept in current id order), plus the map
    /// from old ids to new ones.
    pub fn restrict(&self, ids: &[CategoryId]) -> Result<(Self, HashMap<CategoryId, CategoryId>)> {
        let mut keep: Vec<CategoryId> = ids.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if let Some(&bad) = keep.iter().find(|&&id| id >= self.len()) {
            return Err(Error::invalid(format!("category id {bad} out of range")));
        }
        let reg = Self::new(
            keep.iter()
                .map(|&id| (self.categories[id].name.clone(), self.categories[id].rank)),
        )?;
        let map = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Ok((reg, map))
    }
}

/// Reads a registry file: one category name per line in rank order. Blank
/// lines and lines starting with `#` are skipped.
pub fn load_registry(path: impl AsRef<Path>) -> Result<CategoryRegistry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CategoryRegistry::from_names(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#')),
    )
}

pub fn save_registry(path: impl AsRef<Path>, registry: &CategoryRegistry) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for c in registry.iter() {
        text.push_str(&c.name);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub raw: RawLog,
    pub category: CategoryId,
}

/// One line of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub category: String,
    pub log: String,
}

/// Parses a line-delimited JSON corpus. With `registry` given, labels must
/// belong to it; otherwise a registry is built from labels in order of first
/// appearance.
pub fn read_corpus<R: BufRead>(
    reader: R,
    registry: Option<&CategoryRegistry>,
) -> Result<(CategoryRegistry, Vec<LabeledExample>)> {
    let mut names: Vec<String> = Vec::new();
    let mut seen: HashMap<String, CategoryId> = HashMap::new();
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let category = match registry {
            Some(reg) => reg
                .id(&rec.category)
                .ok_or_else(|| Error::UnknownCategory(rec.category.clone()))?,
            None => *seen.entry(rec.category.clone()).or_insert_with(|| {
                names.push(rec.category.clone());
                names.len() - 1
            }),
        };
        examples.push(LabeledExample {
            id: rec.id,
            raw: RawLog::from_text(&rec.log),
            category,
        });
    }
    let registry = match registry {
        Some(reg) => reg.clone(),
        None => CategoryRegistry::from_names(names)?,
    };
    Ok((registry, examples))
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    registry: Option<&CategoryRegistry>,
) -> Result<(CategoryRegistry, Vec<LabeledExample>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), registry)
}

pub fn write_corpus<W: Write>(
    mut out: W,
    registry: &CategoryRegistry,
    examples: &[LabeledExample],
) -> std::io::Result<()> {
    for ex in examples {
        let rec = CorpusRecord {
            id: ex.id.clone(),
            category: registry.name(ex.category).to_string(),
            log: ex.raw.to_text(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(
    path: impl AsRef<Path>,
    registry: &CategoryRegistry,
    examples: &[LabeledExample],
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), registry, examples).map_err(|e| Error::io(path, e))
}

/// Keeps only examples of `ids`, relabeled into the restricted registry.
pub fn restrict_corpus(
    data: &[LabeledExample],
    registry: &CategoryRegistry,
    ids: &[CategoryId],
) -> Result<(CategoryRegistry, Vec<LabeledExample>)> {
    let (reg, map) = registry.restrict(ids)?;
    let examples = data
        .iter()
        .filter_map(|ex| {
            map.get(&ex.category).map(|&category| LabeledExample {
                category,
                ..ex.clone()
            })
        })
        .collect();
    Ok((reg, examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub learn_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            learn_frac: 0.25,
            valid_frac: 0.25,
            test_frac: 0.50,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        SplitSpec { seed, ..self }
    }

    fn validate(&self) -> Result<()> {
        let fracs = [self.learn_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid("split fractions must lie in [0, 1]"));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Minimum examples per category accepted by [`stratified_split`].
pub const MIN_PER_CATEGORY: usize = 4;

/// Three disjoint partitions, each listed category by category.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split<T> {
    pub learn: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

fn floor_share(n: usize, frac: f64) -> usize {
    // Guard against 0.29 * 100 = 28.999...
    ((n as f64) * frac + 1e-9).floor() as usize
}

/// Stratified split over positions in `labels`. Per category (in id order)
/// the positions are shuffled, then cut by floor of each fraction; the
/// remainder goes to the test partition.
pub fn split_indices(
    labels: &[CategoryId],
    spec: &SplitSpec,
    registry: &CategoryRegistry,
) -> Result<Split<usize>> {
    spec.validate()?;
    let by_cat = group_by_category(labels, registry)?;
    let mut rng = seed::rng(spec.seed);
    let mut split = Split::default();
    for (cat, mut idx) in by_cat.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_PER_CATEGORY {
            return Err(Error::InsufficientExamples {
                category: registry.name(cat).to_string(),
                needed: MIN_PER_CATEGORY,
                found: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_learn = floor_share(idx.len(), spec.learn_frac);
        let n_valid = floor_share(idx.len(), spec.valid_frac);
        split.learn.extend_from_slice(&idx[..n_learn]);
        split.valid.extend_from_slice(&idx[n_learn..n_learn + n_valid]);
        split.test.extend_from_slice(&idx[n_learn + n_valid..]);
    }
    Ok(split)
}

pub fn stratified_split(
    data: &[LabeledExample],
    spec: &SplitSpec,
    registry: &CategoryRegistry,
) -> Result<Split<LabeledExample>> {
    let labels: Vec<CategoryId> = data.iter().map(|e| e.category).collect();
    let idx = split_indices(&labels, spec, registry)?;
    let pick = |v: &[usize]| v.iter().map(|&i| data[i].clone()).collect();
    Ok(Split {
        learn: pick(&idx.learn),
        valid: pick(&idx.valid),
        test: pick(&idx.test),
    })
}

fn group_by_category(labels: &[CategoryId], registry: &CategoryRegistry) -> Result<Vec<Vec<usize>>> {
    let mut by_cat = vec![Vec::new(); registry.len()];
    for (i, &c) in labels.iter().enumerate() {
        by_cat
            .get_mut(c)
            .ok_or_else(|| Error::invalid(format!("category id {c} not in registry")))?
            .push(i);
    }
    Ok(by_cat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub shots_per_category: usize,
    pub seed: u64,
}

/// Draws exactly `N` positions per registry category without replacement,
/// grouped by category id.
pub fn sample_shot_indices(
    labels: &[CategoryId],
    cfg: &FewShotConfig,
    registry: &CategoryRegistry,
) -> Result<Vec<usize>> {
    let n = cfg.shots_per_category;
    if n == 0 {
        return Err(Error::invalid("shots per category must be at least 1"));
    }
    let by_cat = group_by_category(labels, registry)?;
    let mut rng = seed::rng(cfg.seed);
    let mut out = Vec::with_capacity(n * registry.len());
    for (cat, mut idx) in by_cat.into_iter().enumerate() {
        if idx.len() < n {
            return Err(Error::InsufficientExamples {
                category: registry.name(cat).to_string(),
                needed: n,
                found: idx.len(),
            });
        }
        let (chosen, _) = idx.partial_shuffle(&mut rng, n);
        out.extend_from_slice(chosen);
    }
    Ok(out)
}

pub fn sample_shots(
    learn: &[LabeledExample],
    cfg: &FewShotConfig,
    registry: &CategoryRegistry,
) -> Result<Vec<LabeledExample>> {
    let labels: Vec<CategoryId> = learn.iter().map(|e| e.category).collect();
    Ok(sample_shot_indices(&labels, cfg, registry)?
        .into_iter()
        .map(|i| learn[i].clone())
        .collect())
}

/// Names of registry categories with fewer than `4 * shots` examples.
pub fn check_4n(data: &[LabeledExample], shots: usize, registry: &CategoryRegistry) -> Vec<String> {
    let mut counts = vec![0usize; registry.len()];
    for ex in data {
        if let Some(c) = counts.get_mut(ex.category) {
            *c += 1;
        }
    }
    registry
        .iter()
        .filter(|c| counts[c.id] < 4 * shots)
        .map(|c| c.name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn examples(counts: &[usize]) -> Vec<LabeledExample> {
        let mut out = Vec::new();
        for (cat, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(LabeledExample {
                    id: format!("c{cat}-{i}"),
                    raw: RawLog::from_lines([format!("line {i}")]),
                    category: cat,
                });
            }
        }
        out
    }

    fn registry(k: usize) -> CategoryRegistry {
        CategoryRegistry::from_names((0..k).map(|i| format!("cat{i}"))).unwrap()
    }

    #[test]
    fn priority_registry() {
        let reg = CategoryRegistry::priority();
        assert_eq!(reg.len(), 13);
        assert_eq!(reg.id("misconfigured_env_variable"), Some(0));
        assert_eq!(reg.get(12).unwrap().rank, 13);
        assert_eq!(reg.ids_by_rank(1, 8), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(CategoryRegistry::from_names(["a", "a"]).is_err());
    }

    #[test]
    fn read_corpus_builds_registry() {
        let text = r#"{"id":"1","category":"a","log":"x\ny"}
{"id":"2","category":"b","log":"z"}
{"id":"3","category":"a","log":""}
"#;
        let (reg, ex) = read_corpus(text.as_bytes(), None).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0].raw.lines(), ["x", "y"]);
        assert_eq!(ex[2].category, 0);
    }

    #[test]
    fn read_corpus_empty() {
        let (reg, ex) = read_corpus(&b""[..], None).unwrap();
        assert!(reg.is_empty() && ex.is_empty());
    }

    #[test]
    fn read_corpus_missing_field() {
        let text = "{\"id\":\"1\",\"category\":\"a\",\"log\":\"x\"}\n{\"id\":\"2\",\"log\":\"x\"}\n";
        match read_corpus(text.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_corpus_unknown_category() {
        let reg = registry(1);
        let text = "{\"id\":\"1\",\"category\":\"nope\",\"log\":\"x\"}\n";
        assert!(matches!(
            read_corpus(text.as_bytes(), Some(&reg)),
            Err(Error::UnknownCategory(c)) if c == "nope"
        ));
    }

    #[test]
    fn split_sizes() {
        let data = examples(&[100]);
        let s = stratified_split(&data, &SplitSpec::default(), &registry(1)).unwrap();
        assert_eq!((s.learn.len(), s.valid.len(), s.test.len()), (25, 25, 50));

        let data = examples(&[40, 60]);
        let s = stratified_split(&data, &SplitSpec::default(), &registry(2)).unwrap();
        let per = |v: &[LabeledExample], c| v.iter().filter(|e| e.category == c).count();
        assert_eq!((per(&s.learn, 0), per(&s.learn, 1)), (10, 15));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let data = examples(&[30, 30]);
        let reg = registry(2);
        let a = stratified_split(&data, &SplitSpec::default().with_seed(3), &reg).unwrap();
        let b = stratified_split(&data, &SplitSpec::default().with_seed(3), &reg).unwrap();
        let c = stratified_split(&data, &SplitSpec::default().with_seed(4), &reg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_tiny_category() {
        let data = examples(&[10, 3]);
        match stratified_split(&data, &SplitSpec::default(), &registry(2)) {
            Err(Error::InsufficientExamples { category, .. }) => assert_eq!(category, "cat1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shots() {
        let reg = registry(2);
        let data = examples(&[5, 5]);
        let cfg = FewShotConfig {
            shots_per_category: 1,
            seed: 1,
        };
        let s = sample_shots(&data, &cfg, &reg).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].category, s[1].category), (0, 1));

        let data = examples(&[5, 4]);
        let cfg = FewShotConfig {
            shots_per_category: 5,
            seed: 1,
        };
        assert!(matches!(
            sample_shots(&data, &cfg, &reg),
            Err(Error::InsufficientExamples { found: 4, .. })
        ));
    }

    #[test]
    fn priority_scale_shots() {
        let reg = CategoryRegistry::priority();
        let data = examples(&[15; 13]);
        let cfg = FewShotConfig {
            shots_per_category: 12,
            seed: 9,
        };
        assert_eq!(sample_shots(&data, &cfg, &reg).unwrap().len(), 156);
    }

    #[test]
    fn four_n_rule() {
        let reg = registry(2);
        let data = examples(&[39, 76]);
        assert_eq!(check_4n(&data, 16, &reg), ["cat0"]);
        assert!(check_4n(&examples(&[8, 9]), 2, &reg).is_empty());
    }

    #[test]
    fn restrict_relabels() {
        let reg = registry(3);
        let data = examples(&[2, 2, 2]);
        let (sub, ex) = restrict_corpus(&data, &reg, &[2, 0]).unwrap();
        assert_eq!(sub.names(), ["cat0", "cat2"]);
        assert_eq!(ex.len(), 4);
        assert!(ex.iter().all(|e| e.category < 2));
        assert_eq!(ex[2].id, "c2-0");
        assert_eq!(ex[2].category, 1);
    }
}
