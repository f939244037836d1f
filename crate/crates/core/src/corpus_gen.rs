//! Seeded synthetic CI logs with a known failure category per log.
//!
//! Every log is mostly generic job chatter drawn from a shared filler pool;
//! one to three category-specific signature statements are dropped in at
//! random depths. Templates carry `{slot}` markers that are filled with
//! random URLs, hashes, versions and the like, so raw logs are noisy while
//! the signal stays recoverable.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::dataset::{CategoryId, CategoryRegistry, LabeledExample, PRIORITY_CATEGORIES};
use crate::error::{Error, Result};
use crate::preprocess::RawLog;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTemplate {
    pub name: String,
    pub rank: u32,
    /// Failure statements with `{slot}` markers.
    pub signatures: Vec<String>,
}

impl CategoryTemplate {
    pub fn new<S: Into<String>>(name: &str, rank: u32, signatures: impl IntoIterator<Item = S>) -> Self {
        CategoryTemplate {
            name: name.to_string(),
            rank,
            signatures: signatures.into_iter().map(Into::into).collect(),
        }
    }

    /// One pattern per signature: literal text with every slot widened to a
    /// non-space run.
    pub fn signature_patterns(&self) -> Vec<Regex> {
        self.signatures.iter().map(|s| slot_pattern(s)).collect()
    }
}

fn slot_pattern(template: &str) -> Regex {
    let mut pat = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("unclosed slot");
        pat.push_str(&regex::escape(&rest[..open]));
        pat.push_str(r"\S+");
        rest = &rest[close + 1..];
    }
    pat.push_str(&regex::escape(rest));
    Regex::new(&pat).expect("escaped template is a valid pattern")
}

const SIGNATURES: [&[&str]; 13] = [
    &[
        "ERROR: required env var `IMAGE_NAME` is not set",
        "environment variable DEPLOY_TARGET has invalid value '{word}' expected one of staging production",
        "config validation failed: variable REGISTRY_USER misspelled or missing in project settings",
        "missing mandatory environment variable KUBE_NAMESPACE for stage deploy",
    ],
    &[
        "ERROR: Job failed: execution took longer than {dur} seconds",
        "job exceeded the maximum allowed execution time and was terminated by the runner",
        "timeout reached while executing script step, killing job process tree",
    ],
    &[
        "npm ERR! code ERESOLVE unable to resolve dependency tree for {word}",
        "Could not find a version that satisfies the requirement {word}=={ver}",
        "dependency installation failed: pip install returned non-zero exit status {num}",
        "error: failed to download crate {word} checksum mismatch in lockfile",
    ],
    &[
        "Waiting for pod {id} to be running, status is Pending",
        "ERROR: Job failed (system failure): timed out waiting for pod to start",
        "runner pod stuck in ContainerCreating phase, scheduling unschedulable nodes insufficient cpu",
    ],
    &[
        "api gateway deployment failed: stage {word} could not be updated BadRequestException",
        "Error creating API Gateway Deployment: ConflictException another deployment in progress",
        "apigateway rest api deploy rejected: integration endpoint misconfigured for resource {path}",
    ],
    &[
        "received unexpected HTTP status: 500 Internal Server Error from container registry",
        "error pushing image layer {id}: registry responded 503 Service Unavailable",
        "denied: registry server error while uploading manifest blob unknown",
    ],
    &[
        "fatal: unable to access '{url}': The requested URL returned error: 502",
        "error: RPC failed; curl 56 GnuTLS recv error, the remote end hung up unexpectedly",
        "fatal: early EOF fetch-pack: unexpected disconnect while reading sideband packet",
    ],
    &[
        "FAILED tests/ui/{word}_spec.js element not interactable after waiting for selector",
        "StaleElementReferenceException: stale element reference: element is not attached to the page document",
        "cypress assertion flaked: expected button Submit to be visible but it was detached from DOM",
    ],
    &[
        "yaml.scanner.ScannerError: mapping values are not allowed here in remote manifest",
        "failed to parse downloaded file {path}: invalid JSON unexpected token at position {num}",
        "external artifact has invalid format, expected csv header columns not found",
    ],
    &[
        "Could not resolve host: {word}.internal.example.com",
        "dial tcp: lookup {word}.svc.cluster.local on 10.0.0.10:53: no such host",
        "getaddrinfo ENOTFOUND name resolution failure for upstream host",
    ],
    &[
        "ERROR: Job failed: failed to pull image \"{word}:{ver}\" ErrImagePull",
        "Back-off pulling image for runner container, ImagePullBackOff manifest unknown",
        "runner image pull failure: toomanyrequests you have reached your pull rate limit",
    ],
    &[
        "requests.exceptions.ReadTimeout: HTTPSConnectionPool read timed out on remote call",
        "context deadline exceeded while awaiting response from upstream service {word}",
        "gRPC call to remote backend failed with DEADLINE_EXCEEDED after retries",
    ],
    &[
        "Error: UPGRADE FAILED: another operation install upgrade rollback is in progress",
        "helm release {word} failed: resource quota exceeded for chart deployment",
        "Error: INSTALLATION FAILED: rendered manifests contain a resource that already exists",
    ],
];

/// The thirteen priority categories with characteristic failure statements.
pub fn templates_default() -> Vec<CategoryTemplate> {
    PRIORITY_CATEGORIES
        .iter()
        .zip(SIGNATURES)
        .enumerate()
        .map(|(i, (name, sigs))| CategoryTemplate::new(name, i as u32 + 1, sigs.iter().copied()))
        .collect()
}

/// Generic job chatter shared by every category. Slots here are limited to
/// values that normalization abstracts away, so filler differs between
/// logs in raw form but converges once normalized.
pub const FILLER: [&str; 48] = [
    "Running with gitlab-runner {ver} on shared-runner-{id}",
    "Preparing the \"kubernetes\" executor",
    "Using Kubernetes namespace: ci-jobs",
    "Using Kubernetes executor with image {path}:{ver} ...",
    "Preparing environment",
    "Getting source from Git repository",
    "Fetching changes with git depth set to 20...",
    "Initialized empty Git repository in {dir}",
    "Created fresh repository.",
    "Checking out {id} as detached HEAD (ref is main)...",
    "Skipping Git submodules setup",
    "Restoring cache",
    "Checking cache for default-{id}...",
    "Downloading cache.zip from {url}",
    "Successfully extracted cache",
    "Executing \"step_script\" stage of the job script",
    "$ export PATH={dir}:$PATH",
    "$ make build",
    "$ ./scripts/ci/setup.sh --verbose",
    "Collecting requests>={ver}",
    "Downloading {url} ({num} kB)",
    "Requirement already satisfied: urllib3 in {dir}",
    "Installing collected packages: idna, certifi",
    "Compiling serde v{ver}",
    "added {num} packages in {dur}",
    "Step {num}/12 : RUN apt-get update",
    " ---> Using cache",
    " ---> {id}",
    "Reading package lists...",
    "Building dependency tree...",
    "Linking {path}",
    "Writing {path}",
    "INFO loading configuration from {path}",
    "INFO connected to {url}",
    "INFO request completed in {dur}",
    "DEBUG worker {num} picked task {id}",
    "WARNING: retrying operation (attempt {num} of 3)",
    "WARNING: option is deprecated and will be removed",
    "ok {num} - test_roundtrip passed in {dur}",
    "test result: ok. {num} passed; 0 failed",
    "Uploading artifacts for successful job",
    "Uploading artifacts...",
    "{path}: found 1 matching artifact files and directories",
    "Saving cache for successful job",
    "Creating cache default-{id}...",
    "Running after_script",
    "Cleaning up project directory and file based variables",
    "section_end:{num}:step_script",
];

const WORDS: [&str; 16] = [
    "alpha", "billing", "checkout", "core", "frontend", "gateway", "inventory", "ledger", "metrics", "orders",
    "payments", "search", "session", "storage", "worker", "zeta",
];

fn hex(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap()).collect()
}

fn fill_slot(slot: &str, rng: &mut ChaCha8Rng) -> String {
    match slot {
        "id" => {
            let len = rng.gen_range(8..=12);
            hex(rng, len)
        }
        "url" => format!(
            "https://{}.example.com/api/v{}/{}/{}",
            WORDS[rng.gen_range(0..WORDS.len())],
            rng.gen_range(1..4),
            WORDS[rng.gen_range(0..WORDS.len())],
            hex(rng, 16)
        ),
        "ver" => format!("{}.{}.{}", rng.gen_range(0..20), rng.gen_range(0..40), rng.gen_range(0..100)),
        "dur" => match rng.gen_range(0..3) {
            0 => format!("{}ms", rng.gen_range(1..999)),
            1 => format!("{}.{}s", rng.gen_range(0..120), rng.gen_range(0..10)),
            _ => format!("{}m{}s", rng.gen_range(1..60), rng.gen_range(0..60)),
        },
        "num" => rng.gen_range(0..100_000u32).to_string(),
        "path" => format!(
            "/builds/{}/{}/{}.{}",
            WORDS[rng.gen_range(0..WORDS.len())],
            hex(rng, 6),
            WORDS[rng.gen_range(0..WORDS.len())],
            ["py", "js", "json", "yaml", "so", "txt"][rng.gen_range(0..6)]
        ),
        "dir" => format!("/builds/{}/{}/", WORDS[rng.gen_range(0..WORDS.len())], hex(rng, 6)),
        "word" => WORDS[rng.gen_range(0..WORDS.len())].to_string(),
        other => panic!("unknown template slot `{other}`"),
    }
}

fn render(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("unclosed slot");
        out.push_str(&rest[..open]);
        out.push_str(&fill_slot(&rest[open + 1..close], rng));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

/// A stray value on a line of its own, as left by tools that echo
/// URLs, digests or timings.
fn noise_line(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..4) {
        0 => fill_slot("url", rng),
        1 => format!("sha256:{}", hex(rng, 64)),
        2 => format!("v{}", fill_slot("ver", rng)),
        _ => fill_slot("dur", rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Examples per category name.
    pub counts: BTreeMap<String, usize>,
    pub min_lines: usize,
    pub max_lines: usize,
    /// Chance that a filler line repeats an earlier filler line verbatim.
    pub duplicate_rate: f64,
    /// Chance that a filler position holds a stray URL, digest, version or
    /// duration instead.
    pub noise_rate: f64,
    /// Prefix each line with an ISO timestamp.
    pub timestamps: bool,
    pub min_signatures: usize,
    pub max_signatures: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            counts: BTreeMap::new(),
            min_lines: 50,
            max_lines: 800,
            duplicate_rate: 0.2,
            noise_rate: 0.1,
            timestamps: false,
            min_signatures: 1,
            max_signatures: 3,
            seed: 0,
        }
    }
}

impl GenConfig {
    /// `per_category` examples for each template.
    pub fn uniform(templates: &[CategoryTemplate], per_category: usize, seed: u64) -> Self {
        GenConfig {
            counts: templates.iter().map(|t| (t.name.clone(), per_category)).collect(),
            seed,
            ..GenConfig::default()
        }
    }

    pub fn with_lines(mut self, min: usize, max: usize) -> Self {
        self.min_lines = min;
        self.max_lines = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_lines < 5 || self.max_lines < self.min_lines {
            return Err(Error::invalid(format!(
                "line range {}..={} invalid (minimum is 5)",
                self.min_lines, self.max_lines
            )));
        }
        if self.min_signatures == 0 || self.max_signatures < self.min_signatures {
            return Err(Error::invalid("signature count range must start at 1 or more"));
        }
        for (what, p) in [("duplicate", self.duplicate_rate), ("noise", self.noise_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{what} rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Registry whose ids are template indices.
pub fn template_registry(templates: &[CategoryTemplate]) -> Result<CategoryRegistry> {
    CategoryRegistry::new(templates.iter().map(|t| (t.name.clone(), t.rank)))
}

/// Category ids follow template order (see [`template_registry`]).
pub fn generate_corpus(templates: &[CategoryTemplate], cfg: &GenConfig) -> Result<Vec<LabeledExample>> {
    if templates.is_empty() {
        return Err(Error::invalid("no category templates given"));
    }
    cfg.validate()?;
    for name in cfg.counts.keys() {
        if !templates.iter().any(|t| &t.name == name) {
            return Err(Error::UnknownCategory(name.clone()));
        }
    }
    if let Some(t) = templates.iter().find(|t| t.signatures.is_empty()) {
        return Err(Error::invalid(format!("template {} has no signature lines", t.name)));
    }

    let mut rng = seed::rng(cfg.seed);
    let mut out = Vec::new();
    for (cat, t) in templates.iter().enumerate() {
        let n = cfg.counts.get(&t.name).copied().unwrap_or(0);
        for k in 0..n {
            let lines = generate_log(t, cfg, &mut rng);
            out.push(LabeledExample {
                id: format!("{}-{k:04}", t.name),
                raw: RawLog::from_lines(lines),
                category: cat as CategoryId,
            });
        }
    }
    Ok(out)
}

fn generate_log(t: &CategoryTemplate, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let total = rng.gen_range(cfg.min_lines..=cfg.max_lines);
    let n_sig = rng
        .gen_range(cfg.min_signatures..=cfg.max_signatures)
        .min(t.signatures.len())
        .min(total);

    let mut sig_slots: Vec<usize> = index::sample(rng, total, n_sig).into_vec();
    sig_slots.sort_unstable();
    let mut sig_choice: Vec<usize> = index::sample(rng, t.signatures.len(), n_sig).into_vec();
    sig_choice.shuffle(rng);

    let mut filler: Vec<String> = Vec::new();
    let mut lines = Vec::with_capacity(total);
    let mut clock: u64 = rng.gen_range(0..86_400_000);
    let mut next_sig = 0;
    for pos in 0..total {
        let mut line = if next_sig < n_sig && sig_slots[next_sig] == pos {
            next_sig += 1;
            render(&t.signatures[sig_choice[next_sig - 1]], rng)
        } else if !filler.is_empty() && rng.gen_bool(cfg.duplicate_rate) {
            filler[rng.gen_range(0..filler.len())].clone()
        } else if rng.gen_bool(cfg.noise_rate) {
            noise_line(rng)
        } else {
            let l = render(FILLER[rng.gen_range(0..FILLER.len())], rng);
            filler.push(l.clone());
            l
        };
        if cfg.timestamps {
            clock += rng.gen_range(1..5_000);
            line = format!("{} {line}", timestamp(clock));
        }
        lines.push(line);
    }
    lines
}

fn timestamp(ms: u64) -> String {
    let s = ms / 1000;
    format!(
        "2024-05-{:02}T{:02}:{:02}:{:02}.{:03}Z",
        1 + s / 86_400 % 28,
        s / 3600 % 24,
        s / 60 % 60,
        s % 60,
        ms % 1000
    )
}

/// Categories whose signature patterns occur somewhere in `lines`.
pub fn keyword_matches<S: AsRef<str>>(patterns: &[Vec<Regex>], lines: &[S]) -> Vec<CategoryId> {
    patterns
        .iter()
        .enumerate()
        .filter(|(_, pats)| lines.iter().any(|l| pats.iter().any(|p| p.is_match(l.as_ref()))))
        .map(|(c, _)| c)
        .collect()
}
