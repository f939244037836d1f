use std::convert::Infallible;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use flaketriage::corpus_gen::{generate_corpus, template_registry, templates_default, GenConfig};
use flaketriage::dataset::{load_corpus, load_registry, sample_shots, save_corpus, save_registry, FewShotConfig};
use flaketriage::encoder::TrainConfig;
use flaketriage::evaluation::{rank_subset, run_incremental_k, run_mccv, MccvConfig};
use flaketriage::logsift::{extract_segments, SiftReport};
use flaketriage::pipeline::{load_model, save_model, train_pipeline};
use flaketriage::preprocess::reduction_percent;
use flaketriage::{
    logsift, preprocess_log, seed, CategoryRegistry, LabeledExample, MetricsReport, Pipeline, PreprocessConfig,
    RawLog, SiftConfig,
};

use crate::{
    CliError, CorpusInput, EvaluateArgs, ExperimentKArgs, GenCorpusArgs, McArgs, PredictArgs, PreprocessArgs,
    SiftArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

/// Parses `1-8` into an inclusive rank range.
pub fn parse_k_set(s: &str) -> std::result::Result<[u32; 2], String> {
    let (lo, hi) = s.trim().split_once('-').ok_or_else(|| format!("expected LO-HI, got `{s}`"))?;
    let lo: u32 = lo.trim().parse().map_err(|e| format!("`{lo}`: {e}"))?;
    let hi: u32 = hi.trim().parse().map_err(|e| format!("`{hi}`: {e}"))?;
    if lo > hi {
        return Err(format!("empty range {lo}-{hi}"));
    }
    Ok([lo, hi])
}

fn read_log(path: &Path) -> Result<RawLog> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(RawLog::from_text(&String::from_utf8_lossy(&bytes)))
}

fn load_input(input: &CorpusInput) -> Result<(CategoryRegistry, Vec<LabeledExample>)> {
    let registry = input.registry.as_deref().map(load_registry).transpose()?;
    let (registry, data) = load_corpus(&input.corpus, registry.as_ref())?;
    log::info!("loaded {} logs in {} categories from {}", data.len(), registry.len(), input.corpus.display());
    Ok((registry, data))
}

/// JSON records go to `out` when given, otherwise to stdout. The summary goes
/// to whichever stream the records did not take.
fn emit(out: Option<&Path>, records: &[Value], summary: &str) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&r.to_string());
        body.push('\n');
    }
    match out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| io_error(path, e))?;
            print!("{summary}");
        }
        None => {
            std::io::stdout()
                .write_all(body.as_bytes())
                .map_err(|e| CliError::Internal(e.to_string()))?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let templates = templates_default();
    let cfg = GenConfig::uniform(&templates, a.per_category, a.seed).with_lines(a.min_lines, a.max_lines);
    let data = generate_corpus(&templates, &cfg)?;
    let registry = template_registry(&templates)?;
    save_corpus(&a.out, &registry, &data)?;
    let reg_path = a.registry.unwrap_or_else(|| a.out.with_extension("registry"));
    save_registry(&reg_path, &registry)?;
    println!(
        "wrote {} logs in {} categories to {} (registry {})",
        data.len(),
        registry.len(),
        a.out.display(),
        reg_path.display()
    );
    Ok(())
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig::default();
    if let Some(log) = &a.log {
        let raw = read_log(log)?;
        let p = preprocess_log(&raw, &cfg);
        let mut text = p.lines().join("\n");
        text.push('\n');
        let summary = format!(
            "{} -> {} lines, {:.1}% fewer characters\n",
            raw.len(),
            p.len(),
            100.0 * reduction_percent(&raw, &p)
        );
        return match &a.out {
            Some(path) => {
                std::fs::write(path, text).map_err(|e| io_error(path, e))?;
                print!("{summary}");
                Ok(())
            }
            None => {
                print!("{text}");
                eprint!("{summary}");
                Ok(())
            }
        };
    }
    let corpus = a.corpus.as_deref().expect("clap requires --log or --corpus");
    let (registry, data) = load_corpus(corpus, None)?;
    let mut records = Vec::with_capacity(data.len());
    let mut total = 0.0;
    for ex in &data {
        let p = preprocess_log(&ex.raw, &cfg);
        total += reduction_percent(&ex.raw, &p);
        records.push(json!({
            "id": ex.id,
            "category": registry.name(ex.category),
            "lines": p.lines(),
        }));
    }
    let mean = if data.is_empty() { 0.0 } else { total / data.len() as f64 };
    let summary = format!("{} logs, mean character reduction {:.1}%\n", data.len(), 100.0 * mean);
    emit(a.out.as_deref(), &records, &summary)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (registry, data) = load_input(&a.input)?;
    let train = match a.shots {
        Some(n) => sample_shots(
            &data,
            &FewShotConfig {
                shots_per_category: n,
                seed: seed::derive(a.seed, 1),
            },
            &registry,
        )?,
        None => data,
    };
    let cfg = TrainConfig {
        body_learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: seed::derive(a.seed, 2),
        ..TrainConfig::default()
    };
    let model: Pipeline = train_pipeline(&train, &cfg, a.max_iter, &registry, &Default::default())?;
    save_model(&model, &a.model)?;
    let correct = train.iter().filter(|ex| model.predict(&ex.raw, 1).category == ex.category).count();
    println!(
        "trained on {} logs ({} categories), training accuracy {:.3}; model written to {}",
        train.len(),
        registry.len(),
        correct as f64 / train.len() as f64,
        a.model.display()
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model: Pipeline = load_model(&a.model)?;
    let raw = read_log(&a.log)?;
    let p = model.predict(&raw, a.topk);
    let reg = model.registry();
    let probs = p.proba.as_slice();
    let record = json!({
        "log": a.log.display().to_string(),
        "category": reg.name(p.category),
        "topk": p.topk.iter().map(|&c| reg.name(c)).collect::<Vec<_>>(),
        "probabilities": reg.iter().zip(probs).map(|(c, &q)| json!({"category": c.name, "probability": q})).collect::<Vec<_>>(),
    });
    let w = p.topk.iter().map(|&c| reg.name(c).len()).max().unwrap_or(0);
    let mut summary = String::new();
    for (rank, &c) in p.topk.iter().enumerate() {
        let _ = writeln!(summary, "{:>2}  {:<w$}  {:.4}", rank + 1, reg.name(c), probs[c]);
    }
    emit(a.out.as_deref(), &[record], &summary)
}

pub fn sift(a: SiftArgs) -> Result<()> {
    let model: Pipeline = load_model(&a.model)?;
    let raw = read_log(&a.log)?;
    let cfg = SiftConfig::new(a.tau)?;
    let r = logsift(raw.lines(), |seg: &[String]| Ok::<_, Infallible>(model.classify_lines(seg)), &cfg)
        .unwrap_or_else(|never| match never {});
    let category = model.registry().name(r.original_category).to_string();
    let report = SiftReport::new(a.log.display().to_string(), category.clone(), raw.len(), &r);
    let segments = extract_segments(raw.lines(), &r);
    let mut record = to_json(&report)?;
    record["segments"] = segments
        .iter()
        .map(|(range, lines)| json!({"start": range.start, "end": range.end, "lines": lines}))
        .collect();

    let mut summary = format!(
        "{category}: kept {} of {} lines ({:.1}% reduction) in {} ranges, {} classifier calls, {:.1} ms\n",
        report.covered_lines,
        raw.len(),
        100.0 * report.reduction_ratio,
        r.ranges.len(),
        r.classifier_calls,
        report.elapsed_ms
    );
    for (range, lines) in &segments {
        let _ = writeln!(summary, "--- lines {}..={}", range.start, range.end);
        for l in lines {
            let _ = writeln!(summary, "{l}");
        }
    }
    emit(a.out.as_deref(), &[record], &summary)
}

fn mccv_config(mc: &McArgs) -> MccvConfig {
    MccvConfig {
        iterations: mc.iterations,
        trials: mc.trials,
        shots: mc.shots,
        base_seed: mc.seed,
        jobs: mc.jobs,
        ..MccvConfig::default()
    }
}

fn metrics_table(mean: &MetricsReport, std: &MetricsReport) -> String {
    let rows = [
        ("macro F1", mean.macro_f1, std.macro_f1),
        ("macro precision", mean.macro_precision, std.macro_precision),
        ("macro recall", mean.macro_recall, std.macro_recall),
        ("MCC", mean.mcc, std.mcc),
        ("top-1 accuracy", mean.top1, std.top1),
        ("top-2 accuracy", mean.top2, std.top2),
        ("top-3 accuracy", mean.top3, std.top3),
    ];
    let mut s = format!("{:<18} {:>8} {:>8}\n", "metric", "mean", "std");
    for (name, m, sd) in rows {
        let _ = writeln!(s, "{name:<18} {m:>8.4} {sd:>8.4}");
    }
    s
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (registry, data) = load_input(&a.input)?;
    let res = run_mccv::<f64>(&data, &mccv_config(&a.mc), &registry)?;
    let mut records = Vec::with_capacity(res.iterations.len() + 1);
    for it in &res.iterations {
        let mut v = to_json(it)?;
        v["kind"] = "iteration".into();
        records.push(v);
    }
    records.push(json!({"kind": "aggregate", "mean": to_json(&res.mean)?, "std": to_json(&res.std)?}));
    let summary = format!("{} iterations\n{}", res.iterations.len(), metrics_table(&res.mean, &res.std));
    emit(Some(&a.out), &records, &summary)
}

pub fn experiment_k(a: ExperimentKArgs) -> Result<()> {
    let (registry, data) = load_input(&a.input)?;
    let subsets = a
        .k_sets
        .iter()
        .map(|&[lo, hi]| rank_subset(&registry, lo, hi))
        .collect::<flaketriage::Result<Vec<_>>>()?;
    log::info!("running {} category subsets", subsets.len());
    let reports = run_incremental_k::<f64>(&data, &mccv_config(&a.mc), &registry, &subsets)?;
    let records = reports.iter().map(to_json).collect::<Result<Vec<_>>>()?;

    let w = registry.iter().map(|c| c.name.len()).max().unwrap_or(0).max("category".len());
    let mut summary = format!("{:<w$}", "category");
    for r in &reports {
        let _ = write!(summary, " {:>8}", format!("K={}", r.k()));
    }
    summary.push('\n');
    for c in registry.iter() {
        if !reports.iter().any(|r| r.per_class_f1.contains_key(&c.name)) {
            continue;
        }
        let _ = write!(summary, "{:<w$}", c.name);
        for r in &reports {
            match r.per_class_f1.get(&c.name) {
                Some(f) => {
                    let _ = write!(summary, " {f:>8.4}");
                }
                None => {
                    let _ = write!(summary, " {:>8}", "-");
                }
            }
        }
        summary.push('\n');
    }
    let _ = write!(summary, "{:<w$}", "macro F1");
    for r in &reports {
        let _ = write!(summary, " {:>8.4}", r.mean.macro_f1);
    }
    summary.push('\n');
    emit(Some(&a.out), &records, &summary)
}
