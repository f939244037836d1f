//! Versioned text container for trained pipelines.
//!
//! ```text
//! flaketriage-model
//! format_version 1
//! scalar f64
//! section preprocess
//! placeholder <kind> <token>        one per placeholder kind
//! preserve <context>                zero or more
//! max_chars <n>
//! truncate <true|false>
//! section registry
//! categories <K>
//! category <rank> <name>            K lines, in id order
//! section encoder
//! hash_dim <H>
//! embed_dim <D>
//! hash_seed <u64>
//! init_seed <u64>
//! rows <M>
//! row <index> <D values>            M lines, ascending index
//! section head
//! classes <K>
//! dim <D>
//! l2_lambda <value>
//! weight <k> <D values>             K lines
//! bias <K values>
//! end
//! ```
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which reproduces every `f64` (and `f32`) bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use super::PipelineModel;
use crate::dataset::CategoryRegistry;
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::head::HeadModel;
use crate::preprocess::{Placeholder, PreprocessConfig, PreserveContext};
use crate::scalar::Scalar;

pub const MAGIC: &str = "flaketriage-model";
pub const FORMAT_VERSION: u32 = 1;

fn real(out: &mut String, v: f64) {
    write!(out, " {v:.16e}").unwrap();
}

pub(super) fn write<F: Scalar>(m: &PipelineModel<F>) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "format_version {}", m.format_version).unwrap();
    writeln!(s, "scalar {}", F::NAME).unwrap();

    writeln!(s, "section preprocess").unwrap();
    for kind in Placeholder::ALL {
        writeln!(s, "placeholder {} {}", kind.as_str(), m.preprocess.token(kind)).unwrap();
    }
    for ctx in m.preprocess.preserve_codes() {
        writeln!(s, "preserve {ctx}").unwrap();
    }
    writeln!(s, "max_chars {}", m.preprocess.max_chars()).unwrap();
    writeln!(s, "truncate {}", m.preprocess.truncate()).unwrap();

    writeln!(s, "section registry").unwrap();
    writeln!(s, "categories {}", m.registry.len()).unwrap();
    for c in m.registry.iter() {
        writeln!(s, "category {} {}", c.rank, c.name).unwrap();
    }

    let enc = &m.encoder;
    writeln!(s, "section encoder").unwrap();
    writeln!(s, "hash_dim {}", enc.hash_dim()).unwrap();
    writeln!(s, "embed_dim {}", enc.embed_dim()).unwrap();
    writeln!(s, "hash_seed {}", enc.hash_seed()).unwrap();
    writeln!(s, "init_seed {}", enc.init_seed()).unwrap();
    writeln!(s, "rows {}", enc.stored_rows().len()).unwrap();
    for (r, row) in enc.stored_rows() {
        write!(s, "row {r}").unwrap();
        row.iter().for_each(|v| real(&mut s, v.as_f64()));
        s.push('\n');
    }

    let head = &m.head;
    writeln!(s, "section head").unwrap();
    writeln!(s, "classes {}", head.classes()).unwrap();
    writeln!(s, "dim {}", head.dim()).unwrap();
    write!(s, "l2_lambda").unwrap();
    real(&mut s, head.l2_lambda());
    s.push('\n');
    for k in 0..head.classes() {
        write!(s, "weight {k}").unwrap();
        head.weight_row(k).iter().for_each(|v| real(&mut s, v.as_f64()));
        s.push('\n');
    }
    write!(s, "bias").unwrap();
    head.bias().iter().for_each(|v| real(&mut s, v.as_f64()));
    s.push('\n');
    writeln!(s, "end").unwrap();
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    lineno: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let (i, line) = self
            .inner
            .next()
            .ok_or_else(|| corrupt("unexpected end of file (truncated?)"))?;
        self.lineno = i + 1;
        Ok(line)
    }

    /// Next line, which must start with `key`; returns the rest.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            None if line == key => Ok(""),
            _ => Err(corrupt(format!("line {}: expected `{key}`, found `{line}`", self.lineno))),
        }
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.field(key)?;
        raw.trim()
            .parse()
            .map_err(|_| corrupt(format!("line {}: bad value `{raw}` for `{key}`", self.lineno)))
    }

    fn reals<F: Scalar>(&self, raw: &str, expected: usize) -> Result<Vec<F>> {
        let vals = raw
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>().map(F::of))
            .collect::<std::result::Result<Vec<F>, _>>()
            .map_err(|_| corrupt(format!("line {}: malformed number", self.lineno)))?;
        if vals.len() != expected {
            return Err(corrupt(format!(
                "line {}: expected {expected} values, found {}",
                self.lineno,
                vals.len()
            )));
        }
        Ok(vals)
    }

    /// `<index> <values...>` after `key`.
    fn indexed_reals<F: Scalar>(&mut self, key: &str, expected: usize) -> Result<(usize, Vec<F>)> {
        let rest = self.field(key)?;
        let (idx, vals) = rest.split_once(' ').unwrap_or((rest, ""));
        let idx = idx
            .parse()
            .map_err(|_| corrupt(format!("line {}: bad index `{idx}`", self.lineno)))?;
        Ok((idx, self.reals(vals, expected)?))
    }
}

pub(super) fn read<F: Scalar>(text: &str) -> Result<PipelineModel<F>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        lineno: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(corrupt("missing model header"));
    }
    let version: u32 = lines.parse("format_version")?;
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let scalar = lines.field("scalar")?;
    if scalar != F::NAME {
        return Err(Error::invalid(format!(
            "model stores {scalar} parameters but {} was requested",
            F::NAME
        )));
    }

    lines.field("section").filter_section("preprocess")?;
    let mut preprocess = PreprocessConfig::default();
    for _ in Placeholder::ALL {
        let rest = lines.field("placeholder")?;
        let (kind, token) = rest
            .split_once(' ')
            .ok_or_else(|| corrupt(format!("line {}: malformed placeholder", lines.lineno)))?;
        preprocess = preprocess
            .with_placeholder(kind.parse()?, token)
            .map_err(|e| corrupt(e.to_string()))?;
    }
    let mut preserve = Vec::new();
    let max_chars = loop {
        let line = lines.next_line()?;
        if let Some(ctx) = line.strip_prefix("preserve ") {
            preserve.push(PreserveContext::from_str(ctx).map_err(|e| corrupt(e.to_string()))?);
        } else if let Some(n) = line.strip_prefix("max_chars ") {
            break n
                .parse::<usize>()
                .map_err(|_| corrupt(format!("line {}: bad max_chars", lines.lineno)))?;
        } else {
            return Err(corrupt(format!("line {}: unexpected `{line}`", lines.lineno)));
        }
    };
    let truncate: bool = lines.parse("truncate")?;
    let preprocess = preprocess
        .with_preserve(preserve)
        .with_max_chars(max_chars, truncate);

    lines.field("section").filter_section("registry")?;
    let k: usize = lines.parse("categories")?;
    let mut entries = Vec::with_capacity(k);
    for _ in 0..k {
        let rest = lines.field("category")?;
        let (rank, name) = rest
            .split_once(' ')
            .ok_or_else(|| corrupt(format!("line {}: malformed category", lines.lineno)))?;
        let rank: u32 = rank
            .parse()
            .map_err(|_| corrupt(format!("line {}: bad rank", lines.lineno)))?;
        entries.push((name.to_string(), rank));
    }
    let registry = CategoryRegistry::new(entries).map_err(|e| corrupt(e.to_string()))?;

    lines.field("section").filter_section("encoder")?;
    let hash_dim: usize = lines.parse("hash_dim")?;
    let embed_dim: usize = lines.parse("embed_dim")?;
    let hash_seed: u64 = lines.parse("hash_seed")?;
    let init_seed: u64 = lines.parse("init_seed")?;
    let n_rows: usize = lines.parse("rows")?;
    let mut rows = BTreeMap::new();
    for _ in 0..n_rows {
        let (r, vals) = lines.indexed_reals("row", embed_dim)?;
        if rows.insert(r, vals).is_some() {
            return Err(corrupt(format!("line {}: duplicate row {r}", lines.lineno)));
        }
    }
    let encoder = EncoderModel::from_parts(hash_dim, embed_dim, hash_seed, init_seed, rows)
        .map_err(|e| corrupt(e.to_string()))?;

    lines.field("section").filter_section("head")?;
    let classes: usize = lines.parse("classes")?;
    let dim: usize = lines.parse("dim")?;
    let raw = lines.field("l2_lambda")?;
    let l2_lambda = lines.reals::<f64>(raw, 1)?[0];
    let mut weights = Vec::with_capacity(classes);
    for expect in 0..classes {
        let (k, vals) = lines.indexed_reals("weight", dim)?;
        if k != expect {
            return Err(corrupt(format!("line {}: weight rows out of order", lines.lineno)));
        }
        weights.push(vals);
    }
    let raw = lines.field("bias")?;
    let bias = lines.reals(raw, classes)?;
    let head = HeadModel::from_parts(weights, bias, l2_lambda).map_err(|e| corrupt(e.to_string()))?;

    if lines.next_line()? != "end" {
        return Err(corrupt(format!("line {}: expected `end`", lines.lineno)));
    }
    PipelineModel::new(preprocess, encoder, head, registry).map_err(|e| corrupt(e.to_string()))
}

trait SectionCheck {
    fn filter_section(self, name: &str) -> Result<()>;
}

impl SectionCheck for Result<&str> {
    fn filter_section(self, name: &str) -> Result<()> {
        match self? {
            s if s == name => Ok(()),
            other => Err(corrupt(format!("expected section `{name}`, found `{other}`"))),
        }
    }
}
