//! Recursive bisection that isolates the log lines a classifier relies on.
//!
//! The classifier is queried on contiguous sub-slices of the raw log. Halves
//! that keep the full-log prediction are searched further; when neither half
//! does, the current slice is the smallest chunk still carrying the signal.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::CategoryId;
use crate::error::{Error, Result};

/// Inclusive `[start, end]` line range into the raw log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineRange {
    pub start: usize,
    pub end: usize,
}

impl LineRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        LineRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftConfig {
    /// Segments of at most this many lines are not split further.
    pub tau: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        SiftConfig { tau: 2 }
    }
}

impl SiftConfig {
    pub fn new(tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::invalid("minimum segment size must be at least 1"));
        }
        Ok(SiftConfig { tau })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftResult {
    pub ranges: Vec<LineRange>,
    pub original_category: CategoryId,
    /// Includes the initial full-log query.
    pub classifier_calls: usize,
    pub elapsed: Duration,
}

impl SiftResult {
    pub fn covered_lines(&self) -> usize {
        self.ranges.iter().map(LineRange::len).sum()
    }
}

struct Search<'a, S, C> {
    lines: &'a [S],
    classify: C,
    target: CategoryId,
    tau: usize,
    calls: usize,
}

impl<S, C, E> Search<'_, S, C>
where
    C: FnMut(&[S]) -> std::result::Result<CategoryId, E>,
{
    fn matches(&mut self, start: usize, end: usize) -> std::result::Result<bool, E> {
        self.calls += 1;
        Ok((self.classify)(&self.lines[start..end])? == self.target)
    }

    /// Searches `lines[start..end]`, appending ranges to `out`.
    fn find(&mut self, start: usize, end: usize, out: &mut Vec<LineRange>) -> std::result::Result<(), E> {
        let n = end - start;
        if n <= self.tau {
            out.push(LineRange::new(start, end - 1));
            return Ok(());
        }
        let mid = start + n / 2;
        let top = self.matches(start, mid)?;
        let bot = self.matches(mid, end)?;
        match (top, bot) {
            (true, true) => {
                self.find(start, mid, out)?;
                self.find(mid, end, out)
            }
            (true, false) => self.find(start, mid, out),
            (false, true) => self.find(mid, end, out),
            (false, false) => {
                out.push(LineRange::new(start, end - 1));
                Ok(())
            }
        }
    }
}

/// Runs the bisection search over `lines` using `classify` as the oracle.
///
/// An empty log yields no ranges; its category is whatever `classify`
/// returns for the empty slice, and an error from it is propagated.
pub fn logsift<S, C, E>(lines: &[S], mut classify: C, cfg: &SiftConfig) -> std::result::Result<SiftResult, E>
where
    C: FnMut(&[S]) -> std::result::Result<CategoryId, E>,
{
    assert!(cfg.tau >= 1, "minimum segment size must be at least 1");
    let started = Instant::now();
    let target = classify(lines)?;
    let mut search = Search {
        lines,
        classify,
        target,
        tau: cfg.tau,
        calls: 1,
    };
    let mut ranges = Vec::new();
    if !lines.is_empty() {
        search.find(0, lines.len(), &mut ranges)?;
    }
    Ok(SiftResult {
        ranges,
        original_category: target,
        classifier_calls: search.calls,
        elapsed: started.elapsed(),
    })
}

/// Fraction of lines eliminated; 0 for an empty log.
pub fn sift_reduction_ratio(total_lines: usize, result: &SiftResult) -> f64 {
    if total_lines == 0 {
        return 0.0;
    }
    1.0 - result.covered_lines() as f64 / total_lines as f64
}

/// Fraction of results retaining at most `n` lines; 0 for no results.
pub fn n_consistency(results: &[SiftResult], n: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let hits = results.iter().filter(|r| r.covered_lines() <= n).count();
    hits as f64 / results.len() as f64
}

/// Verbatim lines for each range, in range order.
pub fn extract_segments<'a, S: AsRef<str>>(lines: &'a [S], result: &SiftResult) -> Vec<(LineRange, Vec<&'a str>)> {
    result
        .ranges
        .iter()
        .map(|r| (*r, lines[r.start..=r.end].iter().map(AsRef::as_ref).collect()))
        .collect()
}

/// Joins ranges that touch end-to-start. Input must be sorted.
pub fn merge_adjacent(ranges: &[LineRange]) -> Vec<LineRange> {
    let mut out: Vec<LineRange> = Vec::with_capacity(ranges.len());
    for r in ranges {
        match out.last_mut() {
            Some(last) if last.end + 1 >= r.start => last.end = last.end.max(r.end),
            _ => out.push(*r),
        }
    }
    out
}

/// One line of a sift report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftReport {
    pub job_id: String,
    pub predicted_category: String,
    pub ranges: Vec<[usize; 2]>,
    pub covered_lines: usize,
    pub reduction_ratio: f64,
    pub classifier_calls: usize,
    pub elapsed_ms: f64,
}

impl SiftReport {
    pub fn new(job_id: impl Into<String>, category: impl Into<String>, total_lines: usize, r: &SiftResult) -> Self {
        SiftReport {
            job_id: job_id.into(),
            predicted_category: category.into(),
            ranges: r.ranges.iter().map(|x| [x.start, x.end]).collect(),
            covered_lines: r.covered_lines(),
            reduction_ratio: sift_reduction_ratio(total_lines, r),
            classifier_calls: r.classifier_calls,
            elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn indices(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    fn sift(n: usize, tau: usize, hit: impl Fn(&[usize]) -> bool) -> SiftResult {
        let lines = indices(n);
        logsift(&lines, |s: &[usize]| Ok::<_, Infallible>(usize::from(hit(s))), &SiftConfig { tau }).unwrap()
    }

    fn spans(r: &SiftResult) -> Vec<(usize, usize)> {
        r.ranges.iter().map(|x| (x.start, x.end)).collect()
    }

    #[test]
    fn base_case_returns_whole_log() {
        let r = sift(2, 2, |s| s.contains(&0));
        assert_eq!(spans(&r), vec![(0, 1)]);
        assert_eq!(r.classifier_calls, 1);
    }

    #[test]
    fn single_sentinel() {
        let r = sift(16, 2, |s| s.contains(&5));
        assert_eq!(spans(&r), vec![(4, 5)]);
        // full log + three levels of two queries
        assert_eq!(r.classifier_calls, 7);
    }

    #[test]
    fn conjunction_keeps_whole_segment() {
        let r = sift(16, 2, |s| s.contains(&1) && s.contains(&14));
        assert_eq!(spans(&r), vec![(0, 15)]);
    }

    #[test]
    fn disjunction_recurses_both_halves() {
        let r = sift(16, 2, |s| s.contains(&2) || s.contains(&13));
        assert_eq!(spans(&r), vec![(2, 3), (12, 13)]);
    }

    #[test]
    fn odd_length_gives_bottom_the_extra_line() {
        // 5 lines: top = [0,1], bottom = [2,3,4]
        let r = sift(5, 2, |s| s.contains(&3));
        assert_eq!(spans(&r), vec![(3, 4)]);
    }

    #[test]
    fn empty_log() {
        let lines: Vec<String> = Vec::new();
        let r = logsift(&lines, |_: &[String]| Ok::<_, Infallible>(3), &SiftConfig::default()).unwrap();
        assert!(r.ranges.is_empty());
        assert_eq!(r.original_category, 3);

        let err = logsift(&lines, |_: &[String]| Err::<CategoryId, _>("undefined"), &SiftConfig::default());
        assert_eq!(err.unwrap_err(), "undefined");
    }

    #[test]
    fn classifier_errors_propagate() {
        let lines = indices(8);
        let mut calls = 0;
        let out = logsift(
            &lines,
            |_: &[usize]| {
                calls += 1;
                if calls > 2 { Err("boom") } else { Ok(0) }
            },
            &SiftConfig::default(),
        );
        assert_eq!(out.unwrap_err(), "boom");
    }

    #[test]
    fn reduction_ratio() {
        let mk = |ranges: Vec<LineRange>| SiftResult {
            ranges,
            original_category: 0,
            classifier_calls: 0,
            elapsed: Duration::ZERO,
        };
        assert!((sift_reduction_ratio(100, &mk(vec![LineRange::new(10, 35)])) - 0.74).abs() < 1e-12);
        assert_eq!(sift_reduction_ratio(100, &mk(vec![LineRange::new(0, 99)])), 0.0);
        let r = sift_reduction_ratio(359, &mk(vec![LineRange::new(200, 201)]));
        assert!((r - 0.9944).abs() < 1e-4);
        assert_eq!(sift_reduction_ratio(0, &mk(vec![])), 0.0);
    }

    #[test]
    fn consistency() {
        let mk = |len: usize| SiftResult {
            ranges: vec![LineRange::new(0, len - 1)],
            original_category: 0,
            classifier_calls: 0,
            elapsed: Duration::ZERO,
        };
        assert_eq!(n_consistency(&[mk(2), mk(2)], 30), 1.0);
        assert_eq!(n_consistency(&[mk(5), mk(50)], 10), 0.5);
        assert_eq!(n_consistency(&[mk(1)], 0), 0.0);
        assert_eq!(n_consistency(&[], 10), 0.0);
    }

    #[test]
    fn segments_are_verbatim() {
        let lines: Vec<String> = (0..16).map(|i| format!("line {i}")).collect();
        let r = logsift(&lines, |s: &[String]| Ok::<_, Infallible>(usize::from(s.iter().any(|l| l == "line 5"))), &SiftConfig::default()).unwrap();
        let segs = extract_segments(&lines, &r);
        assert_eq!(segs, vec![(LineRange::new(4, 5), vec!["line 4", "line 5"])]);

        let whole = SiftResult { ranges: vec![LineRange::new(0, 15)], ..r.clone() };
        let segs = extract_segments(&lines, &whole);
        assert_eq!(segs[0].1, lines.iter().map(String::as_str).collect::<Vec<_>>());

        let none = SiftResult { ranges: vec![], ..r };
        assert!(extract_segments(&lines, &none).is_empty());
    }

    #[test]
    fn merging() {
        let rs = [LineRange::new(0, 1), LineRange::new(2, 3), LineRange::new(6, 7)];
        assert_eq!(merge_adjacent(&rs), vec![LineRange::new(0, 3), LineRange::new(6, 7)]);
        assert!(merge_adjacent(&[]).is_empty());
    }
}
