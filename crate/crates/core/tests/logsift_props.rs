use std::convert::Infallible;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;

use flaketriage::logsift::{extract_segments, logsift, merge_adjacent, SiftConfig};

fn hash_oracle(salt: u64, classes: usize) -> impl Fn(&[usize]) -> usize {
    move |s: &[usize]| {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (salt, s).hash(&mut h);
        (h.finish() % classes as u64) as usize
    }
}

proptest! {
    #[test]
    fn arbitrary_oracle_invariants(n in 0usize..300, tau in 1usize..6, salt in any::<u64>(), classes in 1usize..4) {
        let lines: Vec<usize> = (0..n).collect();
        let f = hash_oracle(salt, classes);
        let r = logsift(&lines, |s: &[usize]| Ok::<_, Infallible>(f(s)), &SiftConfig { tau }).unwrap();
        prop_assert_eq!(r.original_category, f(&lines));
        for w in r.ranges.windows(2) {
            prop_assert!(w[0].end < w[1].start);
        }
        for x in &r.ranges {
            prop_assert!(x.start <= x.end && x.end < n);
        }
        prop_assert!(r.covered_lines() <= n);
        prop_assert!(r.classifier_calls <= 2 * n.max(1));
        if n > 0 {
            prop_assert!(!r.ranges.is_empty());
        }
        // segments too long to be leaves must have kept the prediction
        for x in r.ranges.iter().filter(|x| x.len() > tau) {
            prop_assert_eq!(f(&lines[x.start..=x.end]), r.original_category);
        }
    }

    #[test]
    fn single_sentinel_is_logarithmic(n in 1usize..2000, tau in 1usize..5, pick in any::<prop::sample::Index>()) {
        let sentinel = pick.index(n);
        let lines: Vec<usize> = (0..n).collect();
        let f = |s: &[usize]| usize::from(s.contains(&sentinel));
        let r = logsift(&lines, |s: &[usize]| Ok::<_, Infallible>(f(s)), &SiftConfig { tau }).unwrap();
        prop_assert_eq!(r.ranges.len(), 1);
        prop_assert!(r.ranges[0].contains(sentinel));
        prop_assert!(r.ranges[0].len() <= tau);
        let bound = 2 * ((n as f64 / tau as f64).log2().ceil().max(0.0) as usize) + 1;
        prop_assert!(r.classifier_calls <= bound, "{} > {}", r.classifier_calls, bound);
        let text: Vec<String> = lines.iter().map(|i| i.to_string()).collect();
        let segs = extract_segments(&text, &r);
        prop_assert!(segs[0].1.contains(&sentinel.to_string().as_str()));
    }

    #[test]
    fn merging_preserves_coverage(n in 1usize..200, salt in any::<u64>()) {
        let lines: Vec<usize> = (0..n).collect();
        let f = hash_oracle(salt, 2);
        let r = logsift(&lines, |s: &[usize]| Ok::<_, Infallible>(f(s)), &SiftConfig::default()).unwrap();
        let merged = merge_adjacent(&r.ranges);
        prop_assert_eq!(merged.iter().map(|x| x.len()).sum::<usize>(), r.covered_lines());
        for w in merged.windows(2) {
            prop_assert!(w[0].end + 1 < w[1].start);
        }
    }
}

#[test]
fn memoized_oracle_gives_identical_result() {
    let lines: Vec<usize> = (0..128).collect();
    let f = hash_oracle(11, 3);
    let plain = logsift(&lines, |s: &[usize]| Ok::<_, Infallible>(f(s)), &SiftConfig::default()).unwrap();
    let mut memo = std::collections::HashMap::new();
    let cached = logsift(
        &lines,
        |s: &[usize]| {
            let key = (s.first().copied(), s.len());
            Ok::<_, Infallible>(*memo.entry(key).or_insert_with(|| f(s)))
        },
        &SiftConfig::default(),
    )
    .unwrap();
    assert_eq!(plain.ranges, cached.ranges);
}

#[test]
fn zero_tau_rejected() {
    assert!(SiftConfig::new(0).is_err());
    assert_eq!(SiftConfig::new(3).unwrap().tau, 3);
}
