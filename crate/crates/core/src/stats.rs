//! Exact one-tailed binomial test and preference-study tallies.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(0!), ln(1!), ..., ln(n!)` as exact running sums of integer logs.
fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
pub fn binom_test_one_tailed(k: u64, n: u64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::InvalidArgument(format!("binomial test needs 0 <= k <= n and n >= 1, got k={k}, n={n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let lf = ln_factorials(n);
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let ln_pmf = |i: u64| lf[n as usize] - lf[i as usize] - lf[(n - i) as usize] + ln_half_n;
    // Large tails are taken as the complement of the small lower tail so
    // values close to 1 keep full precision.
    if 2 * k <= n {
        return Ok(1.0 - log_sum_exp((0..k).map(ln_pmf)).exp());
    }
    Ok(log_sum_exp((k..=n).map(ln_pmf)).exp().min(1.0))
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// What the rater pressed, in display order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    First,
    Second,
    Neither,
}

impl Choice {
    pub fn as_str(self) -> &'static str {
        match self {
            Choice::First => "first",
            Choice::Second => "second",
            Choice::Neither => "neither",
        }
    }

    /// Maps a displayed slot back to its source given whether the model's
    /// marker was shown first.
    pub fn resolve(self, model_first: bool) -> Preference {
        match (self, model_first) {
            (Choice::Neither, _) => Preference::Neither,
            (Choice::First, true) | (Choice::Second, false) => Preference::Model,
            _ => Preference::Label,
        }
    }
}

impl FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Choice::First),
            "second" => Ok(Choice::Second),
            "neither" => Ok(Choice::Neither),
            other => Err(Error::InvalidArgument(format!("choice must be first, second or neither, got {other:?}"))),
        }
    }
}

/// A de-blinded choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Model,
    Label,
    Neither,
}

impl Preference {
    /// The button that expresses this preference given the marker order.
    pub fn to_choice(self, model_first: bool) -> Choice {
        match (self, model_first) {
            (Preference::Neither, _) => Choice::Neither,
            (Preference::Model, true) | (Preference::Label, false) => Choice::First,
            _ => Choice::Second,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub item_id: String,
    pub rater_id: String,
    pub choice: Choice,
    /// Unix seconds.
    pub timestamp: i64,
    pub resolved: Preference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub prefer_model: u64,
    pub prefer_label: u64,
    pub neither: u64,
    pub total: u64,
    pub p_value: f64,
    /// True when nobody expressed a preference, so the test is vacuous and
    /// `p_value` is reported as 1.
    pub vacuous: bool,
}

impl PreferenceTally {
    pub fn from_counts(prefer_model: u64, prefer_label: u64, neither: u64) -> Self {
        let decided = prefer_model + prefer_label;
        let (p_value, vacuous) = match decided {
            0 => (1.0, true),
            n => (binom_test_one_tailed(prefer_model, n).expect("k <= n by construction"), false),
        };
        Self { prefer_model, prefer_label, neither, total: decided + neither, p_value, vacuous }
    }
}

/// Tallies resolved preferences; "neither" is counted but left out of the test.
pub fn study_summary(records: &[PreferenceRecord]) -> PreferenceTally {
    let count = |p: Preference| records.iter().filter(|r| r.resolved == p).count() as u64;
    PreferenceTally::from_counts(count(Preference::Model), count(Preference::Label), count(Preference::Neither))
}

/// Text block with one column per labelled tally and rows
/// Model / Label / Neither / Total / p-value.
pub fn format_table(columns: &[(&str, &PreferenceTally)]) -> String {
    let width = columns.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(8);
    let mut s = format!("{:<8}", "");
    for (name, _) in columns {
        let _ = write!(s, "  {name:>width$}");
    }
    s.push('\n');
    let rows: [(&str, fn(&PreferenceTally) -> String); 5] = [
        ("Model", |t| t.prefer_model.to_string()),
        ("Label", |t| t.prefer_label.to_string()),
        ("Neither", |t| t.neither.to_string()),
        ("Total", |t| t.total.to_string()),
        ("p-value", |t| format_p(t.p_value)),
    ];
    for (label, cell) in rows {
        let _ = write!(s, "{label:<8}");
        for (_, t) in columns {
            let _ = write!(s, "  {:>width$}", cell(t));
        }
        s.push('\n');
    }
    s
}

/// Two significant figures in scientific notation, e.g. `9.6e-6`.
pub fn format_p(p: f64) -> String {
    format!("{p:.1e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact tail as a ratio of integers.
    fn brute_force(k: u64, n: u64) -> f64 {
        let mut c: u128 = 1;
        let mut tail: u128 = 0;
        for i in 0..=n {
            if i >= k {
                tail += c;
            }
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        tail as f64 / (1u128 << n) as f64
    }

    #[test]
    fn table_p_values() {
        let p = binom_test_one_tailed(46, 59).unwrap();
        assert!((p / 9.6e-6 - 1.0).abs() < 0.05, "{p}");
        let p = binom_test_one_tailed(49, 64).unwrap();
        assert!((p / 1.2e-5 - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn small_cases() {
        assert_eq!(binom_test_one_tailed(1, 1).unwrap(), 0.5);
        assert!((binom_test_one_tailed(3, 4).unwrap() - 0.3125).abs() < 1e-15);
        assert_eq!(binom_test_one_tailed(0, 17).unwrap(), 1.0);
        for n in [1u64, 10, 64, 200] {
            let p = binom_test_one_tailed(n, n).unwrap();
            let exact = 0.5f64.powi(n as i32);
            assert!((p / exact - 1.0).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(binom_test_one_tailed(5, 4).is_err());
        assert!(binom_test_one_tailed(0, 0).is_err());
    }

    #[test]
    fn matches_brute_force_up_to_20() {
        for n in 1..=20 {
            for k in 0..=n {
                let p = binom_test_one_tailed(k, n).unwrap();
                let b = brute_force(k, n);
                assert!((p / b - 1.0).abs() < 1e-12, "k={k} n={n}: {p} vs {b}");
            }
        }
    }

    #[test]
    fn tail_is_strictly_decreasing_in_k() {
        // Above n = 52 the first steps (1 - 2^-n) are below f64 resolution.
        for n in [1u64, 7, 40, 52] {
            for k in 0..n {
                assert!(binom_test_one_tailed(k + 1, n).unwrap() < binom_test_one_tailed(k, n).unwrap());
            }
        }
        for n in [59u64, 200] {
            for k in 0..n {
                assert!(binom_test_one_tailed(k + 1, n).unwrap() <= binom_test_one_tailed(k, n).unwrap());
            }
        }
    }

    fn rec(i: usize, resolved: Preference) -> PreferenceRecord {
        PreferenceRecord {
            item_id: format!("test-{i:03}"),
            rater_id: "r".into(),
            choice: Choice::Neither,
            timestamp: 0,
            resolved,
        }
    }

    fn records(m: usize, l: usize, n: usize) -> Vec<PreferenceRecord> {
        let mut out = Vec::new();
        for (count, p) in [(m, Preference::Model), (l, Preference::Label), (n, Preference::Neither)] {
            for _ in 0..count {
                out.push(rec(out.len(), p));
            }
        }
        out
    }

    #[test]
    fn summary_of_table_counts() {
        let t = study_summary(&records(46, 13, 141));
        assert_eq!((t.prefer_model, t.prefer_label, t.neither, t.total), (46, 13, 141, 200));
        assert!((t.p_value / 9.6e-6 - 1.0).abs() < 0.05);
        let t = study_summary(&records(49, 15, 136));
        assert_eq!(t.total, 200);
        assert!((t.p_value / 1.2e-5 - 1.0).abs() < 0.05);
    }

    #[test]
    fn summary_is_order_invariant() {
        let mut r = records(5, 3, 4);
        let a = study_summary(&r);
        r.reverse();
        r.swap(1, 7);
        assert_eq!(study_summary(&r), a);
    }

    #[test]
    fn all_neither_is_vacuous() {
        let t = study_summary(&records(0, 0, 9));
        assert_eq!(t.p_value, 1.0);
        assert!(t.vacuous);
    }

    #[test]
    fn choice_resolution() {
        assert_eq!(Choice::First.resolve(true), Preference::Model);
        assert_eq!(Choice::First.resolve(false), Preference::Label);
        assert_eq!(Choice::Second.resolve(false), Preference::Model);
        assert_eq!(Choice::Neither.resolve(true), Preference::Neither);
        assert!("maybe".parse::<Choice>().is_err());
        for p in [Preference::Model, Preference::Label, Preference::Neither] {
            for first in [true, false] {
                assert_eq!(p.to_choice(first).resolve(first), p);
            }
        }
    }

    #[test]
    fn table_block_layout() {
        let test = PreferenceTally::from_counts(46, 13, 141);
        let train = PreferenceTally::from_counts(49, 15, 136);
        let block = format_table(&[("test", &test), ("train", &train)]);
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("Model") && lines[1].contains("46") && lines[1].contains("49"));
        assert!(lines[4].contains("200"));
        assert!(lines[5].contains("9.6e-6") && lines[5].contains("1.2e-5"), "{block}");
    }
}
