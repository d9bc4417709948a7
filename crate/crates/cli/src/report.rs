//! Evaluation tables: text, CSV and JSON renderings of per-object success
//! rates, and the plain-text outcome log format.
//!
//! Outcome log lines are `split object successes episodes`, with `split`
//! one of `train` or `test`; blank lines and `#` comments are skipped.

use std::fmt::Write;

use affordloop::pipeline::SplitMetrics;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitReport {
    pub objects: Vec<String>,
    pub metrics: SplitMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub train: SplitReport,
    pub test: Option<SplitReport>,
}

impl EvalReport {
    /// Rows of a split as `(name, rate)` pairs, rates in `[0, 1]`.
    pub fn from_rows(train: &[(String, f64)], test: &[(String, f64)]) -> Result<Self, String> {
        let split = |rows: &[(String, f64)]| -> Result<SplitReport, String> {
            let rates: Vec<f64> = rows.iter().map(|r| r.1).collect();
            Ok(SplitReport {
                objects: rows.iter().map(|r| r.0.clone()).collect(),
                metrics: SplitMetrics::from_rates(&rates).map_err(|e| e.to_string())?,
            })
        };
        if train.is_empty() {
            return Err("no training objects to report".into());
        }
        Ok(Self {
            train: split(train)?,
            test: if test.is_empty() { None } else { Some(split(test)?) },
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<6} {:<16} {:>8}", "split", "object", "success").unwrap();
        let mut section = |name: &str, rep: Option<&SplitReport>| match rep {
            Some(r) => {
                for (o, v) in r.objects.iter().zip(&r.metrics.per_object) {
                    writeln!(s, "{name:<6} {o:<16} {:>7.1}%", v * 100.0).unwrap();
                }
                writeln!(s, "{name:<6} ASR {:.1}%  MP {:.1}%", r.metrics.asr, r.metrics.mp).unwrap();
            }
            None => writeln!(s, "{name:<6} absent").unwrap(),
        };
        section("train", Some(&self.train));
        section("test", self.test.as_ref());
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,object,success_rate\n");
        for (name, rep) in [("train", Some(&self.train)), ("test", self.test.as_ref())] {
            if let Some(r) = rep {
                for (o, v) in r.objects.iter().zip(&r.metrics.per_object) {
                    writeln!(s, "{name},{o},{v}").unwrap();
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Parses an outcome log. Repeated object names accumulate.
pub fn parse_outcomes(text: &str) -> Result<EvalReport, String> {
    let mut splits: [Vec<(String, u64, u64)>; 2] = [Vec::new(), Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| format!("line {}: {why}", i + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad("expected `split object successes episodes`"));
        }
        let which = match f[0] {
            "train" => 0,
            "test" => 1,
            other => return Err(bad(&format!("unknown split {other:?}"))),
        };
        let succ: u64 = f[2].parse().map_err(|_| bad("successes must be a whole number"))?;
        let eps: u64 = f[3].parse().map_err(|_| bad("episodes must be a whole number"))?;
        if eps == 0 || succ > eps {
            return Err(bad("need 0 <= successes <= episodes and episodes > 0"));
        }
        let rows = &mut splits[which];
        match rows.iter_mut().find(|r| r.0 == f[1]) {
            Some(r) => {
                r.1 += succ;
                r.2 += eps;
            }
            None => rows.push((f[1].to_string(), succ, eps)),
        }
    }
    let rates = |rows: &[(String, u64, u64)]| -> Vec<(String, f64)> {
        rows.iter().map(|(o, s, e)| (o.clone(), *s as f64 / *e as f64)).collect()
    };
    EvalReport::from_rows(&rates(&splits[0]), &rates(&splits[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_log_arithmetic() {
        let r = parse_outcomes("# a comment\ntrain a 12 20\ntrain b 8 20\ntrain c 10 20\ntest d 0 5\n").unwrap();
        assert_eq!(r.train.metrics.per_object, vec![0.6, 0.4, 0.5]);
        assert!((r.train.metrics.asr - 50.0).abs() < 1e-12);
        assert!(r.to_text().contains("train  ASR 50.0%  MP 66.7%"));
        assert!(r.to_text().contains("test   ASR 0.0%  MP 0.0%"));
    }

    #[test]
    fn repeated_objects_accumulate() {
        let r = parse_outcomes("train a 1 4\ntrain a 3 4\n").unwrap();
        assert_eq!(r.train.metrics.per_object, vec![0.5]);
        assert!(r.test.is_none());
        assert!(r.to_text().ends_with("test   absent\n"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("train a 1 2\ntrain b x 2\n", 2),
            ("\n\nvalid a 1 2\n", 3),
            ("train a 3 2\n", 1),
            ("train a 1\n", 1),
        ] {
            let e = parse_outcomes(text).unwrap_err();
            assert!(e.starts_with(&format!("line {line}:")), "{e}");
        }
        assert!(parse_outcomes("test a 1 2\n").is_err());
    }
}
