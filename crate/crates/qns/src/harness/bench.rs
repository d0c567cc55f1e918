//! Throughput measurement: how much the classifier costs on top of
//! statement parsing.
//!
//! Three configurations run interleaved (a full pass of each per
//! repetition, so drift hits all three equally):
//!
//! (a) parse-only — statements are parsed and events extracted, nothing
//!     reaches the net; this is the baseline,
//! (b) classification on a freshly initialized net,
//! (c) classification on a pre-populated net, one token resting in every
//!     otherwise-empty place, approximating a long-running installation.
//!
//! Reported overheads are relative throughput loss vs. (a); confidence
//! intervals are Student-t at 95% over the per-repetition throughputs.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use super::HarnessError;
use crate::classifier::Classifier;
use crate::policy::SecurityPolicy;
use crate::sql::{classify_statement, TimedQuery};

/// Two-tailed 95% Student-t quantiles for 1..=30 degrees of freedom;
/// beyond that the normal approximation is used.
const T_95: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t_quantile_95(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        T_95[df - 1]
    } else {
        1.96
    }
}

/// Mean/spread of per-repetition throughputs, in queries per second.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub stdev: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl Stats {
    fn from_samples(samples: &[f64]) -> Stats {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let stdev = var.sqrt();
        let half = t_quantile_95(n.saturating_sub(1)) * stdev / (n as f64).sqrt();
        Stats { mean, stdev, ci95_low: mean - half, ci95_high: mean + half }
    }

    /// Whether the two 95% intervals intersect.
    pub fn overlaps(&self, other: &Stats) -> bool {
        self.ci95_low <= other.ci95_high && other.ci95_low <= self.ci95_high
    }
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub queries: usize,
    /// (a) parse-only.
    pub baseline: Stats,
    /// (b) full pipeline, freshly initialized net.
    pub fresh: Stats,
    /// (c) full pipeline, one token parked in every otherwise-empty place.
    pub populated: Stats,
    /// Relative throughput loss of (b) vs. (a): `1 - fresh/baseline`.
    pub overhead_fresh: f64,
    /// Relative throughput loss of (c) vs. (a).
    pub overhead_populated: f64,
}

/// Runs the three-way comparison. `repetitions` must be at least 3 for the
/// intervals to mean anything.
pub fn bench(
    queries: &[TimedQuery],
    policy: &SecurityPolicy,
    repetitions: usize,
) -> Result<BenchReport, HarnessError> {
    if repetitions < 3 {
        return Err(HarnessError::BadConfig(format!(
            "need at least 3 repetitions, got {repetitions}"
        )));
    }
    let mut classifier = Classifier::new(policy)?;
    let seedable: Vec<String> = classifier
        .net()
        .places()
        .iter()
        .filter(|p| p.initial_tokens == 0)
        .map(|p| p.name.clone())
        .collect();
    let base_ts = queries.first().map_or(0.0, |q| q.ts);

    let mut baseline = Vec::with_capacity(repetitions);
    let mut fresh = Vec::with_capacity(repetitions);
    let mut populated = Vec::with_capacity(repetitions);

    // One untimed pass primes the allocator and page cache so the first
    // timed repetition starts warm like the rest.
    parse_pass(queries, policy);

    for _ in 0..repetitions {
        baseline.push(parse_pass(queries, policy));

        classifier.reset();
        fresh.push(classify_pass(queries, policy, &mut classifier)?);

        classifier.reset();
        for place in &seedable {
            let mut attrs = BTreeMap::new();
            attrs.insert("db".to_string(), "resident_db".to_string());
            attrs.insert("table".to_string(), "resident_tbl".to_string());
            classifier.seed_token(place, attrs, base_ts)?;
        }
        populated.push(classify_pass(queries, policy, &mut classifier)?);
    }

    let baseline = Stats::from_samples(&baseline);
    let fresh = Stats::from_samples(&fresh);
    let populated = Stats::from_samples(&populated);
    Ok(BenchReport {
        repetitions,
        queries: queries.len(),
        overhead_fresh: 1.0 - fresh.mean / baseline.mean,
        overhead_populated: 1.0 - populated.mean / baseline.mean,
        baseline,
        fresh,
        populated,
    })
}

/// Renders the report as aligned text.
pub fn render_bench(report: &BenchReport) -> String {
    let row = |name: &str, s: &Stats, overhead: Option<f64>| {
        format!(
            "{name:<22} {:>12.0} {:>10.0} [{:>12.0}, {:>12.0}] {}\n",
            s.mean,
            s.stdev,
            s.ci95_low,
            s.ci95_high,
            overhead.map_or(String::from("—"), |o| format!("{:+.2}%", o * 100.0)),
        )
    };
    let mut out = format!(
        "{} statements, {} repetitions (queries/second)\n",
        report.queries, report.repetitions
    );
    out.push_str(&format!(
        "{:<22} {:>12} {:>10} {:>29} overhead\n",
        "configuration", "mean", "stdev", "95% interval"
    ));
    out.push_str(&row("parse-only baseline", &report.baseline, None));
    out.push_str(&row("fresh net", &report.fresh, Some(report.overhead_fresh)));
    out.push_str(&row("populated net", &report.populated, Some(report.overhead_populated)));
    out.push_str(&format!(
        "fresh/populated intervals overlap: {}\n",
        report.fresh.overlaps(&report.populated)
    ));
    out
}

fn parse_pass(queries: &[TimedQuery], policy: &SecurityPolicy) -> f64 {
    let started = Instant::now();
    for query in queries {
        black_box(classify_statement(&query.sql, None, &policy.object_prefix));
    }
    throughput(queries.len(), started.elapsed().as_secs_f64())
}

fn classify_pass(
    queries: &[TimedQuery],
    policy: &SecurityPolicy,
    classifier: &mut Classifier,
) -> Result<f64, HarnessError> {
    let started = Instant::now();
    for query in queries {
        for event in classify_statement(&query.sql, None, &policy.object_prefix) {
            let verdict = classifier.process(&event.with_time(query.ts, query.conn_id))?;
            black_box(&verdict);
        }
    }
    Ok(throughput(queries.len(), started.elapsed().as_secs_f64()))
}

fn throughput(n: usize, secs: f64) -> f64 {
    n as f64 / secs.max(1e-9)
}

/// Deterministic mixed workload shaped like an ordinary application:
/// reads and literal writes, temporary-table churn, and a catalog listing
/// every 32 statements (≈3%, still far above what live applications emit).
/// Timestamps advance 1 ms per statement, so even very long runs stay
/// inside the default correlation window.
pub fn synthetic_queries(n: usize) -> Vec<TimedQuery> {
    (0..n)
        .map(|i| {
            let sql = match i % 8 {
                0 => format!("SELECT id, name FROM app.users WHERE id = {i}"),
                1 => format!("INSERT INTO app.audit VALUES ({i}, 'session opened')"),
                2 => format!("UPDATE app.sessions SET last_seen = {i} WHERE token = 'tok{i}'"),
                3 if i % 32 == 3 => "SHOW TABLES FROM app".to_string(),
                3 => format!("SELECT status FROM app.jobs WHERE id = {i}"),
                4 => format!("CREATE TEMPORARY TABLE tmp_{i} (v INT)"),
                5 => format!("INSERT INTO tmp_{} VALUES ({i})", i - 1),
                6 => format!("DROP TEMPORARY TABLE tmp_{}", i - 2),
                _ => format!("SELECT COUNT(*) FROM app.orders WHERE total > {i}"),
            };
            TimedQuery { ts: i as f64 * 0.001, conn_id: 1, sql }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_repetitions_are_rejected() {
        let queries = synthetic_queries(16);
        let err = bench(&queries, &SecurityPolicy::default(), 2).err().expect("rejected");
        assert!(matches!(err, HarnessError::BadConfig(_)));
    }

    #[test]
    fn stats_match_a_hand_computed_example() {
        let stats = Stats::from_samples(&[10.0, 12.0, 14.0]);
        assert!((stats.mean - 12.0).abs() < 1e-9);
        assert!((stats.stdev - 2.0).abs() < 1e-9);
        // t(df=2) = 4.303, half-width = 4.303 * 2 / sqrt(3)
        let half = 4.303 * 2.0 / 3.0f64.sqrt();
        assert!((stats.ci95_low - (12.0 - half)).abs() < 1e-6);
        assert!((stats.ci95_high - (12.0 + half)).abs() < 1e-6);
    }

    #[test]
    fn interval_overlap_is_symmetric_and_sane() {
        let a = Stats { mean: 10.0, stdev: 1.0, ci95_low: 8.0, ci95_high: 12.0 };
        let b = Stats { mean: 11.0, stdev: 1.0, ci95_low: 9.0, ci95_high: 13.0 };
        let c = Stats { mean: 20.0, stdev: 1.0, ci95_low: 19.0, ci95_high: 21.0 };
        assert!(a.overlaps(&b) && b.overlaps(&a));
        assert!(!a.overlaps(&c) && !c.overlaps(&a));
    }

    #[test]
    fn desk_scale_run_produces_positive_finite_numbers() {
        let queries = synthetic_queries(240);
        let report = bench(&queries, &SecurityPolicy::default(), 3).unwrap();
        for stats in [&report.baseline, &report.fresh, &report.populated] {
            assert!(stats.mean.is_finite() && stats.mean > 0.0);
            assert!(stats.stdev >= 0.0);
            assert!(stats.ci95_low <= stats.mean && stats.mean <= stats.ci95_high);
        }
        assert!(report.overhead_fresh.is_finite());
        assert!(report.overhead_populated.is_finite());
        let text = render_bench(&report);
        assert!(text.contains("parse-only baseline"));
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_clean() {
        let a = synthetic_queries(64);
        let b = synthetic_queries(64);
        assert_eq!(a, b);
        for q in &a {
            let events = classify_statement(&q.sql, None, "dimaqs");
            assert!(
                events.iter().all(|e| {
                    e.kind != crate::sql::SqlEventKind::TamperAttempt && e.parse_warning.is_none()
                }),
                "workload statement should parse cleanly: {}",
                q.sql
            );
        }
    }
}
