//! Figures of merit and ensemble aggregation.
//!
//! Efficiencies of an ensemble are computed from the mean disclosed length,
//! not averaged per frame. Non-finite values (`f_ec` at zero error rate,
//! `beta` at h = 1) are kept as IEEE values in memory and written as the
//! sentinels `inf` / `undefined` in CSV and JSON.

use std::io::Write;

use serde::{Serialize, Serializer};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{usage, Result};
use crate::protocol::ReconcileOutcome;

pub fn binary_entropy(e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e) {
        return Err(usage(format!("error rate {e} outside [0, 1]")));
    }
    if e == 0.0 || e == 1.0 {
        return Ok(0.0);
    }
    Ok(-e * e.log2() - (1.0 - e) * (1.0 - e).log2())
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(usage("frame length must be at least 1"));
    }
    Ok(())
}

/// `m / (n h(e))`; `+inf` when `h(e) = 0`.
pub fn f_ec(m: f64, n: usize, e: f64) -> Result<f64> {
    check_n(n)?;
    let h = binary_entropy(e)?;
    let disclosed = m / n as f64;
    Ok(if h == 0.0 { f64::INFINITY } else { disclosed / h })
}

/// `(1 - m/n) / (1 - h(e))`; NaN when `h(e) = 1`.
pub fn beta(m: f64, n: usize, e: f64) -> Result<f64> {
    check_n(n)?;
    let h = binary_entropy(e)?;
    let rate = 1.0 - m / n as f64;
    Ok(if h == 1.0 { f64::NAN } else { rate / (1.0 - h) })
}

/// Leakage ratio when failed frames count as fully disclosed.
pub fn leak_ec(fer: f64, m: f64, n: usize) -> Result<f64> {
    check_n(n)?;
    if !(0.0..=1.0).contains(&fer) {
        return Err(usage(format!("frame error rate {fer} outside [0, 1]")));
    }
    Ok((1.0 - fer) * (m / n as f64) + fer)
}

pub fn eta_ec(leak: f64, e: f64) -> Result<f64> {
    let h = binary_entropy(e)?;
    Ok(if h == 0.0 { f64::INFINITY } else { leak / h })
}

/// Two-sided Clopper-Pearson interval for `failures` out of `trials`.
pub fn clopper_pearson(failures: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || failures > trials {
        return Err(usage(format!("invalid binomial count {failures}/{trials}")));
    }
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(usage(format!("confidence {confidence} outside (0, 1)")));
    }
    let alpha = 1.0 - confidence;
    let (x, n) = (failures as f64, trials as f64);
    let quantile = |a: f64, b: f64, p: f64| {
        Beta::new(a, b).map(|d| d.inverse_cdf(p)).map_err(|e| usage(format!("beta quantile: {e}")))
    };
    let low = if failures == 0 { 0.0 } else { quantile(x, n - x + 1.0, alpha / 2.0)? };
    let high = if failures == trials { 1.0 } else { quantile(x + 1.0, n - x, 1.0 - alpha / 2.0)? };
    Ok((low, high))
}

/// Mergeable partial sums over reconciliation outcomes. All fields are
/// integers, so merging in any order gives the same totals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Accumulator {
    pub frames: u64,
    pub sum_m: u128,
    pub sum_m2: u128,
    pub sum_rounds: u128,
    pub sum_rounds2: u128,
    pub residual_bits: u128,
    pub failures: u64,
    /// Frames with errors left after pass `i + 1`.
    pub pass_failures: Vec<u64>,
}

impl Accumulator {
    pub fn push(&mut self, o: &ReconcileOutcome) {
        self.frames += 1;
        self.sum_m += o.m as u128;
        self.sum_m2 += (o.m as u128) * (o.m as u128);
        self.sum_rounds += o.rounds as u128;
        self.sum_rounds2 += (o.rounds as u128) * (o.rounds as u128);
        self.residual_bits += o.residual_errors as u128;
        self.failures += (!o.success) as u64;
        if self.pass_failures.len() < o.pass_residuals.len() {
            self.pass_failures.resize(o.pass_residuals.len(), 0);
        }
        for (slot, &r) in self.pass_failures.iter_mut().zip(&o.pass_residuals) {
            *slot += (r > 0) as u64;
        }
    }

    pub fn merge(mut self, other: Accumulator) -> Accumulator {
        self.frames += other.frames;
        self.sum_m += other.sum_m;
        self.sum_m2 += other.sum_m2;
        self.sum_rounds += other.sum_rounds;
        self.sum_rounds2 += other.sum_rounds2;
        self.residual_bits += other.residual_bits;
        self.failures += other.failures;
        if self.pass_failures.len() < other.pass_failures.len() {
            self.pass_failures.resize(other.pass_failures.len(), 0);
        }
        for (a, b) in self.pass_failures.iter_mut().zip(other.pass_failures) {
            *a += b;
        }
        self
    }

    pub fn report(&self, variant: &str, n: usize, q: f64, p_init: f64) -> Result<RunReport> {
        if self.frames == 0 {
            return Err(usage("cannot aggregate an empty collection of outcomes"));
        }
        check_n(n)?;
        let frames = self.frames as f64;
        let (mean_m, se_m) = mean_se(self.sum_m, self.sum_m2, self.frames);
        let (mean_rounds, se_rounds) = mean_se(self.sum_rounds, self.sum_rounds2, self.frames);
        let fer = self.failures as f64 / frames;
        let (fer_ci_low, fer_ci_high) = clopper_pearson(self.failures, self.frames, 0.95)?;
        let leak = leak_ec(fer, mean_m, n)?;
        Ok(RunReport {
            variant: variant.to_string(),
            n,
            p_init,
            q,
            frames: self.frames,
            mean_m,
            se_m,
            mean_rounds,
            se_rounds,
            failures: self.failures,
            fer,
            fer_ci_low,
            fer_ci_high,
            ber: self.residual_bits as f64 / (n as f64 * frames),
            f_ec: f_ec(mean_m, n, q)?,
            beta: beta(mean_m, n, q)?,
            leak_ec: leak,
            eta_ec: eta_ec(leak, q)?,
            pass_fer: self.pass_failures.iter().map(|&c| c as f64 / frames).collect(),
        })
    }
}

fn mean_se(sum: u128, sum2: u128, count: u64) -> (f64, f64) {
    let n = count as f64;
    let mean = sum as f64 / n;
    if count < 2 {
        return (mean, 0.0);
    }
    // Exact integer numerator: count * sum2 - sum^2 = count^2 * variance_pop.
    let num = count as u128 * sum2 - sum * sum;
    let var = num as f64 / (n * (n - 1.0));
    (mean, (var / n).sqrt())
}

/// Aggregate a batch of outcomes sharing `n` and schedule.
pub fn aggregate(outcomes: &[ReconcileOutcome], variant: &str, n: usize, q: f64, p_init: f64) -> Result<RunReport> {
    let mut acc = Accumulator::default();
    for o in outcomes {
        acc.push(o);
    }
    acc.report(variant, n, q, p_init)
}

fn sentinel<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_value(*v))
    }
}

/// Finite values in shortest round-trip form, otherwise `inf`, `-inf` or
/// `undefined`.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "undefined".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Aggregated figures for one (variant, n, p_init, q) point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub variant: String,
    pub n: usize,
    pub p_init: f64,
    pub q: f64,
    pub frames: u64,
    pub mean_m: f64,
    pub se_m: f64,
    pub mean_rounds: f64,
    pub se_rounds: f64,
    pub failures: u64,
    pub fer: f64,
    pub fer_ci_low: f64,
    pub fer_ci_high: f64,
    pub ber: f64,
    #[serde(serialize_with = "sentinel")]
    pub f_ec: f64,
    #[serde(serialize_with = "sentinel")]
    pub beta: f64,
    pub leak_ec: f64,
    #[serde(serialize_with = "sentinel")]
    pub eta_ec: f64,
    /// Frame error rate after each pass.
    pub pass_fer: Vec<f64>,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "variant",
    "n",
    "p_init",
    "q",
    "frames",
    "mean_m",
    "mean_rounds",
    "fer",
    "fer_ci_high",
    "ber",
    "f_ec",
    "beta",
    "leak_ec",
    "eta_ec",
];

impl RunReport {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.variant.clone(),
            self.n.to_string(),
            format_value(self.p_init),
            format_value(self.q),
            self.frames.to_string(),
            format_value(self.mean_m),
            format_value(self.mean_rounds),
            format_value(self.fer),
            format_value(self.fer_ci_high),
            format_value(self.ber),
            format_value(self.f_ec),
            format_value(self.beta),
            format_value(self.leak_ec),
            format_value(self.eta_ec),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Header plus one row per report.
pub fn write_csv<W: Write>(reports: &[RunReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in reports {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => usage(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitframe::Frame;
    use crate::protocol::LeakageLedger;
    use proptest::prelude::*;

    fn outcome(m: u64, rounds: u64, residual: usize, passes: &[usize]) -> ReconcileOutcome {
        ReconcileOutcome {
            corrected_frame: Frame::zeros(1).unwrap(),
            m,
            rounds,
            residual_errors: residual,
            success: residual == 0,
            pass_residuals: passes.to_vec(),
            ledger: LeakageLedger::default(),
        }
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // mpmath, 30 digits: 0.141440542541820645...
        assert!((binary_entropy(0.02).unwrap() - 0.141_440_542_541_820_6).abs() < 1e-14);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn efficiency_edge_cases() {
        let n = 10_000;
        let h = binary_entropy(0.03).unwrap();
        assert!((f_ec(n as f64 * h, n, 0.03).unwrap() - 1.0).abs() < 1e-12);
        assert!((f_ec(n as f64, n, 0.03).unwrap() - 1.0 / h).abs() < 1e-12);
        assert_eq!(f_ec(10.0, n, 0.0).unwrap(), f64::INFINITY);
        assert!((beta(n as f64 * h, n, 0.03).unwrap() - 1.0).abs() < 1e-12);
        assert!(beta(10.0, n, 0.5).unwrap().is_nan());
        assert!(f_ec(1.0, 0, 0.1).is_err());
    }

    #[test]
    fn leakage_examples() {
        assert!((leak_ec(0.0, 1000.0, 10_000).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(leak_ec(1.0, 1000.0, 10_000).unwrap(), 1.0);
        assert!((leak_ec(1e-3, 1000.0, 10_000).unwrap() - 0.1009).abs() < 1e-15);
        assert!(leak_ec(1.1, 0.0, 10).is_err());
        let h = binary_entropy(0.04).unwrap();
        assert!((eta_ec(h, 0.04).unwrap() - 1.0).abs() < 1e-12);
        // Without failures, eta equals f_ec.
        let leak = leak_ec(0.0, 777.0, 4096).unwrap();
        assert_eq!(eta_ec(leak, 0.04).unwrap(), f_ec(777.0, 4096, 0.04).unwrap());
    }

    #[test]
    fn table_beta_and_eta_consistent() {
        // opt8 row q = 1%: f_ec 1.04219 gives beta 0.9963.
        let n = 16384;
        let m = 1.04219 * n as f64 * binary_entropy(0.01).unwrap();
        assert!((beta(m, n, 0.01).unwrap() - 0.9963).abs() < 5e-5);
        // q = 2%: f_ec 1.04006 and fer 9.3e-5 give eta 1.04062.
        let m = 1.04006 * n as f64 * binary_entropy(0.02).unwrap();
        let eta = eta_ec(leak_ec(9.3e-5, m, n).unwrap(), 0.02).unwrap();
        assert!((eta - 1.04062).abs() < 5e-5, "{eta}");
    }

    #[test]
    fn clopper_pearson_bounds() {
        // Zero failures: upper bound is 1 - (alpha/2)^(1/n).
        let (lo, hi) = clopper_pearson(0, 1000, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(1e-3))).abs() < 1e-7);
        let (lo, hi) = clopper_pearson(10, 10, 0.95).unwrap();
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-7);
        assert_eq!(hi, 1.0);
        // scipy beta.ppf(0.025, 3, 9998), beta.ppf(0.975, 4, 9997)
        let (lo, hi) = clopper_pearson(3, 10_000, 0.95).unwrap();
        assert!((lo - 6.187_148_6e-5).abs() < 1e-9, "{lo}");
        assert!((hi - 8.764_745_2e-4).abs() < 1e-9, "{hi}");
        assert!(clopper_pearson(1, 0, 0.95).is_err());
    }

    #[test]
    fn aggregate_counts() {
        let mut v = vec![outcome(100, 5, 0, &[2, 0]); 9_997];
        v.extend(vec![outcome(100, 5, 2, &[4, 2]); 3]);
        let r = aggregate(&v, "x", 1000, 0.02, 0.02).unwrap();
        assert_eq!(r.failures, 3);
        assert!((r.fer - 3e-4).abs() < 1e-15);
        assert_eq!(r.mean_m, 100.0);
        assert_eq!(r.se_m, 0.0);
        assert!((r.ber - 6.0 / (1000.0 * 10_000.0)).abs() < 1e-18);
        assert_eq!(r.pass_fer, vec![1.0, 3e-4]);
        assert!(aggregate(&[], "x", 1000, 0.02, 0.02).is_err());
    }

    #[test]
    fn csv_uses_sentinels() {
        let r = aggregate(&[outcome(10, 1, 0, &[0])], "original", 100, 0.0, 0.01).unwrap();
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        let row = lines.next().unwrap();
        assert!(row.contains(",inf,"), "{row}");
        assert!(!row.contains("NaN"));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"f_ec\": \"inf\""), "{json}");
    }

    proptest! {
        #[test]
        fn beta_identity(m in 0.0f64..20_000.0, n in 1usize..20_000, e in 0.001f64..0.499) {
            let m = m.min(n as f64);
            let h = binary_entropy(e).unwrap();
            let lhs = 1.0 - f_ec(m, n, e).unwrap() * h;
            let rhs = beta(m, n, e).unwrap() * (1.0 - h);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn leak_monotone_in_fer(a in 0.0f64..1.0, b in 0.0f64..1.0, m in 0.0f64..999.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(leak_ec(lo, m, 1000).unwrap() <= leak_ec(hi, m, 1000).unwrap() + 1e-15);
        }

        #[test]
        fn merge_equals_pooled(
            batch in proptest::collection::vec((0u64..5000, 0u64..300, 0usize..4), 2..60),
            cut in 0usize..60,
        ) {
            let outs: Vec<_> = batch.iter().map(|&(m, r, e)| outcome(m, r, e, &[e + 1, e])).collect();
            let cut = cut.min(outs.len());
            let mut a = Accumulator::default();
            let mut b = Accumulator::default();
            outs[..cut].iter().for_each(|o| a.push(o));
            outs[cut..].iter().for_each(|o| b.push(o));
            let merged = a.merge(b).report("x", 5000, 0.03, 0.03).unwrap();
            let pooled = aggregate(&outs, "x", 5000, 0.03, 0.03).unwrap();
            prop_assert_eq!(merged, pooled);
        }
    }
}
