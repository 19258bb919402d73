//! Central-difference estimates and their error and efficiency metrics.

use std::time::Duration;

use crate::ensemble::MeasureSnapshot;
use crate::error::{Error, Result};

/// Standard normal quantile `z_{0.025}` for 95% intervals.
pub const Z_95: f64 = 1.959964;

/// One replicate's per-size central difference at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityEstimate {
    pub time: f64,
    /// `values[i - 1] = F(i)` for sizes `1..=x_report`.
    pub values: Vec<f64>,
    /// Difference in particle number beyond `x_report`, scaled like `values`.
    pub overflow_number: f64,
    /// Difference in mass beyond `x_report`, scaled like `values`.
    pub overflow_mass: f64,
}

impl SensitivityEstimate {
    /// `Σ i F(i)` over every size, including the overflow.
    pub fn mass_moment(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1) as f64 * v)
            .sum::<f64>()
            + self.overflow_mass
    }
}

/// Raw per-size density difference `μ⁺(i) − μ⁻(i)`.
pub fn difference(
    plus: &MeasureSnapshot,
    minus: &MeasureSnapshot,
    x_report: usize,
) -> Result<SensitivityEstimate> {
    if plus.time != minus.time {
        return Err(Error::InvalidArgument(format!(
            "snapshots at different times {} and {}",
            plus.time, minus.time
        )));
    }
    if plus.scale != minus.scale || plus.scale == 0 {
        return Err(Error::InvalidArgument(format!(
            "snapshot scales {} and {} differ or vanish",
            plus.scale, minus.scale
        )));
    }
    let n = plus.scale as f64;
    let mut counts = vec![0i64; x_report];
    let (mut over_n, mut over_m) = (0i64, 0i64);
    for (sign, snap) in [(1i64, plus), (-1i64, minus)] {
        for (&mass, &count) in &snap.counts {
            let c = sign * count as i64;
            if (mass as usize) <= x_report {
                counts[mass as usize - 1] += c;
            } else {
                over_n += c;
                over_m += c * mass as i64;
            }
        }
    }
    Ok(SensitivityEstimate {
        time: plus.time,
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
        overflow_number: over_n as f64 / n,
        overflow_mass: over_m as f64 / n,
    })
}

/// `F(i) = (μ⁺(i) − μ⁻(i)) / ε` for sizes `1..=x_report`.
pub fn estimate(
    plus: &MeasureSnapshot,
    minus: &MeasureSnapshot,
    eps: f64,
    x_report: usize,
) -> Result<SensitivityEstimate> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "central difference needs eps > 0, got {eps}"
        )));
    }
    let mut d = difference(plus, minus, x_report)?;
    for v in &mut d.values {
        *v /= eps;
    }
    d.overflow_number /= eps;
    d.overflow_mass /= eps;
    Ok(d)
}

/// Streaming per-size mean and variance, mergeable across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    pub fn new(width: usize) -> Self {
        Accumulator {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.mean.len(), "row width");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(values) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Combines two partial accumulators as if all rows were pushed to one.
    pub fn merge(&mut self, other: &Accumulator) {
        assert_eq!(self.mean.len(), other.mean.len(), "row width");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Sample variance with divisor `L − 1`; `None` for fewer than two rows.
    pub fn variance(&self) -> Option<Vec<f64>> {
        (self.count >= 2).then(|| {
            let d = (self.count - 1) as f64;
            self.m2.iter().map(|s| (s / d).max(0.0)).collect()
        })
    }
}

/// Aggregate statistics of `L` replicate estimates at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunStats {
    pub time: f64,
    pub replicates: u64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Wall-clock simulation time spent on the replicates.
    pub t_run: Duration,
    /// Number of replicates `t_run` covers.
    pub l_run: u64,
}

impl RunStats {
    pub fn from_accumulator(time: f64, acc: &Accumulator, t_run: Duration) -> Result<Self> {
        let variance = acc.variance().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "variance needs at least 2 replicates, got {}",
                acc.count()
            ))
        })?;
        Ok(RunStats {
            time,
            replicates: acc.count(),
            mean: acc.mean().to_vec(),
            variance,
            t_run,
            l_run: acc.count(),
        })
    }

    /// 95% confidence interval of the mean of size `size`.
    pub fn ci(&self, size: usize) -> (f64, f64) {
        let i = size - 1;
        let half = Z_95 * (self.variance[i] / self.replicates as f64).sqrt();
        (self.mean[i] - half, self.mean[i] + half)
    }

    pub fn t_run_per_run(&self) -> f64 {
        self.t_run.as_secs_f64() / self.l_run as f64
    }
}

/// Mean and sample variance of a set of estimates taken at one time.
pub fn aggregate(estimates: &[SensitivityEstimate]) -> Result<RunStats> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InvalidArgument("no estimates to aggregate".into()))?;
    let mut acc = Accumulator::new(first.values.len());
    for e in estimates {
        if e.values.len() != first.values.len() || e.time != first.time {
            return Err(Error::ShapeMismatch(
                "estimates differ in time or size range".into(),
            ));
        }
        acc.push(&e.values);
    }
    RunStats::from_accumulator(first.time, &acc, Duration::ZERO)
}

/// `c_tot = Σ_k Σ_i |F̄(t_k, i) − ref(t_k, i)|`.
pub fn systematic_error_total(means: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if means.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} output times against {} reference times",
            means.len(),
            reference.len()
        )));
    }
    let mut total = 0.0;
    for (k, (m, r)) in means.iter().zip(reference).enumerate() {
        if m.len() != r.len() {
            return Err(Error::ShapeMismatch(format!(
                "time index {k}: {} sizes against {} reference sizes",
                m.len(),
                r.len()
            )));
        }
        total += m.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total)
}

/// Total statistical error `Σ_i v_F(i)`.
pub fn e_totalstat(stats: &RunStats) -> f64 {
    stats.variance.iter().sum()
}

/// Estimated run time to a fixed total statistical error, relative to the
/// Double algorithm. The fixed error cancels.
pub fn inefficiency(alg: &RunStats, double: &RunStats) -> Result<f64> {
    let cost = |s: &RunStats| s.t_run_per_run() * e_totalstat(s);
    let denom = cost(double);
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "reference cost {denom} is not positive (zero variance or run time)"
        )));
    }
    Ok(cost(alg) / denom)
}

/// Ordinary least-squares fit of `ln value` against `ln N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact fit.
    pub slope_stderr: f64,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "log-log fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|(n, v)| !(*n > 0.0) || !(*v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "log-log fit needs positive data, got ({}, {})",
            p.0, p.1
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "log-log fit needs distinct N".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(LogLogFit {
        slope,
        intercept,
        slope_stderr: (rss / (k - 2.0) / sxx).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::System;
    use std::collections::BTreeMap;

    fn snap(scale: u64, counts: &[(u64, u64)]) -> MeasureSnapshot {
        MeasureSnapshot {
            time: 1.0,
            system: System::Plus,
            scale,
            counts: counts.iter().copied().collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn estimate_by_hand() {
        let p = snap(2, &[(2, 1)]);
        let m = snap(2, &[(1, 2)]);
        let e = estimate(&p, &m, 0.06, 4).unwrap();
        assert!((e.values[1] - 0.5 / 0.06).abs() < 1e-12);
        assert!((e.values[0] + 1.0 / 0.06).abs() < 1e-12);
        assert!(e.mass_moment().abs() < 1e-12);
        assert!(estimate(&p, &m, 0.0, 4).is_err());
    }

    #[test]
    fn identical_snapshots_give_zero() {
        let p = snap(10, &[(1, 4), (3, 2)]);
        let e = estimate(&p, &p, 0.1, 2).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        assert_eq!((e.overflow_number, e.overflow_mass), (0.0, 0.0));
    }

    #[test]
    fn overflow_keeps_mass_identity() {
        let p = snap(10, &[(1, 2), (8, 1)]);
        let m = snap(10, &[(1, 4), (3, 2)]);
        let e = estimate(&p, &m, 0.5, 4).unwrap();
        assert!((e.overflow_number - 0.2).abs() < 1e-12);
        assert!(e.mass_moment().abs() < 1e-12);
    }

    #[test]
    fn aggregate_two_rows() {
        let mk = |v: f64| SensitivityEstimate {
            time: 1.0,
            values: vec![v],
            overflow_number: 0.0,
            overflow_mass: 0.0,
        };
        let s = aggregate(&[mk(0.0), mk(2.0)]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.variance, vec![2.0]);
        assert!(aggregate(&[mk(1.0)]).is_err());
        let same = aggregate(&[mk(3.0), mk(3.0), mk(3.0)]).unwrap();
        assert_eq!(same.variance, vec![0.0]);
        assert_eq!(same.ci(1), (3.0, 3.0));
    }

    #[test]
    fn merge_equals_sequential() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i * i) as f64 * 0.01])
            .collect();
        let mut whole = Accumulator::new(2);
        rows.iter().for_each(|r| whole.push(r));
        let mut left = Accumulator::new(2);
        let mut right = Accumulator::new(2);
        rows[..17].iter().for_each(|r| left.push(r));
        rows[17..].iter().for_each(|r| right.push(r));
        left.merge(&right);
        assert_eq!(left.count(), 50);
        for i in 0..2 {
            assert!((left.mean()[i] - whole.mean()[i]).abs() < 1e-12);
            let (a, b) = (left.variance().unwrap()[i], whole.variance().unwrap()[i]);
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn c_tot_by_hand() {
        let c = systematic_error_total(&[vec![1.1, 0.8]], &[vec![1.0, 1.0]]).unwrap();
        assert!((c - 0.3).abs() < 1e-12);
        assert_eq!(
            systematic_error_total(&[vec![1.0]], &[vec![1.0]]).unwrap(),
            0.0
        );
        assert!(systematic_error_total(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
        assert!(systematic_error_total(&[vec![1.0]], &[]).is_err());
    }

    fn stats(var: Vec<f64>, secs: f64, l: u64) -> RunStats {
        RunStats {
            time: 1.0,
            replicates: l,
            mean: vec![0.0; var.len()],
            variance: var,
            t_run: Duration::from_secs_f64(secs),
            l_run: l,
        }
    }

    #[test]
    fn e_totalstat_sums_variance() {
        assert_eq!(e_totalstat(&stats(vec![2.0, 3.0], 1.0, 10)), 5.0);
        assert_eq!(e_totalstat(&stats(vec![0.0, 0.0], 1.0, 10)), 0.0);
    }

    #[test]
    fn inefficiency_by_hand() {
        let d = stats(vec![1.0, 1.0], 10.0, 100);
        let a = stats(vec![3.0, 3.0], 20.0, 100);
        assert!((inefficiency(&d, &d).unwrap() - 1.0).abs() < 1e-12);
        assert!((inefficiency(&a, &d).unwrap() - 6.0).abs() < 1e-12);
        assert!(inefficiency(&a, &stats(vec![0.0], 1.0, 10)).is_err());
    }

    #[test]
    fn loglog_exact_power_laws() {
        let pts = |p: i32| -> Vec<(f64, f64)> {
            (0..6)
                .map(|i| {
                    let n = 25.0 * 2f64.powi(i);
                    (n, 3.0 * n.powi(p))
                })
                .collect()
        };
        let fit = fit_loglog_slope(&pts(-1)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-10);
        assert!((fit_loglog_slope(&pts(-2)).unwrap().slope + 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&pts(0)).unwrap().slope.abs() < 1e-12);
        assert!(fit_loglog_slope(&pts(-1)[..2]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
    }
}
