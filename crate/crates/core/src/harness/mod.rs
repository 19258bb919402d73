//! Experiment orchestration: replicate execution, aggregation, studies and
//! result files.
//!
//! Replicate `l` of an experiment always runs from seed
//! [`derive_seed`]`(config.seed, l)`. Replicates are distributed over a
//! pool of `config.workers` threads but folded into the statistics in
//! replicate order, so results do not depend on the worker count.

pub mod io;
pub mod validate;

use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

pub use crate::config::ExperimentConfig;
use crate::coupling::{run_trajectory, Algorithm, EventCounts};
use crate::ensemble::EventType;
use crate::error::{Error, Result};
use crate::oracle::{central_difference_ref, DenseMeasure, TailClosure};
pub use crate::seed::derive_seed;
use crate::stats::{
    self, e_totalstat, fit_loglog_slope, inefficiency, Accumulator, LogLogFit, RunStats,
};

use io::{
    Artifacts, ConvergenceRow, EfficiencyRow, EventRow, SensitivityRow, CONFIG_TXT,
    CONVERGENCE_CSV, EFFICIENCY_CSV, EVENTS_CSV, SENSITIVITY_CSV,
};

// replicates held in memory at once before folding
const CHUNK: usize = 2048;

struct Replicate {
    values: Vec<Vec<f64>>,
    events: Vec<EventCounts>,
    labels: Vec<[usize; 3]>,
    elapsed: Vec<Duration>,
    extinct: bool,
}

fn run_replicate(config: &ExperimentConfig, l: u64) -> Result<Replicate> {
    let record = run_trajectory(config, derive_seed(config.seed, l))?;
    let mut values = Vec::with_capacity(record.outputs.len());
    for out in &record.outputs {
        let est = if config.eps > 0.0 {
            stats::estimate(&out.plus, &out.minus, config.eps, config.x_report)?
        } else {
            stats::difference(&out.plus, &out.minus, config.x_report)?
        };
        values.push(est.values);
    }
    Ok(Replicate {
        values,
        events: record.outputs.iter().map(|o| o.events).collect(),
        labels: record.outputs.iter().map(|o| o.label_counts).collect(),
        elapsed: record.outputs.iter().map(|o| o.elapsed).collect(),
        extinct: record.extinct_at.is_some(),
    })
}

/// Mean event and label counts per replicate at one output time.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSummary {
    pub time: f64,
    pub counts: [f64; 9],
    pub labels: [f64; 3],
}

/// In-memory outcome of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// One entry per output time. With a single replicate the variances
    /// are undefined and reported as NaN.
    pub stats: Vec<RunStats>,
    pub events: Vec<EventSummary>,
    /// Replicates in which no admissible pair remained before `t_end`.
    pub extinctions: u64,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// Runs `L` replicates of `config` and aggregates them per output time.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let times = &config.output_times;
    let k = times.len();
    let pool = thread_pool(config.workers)?;
    let mut accs = vec![Accumulator::new(config.x_report); k];
    let mut t_run = vec![Duration::ZERO; k];
    let mut counts = vec![[0.0f64; 9]; k];
    let mut labels = vec![[0.0f64; 3]; k];
    let mut extinctions = 0;
    let total = config.replicates as u64;
    let mut start = 0u64;
    while start < total {
        let end = (start + CHUNK as u64).min(total);
        let batch: Vec<Result<Replicate>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|l| run_replicate(config, l))
                .collect()
        });
        for rep in batch {
            let rep = rep?;
            for i in 0..k {
                accs[i].push(&rep.values[i]);
                t_run[i] += rep.elapsed[i];
                for (c, &v) in counts[i].iter_mut().zip(rep.events[i].0.iter()) {
                    *c += v as f64;
                }
                for (c, &v) in labels[i].iter_mut().zip(rep.labels[i].iter()) {
                    *c += v as f64;
                }
            }
            extinctions += rep.extinct as u64;
        }
        start = end;
    }
    let l = total as f64;
    let stats = (0..k)
        .map(|i| RunStats {
            time: times[i],
            replicates: total,
            mean: accs[i].mean().to_vec(),
            variance: accs[i]
                .variance()
                .unwrap_or_else(|| vec![f64::NAN; config.x_report]),
            t_run: t_run[i],
            l_run: total,
        })
        .collect();
    let events = (0..k)
        .map(|i| EventSummary {
            time: times[i],
            counts: counts[i].map(|c| c / l),
            labels: labels[i].map(|c| c / l),
        })
        .collect();
    Ok(ExperimentResult {
        config: config.clone(),
        stats,
        events,
        extinctions,
    })
}

impl ExperimentResult {
    pub fn sensitivity_rows(&self) -> Vec<SensitivityRow> {
        let c = &self.config;
        let mut rows = Vec::new();
        for s in &self.stats {
            for size in 1..=s.mean.len() {
                let (ci_low, ci_high) = s.ci(size);
                rows.push(SensitivityRow {
                    t: s.time,
                    size: size as u64,
                    mean: s.mean[size - 1],
                    var: s.variance[size - 1],
                    ci_low,
                    ci_high,
                    algorithm: c.algorithm.to_string(),
                    n: c.n,
                    l: s.replicates,
                    eps: c.eps,
                    lambda: c.lambda,
                    kernel: c.kernel.to_string(),
                    source: "simulation".into(),
                });
            }
        }
        rows
    }

    pub fn event_rows(&self) -> Vec<EventRow> {
        self.events
            .iter()
            .map(|e| {
                let n = |t: EventType| e.counts[t.index()];
                EventRow {
                    t: e.time,
                    algorithm: self.config.algorithm.to_string(),
                    count_1a: n(EventType::E1a),
                    count_1b: n(EventType::E1b),
                    count_1c: n(EventType::E1c),
                    count_2a: n(EventType::E2a),
                    count_2b: n(EventType::E2b),
                    count_2c: n(EventType::E2c),
                    count_3a: n(EventType::E3a),
                    count_3b: n(EventType::E3b),
                    count_fictitious: n(EventType::Fictitious),
                    n_plus: e.labels[0],
                    n_common: e.labels[1],
                    n_minus: e.labels[2],
                }
            })
            .collect()
    }

    /// Mean sensitivities indexed `[time][size − 1]`.
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.stats.iter().map(|s| s.mean.clone()).collect()
    }

    /// Writes `sensitivity.csv`, `events.csv` and `config.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut a = Artifacts::default();
        a.add_csv(SENSITIVITY_CSV, &self.sensitivity_rows())?;
        a.add_csv(EVENTS_CSV, &self.event_rows())?;
        a.add(CONFIG_TXT, self.config.to_text().into_bytes());
        a.commit(dir)
    }
}

/// Oracle central difference for `config` on sizes `1..=x_report`,
/// indexed `[time][size − 1]`.
pub fn oracle_reference(config: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let x_max = config.oracle_x_max.max(config.x_report);
    let cd = central_difference_ref(
        config.kernel,
        config.lambda,
        config.eps,
        &DenseMeasure::monodisperse(x_max),
        &config.output_times,
        config.oracle_step,
        TailClosure::Lumped,
    )?;
    Ok(cd
        .into_iter()
        .map(|mut row| {
            row.truncate(config.x_report);
            row
        })
        .collect())
}

/// Oracle sensitivities as `sensitivity.csv` rows with `source = oracle`.
pub fn oracle_rows(config: &ExperimentConfig) -> Result<Vec<SensitivityRow>> {
    let reference = oracle_reference(config)?;
    let mut rows = Vec::new();
    for (t, row) in config.output_times.iter().zip(&reference) {
        for (i, &v) in row.iter().enumerate() {
            rows.push(SensitivityRow {
                t: *t,
                size: i as u64 + 1,
                mean: v,
                var: 0.0,
                ci_low: v,
                ci_high: v,
                algorithm: config.algorithm.to_string(),
                n: 0,
                l: 0,
                eps: config.eps,
                lambda: config.lambda,
                kernel: config.kernel.to_string(),
                source: "oracle".into(),
            });
        }
    }
    Ok(rows)
}

pub fn write_oracle(config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut a = Artifacts::default();
    a.add_csv(SENSITIVITY_CSV, &oracle_rows(config)?)?;
    a.add(CONFIG_TXT, config.to_text().into_bytes());
    a.commit(dir)
}

/// Reference for the convergence study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergenceReference {
    /// Deterministic central difference.
    Oracle,
    /// The run with the largest `N` in the ladder, which is then left out
    /// of the table.
    LargestRun,
}

#[derive(Clone, Debug)]
pub struct ConvergenceResult {
    pub config: ExperimentConfig,
    pub rows: Vec<ConvergenceRow>,
    pub fit: LogLogFit,
}

impl ConvergenceResult {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut a = Artifacts::default();
        a.add_csv(CONVERGENCE_CSV, &self.rows)?;
        a.add(CONFIG_TXT, self.config.to_text().into_bytes());
        a.commit(dir)
    }
}

/// `c_tot` over the ladder `config.n_ladder` with `L = nl_product / N`,
/// and the log-log slope of `c_tot` against `N`.
pub fn run_convergence_study(
    config: &ExperimentConfig,
    reference: ConvergenceReference,
) -> Result<ConvergenceResult> {
    let mut ladder = config.n_ladder.clone();
    ladder.sort_unstable();
    ladder.dedup();
    if ladder.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "convergence study needs at least 4 values of N, got {}",
            ladder.len()
        )));
    }
    if !(config.eps > 0.0) {
        return Err(Error::InvalidConfig(
            "convergence study needs eps > 0".into(),
        ));
    }
    let mut runs = Vec::with_capacity(ladder.len());
    for &n in &ladder {
        let l = config.nl_product / n;
        if l < 2 {
            return Err(Error::InvalidConfig(format!(
                "nl_product {} leaves fewer than 2 replicates at N = {n}",
                config.nl_product
            )));
        }
        let mut c = config.clone();
        c.n = n;
        c.replicates = l as usize;
        runs.push((n, l, run_experiment(&c)?.means()));
    }
    let refs = match reference {
        ConvergenceReference::Oracle => oracle_reference(config)?,
        ConvergenceReference::LargestRun => runs.pop().map(|r| r.2).unwrap_or_default(),
    };
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(runs.len());
    let mut points = Vec::with_capacity(runs.len());
    for (n, l, means) in &runs {
        let c_tot = stats::systematic_error_total(means, &refs)?;
        points.push((*n as f64, c_tot));
        let slope_partial = if points.len() >= 3 {
            Some(fit_loglog_slope(&points)?.slope)
        } else {
            None
        };
        rows.push(ConvergenceRow {
            n: *n,
            l: *l,
            c_tot,
            slope_partial,
        });
    }
    let fit = fit_loglog_slope(&points)?;
    Ok(ConvergenceResult {
        config: config.clone(),
        rows,
        fit,
    })
}

#[derive(Clone, Debug)]
pub struct EfficiencyResult {
    pub config: ExperimentConfig,
    pub rows: Vec<EfficiencyRow>,
    /// Statistics per algorithm, in [`Algorithm::ALL`] order.
    pub stats: Vec<(Algorithm, Vec<RunStats>)>,
}

impl EfficiencyResult {
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut a = Artifacts::default();
        a.add_csv(EFFICIENCY_CSV, &self.rows)?;
        a.add(CONFIG_TXT, self.config.to_text().into_bytes());
        a.commit(dir)
    }

    /// Inefficiency of `alg` at output index `k`.
    pub fn inefficiency(&self, alg: Algorithm, k: usize) -> Option<f64> {
        let per_t = self.rows.len() / Algorithm::ALL.len();
        let i = Algorithm::ALL.iter().position(|a| *a == alg)?;
        self.rows.get(i * per_t + k).map(|r| r.inefficiency)
    }
}

/// Runs every algorithm with the same `N`, `ε`, `L` and seed and reports
/// each one's inefficiency relative to Double at every output time.
pub fn run_efficiency_study(config: &ExperimentConfig) -> Result<EfficiencyResult> {
    if config.replicates < 2 {
        return Err(Error::InvalidConfig(
            "efficiency study needs replicates >= 2".into(),
        ));
    }
    let mut all = Vec::with_capacity(3);
    for alg in Algorithm::ALL {
        let mut c = config.clone();
        c.algorithm = alg;
        all.push((alg, run_experiment(&c)?.stats));
    }
    let double = all
        .iter()
        .find(|(a, _)| *a == Algorithm::Double)
        .map(|(_, s)| s.clone())
        .expect("double is run");
    let mut rows = Vec::new();
    for (alg, stats) in &all {
        for (s, d) in stats.iter().zip(&double) {
            rows.push(EfficiencyRow {
                t: s.time,
                algorithm: alg.to_string(),
                t_run_per_run_sec: s.t_run_per_run(),
                total_variance: e_totalstat(s),
                inefficiency: inefficiency(s, d)?,
            });
        }
    }
    Ok(EfficiencyResult {
        config: config.clone(),
        rows,
        stats: all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(alg: Algorithm) -> ExperimentConfig {
        ExperimentConfig::parse_str(&format!(
            "n = 64\nreplicates = 6\nt_end = 1\noutput_times = 0, 0.5, 1\nx_report = 8\n\
             algorithm = {alg}\nworkers = 2\nseed = 3\n"
        ))
        .unwrap()
    }

    #[test]
    fn zero_time_gives_zero_estimates() {
        let r = run_experiment(&small(Algorithm::Single)).unwrap();
        assert!(r.stats[0].mean.iter().all(|&v| v == 0.0));
        assert!(r.stats[0].variance.iter().all(|&v| v == 0.0));
        assert_eq!(r.events[0].labels, [0.0, 64.0, 0.0]);
    }

    #[test]
    fn single_replicate_has_undefined_variance() {
        let mut c = small(Algorithm::Single);
        c.replicates = 1;
        c.eps = 0.0;
        let r = run_experiment(&c).unwrap();
        for s in &r.stats {
            assert!(s.mean.iter().all(|&v| v == 0.0));
            assert!(s.variance.iter().all(|v| v.is_nan()));
        }
    }

    #[test]
    fn event_counts_are_cumulative() {
        let r = run_experiment(&small(Algorithm::Double)).unwrap();
        let total = |e: &EventSummary| e.counts.iter().sum::<f64>();
        assert_eq!(total(&r.events[0]), 0.0);
        assert!(total(&r.events[1]) <= total(&r.events[2]));
        assert!(total(&r.events[2]) > 0.0);
    }

    #[test]
    fn ladder_must_have_four_points() {
        let mut c = small(Algorithm::Double);
        c.n_ladder = vec![16, 32, 64];
        assert!(run_convergence_study(&c, ConvergenceReference::Oracle).is_err());
    }
}
