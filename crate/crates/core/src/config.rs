//! Experiment configuration in flat `key = value` form.
//!
//! Lines are `key = value`; `#` starts a comment; lists are comma
//! separated. Setting `kernel` resets `lambda` and `eps` to the reference
//! values of that family unless they are set explicitly, regardless of
//! the order in which the keys appear.

use std::path::Path;

use crate::coupling::Algorithm;
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, PerturbedKernels};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kernel: KernelFamily,
    pub lambda: f64,
    pub eps: f64,
    /// Initial particle count `N`.
    pub n: u64,
    /// Replicate count `L`.
    pub replicates: usize,
    pub algorithm: Algorithm,
    pub t_end: f64,
    pub output_times: Vec<f64>,
    pub x_report: usize,
    pub seed: u64,
    pub workers: usize,
    /// Truncation bound of the deterministic reference.
    pub oracle_x_max: usize,
    /// Step size of the deterministic reference.
    pub oracle_step: f64,
    /// Particle counts of the convergence study.
    pub n_ladder: Vec<u64>,
    /// Fixed `N·L` of the convergence study.
    pub nl_product: u64,
}

pub const KEYS: &[&str] = &[
    "kernel",
    "lambda",
    "eps",
    "n",
    "replicates",
    "algorithm",
    "t_end",
    "output_times",
    "x_report",
    "seed",
    "workers",
    "oracle_x_max",
    "oracle_step",
    "n_ladder",
    "nl_product",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_kernel(KernelFamily::Additive)
    }
}

impl ExperimentConfig {
    pub fn for_kernel(kernel: KernelFamily) -> Self {
        ExperimentConfig {
            kernel,
            lambda: kernel.reference_lambda(),
            eps: kernel.reference_eps(),
            n: 10_000,
            replicates: 100,
            algorithm: Algorithm::Double,
            t_end: 3.0,
            output_times: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            x_report: 32,
            seed: 0,
            workers: default_workers(),
            oracle_x_max: 256,
            oracle_step: 1e-3,
            n_ladder: (0..6).map(|i| 25 << i).collect(),
            nl_product: 1 << 20,
        }
    }

    /// Builds a config from ordered key/value pairs on top of the defaults.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let norm = |k: &K| normalize_key(k.as_ref());
        let mut config = match pairs.iter().rev().find(|(k, _)| norm(k) == "kernel") {
            Some((_, v)) => ExperimentConfig::for_kernel(v.as_ref().parse()?),
            None => ExperimentConfig::default(),
        };
        for (k, v) in pairs {
            if norm(k) != "kernel" {
                config.set(k.as_ref(), v.as_ref())?;
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        ExperimentConfig::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse_str(&text)
    }

    /// Sets one key. Does not validate the resulting config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let v = value.trim();
        match key.as_str() {
            "kernel" => self.kernel = v.parse()?,
            "lambda" => self.lambda = parse_num(&key, v)?,
            "eps" => self.eps = parse_num(&key, v)?,
            "n" => self.n = parse_num(&key, v)?,
            "replicates" => self.replicates = parse_num(&key, v)?,
            "algorithm" => self.algorithm = v.parse()?,
            "t_end" => self.t_end = parse_num(&key, v)?,
            "output_times" => self.output_times = parse_list(&key, v)?,
            "x_report" => self.x_report = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "workers" => self.workers = parse_num(&key, v)?,
            "oracle_x_max" => self.oracle_x_max = parse_num(&key, v)?,
            "oracle_step" => self.oracle_step = parse_num(&key, v)?,
            "n_ladder" => self.n_ladder = parse_list(&key, v)?,
            "nl_product" => self.nl_product = parse_num(&key, v)?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key `{key}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be finite and >= 0, got {}", self.eps));
        }
        self.kernels()?;
        if self.n < 2 {
            return bad(format!("n must be >= 2, got {}", self.n));
        }
        if self.replicates < 1 {
            return bad("replicates must be >= 1".into());
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be finite and >= 0, got {}", self.t_end));
        }
        if self.output_times.is_empty() {
            return bad("output_times must not be empty".into());
        }
        for w in self.output_times.windows(2) {
            if !(w[0] < w[1]) {
                return bad("output_times must be strictly ascending".into());
            }
        }
        if let Some(t) = self
            .output_times
            .iter()
            .find(|&&t| !(0.0..=self.t_end).contains(&t))
        {
            return bad(format!("output time {t} outside [0, {}]", self.t_end));
        }
        if self.x_report < 1 {
            return bad("x_report must be >= 1".into());
        }
        if self.workers < 1 {
            return bad("workers must be >= 1".into());
        }
        if self.oracle_x_max < 2 {
            return bad("oracle_x_max must be >= 2".into());
        }
        if !(self.oracle_step > 0.0) {
            return bad("oracle_step must be > 0".into());
        }
        Ok(())
    }

    pub fn kernels(&self) -> Result<PerturbedKernels> {
        PerturbedKernels::new(self.kernel, self.lambda, self.eps)
    }

    /// Renders the config in the same `key = value` form it is parsed from.
    pub fn to_text(&self) -> String {
        let list = |v: &[String]| v.join(", ");
        let times: Vec<String> = self.output_times.iter().map(|t| t.to_string()).collect();
        let ladder: Vec<String> = self.n_ladder.iter().map(|n| n.to_string()).collect();
        format!(
            "kernel = {}\nlambda = {}\neps = {}\nn = {}\nreplicates = {}\nalgorithm = {}\n\
             t_end = {}\noutput_times = {}\nx_report = {}\nseed = {}\nworkers = {}\n\
             oracle_x_max = {}\noracle_step = {}\nn_ladder = {}\nnl_product = {}\n",
            self.kernel,
            self.lambda,
            self.eps,
            self.n,
            self.replicates,
            self.algorithm,
            self.t_end,
            list(&times),
            self.x_report,
            self.seed,
            self.workers,
            self.oracle_x_max,
            self.oracle_step,
            list(&ladder),
            self.nl_product,
        )
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn normalize_key(key: &str) -> String {
    match key.trim().to_ascii_lowercase().as_str() {
        "l" => "replicates".into(),
        "epsilon" => "eps".into(),
        "base_seed" => "seed".into(),
        other => other.into(),
    }
}

/// Splits config text into ordered `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::InvalidConfig(format!("override `{s}` is not key=value")))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    // accept integer values written in exponent form, e.g. n = 1e4
    if let Ok(x) = v.parse::<T>() {
        return Ok(x);
    }
    if let Ok(f) = v.parse::<f64>() {
        if f.fract() == 0.0 && f.abs() < 9.0e15 {
            if let Ok(x) = format!("{f:.0}").parse::<T>() {
                return Ok(x);
            }
        }
    }
    Err(Error::InvalidConfig(format!("{key}: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_kernel() {
        let c = ExperimentConfig::parse_str("eps = 0.1\nkernel = soot\n").unwrap();
        assert_eq!(c.kernel, KernelFamily::Soot);
        assert_eq!(c.lambda, 2.1);
        assert_eq!(c.eps, 0.1);
        let d = ExperimentConfig::parse_str("kernel = soot").unwrap();
        assert_eq!(d.eps, 0.03);
    }

    #[test]
    fn parses_lists_and_comments() {
        let c = ExperimentConfig::parse_str(
            "# comment\nN = 1e4\nL = 20  # trailing\noutput_times = 1, 2\nt_end = 2\nalgorithm = single\n",
        )
        .unwrap();
        assert_eq!(c.n, 10_000);
        assert_eq!(c.replicates, 20);
        assert_eq!(c.output_times, vec![1.0, 2.0]);
        assert_eq!(c.algorithm, Algorithm::Single);
    }

    #[test]
    fn later_pairs_win() {
        let pairs = [("n", "100"), ("n", "200")];
        assert_eq!(ExperimentConfig::from_pairs(&pairs).unwrap().n, 200);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "n = 1",
            "eps = -0.1",
            "bogus = 3",
            "no equals sign",
            "output_times = 2, 1",
            "t_end = 1\noutput_times = 2",
            "kernel = soot\nlambda = 0.01",
            "workers = 0",
        ] {
            assert!(ExperimentConfig::parse_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::for_kernel(KernelFamily::Soot);
        c.output_times = vec![0.25, 1.0];
        c.seed = u64::MAX;
        let back = ExperimentConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
