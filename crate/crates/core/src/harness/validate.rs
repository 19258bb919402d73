//! Invariant suites behind the `validate` command.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};

use crate::config::ExperimentConfig;
use crate::coupling::{
    coagulating_pair, effective_rates_double, effective_rates_single, step_double, step_single,
    Algorithm, EffectiveRate, SimRng,
};
use crate::ensemble::{CoupledState, Label, ParticleId, System};
use crate::error::Result;
use crate::kernel::{FactorizedMajorant, Mass, PerturbedKernels};
use crate::oracle::{
    integrate_coupled_limit, integrate_smoluchowski, CoupledMeasure, LimitCleanup, TailClosure,
};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random state of at most `max_particles` particles with masses
/// `1..=max_mass` and random labels, cleaned up.
pub fn random_state<R: Rng + ?Sized>(
    rng: &mut R,
    majorant: &FactorizedMajorant,
    max_particles: usize,
    max_mass: Mass,
) -> Result<CoupledState> {
    let count = rng.random_range(1..=max_particles);
    let particles: Vec<(Mass, Label)> = (0..count)
        .map(|_| {
            let m = rng.random_range(1..=max_mass);
            (m, Label::ALL[rng.random_range(0..3)])
        })
        .collect();
    let mut state = CoupledState::from_particles(count as u64, majorant, &particles)?;
    let masses: Vec<Mass> = (1..=max_mass).collect();
    state.cleanup(&masses);
    Ok(state)
}

/// Largest relative deviation between summed effective rates and
/// `K^±(a, b) / N` over every pair of particles in each system.
pub fn marginal_discrepancy(
    state: &CoupledState,
    kernels: &PerturbedKernels,
    rates: &[EffectiveRate],
) -> f64 {
    let mut worst: f64 = 0.0;
    for system in [System::Plus, System::Minus] {
        let mut summed: HashMap<(ParticleId, ParticleId), f64> = HashMap::new();
        for r in rates {
            if let Some(pair) = coagulating_pair(&r.event, system) {
                *summed.entry(pair).or_default() += r.rate;
            }
        }
        let kernel = match system {
            System::Plus => &kernels.plus,
            System::Minus => &kernels.minus,
        };
        let members: Vec<ParticleId> = system
            .labels()
            .iter()
            .flat_map(|&l| (0..state.count(l)).map(move |i| ParticleId::new(l, i)))
            .collect();
        let n = state.scale() as f64;
        let mut expected_pairs = 0;
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                expected_pairs += 1;
                let key = if (a.label, a.index) <= (b.label, b.index) {
                    (a, b)
                } else {
                    (b, a)
                };
                let want = kernel.eval(state.mass(a), state.mass(b)) / n;
                let got = summed.get(&key).copied().unwrap_or(0.0);
                let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
                worst = worst.max(if want == 0.0 { got.abs() } else { rel });
            }
        }
        if summed.len() > expected_pairs {
            return f64::INFINITY;
        }
    }
    worst
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn marginal_rates(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let kernels = config.kernels()?;
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let state = random_state(&mut rng, &kernels.majorant, 8, 6)?;
        for rates in [
            effective_rates_single(&state, &kernels),
            effective_rates_double(&state, &kernels),
        ] {
            worst = worst.max(marginal_discrepancy(&state, &kernels, &rates));
        }
    }
    Ok(check(
        "marginal-rates",
        worst <= 1e-12,
        format!("max relative deviation {worst:.3e} over 100 states"),
    ))
}

fn zero_eps(config: &ExperimentConfig) -> Result<CoupledState> {
    let kernels = PerturbedKernels::new(config.kernel, config.lambda, 0.0)?;
    CoupledState::monodisperse(config.n.min(1000), &kernels.majorant)
}

fn degeneracy(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let kernels = PerturbedKernels::new(config.kernel, config.lambda, 0.0)?;
    let mut violations = 0;
    for alg in [Algorithm::Single, Algorithm::Double] {
        let mut state = zero_eps(config)?;
        let mut rng = SimRng::seed_from_u64(config.seed);
        while state.time() < config.t_end && state.count(Label::Common) >= 2 {
            match alg {
                Algorithm::Single => step_single(&mut state, &kernels, &mut rng),
                _ => step_double(&mut state, &kernels, &mut rng),
            };
            if state.count(Label::Plus) + state.count(Label::Minus) > 0
                || state.snapshot(System::Plus).counts != state.snapshot(System::Minus).counts
            {
                violations += 1;
            }
        }
    }
    Ok(check(
        "zero-eps-degeneracy",
        violations == 0,
        format!("{violations} steps with a singleton particle at eps = 0"),
    ))
}

fn conservation(config: &ExperimentConfig, events: u64) -> Result<CheckOutcome> {
    let kernels = config.kernels()?;
    let mut rng = SimRng::seed_from_u64(config.seed ^ 0x5EED);
    let mut done = 0;
    let mut failure = None;
    'outer: while done < events {
        for alg in [Algorithm::Single, Algorithm::Double] {
            let n = config.n.min(2000);
            let mut state = CoupledState::monodisperse(n, &kernels.majorant)?;
            while state.system_count(System::Plus) >= 2 || state.system_count(System::Minus) >= 2 {
                match alg {
                    Algorithm::Single => step_single(&mut state, &kernels, &mut rng),
                    _ => step_double(&mut state, &kernels, &mut rng),
                };
                done += 1;
                let masses = (
                    state.total_mass(System::Plus),
                    state.total_mass(System::Minus),
                );
                if masses != (n, n) {
                    failure = Some(format!("{alg}: masses {masses:?} after {done} events"));
                    break 'outer;
                }
                if let Err(e) = state.check_invariants(1e-9) {
                    failure = Some(format!("{alg}: {e}"));
                    break 'outer;
                }
                if done >= events {
                    break 'outer;
                }
            }
        }
    }
    Ok(match failure {
        Some(f) => check("conservation-cleanup", false, f),
        None => check(
            "conservation-cleanup",
            true,
            format!("{done} events with exact mass and clean labels"),
        ),
    })
}

fn limit_identity(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let kernels = config.kernels()?;
    let x_max = 64;
    let grid = [0.5, 1.0];
    let h = 1e-2;
    let init = CoupledMeasure::monodisperse(x_max);
    let coupled = integrate_coupled_limit(&kernels, &init, &grid, h, LimitCleanup::Omitted)?;
    let mut worst: f64 = 0.0;
    for (system, kernel) in [
        (System::Plus, &kernels.plus),
        (System::Minus, &kernels.minus),
    ] {
        let plain = integrate_smoluchowski(kernel, &init.common, &grid, h, TailClosure::Drop)?;
        for (c, p) in coupled.iter().zip(&plain) {
            let sum = c.system(system);
            for (a, b) in sum.values().iter().zip(p.values()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(check(
        "coupled-limit-marginals",
        worst <= 1e-8,
        format!("max per-size deviation {worst:.3e}"),
    ))
}

/// Runs every suite for the kernel and parameters of `config`.
pub fn run_validation(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        marginal_rates(config)?,
        degeneracy(config)?,
        conservation(config, 100_000)?,
        limit_identity(config)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let c = ExperimentConfig {
            t_end: 1.0,
            output_times: vec![1.0],
            ..ExperimentConfig::default()
        };
        let report = run_validation(&c).unwrap();
        for r in &report {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn discrepancy_detects_wrong_rates() {
        let k = PerturbedKernels::new(crate::kernel::KernelFamily::Additive, 1.0, 0.06).unwrap();
        let s = CoupledState::monodisperse(3, &k.majorant).unwrap();
        let mut rates = effective_rates_single(&s, &k);
        assert!(marginal_discrepancy(&s, &k, &rates) < 1e-12);
        rates[0].rate *= 1.01;
        assert!(marginal_discrepancy(&s, &k, &rates) > 1e-3);
    }
}
