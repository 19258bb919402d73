//! Fixtures shared by the benchmarks.

use coagsens::coupling::step_double;
use coagsens::{CoupledState, KernelFamily, PerturbedKernels, SimRng, System};
use rand::SeedableRng;

pub fn kernels(family: KernelFamily) -> PerturbedKernels {
    PerturbedKernels::new(family, family.reference_lambda(), family.reference_eps())
        .expect("reference parameters are valid")
}

/// A coupled state started from `n` monomers and run with the double
/// coupling until the `+` system has `n / 2` particles, so that all three
/// labels and a spread of masses are present.
pub fn aged_state(kernels: &PerturbedKernels, n: u64, seed: u64) -> CoupledState {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut state = CoupledState::monodisperse(n, &kernels.majorant).expect("n >= 2");
    while state.system_count(System::Plus) as u64 > n / 2 {
        step_double(&mut state, kernels, &mut rng);
    }
    state
}
