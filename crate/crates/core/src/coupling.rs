//! Event engine for the coupled and independent central-difference algorithms.
//!
//! All three algorithms use majorant thinning: potential coagulations are
//! proposed at the rate of `K̂` and then accepted or turned into fictitious
//! jumps. The coupled algorithms share one uniform between the `+` and `−`
//! decisions so that both systems coagulate together as often as their
//! rates allow.
//!
//! # Random draw order
//!
//! Each coupled step consumes, in order:
//!
//! 1. one uniform for the holding time, `Δt = −ln(1 − U) / ρ̂`;
//! 2. one uniform selecting the pair class in the order
//!    `⊙⊙, ⊙⊕, ⊙⊖, ⊕⊕, ⊖⊖` by cumulative majorant rate;
//! 3. three uniforms for the pair (term, first particle, second particle);
//!    a self-pair ends the step as fictitious;
//! 4. for the Double algorithm on a `⊙⊕`/`⊙⊖` proposal with both singleton
//!    classes populated: one uniform for the first rejection, then two for
//!    the missing partner;
//! 5. one uniform for the accept/reject decision.
//!
//! The independent algorithm runs two uncoupled single-label populations,
//! each from its own stream, using the same order restricted to `⊙⊙`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::ensemble::{
    ClassRates, CoupledState, Event, Label, MeasureSnapshot, PairClass, ParticleId, System,
};
use crate::error::Result;
use crate::kernel::{KernelSpec, Mass, PerturbedKernels};
use crate::seed::mix_seed;

pub use crate::ensemble::EventType;

/// Random-number generator used for every trajectory.
pub type SimRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Independent,
    Single,
    Double,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Independent, Algorithm::Single, Algorithm::Double];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Independent => "independent",
            Algorithm::Single => "single",
            Algorithm::Double => "double",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" | "indep" => Ok(Algorithm::Independent),
            "single" => Ok(Algorithm::Single),
            "double" => Ok(Algorithm::Double),
            other => Err(crate::error::Error::InvalidConfig(format!(
                "unknown algorithm `{other}` (expected independent | single | double)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub event: EventType,
    pub dt: f64,
}

/// `Δt ~ Exp(rate)` by inversion; infinite when `rate` is zero.
pub fn holding_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if rate > 0.0 {
        -(1.0 - u).ln() / rate
    } else {
        f64::INFINITY
    }
}

fn choose_class<R: Rng + ?Sized>(rates: &ClassRates, rng: &mut R) -> PairClass {
    let target = rng.random::<f64>() * rates.total();
    let mut acc = 0.0;
    let mut last = PairClass::Common;
    for class in PairClass::ALL {
        let r = rates.get(class);
        if r > 0.0 {
            acc += r;
            last = class;
            if target < acc {
                return class;
            }
        }
    }
    last
}

/// Outcome probabilities `(1a, 1b, 1c)` of a potential `⊙⊙` coagulation.
pub fn common_pair_split(k_plus: f64, k_minus: f64, k_hat: f64) -> (f64, f64, f64) {
    let both = k_plus.min(k_minus);
    let plus_only = (k_plus - k_minus).max(0.0);
    let minus_only = (k_minus - k_plus).max(0.0);
    (both / k_hat, plus_only / k_hat, minus_only / k_hat)
}

fn common_pair_outcome(k_plus: f64, k_minus: f64, k_hat: f64, u: f64) -> EventType {
    debug_assert!(k_plus <= k_hat * (1.0 + 1e-12) && k_minus <= k_hat * (1.0 + 1e-12));
    let both = k_plus.min(k_minus);
    let delta = (k_plus - k_minus).abs();
    let v = k_hat * u;
    if v <= both {
        EventType::E1a
    } else if v <= both + delta {
        if k_plus > k_minus {
            EventType::E1b
        } else {
            EventType::E1c
        }
    } else {
        EventType::Fictitious
    }
}

/// Outcome probabilities `(2a, 2b, 2c)` of a triple proposal, from the two
/// acceptance probabilities `p_{⊕+⊙}`, `p_{⊖+⊙}`.
pub fn triple_split(p_plus: f64, p_minus: f64) -> (f64, f64, f64) {
    (
        p_plus.min(p_minus),
        (p_plus - p_minus).max(0.0),
        (p_minus - p_plus).max(0.0),
    )
}

#[inline]
fn accept<R: Rng + ?Sized>(k: f64, k_hat: f64, rng: &mut R) -> bool {
    debug_assert!(
        k <= k_hat * (1.0 + 1e-12),
        "majorant violated: {k} > {k_hat}"
    );
    rng.random::<f64>() * k_hat < k
}

fn one_sided<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernels: &PerturbedKernels,
    class: PairClass,
    first: ParticleId,
    second: ParticleId,
    rng: &mut R,
) -> Option<Event> {
    let (x, y) = (state.mass(first), state.mass(second));
    let k_hat = kernels.majorant.eval(x, y);
    let (kernel, event) = match class {
        PairClass::PlusCommon => (
            &kernels.plus,
            Event::PlusCommon {
                plus: second.index,
                common: first.index,
            },
        ),
        PairClass::MinusCommon => (
            &kernels.minus,
            Event::MinusCommon {
                minus: second.index,
                common: first.index,
            },
        ),
        PairClass::PlusPlus => (
            &kernels.plus,
            Event::PlusPlus {
                a: first.index,
                b: second.index,
            },
        ),
        PairClass::MinusMinus => (
            &kernels.minus,
            Event::MinusMinus {
                a: first.index,
                b: second.index,
            },
        ),
        PairClass::Common => unreachable!("common pairs are coupled"),
    };
    accept(kernel.eval(x, y), k_hat, rng).then_some(event)
}

fn common_pair<R: Rng + ?Sized>(
    state: &CoupledState,
    kernels: &PerturbedKernels,
    a: ParticleId,
    b: ParticleId,
    rng: &mut R,
) -> Option<Event> {
    let (x, y) = (state.mass(a), state.mass(b));
    let k_hat = kernels.majorant.eval(x, y);
    let outcome = common_pair_outcome(
        kernels.plus.eval(x, y),
        kernels.minus.eval(x, y),
        k_hat,
        rng.random(),
    );
    let (a, b) = (a.index, b.index);
    match outcome {
        EventType::E1a => Some(Event::CommonBoth { a, b }),
        EventType::E1b => Some(Event::CommonPlusOnly { a, b }),
        EventType::E1c => Some(Event::CommonMinusOnly { a, b }),
        _ => None,
    }
}

fn finish(state: &mut CoupledState, event: Option<Event>) -> EventType {
    match event {
        Some(ev) => {
            let touched = state.apply_event(&ev);
            state.cleanup(touched.as_slice());
            ev.kind()
        }
        None => EventType::Fictitious,
    }
}

/// One Single-coupling jump at the current clock with precomputed rates.
pub fn jump_single<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernels: &PerturbedKernels,
    rates: &ClassRates,
    rng: &mut R,
) -> EventType {
    let class = choose_class(rates, rng);
    let Some((p, q)) = state.sample_pair(class, rng) else {
        return EventType::Fictitious;
    };
    let event = match class {
        PairClass::Common => common_pair(state, kernels, p, q, rng),
        _ => one_sided(state, kernels, class, p, q, rng),
    };
    finish(state, event)
}

/// One Double-coupling jump. `⊙⊕` and `⊙⊖` proposals together form the
/// merged class whose common particle is then matched with a partner
/// from the opposite singleton class.
pub fn jump_double<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernels: &PerturbedKernels,
    rates: &ClassRates,
    rng: &mut R,
) -> EventType {
    let class = choose_class(rates, rng);
    let Some((p, q)) = state.sample_pair(class, rng) else {
        return EventType::Fictitious;
    };
    let event = match class {
        PairClass::Common => common_pair(state, kernels, p, q, rng),
        PairClass::PlusCommon | PairClass::MinusCommon
            if state.count(Label::Plus) > 0 && state.count(Label::Minus) > 0 =>
        {
            triple(state, kernels, p, q, rng)
        }
        _ => one_sided(state, kernels, class, p, q, rng),
    };
    finish(state, event)
}

fn triple<R: Rng + ?Sized>(
    state: &CoupledState,
    kernels: &PerturbedKernels,
    common: ParticleId,
    partner: ParticleId,
    rng: &mut R,
) -> Option<Event> {
    let t_plus = state.partner_rate(common, Label::Plus);
    let t_minus = state.partner_rate(common, Label::Minus);
    let t_max = t_plus.max(t_minus);
    if rng.random::<f64>() * (t_plus + t_minus) >= t_max {
        return None;
    }
    let (plus, minus) = match partner.label {
        Label::Plus => (partner, state.sample_partner(common, Label::Minus, rng)),
        _ => (state.sample_partner(common, Label::Plus, rng), partner),
    };
    let y = state.mass(common);
    let (x, z) = (state.mass(plus), state.mass(minus));
    let p_plus = t_plus * kernels.plus.eval(x, y) / (t_max * kernels.majorant.eval(x, y));
    let p_minus = t_minus * kernels.minus.eval(z, y) / (t_max * kernels.majorant.eval(z, y));
    debug_assert!(p_plus <= 1.0 + 1e-12 && p_minus <= 1.0 + 1e-12);
    let u: f64 = rng.random();
    if u < p_plus.min(p_minus) {
        Some(Event::Triple {
            plus: plus.index,
            common: common.index,
            minus: minus.index,
        })
    } else if u < p_plus.max(p_minus) {
        if p_plus > p_minus {
            Some(Event::PlusCommon {
                plus: plus.index,
                common: common.index,
            })
        } else {
            Some(Event::MinusCommon {
                minus: minus.index,
                common: common.index,
            })
        }
    } else {
        None
    }
}

/// Plain Marcus–Lushnikov jump on a single-label (all `⊙`) population
/// with kernel `kernel`, thinned from the state's majorant.
pub fn jump_plain<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernel: &KernelSpec,
    rates: &ClassRates,
    rng: &mut R,
) -> EventType {
    debug_assert_eq!(rates.total(), rates.common);
    let Some((a, b)) = state.sample_pair(PairClass::Common, rng) else {
        return EventType::Fictitious;
    };
    let (x, y) = (state.mass(a), state.mass(b));
    if accept(kernel.eval(x, y), state.majorant().eval(x, y), rng) {
        finish(
            state,
            Some(Event::CommonBoth {
                a: a.index,
                b: b.index,
            }),
        )
    } else {
        EventType::Fictitious
    }
}

/// Advances the clock by an exponential holding time and performs one
/// Single-coupling jump.
pub fn step_single<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernels: &PerturbedKernels,
    rng: &mut R,
) -> StepOutcome {
    assert!(state.system_count(System::Plus) >= 2 || state.system_count(System::Minus) >= 2);
    let rates = state.class_rates();
    let dt = holding_time(rates.total(), rng);
    state.advance_clock(dt);
    let event = jump_single(state, kernels, &rates, rng);
    StepOutcome { event, dt }
}

/// As [`step_single`] with the Double coupling of the `⊙⊕`/`⊙⊖` classes.
pub fn step_double<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernels: &PerturbedKernels,
    rng: &mut R,
) -> StepOutcome {
    assert!(state.system_count(System::Plus) >= 2 || state.system_count(System::Minus) >= 2);
    let rates = state.class_rates();
    let dt = holding_time(rates.total(), rng);
    state.advance_clock(dt);
    let event = jump_double(state, kernels, &rates, rng);
    StepOutcome { event, dt }
}

/// Plain Marcus–Lushnikov step for the independent algorithm.
pub fn step_plain<R: Rng + ?Sized>(
    state: &mut CoupledState,
    kernel: &KernelSpec,
    rng: &mut R,
) -> StepOutcome {
    assert!(
        state.count(Label::Common) >= 2,
        "need two particles to step"
    );
    let rates = state.class_rates();
    let dt = holding_time(rates.total(), rng);
    state.advance_clock(dt);
    let event = jump_plain(state, kernel, &rates, rng);
    StepOutcome { event, dt }
}

/// An event together with its effective rate in the current state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveRate {
    pub event: Event,
    pub rate: f64,
}

// Probability that the sampler for `class` proposes the ordered pair (a, b),
// from the factor sums the sampler itself uses.
fn ordered_proposal(state: &CoupledState, class: PairClass, a: Mass, b: Mass) -> f64 {
    let (la, lb) = class.labels();
    let terms = state.majorant().terms();
    let total: f64 = (0..terms.len())
        .map(|t| state.f_sum(t, la) * state.g_sum(t, lb))
        .sum();
    let num: f64 = terms.iter().map(|t| t.f.eval(a) * t.g.eval(b)).sum();
    num / total
}

fn same_label_rates(
    state: &CoupledState,
    kernels: &PerturbedKernels,
    rates: &ClassRates,
    out: &mut Vec<EffectiveRate>,
) {
    for class in [
        PairClass::Common,
        PairClass::PlusPlus,
        PairClass::MinusMinus,
    ] {
        let (label, _) = class.labels();
        let masses = state.masses(label);
        let class_rate = rates.get(class);
        for a in 0..masses.len() {
            for b in a + 1..masses.len() {
                let (x, y) = (masses[a], masses[b]);
                let proposal = class_rate
                    * (ordered_proposal(state, class, x, y) + ordered_proposal(state, class, y, x));
                let k_hat = kernels.majorant.eval(x, y);
                match class {
                    PairClass::Common => {
                        let (both, plus, minus) = common_pair_split(
                            kernels.plus.eval(x, y),
                            kernels.minus.eval(x, y),
                            k_hat,
                        );
                        out.push(EffectiveRate {
                            event: Event::CommonBoth { a, b },
                            rate: proposal * both,
                        });
                        out.push(EffectiveRate {
                            event: Event::CommonPlusOnly { a, b },
                            rate: proposal * plus,
                        });
                        out.push(EffectiveRate {
                            event: Event::CommonMinusOnly { a, b },
                            rate: proposal * minus,
                        });
                    }
                    PairClass::PlusPlus => out.push(EffectiveRate {
                        event: Event::PlusPlus { a, b },
                        rate: proposal * kernels.plus.eval(x, y) / k_hat,
                    }),
                    _ => out.push(EffectiveRate {
                        event: Event::MinusMinus { a, b },
                        rate: proposal * kernels.minus.eval(x, y) / k_hat,
                    }),
                }
            }
        }
    }
}

fn cross_one_sided(
    state: &CoupledState,
    kernels: &PerturbedKernels,
    rates: &ClassRates,
    class: PairClass,
    out: &mut Vec<EffectiveRate>,
) {
    let (_, other) = class.labels();
    for (i, &y) in state.masses(Label::Common).iter().enumerate() {
        for (j, &x) in state.masses(other).iter().enumerate() {
            let proposal = rates.get(class) * ordered_proposal(state, class, y, x);
            let k_hat = kernels.majorant.eval(x, y);
            let (event, k) = if other == Label::Plus {
                (
                    Event::PlusCommon { plus: j, common: i },
                    kernels.plus.eval(x, y),
                )
            } else {
                (
                    Event::MinusCommon {
                        minus: j,
                        common: i,
                    },
                    kernels.minus.eval(x, y),
                )
            };
            out.push(EffectiveRate {
                event,
                rate: proposal * k / k_hat,
            });
        }
    }
}

/// Effective rate of every admissible event under Single coupling, derived
/// from the proposal law and the acceptance probabilities.
pub fn effective_rates_single(
    state: &CoupledState,
    kernels: &PerturbedKernels,
) -> Vec<EffectiveRate> {
    let rates = state.class_rates();
    let mut out = Vec::new();
    same_label_rates(state, kernels, &rates, &mut out);
    cross_one_sided(state, kernels, &rates, PairClass::PlusCommon, &mut out);
    cross_one_sided(state, kernels, &rates, PairClass::MinusCommon, &mut out);
    out
}

/// Effective rate of every admissible event under Double coupling.
pub fn effective_rates_double(
    state: &CoupledState,
    kernels: &PerturbedKernels,
) -> Vec<EffectiveRate> {
    let rates = state.class_rates();
    let mut out = Vec::new();
    same_label_rates(state, kernels, &rates, &mut out);
    if state.count(Label::Plus) == 0 || state.count(Label::Minus) == 0 {
        cross_one_sided(state, kernels, &rates, PairClass::PlusCommon, &mut out);
        cross_one_sided(state, kernels, &rates, PairClass::MinusCommon, &mut out);
        return out;
    }
    let terms = state.majorant().terms();
    // probability that sample_partner picks a partner of mass `x` for common mass `y`
    let partner_prob = |y: Mass, x: Mass, t_side: f64| -> f64 {
        terms.iter().map(|t| t.f.eval(y) * t.g.eval(x)).sum::<f64>() / t_side
    };
    for (i, &y) in state.masses(Label::Common).iter().enumerate() {
        let id = ParticleId::new(Label::Common, i);
        let t_plus = state.partner_rate(id, Label::Plus);
        let t_minus = state.partner_rate(id, Label::Minus);
        let t_max = t_plus.max(t_minus);
        let keep = t_max / (t_plus + t_minus);
        for (j, &x) in state.masses(Label::Plus).iter().enumerate() {
            for (k, &z) in state.masses(Label::Minus).iter().enumerate() {
                let via_plus = rates.plus_common
                    * ordered_proposal(state, PairClass::PlusCommon, y, x)
                    * partner_prob(y, z, t_minus);
                let via_minus = rates.minus_common
                    * ordered_proposal(state, PairClass::MinusCommon, y, z)
                    * partner_prob(y, x, t_plus);
                let proposal = (via_plus + via_minus) * keep;
                let p_plus =
                    t_plus * kernels.plus.eval(x, y) / (t_max * kernels.majorant.eval(x, y));
                let p_minus =
                    t_minus * kernels.minus.eval(z, y) / (t_max * kernels.majorant.eval(z, y));
                let (both, plus_only, minus_only) = triple_split(p_plus, p_minus);
                out.push(EffectiveRate {
                    event: Event::Triple {
                        plus: j,
                        common: i,
                        minus: k,
                    },
                    rate: proposal * both,
                });
                out.push(EffectiveRate {
                    event: Event::PlusCommon { plus: j, common: i },
                    rate: proposal * plus_only,
                });
                out.push(EffectiveRate {
                    event: Event::MinusCommon {
                        minus: k,
                        common: i,
                    },
                    rate: proposal * minus_only,
                });
            }
        }
    }
    out
}

/// Pair of particles (unordered, smaller id first) that coagulates in
/// `system` when `event` fires, if any.
pub fn coagulating_pair(event: &Event, system: System) -> Option<(ParticleId, ParticleId)> {
    let c = |i| ParticleId::new(Label::Common, i);
    let p = |i| ParticleId::new(Label::Plus, i);
    let m = |i| ParticleId::new(Label::Minus, i);
    let pair = match (*event, system) {
        (Event::CommonBoth { a, b }, _) => Some((c(a), c(b))),
        (Event::CommonPlusOnly { a, b }, System::Plus) => Some((c(a), c(b))),
        (Event::CommonMinusOnly { a, b }, System::Minus) => Some((c(a), c(b))),
        (Event::Triple { plus, common, .. }, System::Plus) => Some((p(plus), c(common))),
        (Event::Triple { common, minus, .. }, System::Minus) => Some((c(common), m(minus))),
        (Event::PlusCommon { plus, common }, System::Plus) => Some((p(plus), c(common))),
        (Event::MinusCommon { minus, common }, System::Minus) => Some((c(common), m(minus))),
        (Event::PlusPlus { a, b }, System::Plus) => Some((p(a), p(b))),
        (Event::MinusMinus { a, b }, System::Minus) => Some((m(a), m(b))),
        _ => None,
    };
    pair.map(|(u, v)| {
        if (u.label, u.index) <= (v.label, v.index) {
            (u, v)
        } else {
            (v, u)
        }
    })
}

/// Running totals of jumps by type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EventCounts(pub [u64; 9]);

impl EventCounts {
    pub fn record(&mut self, event: EventType) {
        self.0[event.index()] += 1;
    }

    pub fn get(&self, event: EventType) -> u64 {
        self.0[event.index()]
    }

    pub fn add(&mut self, other: &EventCounts) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
    }

    pub fn coagulations(&self) -> u64 {
        self.0[..8].iter().sum()
    }
}

/// State of one trajectory at one output time.
#[derive(Clone, Debug)]
pub struct OutputRecord {
    pub time: f64,
    pub plus: MeasureSnapshot,
    pub minus: MeasureSnapshot,
    /// `(n⊕, n⊙, n⊖)`. For the independent algorithm every particle is a
    /// singleton: `n⊕`/`n⊖` count the `+`/`−` systems and `n⊙ = 0`.
    pub label_counts: [usize; 3],
    pub events: EventCounts,
    /// Wall-clock time spent simulating up to this output time.
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub algorithm: Algorithm,
    pub outputs: Vec<OutputRecord>,
    pub events: EventCounts,
    /// Clock value at which no admissible pair remained, if before `t_end`.
    pub extinct_at: Option<f64>,
    pub elapsed: Duration,
}

struct Recorder<'a> {
    times: &'a [f64],
    next: usize,
    outputs: Vec<OutputRecord>,
}

impl<'a> Recorder<'a> {
    fn new(times: &'a [f64]) -> Self {
        Recorder {
            times,
            next: 0,
            outputs: Vec::with_capacity(times.len()),
        }
    }

    // records every output time strictly before `until`
    fn record_before(&mut self, until: f64, mut snap: impl FnMut(f64) -> OutputRecord) {
        while self.next < self.times.len() && self.times[self.next] < until {
            self.outputs.push(snap(self.times[self.next]));
            self.next += 1;
        }
    }
}

fn coupled_output(
    state: &CoupledState,
    time: f64,
    events: EventCounts,
    elapsed: Duration,
) -> OutputRecord {
    let mut plus = state.snapshot(System::Plus);
    let mut minus = state.snapshot(System::Minus);
    plus.time = time;
    minus.time = time;
    OutputRecord {
        time,
        plus,
        minus,
        label_counts: [
            state.count(Label::Plus),
            state.count(Label::Common),
            state.count(Label::Minus),
        ],
        events,
        elapsed,
    }
}

/// Runs one replicate of the configured algorithm from a monodisperse
/// start. Trajectories are deterministic functions of `(config, seed)`.
///
/// Stepping stops at `t_end` or once neither system has a pair left.
pub fn run_trajectory(config: &ExperimentConfig, seed: u64) -> Result<TrajectoryRecord> {
    let kernels = config.kernels()?;
    match config.algorithm {
        Algorithm::Independent => run_independent(config, &kernels, seed),
        alg => run_coupled(config, &kernels, alg, seed),
    }
}

fn run_coupled(
    config: &ExperimentConfig,
    kernels: &PerturbedKernels,
    algorithm: Algorithm,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut state = CoupledState::monodisperse(config.n, &kernels.majorant)?;
    let mut counts = EventCounts::default();
    let mut rec = Recorder::new(&config.output_times);
    let mut extinct_at = None;
    loop {
        if state.system_count(System::Plus) < 2 && state.system_count(System::Minus) < 2 {
            extinct_at = Some(state.time());
            break;
        }
        let rates = state.class_rates();
        let dt = holding_time(rates.total(), &mut rng);
        let t_new = state.time() + dt;
        rec.record_before(t_new, |t| {
            coupled_output(&state, t, counts, start.elapsed())
        });
        if t_new >= config.t_end {
            break;
        }
        state.advance_clock(dt);
        let event = match algorithm {
            Algorithm::Single => jump_single(&mut state, kernels, &rates, &mut rng),
            _ => jump_double(&mut state, kernels, &rates, &mut rng),
        };
        counts.record(event);
    }
    rec.record_before(f64::INFINITY, |t| {
        coupled_output(&state, t, counts, start.elapsed())
    });
    Ok(TrajectoryRecord {
        algorithm,
        outputs: rec.outputs,
        events: counts,
        extinct_at,
        elapsed: start.elapsed(),
    })
}

struct PlainOutput {
    snapshot: MeasureSnapshot,
    count: usize,
    events: EventCounts,
    elapsed: Duration,
}

fn run_plain(
    config: &ExperimentConfig,
    kernels: &PerturbedKernels,
    kernel: &KernelSpec,
    system: System,
    seed: u64,
) -> Result<(Vec<PlainOutput>, EventCounts, Option<f64>)> {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut state = CoupledState::monodisperse(config.n, &kernels.majorant)?;
    // coagulations in the `+` (`−`) system are ⊕⊕ (⊖⊖) merges
    let merge = match system {
        System::Plus => EventType::E3a,
        System::Minus => EventType::E3b,
    };
    let mut counts = EventCounts::default();
    let times = &config.output_times;
    let mut outputs = Vec::with_capacity(times.len());
    let mut next = 0;
    let mut extinct_at = None;
    let snap = |state: &CoupledState, t: f64, counts: EventCounts, elapsed: Duration| {
        let mut snapshot = state.snapshot(System::Plus);
        snapshot.system = system;
        snapshot.time = t;
        PlainOutput {
            snapshot,
            count: state.count(Label::Common),
            events: counts,
            elapsed,
        }
    };
    loop {
        if state.count(Label::Common) < 2 {
            extinct_at = Some(state.time());
            break;
        }
        let rates = state.class_rates();
        let dt = holding_time(rates.total(), &mut rng);
        let t_new = state.time() + dt;
        while next < times.len() && times[next] < t_new {
            outputs.push(snap(&state, times[next], counts, start.elapsed()));
            next += 1;
        }
        if t_new >= config.t_end {
            break;
        }
        state.advance_clock(dt);
        let event = match jump_plain(&mut state, kernel, &rates, &mut rng) {
            EventType::E1a => merge,
            other => other,
        };
        counts.record(event);
    }
    while next < times.len() {
        outputs.push(snap(&state, times[next], counts, start.elapsed()));
        next += 1;
    }
    Ok((outputs, counts, extinct_at))
}

fn run_independent(
    config: &ExperimentConfig,
    kernels: &PerturbedKernels,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let (plus, plus_counts, plus_extinct) = run_plain(
        config,
        kernels,
        &kernels.plus,
        System::Plus,
        mix_seed(seed, 0),
    )?;
    let (minus, minus_counts, minus_extinct) = run_plain(
        config,
        kernels,
        &kernels.minus,
        System::Minus,
        mix_seed(seed, 1),
    )?;
    let outputs: Vec<OutputRecord> = plus
        .into_iter()
        .zip(minus)
        .map(|(p, m)| {
            let mut events = p.events;
            events.add(&m.events);
            OutputRecord {
                time: p.snapshot.time,
                label_counts: [p.count, 0, m.count],
                plus: p.snapshot,
                minus: m.snapshot,
                events,
                elapsed: p.elapsed + m.elapsed,
            }
        })
        .collect();
    let mut events = plus_counts;
    events.add(&minus_counts);
    let elapsed = outputs.last().map(|o| o.elapsed).unwrap_or_default();
    let extinct_at = match (plus_extinct, minus_extinct) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    Ok(TrajectoryRecord {
        algorithm: Algorithm::Independent,
        outputs,
        events,
        extinct_at,
        elapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn additive(eps: f64) -> PerturbedKernels {
        PerturbedKernels::new(KernelFamily::Additive, 1.0, eps).unwrap()
    }

    #[test]
    fn common_split_regions() {
        // pair (1, 1), λ = 1, ε = 0.06: K⁺ = 2.06, K⁻ = 1.94, K̂ = 2.06
        let k = additive(0.06);
        let (kp, km, kh) = (k.plus.eval(1, 1), k.minus.eval(1, 1), k.majorant.eval(1, 1));
        assert!(
            (kp - 2.06).abs() < 1e-12 && (km - 1.94).abs() < 1e-12 && (kh - 2.06).abs() < 1e-12
        );
        let (a, b, c) = common_pair_split(kp, km, kh);
        assert!((a - 1.94 / 2.06).abs() < 1e-12);
        assert!((b - 0.12 / 2.06).abs() < 1e-12);
        assert_eq!(c, 0.0);
        assert_eq!(common_pair_outcome(kp, km, kh, 0.5), EventType::E1a);
        assert_eq!(common_pair_outcome(kp, km, kh, 1.93 / 2.06), EventType::E1a);
        assert_eq!(common_pair_outcome(kp, km, kh, 1.95 / 2.06), EventType::E1b);
        assert_eq!(common_pair_outcome(kp, km, kh, 0.999_999), EventType::E1b);
    }

    #[test]
    fn no_perturbation_always_couples() {
        let k = additive(0.0);
        let (kp, km, kh) = (k.plus.eval(2, 3), k.minus.eval(2, 3), k.majorant.eval(2, 3));
        for u in [0.0, 0.3, 0.999_999_9] {
            assert_eq!(common_pair_outcome(kp, km, kh, u), EventType::E1a);
        }
        let (_, b, c) = common_pair_split(kp, km, kh);
        assert_eq!((b, c), (0.0, 0.0));
    }

    #[test]
    fn triple_example_values() {
        // state {⊕1, ⊙1, ⊖1}: T̂(+) = T̂(−) = 2.06
        let k = additive(0.06);
        let s = CoupledState::from_particles(
            3,
            &k.majorant,
            &[(1, Label::Plus), (1, Label::Common), (1, Label::Minus)],
        )
        .unwrap();
        let id = ParticleId::new(Label::Common, 0);
        let t_plus = s.partner_rate(id, Label::Plus);
        let t_minus = s.partner_rate(id, Label::Minus);
        assert!((t_plus - 2.06).abs() < 1e-12 && (t_minus - 2.06).abs() < 1e-12);
        let p_plus = t_plus * k.plus.eval(1, 1) / (t_plus.max(t_minus) * k.majorant.eval(1, 1));
        let p_minus = t_minus * k.minus.eval(1, 1) / (t_plus.max(t_minus) * k.majorant.eval(1, 1));
        assert!((p_plus - 1.0).abs() < 1e-12);
        assert!((p_minus - 1.94 / 2.06).abs() < 1e-12);

        let rates = effective_rates_double(&s, &k);
        let rate_of = |want: Event| {
            rates
                .iter()
                .filter(|r| r.event == want)
                .map(|r| r.rate)
                .sum::<f64>()
        };
        // per-state rates are the per-triple values divided by N = 3
        let n = 3.0;
        let both = rate_of(Event::Triple {
            plus: 0,
            common: 0,
            minus: 0,
        });
        assert!((both * n - 1.94).abs() < 1e-12, "{both}");
        let plus_only = rate_of(Event::PlusCommon { plus: 0, common: 0 });
        assert!((plus_only * n - 0.12).abs() < 1e-12);
        assert_eq!(
            rate_of(Event::MinusCommon {
                minus: 0,
                common: 0
            }),
            0.0
        );
        // marginal of (⊕1, ⊙1) in the + system is K⁺(1, 1)
        assert!(((both + plus_only) * n - 2.06).abs() < 1e-12);
    }

    #[test]
    fn single_effective_rates_example() {
        let k = additive(0.06);
        let s = CoupledState::monodisperse(2, &k.majorant).unwrap();
        let rates = effective_rates_single(&s, &k);
        let get = |e: Event| rates.iter().find(|r| r.event == e).unwrap().rate;
        assert!((get(Event::CommonBoth { a: 0, b: 1 }) - 1.94 / 2.0).abs() < 1e-12);
        assert!((get(Event::CommonPlusOnly { a: 0, b: 1 }) - 0.12 / 2.0).abs() < 1e-12);
        assert_eq!(get(Event::CommonMinusOnly { a: 0, b: 1 }), 0.0);
    }

    #[test]
    fn plus_minus_pairs_have_no_entry() {
        let k = additive(0.06);
        let s =
            CoupledState::from_particles(2, &k.majorant, &[(1, Label::Plus), (1, Label::Minus)])
                .unwrap();
        assert!(effective_rates_single(&s, &k).is_empty());
        assert!(effective_rates_double(&s, &k).is_empty());
    }

    #[test]
    fn degenerate_double_class_is_one_sided() {
        // empty ⊖, one ⊕ and one ⊙: acceptance K⁺/K̂ of a 2b attempt
        let k = additive(0.06);
        let s =
            CoupledState::from_particles(2, &k.majorant, &[(1, Label::Plus), (2, Label::Common)])
                .unwrap();
        let rates = effective_rates_double(&s, &k);
        assert_eq!(rates.len(), 1);
        assert_eq!(rates[0].event, Event::PlusCommon { plus: 0, common: 0 });
        assert!((rates[0].rate - k.plus.eval(1, 2) / 2.0).abs() < 1e-12);

        let mut rng = SimRng::seed_from_u64(5);
        let mut accepted = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let mut st = s.clone();
            let r = st.class_rates();
            if jump_double(&mut st, &k, &r, &mut rng) == EventType::E2b {
                accepted += 1;
            }
        }
        // self-pair proposals in the ⊙⊙ and ⊕⊕ classes are fictitious
        let r = s.class_rates();
        let p = r.plus_common / r.total() * k.plus.eval(1, 2) / k.majorant.eval(1, 2);
        assert!(
            (accepted as f64 / trials as f64 - p).abs()
                < 4.0 * (p * (1.0 - p) / trials as f64).sqrt() + 1e-3
        );
    }

    #[test]
    fn steps_preserve_invariants() {
        for alg in [Algorithm::Single, Algorithm::Double] {
            let k = additive(0.2);
            let mut s = CoupledState::monodisperse(200, &k.majorant).unwrap();
            let mut rng = SimRng::seed_from_u64(11);
            while s.system_count(System::Plus) >= 2 && s.system_count(System::Minus) >= 2 {
                match alg {
                    Algorithm::Single => step_single(&mut s, &k, &mut rng),
                    _ => step_double(&mut s, &k, &mut rng),
                };
                assert_eq!(s.total_mass(System::Plus), 200);
                assert_eq!(s.total_mass(System::Minus), 200);
                s.check_invariants(1e-9).unwrap();
            }
        }
    }

    #[test]
    fn algorithm_tokens() {
        assert_eq!("double".parse::<Algorithm>().unwrap(), Algorithm::Double);
        assert_eq!(
            "Independent".parse::<Algorithm>().unwrap(),
            Algorithm::Independent
        );
        assert!("triple".parse::<Algorithm>().is_err());
        assert_eq!(Algorithm::Single.to_string(), "single");
    }
}
