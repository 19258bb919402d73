//! Labeled particle population for a pair of coupled Marcus–Lushnikov systems.
//!
//! A particle carries one of three labels: present only in the `+` system
//! (`⊕`), in both (`⊙`), or only in the `−` system (`⊖`). Each label class
//! keeps its own particle array, a sum tree of the majorant factors
//! `f_α(x)`, `g_α(x)` and `f_α(x) g_α(x)` per particle, and an index from
//! mass to particle positions used by the cleanup step.
//!
//! Particle positions are stable only between mutations: removals
//! swap the last particle of the class into the freed slot.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{FactorizedMajorant, Mass};
use crate::tree::SumTree;

/// Upper bound on majorant terms supported by the population store.
pub const MAX_TERMS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// `⊕`: only in the `+` system.
    Plus,
    /// `⊙`: in both systems.
    Common,
    /// `⊖`: only in the `−` system.
    Minus,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Plus, Label::Common, Label::Minus];

    #[inline]
    fn slot(self) -> usize {
        match self {
            Label::Plus => 0,
            Label::Common => 1,
            Label::Minus => 2,
        }
    }
}

/// One of the two coupled systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum System {
    Plus,
    Minus,
}

impl System {
    /// The two label classes making up this system.
    pub fn labels(self) -> [Label; 2] {
        match self {
            System::Plus => [Label::Common, Label::Plus],
            System::Minus => [Label::Common, Label::Minus],
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Plus => "+",
            System::Minus => "-",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParticleId {
    pub label: Label,
    pub index: usize,
}

impl ParticleId {
    pub fn new(label: Label, index: usize) -> Self {
        ParticleId { label, index }
    }
}

/// Label pattern of a potential coagulation. Cross-class pairs list the
/// `⊙` particle first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairClass {
    /// `⊙ + ⊙` (type 1)
    Common,
    /// `⊙ + ⊕` (type 2b)
    PlusCommon,
    /// `⊙ + ⊖` (type 2c)
    MinusCommon,
    /// `⊕ + ⊕` (type 3a)
    PlusPlus,
    /// `⊖ + ⊖` (type 3b)
    MinusMinus,
}

impl PairClass {
    pub const ALL: [PairClass; 5] = [
        PairClass::Common,
        PairClass::PlusCommon,
        PairClass::MinusCommon,
        PairClass::PlusPlus,
        PairClass::MinusMinus,
    ];

    pub fn labels(self) -> (Label, Label) {
        match self {
            PairClass::Common => (Label::Common, Label::Common),
            PairClass::PlusCommon => (Label::Common, Label::Plus),
            PairClass::MinusCommon => (Label::Common, Label::Minus),
            PairClass::PlusPlus => (Label::Plus, Label::Plus),
            PairClass::MinusMinus => (Label::Minus, Label::Minus),
        }
    }

    pub fn is_same_label(self) -> bool {
        let (a, b) = self.labels();
        a == b
    }
}

/// Majorant rates of potential coagulation per pair class.
///
/// Same-label rates include the diagonal `i = i'`; proposals that draw a
/// particle twice are discarded by [`CoupledState::sample_pair`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassRates {
    pub common: f64,
    pub plus_common: f64,
    pub minus_common: f64,
    pub plus_plus: f64,
    pub minus_minus: f64,
}

impl ClassRates {
    pub fn get(&self, class: PairClass) -> f64 {
        match class {
            PairClass::Common => self.common,
            PairClass::PlusCommon => self.plus_common,
            PairClass::MinusCommon => self.minus_common,
            PairClass::PlusPlus => self.plus_plus,
            PairClass::MinusMinus => self.minus_minus,
        }
    }

    pub fn total(&self) -> f64 {
        self.common + self.plus_common + self.minus_common + self.plus_plus + self.minus_minus
    }
}

/// Kinds of jump, named after the rows of the event table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    /// `⊙x + ⊙y → ⊙(x+y)`
    E1a,
    /// `⊙x + ⊙y → ⊖x + ⊖y + ⊕(x+y)`
    E1b,
    /// `⊙x + ⊙y → ⊕x + ⊕y + ⊖(x+y)`
    E1c,
    /// `⊕x + ⊙y + ⊖z → ⊕(x+y) + ⊖(y+z)`
    E2a,
    /// `⊕x + ⊙y → ⊕(x+y) + ⊖y`
    E2b,
    /// `⊖z + ⊙y → ⊖(y+z) + ⊕y`
    E2c,
    /// `⊕x + ⊕y → ⊕(x+y)`
    E3a,
    /// `⊖x + ⊖y → ⊖(x+y)`
    E3b,
    /// Rejected proposal: only the clock moves.
    Fictitious,
}

impl EventType {
    pub const ALL: [EventType; 9] = [
        EventType::E1a,
        EventType::E1b,
        EventType::E1c,
        EventType::E2a,
        EventType::E2b,
        EventType::E2c,
        EventType::E3a,
        EventType::E3b,
        EventType::Fictitious,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::E1a => "1a",
            EventType::E1b => "1b",
            EventType::E1c => "1c",
            EventType::E2a => "2a",
            EventType::E2b => "2b",
            EventType::E2c => "2c",
            EventType::E3a => "3a",
            EventType::E3b => "3b",
            EventType::Fictitious => "fictitious",
        }
    }
}

/// A concrete jump with the per-label positions of the particles involved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    CommonBoth {
        a: usize,
        b: usize,
    },
    CommonPlusOnly {
        a: usize,
        b: usize,
    },
    CommonMinusOnly {
        a: usize,
        b: usize,
    },
    Triple {
        plus: usize,
        common: usize,
        minus: usize,
    },
    PlusCommon {
        plus: usize,
        common: usize,
    },
    MinusCommon {
        minus: usize,
        common: usize,
    },
    PlusPlus {
        a: usize,
        b: usize,
    },
    MinusMinus {
        a: usize,
        b: usize,
    },
}

impl Event {
    pub fn kind(&self) -> EventType {
        match self {
            Event::CommonBoth { .. } => EventType::E1a,
            Event::CommonPlusOnly { .. } => EventType::E1b,
            Event::CommonMinusOnly { .. } => EventType::E1c,
            Event::Triple { .. } => EventType::E2a,
            Event::PlusCommon { .. } => EventType::E2b,
            Event::MinusCommon { .. } => EventType::E2c,
            Event::PlusPlus { .. } => EventType::E3a,
            Event::MinusMinus { .. } => EventType::E3b,
        }
    }
}

/// Masses involved in or created by one event; input to cleanup.
#[derive(Clone, Debug, Default)]
pub struct TouchedMasses {
    len: usize,
    masses: [Mass; 4],
}

impl TouchedMasses {
    fn push(&mut self, m: Mass) {
        if !self.as_slice().contains(&m) {
            self.masses[self.len] = m;
            self.len += 1;
        }
    }

    pub fn as_slice(&self) -> &[Mass] {
        &self.masses[..self.len]
    }
}

/// Number-density histogram of one system at one time. `μ(x) = count(x) / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSnapshot {
    pub time: f64,
    pub system: System,
    pub scale: u64,
    pub counts: BTreeMap<Mass, u64>,
}

impl MeasureSnapshot {
    pub fn density(&self, mass: Mass) -> f64 {
        self.counts.get(&mass).copied().unwrap_or(0) as f64 / self.scale as f64
    }

    pub fn total_mass(&self) -> u64 {
        self.counts.iter().map(|(m, c)| m * c).sum()
    }

    pub fn particle_count(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Clone, Debug)]
struct LabelClass {
    masses: Vec<Mass>,
    // position of each particle inside its by_mass bucket
    slots: Vec<usize>,
    by_mass: HashMap<Mass, Vec<usize>>,
    tree: SumTree,
}

impl LabelClass {
    fn new(width: usize, capacity: usize) -> Self {
        LabelClass {
            masses: Vec::with_capacity(capacity),
            slots: Vec::with_capacity(capacity),
            by_mass: HashMap::new(),
            tree: SumTree::new(width, capacity),
        }
    }

    fn len(&self) -> usize {
        self.masses.len()
    }

    fn bucket_insert(&mut self, index: usize, mass: Mass) {
        let bucket = self.by_mass.entry(mass).or_default();
        self.slots[index] = bucket.len();
        bucket.push(index);
    }

    fn bucket_remove(&mut self, index: usize, mass: Mass) {
        let slot = self.slots[index];
        let bucket = self.by_mass.get_mut(&mass).expect("size index out of sync");
        debug_assert_eq!(bucket[slot], index);
        bucket.swap_remove(slot);
        if let Some(&moved) = bucket.get(slot) {
            self.slots[moved] = slot;
        }
        if bucket.is_empty() {
            self.by_mass.remove(&mass);
        }
    }

    fn push(&mut self, mass: Mass, row: &[f64]) -> usize {
        let index = self.masses.len();
        self.masses.push(mass);
        self.slots.push(0);
        self.bucket_insert(index, mass);
        self.tree.set(index, row);
        index
    }

    fn remove(&mut self, index: usize) -> Mass {
        let mass = self.masses[index];
        self.bucket_remove(index, mass);
        let last = self.masses.len() - 1;
        if index != last {
            let moved_mass = self.masses[last];
            let moved_slot = self.slots[last];
            self.masses[index] = moved_mass;
            self.slots[index] = moved_slot;
            self.by_mass
                .get_mut(&moved_mass)
                .expect("size index out of sync")[moved_slot] = index;
            self.tree.move_leaf(last, index);
        } else {
            self.tree.clear(last);
        }
        self.masses.pop();
        self.slots.pop();
        mass
    }

    fn set_mass(&mut self, index: usize, mass: Mass, row: &[f64]) {
        let old = self.masses[index];
        self.bucket_remove(index, old);
        self.masses[index] = mass;
        self.bucket_insert(index, mass);
        self.tree.set(index, row);
    }

    fn any_of_mass(&self, mass: Mass) -> Option<usize> {
        self.by_mass.get(&mass).and_then(|b| b.last().copied())
    }
}

/// The coupled population `(μ⊕, μ⊙, μ⊖)` with scale `N` and clock `t`.
#[derive(Clone, Debug)]
pub struct CoupledState {
    classes: [LabelClass; 3],
    majorant: FactorizedMajorant,
    scale: u64,
    time: f64,
}

impl CoupledState {
    /// `N` particles of mass 1, all common to both systems, at `t = 0`.
    pub fn monodisperse(n: u64, majorant: &FactorizedMajorant) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need N ≥ 2 particles, got {n}"
            )));
        }
        let particles = vec![(1, Label::Common); n as usize];
        Self::from_particles(n, majorant, &particles)
    }

    /// Builds a state from explicit `(mass, label)` pairs. No cleanup is
    /// applied; callers wanting the cleanup invariant should pass a state
    /// that already satisfies it or call [`cleanup`](Self::cleanup).
    pub fn from_particles(
        scale: u64,
        majorant: &FactorizedMajorant,
        particles: &[(Mass, Label)],
    ) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidArgument("scale N must be positive".into()));
        }
        let a = majorant.term_count();
        if a == 0 || a > MAX_TERMS {
            return Err(Error::InvalidArgument(format!(
                "majorant must have 1..={MAX_TERMS} terms, got {a}"
            )));
        }
        if let Some((m, _)) = particles.iter().find(|(m, _)| *m == 0) {
            return Err(Error::InvalidArgument(format!(
                "particle mass must be ≥ 1, got {m}"
            )));
        }
        let width = 3 * a;
        let count = |l: Label| particles.iter().filter(|(_, pl)| *pl == l).count();
        let mut state = CoupledState {
            classes: [
                LabelClass::new(width, count(Label::Plus)),
                LabelClass::new(width, count(Label::Common)),
                LabelClass::new(width, count(Label::Minus)),
            ],
            majorant: majorant.clone(),
            scale,
            time: 0.0,
        };
        for &(m, l) in particles {
            state.insert(l, m);
        }
        Ok(state)
    }

    pub fn majorant(&self) -> &FactorizedMajorant {
        &self.majorant
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn advance_clock(&mut self, dt: f64) {
        self.time += dt;
    }

    pub fn count(&self, label: Label) -> usize {
        self.classes[label.slot()].len()
    }

    /// Number of particles in one system.
    pub fn system_count(&self, system: System) -> usize {
        system.labels().iter().map(|&l| self.count(l)).sum()
    }

    pub fn masses(&self, label: Label) -> &[Mass] {
        &self.classes[label.slot()].masses
    }

    #[inline]
    pub fn mass(&self, id: ParticleId) -> Mass {
        self.classes[id.label.slot()].masses[id.index]
    }

    pub fn total_mass(&self, system: System) -> u64 {
        system.labels().iter().flat_map(|&l| self.masses(l)).sum()
    }

    fn terms(&self) -> usize {
        self.majorant.term_count()
    }

    /// `S_f[α, c] = Σ_{i ∈ c} f_α(x_i)`
    #[inline]
    pub fn f_sum(&self, term: usize, label: Label) -> f64 {
        self.classes[label.slot()].tree.total(term)
    }

    /// `S_g[α, c] = Σ_{i ∈ c} g_α(x_i)`
    #[inline]
    pub fn g_sum(&self, term: usize, label: Label) -> f64 {
        self.classes[label.slot()].tree.total(self.terms() + term)
    }

    /// `S_fg[α, c] = Σ_{i ∈ c} f_α(x_i) g_α(x_i)`
    #[inline]
    pub fn fg_sum(&self, term: usize, label: Label) -> f64 {
        self.classes[label.slot()]
            .tree
            .total(2 * self.terms() + term)
    }

    /// `Σ_{i ∈ a, j ∈ b} K̂(x_i, x_j)`, ordered pairs including `i = j`.
    fn pair_sum(&self, a: Label, b: Label) -> f64 {
        (0..self.terms())
            .map(|t| self.f_sum(t, a) * self.g_sum(t, b))
            .sum()
    }

    fn diag_sum(&self, label: Label) -> f64 {
        (0..self.terms()).map(|t| self.fg_sum(t, label)).sum()
    }

    /// Majorant class rates with the diagonal included in same-label sums.
    pub fn class_rates(&self) -> ClassRates {
        let n = self.scale as f64;
        ClassRates {
            common: self.pair_sum(Label::Common, Label::Common) / (2.0 * n),
            plus_common: self.pair_sum(Label::Common, Label::Plus) / n,
            minus_common: self.pair_sum(Label::Common, Label::Minus) / n,
            plus_plus: self.pair_sum(Label::Plus, Label::Plus) / (2.0 * n),
            minus_minus: self.pair_sum(Label::Minus, Label::Minus) / (2.0 * n),
        }
    }

    /// Majorant class rates over distinct pairs only (diagonal removed).
    pub fn exact_class_rates(&self) -> ClassRates {
        let n = self.scale as f64;
        let same = |l: Label| ((self.pair_sum(l, l) - self.diag_sum(l)) / (2.0 * n)).max(0.0);
        ClassRates {
            common: same(Label::Common),
            plus_common: self.pair_sum(Label::Common, Label::Plus) / n,
            minus_common: self.pair_sum(Label::Common, Label::Minus) / n,
            plus_plus: same(Label::Plus),
            minus_minus: same(Label::Minus),
        }
    }

    /// Draws an ordered pair with probability proportional to `K̂(x_i, x_j)`
    /// among pairs of the requested class (diagonal included). Returns
    /// `None` when the same particle is drawn twice.
    ///
    /// Consumes three uniforms: term, first particle, second particle.
    pub fn sample_pair<R: Rng + ?Sized>(
        &self,
        class: PairClass,
        rng: &mut R,
    ) -> Option<(ParticleId, ParticleId)> {
        let (la, lb) = class.labels();
        let a = self.terms();
        let mut weights = [0.0; MAX_TERMS];
        for (t, w) in weights.iter_mut().enumerate().take(a) {
            *w = self.f_sum(t, la) * self.g_sum(t, lb);
        }
        let term = pick_weighted(&weights[..a], rng.random::<f64>());
        let i = self.classes[la.slot()]
            .tree
            .sample(term, rng.random::<f64>());
        let j = self.classes[lb.slot()]
            .tree
            .sample(a + term, rng.random::<f64>());
        assert!(
            i < self.count(la) && j < self.count(lb),
            "sample_pair on an empty class {class:?}"
        );
        if la == lb && i == j {
            None
        } else {
            Some((ParticleId::new(la, i), ParticleId::new(lb, j)))
        }
    }

    /// `T̂(label, id) = Σ_{k ∈ label} K̂(x_k, x_id)`, from factor sums.
    pub fn partner_rate(&self, id: ParticleId, label: Label) -> f64 {
        let a = self.terms();
        let row = self.classes[id.label.slot()].tree.leaf(id.index);
        // K̂(x_k, x_i) = K̂(x_i, x_k) = Σ_α f_α(x_i) g_α(x_k)
        (0..a).map(|t| row[t] * self.g_sum(t, label)).sum()
    }

    /// Draws `k ∈ label` with probability `K̂(x_k, x_id) / T̂(label, id)`.
    /// Consumes two uniforms: term, particle.
    pub fn sample_partner<R: Rng + ?Sized>(
        &self,
        id: ParticleId,
        label: Label,
        rng: &mut R,
    ) -> ParticleId {
        let a = self.terms();
        let row = self.classes[id.label.slot()].tree.leaf(id.index);
        let mut weights = [0.0; MAX_TERMS];
        for (t, w) in weights.iter_mut().enumerate().take(a) {
            *w = row[t] * self.g_sum(t, label);
        }
        let term = pick_weighted(&weights[..a], rng.random::<f64>());
        let k = self.classes[label.slot()]
            .tree
            .sample(a + term, rng.random::<f64>());
        assert!(
            k < self.count(label),
            "sample_partner on empty class {label:?}"
        );
        ParticleId::new(label, k)
    }

    fn factor_row(&self, mass: Mass) -> ([f64; 3 * MAX_TERMS], usize) {
        let a = self.terms();
        let mut row = [0.0; 3 * MAX_TERMS];
        for (t, term) in self.majorant.terms().iter().enumerate() {
            let f = term.f.eval(mass);
            let g = term.g.eval(mass);
            row[t] = f;
            row[a + t] = g;
            row[2 * a + t] = f * g;
        }
        (row, 3 * a)
    }

    fn insert(&mut self, label: Label, mass: Mass) -> usize {
        let (row, w) = self.factor_row(mass);
        self.classes[label.slot()].push(mass, &row[..w])
    }

    fn remove(&mut self, label: Label, index: usize) -> Mass {
        self.classes[label.slot()].remove(index)
    }

    /// Removes two particles of one class; positions refer to the state
    /// before either removal.
    fn remove_two(&mut self, label: Label, a: usize, b: usize) -> (Mass, Mass) {
        assert_ne!(a, b, "event uses the same particle twice");
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        let mhi = self.remove(label, hi);
        let mlo = self.remove(label, lo);
        if a > b {
            (mhi, mlo)
        } else {
            (mlo, mhi)
        }
    }

    fn set_mass(&mut self, label: Label, index: usize, mass: Mass) {
        let (row, w) = self.factor_row(mass);
        self.classes[label.slot()].set_mass(index, mass, &row[..w]);
    }

    /// Applies one jump and returns every mass involved or created.
    ///
    /// Panics if a position is out of range for its label class.
    pub fn apply_event(&mut self, event: &Event) -> TouchedMasses {
        let mut touched = TouchedMasses::default();
        match *event {
            Event::CommonBoth { a, b } => {
                let (x, y) = self.remove_two(Label::Common, a, b);
                self.insert(Label::Common, x + y);
                touched.push(x + y);
            }
            Event::CommonPlusOnly { a, b } => {
                let (x, y) = self.remove_two(Label::Common, a, b);
                self.insert(Label::Minus, x);
                self.insert(Label::Minus, y);
                self.insert(Label::Plus, x + y);
                touched.push(x);
                touched.push(y);
                touched.push(x + y);
            }
            Event::CommonMinusOnly { a, b } => {
                let (x, y) = self.remove_two(Label::Common, a, b);
                self.insert(Label::Plus, x);
                self.insert(Label::Plus, y);
                self.insert(Label::Minus, x + y);
                touched.push(x);
                touched.push(y);
                touched.push(x + y);
            }
            Event::Triple {
                plus,
                common,
                minus,
            } => {
                let x = self.masses(Label::Plus)[plus];
                let z = self.masses(Label::Minus)[minus];
                let y = self.remove(Label::Common, common);
                self.set_mass(Label::Plus, plus, x + y);
                self.set_mass(Label::Minus, minus, y + z);
                touched.push(x + y);
                touched.push(y + z);
            }
            Event::PlusCommon { plus, common } => {
                let x = self.masses(Label::Plus)[plus];
                let y = self.remove(Label::Common, common);
                self.set_mass(Label::Plus, plus, x + y);
                self.insert(Label::Minus, y);
                touched.push(x + y);
                touched.push(y);
            }
            Event::MinusCommon { minus, common } => {
                let z = self.masses(Label::Minus)[minus];
                let y = self.remove(Label::Common, common);
                self.set_mass(Label::Minus, minus, y + z);
                self.insert(Label::Plus, y);
                touched.push(y + z);
                touched.push(y);
            }
            Event::PlusPlus { a, b } => {
                let x = self.masses(Label::Plus)[a];
                let y = self.remove_merge_partner(Label::Plus, a, b);
                let keep = self.position_after_removal(Label::Plus, a, b);
                self.set_mass(Label::Plus, keep, x + y);
                touched.push(x + y);
            }
            Event::MinusMinus { a, b } => {
                let x = self.masses(Label::Minus)[a];
                let y = self.remove_merge_partner(Label::Minus, a, b);
                let keep = self.position_after_removal(Label::Minus, a, b);
                self.set_mass(Label::Minus, keep, x + y);
                touched.push(x + y);
            }
        }
        touched
    }

    fn remove_merge_partner(&mut self, label: Label, a: usize, b: usize) -> Mass {
        assert_ne!(a, b, "event uses the same particle twice");
        self.remove(label, b)
    }

    // After swap-removing position `removed`, the particle formerly at
    // `pos` lives at `removed` if it was the last one.
    fn position_after_removal(&self, label: Label, pos: usize, removed: usize) -> usize {
        if pos == self.count(label) {
            removed
        } else {
            pos
        }
    }

    /// Merges `⊕x + ⊖x → ⊙x` for every touched mass until no mass is held by
    /// both singleton classes.
    pub fn cleanup(&mut self, touched: &[Mass]) -> usize {
        let mut merged = 0;
        for &m in touched {
            loop {
                let p = self.classes[Label::Plus.slot()].any_of_mass(m);
                let q = self.classes[Label::Minus.slot()].any_of_mass(m);
                match (p, q) {
                    (Some(p), Some(q)) => {
                        self.remove(Label::Plus, p);
                        self.remove(Label::Minus, q);
                        self.insert(Label::Common, m);
                        merged += 1;
                    }
                    _ => break,
                }
            }
        }
        merged
    }

    /// Histogram of `⊙ ∪ ⊕` (for `+`) or `⊙ ∪ ⊖` (for `−`).
    pub fn snapshot(&self, system: System) -> MeasureSnapshot {
        let mut counts = BTreeMap::new();
        for label in system.labels() {
            for (&m, bucket) in &self.classes[label.slot()].by_mass {
                *counts.entry(m).or_insert(0) += bucket.len() as u64;
            }
        }
        MeasureSnapshot {
            time: self.time,
            system,
            scale: self.scale,
            counts,
        }
    }

    /// Checks the cleanup invariant, size-index consistency and that stored
    /// factor sums match a fresh recomputation to `rel_tol`.
    pub fn check_invariants(&self, rel_tol: f64) -> std::result::Result<(), String> {
        let plus = &self.classes[Label::Plus.slot()];
        let minus = &self.classes[Label::Minus.slot()];
        if let Some(m) = plus.by_mass.keys().find(|m| minus.by_mass.contains_key(m)) {
            return Err(format!("mass {m} present in both ⊕ and ⊖"));
        }
        for label in Label::ALL {
            let class = &self.classes[label.slot()];
            let indexed: usize = class.by_mass.values().map(Vec::len).sum();
            if indexed != class.len() {
                return Err(format!(
                    "{label:?}: size index holds {indexed} of {}",
                    class.len()
                ));
            }
            for (&m, bucket) in &class.by_mass {
                for (slot, &i) in bucket.iter().enumerate() {
                    if class.masses.get(i) != Some(&m) || class.slots[i] != slot {
                        return Err(format!("{label:?}: size index entry for mass {m} is stale"));
                    }
                }
            }
            let a = self.terms();
            for (t, term) in self.majorant.terms().iter().enumerate() {
                let fresh_f: f64 = class.masses.iter().map(|&x| term.f.eval(x)).sum();
                let fresh_g: f64 = class.masses.iter().map(|&x| term.g.eval(x)).sum();
                let fresh_fg: f64 = class
                    .masses
                    .iter()
                    .map(|&x| term.f.eval(x) * term.g.eval(x))
                    .sum();
                for (stored, fresh, what) in [
                    (class.tree.total(t), fresh_f, "f"),
                    (class.tree.total(a + t), fresh_g, "g"),
                    (class.tree.total(2 * a + t), fresh_fg, "fg"),
                ] {
                    let scale = fresh.abs().max(f64::MIN_POSITIVE);
                    if (stored - fresh).abs() > rel_tol * scale {
                        return Err(format!(
                            "{label:?}: stored {what}-sum of term {t} is {stored}, recomputed {fresh}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Index `α` with `Σ_{β<α} w_β ≤ u·Σw < Σ_{β≤α} w_β`, skipping zero weights.
fn pick_weighted(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = u * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if target < w {
                return i;
            }
            target -= w;
            last_positive = i;
        }
    }
    last_positive
}
