//! Deterministic reference solutions.
//!
//! [`integrate_smoluchowski`] integrates the truncated Smoluchowski
//! equation with classic fourth-order Runge–Kutta steps,
//! [`central_difference_ref`] turns two such solutions into a reference
//! sensitivity, and [`integrate_coupled_limit`] integrates the
//! deterministic limit of the labelled triple `(μ⊕, μ⊙, μ⊖)` under Double
//! coupling.
//!
//! All measures are number densities per unit initial particle count.

use crate::ensemble::System;
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec, PerturbedKernels};

/// Number density `μ(x)` on sizes `1..=x_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMeasure {
    values: Vec<f64>,
}

impl DenseMeasure {
    pub fn zeros(x_max: usize) -> Self {
        DenseMeasure {
            values: vec![0.0; x_max],
        }
    }

    /// All mass in size 1 with unit density.
    pub fn monodisperse(x_max: usize) -> Self {
        let mut m = DenseMeasure::zeros(x_max);
        m.values[0] = 1.0;
        m
    }

    /// `values[i]` is the density of size `i + 1`.
    pub fn from_values(values: Vec<f64>) -> Self {
        DenseMeasure { values }
    }

    pub fn x_max(&self) -> usize {
        self.values.len()
    }

    /// Density at `size`; zero outside `1..=x_max`.
    pub fn get(&self, size: usize) -> f64 {
        if size == 0 {
            return 0.0;
        }
        self.values.get(size - 1).copied().unwrap_or(0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (i + 1) as f64 * v)
            .sum()
    }

    pub fn number(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// How mass leaving `1..=x_max` is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailClosure {
    /// Pairs whose merger exceeds `x_max` contribute only loss; the merged
    /// particle is dropped and no longer interacts.
    Drop,
    /// Particles beyond `x_max` are kept as one compartment of number
    /// `N_tail` and mass `M_tail` that interacts as `N_tail` particles of
    /// mass `M_tail / N_tail`. Exact on the retained sizes for kernels
    /// linear in each argument, such as the additive kernel.
    Lumped,
}

/// Treatment of the `⊕x + ⊖x → ⊙x` cleanup in the coupled limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitCleanup {
    /// Integrate the coupled equations exactly as written, without cleanup.
    Omitted,
    /// Apply cleanup after every integrator step, matching the particle
    /// simulation where no size ever holds both `⊕` and `⊖` particles.
    Instant,
}

fn kernel_matrix(n: usize, k: impl Fn(u64, u64) -> f64) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for x in 0..n {
        for y in x..n {
            let v = k(x as u64 + 1, y as u64 + 1);
            m[x * n + y] = v;
            m[y * n + x] = v;
        }
    }
    m
}

// out[x] = Σ_y K(x, y) v(y)
fn apply_kernel(kmat: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (x, o) in out.iter_mut().enumerate() {
        let row = &kmat[x * n..(x + 1) * n];
        *o = row.iter().zip(v).map(|(k, v)| k * v).sum();
    }
}

// out[s] += scale · Σ_{x+y=s} K(x, y) u(x) v(y), for s ≤ n
fn add_merge_gain(kmat: &[f64], u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let n = u.len();
    for s in 2..=n {
        let mut acc = 0.0;
        for x in 1..s {
            let y = s - x;
            acc += kmat[(x - 1) * n + (y - 1)] * u[x - 1] * v[y - 1];
        }
        out[s - 1] += scale * acc;
    }
}

fn check_grid(t_grid: &[f64], h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step h = {h} must be positive"
        )));
    }
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(
            "time grid must be finite and >= 0".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("time grid must be ascending".into()));
    }
    Ok(())
}

const NEGATIVE_TOLERANCE: f64 = -1e-12;

/// RK4 from `t = 0` through every grid time, with steps of at most `h`
/// that land exactly on each grid time. `dense` is the length of the
/// blocks whose index is reported on failure.
fn rk4_series(
    y0: Vec<f64>,
    t_grid: &[f64],
    h: f64,
    dense: usize,
    mut rhs: impl FnMut(&[f64], &mut [f64]),
    mut project: impl FnMut(&mut [f64]),
) -> Result<Vec<Vec<f64>>> {
    check_grid(t_grid, h)?;
    let len = y0.len();
    let mut y = y0;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        let steps = if span > 0.0 {
            (span / h - 1e-9).ceil().max(1.0) as usize
        } else {
            0
        };
        let start = t;
        for step in 0..steps {
            let dt = span / steps as f64;
            rhs(&y, &mut k1);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * dt * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * dt * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..len {
                tmp[i] = y[i] + dt * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..len {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t = start + span * (step + 1) as f64 / steps as f64;
            if let Some((i, &v)) = y
                .iter()
                .enumerate()
                .find(|(_, v)| !(**v >= NEGATIVE_TOLERANCE))
            {
                return Err(Error::StepFailure {
                    time: t,
                    size: i % dense + 1,
                    value: v,
                });
            }
            project(&mut y);
        }
        t = target;
        out.push(y.clone());
    }
    Ok(out)
}

/// Integrates `dμ(x)/dt = ½ Σ_{y+z=x} K(y,z) μ(y) μ(z) − μ(x) Σ_y K(x,y) μ(y)`
/// truncated at `μ0.x_max()` and returns `μ` at each time of `t_grid`.
pub fn integrate_smoluchowski(
    kernel: &KernelSpec,
    mu0: &DenseMeasure,
    t_grid: &[f64],
    h: f64,
    closure: TailClosure,
) -> Result<Vec<DenseMeasure>> {
    let n = mu0.x_max();
    if n == 0 {
        return Err(Error::InvalidArgument("x_max must be >= 1".into()));
    }
    let kmat = kernel_matrix(n, |x, y| kernel.eval(x, y));
    let kernel = *kernel;
    let mut rate = vec![0.0; n];
    let mut y0 = mu0.values.clone();
    if closure == TailClosure::Lumped {
        y0.extend([0.0, 0.0]);
    }
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let u = &y[..n];
        apply_kernel(&kmat, u, &mut rate);
        dy.fill(0.0);
        add_merge_gain(&kmat, u, u, 0.5, &mut dy[..n]);
        if closure == TailClosure::Lumped {
            let (mut gain_n, mut gain_m) = (0.0, 0.0);
            for (s, g) in dy[..n].iter().enumerate() {
                gain_n += g;
                gain_m += (s + 1) as f64 * g;
            }
            let (mut pair_n, mut pair_m) = (0.0, 0.0);
            for x in 0..n {
                pair_n += 0.5 * u[x] * rate[x];
                pair_m += (x + 1) as f64 * u[x] * rate[x];
            }
            let (tail_n, tail_m) = (y[n], y[n + 1]);
            // mergers leaving the retained range
            let mut d_n = pair_n - gain_n;
            let mut d_m = pair_m - gain_m;
            if tail_n > 1e-300 && tail_m > 0.0 {
                // every tail particle is heavier than x_max
                let mean = (tail_m / tail_n).max((n + 1) as f64);
                for x in 0..n {
                    let r = kernel.eval_real((x + 1) as f64, mean) * tail_n * u[x];
                    dy[x] -= r;
                    d_m += (x + 1) as f64 * r;
                }
                d_n -= 0.5 * kernel.eval_real(mean, mean) * tail_n * tail_n;
            }
            dy[n] = d_n;
            dy[n + 1] = d_m;
        }
        for x in 0..n {
            dy[x] -= u[x] * rate[x];
        }
    };
    let series = rk4_series(y0, t_grid, h, n, rhs, |_| {})?;
    Ok(series
        .into_iter()
        .map(|mut v| {
            v.truncate(n);
            DenseMeasure { values: v }
        })
        .collect())
}

/// `(μ^{λ+ε/2}_t(x) − μ^{λ−ε/2}_t(x)) / ε` per time of `t_grid`, indexed
/// `[time][size − 1]`.
#[allow(clippy::too_many_arguments)]
pub fn central_difference_ref(
    family: KernelFamily,
    lambda: f64,
    eps: f64,
    mu0: &DenseMeasure,
    t_grid: &[f64],
    h: f64,
    closure: TailClosure,
) -> Result<Vec<Vec<f64>>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "central difference needs eps > 0, got {eps}"
        )));
    }
    let plus = KernelSpec::new(family, lambda + eps / 2.0)?;
    let minus = KernelSpec::new(family, lambda - eps / 2.0)?;
    let p = integrate_smoluchowski(&plus, mu0, t_grid, h, closure)?;
    let m = integrate_smoluchowski(&minus, mu0, t_grid, h, closure)?;
    Ok(p.iter()
        .zip(&m)
        .map(|(p, m)| {
            p.values
                .iter()
                .zip(&m.values)
                .map(|(a, b)| (a - b) / eps)
                .collect()
        })
        .collect())
}

/// The labelled triple of number densities.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledMeasure {
    pub plus: DenseMeasure,
    pub common: DenseMeasure,
    pub minus: DenseMeasure,
}

impl CoupledMeasure {
    /// Monodisperse start with every particle shared.
    pub fn monodisperse(x_max: usize) -> Self {
        CoupledMeasure {
            plus: DenseMeasure::zeros(x_max),
            common: DenseMeasure::monodisperse(x_max),
            minus: DenseMeasure::zeros(x_max),
        }
    }

    pub fn x_max(&self) -> usize {
        self.common.x_max()
    }

    /// `μ⊙ + μ⊕` or `μ⊙ + μ⊖`.
    pub fn system(&self, system: System) -> DenseMeasure {
        let other = match system {
            System::Plus => &self.plus,
            System::Minus => &self.minus,
        };
        DenseMeasure {
            values: self
                .common
                .values
                .iter()
                .zip(&other.values)
                .map(|(c, o)| c + o)
                .collect(),
        }
    }
}

/// `Σ_{x,z} μ⊕(x) μ⊖(z) min(r⁻, r⁺)` for one common size, where
/// `r⁻ = u_x v_z`, `r⁺ = w_x q_z`, via sorting instead of the double sum.
struct TripleMin {
    keys: Vec<(f64, f64, f64)>,
    prefix_v: Vec<f64>,
    prefix_q: Vec<f64>,
}

impl TripleMin {
    fn new() -> Self {
        TripleMin {
            keys: Vec::new(),
            prefix_v: Vec::new(),
            prefix_q: Vec::new(),
        }
    }

    // terms: (u_x, w_x, μ⊕(x)) and (v_z, q_z, μ⊖(z)) with w_x > 0, q_z > 0
    fn eval(&mut self, plus: &[(f64, f64, f64)], minus: &[(f64, f64, f64)]) -> f64 {
        self.keys.clear();
        // r⁻ < r⁺ ⇔ u_x / w_x < q_z / v_z
        self.keys.extend(minus.iter().map(|&(v, q, m)| {
            let key = if v > 0.0 { q / v } else { f64::INFINITY };
            (key, v * m, q * m)
        }));
        self.keys.sort_by(|a, b| a.0.total_cmp(&b.0));
        self.prefix_v.clear();
        self.prefix_q.clear();
        let (mut sv, mut sq) = (0.0, 0.0);
        self.prefix_v.push(0.0);
        self.prefix_q.push(0.0);
        for &(_, v, q) in &self.keys {
            sv += v;
            sq += q;
            self.prefix_v.push(sv);
            self.prefix_q.push(sq);
        }
        let mut total = 0.0;
        for &(u, w, m) in plus {
            let a = u / w;
            let idx = self.keys.partition_point(|k| k.0 <= a);
            // z with key ≤ a take r⁺ = w_x q_z, the rest take r⁻ = u_x v_z
            total += m * (w * self.prefix_q[idx] + u * (sv - self.prefix_v[idx]));
        }
        total
    }
}

/// Right-hand side of the coupled limit system on the packed state
/// `[μ⊕ | μ⊙ | μ⊖]`.
struct CoupledRhs {
    n: usize,
    k_plus: Vec<f64>,
    k_minus: Vec<f64>,
    k_hat: Vec<f64>,
    k_both: Vec<f64>,
    k_max: Vec<f64>,
    d_plus: Vec<f64>,
    d_minus: Vec<f64>,
    scratch: Vec<Vec<f64>>,
    triple: TripleMin,
    plus_terms: Vec<(f64, f64, f64)>,
    minus_terms: Vec<(f64, f64, f64)>,
}

impl CoupledRhs {
    fn new(kernels: &PerturbedKernels, n: usize) -> Self {
        let k_plus = kernel_matrix(n, |x, y| kernels.plus.eval(x, y));
        let k_minus = kernel_matrix(n, |x, y| kernels.minus.eval(x, y));
        let k_hat = kernel_matrix(n, |x, y| kernels.majorant.eval(x, y));
        let zip = |f: fn(f64, f64) -> f64| -> Vec<f64> {
            k_plus
                .iter()
                .zip(&k_minus)
                .map(|(&p, &m)| f(p, m))
                .collect()
        };
        CoupledRhs {
            n,
            k_both: zip(f64::min),
            k_max: zip(f64::max),
            d_plus: zip(|p, m| (p - m).max(0.0)),
            d_minus: zip(|p, m| (m - p).max(0.0)),
            k_plus,
            k_minus,
            k_hat,
            scratch: vec![vec![0.0; n]; 8],
            triple: TripleMin::new(),
            plus_terms: Vec::with_capacity(n),
            minus_terms: Vec::with_capacity(n),
        }
    }

    fn eval(&mut self, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (a, rest) = y.split_at(n);
        let (c, b) = rest.split_at(n);
        let [kmax_c, dm_c, dp_c, kp_c, km_c, p, q, m] = &mut self.scratch[..] else {
            unreachable!()
        };
        apply_kernel(&self.k_max, c, kmax_c);
        apply_kernel(&self.d_minus, c, dm_c);
        apply_kernel(&self.d_plus, c, dp_c);
        apply_kernel(&self.k_plus, c, kp_c);
        apply_kernel(&self.k_minus, c, km_c);
        apply_kernel(&self.k_plus, a, p);
        apply_kernel(&self.k_minus, b, q);

        // triple rate Σ_{x,z} min(r⁻, r⁺) μ⊕(x) μ⊖(z) per common size
        m.fill(0.0);
        if a.iter().any(|&v| v > 0.0) && b.iter().any(|&v| v > 0.0) {
            for (yi, m_y) in m.iter_mut().enumerate() {
                let row = yi * n;
                let t_plus: f64 = (0..n).map(|x| self.k_hat[row + x] * a[x]).sum();
                let t_minus: f64 = (0..n).map(|z| self.k_hat[row + z] * b[z]).sum();
                if !(t_plus > 0.0 && t_minus > 0.0) {
                    continue;
                }
                self.plus_terms.clear();
                self.plus_terms.extend(
                    (0..n)
                        .filter(|&x| a[x] > 0.0)
                        .map(|x| (self.k_hat[row + x] / t_plus, self.k_plus[row + x], a[x])),
                );
                self.minus_terms.clear();
                self.minus_terms.extend(
                    (0..n)
                        .filter(|&z| b[z] > 0.0)
                        .map(|z| (self.k_minus[row + z], self.k_hat[row + z] / t_minus, b[z])),
                );
                *m_y = self.triple.eval(&self.plus_terms, &self.minus_terms);
            }
        }

        dy.fill(0.0);
        let (da, rest) = dy.split_at_mut(n);
        let (dc, db) = rest.split_at_mut(n);
        // ⊙⊙ pairs
        add_merge_gain(&self.k_both, c, c, 0.5, dc);
        add_merge_gain(&self.d_plus, c, c, 0.5, da);
        add_merge_gain(&self.d_minus, c, c, 0.5, db);
        // ⊙ with a singleton partner, merging in one or both systems
        add_merge_gain(&self.k_plus, a, c, 1.0, da);
        add_merge_gain(&self.k_minus, c, b, 1.0, db);
        // singleton pairs
        add_merge_gain(&self.k_plus, a, a, 0.5, da);
        add_merge_gain(&self.k_minus, b, b, 0.5, db);
        for s in 0..n {
            dc[s] -= c[s] * (kmax_c[s] + p[s] + q[s] - m[s]);
            da[s] += c[s] * (dm_c[s] + q[s] - m[s]) - a[s] * (kp_c[s] + p[s]);
            db[s] += c[s] * (dp_c[s] + p[s] - m[s]) - b[s] * (km_c[s] + q[s]);
        }
    }
}

fn cleanup_packed(y: &mut [f64], n: usize) {
    for x in 0..n {
        let shared = y[x].min(y[2 * n + x]);
        if shared > 0.0 {
            y[x] -= shared;
            y[2 * n + x] -= shared;
            y[n + x] += shared;
        }
    }
}

/// Integrates the deterministic limit of the Double-coupled triple with
/// `Drop` truncation at `init.x_max()`.
///
/// The two marginals `μ⊙ + μ⊕` and `μ⊙ + μ⊖` follow the truncated
/// Smoluchowski equation with `K⁺` and `K⁻` respectively, in either
/// cleanup mode.
pub fn integrate_coupled_limit(
    kernels: &PerturbedKernels,
    init: &CoupledMeasure,
    t_grid: &[f64],
    h: f64,
    cleanup: LimitCleanup,
) -> Result<Vec<CoupledMeasure>> {
    let n = init.x_max();
    if init.plus.x_max() != n || init.minus.x_max() != n || n == 0 {
        return Err(Error::ShapeMismatch(
            "coupled measures must share a positive x_max".into(),
        ));
    }
    let mut y0 = Vec::with_capacity(3 * n);
    y0.extend_from_slice(init.plus.values());
    y0.extend_from_slice(init.common.values());
    y0.extend_from_slice(init.minus.values());
    let mut rhs = CoupledRhs::new(kernels, n);
    let series = rk4_series(
        y0,
        t_grid,
        h,
        n,
        |y, dy| rhs.eval(y, dy),
        |y| {
            if cleanup == LimitCleanup::Instant {
                cleanup_packed(y, n)
            }
        },
    )?;
    Ok(series
        .into_iter()
        .map(|v| CoupledMeasure {
            plus: DenseMeasure::from_values(v[..n].to_vec()),
            common: DenseMeasure::from_values(v[n..2 * n].to_vec()),
            minus: DenseMeasure::from_values(v[2 * n..].to_vec()),
        })
        .collect())
}
