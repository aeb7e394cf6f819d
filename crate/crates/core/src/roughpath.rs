//! Sewing, p-variation, rough paths with Chen-exact second level, controlled
//! paths, rough integration and a Picard solver for rough differential
//! equations.
//!
//! Tensors are stored row-major: a `d×d` level-2 block at `(j,k)` is entry
//! `j*d + k` and stands for `∫ X^j dX^k`.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq)]
pub enum RoughError {
    NotIncreasing,
    TooShort,
    NotAlmostAdditive(f64),
    Dimension { expected: usize, got: usize },
    YoungExponents(f64),
    NotPowerOfTwo(usize),
    PathMismatch,
    NoContraction {
        depth: usize,
        interval: (f64, f64),
        factor: f64,
    },
    NoConvergence {
        interval: (f64, f64),
        iterations: usize,
        distance: f64,
    },
}

impl fmt::Display for RoughError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoughError::NotIncreasing => write!(f, "partition times must be strictly increasing"),
            RoughError::TooShort => write!(f, "partition needs at least two points"),
            RoughError::NotAlmostAdditive(t) => {
                write!(f, "not almost additive enough: exponent {t} <= 1")
            }
            RoughError::Dimension { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            RoughError::YoungExponents(s) => {
                write!(f, "Young integral needs exponent sum > 1, got {s}")
            }
            RoughError::NotPowerOfTwo(n) => write!(f, "step count {n} is not a power of two"),
            RoughError::PathMismatch => write!(f, "controlled path refers to a different rough path"),
            RoughError::NoContraction {
                depth,
                interval,
                factor,
            } => write!(
                f,
                "no contraction on [{}, {}] after subdivision depth {depth} (factor {factor})",
                interval.0, interval.1
            ),
            RoughError::NoConvergence {
                interval,
                iterations,
                distance,
            } => write!(
                f,
                "Picard iteration on [{}, {}] stalled after {iterations} steps at distance {distance}",
                interval.0, interval.1
            ),
        }
    }
}

impl core::error::Error for RoughError {}

/// Strictly increasing sample times.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePartition {
    times: Vec<f64>,
}

impl TimePartition {
    pub fn new(times: Vec<f64>) -> Result<Self, RoughError> {
        if times.len() < 2 {
            return Err(RoughError::TooShort);
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(RoughError::NotIncreasing);
        }
        Ok(TimePartition { times })
    }

    /// `n` equal steps of `[0,1]`.
    pub fn uniform(n: usize) -> Self {
        TimePartition {
            times: (0..=n).map(|i| i as f64 / n as f64).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.times
            .windows(2)
            .fold(0.0, |m, w| m.max(w[1] - w[0]))
    }
}

/// How almost-additivity of a family is gauged.
pub enum Regularity<'a> {
    /// `|δμ_{sut}| <= c |t-s|^θ`.
    Exponent(f64),
    /// `|δμ_{sut}| <= c ω(s,t)^θ` with `ω` evaluated on partition indices.
    Control(f64, &'a dyn Fn(usize, usize) -> f64),
}

impl Regularity<'_> {
    pub fn theta(&self) -> f64 {
        match self {
            Regularity::Exponent(t) | Regularity::Control(t, _) => *t,
        }
    }
}

/// Output of [`sew`].
#[derive(Clone, Debug)]
pub struct Sewn {
    /// `φ` at each partition time, `φ_0 = 0`; each entry has the family's dimension.
    pub values: Vec<Vec<f64>>,
    /// Measured almost-additivity constant `c₁`.
    pub c1: f64,
    /// `c₁ Σ_{k=1}^{n} (2/k)^θ · gauge(0,T)^θ`.
    pub error_bound: f64,
    /// Whether the value was extrapolated from the fine and the every-other-point sums.
    pub extrapolated: bool,
}

impl Sewn {
    pub fn last(&self) -> &[f64] {
        self.values.last().expect("non-empty")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sews a two-index family `μ(i,j)` given on partition indices.
///
/// The path is the Riemann sum of `μ` over the partition. When `θ >= 2` the
/// sum is additionally extrapolated against the sum over every other point,
/// `φ* = φ_f + (φ_f - φ_c)/(2^{θ-1} - 1)`, which removes the leading
/// `mesh^{θ-1}` error term of smooth families.
pub fn sew(
    mu: &dyn Fn(usize, usize) -> Vec<f64>,
    partition: &TimePartition,
    reg: Regularity<'_>,
) -> Result<Sewn, RoughError> {
    let theta = reg.theta();
    if !(theta > 1.0) {
        return Err(RoughError::NotAlmostAdditive(theta));
    }
    let n = partition.steps();
    let t = partition.times();
    let gauge = |i: usize, j: usize| -> f64 {
        match &reg {
            Regularity::Exponent(_) => t[j] - t[i],
            Regularity::Control(_, w) => w(i, j),
        }
    };
    let steps: Vec<Vec<f64>> = (0..n).map(|i| mu(i, i + 1)).collect();
    let m = steps[0].len();
    let fine = cumulative(&steps);
    // almost-additivity constant on nested dyadic triples
    let mut c1: f64 = 0.0;
    let mut len = 2;
    while len <= n {
        let stride = if n / len > 64 { n / len / 64 } else { 1 };
        for i in (0..=n - len).step_by(len * stride) {
            let (u, j) = (i + len / 2, i + len);
            let a = mu(i, j);
            let b = mu(i, u);
            let c = mu(u, j);
            let delta: Vec<f64> = (0..m).map(|k| a[k] - b[k] - c[k]).collect();
            let g = gauge(i, j);
            if g > 0.0 {
                c1 = c1.max(norm(&delta) / g.powf(theta));
            }
        }
        len *= 2;
    }
    let zeta: f64 = (1..=n).map(|k| (2.0 / k as f64).powf(theta)).sum();
    let error_bound = c1 * zeta * gauge(0, n).powf(theta);
    let extrapolate = theta >= 2.0 && n >= 2;
    let values = if extrapolate {
        let factor = 1.0 / ((theta - 1.0).exp2() - 1.0);
        let mut coarse: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        coarse.push(alloc::vec![0.0; m]);
        for k in 1..=n {
            let v = if k % 2 == 0 {
                let base = &coarse[k - 2];
                let s = mu(k - 2, k);
                base.iter().zip(&s).map(|(a, b)| a + b).collect()
            } else {
                let base = &coarse[k - 1];
                base.iter().zip(&steps[k - 1]).map(|(a, b)| a + b).collect()
            };
            coarse.push(v);
        }
        fine.iter()
            .zip(&coarse)
            .map(|(f, c)| f.iter().zip(c).map(|(a, b)| a + (a - b) * factor).collect())
            .collect()
    } else {
        fine
    };
    Ok(Sewn {
        values,
        c1,
        error_bound,
        extrapolated: extrapolate,
    })
}

fn cumulative(steps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = steps[0].len();
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(alloc::vec![0.0; m]);
    for s in steps {
        let last: &Vec<f64> = out.last().unwrap();
        out.push(last.iter().zip(s).map(|(a, b)| a + b).collect());
    }
    out
}

/// Plain Riemann sums `φ^π_{t_k} = Σ_{i<k} μ(i, i+1)`.
pub fn riemann_sums(mu: &dyn Fn(usize, usize) -> Vec<f64>, partition: &TimePartition) -> Vec<Vec<f64>> {
    let steps: Vec<Vec<f64>> = (0..partition.steps()).map(|i| mu(i, i + 1)).collect();
    cumulative(&steps)
}

/// Largest violation of superadditivity `ω(s,u) + ω(u,t) <= ω(s,t)` over
/// `samples` random ordered triples of indices in `0..=n`.
pub fn superadditivity_violation(omega: &dyn Fn(usize, usize) -> f64, n: usize, samples: usize, seed: u64) -> f64 {
    use rand_chacha::rand_core::RngCore;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let mut v = [0usize; 3];
        for x in v.iter_mut() {
            *x = (rng.next_u64() % (n as u64 + 1)) as usize;
        }
        v.sort_unstable();
        worst = worst.max(omega(v[0], v[1]) + omega(v[1], v[2]) - omega(v[0], v[2]));
    }
    worst
}

/// Generic DP for `(sup_π Σ c(t_i, t_{i+1})^q)^{1/q}` over partitions of the
/// index window `[s, t]`. `row(i, out)` must fill `out[j - i - 1] = c(i, j)`
/// for `j = i+1..=t`.
pub fn two_index_variation(window: (usize, usize), q: f64, mut row: impl FnMut(usize, &mut Vec<f64>)) -> f64 {
    let (s, t) = window;
    if t <= s {
        return 0.0;
    }
    let mut v = alloc::vec![f64::NEG_INFINITY; t - s + 1];
    v[0] = 0.0;
    let mut buf = Vec::with_capacity(t - s);
    for i in s..t {
        buf.clear();
        row(i, &mut buf);
        let base = v[i - s];
        for (off, c) in buf.iter().enumerate() {
            let j = i + 1 + off;
            let cand = base + c.powf(q);
            if cand > v[j - s] {
                v[j - s] = cand;
            }
        }
    }
    v[t - s].powf(1.0 / q)
}

/// Exact p-variation over partitions drawn from the sample points of
/// `values` (flattened, `dim` components per point) on the index window.
pub fn p_variation(values: &[f64], dim: usize, p: f64, window: (usize, usize)) -> f64 {
    let (s, t) = window;
    two_index_variation((s, t), p, |i, out| {
        let xi = &values[i * dim..(i + 1) * dim];
        for j in i + 1..=t {
            let xj = &values[j * dim..(j + 1) * dim];
            let mut acc = 0.0;
            for k in 0..dim {
                let d = xj[k] - xi[k];
                acc += d * d;
            }
            out.push(acc.sqrt());
        }
    })
}

/// Sup norm of a flattened path.
pub fn sup_norm(values: &[f64], dim: usize) -> f64 {
    values
        .chunks(dim)
        .fold(0.0, |m, c| m.max(norm(c)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Geometric,
    Ito,
}

/// Level-1 values at sample times plus level-2 blocks on consecutive intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughPath {
    p: f64,
    dim: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    blocks: Vec<f64>,
}

impl RoughPath {
    pub fn new(p: f64, dim: usize, times: Vec<f64>, values: Vec<f64>, blocks: Vec<f64>) -> Result<Self, RoughError> {
        let part = TimePartition::new(times)?;
        let n = part.steps();
        if values.len() != (n + 1) * dim {
            return Err(RoughError::Dimension {
                expected: (n + 1) * dim,
                got: values.len(),
            });
        }
        if blocks.len() != n * dim * dim {
            return Err(RoughError::Dimension {
                expected: n * dim * dim,
                got: blocks.len(),
            });
        }
        Ok(RoughPath {
            p,
            dim,
            times: part.times,
            values,
            blocks,
        })
    }

    /// Canonical lift of the piecewise-linear interpolation of the samples:
    /// `𝕏_{t_i t_{i+1}} = ½ ΔX_i ⊗ ΔX_i`.
    pub fn canonical_lift(times: Vec<f64>, values: Vec<f64>, dim: usize, p: f64) -> Result<Self, RoughError> {
        let n = times.len().saturating_sub(1);
        if values.len() != (n + 1) * dim {
            return Err(RoughError::Dimension {
                expected: (n + 1) * dim,
                got: values.len(),
            });
        }
        let mut blocks = alloc::vec![0.0; n * dim * dim];
        for i in 0..n {
            for j in 0..dim {
                for k in 0..dim {
                    let dj = values[(i + 1) * dim + j] - values[i * dim + j];
                    let dk = values[(i + 1) * dim + k] - values[i * dim + k];
                    blocks[i * dim * dim + j * dim + k] = 0.5 * dj * dk;
                }
            }
        }
        Self::new(p, dim, times, values, blocks)
    }

    /// Brownian motion on a uniform grid of `n` steps with `p = 2.5`.
    pub fn brownian(seed: u64, n: usize, dim: usize, flavor: Flavor) -> Result<Self, RoughError> {
        if !n.is_power_of_two() {
            return Err(RoughError::NotPowerOfTwo(n));
        }
        let times = TimePartition::uniform(n).times;
        let values = brownian_samples(seed, n, dim);
        let mut x = Self::canonical_lift(times, values, dim, 2.5)?;
        if flavor == Flavor::Ito {
            let dt = 1.0 / n as f64;
            for i in 0..n {
                for j in 0..dim {
                    x.blocks[i * dim * dim + j * dim + j] -= 0.5 * dt;
                }
            }
        }
        Ok(x)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Level-2 block on `[t_i, t_{i+1}]`.
    pub fn block(&self, i: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.blocks[i * d2..(i + 1) * d2]
    }

    /// `X_{st} = X_t - X_s` on indices.
    pub fn increment(&self, s: usize, t: usize) -> Vec<f64> {
        self.value(t)
            .iter()
            .zip(self.value(s))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// `𝕏_{st}` by Chen composition of the consecutive blocks.
    pub fn level2(&self, s: usize, t: usize) -> Vec<f64> {
        let d = self.dim;
        let mut acc = alloc::vec![0.0; d * d];
        for i in s..t {
            self.chen_step(&mut acc, s, i);
        }
        acc
    }

    /// `acc = 𝕏_{s,i}` ↦ `𝕏_{s,i+1} = 𝕏_{s,i} + 𝕏_{i,i+1} + X_{s,i} ⊗ X_{i,i+1}`.
    fn chen_step(&self, acc: &mut [f64], s: usize, i: usize) {
        let d = self.dim;
        let blk = self.block(i);
        for j in 0..d {
            let xs = self.values[i * d + j] - self.values[s * d + j];
            for k in 0..d {
                let dx = self.values[(i + 1) * d + k] - self.values[i * d + k];
                acc[j * d + k] += blk[j * d + k] + xs * dx;
            }
        }
    }

    /// `‖X‖_{p,[s,t]}`.
    pub fn level1_variation(&self, window: (usize, usize)) -> f64 {
        p_variation(&self.values, self.dim, self.p, window)
    }

    /// `‖𝕏‖_{p/2,[s,t]}`, composing blocks incrementally per left endpoint.
    pub fn level2_variation(&self, window: (usize, usize)) -> f64 {
        let d = self.dim;
        let (_, t) = window;
        let mut acc = alloc::vec![0.0; d * d];
        two_index_variation(window, self.p / 2.0, |i, out| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for j in i..t {
                self.chen_step(&mut acc, i, j);
                out.push(norm(&acc));
            }
        })
    }

    /// Superadditive control `ω_X(s,t) = ‖X‖_{p,[s,t]}^p + ‖𝕏‖_{p/2,[s,t]}^{p/2}`.
    pub fn control(&self, window: (usize, usize)) -> f64 {
        self.level1_variation(window).powf(self.p) + self.level2_variation(window).powf(self.p / 2.0)
    }

    /// Path restricted to a sub-window of indices.
    pub fn restrict(&self, s: usize, t: usize) -> RoughPath {
        let d = self.dim;
        RoughPath {
            p: self.p,
            dim: d,
            times: self.times[s..=t].to_vec(),
            values: self.values[s * d..(t + 1) * d].to_vec(),
            blocks: self.blocks[s * d * d..t * d * d].to_vec(),
        }
    }
}

/// Brownian samples `B_{i/n}`, `i = 0..=n`, flattened with `dim` components.
pub fn brownian_samples(seed: u64, n: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = (1.0 / n as f64).sqrt();
    let mut values = alloc::vec![0.0; (n + 1) * dim];
    for i in 0..n {
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(i + 1) * dim + j] = values[i * dim + j] + sd * z;
        }
    }
    values
}

/// Path `a` in `ℝ^m` with Gubinelli derivative `a' ∈ ℝ^{m×d}` against a rough path.
#[derive(Clone, Debug)]
pub struct ControlledPath {
    x: Arc<RoughPath>,
    m: usize,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl ControlledPath {
    pub fn new(x: Arc<RoughPath>, m: usize, values: Vec<f64>, derivs: Vec<f64>) -> Result<Self, RoughError> {
        let len = x.times.len();
        if values.len() != len * m {
            return Err(RoughError::Dimension {
                expected: len * m,
                got: values.len(),
            });
        }
        if derivs.len() != len * m * x.dim {
            return Err(RoughError::Dimension {
                expected: len * m * x.dim,
                got: derivs.len(),
            });
        }
        Ok(ControlledPath { x, m, values, derivs })
    }

    /// The rough path's own level-1 values with derivative the identity.
    pub fn identity(x: Arc<RoughPath>) -> Self {
        let d = x.dim;
        let len = x.times.len();
        let mut derivs = alloc::vec![0.0; len * d * d];
        for i in 0..len {
            for j in 0..d {
                derivs[i * d * d + j * d + j] = 1.0;
            }
        }
        let values = x.values.clone();
        ControlledPath { x, m: d, values, derivs }
    }

    pub fn rough_path(&self) -> &Arc<RoughPath> {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.derivs
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn deriv(&self, i: usize) -> &[f64] {
        let w = self.m * self.x.dim;
        &self.derivs[i * w..(i + 1) * w]
    }

    /// `R_{st} = a_t - a_s - a'_s X_{st}`.
    pub fn remainder(&self, s: usize, t: usize, out: &mut [f64]) {
        let d = self.x.dim;
        let xs = self.x.value(s);
        let xt = self.x.value(t);
        let ds = self.deriv(s);
        for i in 0..self.m {
            let mut v = self.values[t * self.m + i] - self.values[s * self.m + i];
            for k in 0..d {
                v -= ds[i * d + k] * (xt[k] - xs[k]);
            }
            out[i] = v;
        }
    }

    pub fn value_variation(&self, window: (usize, usize)) -> f64 {
        p_variation(&self.values, self.m, self.x.p, window)
    }

    pub fn deriv_variation(&self, window: (usize, usize)) -> f64 {
        p_variation(&self.derivs, self.m * self.x.dim, self.x.p, window)
    }

    /// `‖R^a‖_{p/2}` on the window.
    pub fn remainder_variation(&self, window: (usize, usize)) -> f64 {
        let (_, t) = window;
        let mut r = alloc::vec![0.0; self.m];
        two_index_variation(window, self.x.p / 2.0, |i, out| {
            for j in i + 1..=t {
                self.remainder(i, j, &mut r);
                out.push(norm(&r));
            }
        })
    }

    pub fn full(&self) -> (usize, usize) {
        (0, self.x.steps())
    }

    /// `a¹ - a²` as a controlled path (for stability estimates).
    pub fn difference(&self, o: &ControlledPath) -> Result<ControlledPath, RoughError> {
        if self.m != o.m || self.x.times != o.x.times {
            return Err(RoughError::PathMismatch);
        }
        Ok(ControlledPath {
            x: self.x.clone(),
            m: self.m,
            values: self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect(),
            derivs: self.derivs.iter().zip(&o.derivs).map(|(a, b)| a - b).collect(),
        })
    }
}

/// Rough integral with Corollary-25 style remainder diagnostics.
#[derive(Clone, Debug)]
pub struct Integral {
    pub path: ControlledPath,
    /// Measured `‖R^φ‖_{p/2}`.
    pub remainder: f64,
    /// `‖R^a‖_{p/2}‖X‖_p + ‖a'‖_p‖𝕏‖_{p/2} + ‖a'‖_∞‖𝕏‖_{p/2}`.
    pub bound: f64,
}

/// `μ^i_{st} = Σ_k a^{ik}_s X^k_{st} + Σ_{j,k} a'^{ikj}_s 𝕏^{jk}_{st}` on one step.
fn integrand_step(x: &RoughPath, a: &[f64], ad: &[f64], m: usize, i: usize, out: &mut [f64]) {
    let d = x.dim;
    let dx = x.increment(i, i + 1);
    let blk = x.block(i);
    for r in 0..m {
        let mut v = 0.0;
        for k in 0..d {
            v += a[r * d + k] * dx[k];
            for j in 0..d {
                v += ad[(r * d + k) * d + j] * blk[j * d + k];
            }
        }
        out[r] = v;
    }
}

/// `∫ a dX` for an `L(ℝ^d, ℝ^m)`-valued controlled path, stored with `m·d`
/// components (row `i`, column `k` at `i*d + k`). Returns `(φ, φ' = a)`.
pub fn rough_integral(a: &ControlledPath, x: &Arc<RoughPath>) -> Result<Integral, RoughError> {
    if !Arc::ptr_eq(&a.x, x) && *a.x != **x {
        return Err(RoughError::PathMismatch);
    }
    let d = x.dim;
    if a.m % d != 0 {
        return Err(RoughError::Dimension {
            expected: d * (a.m / d + 1),
            got: a.m,
        });
    }
    let m = a.m / d;
    let n = x.steps();
    let mut values = alloc::vec![0.0; (n + 1) * m];
    let mut step = alloc::vec![0.0; m];
    for i in 0..n {
        integrand_step(x, a.value(i), a.deriv(i), m, i, &mut step);
        for r in 0..m {
            values[(i + 1) * m + r] = values[i * m + r] + step[r];
        }
    }
    let path = ControlledPath {
        x: x.clone(),
        m,
        values,
        derivs: a.values.clone(),
    };
    let w = (0, n);
    let xv = x.level1_variation(w);
    let xxv = x.level2_variation(w);
    let bound = a.remainder_variation(w) * xv
        + a.deriv_variation(w) * xxv
        + sup_norm(&a.derivs, a.m * d) * xxv;
    let remainder = path.remainder_variation(w);
    Ok(Integral {
        path,
        remainder,
        bound,
    })
}

/// A `C²` map `ℝ^{in} → ℝ^{out}` given by value, Jacobian (`out × in`) and
/// Hessian (`out × in × in`) callbacks, with a declared `C²` norm.
pub struct SmoothMap<'a> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub f: Box<dyn Fn(&[f64], &mut [f64]) + 'a>,
    pub df: Box<dyn Fn(&[f64], &mut [f64]) + 'a>,
    pub d2f: Box<dyn Fn(&[f64], &mut [f64]) + 'a>,
    pub c2_norm: f64,
}

impl<'a> SmoothMap<'a> {
    /// Linear map `z ↦ A z` with `A` given row-major (`out × in`).
    pub fn linear(a: Vec<f64>, in_dim: usize, out_dim: usize) -> SmoothMap<'a> {
        let a2 = a.clone();
        let c2 = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        SmoothMap {
            in_dim,
            out_dim,
            f: Box::new(move |z, out| {
                for r in 0..out_dim {
                    out[r] = (0..in_dim).map(|c| a[r * in_dim + c] * z[c]).sum();
                }
            }),
            df: Box::new(move |_, out| out.copy_from_slice(&a2)),
            d2f: Box::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
            c2_norm: c2,
        }
    }

    /// Constant map.
    pub fn constant(c: Vec<f64>, in_dim: usize) -> SmoothMap<'a> {
        let out_dim = c.len();
        let c2 = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        SmoothMap {
            in_dim,
            out_dim,
            f: Box::new(move |_, out| out.copy_from_slice(&c)),
            df: Box::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
            d2f: Box::new(|_, out| out.iter_mut().for_each(|v| *v = 0.0)),
            c2_norm: c2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Composition {
    pub path: ControlledPath,
    /// Measured `‖R^{f(a)}‖_{p/2}`.
    pub remainder: f64,
    /// `‖f‖_{C²}(‖R^a‖_{p/2} + ‖a‖_p²)`.
    pub bound: f64,
}

/// `f(a) = (f(a_t), f'(a_t) a'_t)`.
pub fn compose_controlled(f: &SmoothMap<'_>, a: &ControlledPath) -> Result<Composition, RoughError> {
    if f.in_dim != a.m {
        return Err(RoughError::Dimension {
            expected: f.in_dim,
            got: a.m,
        });
    }
    let d = a.x.dim;
    let len = a.x.times.len();
    let (mi, mo) = (f.in_dim, f.out_dim);
    let mut values = alloc::vec![0.0; len * mo];
    let mut derivs = alloc::vec![0.0; len * mo * d];
    let mut jac = alloc::vec![0.0; mo * mi];
    for t in 0..len {
        let z = a.value(t);
        (f.f)(z, &mut values[t * mo..(t + 1) * mo]);
        (f.df)(z, &mut jac);
        let zd = a.deriv(t);
        for r in 0..mo {
            for j in 0..d {
                derivs[t * mo * d + r * d + j] = (0..mi).map(|l| jac[r * mi + l] * zd[l * d + j]).sum();
            }
        }
    }
    let path = ControlledPath {
        x: a.x.clone(),
        m: mo,
        values,
        derivs,
    };
    let w = a.full();
    let av = a.value_variation(w);
    let bound = f.c2_norm * (a.remainder_variation(w) + av * av);
    let remainder = path.remainder_variation(w);
    Ok(Composition {
        path,
        remainder,
        bound,
    })
}

/// Young integral `∫ a db` of scalar paths on a partition with declared
/// Hölder exponents `alpha`, `beta`.
pub fn young_integral(a: &[f64], b: &[f64], partition: &TimePartition, alpha: f64, beta: f64) -> Result<Sewn, RoughError> {
    if alpha + beta <= 1.0 {
        return Err(RoughError::YoungExponents(alpha + beta));
    }
    let n = partition.steps();
    if a.len() != n + 1 || b.len() != n + 1 {
        return Err(RoughError::Dimension {
            expected: n + 1,
            got: a.len().min(b.len()),
        });
    }
    sew(
        &|s, t| alloc::vec![a[s] * (b[t] - b[s])],
        partition,
        Regularity::Exponent(alpha + beta),
    )
}

/// Knobs of the RDE solver.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_depth: usize,
    pub max_iter: usize,
    /// Largest admissible measured contraction factor.
    pub contraction: f64,
    /// Windows longer than this many steps are halved before any Picard
    /// attempt; bounds the quadratic cost of the variation metric.
    pub max_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_depth: 20,
            max_iter: 200,
            contraction: 0.5,
            max_window: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub subintervals: Vec<(f64, f64)>,
    pub picard_iters: Vec<usize>,
    pub contraction_factors: Vec<f64>,
    /// `max |z_t - z_s - f(z_s)X_{st} - (f'f)(z_s)𝕏_{st}| / ω_X(s,t)^{3/p}` over a coarse grid of pairs.
    pub residual_bound: f64,
}

#[derive(Clone, Debug)]
pub struct RdeSolution {
    pub path: ControlledPath,
    pub report: SolveReport,
}

struct Rde<'a, 'b> {
    f: &'a SmoothMap<'b>,
    x: &'a Arc<RoughPath>,
    m: usize,
    d: usize,
}

impl Rde<'_, '_> {
    /// One Picard map on the index window `[s,t]` starting at `z0`; `z` holds
    /// `m` values per point of the window.
    fn picard(&self, s: usize, t: usize, z0: &[f64], z: &[f64], zd: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, d) = (self.m, self.d);
        let len = t - s + 1;
        let mut a = alloc::vec![0.0; m * d];
        let mut jac = alloc::vec![0.0; m * d * m];
        let mut ad = alloc::vec![0.0; m * d * d];
        let mut out = alloc::vec![0.0; len * m];
        let mut outd = alloc::vec![0.0; len * m * d];
        let mut step = alloc::vec![0.0; m];
        out[..m].copy_from_slice(z0);
        for p in 0..len {
            let zp = &z[p * m..(p + 1) * m];
            (self.f.f)(zp, &mut a);
            outd[p * m * d..(p + 1) * m * d].copy_from_slice(&a);
            if p + 1 == len {
                break;
            }
            (self.f.df)(zp, &mut jac);
            let zdp = &zd[p * m * d..(p + 1) * m * d];
            for r in 0..m * d {
                for j in 0..d {
                    ad[r * d + j] = (0..m).map(|l| jac[r * m + l] * zdp[l * d + j]).sum();
                }
            }
            integrand_step(self.x, &a, &ad, m, s + p, &mut step);
            for r in 0..m {
                out[(p + 1) * m + r] = out[p * m + r] + step[r];
            }
        }
        (out, outd)
    }

    /// `max(‖Δz‖_p, ‖Δz'‖_p, ‖ΔR^z‖_{p/2})` on the window.
    fn distance(&self, s: usize, t: usize, z1: &[f64], d1: &[f64], z2: &[f64], d2: &[f64]) -> f64 {
        let (m, d, p) = (self.m, self.d, self.x.p);
        let dz: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| a - b).collect();
        let dd: Vec<f64> = d1.iter().zip(d2).map(|(a, b)| a - b).collect();
        let len = t - s;
        let v1 = p_variation(&dz, m, p, (0, len));
        let v2 = p_variation(&dd, m * d, p, (0, len));
        let mut r = alloc::vec![0.0; m];
        let v3 = two_index_variation((0, len), p / 2.0, |i, out| {
            let xi = self.x.value(s + i);
            for j in i + 1..=len {
                let xj = self.x.value(s + j);
                for c in 0..m {
                    let mut v = dz[j * m + c] - dz[i * m + c];
                    for k in 0..d {
                        v -= dd[i * m * d + c * d + k] * (xj[k] - xi[k]);
                    }
                    r[c] = v;
                }
                out.push(norm(&r));
            }
        });
        v1.max(v2).max(v3)
    }
}

enum Attempt {
    Done {
        z: Vec<f64>,
        zd: Vec<f64>,
        iters: usize,
        factor: f64,
    },
    Split(f64),
}

/// Solves `dz = f(z) dX`, `z_0 = x0`, for `f: ℝ^m → L(ℝ^d, ℝ^m)` given as a
/// map into `ℝ^{m·d}` (row `i`, column `k` at `i*d + k`).
///
/// Works on dyadic index sub-windows, halving any window on which the
/// measured Picard contraction factor exceeds `opts.contraction`.
pub fn solve_rde(f: &SmoothMap<'_>, x0: &[f64], x: &Arc<RoughPath>, opts: SolverOptions) -> Result<RdeSolution, RoughError> {
    let m = x0.len();
    let d = x.dim;
    if f.in_dim != m || f.out_dim != m * d {
        return Err(RoughError::Dimension {
            expected: m * d,
            got: f.out_dim,
        });
    }
    let rde = Rde { f, x, m, d };
    let n = x.steps();
    let mut z = alloc::vec![0.0; (n + 1) * m];
    let mut zd = alloc::vec![0.0; (n + 1) * m * d];
    z[..m].copy_from_slice(x0);
    let mut report = SolveReport {
        subintervals: Vec::new(),
        picard_iters: Vec::new(),
        contraction_factors: Vec::new(),
        residual_bound: 0.0,
    };
    // stack of (start, end, depth), processed left to right
    let mut stack = alloc::vec![(0usize, n, 0usize)];
    while let Some((s, t, depth)) = stack.pop() {
        if t - s > opts.max_window.max(1) {
            let mid = s + (t - s) / 2;
            stack.push((mid, t, depth));
            stack.push((s, mid, depth));
            continue;
        }
        let z0 = z[s * m..(s + 1) * m].to_vec();
        match attempt(&rde, s, t, &z0, opts)? {
            Attempt::Done {
                z: zs,
                zd: zds,
                iters,
                factor,
            } => {
                z[s * m..(t + 1) * m].copy_from_slice(&zs);
                zd[s * m * d..(t + 1) * m * d].copy_from_slice(&zds);
                report.subintervals.push((x.times[s], x.times[t]));
                report.picard_iters.push(iters);
                report.contraction_factors.push(factor);
            }
            Attempt::Split(factor) => {
                if depth >= opts.max_depth || t - s < 2 {
                    return Err(RoughError::NoContraction {
                        depth,
                        interval: (x.times[s], x.times[t]),
                        factor,
                    });
                }
                let mid = s + (t - s) / 2;
                stack.push((mid, t, depth + 1));
                stack.push((s, mid, depth + 1));
            }
        }
    }
    let path = ControlledPath {
        x: x.clone(),
        m,
        values: z,
        derivs: zd,
    };
    report.residual_bound = local_expansion_residual(&rde, &path);
    Ok(RdeSolution { path, report })
}

fn attempt(rde: &Rde<'_, '_>, s: usize, t: usize, z0: &[f64], opts: SolverOptions) -> Result<Attempt, RoughError> {
    let (m, d) = (rde.m, rde.d);
    let len = t - s + 1;
    let mut a0 = alloc::vec![0.0; m * d];
    (rde.f.f)(z0, &mut a0);
    let mut z: Vec<f64> = (0..len).flat_map(|_| z0.iter().copied()).collect();
    let mut zd: Vec<f64> = (0..len).flat_map(|_| a0.iter().copied()).collect();
    // The derivative output of 𝕀 is f of the input path, so it lags the
    // path component by one iteration; contraction is measured on 𝕀∘𝕀 as
    // the per-step rate sqrt(d_{k+1} / d_{k-1}).
    let mut hist: Vec<f64> = Vec::new();
    let mut worst: f64 = 0.0;
    let floor = 1e-13 * (1.0 + norm(z0));
    for it in 1..=opts.max_iter {
        let (nz, nzd) = rde.picard(s, t, z0, &z, &zd);
        let dist = rde.distance(s, t, &nz, &nzd, &z, &zd);
        z = nz;
        zd = nzd;
        if hist.len() >= 2 {
            let before = hist[hist.len() - 2];
            if before > floor {
                let factor = (dist / before).sqrt();
                worst = worst.max(factor);
                if factor > opts.contraction {
                    return Ok(Attempt::Split(factor));
                }
            }
        }
        if dist <= opts.tol {
            return Ok(Attempt::Done {
                z,
                zd,
                iters: it,
                factor: worst,
            });
        }
        hist.push(dist);
    }
    Err(RoughError::NoConvergence {
        interval: (rde.x.times[s], rde.x.times[t]),
        iterations: opts.max_iter,
        distance: hist.last().copied().unwrap_or(f64::NAN),
    })
}

fn local_expansion_residual(rde: &Rde<'_, '_>, z: &ControlledPath) -> f64 {
    let (m, d) = (rde.m, rde.d);
    let x = rde.x;
    let n = x.steps();
    let stride = (n / 32).max(1);
    let pts: Vec<usize> = (0..=n).step_by(stride).collect();
    // control on the coarse grid of the solution's driver
    let coarse_vals: Vec<f64> = pts.iter().flat_map(|&i| x.value(i).iter().copied()).collect();
    let mut a = alloc::vec![0.0; m * d];
    let mut jac = alloc::vec![0.0; m * d * m];
    let mut ad = alloc::vec![0.0; m * d * d];
    let mut worst: f64 = 0.0;
    for (ci, &s) in pts.iter().enumerate() {
        let zs = z.value(s);
        (rde.f.f)(zs, &mut a);
        (rde.f.df)(zs, &mut jac);
        let zds = z.deriv(s);
        for r in 0..m * d {
            for j in 0..d {
                ad[r * d + j] = (0..m).map(|l| jac[r * m + l] * zds[l * d + j]).sum();
            }
        }
        for (cj, &t) in pts.iter().enumerate().skip(ci + 1) {
            let dx = x.increment(s, t);
            let xx = x.level2(s, t);
            let mut res = alloc::vec![0.0; m];
            for r in 0..m {
                let mut v = z.value(t)[r] - zs[r];
                for k in 0..d {
                    v -= a[r * d + k] * dx[k];
                    for j in 0..d {
                        v -= ad[(r * d + k) * d + j] * xx[j * d + k];
                    }
                }
                res[r] = v;
            }
            let w1 = p_variation(&coarse_vals, d, x.p, (ci, cj));
            let w = w1.powf(x.p) + norm(&xx).powf(x.p / 2.0);
            if w > 0.0 {
                worst = worst.max(norm(&res) / w.powf(3.0 / x.p));
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_validation() {
        assert!(TimePartition::new(alloc::vec![0.0]).is_err());
        assert!(TimePartition::new(alloc::vec![0.0, 0.5, 0.5]).is_err());
        assert_eq!(TimePartition::uniform(4).steps(), 4);
    }

    #[test]
    fn sew_additive_and_quadratic() {
        let p = TimePartition::uniform(64);
        let t = p.times().to_vec();
        let s = sew(&|i, j| alloc::vec![t[j] - t[i]], &p, Regularity::Exponent(2.0)).unwrap();
        for (k, v) in s.values.iter().enumerate() {
            assert!((v[0] - t[k]).abs() < 1e-14);
        }
        let q = sew(
            &|i, j| alloc::vec![(t[j] - t[i]) * (t[j] - t[i])],
            &p,
            Regularity::Exponent(2.0),
        )
        .unwrap();
        assert!(q.last()[0].abs() <= p.mesh());
        assert!(sew(&|_, _| alloc::vec![0.0], &p, Regularity::Exponent(1.0)).is_err());
    }

    #[test]
    fn monotone_variation_is_increment() {
        let v: Vec<f64> = (0..20).map(|i| (i * i) as f64).collect();
        assert!((p_variation(&v, 1, 1.0, (0, 19)) - 361.0).abs() < 1e-12);
        assert_eq!(p_variation(&v, 1, 2.0, (5, 5)), 0.0);
    }

    #[test]
    fn level2_linear_path() {
        let n = 8;
        let times = TimePartition::uniform(n).times().to_vec();
        let vals: Vec<f64> = times.iter().flat_map(|&t| [2.0 * t, -t]).collect();
        let x = RoughPath::canonical_lift(times.clone(), vals, 2, 2.5).unwrap();
        let v = [2.0, -1.0];
        let xx = x.level2(1, 6);
        let dt = times[6] - times[1];
        for j in 0..2 {
            for k in 0..2 {
                assert!((xx[j * 2 + k] - 0.5 * dt * dt * v[j] * v[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn ito_geometric_diagonal_gap() {
        let g = RoughPath::brownian(4, 64, 2, Flavor::Geometric).unwrap();
        let i = RoughPath::brownian(4, 64, 2, Flavor::Ito).unwrap();
        let a = g.level2(0, 64);
        let b = i.level2(0, 64);
        assert!((a[0] - b[0] - 0.5).abs() < 1e-12);
        assert!((a[3] - b[3] - 0.5).abs() < 1e-12);
        assert!((a[1] - b[1]).abs() < 1e-15);
        assert!(RoughPath::brownian(4, 60, 1, Flavor::Ito).is_err());
    }
}
