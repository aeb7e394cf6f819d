//! Periodic torus toolkit: grids, fields with cached spectra, sharp
//! Littlewood–Paley blocks, Besov norms, Bony decomposition, heat semigroup,
//! resolvent and white noise.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fft::fft_nd;
use crate::multiindex::{powi, MultiIndex};

#[derive(Clone, Debug, PartialEq)]
pub enum SpectralError {
    BadGrid { dim: usize, n: usize },
    LengthMismatch { expected: usize, got: usize },
    GridMismatch,
    NonPositiveTime(f64),
    ZeroBlock(i32),
}

impl fmt::Display for SpectralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectralError::BadGrid { dim, n } => write!(
                f,
                "invalid grid: dimension {dim} must be 1 or 2 and N = {n} a power of two >= 8"
            ),
            SpectralError::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} samples, got {got}")
            }
            SpectralError::GridMismatch => write!(f, "fields live on different grids"),
            SpectralError::NonPositiveTime(t) => write!(f, "heat time must be positive, got {t}"),
            SpectralError::ZeroBlock(j) => write!(f, "dyadic block {j} is identically zero"),
        }
    }
}

impl core::error::Error for SpectralError {}

/// Uniform grid on `[0,1)^d` with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self, SpectralError> {
        if !(dim == 1 || dim == 2) || n < 8 || !n.is_power_of_two() {
            return Err(SpectralError::BadGrid { dim, n });
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Axis indices of a flat (row-major) index.
    pub fn axes(&self, flat: usize) -> [usize; 2] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            [flat / self.n, flat % self.n]
        }
    }

    pub fn flat(&self, axes: [usize; 2]) -> usize {
        if self.dim == 1 {
            axes[0] % self.n
        } else {
            (axes[0] % self.n) * self.n + axes[1] % self.n
        }
    }

    /// Coordinates of a grid point in `[0,1)^d`; unused slot is 0.
    pub fn coord(&self, flat: usize) -> [f64; 2] {
        let a = self.axes(flat);
        let h = self.spacing();
        [a[0] as f64 * h, a[1] as f64 * h]
    }

    /// Signed periodic displacement `y - x` with components in `(-1/2, 1/2]`.
    pub fn displacement(&self, x: usize, y: usize) -> [f64; 2] {
        let ax = self.axes(x);
        let ay = self.axes(y);
        let n = self.n as i64;
        let mut out = [0.0; 2];
        for i in 0..self.dim {
            let mut k = (ay[i] as i64 - ax[i] as i64).rem_euclid(n);
            if k > n / 2 {
                k -= n;
            }
            out[i] = k as f64 / n as f64;
        }
        out
    }

    /// Euclidean periodic distance.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        let d = self.displacement(x, y);
        (d[0] * d[0] + d[1] * d[1]).sqrt()
    }

    /// Signed integer frequency for an FFT axis index; the Nyquist index maps to `+n/2`.
    pub fn freq(&self, m: usize) -> i64 {
        if m <= self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    /// Wave vector of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [i64; 2] {
        let a = self.axes(flat);
        if self.dim == 1 {
            [self.freq(a[0]), 0]
        } else {
            [self.freq(a[0]), self.freq(a[1])]
        }
    }

    pub fn k2(&self, flat: usize) -> i64 {
        let k = self.wavevector(flat);
        k[0] * k[0] + k[1] * k[1]
    }

    /// Largest dyadic block index that can be nonzero on this grid.
    pub fn max_block(&self) -> i32 {
        let kmax2 = (self.dim * (self.n / 2) * (self.n / 2)) as i64;
        block_of(kmax2)
    }

    /// Largest block whose whole annulus `2^j < |k| <= 2^{j+1}` lies inside the
    /// resolved frequency square; equals [`max_block`](Self::max_block) in 1-d.
    pub fn max_full_block(&self) -> i32 {
        self.n.trailing_zeros() as i32 - 2
    }

    /// Heat-pairing resolution floor `4/N^2`.
    pub fn t_min(&self) -> f64 {
        4.0 / (self.n * self.n) as f64
    }
}

/// Dyadic block containing a frequency of squared norm `k2`:
/// `-1` for `|k| <= 1`, otherwise the `j >= 0` with `2^j < |k| <= 2^{j+1}`.
pub fn block_of(k2: i64) -> i32 {
    if k2 <= 1 {
        return -1;
    }
    let mut j = 0;
    while 4i64.pow(j as u32 + 1) < k2 {
        j += 1;
    }
    j
}

/// Real samples on a torus grid together with their Fourier coefficients.
///
/// The spectrum is normalized so that `u(x) = Σ_k û_k e^{2πi k·x}`, and is
/// stored in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusField {
    grid: TorusGrid,
    samples: Vec<f64>,
    spectrum: Vec<Complex64>,
}

impl TorusField {
    pub fn from_samples(grid: TorusGrid, samples: Vec<f64>) -> Result<Self, SpectralError> {
        if samples.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: samples.len(),
            });
        }
        let mut spec: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        fft_nd(&mut spec, grid.n, grid.dim, -1.0);
        let scale = 1.0 / grid.len() as f64;
        for c in spec.iter_mut() {
            *c *= scale;
        }
        Ok(TorusField {
            grid,
            samples,
            spectrum: spec,
        })
    }

    /// Builds the real field whose spectrum is the Hermitian part of `spec`.
    pub fn from_spectrum(grid: TorusGrid, spec: Vec<Complex64>) -> Result<Self, SpectralError> {
        if spec.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: spec.len(),
            });
        }
        let mut sym = spec.clone();
        for (i, s) in sym.iter_mut().enumerate() {
            let j = neg_index(&grid, i);
            *s = (spec[i] + spec[j].conj()) * 0.5;
        }
        let mut vals = sym.clone();
        fft_nd(&mut vals, grid.n, grid.dim, 1.0);
        let samples = vals.iter().map(|c| c.re).collect();
        Ok(TorusField {
            grid,
            samples,
            spectrum: sym,
        })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let samples = (0..grid.len()).map(|i| f(grid.coord(i))).collect();
        Self::from_samples(grid, samples).expect("length matches grid")
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let mut spectrum = alloc::vec![Complex64::new(0.0, 0.0); grid.len()];
        spectrum[0] = Complex64::new(c, 0.0);
        TorusField {
            grid,
            samples: alloc::vec![c; grid.len()],
            spectrum,
        }
    }

    pub fn zero(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn value(&self, flat: usize) -> f64 {
        self.samples[flat]
    }

    /// Fourier coefficient at an integer frequency (aliased into the grid).
    pub fn coefficient(&self, k: [i64; 2]) -> Complex64 {
        let n = self.grid.n as i64;
        let a = k[0].rem_euclid(n) as usize;
        let b = k[1].rem_euclid(n) as usize;
        self.spectrum[self.grid.flat([a, b])]
    }

    /// Trigonometric interpolant sampled on a grid `factor` times finer per
    /// axis. Nyquist coefficients are split evenly between `±N/2`.
    pub fn upsample(&self, factor: usize) -> Result<TorusField, SpectralError> {
        let fine = TorusGrid::new(self.grid.dim, self.grid.n * factor)?;
        let m = fine.n as i64;
        let half = (self.grid.n / 2) as i64;
        let mut spec = alloc::vec![Complex64::new(0.0, 0.0); fine.len()];
        let alts = |x: i64| -> Vec<i64> {
            if x == half {
                alloc::vec![half, -half]
            } else {
                alloc::vec![x]
            }
        };
        for (i, c) in self.spectrum.iter().enumerate() {
            let k = self.grid.wavevector(i);
            let (a, b) = (alts(k[0]), alts(k[1]));
            let w = 1.0 / (a.len() * b.len()) as f64;
            for ka in &a {
                for kb in &b {
                    let idx = fine.flat([ka.rem_euclid(m) as usize, kb.rem_euclid(m) as usize]);
                    spec[idx] += c * w;
                }
            }
        }
        TorusField::from_spectrum(fine, spec)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `L^p` norm by grid quadrature; `p = ∞` gives the sup norm.
    pub fn lp_norm(&self, p: Exponent) -> f64 {
        let n = self.samples.len() as f64;
        match p {
            Exponent::One => self.samples.iter().map(|v| v.abs()).sum::<f64>() / n,
            Exponent::Two => (self.samples.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            Exponent::Inf => self.max_abs(),
        }
    }

    fn check_grid(&self, o: &TorusField) -> Result<(), SpectralError> {
        if self.grid != o.grid {
            Err(SpectralError::GridMismatch)
        } else {
            Ok(())
        }
    }

    /// `a·self + b·o`, computed in both representations.
    pub fn axpby(&self, a: f64, o: &TorusField, b: f64) -> Result<TorusField, SpectralError> {
        self.check_grid(o)?;
        Ok(TorusField {
            grid: self.grid,
            samples: self
                .samples
                .iter()
                .zip(&o.samples)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            spectrum: self
                .spectrum
                .iter()
                .zip(&o.spectrum)
                .map(|(x, y)| x * a + y * b)
                .collect(),
        })
    }

    pub fn add(&self, o: &TorusField) -> Result<TorusField, SpectralError> {
        self.axpby(1.0, o, 1.0)
    }

    pub fn sub(&self, o: &TorusField) -> Result<TorusField, SpectralError> {
        self.axpby(1.0, o, -1.0)
    }

    pub fn scale(&self, a: f64) -> TorusField {
        TorusField {
            grid: self.grid,
            samples: self.samples.iter().map(|x| a * x).collect(),
            spectrum: self.spectrum.iter().map(|x| x * a).collect(),
        }
    }

    /// Pointwise grid product.
    pub fn mul(&self, o: &TorusField) -> Result<TorusField, SpectralError> {
        self.check_grid(o)?;
        let s = self
            .samples
            .iter()
            .zip(&o.samples)
            .map(|(x, y)| x * y)
            .collect();
        TorusField::from_samples(self.grid, s)
    }

    /// Pointwise map of the samples.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> TorusField {
        let s = self.samples.iter().map(|&x| f(x)).collect();
        TorusField::from_samples(self.grid, s).expect("same length")
    }

    /// Applies a Fourier multiplier `m(k)` and returns the (real part of the) result.
    pub fn apply_multiplier(&self, m: impl Fn([i64; 2]) -> Complex64) -> TorusField {
        let spec = self
            .spectrum
            .iter()
            .enumerate()
            .map(|(i, c)| c * m(self.grid.wavevector(i)))
            .collect();
        TorusField::from_spectrum(self.grid, spec).expect("same length")
    }

    /// Evaluates the real part of `Σ_k m(k) û_k e^{2πik·x}` at one grid point
    /// without a full inverse transform.
    pub fn eval_multiplier_at(&self, m: impl Fn([i64; 2]) -> Complex64, flat: usize) -> f64 {
        let x = self.grid.axes(flat);
        let n = self.grid.n as i64;
        let mut acc = 0.0;
        for (i, c) in self.spectrum.iter().enumerate() {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            let k = self.grid.wavevector(i);
            let phase_idx = (k[0] * x[0] as i64 + k[1] * x[1] as i64).rem_euclid(n);
            let ang = 2.0 * PI * phase_idx as f64 / n as f64;
            let e = Complex64::new(libm::cos(ang), libm::sin(ang));
            acc += (c * m(k) * e).re;
        }
        acc
    }

    /// Spectral derivative `∂^ℓ u`.
    pub fn derivative(&self, l: MultiIndex) -> TorusField {
        if l.is_zero() {
            return self.clone();
        }
        self.apply_multiplier(|k| derivative_symbol(k, l))
    }
}

fn neg_index(grid: &TorusGrid, flat: usize) -> usize {
    let a = grid.axes(flat);
    let n = grid.n;
    grid.flat([(n - a[0]) % n, (n - a[1]) % n])
}

/// Symbol of `∂^ℓ`: `Π_a (2πi k_a)^{ℓ_a}`.
pub fn derivative_symbol(k: [i64; 2], l: MultiIndex) -> Complex64 {
    let mut m = Complex64::new(1.0, 0.0);
    for a in 0..2 {
        for _ in 0..l.0[a] {
            m *= Complex64::new(0.0, 2.0 * PI * k[a] as f64);
        }
    }
    m
}

/// Symbol of `∂^n K` with `K = (1 - Δ)^{-1}`.
pub fn resolvent_symbol(k: [i64; 2], n: MultiIndex) -> Complex64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    derivative_symbol(k, n) / (1.0 + 4.0 * PI * PI * k2)
}

/// Symbol of the heat semigroup `P_t`.
pub fn heat_symbol(k: [i64; 2], t: f64) -> f64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    (-4.0 * PI * PI * k2 * t).exp()
}

/// Integrability index restricted to `{1, 2, ∞}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exponent {
    One,
    Two,
    Inf,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovParams {
    pub r: f64,
    pub p: Exponent,
    pub q: Exponent,
}

impl BesovParams {
    pub fn new(r: f64, p: Exponent, q: Exponent) -> Self {
        BesovParams { r, p, q }
    }

    /// The Hölder–Zygmund scale `B^r_{∞,∞}`.
    pub fn holder(r: f64) -> Self {
        BesovParams::new(r, Exponent::Inf, Exponent::Inf)
    }
}

/// Sharp dyadic block `Δ_j u`. Out-of-range `j` gives the zero field.
pub fn lp_block(u: &TorusField, j: i32) -> TorusField {
    let grid = u.grid;
    let spec = u
        .spectrum
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if block_of(grid.k2(i)) == j {
                *c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    TorusField::from_spectrum(grid, spec).expect("same length")
}

/// All blocks `Δ_{-1} u, …, Δ_J u` with `J = grid.max_block()`.
pub fn lp_blocks(u: &TorusField) -> Vec<TorusField> {
    (-1..=u.grid.max_block()).map(|j| lp_block(u, j)).collect()
}

pub fn besov_norm(u: &TorusField, params: BesovParams) -> f64 {
    let terms: Vec<f64> = (-1..=u.grid.max_block())
        .map(|j| libm::exp2(params.r * j as f64) * lp_block(u, j).lp_norm(params.p))
        .collect();
    match params.q {
        Exponent::Inf => terms.iter().fold(0.0, |m, v| m.max(*v)),
        Exponent::One => terms.iter().sum(),
        Exponent::Two => terms.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// The three pieces of Bony's decomposition of `u·v`.
#[derive(Clone, Debug)]
pub struct BonyParts {
    /// `P_u v = Σ_{i+2 <= j} Δ_i u Δ_j v`.
    pub para_uv: TorusField,
    /// `Π(u,v) = Σ_{|i-j| <= 1} Δ_i u Δ_j v`.
    pub resonant: TorusField,
    /// `P_v u`.
    pub para_vu: TorusField,
}

impl BonyParts {
    pub fn total(&self) -> TorusField {
        self.para_uv
            .add(&self.resonant)
            .and_then(|s| s.add(&self.para_vu))
            .expect("same grid")
    }
}

pub fn bony_decompose(u: &TorusField, v: &TorusField) -> Result<BonyParts, SpectralError> {
    u.check_grid(v)?;
    let bu = lp_blocks(u);
    let bv = lp_blocks(v);
    let len = u.grid.len();
    let nb = bu.len();
    let mut puv = alloc::vec![0.0; len];
    let mut res = alloc::vec![0.0; len];
    let mut pvu = alloc::vec![0.0; len];
    for i in 0..nb {
        for j in 0..nb {
            let target = if i + 2 <= j {
                &mut puv
            } else if j + 2 <= i {
                &mut pvu
            } else {
                &mut res
            };
            let a = &bu[i].samples;
            let b = &bv[j].samples;
            for p in 0..len {
                target[p] += a[p] * b[p];
            }
        }
    }
    Ok(BonyParts {
        para_uv: TorusField::from_samples(u.grid, puv)?,
        resonant: TorusField::from_samples(u.grid, res)?,
        para_vu: TorusField::from_samples(u.grid, pvu)?,
    })
}

/// `P_t u`, multiplying the spectrum by `e^{-4π²|k|²t}`.
pub fn heat_apply(u: &TorusField, t: f64) -> Result<TorusField, SpectralError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SpectralError::NonPositiveTime(t));
    }
    Ok(u.apply_multiplier(|k| Complex64::new(heat_symbol(k, t), 0.0)))
}

/// Semigroup norm `sup_t t^{-r/2}‖P_t u‖_∞` over the given times; returns the
/// value and the maximizing time.
pub fn heat_seminorm(u: &TorusField, r: f64, times: &[f64]) -> Result<(f64, f64), SpectralError> {
    let mut best = (0.0, times.first().copied().unwrap_or(0.0));
    for &t in times {
        let v = t.powf(-r / 2.0) * heat_apply(u, t)?.max_abs();
        if v > best.0 {
            best = (v, t);
        }
    }
    Ok(best)
}

/// `∂^n K u` with `K = (1 - Δ)^{-1}`.
pub fn resolvent_apply(u: &TorusField, n: MultiIndex) -> TorusField {
    u.apply_multiplier(|k| resolvent_symbol(k, n))
}

/// `‖∂^ℓ Δ_j u‖_∞ / (2^{(j+1)|ℓ|} ‖Δ_j u‖_∞)`, sup norms taken on an
/// oversampled grid.
pub fn bernstein_ratio(u: &TorusField, j: i32, l: MultiIndex) -> Result<f64, SpectralError> {
    let b = lp_block(u, j);
    // sup norms of the band-limited functions, not of their grid samples
    let factor = if u.grid.dim == 1 { 8 } else { 4 };
    let base = b.upsample(factor)?.max_abs();
    if base <= 1e-300 {
        return Err(SpectralError::ZeroBlock(j));
    }
    let d = b.derivative(l).upsample(factor)?.max_abs();
    Ok(d / (powi(2.0, (j + 1).max(0) as u32 * l.order()) * base))
}

/// Space white noise: grid samples i.i.d. `N(0, N^d)`, so that pairings with
/// `L²`-orthonormal Fourier modes are standard normal.
pub fn sample_white_noise(grid: TorusGrid, seed: u64) -> TorusField {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sd = (grid.len() as f64).sqrt();
    let samples = (0..grid.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    TorusField::from_samples(grid, samples).expect("length matches grid")
}

/// Sharp spectral cutoff keeping `|k| <= cutoff`.
pub fn lowpass(u: &TorusField, cutoff: f64) -> TorusField {
    let c2 = cutoff * cutoff;
    u.apply_multiplier(|k| {
        let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
        Complex64::new(if k2 <= c2 { 1.0 } else { 0.0 }, 0.0)
    })
}

/// Regularity exponent detected from mean dyadic block sizes: regresses
/// `log2 mean_s ‖Δ_j u_s‖_{L^2}` on `j` over the fully resolved blocks
/// `j = 0..=J` and returns minus the slope.
pub fn fitted_regularity(samples: &[TorusField]) -> f64 {
    let grid = samples[0].grid;
    let jmax = grid.max_full_block();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for j in 0..=jmax {
        let m = samples
            .iter()
            .map(|u| lp_block(u, j).lp_norm(Exponent::Two))
            .sum::<f64>()
            / samples.len() as f64;
        xs.push(j as f64);
        ys.push(m.log2());
    }
    -crate::stats::linear_fit(&xs, &ys).0
}

/// Discrete `r`-Hölder constant `max_{x≠y} |u(y)-u(x)| / |y-x|^r` (periodic distance).
pub fn holder_constant(u: &TorusField, r: f64) -> f64 {
    let g = u.grid;
    let mut best: f64 = 0.0;
    for x in 0..g.len() {
        for y in 0..g.len() {
            if x != y {
                let d = g.distance(x, y);
                best = best.max((u.samples[y] - u.samples[x]).abs() / d.powf(r));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(n: usize) -> TorusGrid {
        TorusGrid::new(1, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(3, 16).is_err());
        assert!(TorusGrid::new(1, 4).is_err());
        assert!(TorusGrid::new(1, 24).is_err());
        assert!(TorusGrid::new(2, 8).is_ok());
    }

    #[test]
    fn round_trip_and_symmetry() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * (3.0 * x[0] + x[1])) + x[0] * x[1]);
        let back = TorusField::from_spectrum(g, u.spectrum().to_vec()).unwrap();
        for (a, b) in u.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1e-12 * u.max_abs());
        }
        for i in 0..g.len() {
            let j = neg_index(&g, i);
            assert!((u.spectrum()[i] - u.spectrum()[j].conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn block_indices() {
        assert_eq!(block_of(0), -1);
        assert_eq!(block_of(1), -1);
        assert_eq!(block_of(4), 0);
        assert_eq!(block_of(5), 1);
        assert_eq!(block_of(25), 2);
        assert_eq!(block_of(64), 2);
        assert_eq!(block_of(81), 3);
        assert_eq!(g1(64).max_block(), 4);
        assert_eq!(g1(64).max_full_block(), 4);
        assert_eq!(TorusGrid::new(2, 64).unwrap().max_full_block(), 4);
        assert_eq!(TorusGrid::new(2, 64).unwrap().max_block(), 5);
    }

    #[test]
    fn sine_lives_in_one_block() {
        let g = g1(64);
        let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * 5.0 * x[0]));
        for j in -1..=g.max_block() {
            let b = lp_block(&u, j).max_abs();
            if j == 2 {
                assert!((b - 1.0).abs() < 1e-10);
            } else {
                assert!(b < 1e-12);
            }
        }
        let nrm = besov_norm(&u, BesovParams::holder(0.0));
        assert!((nrm - 1.0).abs() < 1e-10);
    }

    #[test]
    fn heat_eigenfunction() {
        let g = g1(64);
        let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * 3.0 * x[0]));
        let t = 0.01;
        let p = heat_apply(&u, t).unwrap();
        let f = (-4.0 * PI * PI * 9.0 * t).exp();
        for i in 0..g.len() {
            assert!((p.value(i) - f * u.value(i)).abs() < 1e-13);
        }
        assert!(heat_apply(&u, 0.0).is_err());
    }

    #[test]
    fn bernstein_sine() {
        let g = g1(128);
        for j in 1..5 {
            // frequency 2^j is the top of block j-1; 2^j + 1 is the bottom of block j
            let f = (1u32 << j) as f64;
            let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * f * x[0]));
            let r = bernstein_ratio(&u, j - 1, MultiIndex::scalar(1)).unwrap();
            assert!((r - 2.0 * PI).abs() < 1e-10, "{r}");
            let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * (f + 1.0) * x[0]));
            let r = bernstein_ratio(&u, j, MultiIndex::scalar(1)).unwrap();
            assert!((r - PI * (f + 1.0) / f).abs() < 1e-10, "{r}");
        }
        let c = TorusField::constant(g, 2.0);
        assert!((bernstein_ratio(&c, -1, MultiIndex::ZERO).unwrap() - 1.0).abs() < 1e-14);
        assert!(bernstein_ratio(&c, 2, MultiIndex::ZERO).is_err());
    }

    #[test]
    fn eval_at_matches_full_transform() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = sample_white_noise(g, 3);
        let full = resolvent_apply(&u, MultiIndex::new(1, 0));
        for i in [0, 5, 77, 200] {
            let v = u.eval_multiplier_at(|k| resolvent_symbol(k, MultiIndex::new(1, 0)), i);
            assert!((v - full.value(i)).abs() < 1e-12);
        }
    }
}
