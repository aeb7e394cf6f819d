//! Germs `x ↦ Λ_x` over the torus grid, heat pairings, reconstruction,
//! coherence-exponent fitting and Young-product germs.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::multiindex::MultiIndex;
use crate::spectral::{SpectralError, TorusField, TorusGrid};
use crate::stats;

#[derive(Clone, Debug, PartialEq)]
pub enum GermError {
    BelowResolution { t: f64, t_min: f64 },
    NonPositiveGamma(f64),
    IntegerExponent(f64),
    YoungViolated { r1: f64, r2: f64 },
    TooFewSamples(usize),
    Empty,
    Spectral(SpectralError),
}

impl fmt::Display for GermError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GermError::BelowResolution { t, t_min } => write!(
                f,
                "heat time {t} is below the resolution floor {t_min}"
            ),
            GermError::NonPositiveGamma(g) => write!(
                f,
                "reconstruction not unique below exponent zero (gamma = {g})"
            ),
            GermError::IntegerExponent(r) => {
                write!(f, "Young germ needs a non-integer exponent, got {r}")
            }
            GermError::YoungViolated { r1, r2 } => {
                write!(f, "Young regime violated: r1 + r2 = {} <= 0", r1 + r2)
            }
            GermError::TooFewSamples(n) => write!(f, "need at least 100 samples, got {n}"),
            GermError::Empty => write!(f, "germ has no usable samples"),
            GermError::Spectral(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GermError {}

impl From<SpectralError> for GermError {
    fn from(e: SpectralError) -> Self {
        GermError::Spectral(e)
    }
}

/// Dense germ: one local field per grid base point.
#[derive(Clone, Debug)]
pub struct Germ {
    grid: TorusGrid,
    fields: Vec<TorusField>,
}

impl Germ {
    pub fn new(grid: TorusGrid, fields: Vec<TorusField>) -> Result<Self, GermError> {
        if fields.len() != grid.len() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.len(),
                got: fields.len(),
            }
            .into());
        }
        if fields.iter().any(|f| f.grid() != grid) {
            return Err(SpectralError::GridMismatch.into());
        }
        Ok(Germ { grid, fields })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(usize) -> TorusField) -> Result<Self, GermError> {
        Self::new(grid, (0..grid.len()).map(f).collect())
    }

    /// `Λ_x = u` for every `x`.
    pub fn constant(u: &TorusField) -> Self {
        Germ {
            grid: u.grid(),
            fields: alloc::vec![u.clone(); u.grid().len()],
        }
    }

    /// `Λ_x(y) = k(x, y)` for grid indices `x, y`.
    pub fn from_kernel(grid: TorusGrid, k: impl Fn(usize, usize) -> f64) -> Self {
        let fields = (0..grid.len())
            .map(|x| {
                let s = (0..grid.len()).map(|y| k(x, y)).collect();
                TorusField::from_samples(grid, s).expect("length matches grid")
            })
            .collect();
        Germ { grid, fields }
    }

    /// Polynomial lift: `Λ_x(y) = Σ_{|ℓ| <= order} ∂^ℓ f(x) (y-x)^ℓ / ℓ!` with the
    /// periodic displacement.
    pub fn taylor(f: &TorusField, order: u32) -> Self {
        Self::taylor_times(f, order, None)
    }

    fn taylor_times(f: &TorusField, order: u32, g: Option<&TorusField>) -> Self {
        let grid = f.grid();
        let jets: Vec<(MultiIndex, TorusField)> = MultiIndex::all_below(grid.dim(), order + 1)
            .into_iter()
            .map(|l| (l, f.derivative(l)))
            .collect();
        Germ::from_kernel(grid, |x, y| {
            let h = grid.displacement(x, y);
            let p: f64 = jets
                .iter()
                .map(|(l, d)| d.value(x) * l.pow(&h) / l.factorial() as f64)
                .sum();
            match g {
                Some(g) => p * g.value(y),
                None => p,
            }
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn field(&self, x: usize) -> &TorusField {
        &self.fields[x]
    }

    /// `a·G1 + b·G2`.
    pub fn linear_combination(a: f64, g1: &Germ, b: f64, g2: &Germ) -> Result<Germ, GermError> {
        if g1.grid != g2.grid {
            return Err(SpectralError::GridMismatch.into());
        }
        let fields = g1
            .fields
            .iter()
            .zip(&g2.fields)
            .map(|(u, v)| u.axpby(a, v, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Germ {
            grid: g1.grid,
            fields,
        })
    }

    /// The diagonal `x ↦ Λ_x(x)`.
    pub fn diagonal(&self) -> TorusField {
        let s = (0..self.grid.len()).map(|x| self.fields[x].value(x)).collect();
        TorusField::from_samples(self.grid, s).expect("length matches grid")
    }

    /// `max_x ‖Λ_x‖_{B^r_{∞,∞}}`.
    pub fn uniform_bound(&self, r: f64) -> f64 {
        self.fields.iter().fold(0.0, |m, f| {
            m.max(crate::spectral::besov_norm(f, crate::spectral::BesovParams::holder(r)))
        })
    }
}

fn check_time(grid: TorusGrid, t: f64) -> Result<(), GermError> {
    let t_min = grid.t_min();
    if !(t >= t_min * (1.0 - 1e-12)) || t > 1.0 {
        return Err(GermError::BelowResolution { t, t_min });
    }
    Ok(())
}

/// Phases `e^{2πik·x}` for every spectral index at one base point.
fn phases(grid: TorusGrid, x: usize) -> Vec<Complex64> {
    let n = grid.n() as i64;
    let a = grid.axes(x);
    (0..grid.len())
        .map(|i| {
            let k = grid.wavevector(i);
            let m = (k[0] * a[0] as i64 + k[1] * a[1] as i64).rem_euclid(n);
            let ang = 2.0 * PI * m as f64 / n as f64;
            Complex64::new(libm::cos(ang), libm::sin(ang))
        })
        .collect()
}

fn heat_factors(grid: TorusGrid, t: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| (-4.0 * PI * PI * grid.k2(i) as f64 * t).exp())
        .collect()
}

fn pair_with(spec: &[Complex64], ph: &[Complex64], heat: &[f64]) -> f64 {
    spec.iter()
        .zip(ph)
        .zip(heat)
        .map(|((c, e), h)| (c * e).re * h)
        .sum()
}

/// `⟨Λ, p_t(x,·)⟩ = (P_t Λ)(x)`.
pub fn heat_pair(lambda: &TorusField, x: usize, t: f64) -> Result<f64, GermError> {
    let grid = lambda.grid();
    check_time(grid, t)?;
    Ok(pair_with(
        lambda.spectrum(),
        &phases(grid, x),
        &heat_factors(grid, t),
    ))
}

/// Dyadic ladder `t_min·2^i` up to and including `t_max`.
pub fn dyadic_ladder(grid: TorusGrid, t_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = grid.t_min();
    while t <= t_max * (1.0 + 1e-12) {
        out.push(t);
        t *= 2.0;
    }
    out
}

/// One rung of the proof's construction:
/// `𝕀_s^t(x) = ∫ p_{t-s}(x,y) ⟨Λ_y, p_s(y,·)⟩ dy`.
pub fn ladder_integral(g: &Germ, s: f64, t: f64) -> Result<TorusField, GermError> {
    if !(s > 0.0) || !(t > s) {
        return Err(GermError::BelowResolution { t: s, t_min: 0.0 });
    }
    let heat = heat_factors(g.grid, s);
    let a: Vec<f64> = (0..g.grid.len())
        .map(|y| pair_with(g.fields[y].spectrum(), &phases(g.grid, y), &heat))
        .collect();
    let a = TorusField::from_samples(g.grid, a)?;
    Ok(crate::spectral::heat_apply(&a, t - s)?)
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub field: TorusField,
    pub gamma: f64,
    /// `sup_{x,t} |⟨R - Λ_x, p_t(x,·)⟩| / t^{γ/2}` over the ladder.
    pub c_estimate: f64,
    /// `(t, sup_x |⟨R - Λ_x, p_t(x,·)⟩|)` per ladder rung.
    pub ladder: Vec<(f64, f64)>,
}

/// Base points used for residual sweeps: all of them in 1-d, a stride in 2-d.
fn sweep_points(grid: TorusGrid) -> Vec<usize> {
    let stride = if grid.len() > 256 { grid.len() / 256 } else { 1 };
    let mut pts: Vec<usize> = (0..grid.len()).step_by(stride).collect();
    if grid.dim() == 2 && stride > 1 {
        // step along both axes rather than whole rows
        let s = (grid.n() / 16).max(1);
        pts = (0..grid.n())
            .step_by(s)
            .flat_map(|a| (0..grid.n()).step_by(s).map(move |b| (a, b)))
            .map(|(a, b)| grid.flat([a, b]))
            .collect();
    }
    pts
}

/// Reconstruction of a germ.
///
/// On the grid the heat semigroup at time 0 is the identity, so the double
/// limit `t ↓ 0, s ↓ 0` of `𝕀_s^t` is the diagonal `Λ_y(y)`; that field is
/// returned. The ladder reports the local approximation residual
/// `sup_x |⟨R - Λ_x, p_t(x,·)⟩|` from `t_min` up to `1/16` together with the
/// fitted constant `C` in `residual <= C t^{γ/2}`.
pub fn reconstruct(g: &Germ, gamma: f64) -> Result<Reconstruction, GermError> {
    if !(gamma > 0.0) {
        return Err(GermError::NonPositiveGamma(gamma));
    }
    let field = g.diagonal();
    let grid = g.grid;
    let ts = dyadic_ladder(grid, 1.0 / 16.0);
    let heats: Vec<Vec<f64>> = ts.iter().map(|&t| heat_factors(grid, t)).collect();
    let mut sup = alloc::vec![0.0f64; ts.len()];
    for x in sweep_points(grid) {
        let ph = phases(grid, x);
        let diff: Vec<Complex64> = field
            .spectrum()
            .iter()
            .zip(g.fields[x].spectrum())
            .map(|(a, b)| a - b)
            .collect();
        for (i, h) in heats.iter().enumerate() {
            sup[i] = sup[i].max(pair_with(&diff, &ph, h).abs());
        }
    }
    let c_estimate = ts
        .iter()
        .zip(&sup)
        .fold(0.0f64, |m, (t, r)| m.max(r / t.powf(gamma / 2.0)));
    Ok(Reconstruction {
        field,
        gamma,
        c_estimate,
        ladder: ts.into_iter().zip(sup).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoherenceReport {
    pub gamma_hat: f64,
    pub beta_hat: f64,
    /// RMS of the log-space regression.
    pub residual: f64,
    /// Set when all `Λ_x` coincide; `gamma_hat` is then `+∞`.
    pub exact: bool,
}

/// Fits `(β, γ)` in `|⟨Λ_y - Λ_x, p_t(x,·)⟩| ≈ C t^{β/2} |y-x|^{γ-β}` from
/// random triples in the regime `t <= |y-x|²/4`, `|y-x| <= 1/4`, `t <= 2^{-10}`.
pub fn coherence_estimate(g: &Germ, sample_pairs: usize, seed: u64) -> Result<CoherenceReport, GermError> {
    if sample_pairs < 100 {
        return Err(GermError::TooFewSamples(sample_pairs));
    }
    let grid = g.grid;
    let scale = g.fields.iter().fold(0.0f64, |m, f| m.max(f.max_abs())).max(1e-300);
    let first = g.fields[0].spectrum();
    let degenerate = g.fields.iter().all(|f| {
        f.spectrum()
            .iter()
            .zip(first)
            .all(|(a, b)| (a - b).norm() <= 1e-14 * scale)
    });
    if degenerate {
        return Ok(CoherenceReport {
            gamma_hat: f64::INFINITY,
            beta_hat: 0.0,
            residual: 0.0,
            exact: true,
        });
    }
    let n = grid.n();
    let ts = dyadic_ladder(grid, libm::exp2(-10.0).max(grid.t_min()));
    let heats: Vec<Vec<f64>> = ts.iter().map(|&t| heat_factors(grid, t)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let max_off = (n / 4) as u64;
    let mut attempts = 0;
    while rows.len() < sample_pairs && attempts < 50 * sample_pairs {
        attempts += 1;
        let x = (rng.next_u64() % grid.len() as u64) as usize;
        let ax = grid.axes(x);
        let mut ay = ax;
        for a in 0..grid.dim() {
            let off = (rng.next_u64() % (2 * max_off + 1)) as i64 - max_off as i64;
            ay[a] = (ax[a] as i64 + off).rem_euclid(n as i64) as usize;
        }
        let y = grid.flat(ay);
        let h = grid.distance(x, y);
        if h == 0.0 || h > 0.25 {
            continue;
        }
        let ti = (rng.next_u64() % ts.len() as u64) as usize;
        let t = ts[ti];
        if t > h * h / 4.0 {
            continue;
        }
        let diff: Vec<Complex64> = g.fields[y]
            .spectrum()
            .iter()
            .zip(g.fields[x].spectrum())
            .map(|(a, b)| a - b)
            .collect();
        let d = pair_with(&diff, &phases(grid, x), &heats[ti]).abs();
        if d <= 1e-13 * scale {
            continue;
        }
        rows.push(alloc::vec![1.0, t.ln(), h.ln()]);
        ys.push(d.ln());
    }
    if rows.len() < 10 {
        return Err(GermError::Empty);
    }
    let c = stats::least_squares(&rows, &ys).ok_or(GermError::Empty)?;
    let beta = 2.0 * c[1];
    let gamma = (c[2] + beta).max(beta);
    let rss: f64 = rows
        .iter()
        .zip(&ys)
        .map(|(r, y)| {
            let e = y - (c[0] + c[1] * r[1] + c[2] * r[2]);
            e * e
        })
        .sum();
    Ok(CoherenceReport {
        gamma_hat: gamma,
        beta_hat: beta,
        residual: (rss / rows.len() as f64).sqrt(),
        exact: false,
    })
}

/// `Λ_x = F_x · g` with `F_x` the Taylor polynomial of `f` at `x` of order `< r1`.
pub fn young_germ(f: &TorusField, g: &TorusField, r1: f64) -> Result<Germ, GermError> {
    if !(r1 > 0.0) || (r1 - r1.round()).abs() < 1e-9 {
        return Err(GermError::IntegerExponent(r1));
    }
    if f.grid() != g.grid() {
        return Err(SpectralError::GridMismatch.into());
    }
    Ok(Germ::taylor_times(f, r1.floor() as u32, Some(g)))
}

/// Reconstruction of the Young germ, defining `f·g` for `r1 + r2 > 0`.
pub fn young_product(f: &TorusField, g: &TorusField, r1: f64, r2: f64) -> Result<TorusField, GermError> {
    if r1 + r2 <= 0.0 {
        return Err(GermError::YoungViolated { r1, r2 });
    }
    Ok(reconstruct(&young_germ(f, g, r1)?, r1 + r2)?.field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_pair_floor_and_constant() {
        let g = TorusGrid::new(1, 32).unwrap();
        let c = TorusField::constant(g, 2.5);
        assert!((heat_pair(&c, 3, 0.1).unwrap() - 2.5).abs() < 1e-14);
        assert!(heat_pair(&c, 3, g.t_min() / 2.0).is_err());
    }

    #[test]
    fn heat_pair_eigenfunction() {
        let g = TorusGrid::new(1, 64).unwrap();
        let u = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * 3.0 * x[0]));
        let t = 0.002;
        for x in [0, 7, 40] {
            let want = (-4.0 * PI * PI * 9.0 * t).exp() * libm::sin(2.0 * PI * 3.0 * g.coord(x)[0]);
            assert!((heat_pair(&u, x, t).unwrap() - want).abs() < 1e-13);
        }
    }

    #[test]
    fn reconstruct_rejects_nonpositive_gamma() {
        let g = TorusGrid::new(1, 16).unwrap();
        let germ = Germ::constant(&TorusField::constant(g, 1.0));
        assert!(matches!(reconstruct(&germ, 0.0), Err(GermError::NonPositiveGamma(_))));
    }

    #[test]
    fn young_errors() {
        let g = TorusGrid::new(1, 16).unwrap();
        let f = TorusField::constant(g, 1.0);
        assert!(young_germ(&f, &f, 1.0).is_err());
        assert!(matches!(
            young_product(&f, &f, 0.4, -0.6),
            Err(GermError::YoungViolated { .. })
        ));
    }

    #[test]
    fn ladder_approaches_diagonal() {
        let g = TorusGrid::new(1, 128).unwrap();
        let f = TorusField::from_fn(g, |x| libm::sin(2.0 * PI * x[0]));
        let germ = Germ::taylor(&f, 2);
        let exact = germ.diagonal();
        let mut last = f64::INFINITY;
        for t in [1e-2, 4e-3, 1e-3] {
            let e = ladder_integral(&germ, t / 2.0, t)
                .unwrap()
                .sub(&exact)
                .unwrap()
                .max_abs();
            assert!(e < last);
            last = e;
        }
    }
}
