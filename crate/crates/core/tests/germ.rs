use std::f64::consts::PI;

use roughreg_core::germ::*;
use roughreg_core::spectral::*;
use roughreg_core::stats::linear_fit;

fn g1(n: usize) -> TorusGrid {
    TorusGrid::new(1, n).unwrap()
}

fn sup_diff(a: &TorusField, b: &TorusField) -> f64 {
    a.sub(b).unwrap().max_abs()
}

/// Lacunary series `Σ_j 2^{-rj} cos(2π 2^j x + jφ)`, of Hölder–Zygmund regularity exactly `r`.
fn lacunary(g: TorusGrid, r: f64, phase: f64) -> TorusField {
    let jmax = (g.n() as f64).log2() as i32 - 2;
    TorusField::from_fn(g, move |x| {
        (0..=jmax)
            .map(|j| {
                let k = 2f64.powi(j);
                k.powf(-r) * (2.0 * PI * k * x[0] + phase * j as f64).cos()
            })
            .sum()
    })
}

#[test]
fn white_noise_pairings_scale() {
    let g = g1(512);
    let ts = dyadic_ladder(g, 1.0 / 64.0);
    assert!(ts.len() >= 4);
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for &t in &ts {
        let mut acc = 0.0;
        let mut n = 0.0;
        for seed in 0..40 {
            let xi = sample_white_noise(g, seed);
            for x in (0..g.len()).step_by(32) {
                acc += heat_pair(&xi, x, t).unwrap().abs();
                n += 1.0;
            }
        }
        lx.push(t.ln());
        ly.push((acc / n).ln());
    }
    let slope = linear_fit(&lx, &ly).0;
    // r/2 with r = −d/2
    assert!((slope + 0.25).abs() <= 0.25, "slope {slope}");
}

#[test]
fn constant_and_kernel_germs() {
    let g = g1(64);
    let c = TorusField::constant(g, 1.75);
    let r = reconstruct(&Germ::constant(&c), 1.0).unwrap();
    assert!(sup_diff(&r.field, &c) < 1e-14);
    // jointly continuous kernel: the diagonal y ↦ Λ_y(y)
    let k = |x: usize, y: usize| {
        let (a, b) = (g.coord(x)[0], g.coord(y)[0]);
        (2.0 * PI * a).sin() * (2.0 * PI * b).cos() + (2.0 * PI * (a - b)).cos()
    };
    let germ = Germ::from_kernel(g, k);
    let r = reconstruct(&germ, 0.5).unwrap();
    let diag = TorusField::from_fn(g, |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[0]).cos() + 1.0);
    // grid modulus of continuity of the kernel is ≈ 4π/N
    assert!(sup_diff(&r.field, &diag) <= 2.0 * 4.0 * PI / 64.0);
    assert!(sup_diff(&r.field, &diag) <= 1e-12);
}

#[test]
fn polynomial_lift_reconstructs_the_function() {
    let g = g1(256);
    let f = TorusField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
    let germ = Germ::taylor(&f, 2);
    let r = reconstruct(&germ, 2.5).unwrap();
    assert!(sup_diff(&r.field, &f) <= 1e-6);
    // local residual ⟨R − Λ_x, p_t⟩ ~ t^{3/2}, so the ratio to t^{γ/2} shrinks as t ↓ 0
    assert!(r.c_estimate.is_finite());
    let ratios: Vec<f64> = r.ladder.iter().map(|(t, v)| v / t.powf(1.25)).collect();
    assert!(ratios.first().unwrap() <= ratios.last().unwrap(), "{ratios:?}");
}

#[test]
fn reconstruction_is_linear() {
    let g = g1(128);
    let f = lacunary(g, 1.5, 0.3);
    let h = TorusField::from_fn(g, |x| (2.0 * PI * 3.0 * x[0]).cos());
    let a = Germ::taylor(&f, 1);
    let b = young_germ(&h, &sample_white_noise(g, 4), 1.5).unwrap();
    let comb = Germ::linear_combination(2.0, &a, -0.5, &b).unwrap();
    let lhs = reconstruct(&comb, 1.0).unwrap().field;
    let rhs = reconstruct(&a, 1.0)
        .unwrap()
        .field
        .axpby(2.0, &reconstruct(&b, 1.0).unwrap().field, -0.5)
        .unwrap();
    assert!(sup_diff(&lhs, &rhs) <= 1e-10 * lhs.max_abs().max(1.0));
}

#[test]
fn germs_with_small_difference_share_reconstruction() {
    let g = g1(128);
    let f = TorusField::from_fn(g, |x| (2.0 * PI * x[0]).cos());
    let a = Germ::taylor(&f, 1);
    // Δ_x(y) = |y − x|^γ has |⟨Δ_x, p_t(x,·)⟩| ≲ t^{γ/2}
    let gamma = 1.5;
    let d = Germ::from_kernel(g, |x, y| g.distance(x, y).powf(gamma));
    let b = Germ::linear_combination(1.0, &a, 1.0, &d).unwrap();
    for t in dyadic_ladder(g, 1.0 / 16.0) {
        let v = heat_pair(d.field(5), 5, t).unwrap();
        assert!(v <= 2.0 * t.powf(gamma / 2.0), "t={t}: {v}");
    }
    let ra = reconstruct(&a, gamma).unwrap().field;
    let rb = reconstruct(&b, gamma).unwrap().field;
    assert!(sup_diff(&ra, &rb) <= 1e-12);
}

#[test]
fn coherence_of_reference_germs() {
    let g = g1(512);
    let c = coherence_estimate(&Germ::constant(&TorusField::constant(g, 2.0)), 100, 0).unwrap();
    assert!(c.exact && c.gamma_hat.is_infinite());

    let f = lacunary(g, 1.5, 0.7);
    let rep = coherence_estimate(&Germ::taylor(&f, 1), 400, 1).unwrap();
    assert!((rep.gamma_hat - 1.5).abs() <= 0.3, "{rep:?}");
    assert!(rep.beta_hat.abs() <= 0.3, "{rep:?}");

    let f = lacunary(g, 0.75, 0.2);
    let h = lacunary(g, -0.4, 1.1);
    let rep = coherence_estimate(&young_germ(&f, &h, 0.75).unwrap(), 400, 2).unwrap();
    assert!((rep.gamma_hat - 0.35).abs() <= 0.3, "{rep:?}");
    assert!((rep.beta_hat + 0.4).abs() <= 0.3, "{rep:?}");

    let f = lacunary(g, 2.5, 0.4);
    let rep = coherence_estimate(&Germ::taylor(&f, 2), 400, 3).unwrap();
    assert!((rep.gamma_hat - 2.5).abs() <= 0.3, "{rep:?}");
    assert!(rep.beta_hat.abs() <= 0.3, "{rep:?}");

    assert!(matches!(coherence_estimate(&Germ::taylor(&f, 2), 50, 0), Err(GermError::TooFewSamples(50))));
}

#[test]
fn young_products() {
    let g = g1(256);
    let h = lacunary(g, -0.4, 0.5);
    // constant f
    let c = TorusField::constant(g, 3.0);
    let germ = young_germ(&c, &h, 0.5).unwrap();
    for x in [0, 100] {
        assert!(sup_diff(germ.field(x), &h.scale(3.0)) < 1e-12);
    }
    // smooth f, g: reconstruction is the grid product
    let f = TorusField::from_fn(g, |x| (2.0 * PI * x[0]).sin() + 0.5);
    let s = TorusField::from_fn(g, |x| (2.0 * PI * 2.0 * x[0]).cos());
    let p = young_product(&f, &s, 1.5, 1.0).unwrap();
    assert!(sup_diff(&p, &f.mul(&s).unwrap()) <= 1e-6);
    // high mode g: matches the Bony total
    let hi = TorusField::from_fn(g, |x| (2.0 * PI * 60.0 * x[0]).sin());
    let p = young_product(&f, &hi, 1.5, -0.5).unwrap();
    let bony = bony_decompose(&f, &hi).unwrap().total();
    assert!(sup_diff(&p, &bony) <= 1e-8);
    assert!(matches!(young_product(&f, &hi, 0.4, -0.6), Err(GermError::YoungViolated { .. })));
    assert!(matches!(young_germ(&f, &hi, 2.0), Err(GermError::IntegerExponent(_))));
}

#[test]
fn germ_validation() {
    let g = g1(16);
    assert!(Germ::new(g, vec![TorusField::zero(g); 3]).is_err());
    let other = TorusField::zero(g1(32));
    assert!(Germ::new(g, vec![other; 16]).is_err());
    assert!(heat_pair(&TorusField::zero(g), 0, 2.0).is_err());
}
