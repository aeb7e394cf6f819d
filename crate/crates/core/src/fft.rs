//! Radix-2 complex FFT on power-of-two lengths, 1-d and 2-d (row-major).

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

fn bit_reverse(a: &mut [Complex64]) {
    let n = a.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            a.swap(i, j);
        }
    }
}

/// In-place transform with kernel `exp(sign * 2πi jk/n)`, no scaling.
pub fn fft_inplace(a: &mut [Complex64], sign: f64) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    bit_reverse(a);
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| {
            let ang = sign * 2.0 * PI * k as f64 / n as f64;
            Complex64::new(libm::cos(ang), libm::sin(ang))
        })
        .collect();
    let mut len = 2;
    while len <= n {
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = twiddles[k * step];
                let u = a[start + k];
                let v = a[start + k + len / 2] * w;
                a[start + k] = u + v;
                a[start + k + len / 2] = u - v;
            }
        }
        len <<= 1;
    }
}

/// Transform of a `dim`-dimensional array of side `n` stored row-major.
pub fn fft_nd(a: &mut [Complex64], n: usize, dim: usize, sign: f64) {
    if dim == 1 {
        fft_inplace(a, sign);
        return;
    }
    for row in a.chunks_mut(n) {
        fft_inplace(row, sign);
    }
    let mut col = alloc::vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = a[r * n + c];
        }
        fft_inplace(&mut col, sign);
        for r in 0..n {
            a[r * n + c] = col[r];
        }
    }
}
