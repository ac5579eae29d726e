//! In-place LU determinants for the small matrices on the trajectory hot path.

use num_complex::Complex64;

/// Determinant of a row-major `n x n` real matrix; `a` is overwritten.
pub(crate) fn det_real_in_place(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].abs();
        for r in k + 1..n {
            let v = a[r * n + k].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            det = -det;
        }
        let d = a[k * n + k];
        det *= d;
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            if f != 0.0 {
                for c in k + 1..n {
                    a[r * n + c] -= f * a[k * n + c];
                }
            }
        }
    }
    det
}

/// Determinant of a row-major `n x n` complex matrix; `a` is overwritten.
pub(crate) fn det_complex_in_place(a: &mut [Complex64], n: usize) -> Complex64 {
    match n {
        0 => return Complex64::new(1.0, 0.0),
        1 => return a[0],
        2 => return a[0] * a[3] - a[1] * a[2],
        _ => {}
    }
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].norm();
        for r in k + 1..n {
            let v = a[r * n + k].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            det = -det;
        }
        let d = a[k * n + k];
        det *= d;
        for r in k + 1..n {
            let f = a[r * n + k] / d;
            for c in k + 1..n {
                let akc = a[k * n + c];
                a[r * n + c] -= f * akc;
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn real_matches_nalgebra() {
        let m = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 - 4.5 + (i == j) as u8 as f64);
        let mut buf: Vec<f64> = (0..25).map(|k| m[(k / 5, k % 5)]).collect();
        let d = det_real_in_place(&mut buf, 5);
        assert!((d - m.determinant()).abs() < 1e-9 * d.abs().max(1.0));
    }

    #[test]
    fn complex_matches_nalgebra() {
        for n in 1..5 {
            let m = DMatrix::from_fn(n, n, |i, j| {
                Complex64::new(((i * 5 + j) % 7) as f64 - 3.0, (i as f64 - j as f64) * 0.5 + 1.0)
            });
            let mut buf: Vec<Complex64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
            let d = det_complex_in_place(&mut buf, n);
            assert!((d - m.determinant()).norm() < 1e-10 * d.norm().max(1.0), "n = {n}");
        }
    }
}
