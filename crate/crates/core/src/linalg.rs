//! Small dense kernels shared by the autodiff graph, the plain inference
//! path and the GP.
//!
//! `matmul` accumulates every output element over the inner dimension in a
//! fixed order, so a row's result does not depend on how many other rows
//! are in the batch.

/// `out[m×n] = a[m×k] · b[k×n]`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] = aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &aval) in arow.iter().enumerate() {
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aval * bv;
            }
        }
    }
}

/// `out[m×n] = a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// In-place lower Cholesky factor of a symmetric `n×n` matrix.
/// Returns `false` when a non-positive pivot is met.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for p in 0..j {
            diag -= a[j * n + p] * a[j * n + p];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= a[i * n + p] * a[j * n + p];
            }
            a[i * n + j] = s / ljj;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    true
}

/// Solve `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[i * n + p] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in (i + 1)..n {
            s -= l[p * n + i] * b[p];
        }
        b[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        matmul(&a, &b, 2, 3, 2, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // aᵀ·a via matmul_tn equals explicit transpose product
        let mut at = [0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let mut g1 = [0.0; 9];
        let mut g2 = [0.0; 9];
        matmul_tn(&a, &a, 2, 3, 3, &mut g1);
        matmul(&at, &a, 3, 2, 3, &mut g2);
        assert_eq!(g1, g2);

        let mut h1 = [0.0; 4];
        let mut h2 = [0.0; 4];
        matmul_nt(&a, &a, 2, 3, 2, &mut h1);
        matmul(&a, &at, 2, 3, 2, &mut h2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn matmul_rows_are_batch_invariant() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect(); // 4x3
        let b: Vec<f64> = (0..15).map(|i| (i as f64 * 0.11).cos()).collect(); // 3x5
        let mut full = vec![0.0; 20];
        matmul(&a, &b, 4, 3, 5, &mut full);
        for r in 0..4 {
            let mut one = vec![0.0; 5];
            matmul(&a[r * 3..(r + 1) * 3], &b, 1, 3, 5, &mut one);
            assert_eq!(&full[r * 5..(r + 1) * 5], one.as_slice());
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a;
        assert!(cholesky_in_place(&mut l, 3));
        let mut x = [1.0, 2.0, 3.0];
        solve_lower(&l, 3, &mut x);
        solve_upper_t(&l, 3, &mut x);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let mut bad = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut bad, 2));
    }
}
