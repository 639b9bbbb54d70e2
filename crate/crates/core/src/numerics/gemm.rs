//! Row-major GEMM front-end over `matrixmultiply`.

use super::Scalar;

/// `C = alpha * op(A) * op(B) + beta * C`, all row-major.
///
/// `op(A)` is `m x k`. Without transposition `A` is stored `m x k` with row
/// stride `lda`; with transposition it is stored `k x m`. Same for `B`
/// (`k x n`). `C` is `m x n` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: Scalar,
    a: &[Scalar],
    lda: usize,
    b: &[Scalar],
    ldb: usize,
    beta: Scalar,
    c: &mut [Scalar],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (a_rows, a_cols) = if trans_a { (k, m) } else { (m, k) };
    let (b_rows, b_cols) = if trans_b { (n, k) } else { (k, n) };
    if k > 0 {
        assert!(a_cols <= lda && a.len() >= (a_rows - 1) * lda + a_cols, "gemm: A too small");
        assert!(b_cols <= ldb && b.len() >= (b_rows - 1) * ldb + b_cols, "gemm: B too small");
    }
    assert!(n <= ldc && c.len() >= (m - 1) * ldc + n, "gemm: C too small");

    let (rsa, csa) = if trans_a { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if trans_b { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: the asserts above guarantee every addressed element lies inside
    // the slices; `c` is uniquely borrowed.
    unsafe {
        raw_gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(not(feature = "f32"))]
use matrixmultiply::dgemm as raw_gemm;
#[cfg(feature = "f32")]
use matrixmultiply::sgemm as raw_gemm;

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[Scalar], b: &[Scalar], m: usize, k: usize, n: usize) -> Vec<Scalar> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[Scalar], r: usize, c: usize) -> Vec<Scalar> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn all_transpose_combinations_match_naive() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<Scalar> = (0..m * k).map(|v| (v as Scalar).sin()).collect();
        let b: Vec<Scalar> = (0..k * n).map(|v| (v as Scalar * 0.7).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let at = transpose(&a, m, k);
        let bt = transpose(&b, k, n);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let (aa, lda) = if ta { (&at, m) } else { (&a, k) };
            let (bb, ldb) = if tb { (&bt, k) } else { (&b, n) };
            let mut c = vec![0.0; m * n];
            gemm(ta, tb, m, n, k, 1.0, aa, lda, bb, ldb, 0.0, &mut c, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
