//! Row-major single-precision matrix multiply on top of `matrixmultiply`.

/// `c[m,n] (+)= op(a)[m,k] * op(b)[k,n]`, all operands dense row-major.
///
/// `a_t` means `a` is stored as `[k,m]`; `b_t` means `b` is stored as `[n,k]`.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    let lda = if a_t { m } else { k };
    let ldb = if b_t { k } else { n };
    sgemm_ld(m, k, n, a, lda, a_t, b, ldb, b_t, c, n, accumulate);
}

/// [`sgemm`] with explicit leading dimensions (row strides of the stored layouts).
#[allow(clippy::too_many_arguments)]
pub fn sgemm_ld(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    lda: usize,
    a_t: bool,
    b: &[f32],
    ldb: usize,
    b_t: bool,
    c: &mut [f32],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (a_rows, a_cols) = if a_t { (k, m) } else { (m, k) };
    let (b_rows, b_cols) = if b_t { (n, k) } else { (k, n) };
    assert!(a_cols <= lda && b_cols <= ldb && n <= ldc);
    assert!(a_rows == 0 || a.len() >= (a_rows - 1) * lda + a_cols);
    assert!(b_rows == 0 || b.len() >= (b_rows - 1) * ldb + b_cols);
    assert!(c.len() >= (m - 1) * ldc + n);
    let (rsa, csa) = if a_t { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if b_t { (1, ldb as isize) } else { (ldb as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the bounds above cover every element addressed by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
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
