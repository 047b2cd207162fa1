use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a [`Tensor`](super::Tensor).
///
/// Training runs use `f32`; gradient checks and reproducibility tests use `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` over strided row/column views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping views of
    /// `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix product with optional transposes: `out (+)= op(a)·op(b)`.
///
/// `a` is stored as `a_rows×a_cols`, `b` as `b_rows×b_cols`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_into<T: Scalar>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1isize, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1isize, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1isize)
    };
    debug_assert_eq!(k, kb);
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), a_rows * a_cols);
    debug_assert_eq!(b.len(), b_rows * b_cols);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the views above cover exactly the provided slices.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}
