//! Floating-point element type used by the estimator.
//!
//! Training normally runs in `f32`; `f64` exists for deterministic 64-bit runs
//! and for tight finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// Tag stored in tensor blocks of the container format.
    const DTYPE: u8;
    const NAME: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

macro_rules! impl_real {
    ($t:ty, $tag:expr, $name:expr, $kernel:path) => {
        impl Real for $t {
            const DTYPE: u8 = $tag;
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too small");
                assert!(b.len() >= k * n, "gemm: rhs too small");
                assert!(c.len() >= m * n, "gemm: output too small");
                if m == 0 || n == 0 {
                    return;
                }
                // Stored a is m x k (or k x m when transposed).
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: bounds checked above; strides describe dense row-major buffers.
                unsafe {
                    $kernel(
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
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, 1, "f32", matrixmultiply::sgemm);
impl_real!(f64, 2, "f64", matrixmultiply::dgemm);
