//! Floating-point scalar abstraction shared by the whole pipeline.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating point: f32 or f64.
///
/// Besides the usual numeric traits the scalar carries a dense matrix
/// multiply so hot loops can dispatch to a tuned kernel per precision.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoint headers.
    const DTYPE: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` for row-major buffers.
    ///
    /// `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when
    /// `trans_b`), `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self;

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Little-endian byte encoding used by checkpoints and NPY dumps.
    fn write_le(self, out: &mut Vec<u8>);

    /// Decode from little-endian bytes of width `size_of::<Self>()`.
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! gemm_impl {
    ($t:ty, $f:ident) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            alpha: Self,
            a: &[Self],
            trans_a: bool,
            b: &[Self],
            trans_b: bool,
            beta: Self,
            c: &mut [Self],
        ) {
            assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
            if m == 0 || n == 0 {
                return;
            }
            // strides for row-major storage (rsa, csa) with optional transpose
            let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
            unsafe {
                matrixmultiply::$f(
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
                    n as isize,
                    1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    gemm_impl!(f32, sgemm);

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    gemm_impl!(f64, dgemm);

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}

/// Shorthand for converting literals into the generic scalar.
#[inline]
pub(crate) fn s<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}
