//! Small dense-vector helpers shared by the retrieval and dedup code.
//!
//! Every similarity that decides an ordering goes through [`dot_f64`], so
//! two code paths that rank the same pair always see the same value.

/// Inner product of two `f32` slices accumulated left to right in `f64`.
///
/// Each product of two `f32` values is exact in `f64`; only the running sum
/// rounds, and always in the same order.
#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

#[inline]
pub fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// Returns true when the Euclidean norm of `a` is within `tol` of one.
pub fn is_unit(a: &[f32], tol: f64) -> bool {
    (norm_f64(a) - 1.0).abs() <= tol
}
