use crate::error::{Error, Result};

/// Unbiased pass@k estimate from `n` samples of which `c` are correct:
/// `1 - C(n-c, k) / C(n, k)`.
///
/// Evaluated as `1 - Π_{i=n-c+1..=n} (1 - k/i)` so no binomial is ever
/// formed; stays finite and accurate for large `n`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if c > n {
        return Err(Error::InvalidArgument(format!("c={c} exceeds n={n}")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k={k} must lie in 1..={n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let k = k as f64;
    let survival: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k / i as f64).product();
    Ok(1.0 - survival)
}
