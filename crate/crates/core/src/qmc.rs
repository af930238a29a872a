//! Low-discrepancy point set for the truncated-moment integrals.
//!
//! Uses the additive Kronecker ("R_d") sequence with the generalized
//! golden ratio: alpha_j = frac(phi_d^-(j+1)) where phi_d is the unique
//! real root > 1 of x^(d+1) = x + 1. Points are emitted in antithetic
//! pairs (u, 1 - u) so that sign-symmetric integrands cancel exactly.

/// Configuration for quasi-Monte-Carlo integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmcConfig {
    /// Total number of points (antithetic pairs count as two).
    pub samples: usize,
}

impl Default for QmcConfig {
    fn default() -> Self {
        // 2^14
        QmcConfig { samples: 16_384 }
    }
}

/// Deterministic generator for points in the open unit cube (0, 1)^d.
#[derive(Debug, Clone)]
pub struct RdSequence {
    alpha: Vec<f64>,
    index: u64,
    pending_antithetic: Option<Vec<f64>>,
}

impl RdSequence {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        let phi = generalized_golden_ratio(dim);
        let alpha = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
        RdSequence {
            alpha,
            index: 0,
            pending_antithetic: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Writes the next point into `out`. Alternates between a base point
    /// and its antithetic mirror.
    pub fn next_point(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.alpha.len());
        if let Some(mirror) = self.pending_antithetic.take() {
            out.copy_from_slice(&mirror);
            return;
        }
        self.index += 1;
        let n = self.index as f64;
        let mut mirror = vec![0.0; self.alpha.len()];
        for (j, a) in self.alpha.iter().enumerate() {
            let u = (0.5 + n * a).fract().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
            out[j] = u;
            mirror[j] = 1.0 - u;
        }
        self.pending_antithetic = Some(mirror);
    }
}

/// Root > 1 of x^(d+1) = x + 1, by Newton iteration.
fn generalized_golden_ratio(d: usize) -> f64 {
    let p = (d + 1) as i32;
    let mut x = 1.5_f64;
    for _ in 0..64 {
        let f = x.powi(p) - x - 1.0;
        let fp = p as f64 * x.powi(p - 1) - 1.0;
        let next = x - f / fp;
        if (next - x).abs() < 1e-16 {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dim1_is_golden_ratio() {
        let phi = generalized_golden_ratio(1);
        assert!((phi - 1.618_033_988_749_895).abs() < 1e-12);
    }

    #[test]
    fn points_stay_in_open_cube() {
        let mut seq = RdSequence::new(8);
        let mut u = [0.0; 8];
        for _ in 0..10_000 {
            seq.next_point(&mut u);
            for &v in &u {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn antithetic_pairs_sum_to_one() {
        let mut seq = RdSequence::new(3);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for _ in 0..100 {
            seq.next_point(&mut a);
            seq.next_point(&mut b);
            for j in 0..3 {
                assert!((a[j] + b[j] - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equidistributes_in_1d() {
        // mean of first 2^14 points should be 0.5 to high accuracy
        let mut seq = RdSequence::new(1);
        let mut u = [0.0; 1];
        let n = 16_384;
        let mut sum = 0.0;
        for _ in 0..n {
            seq.next_point(&mut u);
            sum += u[0];
        }
        assert!((sum / n as f64 - 0.5).abs() < 1e-12);
    }
}
