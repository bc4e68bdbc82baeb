//! Truncated Poisson weights for uniformization.

/// Normalized Poisson(qt) probabilities for k in `left..left + weights.len()`.
#[derive(Debug, Clone)]
pub(crate) struct PoissonWeights {
    pub left: usize,
    pub weights: Vec<f64>,
}

impl PoissonWeights {
    pub fn right(&self) -> usize {
        self.left + self.weights.len() - 1
    }

    #[cfg(test)]
    pub fn weight(&self, k: usize) -> f64 {
        if k < self.left {
            0.0
        } else {
            self.weights.get(k - self.left).copied().unwrap_or(0.0)
        }
    }
}

/// Computes the weights by recursion outward from the mode, stopping on each side
/// once a geometric bound on the remaining tail drops below `eps / 2` of the mass.
pub(crate) fn poisson_weights(qt: f64, eps: f64) -> PoissonWeights {
    assert!(qt >= 0.0 && qt.is_finite(), "poisson rate must be finite and nonnegative");
    assert!(eps > 0.0, "truncation tolerance must be positive");
    if qt == 0.0 {
        return PoissonWeights {
            left: 0,
            weights: vec![1.0],
        };
    }
    let mode = qt.floor() as usize;
    let mut total = 1.0;

    let mut upper = vec![1.0];
    let (mut k, mut wk) = (mode, 1.0);
    loop {
        let r = qt / (k as f64 + 1.0);
        if r < 1.0 && wk * r / (1.0 - r) <= 0.5 * eps * total {
            break;
        }
        wk *= r;
        upper.push(wk);
        total += wk;
        k += 1;
    }

    let mut lower = Vec::new();
    let (mut k, mut wk) = (mode, 1.0);
    while k > 0 {
        let r = k as f64 / qt;
        if r < 1.0 && wk * r / (1.0 - r) <= 0.5 * eps * total {
            break;
        }
        wk *= r;
        lower.push(wk);
        total += wk;
        k -= 1;
    }

    let left = mode - lower.len();
    let mut weights: Vec<f64> = lower.into_iter().rev().chain(upper).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    PoissonWeights { left, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(qt: f64, k: usize) -> f64 {
        let mut log = -qt + k as f64 * qt.ln();
        for j in 1..=k {
            log -= (j as f64).ln();
        }
        log.exp()
    }

    #[test]
    fn zero_rate_is_dirac() {
        let p = poisson_weights(0.0, 1e-10);
        assert_eq!(p.left, 0);
        assert_eq!(p.weights, vec![1.0]);
    }

    #[test]
    fn matches_closed_form() {
        for &qt in &[0.3, 1.0, 4.5, 37.0, 250.0] {
            let p = poisson_weights(qt, 1e-12);
            for k in p.left..=p.right() {
                assert!((p.weight(k) - exact(qt, k)).abs() < 1e-11, "qt={qt} k={k}");
            }
            let missing: f64 = (0..p.left).map(|k| exact(qt, k)).sum::<f64>()
                + (p.right() + 1..p.right() + 200).map(|k| exact(qt, k)).sum::<f64>();
            assert!(missing < 1e-12, "qt={qt} truncated mass {missing}");
        }
    }

    #[test]
    fn weights_are_normalized() {
        let p = poisson_weights(12.3, 1e-10);
        let s: f64 = p.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }
}
