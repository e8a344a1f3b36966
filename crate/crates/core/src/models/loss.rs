//! Reusable pairwise and pointwise loss components.

use super::{ModelError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-ln σ(x)`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x)
}

fn check_lengths(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(ModelError::LengthMismatch(pos.len(), neg.len()));
    }
    Ok(())
}

/// Mean of `-ln σ(pos - neg)` over the pairs.
pub fn bpr_loss(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_lengths(pos, neg)?;
    let sum: f64 = pos.iter().zip(neg).map(|(p, n)| neg_log_sigmoid(p - n)).sum();
    Ok(sum / pos.len() as f64)
}

/// Gradient of [`bpr_loss`] with respect to the positive scores; the
/// gradient for the negative scores is its negation.
pub fn bpr_loss_grad(pos: &[f64], neg: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pos, neg)?;
    let n = pos.len() as f64;
    Ok(pos.iter().zip(neg).map(|(p, q)| -sigmoid(q - p) / n).collect())
}

/// Mean of `max(0, margin - (pos - neg))`.
pub fn margin_loss(pos: &[f64], neg: &[f64], margin: f64) -> Result<f64> {
    check_lengths(pos, neg)?;
    let sum: f64 = pos.iter().zip(neg).map(|(p, n)| (margin - (p - n)).max(0.0)).sum();
    Ok(sum / pos.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn equal_scores_give_ln2() {
        let l = bpr_loss(&[0.3, -1.0], &[0.3, -1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_margin_is_stable() {
        // -ln σ(20) = ln(1 + e^-20) = 2.0611536203...e-9 (series: e^-20 - e^-40/2)
        let e = (-20f64).exp();
        let reference = e - e * e / 2.0;
        let l = bpr_loss(&[20.0], &[0.0]).unwrap();
        assert!((l - reference).abs() / reference < 1e-12, "{l}");
        assert!(l > 0.0);
        assert!(bpr_loss(&[-800.0], &[0.0]).unwrap().is_finite());
        assert!((bpr_loss(&[-800.0], &[0.0]).unwrap() - 800.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_length_mismatch() {
        assert!(bpr_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(bpr_loss(&[], &[]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..6);
            let pos: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let neg: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let grad = bpr_loss_grad(&pos, &neg).unwrap();
            let h = 1e-6;
            for k in 0..n {
                let mut up = pos.clone();
                let mut down = pos.clone();
                up[k] += h;
                down[k] -= h;
                let fd = (bpr_loss(&up, &neg).unwrap() - bpr_loss(&down, &neg).unwrap()) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1e-8),
                    "{fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn margin_loss_hinge() {
        assert_eq!(margin_loss(&[2.0], &[0.0], 1.0).unwrap(), 0.0);
        assert_eq!(margin_loss(&[0.0], &[0.0], 1.0).unwrap(), 1.0);
        assert_eq!(margin_loss(&[0.0, 2.0], &[1.0, 0.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        for x in [-30.0, -1.0, 0.0, 0.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
