use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::M_FLOOR;

/// Which selection weights a replay decision uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerPolicy {
    /// `p ∝ m^-zeta`.
    PowerLaw,
    /// `p ∝ (1 - m)^beta_m * exp(rho_gap * gap)`.
    GapAware,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    pub zeta: f64,
    pub policy: SamplerPolicy,
    /// Gap-aware memory exponent. Invented default of 1.0; the source gives none.
    pub beta_m: f64,
    /// Gap-aware time coefficient. Falls back to `memory.rho` when unset.
    pub rho_gap: Option<f64>,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { zeta: 1.0, policy: SamplerPolicy::PowerLaw, beta_m: 1.0, rho_gap: None }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::range("sampler.zeta", "must be finite and >= 0"));
        }
        if !(self.beta_m >= 0.0 && self.beta_m.is_finite()) {
            return Err(Error::range("sampler.beta_m", "must be finite and >= 0"));
        }
        if let Some(r) = self.rho_gap {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::range("sampler.rho_gap", "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

fn check_retentions(retentions: &[f64]) -> Result<()> {
    if retentions.is_empty() {
        return Err(Error::Empty("retentions"));
    }
    if let Some(m) = retentions.iter().find(|m| !(**m > 0.0 && **m <= 1.0)) {
        return Err(Error::invalid("retentions", format!("{m} is outside (0, 1]")));
    }
    Ok(())
}

/// Normalizes log-weights with max subtraction. All `-inf` gives uniform.
fn softmax(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Normalized `m^-zeta`, computed as a softmax of `-zeta * ln m`.
pub fn weights_power_law(retentions: &[f64], zeta: f64) -> Result<Vec<f64>> {
    check_retentions(retentions)?;
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(Error::invalid("zeta", "must be finite and >= 0"));
    }
    let logw: Vec<f64> = retentions.iter().map(|m| -zeta * m.max(M_FLOOR).ln()).collect();
    Ok(softmax(&logw))
}

/// Normalized `(1 - m)^beta_m * exp(rho_gap * gap)`. Falls back to uniform
/// when every weight is zero.
pub fn weights_gap_aware(retentions: &[f64], gaps: &[f64], beta_m: f64, rho_gap: f64) -> Result<Vec<f64>> {
    check_retentions(retentions)?;
    if retentions.len() != gaps.len() {
        return Err(Error::invalid("gaps", format!("{} gaps for {} retentions", gaps.len(), retentions.len())));
    }
    if gaps.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::invalid("gaps", "must be finite and >= 0"));
    }
    let logw: Vec<f64> = retentions
        .iter()
        .zip(gaps)
        .map(|(m, g)| {
            let mem = if beta_m == 0.0 { 0.0 } else { beta_m * (1.0 - m).ln() };
            mem + rho_gap * g
        })
        .collect();
    Ok(softmax(&logw))
}

/// Draws `n` distinct indices with keys `ln(u) / p_i`, largest first.
/// Zero-probability entries are only taken once the positive ones run out.
pub fn sample_without_replacement<R: Rng + ?Sized>(probs: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > probs.len() {
        return Err(Error::invalid("n", format!("cannot draw {n} from {} entries", probs.len())));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("probs", "must be finite and >= 0"));
    }
    let mut keyed: Vec<(f64, usize)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            // u in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            let key = if p > 0.0 { u.ln() / p } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if n == 0 {
        return Ok(Vec::new());
    }
    if n < keyed.len() {
        keyed.select_nth_unstable_by(n - 1, order);
        keyed.truncate(n);
    }
    keyed.sort_unstable_by(order);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// `round(lambda * batch_size)` with halves rounded away from zero.
pub fn requested_count(lambda: f64, batch_size: usize) -> usize {
    (lambda * batch_size as f64).round().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn power_law_examples() {
        assert!(close(&weights_power_law(&[0.25, 0.5], 1.0).unwrap(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(close(&weights_power_law(&[0.25, 0.5], 2.0).unwrap(), &[0.8, 0.2], 1e-15));
        assert!(close(&weights_power_law(&[0.1, 0.7, 1.0], 0.0).unwrap(), &[1.0 / 3.0; 3], 1e-15));
        assert!(matches!(weights_power_law(&[], 1.0), Err(Error::Empty(_))));
    }

    #[test]
    fn power_law_survives_floor() {
        let w = weights_power_law(&[M_FLOOR, 1.0, 0.5], 3.0).unwrap();
        assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[0] > w[2] && w[2] >= w[1]);
    }

    #[test]
    fn gap_aware_examples() {
        let e = std::f64::consts::E;
        let w = weights_gap_aware(&[0.5, 0.5], &[0.0, 100.0], 1.0, 0.01).unwrap();
        assert!(close(&w, &[1.0 / (1.0 + e), e / (1.0 + e)], 1e-12));
        assert!(close(&weights_gap_aware(&[1.0, 1.0], &[3.0, 9.0], 1.0, 0.0).unwrap(), &[0.5, 0.5], 1e-15));
        assert!(close(&weights_gap_aware(&[0.2, 0.9], &[0.0, 0.0], 0.0, 0.0).unwrap(), &[0.5, 0.5], 1e-15));
        assert!(weights_gap_aware(&[0.5], &[1.0, 2.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn draw_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all = sample_without_replacement(&[0.1, 0.2, 0.7], 3, &mut rng).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        for _ in 0..100 {
            assert_eq!(sample_without_replacement(&[0.0, 1.0], 1, &mut rng).unwrap(), vec![1]);
        }
        assert!(sample_without_replacement(&[1.0], 2, &mut rng).is_err());
        assert!(sample_without_replacement(&[0.5, 0.5], 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn single_draw_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probs = [2.0 / 3.0, 1.0 / 3.0];
        let trials = 100_000;
        let hits = (0..trials).filter(|_| sample_without_replacement(&probs, 1, &mut rng).unwrap()[0] == 0).count();
        let f = hits as f64 / trials as f64;
        assert!((f - 2.0 / 3.0).abs() < 0.006, "{f}");
    }

    #[test]
    fn requested_rounding() {
        assert_eq!(requested_count(0.3, 256), 77);
        assert_eq!(requested_count(0.0, 256), 0);
        assert_eq!(requested_count(0.5, 5), 3);
        assert_eq!(requested_count(0.25, 2), 1);
    }

    proptest! {
        #[test]
        fn weights_are_distributions(ms in proptest::collection::vec(1e-300f64..=1.0, 1..64), zeta in 0.0f64..8.0) {
            let w = weights_power_law(&ms, zeta).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn power_law_ordering(a in 1e-6f64..1.0, b in 1e-6f64..1.0, zeta in 0.01f64..5.0) {
            prop_assume!(a < b);
            let w = weights_power_law(&[a, b], zeta).unwrap();
            prop_assert!(w[0] > w[1]);
        }

        #[test]
        fn matches_softmax_of_log(ms in proptest::collection::vec(1e-9f64..=1.0, 1..32), zeta in 0.0f64..4.0) {
            let w = weights_power_law(&ms, zeta).unwrap();
            let raw: Vec<f64> = ms.iter().map(|m| m.powf(-zeta)).collect();
            let total: f64 = raw.iter().sum();
            for (x, r) in w.iter().zip(&raw) {
                prop_assert!((x - r / total).abs() < 1e-9 * (1.0 + x));
            }
        }

        #[test]
        fn gap_aware_distribution(
            ms in proptest::collection::vec(1e-300f64..=1.0, 1..32),
            beta in 0.0f64..4.0,
            rho in 0.0f64..0.1,
        ) {
            let gaps: Vec<f64> = (0..ms.len()).map(|i| (i * 37 % 500) as f64).collect();
            let w = weights_gap_aware(&ms, &gaps, beta, rho).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn draws_are_distinct(seed in any::<u64>(), len in 1usize..64, frac in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs: Vec<f64> = (0..len).map(|i| (i % 5) as f64).collect();
            let n = ((len as f64) * frac) as usize;
            let mut got = sample_without_replacement(&probs, n, &mut rng).unwrap();
            prop_assert_eq!(got.len(), n);
            got.sort();
            got.dedup();
            prop_assert_eq!(got.len(), n);
        }
    }
}
