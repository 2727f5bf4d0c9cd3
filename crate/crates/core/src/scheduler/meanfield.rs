//! Population-level diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{check_theta, Horizon, MemoryParams, SampleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldStats {
    pub avg_hazard: f64,
    pub avg_stability: f64,
    pub avg_phi: f64,
    pub count: usize,
}

/// Arithmetic means of hazard, stability and `phi(norm_loss)`.
pub fn mean_field_stats<'a, I>(population: I, params: &MemoryParams) -> Result<MeanFieldStats>
where
    I: IntoIterator<Item = &'a SampleState>,
{
    let (mut h, mut s, mut phi, mut n) = (0.0, 0.0, 0.0, 0usize);
    for st in population {
        h += st.current_hazard(params)?;
        s += st.s;
        phi += params.phi.apply(st.norm_loss)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("mean-field population"));
    }
    let nf = n as f64;
    Ok(MeanFieldStats { avg_hazard: h / nf, avg_stability: s / nf, avg_phi: phi / nf, count: n })
}

/// `ln(1/theta) / avg_hazard`; `Never` for zero hazard.
pub fn threshold_interval(stats: &MeanFieldStats, theta: f64) -> Result<Horizon> {
    check_theta(theta)?;
    if !(stats.avg_hazard >= 0.0) {
        return Err(Error::invalid("avg_hazard", "must be >= 0"));
    }
    Ok(Horizon::from_rate(stats.avg_hazard, theta))
}

/// Break-even replay fraction `clip(ln(utility * b / mu) / b, 0, 1)`.
pub fn optimal_ratio(utility: f64, b: f64, mu: f64) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid("b", "must be finite and > 0"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", "must be finite and > 0"));
    }
    if !(utility * b > 0.0) || !utility.is_finite() {
        return Err(Error::invalid("utility", "utility * b must be > 0"));
    }
    Ok(((utility * b / mu).ln() / b).clamp(0.0, 1.0))
}

/// Population stability gain at one cycle and its relative size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityGain {
    pub delta_s: f64,
    pub relative_gain: f64,
}

/// Mean-field stability increment for average stability `s_k`, average
/// pre-review retention `m_bar` and gap `interval`. Logged, never used for control.
pub fn stability_gain(s_k: f64, m_bar: f64, interval: f64, params: &MemoryParams) -> StabilityGain {
    let delta_s = params.eta_s
        * (params.s_max - s_k).max(0.0).powf(params.beta_s)
        * (-params.rho * interval).exp()
        * (1.0 - m_bar).clamp(0.0, 1.0).powf(params.gamma_s);
    StabilityGain { delta_s, relative_gain: if s_k > 0.0 { delta_s / s_k } else { 0.0 } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{time_to_threshold, SampleId};

    fn sample(id: u64, norm: f64, s: f64, p: &MemoryParams) -> SampleState {
        let mut st = SampleState::new(SampleId(id), 0, p);
        st.norm_loss = norm;
        st.s = s;
        st
    }

    #[test]
    fn means() {
        let p = MemoryParams::default();
        let pop: Vec<_> = (0..5).map(|i| sample(i, 0.5, 1.0, &p)).collect();
        let st = mean_field_stats(&pop, &p).unwrap();
        assert!((st.avg_hazard - 0.11).abs() < 1e-12);
        assert_eq!(st.avg_stability, 1.0);
        assert!((st.avg_phi - 0.5).abs() < 1e-12);

        let one = mean_field_stats(&pop[..1], &p).unwrap();
        assert_eq!(one.avg_hazard, pop[0].current_hazard(&p).unwrap());

        // h = 0.1 and 0.3 with phi = identity, alpha = 0, gamma_d = 1.
        let q = MemoryParams { alpha: 0.0, gamma_d: 1.0, phi: crate::memory::PhiConfig::identity(), ..p };
        let pair = [sample(0, 0.1, 1.0, &q), sample(1, 0.3, 1.0, &q)];
        assert!((mean_field_stats(&pair, &q).unwrap().avg_hazard - 0.2).abs() < 1e-15);

        assert!(matches!(mean_field_stats(&[], &p), Err(Error::Empty(_))));
    }

    #[test]
    fn threshold_gap() {
        let st = MeanFieldStats { avg_hazard: 0.11, avg_stability: 1.0, avg_phi: 0.5, count: 1 };
        let t = threshold_interval(&st, 0.5).unwrap().steps().unwrap();
        assert!((t - 6.3013).abs() < 1e-4);
        let doubled = MeanFieldStats { avg_hazard: 0.22, ..st };
        let t2 = threshold_interval(&doubled, 0.5).unwrap().steps().unwrap();
        assert!((t2 * 2.0 - t).abs() < 1e-12);
        let zero = MeanFieldStats { avg_hazard: 0.0, ..st };
        assert_eq!(threshold_interval(&zero, 0.5).unwrap(), Horizon::Never);
    }

    #[test]
    fn homogeneous_matches_per_sample_horizon() {
        let p = MemoryParams::default();
        for (norm, s) in [(0.5, 1.0), (0.2, 3.7), (0.93, 9.1)] {
            let pop: Vec<_> = (0..8).map(|i| sample(i, norm, s, &p)).collect();
            let a = threshold_interval(&mean_field_stats(&pop, &p).unwrap(), 0.5).unwrap().steps().unwrap();
            let b = time_to_threshold(s, norm, 0.5, &p).unwrap().steps().unwrap();
            assert!(((a - b) / b).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_ratio_cases() {
        assert_eq!(optimal_ratio(0.5, 2.0, 1.0).unwrap(), 0.0);
        let b = 1.5f64;
        assert!((optimal_ratio(b.exp() / b, b, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(format!("{:.4}", optimal_ratio(2.0, 2.0, 1.0).unwrap()), "0.6931");
        assert!(optimal_ratio(0.0, 2.0, 1.0).is_err());
        assert!(optimal_ratio(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn stability_gain_matches_review_rule() {
        let p = MemoryParams::default();
        let g = stability_gain(1.0, 0.5, 100.0, &p);
        assert!((g.delta_s - 0.027591).abs() < 1e-6);
        assert_eq!(stability_gain(p.s_max, 0.5, 1.0, &p).delta_s, 0.0);
    }
}
