//! LT degree distributions: robust soliton, the encoding law with no mass at
//! degree one, and the shifted law seen by joining nodes after departures.

use rand::Rng;

use crate::error::LtError;

/// A distribution over degrees 1..=support. `pmf[0]` is unused and always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl DegreeDistribution {
    /// Builds from raw probabilities for degrees 1..=pmf.len(); normalizes.
    pub fn from_weights(weights: &[f64]) -> Result<Self, LtError> {
        if weights.is_empty() {
            return Err(LtError::Parameter("empty degree distribution".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LtError::Parameter("negative or non-finite degree weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(LtError::Parameter("degree weights sum to zero".into()));
        }
        let mut pmf = Vec::with_capacity(weights.len() + 1);
        pmf.push(0.0);
        pmf.extend(weights.iter().map(|w| w / total));
        Ok(Self::with_pmf(pmf))
    }

    fn with_pmf(pmf: Vec<f64>) -> Self {
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        DegreeDistribution { pmf, cdf }
    }

    /// Largest representable degree.
    pub fn support(&self) -> usize {
        self.pmf.len() - 1
    }

    /// Probability of degree `d`; 0 outside 1..=support.
    pub fn prob(&self, d: usize) -> f64 {
        self.pmf.get(d).copied().unwrap_or(0.0)
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(d, p)| d as f64 * p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cdf[self.cdf.len() - 1];
        let d = self.cdf.partition_point(|&c| c <= u);
        // Skip zero-mass degrees that share a cdf value with their predecessor.
        d.clamp(1, self.support())
    }
}

/// The S parameter of the robust soliton: c ln(k/delta) sqrt(k).
pub fn soliton_spread(k: usize, c: f64, delta: f64) -> f64 {
    c * (k as f64 / delta).ln() * (k as f64).sqrt()
}

fn check_params(k: usize, c: f64, delta: f64) -> Result<(), LtError> {
    if k < 2 {
        return Err(LtError::Parameter(format!("k must be >= 2, got {k}")));
    }
    if !(c > 0.0) {
        return Err(LtError::Parameter(format!("c must be > 0, got {c}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LtError::Parameter(format!("delta must be in (0,1), got {delta}")));
    }
    Ok(())
}

/// Robust soliton mu(d) over 1..=k.
///
/// The spike sits at round(k/S), clamped to k; tau below the spike uses the
/// real-valued S.
pub fn robust_soliton(k: usize, c: f64, delta: f64) -> Result<DegreeDistribution, LtError> {
    check_params(k, c, delta)?;
    let kf = k as f64;
    let s = soliton_spread(k, c, delta);
    let spike = ((kf / s).round() as usize).min(k);
    if spike < 2 {
        return Err(LtError::Parameter(format!(
            "degenerate spike: round(k/S) = {spike} for k={k}, S={s}"
        )));
    }
    let spike_mass = s * (s / delta).ln() / kf;
    if spike_mass < 0.0 {
        return Err(LtError::Parameter(format!(
            "S={s} below delta={delta} gives negative spike mass"
        )));
    }
    let mut w = vec![0.0; k];
    for d in 1..=k {
        let rho = if d == 1 { 1.0 / kf } else { 1.0 / (d as f64 * (d as f64 - 1.0)) };
        let tau = if d < spike {
            s / (d as f64 * kf)
        } else if d == spike {
            spike_mass
        } else {
            0.0
        };
        w[d - 1] = rho + tau;
    }
    DegreeDistribution::from_weights(&w)
}

/// Encoding distribution: robust soliton with the degree-one mass spread
/// evenly over degrees 2..=k, so Omega(1) = 0.
pub fn encoding_distribution(k: usize, c: f64, delta: f64) -> Result<DegreeDistribution, LtError> {
    let mu = robust_soliton(k, c, delta)?;
    let share = mu.prob(1) / (k as f64 - 1.0);
    let mut pmf = mu.pmf.clone();
    pmf[1] = 0.0;
    for p in pmf.iter_mut().skip(2) {
        *p += share;
    }
    Ok(DegreeDistribution::with_pmf(pmf))
}

/// ln C(n_star, d) - ln C(n, d), as a running sum over d.
fn log_availability(n: usize, n_star: usize, max_d: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_d + 1];
    let mut acc = 0.0;
    for d in 1..=max_d {
        let j = (d - 1) as f64;
        let num = n_star as f64 - j;
        acc = if num <= 0.0 || acc == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            acc + num.ln() - (n as f64 - j).ln()
        };
        out[d] = acc;
    }
    out
}

/// g(n*, d) = C(n*, d) / C(n, d): probability that d uniform picks out of n all
/// land among n* available indices.
pub fn availability_ratio(n: usize, n_star: usize, d: usize) -> f64 {
    log_availability(n, n_star, d)[d].exp()
}

/// Degree law realized by joiners once only `n_star` of `n` intermediates are
/// still held: degree-d draws with a missing neighbour turn into a repaired
/// degree-one block.
pub fn shifted_distribution(
    omega: &DegreeDistribution,
    n: usize,
    n_star: usize,
) -> Result<DegreeDistribution, LtError> {
    if n_star > n {
        return Err(LtError::Domain(format!("n_star={n_star} exceeds n={n}")));
    }
    if omega.support() != n {
        return Err(LtError::Domain(format!(
            "distribution support {} differs from n={n}",
            omega.support()
        )));
    }
    if omega.prob(1) != 0.0 {
        return Err(LtError::Domain("encoding distribution must have Omega(1) = 0".into()));
    }
    let log_g = log_availability(n, n_star, n);
    let mut pmf = vec![0.0; n + 1];
    let mut lost = 0.0;
    for d in 2..=n {
        let g = log_g[d].exp();
        pmf[d] = omega.prob(d) * g;
        lost += omega.prob(d) * (1.0 - g);
    }
    pmf[1] = lost;
    Ok(DegreeDistribution::with_pmf(pmf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent evaluation of the robust soliton and its Omega(1)=0 variant.
    fn oracle_omega(k: usize, c: f64, delta: f64) -> Vec<f64> {
        let kf = k as f64;
        let s = c * (kf / delta).ln() * kf.sqrt();
        let spike = (kf / s).round() as usize;
        let tau = |d: usize| -> f64 {
            if d < spike {
                s / (d as f64 * kf)
            } else if d == spike {
                s * (s / delta).ln() / kf
            } else {
                0.0
            }
        };
        let rho = |d: usize| if d == 1 { 1.0 / kf } else { 1.0 / ((d * (d - 1)) as f64) };
        let z: f64 = (1..=k).map(|d| tau(d) + rho(d)).sum();
        let mu: Vec<f64> = (0..=k).map(|d| if d == 0 { 0.0 } else { (tau(d) + rho(d)) / z }).collect();
        (0..=k)
            .map(|d| if d < 2 { 0.0 } else { mu[d] + mu[1] / (kf - 1.0) })
            .collect()
    }

    #[test]
    fn spread_value() {
        let s = soliton_spread(1000, 0.1, 0.5);
        let direct = 0.1 * 2000f64.ln() * 1000f64.sqrt();
        assert!((s - direct).abs() < 1e-12);
        assert!((s - 24.036).abs() < 1e-3, "S = {s}");
    }

    #[test]
    fn rho_component_ratio() {
        // Below the spike tau(d) = S/(dk); removing it leaves rho(1)=1/k, rho(2)=1/2.
        let k = 1000;
        let mu = robust_soliton(k, 0.1, 0.5).unwrap();
        let s = soliton_spread(k, 0.1, 0.5);
        let z = (1.0 / k as f64 + s / k as f64) / mu.prob(1);
        let rho1 = mu.prob(1) * z - s / k as f64;
        let rho2 = mu.prob(2) * z - s / (2.0 * k as f64);
        assert!((rho1 - 1.0 / k as f64).abs() < 1e-12);
        assert!((rho2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        for k in [10, 100, 1000] {
            let mu = robust_soliton(k, 0.1, 0.5).unwrap();
            assert!((mu.total() - 1.0).abs() < 1e-12, "k={k}");
            let om = encoding_distribution(k, 0.1, 0.5).unwrap();
            assert_eq!(om.prob(1), 0.0);
            assert!((om.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_matches_oracle() {
        let k = 100;
        let om = encoding_distribution(k, 0.1, 0.5).unwrap();
        let mu = robust_soliton(k, 0.1, 0.5).unwrap();
        let want = oracle_omega(k, 0.1, 0.5);
        for d in 0..=k {
            assert!((om.prob(d) - want[d]).abs() < 1e-14, "d={d}");
        }
        assert!((om.prob(2) - (mu.prob(2) + mu.prob(1) / 99.0)).abs() < 1e-15);
    }

    #[test]
    fn parameter_errors() {
        assert!(robust_soliton(1, 0.1, 0.5).is_err());
        assert!(robust_soliton(100, 0.0, 0.5).is_err());
        assert!(robust_soliton(100, 0.1, 1.0).is_err());
        // S ~ 0.2 < delta for tiny k: spike mass would be negative.
        assert!(robust_soliton(2, 0.1, 0.5).is_err());
        // Large c puts the spike at degree 1.
        assert!(matches!(robust_soliton(100, 10.0, 0.5), Err(LtError::Parameter(_))));
    }

    #[test]
    fn shifted_examples() {
        let om = encoding_distribution(10, 0.1, 0.5).unwrap();
        let same = shifted_distribution(&om, 10, 10).unwrap();
        for d in 0..=10 {
            assert!((same.prob(d) - om.prob(d)).abs() < 1e-15);
        }
        assert_eq!(same.prob(1), 0.0);
        assert!((availability_ratio(10, 8, 2) - 28.0 / 45.0).abs() < 1e-12);
        assert!(shifted_distribution(&om, 10, 11).is_err());
        let zero = shifted_distribution(&om, 10, 0).unwrap();
        assert!((zero.prob(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_is_normalized_and_dominated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(10..400);
            let n_star = rng.gen_range(0..=n);
            let om = encoding_distribution(n, 0.1, 0.5).unwrap();
            let sh = shifted_distribution(&om, n, n_star).unwrap();
            assert!((sh.total() - 1.0).abs() < 1e-12, "n={n} n*={n_star}");
            for d in 2..=n {
                assert!(sh.prob(d) <= om.prob(d));
            }
        }
    }

    #[test]
    fn sampler_never_returns_zero_mass_degree() {
        let om = encoding_distribution(50, 0.1, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20_000 {
            let d = om.sample(&mut rng);
            assert!((2..=50).contains(&d));
            assert!(om.prob(d) > 0.0);
        }
    }
}
