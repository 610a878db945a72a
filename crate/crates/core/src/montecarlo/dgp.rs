use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::McError;
use crate::dataset::{Dataset, Matrix};

pub const EMISSION_COEF: f64 = 0.09404;
pub const S2_EMISSION_PENALTY: f64 = 0.12;
pub const INPUT_RANGE: (f64, f64) = (5.0, 15.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Cobb-Douglas output, emissions proportional to the emission input.
    #[serde(rename = "1", alias = "S1")]
    S1,
    /// Emissions enter the output function with a negative sign.
    #[serde(rename = "2", alias = "S2")]
    S2,
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Scenario::S1 => 1,
            Scenario::S2 => 2,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "s1" => Ok(Scenario::S1),
            "2" | "s2" => Ok(Scenario::S2),
            other => Err(format!("unknown scenario '{other}' (expected 1 or 2)")),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub scenario: Scenario,
    /// Scale of the half-normal inefficiency.
    pub sigma: f64,
    pub n_dmu: usize,
    pub n_reps: usize,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n_dmu < 2 {
            return Err(McError::InvalidConfig(format!("need at least 2 DMUs, got {}", self.n_dmu)));
        }
        if self.n_reps < 1 {
            return Err(McError::InvalidConfig("need at least one replication".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(McError::InvalidConfig(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Generator for replication `rep`. The stream depends on scenario, sigma
    /// and replication only, so every estimator in a cell sees the same data.
    pub fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sigma_key = (self.sigma * 1e6).round() as u64 & ((1 << 40) - 1);
        rng.set_stream(((self.scenario.number() as u64) << 60) | (sigma_key << 20) | (rep as u64 & 0xF_FFFF));
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    /// `xN = (x1, x2)`, `xP = x3`, one desirable and one undesirable output.
    pub dataset: Dataset,
    /// Noise-free frontier output at each DMU.
    pub true_f: Vec<f64>,
    /// Output inefficiency draws.
    pub true_u: Vec<f64>,
    /// Emission inefficiency draws.
    pub true_u_b: Vec<f64>,
    /// Scenario 2 rows whose emissions had to be redrawn to keep the
    /// emission-adjusted input positive.
    pub resampled: usize,
}

/// Draws `|N(0, sigma^2)|`; zero when `sigma == 0`.
pub fn half_normal<R: rand::Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma checked").sample(rng).abs()
}

pub fn s1_frontier(x1: f64, x2: f64, x3: f64) -> f64 {
    (x1 * x2 * x3).powf(0.3)
}

pub fn s2_frontier(x1: f64, x2: f64, x3: f64, b: f64) -> f64 {
    (x1 * x2).powf(0.3) * (x3 - S2_EMISSION_PENALTY * b).powf(0.3)
}

pub fn generate(cfg: &DgpConfig, rep: usize) -> Result<SimulatedSample, McError> {
    cfg.validate()?;
    let mut rng = cfg.rng(rep);
    let unif = Uniform::new_inclusive(INPUT_RANGE.0, INPUT_RANGE.1).expect("valid range");
    let n = cfg.n_dmu;
    let (mut x1, mut x2, mut x3) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut y, mut b, mut f) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut u, mut ub) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut resampled = 0;
    for _ in 0..n {
        let (a1, a2, a3) = (unif.sample(&mut rng), unif.sample(&mut rng), unif.sample(&mut rng));
        let u1 = half_normal(&mut rng, cfg.sigma);
        let mut u2 = half_normal(&mut rng, cfg.sigma);
        let mut bi = EMISSION_COEF * a3 * (-u2).exp();
        let fi = match cfg.scenario {
            Scenario::S1 => s1_frontier(a1, a2, a3),
            Scenario::S2 => {
                let mut tries = 0;
                while a3 - S2_EMISSION_PENALTY * bi <= 0.0 {
                    tries += 1;
                    if tries > 1000 {
                        return Err(McError::NonPositiveBase { rep });
                    }
                    resampled += 1;
                    u2 = half_normal(&mut rng, cfg.sigma);
                    bi = EMISSION_COEF * a3 * (-u2).exp();
                }
                s2_frontier(a1, a2, a3, bi)
            }
        };
        x1.push(a1);
        x2.push(a2);
        x3.push(a3);
        y.push(fi * (-u1).exp());
        b.push(bi);
        f.push(fi);
        u.push(u1);
        ub.push(u2);
    }
    let dataset = Dataset::new(
        Matrix::from_columns(&[x1, x2]).expect("equal columns"),
        Matrix::from_column(&x3),
        Matrix::from_column(&y),
        Matrix::from_column(&b),
    )
    .expect("generated data is valid");
    Ok(SimulatedSample { dataset, true_f: f, true_u: u, true_u_b: ub, resampled })
}

/// `tau`-quantile of `exp(-u)` for `u ~ |N(0, sigma^2)|`:
/// `exp(-sigma * Phi^{-1}(1 - tau / 2))`.
pub fn quantile_factor(sigma: f64, tau: f64) -> Result<f64, McError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(McError::InvalidTau(tau));
    }
    if sigma == 0.0 {
        return Ok(1.0);
    }
    let z = StdNormal::standard().inverse_cdf(1.0 - tau / 2.0);
    Ok((-sigma * z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueQuantile {
    pub tau: f64,
    pub values: Vec<f64>,
}

pub fn true_quantile(sample: &SimulatedSample, sigma: f64, tau: f64) -> Result<TrueQuantile, McError> {
    let k = quantile_factor(sigma, tau)?;
    Ok(TrueQuantile { tau, values: sample.true_f.iter().map(|f| f * k).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(scenario: Scenario, sigma: f64) -> DgpConfig {
        DgpConfig { scenario, sigma, n_dmu: 50, n_reps: 1, seed: 42 }
    }

    #[test]
    fn printed_functions_at_reference_points() {
        assert_abs_diff_eq!(s1_frontier(10.0, 10.0, 10.0), 7.943282347242816, epsilon = 1e-12);
        assert_abs_diff_eq!(EMISSION_COEF * 10.0, 0.9404, epsilon = 1e-15);
        assert_abs_diff_eq!(s2_frontier(10.0, 10.0, 10.0, 0.9404), 7.916283944191959, epsilon = 1e-12);
    }

    #[test]
    fn s1_sample_is_consistent() {
        let s = generate(&cfg(Scenario::S1, 0.8), 3).unwrap();
        let d = &s.dataset;
        for i in 0..d.n_dmu() {
            assert!((5.0..=15.0).contains(&d.x_n[(i, 0)]));
            assert!((5.0..=15.0).contains(&d.x_n[(i, 1)]));
            assert!((5.0..=15.0).contains(&d.x_p[(i, 0)]));
            assert!(s.true_u[i] >= 0.0 && s.true_u_b[i] >= 0.0);
            assert_abs_diff_eq!(d.y[(i, 0)] * s.true_u[i].exp(), s.true_f[i], epsilon = 1e-12);
            assert_abs_diff_eq!(d.b[(i, 0)] * s.true_u_b[i].exp(), EMISSION_COEF * d.x_p[(i, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn s2_frontier_uses_generated_emissions() {
        let s = generate(&cfg(Scenario::S2, 1.3), 0).unwrap();
        let d = &s.dataset;
        for i in 0..d.n_dmu() {
            let f = s2_frontier(d.x_n[(i, 0)], d.x_n[(i, 1)], d.x_p[(i, 0)], d.b[(i, 0)]);
            assert_eq!(f, s.true_f[i]);
        }
        assert_eq!(s.resampled, 0);
    }

    #[test]
    fn same_seed_same_sample_different_rep_different_sample() {
        let c = cfg(Scenario::S1, 0.3);
        assert_eq!(generate(&c, 5).unwrap(), generate(&c, 5).unwrap());
        assert_ne!(generate(&c, 5).unwrap().true_f, generate(&c, 6).unwrap().true_f);
        let c2 = DgpConfig { seed: 43, ..c };
        assert_ne!(generate(&c, 5).unwrap().true_f, generate(&c2, 5).unwrap().true_f);
    }

    #[test]
    fn zero_sigma_puts_everyone_on_the_frontier() {
        let s = generate(&cfg(Scenario::S1, 0.0), 0).unwrap();
        assert_eq!(s.dataset.y.column(0), s.true_f);
        let q = true_quantile(&s, 0.0, 0.3).unwrap();
        assert_eq!(q.values, s.true_f);
    }

    #[test]
    fn quantile_factor_closed_form() {
        assert_abs_diff_eq!(quantile_factor(1.3, 0.95).unwrap(), 0.9217153710023172, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile_factor(0.3, 0.5).unwrap(), 0.8168115064021549, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile_factor(0.8, 0.05).unwrap(), 0.20846769545105082, epsilon = 1e-12);
        assert!(quantile_factor(1.3, 0.999999).unwrap() > 0.99999);
        assert_eq!(quantile_factor(1.0, 1.0), Err(McError::InvalidTau(1.0)));
    }

    #[test]
    fn quantile_factor_matches_simulated_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draws: Vec<f64> = (0..1_000_000).map(|_| (-half_normal(&mut rng, 1.3)).exp()).collect();
        draws.sort_by(f64::total_cmp);
        let empirical = draws[(0.95 * draws.len() as f64) as usize];
        assert_abs_diff_eq!(empirical, quantile_factor(1.3, 0.95).unwrap(), epsilon = 2e-3);
    }

    #[test]
    fn true_quantile_is_monotone_and_below_frontier() {
        let s = generate(&cfg(Scenario::S1, 0.8), 1).unwrap();
        let mut last = vec![0.0; s.true_f.len()];
        for tau in [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95] {
            let q = true_quantile(&s, 0.8, tau).unwrap();
            for i in 0..last.len() {
                assert!(q.values[i] >= last[i] && q.values[i] <= s.true_f[i]);
            }
            last = q.values;
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&DgpConfig { n_dmu: 1, ..cfg(Scenario::S1, 0.3) }, 0).is_err());
        assert!(generate(&DgpConfig { n_reps: 0, ..cfg(Scenario::S1, 0.3) }, 0).is_err());
        assert!(generate(&cfg(Scenario::S1, -1.0), 0).is_err());
    }
}
