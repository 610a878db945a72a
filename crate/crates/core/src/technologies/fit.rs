use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{DirectionVector, Technology};
use crate::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Residual {
    /// Sign-constrained least squares residual (`>= 0`).
    Cnls { eps: f64 },
    /// Expectile residual split into positive and negative parts.
    Cer { eps_plus: f64, eps_minus: f64 },
}

impl Residual {
    /// Signed residual `eps` (CNLS) or `eps_plus - eps_minus` (CER).
    pub fn value(&self) -> f64 {
        match *self {
            Residual::Cnls { eps } => eps,
            Residual::Cer { eps_plus, eps_minus } => eps_plus - eps_minus,
        }
    }
}

/// Hyperplane coefficients of one DMU.
///
/// The hyperplane value at a point `(xN, xP, y, b)` is
/// `alpha - alpha_bar + beta'xN + eta'xP + omega'b - gamma'y`; under
/// by-production it splits into the economic part
/// `alpha + beta'xN + (eta + eta_bar)'xP - gamma'y` and the environmental
/// part `omega'b - alpha_bar - eta_bar'xP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmuFit {
    pub alpha: f64,
    pub alpha_bar: f64,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_bar: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    pub residual: Residual,
}

impl DmuFit {
    /// Combined hyperplane value at a point.
    pub fn value_at(&self, x_n: &[f64], x_p: &[f64], y: &[f64], b: &[f64]) -> f64 {
        self.alpha - self.alpha_bar + dot(&self.beta, x_n) + dot(&self.eta, x_p) + dot(&self.omega, b)
            - dot(&self.gamma, y)
    }

    /// Economic (T1) part of the by-production hyperplane.
    pub fn economic_at(&self, x_n: &[f64], x_p: &[f64], y: &[f64]) -> f64 {
        let eta_total: Vec<f64> = if self.eta_bar.is_empty() {
            self.eta.clone()
        } else {
            self.eta.iter().zip(&self.eta_bar).map(|(a, b)| a + b).collect()
        };
        self.alpha + dot(&self.beta, x_n) + dot(&eta_total, x_p) - dot(&self.gamma, y)
    }

    /// Environmental (T2) part of the by-production hyperplane.
    pub fn environmental_at(&self, x_p: &[f64], b: &[f64]) -> f64 {
        dot(&self.omega, b) - self.alpha_bar - dot(&self.eta_bar, x_p)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-DMU hyperplanes and residuals from one CNLS or CER solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierFit {
    pub technology: Technology,
    /// Expectile level; `None` for the full-frontier estimator.
    pub tau: Option<f64>,
    pub direction: DirectionVector,
    pub objective: f64,
    pub dmus: Vec<DmuFit>,
}

impl FrontierFit {
    pub fn n_dmu(&self) -> usize {
        self.dmus.len()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.dmus.iter().map(|f| f.residual.value()).collect()
    }

    /// Frontier value of the first desirable output at DMU `i`: the DMU's own
    /// hyperplane set to zero and solved for `y_1`, all other coordinates at
    /// their observed values. `gamma_floor` guards the division.
    pub fn fitted_output(&self, d: &Dataset, i: usize, gamma_floor: f64) -> f64 {
        let f = &self.dmus[i];
        let g = f.gamma.first().copied().unwrap_or(0.0).max(gamma_floor);
        d.y[(i, 0)] + f.residual.value() / g
    }

    /// Frontier value at DMU `i` evaluated with the hyperplane of DMU `h`.
    pub fn fitted_output_with(&self, d: &Dataset, i: usize, h: usize, gamma_floor: f64) -> f64 {
        let f = &self.dmus[h];
        let g = f.gamma.first().copied().unwrap_or(0.0).max(gamma_floor);
        let v = f.value_at(d.x_n.row(i), d.x_p.row(i), d.y.row(i), d.b.row(i));
        d.y[(i, 0)] + v / g
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One row per DMU, one column per coefficient.
    pub fn write_csv<W: Write>(&self, writer: W, dmu_ids: &[String]) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let first = self.dmus.first();
        let width = |f: fn(&DmuFit) -> &Vec<f64>| first.map_or(0, |d| f(d).len());
        let mut header = vec!["dmu_id".to_string(), "alpha".into(), "alpha_bar".into()];
        for (name, n) in [
            ("beta", width(|d| &d.beta)),
            ("eta", width(|d| &d.eta)),
            ("eta_bar", width(|d| &d.eta_bar)),
            ("omega", width(|d| &d.omega)),
            ("gamma", width(|d| &d.gamma)),
        ] {
            header.extend((1..=n).map(|k| format!("{name}_{k}")));
        }
        match first.map(|d| d.residual) {
            Some(Residual::Cer { .. }) => header.extend(["eps_plus".to_string(), "eps_minus".into()]),
            _ => header.push("eps".into()),
        }
        w.write_record(&header)?;
        for (i, d) in self.dmus.iter().enumerate() {
            let mut rec = vec![dmu_ids.get(i).cloned().unwrap_or_else(|| (i + 1).to_string())];
            rec.push(d.alpha.to_string());
            rec.push(d.alpha_bar.to_string());
            for v in d.beta.iter().chain(&d.eta).chain(&d.eta_bar).chain(&d.omega).chain(&d.gamma) {
                rec.push(v.to_string());
            }
            match d.residual {
                Residual::Cnls { eps } => rec.push(eps.to_string()),
                Residual::Cer { eps_plus, eps_minus } => {
                    rec.push(eps_plus.to_string());
                    rec.push(eps_minus.to_string());
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
