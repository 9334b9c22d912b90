//! Built-in experiments: defaults and separable initial conditions.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::integrators::FieldModel;
use crate::lowrank::{SeparableTerm, Truncation};
use crate::registry::Registry;

/// Parameters of a Maxwellian with a cosine density perturbation:
/// `f = (2πσ²)^{-d/2} exp(-|v-μ|²/(2σ²)) (1 + a Σ_s cos(k x_s))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbedMaxwellian {
    pub amplitude: f64,
    pub wavenumber: f64,
    #[serde(default)]
    pub v_mean: Vec<f64>,
    pub v_sigma: f64,
}

impl Default for PerturbedMaxwellian {
    fn default() -> Self {
        Self { amplitude: 1e-2, wavenumber: 0.5, v_mean: Vec::new(), v_sigma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDefaults {
    pub dim: usize,
    pub x_domain: Vec<(f64, f64)>,
    pub v_domain: Vec<(f64, f64)>,
    pub n_x: Vec<usize>,
    pub n_v: Vec<usize>,
    pub degree: usize,
    pub tau: f64,
    pub t_final: f64,
    pub alpha: f64,
    pub m: usize,
    pub weighted: bool,
    pub field: FieldModel,
    pub integrator: &'static str,
    pub truncation: Truncation,
    pub adaptive: bool,
    pub adapt_epsilon: f64,
    pub adapt_c: f64,
}

pub type ExactSolution = Arc<dyn Fn(f64, [f64; 2], [f64; 2]) -> f64 + Send + Sync>;

pub trait Scenario: Send + Sync {
    fn name(&self) -> &'static str;
    fn defaults(&self) -> ScenarioDefaults;
    /// Separable terms `g(x) h(v)` of `f(0)`; `h` is the full velocity factor.
    fn initial_terms(&self, dim: usize, custom: &PerturbedMaxwellian) -> Vec<SeparableTerm>;
    fn exact(&self) -> Option<ExactSolution> {
        None
    }
}

fn maxwellian(dim: usize, mean: Vec<f64>, sigma: f64) -> impl Fn([f64; 2]) -> f64 + Send + Sync + 'static {
    let c = (2.0 * PI * sigma * sigma).powf(-(dim as f64) / 2.0);
    move |v| {
        let r2: f64 = (0..dim).map(|s| (v[s] - mean.get(s).copied().unwrap_or(0.0)).powi(2)).sum();
        c * (-r2 / (2.0 * sigma * sigma)).exp()
    }
}

fn perturbed(dim: usize, p: &PerturbedMaxwellian) -> Vec<SeparableTerm> {
    let (a, k) = (p.amplitude, p.wavenumber);
    vec![SeparableTerm::new(
        move |x| 1.0 + (0..dim).map(|s| a * (k * x[s]).cos()).sum::<f64>(),
        maxwellian(dim, p.v_mean.clone(), p.v_sigma),
    )]
}

fn landau_defaults(dim: usize) -> ScenarioDefaults {
    ScenarioDefaults {
        dim,
        x_domain: vec![(0.0, 4.0 * PI); dim],
        v_domain: vec![(-6.0, 6.0); dim],
        n_x: vec![32; dim],
        n_v: vec![64; dim],
        degree: 2,
        tau: 1e-4,
        t_final: 40.0,
        alpha: 1.0,
        m: 0,
        weighted: true,
        field: FieldModel::Poisson,
        integrator: "bug",
        truncation: Truncation::Tolerance { epsilon: 1e-7 },
        adaptive: false,
        adapt_epsilon: 1e-3,
        adapt_c: 0.15,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Landau1d;

impl Scenario for Landau1d {
    fn name(&self) -> &'static str {
        "landau_1d"
    }

    fn defaults(&self) -> ScenarioDefaults {
        ScenarioDefaults {
            m: 2,
            truncation: Truncation::FixedRank { rank: 10 },
            ..landau_defaults(1)
        }
    }

    fn initial_terms(&self, _dim: usize, _custom: &PerturbedMaxwellian) -> Vec<SeparableTerm> {
        perturbed(1, &PerturbedMaxwellian::default())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Landau2d;

impl Scenario for Landau2d {
    fn name(&self) -> &'static str {
        "landau_2d"
    }

    fn defaults(&self) -> ScenarioDefaults {
        ScenarioDefaults { m: 3, ..landau_defaults(2) }
    }

    fn initial_terms(&self, _dim: usize, _custom: &PerturbedMaxwellian) -> Vec<SeparableTerm> {
        perturbed(2, &PerturbedMaxwellian::default())
    }
}

/// Free streaming of a displaced Maxwellian with `E ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreeTransport2d;

impl FreeTransport2d {
    pub const SIGMA_X: f64 = 0.5;
    pub const MU_X: [f64; 2] = [PI, 2.0 * PI];
    pub const SIGMA_V: f64 = 0.25;
    pub const MU_V: [f64; 2] = [PI, 0.0];

    fn g(x: [f64; 2]) -> f64 {
        let r2 = (x[0] - Self::MU_X[0]).powi(2) + (x[1] - Self::MU_X[1]).powi(2);
        (-r2 / (2.0 * Self::SIGMA_X * Self::SIGMA_X)).exp() / (2.0 * PI)
    }

    fn h(v: [f64; 2]) -> f64 {
        let r2 = (v[0] - Self::MU_V[0]).powi(2) + (v[1] - Self::MU_V[1]).powi(2);
        (-r2 / (2.0 * Self::SIGMA_V * Self::SIGMA_V)).exp() / (2.0 * PI)
    }
}

impl Scenario for FreeTransport2d {
    fn name(&self) -> &'static str {
        "free_transport_2d"
    }

    fn defaults(&self) -> ScenarioDefaults {
        ScenarioDefaults {
            n_x: vec![16; 2],
            n_v: vec![32; 2],
            tau: 5e-3,
            t_final: 2.0,
            alpha: 0.0,
            m: 0,
            weighted: false,
            field: FieldModel::Zero,
            truncation: Truncation::Tolerance { epsilon: 1e-4 },
            adaptive: true,
            ..landau_defaults(2)
        }
    }

    fn initial_terms(&self, _dim: usize, _custom: &PerturbedMaxwellian) -> Vec<SeparableTerm> {
        vec![SeparableTerm::new(Self::g, Self::h)]
    }

    fn exact(&self) -> Option<ExactSolution> {
        let l = 4.0 * PI;
        Some(Arc::new(move |t, x, v| {
            // characteristics wrap around the periodic box; sum the nearest images
            let mut g = 0.0;
            let y = [(x[0] - v[0] * t).rem_euclid(l), (x[1] - v[1] * t).rem_euclid(l)];
            for i in -1..=1 {
                for j in -1..=1 {
                    g += Self::g([y[0] + i as f64 * l, y[1] + j as f64 * l]);
                }
            }
            g * Self::h(v)
        }))
    }
}

/// Perturbed Maxwellian with parameters taken from the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Custom;

impl Scenario for Custom {
    fn name(&self) -> &'static str {
        "custom"
    }

    fn defaults(&self) -> ScenarioDefaults {
        ScenarioDefaults { m: 1, ..landau_defaults(1) }
    }

    fn initial_terms(&self, dim: usize, custom: &PerturbedMaxwellian) -> Vec<SeparableTerm> {
        perturbed(dim, custom)
    }
}

pub fn scenarios() -> Registry<dyn Scenario> {
    Registry::<dyn Scenario>::new("scenario")
        .with("landau_1d", || Box::new(Landau1d) as Box<dyn Scenario>)
        .with("landau_2d", || Box::new(Landau2d) as Box<dyn Scenario>)
        .with("free_transport_2d", || Box::new(FreeTransport2d) as Box<dyn Scenario>)
        .with("custom", || Box::new(Custom) as Box<dyn Scenario>)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_starts_at_initial_condition() {
        let exact = FreeTransport2d.exact().unwrap();
        let x = [3.0, 6.0];
        let v = [3.2, 0.1];
        let f0 = FreeTransport2d::g(x) * FreeTransport2d::h(v);
        assert!((exact(0.0, x, v) - f0).abs() < 1e-15);
        let shifted = [x[0] + v[0] * 0.5, x[1] + v[1] * 0.5];
        assert!((exact(0.5, shifted, v) - f0).abs() < 1e-15);
    }

    #[test]
    fn registry_names() {
        let names = scenarios().names();
        assert_eq!(names, vec!["landau_1d", "landau_2d", "free_transport_2d", "custom"]);
    }
}
