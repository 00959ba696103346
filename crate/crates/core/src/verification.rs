//! Numerical certificates: sampled local-minimality, descent gaps, finite
//! difference gradients and pre-activation interval checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{empirical_risk, Dataset, ForwardTrace, LossKind, Mlp};

/// Allowed risk decrease under perturbation; absorbs summation rounding.
pub const LOCAL_MIN_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            tolerance,
            samples: None,
            seed: None,
        }
    }

    /// Passes when `measured ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured <= tolerance, measured, tolerance)
    }

    /// Passes when `measured > tolerance`.
    pub fn above(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::new(name, measured > tolerance, measured, tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: String,
    pub checks: Vec<Check>,
    pub verdict: bool,
    pub warnings: Vec<String>,
}

impl Certificate {
    pub fn new(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            checks: Vec::new(),
            verdict: true,
            warnings: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.verdict &= check.passed;
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: Certificate) {
        for c in other.checks {
            self.push(c);
        }
        self.warnings.extend(other.warnings);
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Draws `samples` uniform perturbations of every parameter within
/// `±radius · max(1, ‖θ‖∞)` and checks that none lowers the risk by more than
/// [`LOCAL_MIN_TOL`]. Sample `k` uses its own generator seeded with `seed ^ k`.
pub fn perturbation_local_min_test(
    net: &Mlp,
    data: &Dataset,
    loss: LossKind,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<Certificate> {
    if !(radius >= 0.0) {
        return Err(Error::Precondition(format!(
            "radius must be nonnegative, got {radius}"
        )));
    }
    let mut cert = Certificate::new("perturbation");
    let base = empirical_risk(net, data, loss)?;
    let theta = net.params();
    let rho = radius * theta.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let worst = if radius == 0.0 || samples == 0 {
        cert.warnings
            .push("zero radius or no samples: the test is vacuous".into());
        0.0
    } else {
        (0..samples)
            .into_par_iter()
            .map(|k| -> Result<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
                let moved: Vec<f64> = theta
                    .iter()
                    .map(|t| t + rng.gen_range(-rho..=rho))
                    .collect();
                Ok(empirical_risk(&net.with_params(&moved)?, data, loss)? - base)
            })
            .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?
    };
    cert.push(Check {
        samples: Some(samples),
        seed: Some(seed),
        ..Check::new(
            "perturbation_local_min",
            worst >= LOCAL_MIN_TOL,
            worst,
            LOCAL_MIN_TOL,
        )
    });
    Ok(cert)
}

/// `risk(min) − risk(witness)`, passing when above `1e-12`.
pub fn descent_gap(min_risk: f64, witness_risk: f64) -> Check {
    Check::above("descent_gap", min_risk - witness_risk, 1e-12)
}

/// Largest relative error `|a − d| / max(1, |a|, |d|)` between the analytic
/// gradient and central differences with the given step.
pub fn fd_gradient_check<F, G>(f: F, grad: G, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Precondition(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic = grad(point);
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} coordinates",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        x[i] = point[i] + step;
        let up = f(&x);
        x[i] = point[i] - step;
        let down = f(&x);
        x[i] = point[i];
        let d = (up - down) / (2.0 * step);
        worst = worst.max((a - d).abs() / 1f64.max(a.abs()).max(d.abs()));
    }
    Ok(worst)
}

/// All hidden pre-activations lie strictly inside `(lo, hi)`; the measured value is the smallest margin.
pub fn trace_interval_check(trace: &ForwardTrace, lo: f64, hi: f64) -> Check {
    let margin = trace
        .hidden_pre()
        .iter()
        .flat_map(|z| z.iter())
        .map(|&v| (v - lo).min(hi - v))
        .fold(f64::INFINITY, f64::min);
    Check::new("trace_interval", margin > 0.0, margin, 0.0)
}
