//! Activation-pattern cells of one-hidden-layer networks.
//!
//! Inside a cell every hidden unit stays on one linear piece for every sample,
//! so with a positively homogeneous activation the prediction is
//! `Σ_k W₂ₖ Aₖᵢ (W₁ₖ x̃ᵢ) = Ŵ · (A_{·,i} ⊗ x̃ᵢ)` with `Ŵ` the rows of
//! `diag(W₂) W₁` laid end to end. The risk is then convex in `Ŵ`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activations::PiecewiseLinear;
use crate::error::{Error, Result};
use crate::network::{gradient_matrix, risk_of_predictions, LossKind, Mlp};
use crate::numeric::{augment_ones, pinv, sign};

/// Distance to a breakpoint below which a pre-activation counts as on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CellSignature {
    /// One `d_j × n` slope matrix per hidden layer.
    pub patterns: Vec<DMatrix<f64>>,
    /// `(layer, unit, sample)` triples sitting on a breakpoint.
    pub boundary: BTreeSet<(usize, usize, usize)>,
}

impl CellSignature {
    pub fn is_interior(&self) -> bool {
        self.boundary.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientPoint {
    pub w_hat: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedData {
    pub x_hat: DMatrix<f64>,
}

pub fn activation_pattern(net: &Mlp, x: &DMatrix<f64>) -> Result<CellSignature> {
    let trace = net.forward(x)?;
    let act = &net.activation;
    let mut patterns = Vec::new();
    let mut boundary = BTreeSet::new();
    for (layer, z) in trace.hidden_pre().iter().enumerate() {
        let cols: Vec<(Vec<f64>, Vec<usize>)> = (0..z.ncols())
            .into_par_iter()
            .map(|i| {
                let mut slopes = Vec::with_capacity(z.nrows());
                let mut hits = Vec::new();
                for k in 0..z.nrows() {
                    let v = z[(k, i)];
                    slopes.push(act.slope_at(v).0);
                    if act
                        .breakpoints()
                        .iter()
                        .any(|b| (v - b).abs() < BOUNDARY_TOL)
                    {
                        hits.push(k);
                    }
                }
                (slopes, hits)
            })
            .collect();
        let mut a = DMatrix::zeros(z.nrows(), z.ncols());
        for (i, (slopes, hits)) in cols.into_iter().enumerate() {
            a.column_mut(i).copy_from_slice(&slopes);
            boundary.extend(hits.into_iter().map(|k| (layer, k, i)));
        }
        patterns.push(a);
    }
    Ok(CellSignature { patterns, boundary })
}

/// Rows of `diag(W₂) W₁` concatenated; `w2` is a single row.
pub fn quotient_map(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<QuotientPoint> {
    if w2.nrows() != 1 || w2.ncols() != w1.nrows() {
        return Err(Error::Unsupported(format!(
            "quotient map needs a single output row over {} units, got {:?}",
            w1.nrows(),
            w2.shape()
        )));
    }
    let d = w1.ncols();
    let w_hat = DVector::from_fn(w1.len(), |idx, _| {
        let (k, c) = (idx / d, idx % d);
        w2[k] * w1[(k, c)]
    });
    Ok(QuotientPoint { w_hat })
}

/// Column `i` is `A_{·,i} ⊗ x_i`.
pub fn lift_data(sig: &CellSignature, x: &DMatrix<f64>) -> Result<LiftedData> {
    if sig.patterns.len() != 1 {
        return Err(Error::Unsupported(
            "lifting needs exactly one hidden layer".into(),
        ));
    }
    if !sig.is_interior() {
        return Err(Error::BoundaryCell);
    }
    let a = &sig.patterns[0];
    if a.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "pattern has {} samples, data {}",
            a.ncols(),
            x.ncols()
        )));
    }
    let d = x.nrows();
    let x_hat = DMatrix::from_fn(a.nrows() * d, x.ncols(), |r, i| {
        a[(r / d, i)] * x[(r % d, i)]
    });
    Ok(LiftedData { x_hat })
}

fn predictions(q: &QuotientPoint, lifted: &LiftedData) -> DMatrix<f64> {
    let row = q.w_hat.transpose() * &lifted.x_hat;
    DMatrix::from_row_slice(1, row.len(), row.as_slice())
}

pub fn reformulated_risk(
    q: &QuotientPoint,
    lifted: &LiftedData,
    y: &DMatrix<f64>,
    loss: LossKind,
) -> Result<f64> {
    let pred = predictions(q, lifted);
    risk_of_predictions(&pred, y, loss)
}

/// `‖X̂ ∇‖` with `∇ᵢ` the loss gradient at the prediction `Ŵ X̂ᵢ`.
pub fn quotient_gradient_residual(
    q: &QuotientPoint,
    lifted: &LiftedData,
    y: &DMatrix<f64>,
    loss: LossKind,
) -> f64 {
    let pred = predictions(q, lifted);
    let g = gradient_matrix(&pred, y, loss);
    (&lifted.x_hat * g.transpose()).norm()
}

/// Least-squares minimiser of the reformulated squared risk; its risk bounds
/// from below every network realising this pattern.
pub fn solve_cell_optimum(lifted: &LiftedData, y: &DMatrix<f64>) -> Result<(QuotientPoint, f64)> {
    if y.nrows() != 1 {
        return Err(Error::Unsupported(
            "cell optimum needs a single output".into(),
        ));
    }
    let w = y * pinv(&lifted.x_hat);
    let q = QuotientPoint {
        w_hat: w.row(0).transpose(),
    };
    let risk = reformulated_risk(&q, lifted, y, LossKind::Squared)?;
    Ok((q, risk))
}

/// One-hidden-layer, single-output parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowParams {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `1 × d₁`
    pub w2: DMatrix<f64>,
    pub b2: f64,
}

impl ShallowParams {
    pub fn from_net(net: &Mlp) -> Result<Self> {
        if net.depth() != 2 || net.dims[2] != 1 {
            return Err(Error::Unsupported(format!(
                "cell analysis needs one hidden layer and one output, got dims {:?}",
                net.dims
            )));
        }
        Ok(Self {
            w1: net.weights[0].clone(),
            b1: net.biases[0].clone(),
            w2: net.weights[1].clone(),
            b2: net.biases[1][0],
        })
    }

    pub fn to_net(&self, act: &PiecewiseLinear) -> Result<Mlp> {
        Mlp::new(
            vec![self.w1.clone(), self.w2.clone()],
            vec![self.b1.clone(), DVector::from_element(1, self.b2)],
            act.clone(),
        )
    }

    /// `[W₁ b₁]`
    pub fn w1_aug(&self) -> DMatrix<f64> {
        let mut m = self.w1.clone().insert_column(self.w1.ncols(), 0.0);
        m.set_column(self.w1.ncols(), &self.b1);
        m
    }

    /// Multiplies row `unit` of `[W₁ b₁]` by `c` and divides `W₂` at `unit` by `c`.
    pub fn rescaled(&self, unit: usize, c: f64) -> Self {
        let mut p = self.clone();
        p.w1.row_mut(unit).scale_mut(c);
        p.b1[unit] *= c;
        p.w2[unit] /= c;
        p
    }

    /// Quotient point over `[x; 1]` with `b₂` appended.
    pub fn quotient(&self) -> QuotientPoint {
        let q = quotient_map(&self.w1_aug(), &self.w2).expect("shapes checked at construction");
        let n = q.w_hat.len();
        QuotientPoint {
            w_hat: q.w_hat.insert_row(n, self.b2),
        }
    }
}

fn require_homogeneous(act: &PiecewiseLinear) -> Result<()> {
    if act.is_positively_homogeneous() {
        Ok(())
    } else {
        Err(Error::Unsupported(
            "the cell reformulation needs a positively homogeneous activation".into(),
        ))
    }
}

/// Quotient point and lifted data of a one-hidden-layer, single-output net,
/// using `[x; 1]` inputs and an extra coordinate for the output bias.
pub fn cell_view(
    net: &Mlp,
    x: &DMatrix<f64>,
) -> Result<(QuotientPoint, LiftedData, CellSignature)> {
    require_homogeneous(&net.activation)?;
    let p = ShallowParams::from_net(net)?;
    let sig = activation_pattern(net, x)?;
    let lifted = lift_data(&sig, &augment_ones(x))?;
    let x_hat = lifted.x_hat.clone().insert_row(lifted.x_hat.nrows(), 1.0);
    Ok((p.quotient(), LiftedData { x_hat }, sig))
}

pub fn equivalence_check(p1: &ShallowParams, p2: &ShallowParams) -> bool {
    equivalent_within(p1, p2, 1e-12)
}

/// Same quotient point up to `tol · (1 + max|Ŵ|)` and the same sign pattern of `W₂`.
pub fn equivalent_within(p1: &ShallowParams, p2: &ShallowParams, tol: f64) -> bool {
    if p1.w1.shape() != p2.w1.shape() {
        return false;
    }
    let (q1, q2) = (p1.quotient().w_hat, p2.quotient().w_hat);
    let scale = 1.0 + q1.amax().max(q2.amax());
    let close = (q1 - q2).amax() <= tol * scale;
    let signs = p1
        .w2
        .iter()
        .zip(p2.w2.iter())
        .all(|(a, b)| sign(*a) == sign(*b));
    close && signs
}

/// Positive `c` with `b ≈ c·a`, if any.
fn positive_ratio(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let k = a.iamax();
    if a[k] == 0.0 {
        return None;
    }
    let c = b[k] / a[k];
    let scale = 1.0 + a.amax().max(b.amax());
    (c > 0.0 && (b - a * c).amax() <= 1e-12 * scale).then_some(c)
}

/// Piecewise path from `p1` to `p2` made of one move per unit that differs.
/// Each move rescales a single unit, interpolating the factor geometrically
/// over `steps` points. The path starts at `p1` and ends exactly at `p2`.
pub fn build_valley_path(
    p1: &ShallowParams,
    p2: &ShallowParams,
    steps: usize,
) -> Result<Vec<ShallowParams>> {
    if !equivalence_check(p1, p2) {
        return Err(Error::NotEquivalent);
    }
    let steps = steps.max(1);
    let mut path = vec![p1.clone()];
    if p1 == p2 {
        return Ok(path);
    }
    let (a1, a2) = (p1.w1_aug(), p2.w1_aug());
    let mut cur = p1.clone();
    for k in 0..p1.w1.nrows() {
        let (r1, r2) = (a1.row(k).transpose(), a2.row(k).transpose());
        if r1 == r2 && p1.w2[k] == p2.w2[k] {
            continue;
        }
        let start = cur.clone();
        let ratio = if p1.w2[k] != 0.0 {
            Some(p1.w2[k] / p2.w2[k])
        } else {
            positive_ratio(&r1, &r2)
        };
        for s in 1..=steps {
            let tau = s as f64 / steps as f64;
            let mut next = start.clone();
            match ratio {
                Some(c) => next = start.rescaled(k, c.powf(tau)),
                // an unused unit may move freely without touching the risk
                None => {
                    let row = &r1 * (1.0 - tau) + &r2 * tau;
                    next.w1
                        .row_mut(k)
                        .copy_from(&row.rows(0, p1.w1.ncols()).transpose());
                    next.b1[k] = row[p1.w1.ncols()];
                }
            }
            if s == steps {
                next.w1.row_mut(k).copy_from(&p2.w1.row(k));
                next.b1[k] = p2.b1[k];
                next.w2[k] = p2.w2[k];
            }
            path.push(next);
        }
        cur = path.last().unwrap().clone();
    }
    let last = path.last_mut().unwrap();
    last.b2 = p2.b2;
    Ok(path)
}

/// True when random 2-4-1 networks all induce the same pattern on fixed random data.
pub fn linear_collapse_check(act: &PiecewiseLinear, trials: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0));
    let mut first: Option<Vec<DMatrix<f64>>> = None;
    for _ in 0..trials {
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let (w1, w2) = (draw(4, 2), draw(1, 4));
        let b1 = draw(4, 1).column(0).into_owned();
        let net = Mlp::new(vec![w1, w2], vec![b1, DVector::zeros(1)], act.clone())?;
        let sig = activation_pattern(&net, &x)?;
        match &first {
            None => first = Some(sig.patterns),
            Some(p) if *p != sig.patterns => return Ok(false),
            Some(_) => {}
        }
    }
    Ok(true)
}
