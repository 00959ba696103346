//! Explicit spurious local minima built from the affine baseline, and explicit
//! points of strictly lower risk that show the minima are not global.
//!
//! Minima route every hidden pre-activation into one linear piece so that the
//! network reproduces `W̃X̃`. Descent points split one output row with a
//! separation `(I, J, β)` and move the two halves in opposite directions.
//! Deeper networks pass values through identity-like layers, and general
//! piecewise linear activations are handled by shrinking all pre-activations
//! into the two-piece neighbourhood of a turning point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{PiecewiseLinear, TurningPoint, TwoPiece};
use crate::error::{Error, Result};
use crate::linear_baseline::{fit_linear, select_nonzero_residual_row, LinearFit};
use crate::network::{empirical_risk, Dataset, LossKind, Mlp};
use crate::separation::{separate, size_constants, DescentConstants, SeparationResult};

const MAX_HALVINGS: usize = 200;
/// A descent point must beat the baseline risk by more than this.
pub const DESCENT_MARGIN: f64 = 1e-12;

/// A dataset, a loss and the affine baseline fitted to them.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: Dataset,
    pub loss: LossKind,
    pub fit: LinearFit,
}

impl Problem {
    pub fn new(data: Dataset, loss: LossKind, tol: f64) -> Result<Self> {
        let fit = fit_linear(&data, loss, tol)?;
        Ok(Self { data, loss, fit })
    }

    pub fn xor() -> Self {
        Self::new(Dataset::xor(), LossKind::Squared, 1e-8).expect("xor fit")
    }

    pub fn risk(&self, net: &Mlp) -> Result<f64> {
        empirical_risk(net, &self.data, self.loss)
    }

    /// The baseline leaves a nonzero residual, so constructed minima are strictly suboptimal.
    pub fn admits_spurious(&self) -> bool {
        self.fit.residual_norm() > 1e-8
    }

    /// `min(0, min W̃X̃) − 1`
    pub fn default_eta(&self) -> f64 {
        self.fit.y_tilde.min().min(0.0) - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    CorollaryEqualSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointKind {
    Minimum,
    DescentWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub eta: f64,
    pub eta_i: Vec<f64>,
    pub lambda: Option<f64>,
    pub m: Option<f64>,
    pub m_tilde: Option<f64>,
    pub alpha_scales: Vec<f64>,
    pub turning_point: Option<TurningPoint>,
    /// `-1` when the construction lives on the left of the turning point.
    pub side: i8,
    /// Output row carrying the descent split.
    pub split_row: Option<usize>,
    pub descent: Option<DescentConstants>,
}

impl ConstructionParams {
    fn new(eta: f64) -> Self {
        Self {
            eta,
            eta_i: Vec::new(),
            lambda: None,
            m: None,
            m_tilde: None,
            alpha_scales: Vec::new(),
            turning_point: None,
            side: 1,
            split_row: None,
            descent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedPoint {
    pub net: Mlp,
    pub kind: PointKind,
    pub stage: Stage,
    pub risk: f64,
    pub baseline_risk: f64,
    pub spurious: bool,
    pub params: ConstructionParams,
}

impl CertifiedPoint {
    fn new(
        p: &Problem,
        net: Mlp,
        kind: PointKind,
        stage: Stage,
        params: ConstructionParams,
    ) -> Result<Self> {
        let risk = p.risk(&net)?;
        Ok(Self {
            net,
            kind,
            stage,
            risk,
            baseline_risk: p.fit.risk,
            spurious: p.admits_spurious(),
            params,
        })
    }
}

/// Free parameters of a minimum; unset values fall back to the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimumOptions {
    pub eta: Option<f64>,
    /// Multiplies the default scale `M = max(1, 2‖Ŵ′₁X + b̂′₁‖_F / σ)`; must be ≥ 1.
    pub m_factor: f64,
    pub alpha_scales: Option<Vec<f64>>,
}

impl Default for MinimumOptions {
    fn default() -> Self {
        Self {
            eta: None,
            m_factor: 1.0,
            alpha_scales: None,
        }
    }
}

fn check_dims(p: &Problem, dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::Shape(format!(
            "need at least one hidden layer, got dims {dims:?}"
        )));
    }
    if dims[0] != p.data.d_x() || *dims.last().unwrap() != p.data.d_y() {
        return Err(Error::Shape(format!(
            "dims {dims:?} do not match data with d_X = {}, d_Y = {}",
            p.data.d_x(),
            p.data.d_y()
        )));
    }
    Ok(())
}

fn require_widths(dims: &[usize], first: usize, rest: usize) -> Result<()> {
    for (j, &w) in dims[1..dims.len() - 1].iter().enumerate() {
        let required = if j == 0 { first } else { rest };
        if w < required {
            return Err(Error::WidthViolation {
                layer: j + 1,
                width: w,
                required,
            });
        }
    }
    Ok(())
}

fn check_eta(p: &Problem, eta: f64) -> Result<()> {
    if !(eta < 0.0) || p.fit.y_tilde.iter().any(|&y| y - eta <= 0.0) {
        return Err(Error::Precondition(format!(
            "η = {eta} must be negative and below every baseline prediction"
        )));
    }
    Ok(())
}

/// Two-piece form used near the turning point, and the side (+1 right, −1 left) that keeps `s₊ ≠ 0`.
pub fn local_two_piece(tp: &TurningPoint) -> (TwoPiece, i8) {
    if tp.s_plus != 0.0 {
        (
            TwoPiece {
                s_minus: tp.s_minus,
                s_plus: tp.s_plus,
            },
            1,
        )
    } else {
        (
            TwoPiece {
                s_minus: -tp.s_plus,
                s_plus: -tp.s_minus,
            },
            -1,
        )
    }
}

/// The all-active minimum for a two-piece activation with `s₊ ≠ 0`, any depth.
fn two_piece_minimum(fit: &LinearFit, dims: &[usize], tp: &TwoPiece, eta: f64) -> Result<Mlp> {
    let (dx, dy) = (fit.d_x(), fit.d_y());
    let l = dims.len() - 1;
    let inv = 1.0 / tp.s_plus;
    let mut w1 = DMatrix::zeros(dims[1], dx);
    let mut b1 = DVector::from_element(dims[1], -eta);
    for i in 0..dy {
        w1.row_mut(i).copy_from(&fit.w_tilde.view((i, 0), (1, dx)));
        b1[i] = fit.w_tilde[(i, dx)] - eta;
    }
    let mut weights = vec![w1];
    let mut biases = vec![b1];
    for j in 2..l {
        let mut w = DMatrix::zeros(dims[j], dims[j - 1]);
        for i in 0..dims[j] {
            w[(i, i.min(dy))] = inv;
        }
        weights.push(w);
        biases.push(DVector::zeros(dims[j]));
    }
    let mut w = DMatrix::zeros(dy, dims[l - 1]);
    for i in 0..dy {
        w[(i, i)] = inv;
    }
    weights.push(w);
    biases.push(DVector::from_element(dy, eta));
    Mlp::new(weights, biases, tp.activation())
}

fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(perm[r], c)])
}

/// Undoes a row permutation on the output layer.
fn unpermute_output(mut net: Mlp, perm: &[usize]) -> Mlp {
    let l = net.depth() - 1;
    let w = net.weights[l].clone();
    let b = net.biases[l].clone();
    for (r, &orig) in perm.iter().enumerate() {
        net.weights[l].row_mut(orig).copy_from(&w.row(r));
        net.biases[l][orig] = b[r];
    }
    net
}

fn negate_hidden(mut net: Mlp) -> Mlp {
    for j in 0..net.depth() - 1 {
        net.weights[j].neg_mut();
        net.biases[j].neg_mut();
    }
    net
}

/// Replaces `(s₋, 0)` by the reflected `(0, −s₋)` so that `s₊ ≠ 0`.
fn normalize(tp: &TwoPiece) -> (TwoPiece, bool) {
    if tp.s_plus == 0.0 {
        (tp.reflected(), true)
    } else {
        (*tp, false)
    }
}

/// Maps a network built for the reflected activation back to the original one.
fn finish_reflection(net: Mlp, original: &TwoPiece, reflected: bool) -> Mlp {
    let mut net = if reflected { negate_hidden(net) } else { net };
    net.activation = original.activation();
    net
}

fn baseline_row_eta(y_tilde: &DMatrix<f64>, i: usize) -> f64 {
    y_tilde.row(i).min().min(0.0) - 1.0
}

struct DescentCore {
    net: Mlp,
    eta: f64,
    eta_i: Vec<f64>,
}

/// One-hidden-layer descent point in permuted row order (split row first).
/// Uses the three-unit layout when `s₋ + s₊ = 0` and the two-unit layout otherwise.
fn assemble_descent(
    w: &DMatrix<f64>,
    y_tilde: &DMatrix<f64>,
    d1: usize,
    tp: &TwoPiece,
    sep: &SeparationResult,
    c: &DescentConstants,
) -> Result<DescentCore> {
    let (dy, dx) = (w.nrows(), w.ncols() - 1);
    let equal_slope = tp.s_minus + tp.s_plus == 0.0;
    let lead = if equal_slope { 3 } else { 2 };
    if d1 < dy - 1 + lead {
        return Err(Error::WidthViolation {
            layer: 1,
            width: d1,
            required: dy - 1 + lead,
        });
    }
    let sp = tp.s_plus;
    let row = w.view((0, 0), (1, dx)).into_owned();
    let shifted = &row - c.alpha * sep.beta.transpose();
    let wb = w[(0, dx)];
    let mut w1 = DMatrix::zeros(d1, dx);
    let mut b1 = DVector::zeros(d1);
    let mut w2 = DMatrix::zeros(dy, d1);
    let mut b2 = DVector::zeros(dy);
    let eta = baseline_row_eta(y_tilde, 0);
    w1.row_mut(0).copy_from(&shifted);
    b1[0] = wb - c.eta1 + c.gamma;
    w1.row_mut(lead - 1).copy_from(&(-&shifted));
    b1[lead - 1] = -wb + c.eta1 + c.gamma;
    if equal_slope {
        w1.row_mut(1).copy_from(&row);
        b1[1] = wb - eta;
        w2[(0, 0)] = 0.5 / sp;
        w2[(0, 1)] = 1.0 / sp;
        w2[(0, 2)] = -0.5 / sp;
        b2[0] = eta;
    } else {
        let s = tp.s_plus + tp.s_minus;
        w2[(0, 0)] = 1.0 / s;
        w2[(0, 1)] = -1.0 / s;
        b2[0] = c.eta1;
    }
    let mut eta_i = Vec::with_capacity(dy - 1);
    for i in 1..dy {
        let unit = i + lead - 1;
        let e = baseline_row_eta(y_tilde, i);
        w1.row_mut(unit).copy_from(&w.view((i, 0), (1, dx)));
        b1[unit] = w[(i, dx)] - e;
        w2[(i, unit)] = 1.0 / sp;
        b2[i] = e;
        eta_i.push(e);
    }
    let net = Mlp::new(vec![w1, w2], vec![b1, b2], tp.activation())?;
    Ok(DescentCore { net, eta, eta_i })
}

struct SplitData {
    row: usize,
    perm: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
    w: DMatrix<f64>,
    y_tilde: DMatrix<f64>,
}

fn split_data(p: &Problem) -> Result<SplitData> {
    if !p.data.has_distinct_columns() {
        return Err(Error::Precondition(
            "samples must be pairwise distinct".into(),
        ));
    }
    let (row, perm) = select_nonzero_residual_row(&p.fit)?;
    Ok(SplitData {
        row,
        u: p.fit.v.row(row).iter().cloned().collect(),
        v: p.fit.y_tilde.row(row).iter().cloned().collect(),
        w: permute_rows(&p.fit.w_tilde, &perm),
        y_tilde: permute_rows(&p.fit.y_tilde, &perm),
        perm,
    })
}

/// `(s₊ − s₋)/(s₊ + s₋)`, or 1 for the equal-slope layout.
pub fn slope_ratio(tp: &TwoPiece) -> f64 {
    let s = tp.s_plus + tp.s_minus;
    if s == 0.0 {
        1.0
    } else {
        (tp.s_plus - tp.s_minus) / s
    }
}

/// Separation of the selected output row, as consumed by the descent builders.
pub fn descent_separation(p: &Problem) -> Result<(usize, SeparationResult)> {
    let s = split_data(p)?;
    Ok((s.row, separate(&s.u, &s.v, &p.data.x)?))
}

struct SearchedDescent {
    core: DescentCore,
    consts: DescentConstants,
    row: usize,
}

/// Halves `α` until the assembled one-hidden-layer point beats the baseline.
fn search_descent(p: &Problem, d1: usize, tp: &TwoPiece) -> Result<SearchedDescent> {
    let s = split_data(p)?;
    let sep = separate(&s.u, &s.v, &p.data.x)?;
    let ratio = slope_ratio(tp);
    let mut start = 1.0;
    let mut last_gap = f64::NAN;
    for _ in 0..MAX_HALVINGS {
        let consts = size_constants(&sep, &s.u, &s.v, &p.data.x, ratio, start)?;
        let core = assemble_descent(&s.w, &s.y_tilde, d1, tp, &sep, &consts)?;
        let net = unpermute_output(core.net.clone(), &s.perm);
        last_gap = p.fit.risk - p.risk(&net)?;
        if last_gap > DESCENT_MARGIN {
            return Ok(SearchedDescent {
                core: DescentCore { net, ..core },
                consts,
                row: s.row,
            });
        }
        start = 0.5 * consts.alpha;
    }
    Err(Error::StrictDecreaseNotAchieved { gap: last_gap })
}

/// Stacks pass-through layers after a one-hidden-layer net, shifting by `λ` to keep them positive.
fn lift(
    core: &Mlp,
    x: &DMatrix<f64>,
    dims: &[usize],
    tp: &TwoPiece,
    lambda: Option<f64>,
) -> Result<(Mlp, Option<f64>)> {
    let l = dims.len() - 1;
    if l == 2 {
        return Ok((core.clone(), None));
    }
    let dy = *dims.last().unwrap();
    let out = core.predict(x)?;
    let lambda = lambda.unwrap_or_else(|| (-out.min()).max(0.0) + 1.0);
    let inv = 1.0 / tp.s_plus;
    let mut weights = vec![core.weights[0].clone()];
    let mut biases = vec![core.biases[0].clone()];
    let mut w = DMatrix::zeros(dims[2], dims[1]);
    w.view_mut((0, 0), (dy, dims[1]))
        .copy_from(&core.weights[1]);
    let mut b = DVector::from_element(dims[2], lambda);
    for i in 0..dy {
        b[i] += core.biases[1][i];
    }
    weights.push(w);
    biases.push(b);
    for j in 3..=l {
        let rows = if j == l { dy } else { dims[j] };
        let mut w = DMatrix::zeros(rows, dims[j - 1]);
        for i in 0..rows {
            w[(i, i.min(dy))] = inv;
        }
        weights.push(w);
        biases.push(if j == l {
            DVector::from_element(dy, -lambda)
        } else {
            DVector::zeros(rows)
        });
    }
    Ok((Mlp::new(weights, biases, tp.activation())?, Some(lambda)))
}

/// Re-expresses a two-piece network inside the neighbourhood of the turning
/// point `tp` of `act`. Layer `j` is scaled by `scales[j]`; `side = −1` uses the
/// left neighbourhood.
fn embed(
    net: &Mlp,
    act: &PiecewiseLinear,
    tp: &TurningPoint,
    side: i8,
    scales: &[f64],
) -> Result<Mlp> {
    let l = net.depth();
    let eps = side as f64;
    let ht = act.eval(tp.t);
    let mut k = 1.0;
    let mut weights = Vec::with_capacity(l);
    let mut biases = Vec::with_capacity(l);
    for j in 0..l - 1 {
        let c = scales[j];
        k *= c;
        let w = &net.weights[j] * (eps * c);
        let mut b = &net.biases[j] * (eps * k);
        b.add_scalar_mut(tp.t);
        if j > 0 {
            let row_sums = &net.weights[j] * DVector::from_element(net.weights[j].ncols(), 1.0);
            b -= row_sums * (eps * c * ht);
        }
        weights.push(w);
        biases.push(b);
    }
    let w_out = &net.weights[l - 1];
    let row_sums = w_out * DVector::from_element(w_out.ncols(), 1.0);
    weights.push(w_out / k);
    biases.push(&net.biases[l - 1] - row_sums * (ht / k));
    Mlp::new(weights, biases, act.clone())
}

fn sigma_scale(pre: &DMatrix<f64>, sigma: f64) -> f64 {
    (2.0 * pre.norm() / sigma).max(1.0)
}

pub fn build_stage1_minimum(p: &Problem, dims: &[usize], tp: &TwoPiece) -> Result<CertifiedPoint> {
    build_stage1_minimum_with_eta(p, dims, tp, p.default_eta())
}

pub fn build_stage1_minimum_with_eta(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    eta: f64,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    if dims.len() != 3 {
        return Err(Error::Shape(
            "a one-hidden-layer construction needs three dims".into(),
        ));
    }
    build_minimum_two_piece(p, dims, tp, eta, Stage::S1)
}

pub fn build_stage2_minimum(p: &Problem, dims: &[usize], tp: &TwoPiece) -> Result<CertifiedPoint> {
    build_stage2_minimum_with_eta(p, dims, tp, p.default_eta())
}

pub fn build_stage2_minimum_with_eta(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    eta: f64,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    build_minimum_two_piece(p, dims, tp, eta, Stage::S2)
}

fn build_minimum_two_piece(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    eta: f64,
    stage: Stage,
) -> Result<CertifiedPoint> {
    let dy = p.data.d_y();
    require_widths(dims, dy + 1, dy + 1)?;
    check_eta(p, eta)?;
    let (eff, reflected) = normalize(tp);
    let net = finish_reflection(two_piece_minimum(&p.fit, dims, &eff, eta)?, tp, reflected);
    let mut params = ConstructionParams::new(eta);
    params.side = if reflected { -1 } else { 1 };
    CertifiedPoint::new(p, net, PointKind::Minimum, stage, params)
}

/// Assembles the one-hidden-layer descent point from explicit constants.
/// `consts` must be sized with [`slope_ratio`] of the activation after replacing
/// `(s₋, 0)` by `(0, −s₋)`, and `sep` must come from [`descent_separation`].
pub fn build_stage1_descent(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    sep: &SeparationResult,
    consts: &DescentConstants,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let s = split_data(p)?;
    let (eff, reflected) = normalize(tp);
    let core = assemble_descent(&s.w, &s.y_tilde, dims[1], &eff, sep, consts)?;
    let net = finish_reflection(unpermute_output(core.net, &s.perm), tp, reflected);
    let stage = if eff.s_minus + eff.s_plus == 0.0 {
        Stage::CorollaryEqualSlope
    } else {
        Stage::S1
    };
    let mut params = ConstructionParams::new(core.eta);
    params.eta_i = core.eta_i;
    params.descent = Some(*consts);
    params.split_row = Some(s.row);
    params.side = if reflected { -1 } else { 1 };
    CertifiedPoint::new(p, net, PointKind::DescentWitness, stage, params)
}

fn descent_two_piece(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    lambda: Option<f64>,
    stage: Stage,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let dy = p.data.d_y();
    if tp.s_minus + tp.s_plus == 0.0 {
        require_widths(dims, dy + 2, dy + 1)?;
    } else {
        require_widths(dims, dy + 1, dy + 1)?;
    }
    let (eff, reflected) = normalize(tp);
    let found = search_descent(p, dims[1], &eff)?;
    let (net, lambda) = lift(&found.core.net, &p.data.x, dims, &eff, lambda)?;
    let net = finish_reflection(net, tp, reflected);
    let mut params = ConstructionParams::new(found.core.eta);
    params.eta_i = found.core.eta_i;
    params.lambda = lambda;
    params.descent = Some(found.consts);
    params.split_row = Some(found.row);
    params.side = if reflected { -1 } else { 1 };
    let point = CertifiedPoint::new(p, net, PointKind::DescentWitness, stage, params)?;
    verify_decrease(p, point)
}

fn verify_decrease(p: &Problem, point: CertifiedPoint) -> Result<CertifiedPoint> {
    let gap = p.fit.risk - point.risk;
    if gap > DESCENT_MARGIN {
        Ok(point)
    } else {
        Err(Error::StrictDecreaseNotAchieved { gap })
    }
}

/// One-hidden-layer descent point with `α` found by verified halving.
pub fn stage1_descent(p: &Problem, dims: &[usize], tp: &TwoPiece) -> Result<CertifiedPoint> {
    if dims.len() != 3 {
        return Err(Error::Shape(
            "a one-hidden-layer construction needs three dims".into(),
        ));
    }
    if tp.s_minus + tp.s_plus == 0.0 {
        return Err(Error::NoAdmissibleTurningPoint);
    }
    descent_two_piece(p, dims, tp, None, Stage::S1)
}

/// Descent point for any depth: the one-hidden-layer point followed by pass-through layers.
pub fn stage2_descent(p: &Problem, dims: &[usize], tp: &TwoPiece) -> Result<CertifiedPoint> {
    stage2_descent_with_lambda(p, dims, tp, None)
}

pub fn stage2_descent_with_lambda(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    lambda: Option<f64>,
) -> Result<CertifiedPoint> {
    if tp.s_minus + tp.s_plus == 0.0 {
        return Err(Error::NoAdmissibleTurningPoint);
    }
    descent_two_piece(p, dims, tp, lambda, Stage::S2)
}

/// Lifts an existing one-hidden-layer descent point to the depth given by `dims`.
pub fn build_stage2_descent(
    p: &Problem,
    dims: &[usize],
    tp: &TwoPiece,
    stage1: &CertifiedPoint,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    require_widths(dims, stage1.net.dims[1], p.data.d_y() + 1)?;
    if stage1.net.depth() != 2 || stage1.net.dims[1] != dims[1] {
        return Err(Error::Shape(
            "stage-one point must have the same first hidden layer".into(),
        ));
    }
    let (eff, reflected) = normalize(tp);
    let core = if reflected {
        negate_hidden(stage1.net.clone())
    } else {
        stage1.net.clone()
    };
    let mut core = core;
    core.activation = eff.activation();
    let (net, lambda) = lift(&core, &p.data.x, dims, &eff, None)?;
    let net = finish_reflection(net, tp, reflected);
    let mut params = stage1.params.clone();
    params.lambda = lambda;
    CertifiedPoint::new(p, net, PointKind::DescentWitness, Stage::S2, params)
}

pub fn build_stage3_minimum(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    build_stage3_minimum_with(p, dims, act, &MinimumOptions::default())
}

pub fn build_stage3_minimum_with(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
    opts: &MinimumOptions,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let dy = p.data.d_y();
    require_widths(dims, dy + 1, dy + 1)?;
    let tp = act.find_turning_point()?;
    let (local, side) = local_two_piece(&tp);
    let eta = opts.eta.unwrap_or_else(|| p.default_eta());
    check_eta(p, eta)?;
    let hidden = dims.len() - 2;
    let alphas = opts
        .alpha_scales
        .clone()
        .unwrap_or_else(|| vec![0.5; hidden - 1]);
    if alphas.len() != hidden - 1 || alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::Precondition(format!(
            "need {} layer scales in (0, 1], got {alphas:?}",
            hidden - 1
        )));
    }
    if !(opts.m_factor >= 1.0) {
        return Err(Error::Precondition("M factor must be at least 1".into()));
    }
    let base = two_piece_minimum(&p.fit, dims, &local, eta)?;
    let pre1 = base.forward(&p.data.x)?.pre.swap_remove(0);
    let m = sigma_scale(&pre1, tp.sigma) * opts.m_factor;
    let scales: Vec<f64> = std::iter::once(1.0 / m)
        .chain(alphas.iter().cloned())
        .collect();
    let net = embed(&base, act, &tp, side, &scales)?;
    let mut params = ConstructionParams::new(eta);
    params.m = Some(m);
    params.alpha_scales = alphas;
    params.turning_point = Some(tp);
    params.side = side;
    CertifiedPoint::new(p, net, PointKind::Minimum, Stage::S3, params)
}

pub fn build_stage3_descent(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    build_stage3_descent_with(p, dims, act, 1.0, 1.0)
}

/// Descent point for a general piecewise linear activation; `m_factor` and
/// `m_tilde_factor` (both ≥ 1) scale the default shrink factors.
pub fn build_stage3_descent_with(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
    m_factor: f64,
    m_tilde_factor: f64,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let dy = p.data.d_y();
    require_widths(dims, dy + 1, dy + 1)?;
    let tp = act.find_turning_point()?;
    embedded_descent(p, dims, act, tp, m_factor, m_tilde_factor, Stage::S3)
}

/// Descent point when the activation only has turning points with `s₋ + s₊ = 0`.
/// Needs `d₁ ≥ d_Y + 2` and `d_i ≥ d_Y + 1` for the other hidden layers.
pub fn build_corollary_descent(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let dy = p.data.d_y();
    require_widths(dims, dy + 2, dy + 1)?;
    let tp = act.equal_slope_turning_point()?;
    embedded_descent(p, dims, act, tp, 1.0, 1.0, Stage::CorollaryEqualSlope)
}

fn embedded_descent(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
    tp: TurningPoint,
    m_factor: f64,
    m_tilde_factor: f64,
    stage: Stage,
) -> Result<CertifiedPoint> {
    if !(m_factor >= 1.0 && m_tilde_factor >= 1.0) {
        return Err(Error::Precondition(
            "scale factors must be at least 1".into(),
        ));
    }
    let (local, side) = local_two_piece(&tp);
    let found = search_descent(p, dims[1], &local)?;
    let (base, lambda) = lift(&found.core.net, &p.data.x, dims, &local, None)?;
    let trace = base.forward(&p.data.x)?;
    let m = sigma_scale(&trace.pre[0], tp.sigma) * m_factor;
    let hidden = dims.len() - 2;
    let mut scales = vec![1.0 / m];
    let mut m_tilde = None;
    if hidden > 1 {
        let deepest = trace.hidden_pre()[1..]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let mt = (2.0 * deepest / (m * tp.sigma)).max(1.0) * m_tilde_factor;
        scales.push(1.0 / mt);
        scales.extend(std::iter::repeat_n(1.0, hidden - 2));
        m_tilde = Some(mt);
    }
    let net = embed(&base, act, &tp, side, &scales)?;
    let mut params = ConstructionParams::new(found.core.eta);
    params.eta_i = found.core.eta_i;
    params.lambda = lambda;
    params.m = Some(m);
    params.m_tilde = m_tilde;
    params.turning_point = Some(tp);
    params.side = side;
    params.descent = Some(found.consts);
    params.split_row = Some(found.row);
    let point = CertifiedPoint::new(p, net, PointKind::DescentWitness, stage, params)?;
    verify_decrease(p, point)
}

/// `k` distinct minima sharing the baseline risk. Member 0 uses the defaults;
/// member `m` draws `η`, `M` and the layer scales from a generator seeded with `seed ^ m`.
pub fn enumerate_family(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
    k: usize,
    seed: u64,
) -> Result<Vec<CertifiedPoint>> {
    let hidden = dims.len().saturating_sub(2);
    let eta0 = p.default_eta();
    (0..k)
        .into_par_iter()
        .map(|m| {
            let opts = if m == 0 {
                MinimumOptions::default()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ m as u64);
                MinimumOptions {
                    eta: Some(eta0 - rng.gen_range(0.0..5.0)),
                    m_factor: 1.0 + rng.gen_range(0.0..3.0),
                    alpha_scales: Some(
                        (0..hidden.saturating_sub(1))
                            .map(|_| rng.gen_range(1e-3..1.0))
                            .collect(),
                    ),
                }
            };
            build_stage3_minimum_with(p, dims, act, &opts)
        })
        .collect()
}

/// Builds the default minimum for `stage` with the given activation.
pub fn build_minimum(
    p: &Problem,
    stage: Stage,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    match stage {
        Stage::S1 => build_stage1_minimum(p, dims, &TwoPiece::from_activation(act)?),
        Stage::S2 => build_stage2_minimum(p, dims, &TwoPiece::from_activation(act)?),
        Stage::S3 => build_stage3_minimum(p, dims, act),
        Stage::CorollaryEqualSlope => build_equal_slope_minimum(p, dims, act),
    }
}

/// Minimum placed at a turning point with `s₋ + s₊ = 0`.
pub fn build_equal_slope_minimum(
    p: &Problem,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    check_dims(p, dims)?;
    let dy = p.data.d_y();
    require_widths(dims, dy + 1, dy + 1)?;
    let tp = act.equal_slope_turning_point()?;
    let (local, side) = local_two_piece(&tp);
    let eta = p.default_eta();
    let base = two_piece_minimum(&p.fit, dims, &local, eta)?;
    let pre1 = base.forward(&p.data.x)?.pre.swap_remove(0);
    let m = sigma_scale(&pre1, tp.sigma);
    let alphas = vec![0.5; dims.len() - 3];
    let scales: Vec<f64> = std::iter::once(1.0 / m)
        .chain(alphas.iter().cloned())
        .collect();
    let net = embed(&base, act, &tp, side, &scales)?;
    let mut params = ConstructionParams::new(eta);
    params.m = Some(m);
    params.alpha_scales = alphas;
    params.turning_point = Some(tp);
    params.side = side;
    CertifiedPoint::new(
        p,
        net,
        PointKind::Minimum,
        Stage::CorollaryEqualSlope,
        params,
    )
}

/// Builds the default descent point for `stage` with the given activation.
pub fn build_descent(
    p: &Problem,
    stage: Stage,
    dims: &[usize],
    act: &PiecewiseLinear,
) -> Result<CertifiedPoint> {
    match stage {
        Stage::S1 => stage1_descent(p, dims, &TwoPiece::from_activation(act)?),
        Stage::S2 => stage2_descent(p, dims, &TwoPiece::from_activation(act)?),
        Stage::S3 => build_stage3_descent(p, dims, act),
        Stage::CorollaryEqualSlope => build_corollary_descent(p, dims, act),
    }
}
