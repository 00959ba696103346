//! The affine baseline `W̃ = argmin f(W)`, `f(W) = (1/n) Σ l(y_i, W [x_i; 1])`.

use crate::error::{Error, Result};
use crate::network::{gradient_matrix, risk_of_predictions, Dataset, LossKind};
use crate::numeric::pinv;
use nalgebra::DMatrix;

/// Norm of `W` past which a cross-entropy fit is reported as diverging.
pub const UNBOUNDED_CAP: f64 = 1e6;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// d_Y × (d_X + 1); the last column is the intercept.
    pub w_tilde: DMatrix<f64>,
    pub risk: f64,
    pub grad_norm: f64,
    /// Per-sample loss gradients at the affine predictions (no 1/n factor).
    pub v: DMatrix<f64>,
    /// `W̃ X̃`
    pub y_tilde: DMatrix<f64>,
    pub loss: LossKind,
}

impl LinearFit {
    fn assemble(data: &Dataset, loss: LossKind, w: DMatrix<f64>) -> Result<Self> {
        let xa = data.x_aug();
        let y_tilde = &w * &xa;
        let risk = risk_of_predictions(&y_tilde, &data.y, loss)?;
        let v = gradient_matrix(&y_tilde, &data.y, loss);
        let grad_norm = (&v * xa.transpose()).norm() / data.n() as f64;
        Ok(Self {
            w_tilde: w,
            risk,
            grad_norm,
            v,
            y_tilde,
            loss,
        })
    }

    /// Frobenius norm of the residual that certifies the data is not affinely fittable.
    /// For squared loss this is `‖W̃X̃ − Y‖_F`; in general it is `‖V‖_F`.
    pub fn residual_norm(&self) -> f64 {
        self.v.norm()
    }

    pub fn d_x(&self) -> usize {
        self.w_tilde.ncols() - 1
    }

    pub fn d_y(&self) -> usize {
        self.w_tilde.nrows()
    }
}

pub fn fit_linear(data: &Dataset, loss: LossKind, tol: f64) -> Result<LinearFit> {
    loss.check_labels(&data.y)?;
    match loss {
        LossKind::Squared => {
            let w = &data.y * pinv(&data.x_aug());
            LinearFit::assemble(data, loss, w)
        }
        LossKind::CrossEntropy => fit_cross_entropy(data, tol),
    }
}

fn fit_cross_entropy(data: &Dataset, tol: f64) -> Result<LinearFit> {
    let xa = data.x_aug();
    let n = data.n() as f64;
    let objective =
        |w: &DMatrix<f64>| risk_of_predictions(&(w * &xa), &data.y, LossKind::CrossEntropy);
    let mut w = DMatrix::zeros(data.d_y(), xa.nrows());
    let mut f = objective(&w)?;
    let f0 = f;
    for _ in 0..MAX_ITERATIONS {
        let g = gradient_matrix(&(&w * &xa), &data.y, LossKind::CrossEntropy) * xa.transpose() / n;
        let gn = g.norm();
        if gn <= tol {
            return LinearFit::assemble(data, LossKind::CrossEntropy, w);
        }
        if w.norm() > UNBOUNDED_CAP {
            return Err(Error::NonConvergence {
                iterations: MAX_ITERATIONS,
                grad_norm: gn,
                unbounded_suspected: true,
            });
        }
        let mut step = 1.0;
        loop {
            let cand = &w - &g * step;
            let fc = objective(&cand)?;
            if fc <= f - 0.5 * step * gn * gn || step < 1e-20 {
                w = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
    }
    let g = gradient_matrix(&(&w * &xa), &data.y, LossKind::CrossEntropy) * xa.transpose() / n;
    // A vanishing cross-entropy is only reachable as ‖W‖ → ∞.
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        grad_norm: g.norm(),
        unbounded_suspected: w.norm() > UNBOUNDED_CAP || f < 1e-4 * f0,
    })
}

/// `‖V [Xᵀ 1]‖_F`, zero at a stationary point of `f`.
pub fn stationarity_certificate(fit: &LinearFit, data: &Dataset) -> f64 {
    (&fit.v * data.x_aug().transpose()).norm()
}

/// Picks the first output row with a nonzero gradient row and the swap that brings it to the front.
pub fn select_nonzero_residual_row(fit: &LinearFit) -> Result<(usize, Vec<usize>)> {
    let scale = 1e-10 * (1.0 + fit.v.norm());
    let k = (0..fit.v.nrows())
        .find(|&k| fit.v.row(k).iter().any(|x| x.abs() > scale))
        .ok_or(Error::AllRowsZero)?;
    let mut perm: Vec<usize> = (0..fit.v.nrows()).collect();
    perm.swap(0, k);
    Ok((k, perm))
}
