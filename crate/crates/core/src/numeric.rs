//! Small numerical helpers shared across modules.

use nalgebra::DMatrix;

/// Pairwise (cascade) summation with a fixed tree, so the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Moore-Penrose pseudo-inverse via SVD, dropping singular values below `1e-12 * sigma_max`.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-12 * smax;
    let k = svd.singular_values.len();
    let mut out = DMatrix::zeros(c, r);
    for s in 0..k {
        let sv = svd.singular_values[s];
        if sv <= cutoff || sv == 0.0 {
            continue;
        }
        out += (v_t.row(s).transpose() / sv) * u.column(s).transpose();
    }
    out
}

/// Stacks a row of ones under `x`: `[x; 1ᵀ]`.
pub fn augment_ones(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = x.shape();
    let mut out = DMatrix::from_element(r + 1, c, 1.0);
    out.view_mut((0, 0), (r, c)).copy_from(x);
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, &x| acc.max(x.abs()))
}

pub fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}
