//! Splitting samples into a prefix `I` and suffix `J` of a shifted ordering so
//! that the prefix carries a nonzero share of a zero-sum row `u`.
//!
//! Given `u` with `Σu = 0`, values `v` and distinct points `x_i`, [`separate`]
//! returns `(I, J, β)` with
//! `v_i − αβᵀx_i < v_j − αβᵀx_j` for all `i ∈ I, j ∈ J` and small `α > 0`, and
//! `Σ_{i∈I} u_i ≠ 0`. [`size_constants`] then picks `α`, the offset `γ` and the
//! threshold `η₁` consumed by the descent constructions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_HALVINGS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// Sample indices in the shifted ascending order; `I = perm[..l_prime]`.
    pub perm: Vec<usize>,
    pub l_prime: usize,
    pub beta: DVector<f64>,
    /// Exclusive end position (in `perm`) of each group of tied `v`.
    pub group_bounds: Vec<usize>,
    /// Group holding the last member of `I`.
    pub t_group: usize,
    pub trivial_branch: bool,
    /// Every `α ∈ (alpha_floor, alpha_max]` keeps the strict ordering.
    pub alpha_max: f64,
    /// Positive only when near-tied values are not exactly equal.
    pub alpha_floor: f64,
}

impl SeparationResult {
    pub fn i_set(&self) -> &[usize] {
        &self.perm[..self.l_prime]
    }

    pub fn j_set(&self) -> &[usize] {
        &self.perm[self.l_prime..]
    }

    /// Sample index of the last member of `I`.
    pub fn last_of_i(&self) -> usize {
        self.perm[self.l_prime - 1]
    }

    /// `max_I (v − αβᵀx) < min_J (v − αβᵀx)`.
    pub fn holds_at(&self, alpha: f64, v: &[f64], xs: &DMatrix<f64>) -> bool {
        let a = shifted(alpha, &self.beta, v, xs);
        let hi = self
            .i_set()
            .iter()
            .map(|&i| a[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lo = self
            .j_set()
            .iter()
            .map(|&j| a[j])
            .fold(f64::INFINITY, f64::min);
        hi < lo
    }

    pub fn u_sum_over_i(&self, u: &[f64]) -> f64 {
        self.i_set().iter().map(|&i| u[i]).sum()
    }
}

fn shifted(alpha: f64, beta: &DVector<f64>, v: &[f64], xs: &DMatrix<f64>) -> Vec<f64> {
    (0..v.len())
        .map(|i| v[i] - alpha * beta.dot(&xs.column(i)))
        .collect()
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

pub fn separate(u: &[f64], v: &[f64], xs: &DMatrix<f64>) -> Result<SeparationResult> {
    let n = u.len();
    if v.len() != n || xs.ncols() != n {
        return Err(Error::Shape(format!(
            "u has {n} entries, v {}, points {}",
            v.len(),
            xs.ncols()
        )));
    }
    let l1: f64 = u.iter().map(|x| x.abs()).sum();
    let total: f64 = u.iter().sum();
    if l1 == 0.0 {
        return Err(Error::Precondition("u is zero".into()));
    }
    if total.abs() > 1e-10 * l1 {
        return Err(Error::Precondition(format!(
            "u sums to {total:e}, not zero"
        )));
    }
    let tau = 1e-10 * l1;

    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut group_bounds = Vec::new();
    let mut start = 0;
    for p in 1..=n {
        if p == n || !tied(v[perm[start]], v[perm[p]]) {
            group_bounds.push(p);
            start = p;
        }
    }

    let mut prefix = 0.0;
    let mut lo = 0;
    for (g, &end) in group_bounds.iter().enumerate() {
        prefix += perm[lo..end].iter().map(|&i| u[i]).sum::<f64>();
        if end < n && prefix.abs() > tau {
            let mut res = SeparationResult {
                perm,
                l_prime: end,
                beta: DVector::zeros(xs.nrows()),
                group_bounds,
                t_group: g,
                trivial_branch: true,
                alpha_max: 1.0,
                alpha_floor: 0.0,
            };
            set_alpha_range(&mut res, v, xs)?;
            return Ok(res);
        }
        lo = end;
    }

    let mut lo = 0;
    for (g, &end) in group_bounds.iter().enumerate() {
        let members: Vec<usize> = perm[lo..end].to_vec();
        let mut best: Option<usize> = None;
        for &i in &members {
            if u[i].abs() > tau {
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (ni, nb) = (xs.column(i).norm(), xs.column(b).norm());
                        ni > nb || (ni == nb && i < b)
                    }
                };
                if better {
                    best = Some(i);
                }
            }
        }
        if let Some(l) = best {
            let beta: DVector<f64> = xs.column(l).into_owned();
            let bb = beta.dot(&beta);
            let (mut front, mut back) = (Vec::new(), Vec::new());
            for &i in &members {
                if i != l && beta.dot(&xs.column(i)) >= bb {
                    front.push(i);
                } else if i != l {
                    back.push(i);
                }
            }
            let l_prime = lo + front.len() + 1;
            let reordered: Vec<usize> = front.into_iter().chain([l]).chain(back).collect();
            perm[lo..end].copy_from_slice(&reordered);
            let mut res = SeparationResult {
                perm,
                l_prime,
                beta,
                group_bounds,
                t_group: g,
                trivial_branch: false,
                alpha_max: 1.0,
                alpha_floor: 0.0,
            };
            set_alpha_range(&mut res, v, xs)?;
            return Ok(res);
        }
        lo = end;
    }
    Err(Error::Precondition(
        "no group holds a nonzero entry of u".into(),
    ))
}

/// Solves the pairwise conditions `α c_ij + d_ij > 0` with `d = v_j − v_i`, `c = βᵀ(x_i − x_j)`.
fn set_alpha_range(res: &mut SeparationResult, v: &[f64], xs: &DMatrix<f64>) -> Result<()> {
    let proj: Vec<f64> = (0..v.len()).map(|i| res.beta.dot(&xs.column(i))).collect();
    let mut alpha_max: f64 = 1.0;
    let mut alpha_floor: f64 = 0.0;
    for &i in res.i_set() {
        for &j in res.j_set() {
            let d = v[j] - v[i];
            let c = proj[i] - proj[j];
            if c < 0.0 && d > 0.0 {
                alpha_max = alpha_max.min(0.5 * d / -c);
            } else if c > 0.0 && d <= 0.0 {
                alpha_floor = alpha_floor.max(-d / c);
            } else if c <= 0.0 && d <= 0.0 {
                return Err(Error::Precondition(format!(
                    "samples {i} and {j} cannot be ordered by any α"
                )));
            }
        }
    }
    if alpha_floor >= alpha_max {
        return Err(Error::Precondition("empty α range".into()));
    }
    res.alpha_max = alpha_max;
    res.alpha_floor = alpha_floor;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConstants {
    pub alpha: f64,
    pub gamma: f64,
    pub eta1: f64,
    /// Half the gap between the last shifted value in `I` and the smallest in `J`, minus `|γ|`.
    pub margin: f64,
    /// The reference gap that fixes `|γ|`.
    pub gap: f64,
}

/// Halves `α` from `min(alpha_start, alpha_max)` until the ordering holds strictly,
/// the last member of `I` has the largest shifted value in `I`, and `|γ|` stays
/// below the midpoint gap. `slope_ratio` is `(s₊ − s₋)/(s₊ + s₋)`; pass `1` for the
/// equal-slope construction, where `γ` follows `Σ_I u` directly.
pub fn size_constants(
    res: &SeparationResult,
    u: &[f64],
    v: &[f64],
    xs: &DMatrix<f64>,
    slope_ratio: f64,
    alpha_start: f64,
) -> Result<DescentConstants> {
    let sign = (slope_ratio * res.u_sum_over_i(u)).signum();
    let lp = res.last_of_i();
    let group_end = res.group_bounds[res.t_group];
    let mut alpha = alpha_start.min(res.alpha_max);
    for _ in 0..MAX_HALVINGS {
        if alpha > res.alpha_floor {
            let a = shifted(alpha, &res.beta, v, xs);
            let i_ok = res.i_set().iter().all(|&i| a[i] <= a[lp]);
            let min_j = res
                .j_set()
                .iter()
                .map(|&j| a[j])
                .fold(f64::INFINITY, f64::min);
            let midgap = 0.5 * (min_j - a[lp]);
            let gap = if res.l_prime < group_end {
                let bl = res.beta.dot(&xs.column(lp));
                res.perm[res.l_prime..group_end]
                    .iter()
                    .map(|&j| alpha * (bl - res.beta.dot(&xs.column(j))))
                    .fold(f64::INFINITY, f64::min)
            } else {
                alpha
            };
            let magnitude = if res.l_prime < group_end {
                0.25 * gap
            } else {
                alpha
            };
            if i_ok && midgap > 0.0 && magnitude < midgap && magnitude > 0.0 {
                return Ok(DescentConstants {
                    alpha,
                    gamma: sign * magnitude,
                    eta1: a[lp] + midgap,
                    margin: midgap - magnitude,
                    gap,
                });
            }
        }
        alpha *= 0.5;
    }
    Err(Error::SizingFailed {
        halvings: MAX_HALVINGS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(d: usize, cols: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(d, cols.len() / d, cols)
    }

    #[test]
    fn trivial_branch_on_distinct_values() {
        let xs = pts(1, &[2.0, 1.0]);
        let r = separate(&[1.0, -1.0], &[0.0, 1.0], &xs).unwrap();
        assert!(r.trivial_branch);
        assert_eq!((r.i_set(), r.j_set()), (&[0][..], &[1][..]));
        assert_eq!(r.beta[0], 0.0);
        assert!(r.holds_at(0.3, &[0.0, 1.0], &xs));
        assert_eq!(r.u_sum_over_i(&[1.0, -1.0]), 1.0);
    }

    #[test]
    fn single_group_uses_largest_point() {
        let xs = pts(1, &[2.0, 1.0]);
        let r = separate(&[1.0, -1.0], &[0.0, 0.0], &xs).unwrap();
        assert!(!r.trivial_branch);
        assert_eq!(r.l_prime, 1);
        assert_eq!(r.i_set(), &[0]);
        assert_eq!(r.beta[0], 2.0);
        // −4α < −2α for every α > 0
        for alpha in [1e-6, 0.1, 1.0] {
            assert!(r.holds_at(alpha, &[0.0, 0.0], &xs));
        }
    }

    #[test]
    fn xor_stage_one_split() {
        let xs = pts(2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let u = [0.5, -0.5, -0.5, 0.5];
        let v = [0.5; 4];
        let r = separate(&u, &v, &xs).unwrap();
        assert_eq!((r.beta[0], r.beta[1]), (1.0, 1.0));
        assert_eq!(r.i_set(), &[3]);
        assert_eq!(r.l_prime, 1);
        assert_eq!(r.u_sum_over_i(&u), 0.5);
        let c = size_constants(&r, &u, &v, &xs, 1.0, 1.0).unwrap();
        // gap = min α(2 − 0, 2 − 1, 2 − 1) = α, |γ| = gap / 4
        assert_eq!(c.gap, c.alpha);
        assert_eq!(c.gamma, 0.25 * c.alpha);
        assert!(c.margin > 0.0);
        let flipped = size_constants(&r, &u, &v, &xs, -1.0, 1.0).unwrap();
        assert!(flipped.gamma < 0.0);
    }

    #[test]
    fn boundary_case_uses_alpha_magnitude() {
        // distinct groups, so the split ends a group
        let xs = pts(1, &[1.0, 2.0, 3.0]);
        let u = [1.0, -0.5, -0.5];
        let v = [0.0, 1.0, 1.0];
        let r = separate(&u, &v, &xs).unwrap();
        assert!(r.trivial_branch);
        let c = size_constants(&r, &u, &v, &xs, 1.0, 1.0).unwrap();
        assert_eq!(c.gamma.abs(), c.alpha);
        assert!((c.eta1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sign_follows_ratio_times_prefix_sum() {
        let xs = pts(1, &[1.0, 2.0]);
        let u = [-1.0, 1.0];
        let v = [0.0, 1.0];
        let r = separate(&u, &v, &xs).unwrap();
        assert!(r.u_sum_over_i(&u) < 0.0);
        assert!(size_constants(&r, &u, &v, &xs, 2.0, 1.0).unwrap().gamma < 0.0);
        assert!(size_constants(&r, &u, &v, &xs, -2.0, 1.0).unwrap().gamma > 0.0);
    }

    #[test]
    fn preconditions() {
        let xs = pts(1, &[1.0, 2.0]);
        assert!(matches!(
            separate(&[1.0, 1.0], &[0.0, 0.0], &xs),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            separate(&[0.0, 0.0], &[0.0, 0.0], &xs),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn reorder_keeps_large_projections_in_front() {
        // the point (3) has the largest norm but zero weight; (2) is the chosen β
        let xs = pts(1, &[3.0, 2.0, 1.0]);
        let u = [0.0, 1.0, -1.0];
        let v = [0.0; 3];
        let r = separate(&u, &v, &xs).unwrap();
        assert_eq!(r.beta[0], 2.0);
        assert_eq!(r.i_set(), &[0, 1]);
        assert!(r.holds_at(0.5, &v, &xs));
        assert_eq!(r.u_sum_over_i(&u), 1.0);
    }
}
