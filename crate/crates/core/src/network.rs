//! Datasets, multilayer perceptrons with affine output layers, losses and risk.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activations::PiecewiseLinear;
use crate::error::{Error, Result};
use crate::linear_baseline;
use crate::numeric::{augment_ones, pairwise_sum};

/// Features `x` (d_X × n) and labels `y` (d_Y × n), one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::Shape("dataset needs at least one sample".into()));
        }
        if x.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "{} feature columns but {} label columns",
                x.ncols(),
                y.ncols()
            )));
        }
        if x.nrows() == 0 || y.nrows() == 0 {
            return Err(Error::Shape("empty feature or label dimension".into()));
        }
        Ok(Self { x, y })
    }

    /// The four XOR points with scalar labels (0, 1, 1, 0).
    pub fn xor() -> Self {
        let x = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 1.0, 0.0]);
        Self { x, y }
    }

    /// XOR with one-hot labels over two classes.
    pub fn xor_one_hot() -> Self {
        let x = Self::xor().x;
        let y = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        Self { x, y }
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn d_x(&self) -> usize {
        self.x.nrows()
    }

    pub fn d_y(&self) -> usize {
        self.y.nrows()
    }

    pub fn x_aug(&self) -> DMatrix<f64> {
        augment_ones(&self.x)
    }

    pub fn has_distinct_columns(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (i + 1..n).all(|j| self.x.column(i) != self.x.column(j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½‖ŷ − y‖²`
    Squared,
    /// Softmax folded into the negative log-likelihood.
    CrossEntropy,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

impl LossKind {
    pub fn loss(self, y: &[f64], yhat: &[f64]) -> f64 {
        match self {
            LossKind::Squared => {
                0.5 * y
                    .iter()
                    .zip(yhat)
                    .map(|(a, b)| (b - a).powi(2))
                    .sum::<f64>()
            }
            LossKind::CrossEntropy => {
                let lse = log_sum_exp(yhat);
                y.iter().zip(yhat).map(|(yk, zk)| yk * (lse - zk)).sum()
            }
        }
    }

    /// Gradient of the per-sample loss with respect to the prediction.
    pub fn gradient(self, y: &[f64], yhat: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Squared => y.iter().zip(yhat).map(|(a, b)| b - a).collect(),
            LossKind::CrossEntropy => {
                let total: f64 = y.iter().sum();
                softmax(yhat)
                    .iter()
                    .zip(y)
                    .map(|(p, yk)| total * p - yk)
                    .collect()
            }
        }
    }

    pub fn check_labels(self, y: &DMatrix<f64>) -> Result<()> {
        if self == LossKind::CrossEntropy {
            for (i, col) in y.column_iter().enumerate() {
                let ones = col.iter().filter(|&&v| v == 1.0).count();
                let zeros = col.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || ones + zeros != col.len() {
                    return Err(Error::NotOneHot { sample: i });
                }
            }
        }
        Ok(())
    }
}

/// `(1/n) Σ l(y_i, ŷ_i)` with pairwise summation over samples.
pub fn risk_of_predictions(yhat: &DMatrix<f64>, y: &DMatrix<f64>, loss: LossKind) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs labels {:?}",
            yhat.shape(),
            y.shape()
        )));
    }
    loss.check_labels(y)?;
    let per: Vec<f64> = (0..y.ncols())
        .map(|i| {
            let a: Vec<f64> = y.column(i).iter().cloned().collect();
            let b: Vec<f64> = yhat.column(i).iter().cloned().collect();
            loss.loss(&a, &b)
        })
        .collect();
    Ok(pairwise_sum(&per) / y.ncols() as f64)
}

/// Per-sample loss gradients stacked column-wise (d_Y × n), without the 1/n factor.
pub fn gradient_matrix(yhat: &DMatrix<f64>, y: &DMatrix<f64>, loss: LossKind) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(y.nrows(), y.ncols());
    for i in 0..y.ncols() {
        let a: Vec<f64> = y.column(i).iter().cloned().collect();
        let b: Vec<f64> = yhat.column(i).iter().cloned().collect();
        for (k, g) in loss.gradient(&a, &b).into_iter().enumerate() {
            v[(k, i)] = g;
        }
    }
    v
}

/// Fully connected network; hidden layers share one activation, the last layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub activation: PiecewiseLinear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpRepr {
    dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    activation: PiecewiseLinear,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape(format!(
            "ragged rows, expected {ncols} columns"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;
    fn try_from(r: MlpRepr) -> Result<Self> {
        if r.dims.len() != r.weights.len() + 1 {
            return Err(Error::Shape(format!(
                "{} dims for {} layers",
                r.dims.len(),
                r.weights.len()
            )));
        }
        let weights = r
            .weights
            .iter()
            .enumerate()
            .map(|(j, w)| rows_to_matrix(w, r.dims[j]))
            .collect::<Result<Vec<_>>>()?;
        let biases = r.biases.into_iter().map(DVector::from_vec).collect();
        let net = Mlp::new(weights, biases, r.activation)?;
        if net.dims != r.dims {
            return Err(Error::Shape(format!(
                "dims {:?} do not match weights {:?}",
                r.dims, net.dims
            )));
        }
        Ok(net)
    }
}

impl From<Mlp> for MlpRepr {
    fn from(n: Mlp) -> Self {
        MlpRepr {
            dims: n.dims,
            weights: n.weights.iter().map(matrix_to_rows).collect(),
            biases: n
                .biases
                .iter()
                .map(|b| b.iter().cloned().collect())
                .collect(),
            activation: n.activation,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.pre.last().expect("at least one layer")
    }

    /// Pre-activations of the hidden layers only.
    pub fn hidden_pre(&self) -> &[DMatrix<f64>] {
        &self.pre[..self.pre.len() - 1]
    }
}

impl Mlp {
    pub fn new(
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: PiecewiseLinear,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut dims = vec![weights[0].ncols()];
        for (j, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *dims.last().unwrap() || w.nrows() != b.len() || w.nrows() == 0 {
                return Err(Error::Shape(format!(
                    "layer {} has weight {:?} and bias {} after width {}",
                    j + 1,
                    w.shape(),
                    b.len(),
                    dims.last().unwrap()
                )));
            }
            dims.push(w.nrows());
        }
        Ok(Self {
            dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<ForwardTrace> {
        if x.nrows() != self.dims[0] {
            return Err(Error::Shape(format!(
                "input has {} rows, network expects {}",
                x.nrows(),
                self.dims[0]
            )));
        }
        let l = self.depth();
        let mut pre = Vec::with_capacity(l);
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(l);
        for j in 0..l {
            let input = if j == 0 { x } else { &post[j - 1] };
            let mut z = &self.weights[j] * input;
            for mut col in z.column_iter_mut() {
                col += &self.biases[j];
            }
            let a = if j + 1 < l {
                z.map(|v| self.activation.eval(v))
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace { pre, post })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x)?.pre.pop().expect("at least one layer"))
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All weights (row-major) then bias of each layer, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Mlp> {
        if theta.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                theta.len(),
                self.num_params()
            )));
        }
        let mut net = self.clone();
        let mut k = 0;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = theta[k];
                    k += 1;
                }
            }
            for v in b.iter_mut() {
                *v = theta[k];
                k += 1;
            }
        }
        Ok(net)
    }
}

pub fn empirical_risk(net: &Mlp, data: &Dataset, loss: LossKind) -> Result<f64> {
    risk_of_predictions(&net.predict(&data.x)?, &data.y, loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// The best affine predictor leaves a nonzero residual.
    pub not_linearly_fittable: bool,
    pub distinct_samples: bool,
    /// Every hidden layer is wider than the output.
    pub hidden_wider_than_output: bool,
    pub admissible_turning_point: bool,
    /// `d_1 >= d_Y + 2` and `d_i >= d_Y + 1` for the remaining hidden layers.
    pub equal_slope_widths: bool,
}

pub fn check_assumptions(
    data: &Dataset,
    dims: &[usize],
    act: &PiecewiseLinear,
    loss: LossKind,
) -> AssumptionReport {
    let d_y = data.d_y();
    let hidden = if dims.len() > 2 {
        &dims[1..dims.len() - 1]
    } else {
        &[][..]
    };
    let not_linearly_fittable = match linear_baseline::fit_linear(data, loss, 1e-8) {
        Ok(fit) => fit.residual_norm() > 1e-8,
        Err(Error::NonConvergence {
            unbounded_suspected,
            ..
        }) => !unbounded_suspected,
        Err(_) => false,
    };
    AssumptionReport {
        not_linearly_fittable,
        distinct_samples: data.has_distinct_columns(),
        hidden_wider_than_output: !hidden.is_empty() && hidden.iter().all(|&d| d > d_y),
        admissible_turning_point: act.find_turning_point().is_ok(),
        equal_slope_widths: !hidden.is_empty()
            && hidden[0] >= d_y + 2
            && hidden[1..].iter().all(|&d| d > d_y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_net(d: usize) -> Mlp {
        Mlp::new(
            vec![DMatrix::identity(d, d), DMatrix::identity(d, d)],
            vec![DVector::zeros(d), DVector::zeros(d)],
            PiecewiseLinear::identity(),
        )
        .unwrap()
    }

    #[test]
    fn identity_network_reproduces_input() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.5, 0.25, 7.0, -1.0]);
        assert_eq!(identity_net(2).predict(&x).unwrap(), x);
    }

    #[test]
    fn dead_relu_units_output_bias() {
        let net = Mlp::new(
            vec![
                DMatrix::from_element(2, 2, 1.0),
                DMatrix::from_element(1, 2, 3.0),
            ],
            vec![
                DVector::from_element(2, -10.0),
                DVector::from_element(1, 0.7),
            ],
            PiecewiseLinear::relu(),
        )
        .unwrap();
        let out = net.predict(&Dataset::xor().x).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn trace_post_is_activation_of_pre() {
        let net = Mlp::new(
            vec![
                DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 2.0, -3.0, 0.1]),
                DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]),
            ],
            vec![
                DVector::from_vec(vec![0.1, -0.2, 0.3]),
                DVector::from_element(1, 0.0),
            ],
            PiecewiseLinear::three_piece(),
        )
        .unwrap();
        let tr = net.forward(&Dataset::xor().x).unwrap();
        let diff = &tr.post[0] - tr.pre[0].map(|v| net.activation.eval(v));
        assert_eq!(diff.iter().fold(0.0f64, |a, &b| a.max(b.abs())), 0.0);
        assert_eq!(tr.output(), &tr.post[1]);
    }

    #[test]
    fn shape_errors() {
        assert!(Mlp::new(
            vec![DMatrix::zeros(3, 2), DMatrix::zeros(1, 2)],
            vec![DVector::zeros(3), DVector::zeros(1)],
            PiecewiseLinear::relu()
        )
        .is_err());
        assert!(identity_net(3).forward(&Dataset::xor().x).is_err());
        assert!(Dataset::new(DMatrix::zeros(2, 3), DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn risk_values() {
        let d = Dataset::xor();
        let half = DMatrix::from_element(1, 4, 0.5);
        assert_eq!(
            risk_of_predictions(&half, &d.y, LossKind::Squared).unwrap(),
            0.125
        );
        assert_eq!(
            risk_of_predictions(&d.y, &d.y, LossKind::Squared).unwrap(),
            0.0
        );
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let z = DMatrix::zeros(2, 1);
        let ce = risk_of_predictions(&z, &y, LossKind::CrossEntropy).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(
            risk_of_predictions(&half, &d.y, LossKind::CrossEntropy),
            Err(Error::NotOneHot { sample: 0 })
        ));
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(LossKind::Squared.gradient(&[1.0], &[0.5]), vec![-0.5]);
        assert_eq!(
            LossKind::CrossEntropy.gradient(&[1.0, 0.0], &[0.0, 0.0]),
            vec![-0.5, 0.5]
        );
        assert_eq!(
            LossKind::Squared.gradient(&[2.0, 3.0], &[2.0, 3.0]),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let l = LossKind::CrossEntropy.loss(&[0.0, 1.0], &[1000.0, 0.0]);
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = identity_net(2);
        let theta: Vec<f64> = (0..net.num_params()).map(|_| rng.gen::<f64>()).collect();
        assert_eq!(net.with_params(&theta).unwrap().params(), theta);
    }

    #[test]
    fn json_round_trip() {
        let net = Mlp::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -2.5, 3.0]),
                DMatrix::from_row_slice(1, 2, &[0.3, 1e-17]),
            ],
            vec![
                DVector::from_vec(vec![0.0, -1.0]),
                DVector::from_element(1, 7.0),
            ],
            PiecewiseLinear::relu(),
        )
        .unwrap();
        let s = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        let bad = s.replace("\"dims\":[2,2,1]", "\"dims\":[2,3,1]");
        assert!(serde_json::from_str::<Mlp>(&bad).is_err());
    }

    #[test]
    fn assumption_checks() {
        let r = check_assumptions(
            &Dataset::xor(),
            &[2, 2, 1],
            &PiecewiseLinear::relu(),
            LossKind::Squared,
        );
        assert!(r.not_linearly_fittable && r.distinct_samples && r.hidden_wider_than_output);
        assert!(r.admissible_turning_point);
        assert!(!r.equal_slope_widths);
        let x = Dataset::xor().x;
        let y = x.map(|v| 2.0 * v);
        let lin = Dataset::new(x, y).unwrap();
        assert!(
            !check_assumptions(
                &lin,
                &[2, 3, 2],
                &PiecewiseLinear::relu(),
                LossKind::Squared
            )
            .not_linearly_fittable
        );
        let r = check_assumptions(
            &lin,
            &[2, 1, 2],
            &PiecewiseLinear::relu(),
            LossKind::Squared,
        );
        assert!(!r.hidden_wider_than_output);
        let r = check_assumptions(
            &Dataset::xor(),
            &[2, 4, 1],
            &PiecewiseLinear::abs(),
            LossKind::Squared,
        );
        assert!(!r.admissible_turning_point && r.equal_slope_widths);
    }
}
