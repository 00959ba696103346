//! Continuous piecewise linear activations.
//!
//! An activation is stored as ascending breakpoints, one slope per piece and the
//! value at the first breakpoint. Values at the remaining breakpoints are
//! accumulated from that anchor, so continuity holds by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance reported for a turning point that has no neighbour on some side.
pub const SIGMA_SENTINEL: f64 = 1e9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActivationRepr {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    anchor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationRepr", into = "ActivationRepr")]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    anchor: f64,
    knots: Vec<f64>,
}

impl TryFrom<ActivationRepr> for PiecewiseLinear {
    type Error = Error;
    fn try_from(r: ActivationRepr) -> Result<Self> {
        PiecewiseLinear::new(r.breakpoints, r.slopes, r.anchor)
    }
}

impl From<PiecewiseLinear> for ActivationRepr {
    fn from(a: PiecewiseLinear) -> Self {
        ActivationRepr {
            breakpoints: a.breakpoints,
            slopes: a.slopes,
            anchor: a.anchor,
        }
    }
}

/// A breakpoint `t` with its adjacent slopes and the half-width `sigma` of the
/// neighbourhood on which the activation is two-piece around `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub t: f64,
    pub s_minus: f64,
    pub s_plus: f64,
    pub sigma: f64,
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, anchor: f64) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidActivation(format!(
                "{} breakpoints need {} slopes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                slopes.len()
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidActivation(
                "breakpoints must be strictly ascending".into(),
            ));
        }
        if breakpoints.iter().chain(&slopes).any(|v| !v.is_finite()) || !anchor.is_finite() {
            return Err(Error::InvalidActivation("non-finite parameter".into()));
        }
        let mut knots = Vec::with_capacity(breakpoints.len());
        let mut value = anchor;
        for (k, &b) in breakpoints.iter().enumerate() {
            if k > 0 {
                value += slopes[k] * (b - breakpoints[k - 1]);
            }
            knots.push(value);
        }
        Ok(Self {
            breakpoints,
            slopes,
            anchor,
            knots,
        })
    }

    /// `h(x) = s_minus * x` for `x <= 0` and `s_plus * x` otherwise.
    pub fn two_piece(s_minus: f64, s_plus: f64) -> Self {
        Self::new(vec![0.0], vec![s_minus, s_plus], 0.0).expect("finite slopes")
    }

    pub fn relu() -> Self {
        Self::two_piece(0.0, 1.0)
    }

    pub fn leaky(s_minus: f64) -> Self {
        Self::two_piece(s_minus, 1.0)
    }

    pub fn abs() -> Self {
        Self::two_piece(-1.0, 1.0)
    }

    /// Slopes 0.2, 1, 0.5 with breakpoints at 0 and 1.
    pub fn three_piece() -> Self {
        Self::new(vec![0.0, 1.0], vec![0.2, 1.0, 0.5], 0.0).expect("valid preset")
    }

    pub fn linear(slope: f64) -> Self {
        Self::new(vec![], vec![slope], 0.0).expect("valid preset")
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    fn piece(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.breakpoints.is_empty() {
            return self.anchor + self.slopes[0] * x;
        }
        let p = self.piece(x);
        if p == 0 {
            self.knots[0] + self.slopes[0] * (x - self.breakpoints[0])
        } else {
            self.knots[p - 1] + self.slopes[p] * (x - self.breakpoints[p - 1])
        }
    }

    /// Slope of the piece containing `x`. On a breakpoint the right slope is
    /// returned together with `true`.
    pub fn slope_at(&self, x: f64) -> (f64, bool) {
        let p = self.piece(x);
        if p < self.breakpoints.len() && self.breakpoints[p] == x {
            (self.slopes[p + 1], true)
        } else {
            (self.slopes[p], false)
        }
    }

    pub fn is_nonlinear(&self) -> bool {
        self.slopes.windows(2).any(|w| w[0] != w[1])
    }

    /// True when `h(c x) = c h(x)` for all `c > 0`: at most one breakpoint, placed at 0, with `h(0) = 0`.
    pub fn is_positively_homogeneous(&self) -> bool {
        match self.breakpoints.as_slice() {
            [] => self.anchor == 0.0,
            [b] => *b == 0.0 && self.anchor == 0.0,
            _ => false,
        }
    }

    /// Largest gap between left and right limits over all breakpoints, probed at `b ± 1e-9`.
    pub fn continuity_defect(&self) -> f64 {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let left = self.eval(b - 1e-9) + self.slopes[k] * 1e-9;
                let right = self.eval(b + 1e-9) - self.slopes[k + 1] * 1e-9;
                (left - right).abs()
            })
            .fold(0.0, f64::max)
    }

    fn turning_point_at(&self, k: usize) -> TurningPoint {
        let t = self.breakpoints[k];
        let left = if k > 0 {
            t - self.breakpoints[k - 1]
        } else {
            SIGMA_SENTINEL
        };
        let right = if k + 1 < self.breakpoints.len() {
            self.breakpoints[k + 1] - t
        } else {
            SIGMA_SENTINEL
        };
        TurningPoint {
            t,
            s_minus: self.slopes[k],
            s_plus: self.slopes[k + 1],
            sigma: left.min(right),
        }
    }

    /// Every breakpoint at which the slope actually changes.
    pub fn turning_points(&self) -> Vec<TurningPoint> {
        (0..self.breakpoints.len())
            .map(|k| self.turning_point_at(k))
            .filter(|tp| tp.s_minus != tp.s_plus)
            .collect()
    }

    /// First breakpoint whose adjacent slopes differ and do not sum to zero.
    pub fn find_turning_point(&self) -> Result<TurningPoint> {
        if !self.is_nonlinear() {
            return Err(Error::LinearActivation);
        }
        self.turning_points()
            .into_iter()
            .find(|tp| tp.s_minus + tp.s_plus != 0.0)
            .ok_or(Error::NoAdmissibleTurningPoint)
    }

    /// First breakpoint whose adjacent slopes are exact opposites.
    pub fn equal_slope_turning_point(&self) -> Result<TurningPoint> {
        if !self.is_nonlinear() {
            return Err(Error::LinearActivation);
        }
        self.turning_points()
            .into_iter()
            .find(|tp| tp.s_minus + tp.s_plus == 0.0)
            .ok_or_else(|| Error::Precondition("no breakpoint with opposite slopes".into()))
    }

    /// Parses `relu`, `leaky:<s>`, `abs`, `threepiece`, `identity`, `linear:<s>`
    /// or `twopiece:<s_minus>,<s_plus>`.
    pub fn from_preset(name: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidActivation(format!("{m}: {name}"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
        match name {
            "relu" => return Ok(Self::relu()),
            "abs" => return Ok(Self::abs()),
            "threepiece" => return Ok(Self::three_piece()),
            "identity" => return Ok(Self::identity()),
            _ => {}
        }
        if let Some(s) = name.strip_prefix("leaky:") {
            return Ok(Self::leaky(num(s)?));
        }
        if let Some(s) = name.strip_prefix("linear:") {
            return Ok(Self::linear(num(s)?));
        }
        if let Some(s) = name.strip_prefix("twopiece:") {
            let (a, b) = s
                .split_once(',')
                .ok_or_else(|| bad("expected two slopes"))?;
            let (a, b) = (num(a)?, num(b)?);
            if !a.is_finite() || !b.is_finite() {
                return Err(bad("non-finite slope"));
            }
            return Ok(Self::two_piece(a, b));
        }
        Err(bad("unknown preset"))
    }
}

/// The two-piece family `h_{s-,s+}` with its kink at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPiece {
    pub s_minus: f64,
    pub s_plus: f64,
}

impl TwoPiece {
    pub fn new(s_minus: f64, s_plus: f64) -> Result<Self> {
        if !(s_minus.is_finite() && s_plus.is_finite()) || s_minus == s_plus {
            return Err(Error::InvalidActivation(format!(
                "two-piece slopes ({s_minus}, {s_plus}) must be finite and distinct"
            )));
        }
        Ok(Self { s_minus, s_plus })
    }

    pub fn relu() -> Self {
        Self {
            s_minus: 0.0,
            s_plus: 1.0,
        }
    }

    /// `|s-| != |s+|`, the condition under which the main constructions apply.
    pub fn has_distinct_magnitudes(&self) -> bool {
        self.s_minus.abs() != self.s_plus.abs()
    }

    /// `h_{s-,s+}(x) = h_{-s+,-s-}(-x)`.
    pub fn reflected(&self) -> Self {
        Self {
            s_minus: -self.s_plus,
            s_plus: -self.s_minus,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.s_minus * x
        } else {
            self.s_plus * x
        }
    }

    pub fn activation(&self) -> PiecewiseLinear {
        PiecewiseLinear::two_piece(self.s_minus, self.s_plus)
    }

    /// Recovers the two-piece form of an activation with a single kink at 0 and `h(0) = 0`.
    pub fn from_activation(act: &PiecewiseLinear) -> Result<Self> {
        if act.breakpoints() == [0.0] && act.anchor() == 0.0 {
            Self::new(act.slopes()[0], act.slopes()[1])
        } else {
            Err(Error::InvalidActivation(
                "not a two-piece activation with its kink at the origin".into(),
            ))
        }
    }
}
