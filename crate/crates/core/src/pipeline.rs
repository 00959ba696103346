//! End-to-end demo: baseline fit, minima and descent points at every stage,
//! cell analysis, a valley path and a sampled family, gathered in one report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::{PiecewiseLinear, TwoPiece};
use crate::cells::{
    activation_pattern, build_valley_path, cell_view, quotient_gradient_residual,
    reformulated_risk, solve_cell_optimum, ShallowParams,
};
use crate::construction::{
    build_corollary_descent, build_equal_slope_minimum, build_stage1_minimum, build_stage2_minimum,
    build_stage3_descent, build_stage3_minimum, enumerate_family, local_two_piece, stage1_descent,
    stage2_descent, CertifiedPoint, Problem, Stage,
};
use crate::error::{Error, Result};
use crate::io::{read_dataset_csv, FitView, SignatureView};
use crate::network::{check_assumptions, AssumptionReport, Dataset, LossKind, Mlp};
use crate::verification::{
    descent_gap, perturbation_local_min_test, trace_interval_check, Certificate, Check,
};

/// Everything that determines a demo run; serialized into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub seed: u64,
    pub tol: f64,
    /// Activation preset, see [`PiecewiseLinear::from_preset`].
    pub activation: String,
    pub corollary: bool,
    /// CSV dataset; XOR when absent.
    pub data: Option<String>,
    pub radius: f64,
    pub samples: usize,
    pub path_steps: usize,
    pub family_size: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            tol: 1e-8,
            activation: "threepiece".into(),
            corollary: false,
            data: None,
            radius: 1e-4,
            samples: 500,
            path_steps: 10,
            family_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub dims: Vec<usize>,
    pub minimum_risk: f64,
    pub witness_risk: f64,
    pub gap: f64,
    pub minimum: Mlp,
    pub witness: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub signature: SignatureView,
    pub reformulation_error: f64,
    pub quotient_gradient_residual: f64,
    pub cell_lower_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub points: usize,
    pub max_risk_deviation: f64,
    pub pattern_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub members: usize,
    pub min_pairwise_distance: f64,
    pub max_risk_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: DemoConfig,
    pub data: DataSummary,
    pub assumptions: AssumptionReport,
    pub baseline: FitView,
    pub stages: Vec<StageReport>,
    pub cells: Option<CellReport>,
    pub path: Option<PathReport>,
    pub family: Option<FamilyReport>,
    pub certificate: Certificate,
    pub verdict: bool,
    pub first_failure: Option<String>,
}

fn named(prefix: &str, mut c: Check) -> Check {
    c.name = format!("{prefix}.{}", c.name);
    c
}

struct Runner<'a> {
    cfg: &'a DemoConfig,
    p: Problem,
    cert: Certificate,
}

impl Runner<'_> {
    fn add(&mut self, prefix: &str, c: Check) {
        self.cert.push(named(prefix, c));
    }

    fn stage(
        &mut self,
        minimum: CertifiedPoint,
        witness: CertifiedPoint,
        dims: &[usize],
    ) -> Result<StageReport> {
        let tag = match minimum.stage {
            Stage::S1 => "s1",
            Stage::S2 => "s2",
            Stage::S3 => "s3",
            Stage::CorollaryEqualSlope => "corollary",
        };
        let base = self.p.fit.risk;
        self.add(
            tag,
            Check::at_most("minimum_risk_error", (minimum.risk - base).abs(), 1e-9),
        );
        let pert = perturbation_local_min_test(
            &minimum.net,
            &self.p.data,
            self.p.loss,
            self.cfg.radius,
            self.cfg.samples,
            self.cfg.seed,
        )?;
        for c in pert.checks {
            self.add(tag, c);
        }
        self.cert.warnings.extend(pert.warnings);
        let (lo, hi) = expected_interval(&minimum);
        let trace = minimum.net.forward(&self.p.data.x)?;
        self.add(tag, trace_interval_check(&trace, lo, hi));
        self.add(tag, descent_gap(minimum.risk, witness.risk));
        Ok(StageReport {
            stage: minimum.stage,
            dims: dims.to_vec(),
            minimum_risk: minimum.risk,
            witness_risk: witness.risk,
            gap: minimum.risk - witness.risk,
            minimum: minimum.net,
            witness: witness.net,
        })
    }
}

/// Open interval holding every hidden pre-activation of a constructed minimum.
pub fn expected_interval(point: &CertifiedPoint) -> (f64, f64) {
    let side = point.params.side;
    match point.params.turning_point {
        Some(tp) if side > 0 => (tp.t, tp.t + tp.sigma),
        Some(tp) => (tp.t - tp.sigma, tp.t),
        None if side > 0 => (0.0, f64::INFINITY),
        None => (f64::NEG_INFINITY, 0.0),
    }
}

/// Local two-piece form at the admissible turning point, or ReLU when there is none.
fn stage_two_piece(act: &PiecewiseLinear) -> TwoPiece {
    act.find_turning_point()
        .map(|tp| local_two_piece(&tp).0)
        .unwrap_or_else(|_| TwoPiece::relu())
}

/// Runs the whole pipeline. Errors are reserved for bad input and unmet
/// preconditions; failed numerical checks only clear the verdict.
pub fn run_demo(cfg: &DemoConfig) -> Result<Report> {
    let act = PiecewiseLinear::from_preset(&cfg.activation)?;
    if let Err(e) = act.find_turning_point() {
        if !cfg.corollary || matches!(e, Error::LinearActivation) {
            return Err(e);
        }
    }
    let admissible = act.find_turning_point().is_ok();
    let data = match &cfg.data {
        Some(path) => read_dataset_csv(Path::new(path), None)?,
        None => Dataset::xor(),
    };
    let p = Problem::new(data, LossKind::Squared, cfg.tol)?;
    let (dx, dy) = (p.data.d_x(), p.data.d_y());
    let mut run = Runner {
        cfg,
        cert: Certificate::new("demo"),
        p,
    };
    let fit = run.p.fit.clone();
    run.add(
        "baseline",
        Check::at_most("grad_norm", fit.grad_norm, cfg.tol),
    );
    run.add(
        "baseline",
        Check::above("residual_norm", fit.residual_norm(), 1e-8),
    );

    let shallow = [dx, dy + 2, dy];
    let deep = [dx, dy + 2, dy + 2, dy];
    let two = stage_two_piece(&act);
    let mut stages = Vec::new();
    let s1_min = build_stage1_minimum(&run.p, &shallow, &two)?;
    let s1_wit = stage1_descent(&run.p, &shallow, &two)?;
    let s1_risk = s1_wit.risk;
    stages.push(run.stage(s1_min.clone(), s1_wit, &shallow)?);
    let s2_min = build_stage2_minimum(&run.p, &deep, &two)?;
    let s2_wit = stage2_descent(&run.p, &deep, &two)?;
    run.add(
        "s2",
        Check::at_most("witness_matches_s1", (s2_wit.risk - s1_risk).abs(), 1e-10),
    );
    stages.push(run.stage(s2_min, s2_wit, &deep)?);
    if admissible {
        let s3_min = build_stage3_minimum(&run.p, &deep, &act)?;
        let s3_wit = build_stage3_descent(&run.p, &deep, &act)?;
        run.add(
            "s3",
            Check::at_most("witness_matches_s1", (s3_wit.risk - s1_risk).abs(), 1e-10),
        );
        stages.push(run.stage(s3_min, s3_wit, &deep)?);
    }
    if cfg.corollary {
        let equal = if act.equal_slope_turning_point().is_ok() {
            act.clone()
        } else {
            run.cert.warnings.push(format!(
                "{} has no opposite-slope turning point; the corollary stage uses abs",
                cfg.activation
            ));
            PiecewiseLinear::abs()
        };
        let dims = [dx, dy + 3, dy];
        let m = build_equal_slope_minimum(&run.p, &dims, &equal)?;
        let w = build_corollary_descent(&run.p, &dims, &equal)?;
        stages.push(run.stage(m, w, &dims)?);
    }

    let (cells, path) = if dy == 1 {
        (
            Some(cell_report(&mut run, &s1_min.net)?),
            Some(path_report(&mut run, &s1_min.net)?),
        )
    } else {
        run.cert
            .warnings
            .push("cell analysis and valley paths need a single output; skipped".into());
        (None, None)
    };

    let family = if admissible && cfg.family_size > 1 {
        Some(family_report(&mut run, &deep, &act)?)
    } else {
        None
    };

    let assumptions = check_assumptions(&run.p.data, &shallow, &act, run.p.loss);
    let first_failure = run.cert.first_failure().map(|c| c.name.clone());
    Ok(Report {
        config: cfg.clone(),
        data: DataSummary {
            n: run.p.data.n(),
            d_x: dx,
            d_y: dy,
        },
        assumptions,
        baseline: FitView::from(&fit),
        stages,
        cells,
        path,
        family,
        verdict: run.cert.verdict,
        certificate: run.cert,
        first_failure,
    })
}

fn cell_report(run: &mut Runner, net: &Mlp) -> Result<CellReport> {
    let (q, lifted, sig) = cell_view(net, &run.p.data.x)?;
    let y = &run.p.data.y;
    let risk = run.p.risk(net)?;
    let reformulation_error = (reformulated_risk(&q, &lifted, y, run.p.loss)? - risk).abs();
    let residual = quotient_gradient_residual(&q, &lifted, y, run.p.loss);
    let bound = match run.p.loss {
        LossKind::Squared => Some(solve_cell_optimum(&lifted, y)?.1),
        LossKind::CrossEntropy => None,
    };
    run.add(
        "cells",
        Check::at_most("reformulation_error", reformulation_error, 1e-12),
    );
    run.add(
        "cells",
        Check::at_most("quotient_gradient_residual", residual, 1e-8),
    );
    if let Some(b) = bound {
        run.add(
            "cells",
            Check::at_most("lower_bound_excess", b - risk, 1e-12),
        );
    }
    Ok(CellReport {
        signature: SignatureView::from(&sig),
        reformulation_error,
        quotient_gradient_residual: residual,
        cell_lower_bound: bound,
    })
}

fn path_report(run: &mut Runner, net: &Mlp) -> Result<PathReport> {
    let base = ShallowParams::from_net(net)?;
    let units = base.w1.nrows();
    let (mut a, mut b) = (base.clone(), base);
    for k in 0..units {
        a = a.rescaled(k, (k + 2) as f64);
        b = b.rescaled(k, 1.0 / (k + 2) as f64);
    }
    let path = build_valley_path(&a, &b, run.cfg.path_steps)?;
    let act = &net.activation;
    let reference = activation_pattern(&a.to_net(act)?, &run.p.data.x)?;
    let base_risk = run.p.risk(&a.to_net(act)?)?;
    let mut max_dev = 0.0f64;
    let mut constant = true;
    for q in &path {
        let n = q.to_net(act)?;
        max_dev = max_dev.max((run.p.risk(&n)? - base_risk).abs());
        constant &= activation_pattern(&n, &run.p.data.x)? == reference;
    }
    run.add("path", Check::at_most("max_risk_deviation", max_dev, 1e-10));
    run.add(
        "path",
        Check::new("pattern_constant", constant, constant as u8 as f64, 1.0),
    );
    Ok(PathReport {
        points: path.len(),
        max_risk_deviation: max_dev,
        pattern_constant: constant,
    })
}

fn family_report(run: &mut Runner, dims: &[usize], act: &PiecewiseLinear) -> Result<FamilyReport> {
    let members = enumerate_family(&run.p, dims, act, run.cfg.family_size, run.cfg.seed)?;
    let params: Vec<Vec<f64>> = members.iter().map(|m| m.net.params()).collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            let d = params[i]
                .iter()
                .zip(&params[j])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            min_dist = min_dist.min(d);
        }
    }
    let max_dev = members
        .iter()
        .map(|m| (m.risk - run.p.fit.risk).abs())
        .fold(0.0, f64::max);
    run.add(
        "family",
        Check::above("min_pairwise_distance", min_dist, 1e-6),
    );
    run.add(
        "family",
        Check::at_most("max_risk_deviation", max_dev, 1e-9),
    );
    Ok(FamilyReport {
        members: members.len(),
        min_pairwise_distance: min_dist,
        max_risk_deviation: max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::to_json_string;

    #[test]
    fn default_demo_passes() {
        let r = run_demo(&DemoConfig::default()).unwrap();
        assert!(r.verdict, "{:?}", r.first_failure);
        assert!((r.baseline.risk - 0.125).abs() < 1e-12);
        assert_eq!(r.stages.len(), 3);
        assert!(r.stages.iter().all(|s| s.gap > 1e-12));
        assert_eq!(r.path.as_ref().unwrap().points, 31);
    }

    #[test]
    fn demo_is_deterministic() {
        let cfg = DemoConfig {
            samples: 50,
            ..Default::default()
        };
        let a = to_json_string(&run_demo(&cfg).unwrap()).unwrap();
        let b = to_json_string(&run_demo(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn abs_needs_corollary_flag() {
        let mut cfg = DemoConfig {
            activation: "abs".into(),
            samples: 50,
            ..Default::default()
        };
        let e = run_demo(&cfg).unwrap_err();
        assert!(matches!(e, Error::NoAdmissibleTurningPoint));
        assert_eq!(e.exit_code(), 3);
        cfg.corollary = true;
        let r = run_demo(&cfg).unwrap();
        assert!(r.verdict, "{:?}", r.first_failure);
        assert_eq!(r.stages.last().unwrap().stage, Stage::CorollaryEqualSlope);
    }

    #[test]
    fn config_round_trips() {
        let cfg = DemoConfig {
            tol: 1e-10,
            radius: 0.1 + 0.2,
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: DemoConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
