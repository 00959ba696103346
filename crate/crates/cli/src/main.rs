use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pwl_minima::activations::PiecewiseLinear;
use pwl_minima::cells::{
    build_valley_path, cell_view, quotient_gradient_residual, reformulated_risk,
    solve_cell_optimum, ShallowParams,
};
use pwl_minima::construction::{
    build_descent, build_minimum, enumerate_family, CertifiedPoint, Problem, Stage,
};
use pwl_minima::error::{Error, Result};
use pwl_minima::io::{
    gen_dataset, read_dataset_csv, read_json, to_json_string, write_dataset, write_dataset_csv,
    DatasetSpec, FitView, SeparationInput, SeparationView, SignatureView,
};
use pwl_minima::linear_baseline::fit_linear;
use pwl_minima::network::{empirical_risk, Dataset, LossKind, Mlp};
use pwl_minima::pipeline::{run_demo, DemoConfig};
use pwl_minima::separation::separate;
use pwl_minima::verification::perturbation_local_min_test;

/// Construct and certify spurious local minima of piecewise linear networks.
#[derive(Parser)]
#[command(name = "pwlmin", version)]
struct Cli {
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Gradient tolerance of the baseline fit.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset as CSV.
    GenData {
        /// `xor`, `blobs:<k>,<per_cluster>` or `linear:<n>`.
        #[arg(long, default_value = "xor")]
        spec: String,
        /// Require data that no affine model fits and that has distinct samples.
        #[arg(long)]
        assumptions: bool,
    },
    /// Fit the affine baseline.
    Fit {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Build a spurious local minimum.
    Construct {
        #[command(flatten)]
        build: BuildArgs,
        /// Number of family members to emit.
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Build a point with lower risk than the constructed minima.
    Descend {
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Certify a network by sampled perturbations.
    Verify {
        /// Network or constructed point (JSON).
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1e-4)]
        radius: f64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long)]
        cert_out: Option<PathBuf>,
    },
    /// Activation cells of one-hidden-layer networks.
    Cells {
        #[command(subcommand)]
        action: CellsAction,
    },
    /// Risk-preserving paths between equivalent networks.
    Path {
        #[command(subcommand)]
        action: PathAction,
    },
    /// Split samples for a descent direction.
    Separate {
        /// JSON with `u`, `v` and points `x`.
        #[arg(long)]
        json: PathBuf,
    },
    /// Run the full pipeline and emit one report.
    Demo {
        #[arg(long, default_value = "threepiece")]
        activation: String,
        /// Also run the construction for turning points with opposite slopes.
        #[arg(long)]
        corollary: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        radius: f64,
        #[arg(long, default_value_t = 500)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum CellsAction {
    Analyze {
        #[arg(long)]
        net: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Subcommand)]
enum PathAction {
    /// Emit the risk along the path as CSV.
    Build {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV dataset; the XOR fixture when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of trailing label columns (default: columns named `y*`).
    #[arg(long)]
    dy: Option<usize>,
    #[arg(long, value_enum, default_value_t = Loss::Squared)]
    loss: Loss,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = StageArg::S1)]
    stage: StageArg,
    /// Layer widths, input first, e.g. `2,3,1`.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value = "relu")]
    activation: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Squared,
    Ce,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    S1,
    #[value(name = "2")]
    S2,
    #[value(name = "3")]
    S3,
    Corollary,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Squared => LossKind::Squared,
            Loss::Ce => LossKind::CrossEntropy,
        }
    }
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::S1 => Stage::S1,
            StageArg::S2 => Stage::S2,
            StageArg::S3 => Stage::S3,
            StageArg::Corollary => Stage::CorollaryEqualSlope,
        }
    }
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match &self.data {
            Some(p) => read_dataset_csv(p, self.dy),
            None if matches!(self.loss, Loss::Ce) => Ok(Dataset::xor_one_hot()),
            None => Ok(Dataset::xor()),
        }
    }

    fn problem(&self, tol: f64) -> Result<Problem> {
        Problem::new(self.load()?, self.loss.into(), tol)
    }
}

/// Either a bare network or a constructed point carrying one.
#[derive(Deserialize)]
#[serde(untagged)]
enum NetFile {
    Net(Mlp),
    Point(Box<CertifiedPoint>),
}

fn load_net(path: &Path) -> Result<Mlp> {
    Ok(match read_json::<NetFile>(path)? {
        NetFile::Net(n) => n,
        NetFile::Point(p) => p.net,
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    emit(out, &to_json_string(value)?)
}

#[derive(Serialize)]
struct CellAnalysis {
    risk: f64,
    reformulated_risk: f64,
    quotient_gradient_residual: f64,
    cell_lower_bound: Option<f64>,
    signature: SignatureView,
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { spec, assumptions } => {
            let data = gen_dataset(&DatasetSpec::parse(&spec, cli.seed)?, assumptions)?;
            match &cli.out {
                Some(p) => write_dataset_csv(&data, p)?,
                None => write_dataset(&data, std::io::stdout().lock())?,
            }
        }
        Command::Fit { data } => {
            let fit = fit_linear(&data.load()?, data.loss.into(), cli.tol)?;
            emit_json(&cli.out, &FitView::from(&fit))?;
        }
        Command::Construct { build, k } => {
            let p = build.data.problem(cli.tol)?;
            let act = PiecewiseLinear::from_preset(&build.activation)?;
            if k > 1 {
                if !matches!(build.stage, StageArg::S3) {
                    return Err(Error::Precondition(
                        "families are sampled at stage 3".into(),
                    ));
                }
                emit_json(
                    &cli.out,
                    &enumerate_family(&p, &build.dims, &act, k, cli.seed)?,
                )?;
            } else {
                emit_json(
                    &cli.out,
                    &build_minimum(&p, build.stage.into(), &build.dims, &act)?,
                )?;
            }
        }
        Command::Descend { build } => {
            let p = build.data.problem(cli.tol)?;
            let act = PiecewiseLinear::from_preset(&build.activation)?;
            emit_json(
                &cli.out,
                &build_descent(&p, build.stage.into(), &build.dims, &act)?,
            )?;
        }
        Command::Verify {
            net,
            data,
            radius,
            samples,
            cert_out,
        } => {
            let net = load_net(&net)?;
            let cert = perturbation_local_min_test(
                &net,
                &data.load()?,
                data.loss.into(),
                radius,
                samples,
                cli.seed,
            )?;
            emit_json(&cli.out, &cert)?;
            if let Some(p) = cert_out {
                emit_json(&Some(p), &cert)?;
            }
            return Ok(cert.verdict);
        }
        Command::Cells {
            action: CellsAction::Analyze { net, data },
        } => {
            let net = load_net(&net)?;
            let d = data.load()?;
            let loss = data.loss.into();
            let (q, lifted, sig) = cell_view(&net, &d.x)?;
            let bound = match loss {
                LossKind::Squared => Some(solve_cell_optimum(&lifted, &d.y)?.1),
                LossKind::CrossEntropy => None,
            };
            let report = CellAnalysis {
                risk: empirical_risk(&net, &d, loss)?,
                reformulated_risk: reformulated_risk(&q, &lifted, &d.y, loss)?,
                quotient_gradient_residual: quotient_gradient_residual(&q, &lifted, &d.y, loss),
                cell_lower_bound: bound,
                signature: SignatureView::from(&sig),
            };
            emit_json(&cli.out, &report)?;
        }
        Command::Path {
            action: PathAction::Build { a, b, steps, data },
        } => {
            let (na, nb) = (load_net(&a)?, load_net(&b)?);
            let d = data.load()?;
            let path = build_valley_path(
                &ShallowParams::from_net(&na)?,
                &ShallowParams::from_net(&nb)?,
                steps,
            )?;
            let mut csv = String::from("point,risk\n");
            for (i, q) in path.iter().enumerate() {
                let r = empirical_risk(&q.to_net(&na.activation)?, &d, data.loss.into())?;
                csv.push_str(&format!("{i},{r}\n"));
            }
            emit(&cli.out, &csv)?;
        }
        Command::Separate { json } => {
            let input: SeparationInput = read_json(&json)?;
            let res = separate(&input.u, &input.v, &input.points()?)?;
            emit_json(&cli.out, &SeparationView::new(&res, &input.u))?;
        }
        Command::Demo {
            activation,
            corollary,
            data,
            radius,
            samples,
        } => {
            let cfg = DemoConfig {
                seed: cli.seed,
                tol: cli.tol,
                activation,
                corollary,
                data: data.map(|p| p.to_string_lossy().into_owned()),
                radius,
                samples,
                ..DemoConfig::default()
            };
            let report = run_demo(&cfg)?;
            emit_json(&cli.out, &report)?;
            if let Some(name) = &report.first_failure {
                eprintln!("check failed: {name}");
            }
            return Ok(report.verdict);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
