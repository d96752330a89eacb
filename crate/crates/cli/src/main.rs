//! `aqm2d` command-line driver.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aqm2d_core::bessel_legendre::{bl_lower_bound, derivative_energy, PolyPath};
use aqm2d_core::linearize::jacobian_rel_error;
use aqm2d_core::lmi::SolveOptions;
use aqm2d_core::sim2d::{summarize, write_csv, write_profile_csv, ProbabilityInput};
use aqm2d_core::{
    analyze, decay_profile, diff_report_flagged, fd_jacobians, jacobians_with, matrix_serde,
    published, residual, simulate_linear, simulate_nonlinear, solve_equilibrium, synthesize,
    AnalysisOptions, BoundaryData, EquilibriumPoint, Error, GridSpec, NetworkParams, StateSpace2D,
    Status, TauSensitivity,
};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use config::{ScenarioConfig, SimModel, SystemSource};

/// Horizon in seconds on each axis when the config has no grid.
const DEFAULT_HORIZON: f64 = 20.0;
const LEMMA_MAX_DEGREE: usize = 5;
const LEMMA_MAX_ORDER: usize = 2;

#[derive(Parser)]
#[command(
    name = "aqm2d",
    version,
    about = "Two-dimensional TCP/AQM model toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Operating point and its residual.
    Equilibrium,
    /// Roesser state-space matrices at the operating point.
    Linearize,
    /// Zero-input stability LMI.
    Analyze,
    /// State-feedback synthesis LMI and gain.
    Synthesize,
    /// Grid simulation with an optional gain.
    Simulate {
        /// `none`, `paper-KA`, `paper-KB` or a gain JSON file.
        #[arg(long, default_value = "none")]
        gain: String,
    },
    /// Randomized check of the Bessel-Legendre inequality.
    VerifyLemma,
    /// Computed against published matrices under both sign conventions.
    DiffReport,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn equilibrium(e: Error) -> Self {
        Self {
            code: 2,
            message: format!("equilibrium: {e}"),
        }
    }

    fn solver(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn gain(e: Error) -> Self {
        Self {
            code: 4,
            message: format!("gain: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::IllConditioned(_) => Self::gain(e),
            other => Self::config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("--config is required"))?;
    let cfg = ScenarioConfig::load(path).map_err(Failure::config)?;
    let ctx = Context {
        out: cfg.output_dir(cli.out.as_deref()),
        cfg,
    };
    match &cli.command {
        Command::Equilibrium => ctx.equilibrium(),
        Command::Linearize => ctx.linearize(),
        Command::Analyze => ctx.analyze(),
        Command::Synthesize => ctx.synthesize(),
        Command::Simulate { gain } => ctx.simulate(gain),
        Command::VerifyLemma => ctx.verify_lemma(),
        Command::DiffReport => ctx.diff_report(),
    }
}

struct Context {
    cfg: ScenarioConfig,
    out: PathBuf,
}

impl Context {
    fn params(&self) -> Result<NetworkParams, Failure> {
        self.cfg.params().map_err(Failure::config)
    }

    /// Override when configured, solved otherwise.
    fn point(&self, params: &NetworkParams) -> Result<EquilibriumPoint, Failure> {
        match &self.cfg.operating_point {
            Some(ov) => EquilibriumPoint::from_override(params, ov).map_err(Failure::equilibrium),
            None => solve_equilibrium(params).map_err(Failure::equilibrium),
        }
    }

    fn system(&self) -> Result<StateSpace2D, Failure> {
        let ss = match &self.cfg.system {
            SystemSource::Linearized => {
                let params = self.params()?;
                let eq = self.point(&params)?;
                jacobians_with(&eq, &params, self.cfg.linearization)?
            }
            SystemSource::Published(case) => case.load().system,
            SystemSource::Custom(ss) => ss.clone(),
        };
        if self.cfg.zero_inputs {
            let (n, m) = (ss.n(), ss.m());
            return Ok(StateSpace2D::new(
                ss.n_h,
                ss.n_v,
                ss.a,
                ss.a_tau,
                DMatrix::zeros(n, m),
                DMatrix::zeros(n, m),
                ss.tau1,
                ss.tau2,
            )?);
        }
        Ok(ss)
    }

    fn lmi_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            balance: self.cfg.lmi.balance,
            g1: self.cfg.lmi.g1,
            solve: SolveOptions {
                margin_floor: self.cfg.lmi.margin_floor,
                ..SolveOptions::default()
            },
        }
    }

    fn emit<T: Serialize>(&self, file: &str, value: &T) -> Outcome {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(file), format!("{text}\n"))?;
        // A closed stdout is not an error; the artifact is on disk.
        let _ = writeln!(std::io::stdout().lock(), "{text}");
        Ok(())
    }

    fn save<T: Serialize>(&self, file: &str, value: &T) -> Outcome {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(file), format!("{text}\n"))?;
        Ok(())
    }

    fn equilibrium(&self) -> Outcome {
        let params = self.params()?;
        let eq = self.point(&params)?;
        let source = if self.cfg.operating_point.is_some() {
            "override"
        } else {
            "solved"
        };
        self.emit(
            "equilibrium.json",
            &json!({ "source": source, "point": eq, "residual": residual(&eq, &params) }),
        )
    }

    fn linearize(&self) -> Outcome {
        let ss = self.system()?;
        let mut report = json!({ "system": ss });
        if self.cfg.system == SystemSource::Linearized {
            let params = self.params()?;
            let eq = self.point(&params)?;
            let exact = jacobians_with(&eq, &params, TauSensitivity::Exact)?;
            let fd = fd_jacobians(&eq, &params, self.cfg.tolerances.fd_step)?;
            report["equilibrium"] = json!(eq);
            report["convention"] = json!(self.cfg.linearization);
            report["fd_rel_error"] = json!(jacobian_rel_error(&exact, &fd));
        }
        self.save("state_space.json", &ss)?;
        self.emit("linearization.json", &report)
    }

    fn analyze(&self) -> Outcome {
        let ss = self.system()?;
        let analysis = analyze(&ss, &self.lmi_options())?;
        if let Some(cert) = &analysis.certificate {
            self.save("certificate.json", cert)?;
        }
        self.emit(
            "analysis.json",
            &json!({ "system": ss, "verdict": analysis.verdict }),
        )?;
        unknown(analysis.verdict.status, &analysis.verdict.diagnostics)
    }

    fn synthesize(&self) -> Outcome {
        let ss = self.system()?;
        let syn = synthesize(&ss, &self.lmi_options())?;
        if let Some(k) = &syn.gain {
            let file = matrix_serde::serialize(k, serde_json::value::Serializer)
                .map_err(|e| Failure::config(e.to_string()))?;
            self.save("gain.json", &file)?;
            let closed = ss.closed_loop(k)?;
            self.save("closed_loop.json", &closed)?;
        }
        self.emit("synthesis.json", &syn)?;
        unknown(syn.verdict.status, &syn.verdict.diagnostics)
    }

    fn gain(&self, source: &str, ss: &StateSpace2D) -> Result<Option<DMatrix<f64>>, Failure> {
        let k = match source {
            "none" => return Ok(None),
            "paper-KA" => published::scenario_a().gain,
            "paper-KB" => published::scenario_b().gain,
            path => read_gain(Path::new(path))?,
        };
        if k.nrows() != ss.m() || k.ncols() != ss.n() {
            return Err(Failure::config(format!(
                "gain is {}x{}, system needs {}x{}",
                k.nrows(),
                k.ncols(),
                ss.m(),
                ss.n()
            )));
        }
        Ok(Some(k))
    }

    fn grid(&self, tau1: f64, tau2: f64) -> Result<GridSpec, Failure> {
        match self.cfg.grid {
            Some(_) => self.cfg.grid_spec(tau1, tau2).map_err(Failure::config),
            None => Ok(GridSpec::default_for(
                tau1,
                tau2,
                DEFAULT_HORIZON,
                DEFAULT_HORIZON,
            )?),
        }
    }

    fn boundary(&self, n_h: usize, n: usize) -> Result<BoundaryData, Failure> {
        let x0 = match &self.cfg.boundary {
            Some(b) if b.len() == n => b.clone(),
            Some(b) => {
                return Err(Failure::config(format!(
                    "boundary has {} entries, system has {n} states",
                    b.len()
                )))
            }
            None if n == 4 => published::X0.to_vec(),
            None => vec![1.0; n],
        };
        Ok(BoundaryData::from_state(&x0, n_h))
    }

    fn simulate(&self, gain_source: &str) -> Outcome {
        let ss = self.system()?;
        let k = self.gain(gain_source, &ss)?;
        let bdry = self.boundary(ss.n_h, ss.n())?;
        let traj = match self.cfg.simulation.model {
            SimModel::Linear => {
                let spec = self.grid(ss.tau1, ss.tau2)?;
                simulate_linear(&ss, k.as_ref(), &bdry, &spec)?
            }
            SimModel::Nonlinear => {
                let params = self.params()?;
                let eq = self.point(&params)?;
                let spec = self.grid(eq.tau1, eq.tau2)?;
                let control = match &k {
                    Some(k) => ProbabilityInput::Feedback(k.clone()),
                    None => ProbabilityInput::Equilibrium,
                };
                simulate_nonlinear(&params, &eq, &control, &bdry, &spec)?
            }
        };
        let tol = &self.cfg.tolerances;
        let summary = summarize(&traj, tol.tail_fraction, tol.decay_threshold);
        fs::create_dir_all(&self.out)?;
        let csv = BufWriter::new(File::create(self.out.join("trajectory.csv"))?);
        write_csv(&traj, csv, self.cfg.simulation.csv_stride)?;
        let profile = BufWriter::new(File::create(self.out.join("profile.csv"))?);
        write_profile_csv(&decay_profile(&traj), profile)?;
        self.emit(
            "summary.json",
            &json!({
                "gain": gain_source,
                "model": self.cfg.simulation.model,
                "grid": traj.spec,
                "summary": summary,
            }),
        )
    }

    fn verify_lemma(&self) -> Outcome {
        let tol = &self.cfg.tolerances;
        let mut rng = ChaCha8Rng::seed_from_u64(tol.seed);
        let dim = 2;
        let mut worst_gap = f64::INFINITY;
        let mut worst_order = f64::INFINITY;
        for _ in 0..tol.lemma_samples {
            let degree = rng.gen_range(0..=LEMMA_MAX_DEGREE);
            let coeffs: Vec<DVector<f64>> = (0..=degree)
                .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let a = rng.gen_range(-2.0..2.0);
            let b = a + rng.gen_range(0.1..3.0);
            let l = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let z = &l * l.transpose() + DMatrix::identity(dim, dim) * 0.1;
            let path = PolyPath::new(coeffs)?;
            let lhs = derivative_energy(&path, &z, a, b)?;
            let scale = lhs.abs().max(1.0);
            let bounds = (0..=LEMMA_MAX_ORDER)
                .map(|n| bl_lower_bound(&path, &z, a, b, n))
                .collect::<Result<Vec<f64>, _>>()?;
            for (n, bound) in bounds.iter().enumerate() {
                worst_gap = worst_gap.min((lhs - bound) / scale);
                if n > 0 {
                    worst_order = worst_order.min((bound - bounds[n - 1]) / scale);
                }
            }
        }
        self.emit(
            "lemma.json",
            &json!({
                "samples": tol.lemma_samples,
                "seed": tol.seed,
                "max_degree": LEMMA_MAX_DEGREE,
                "max_order": LEMMA_MAX_ORDER,
                "min_relative_gap": worst_gap,
                "min_relative_order_step": worst_order,
            }),
        )
    }

    fn diff_report(&self) -> Outcome {
        let case = self
            .cfg
            .reference
            .ok_or_else(|| Failure::config("diff-report needs a reference case"))?
            .load();
        let params = self.params()?;
        let eq = self.point(&params)?;
        let tol = &self.cfg.tolerances;
        let mut reports = serde_json::Map::new();
        for (label, conv) in [
            ("exact", TauSensitivity::Exact),
            ("inverted", TauSensitivity::Inverted),
        ] {
            let computed = jacobians_with(&eq, &params, conv)?;
            let report = diff_report_flagged(
                &computed,
                &case.system,
                tol.diff_rel,
                tol.diff_abs,
                &case.flagged,
            )?;
            eprintln!("convention {label}:\n{report}");
            reports.insert(label.into(), json!(report));
        }
        self.emit("diff_report.json", &reports)
    }
}

fn unknown(status: Status, diagnostics: &[String]) -> Outcome {
    if status == Status::SolverUnknown {
        return Err(Failure::solver(format!(
            "solver status unknown: {}",
            diagnostics.join("; ")
        )));
    }
    Ok(())
}

/// Accepts a bare matrix or any object with a `gain` matrix field.
fn read_gain(path: &Path) -> Result<DMatrix<f64>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read gain {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid gain file: {e}")))?;
    let matrix = match value.get("gain") {
        Some(g) if !g.is_null() => g.clone(),
        Some(_) => return Err(Failure::config("gain file holds no gain")),
        None => value,
    };
    matrix_serde::deserialize(matrix)
        .map_err(|e| Failure::config(format!("invalid gain matrix: {e}")))
}
