//! `stabkit`: stability measures, destabilizing perturbations and
//! stochastic experiments for equilibria of linear(ized) dynamical systems.
//!
//! Exit codes: 0 success, 2 parse/input error, 3 invariant violation,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use stabkit::destabilizer::{
    destabilizing_harmonic_perturbation, destabilizing_stochastic_perturbation,
    perturbed_lift_abscissa,
};
use stabkit::experiments::{
    self, ensemble_experiment, family_csv, family_study, figure1_experiment, EnsembleConfig,
    Fig1SimParams, MatrixKind,
};
use stabkit::io::{matrix_to_json, read_matrix_file};
use stabkit::linalg::{spectral_abscissa_complex, spectral_norm};
use stabkit::report::{complex_matrix_to_json, measures};
use stabkit::resolvent::{harmonic_dynamical_stability, harmonic_response_curve};
use stabkit::sde::{parse_spec_json, simulate};
use stabkit::{Error, Tolerances};

#[derive(Parser)]
#[command(
    name = "stabkit",
    version,
    about = "Dynamical and structural stability measures for equilibria",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; CLI flags override it, it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Baseline relative tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Master seed for randomized commands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (or directory for figure1); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Full stability report for one matrix, as JSON.
    Measures {
        #[arg(long)]
        matrix: PathBuf,
        /// Embed the destabilizer certificates in the report.
        #[arg(long)]
        certificates: bool,
    },
    /// Minimal destabilizing perturbation, as a JSON certificate.
    Destabilize {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Integrate an SDE ensemble and emit moment time series as CSV.
    Simulate {
        /// Simulation spec JSON (drift, noise, dt, horizon, seed, x0).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        trajectories: usize,
    },
    /// Random-ensemble ordering study, as CSV.
    Ensemble {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Draw normal matrices (Q D Q^t) instead of Ginibre.
        #[arg(long)]
        normal: bool,
        /// Keep unstable draws instead of discarding them.
        #[arg(long)]
        keep_unstable: bool,
    },
    /// Sweep of the family [[-1, M^2], [-1, -1]], as CSV.
    Family {
        /// Largest M; the sweep covers 1..=M.
        #[arg(long, default_value_t = 30)]
        m_max: u32,
        /// Explicit comma-separated M values (overrides --m-max).
        #[arg(long, value_delimiter = ',')]
        m_values: Option<Vec<u32>>,
    },
    /// Internal-noise destabilization study on the fixed 2x2 system.
    Figure1 {
        /// Comma-separated noise variances.
        #[arg(long, value_delimiter = ',', default_values_t = [0.004, 0.04, 0.4])]
        sigma2: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
    },
    /// Resolvent norm on a frequency grid, as CSV.
    ResolventCurve {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        omega_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        omega_max: f64,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Harmonic,
    Stochastic,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    tol: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
}

struct Resolved {
    tol: Tolerances,
    seed: u64,
}

fn resolve(common: &Common) -> Result<Resolved, Error> {
    let file: FileConfig = match &common.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => FileConfig::default(),
    };
    let tol_value = common.tol.or(file.tol);
    let tol = match tol_value {
        Some(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Parse(format!(
                    "tolerance must be in (0, 1), got {t}"
                )));
            }
            Tolerances::with_rel(t)
        }
        None => Tolerances::default(),
    };
    let threads = common.threads.or(file.threads);
    if let Some(t) = threads {
        // Ignore "already initialized": harmless on repeated setup.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    Ok(Resolved {
        tol,
        seed: common.seed.or(file.seed).unwrap_or(42),
    })
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::NotSquare { .. }
        | Error::NonFinite { .. }
        | Error::DimensionMismatch { .. } => 2,
        Error::Invariant(_) => 3,
        _ => 4,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let resolved = resolve(&cli.common)?;
    let tol = &resolved.tol;
    match &cli.command {
        Command::Measures {
            matrix,
            certificates,
        } => {
            let a = read_matrix_file(matrix)?;
            let report = measures(&a, tol, *certificates)?;
            let violations = report.chain_violations();
            emit(
                &cli.common.out,
                &format!("{:#}\n", report.to_json()),
            )?;
            if !violations.is_empty() {
                for v in &violations {
                    eprintln!("invariant violation: {v}");
                }
                return Ok(3);
            }
            Ok(0)
        }
        Command::Destabilize { matrix, mode } => {
            let a = read_matrix_file(matrix)?;
            let doc = match mode {
                Mode::Harmonic => {
                    let p = destabilizing_harmonic_perturbation(&a, tol)?;
                    let resonance = harmonic_dynamical_stability(&a, tol)?;
                    let boundary_alpha = spectral_abscissa_complex(&(a.to_complex() + &p))?;
                    json!({
                        "mode": "harmonic",
                        "perturbation": complex_matrix_to_json(&p),
                        "norm": spectral_norm(&p),
                        "boundary_frequency": resonance.omega_star,
                        "boundary_alpha": boundary_alpha,
                    })
                }
                Mode::Stochastic => {
                    let cert = destabilizing_stochastic_perturbation(&a, tol)?;
                    let boundary_alpha = perturbed_lift_abscissa(&a, &cert.perturbation)?;
                    json!({
                        "mode": "stochastic",
                        "generators": cert.perturbation.generators().iter()
                            .map(matrix_to_json).collect::<Vec<_>>(),
                        "op_norm": cert.perturbation.op_norm(),
                        "generator_norm_sum": cert.perturbation.generator_norm_sum(),
                        "kernel_direction": matrix_to_json(cert.pi.as_dmatrix()),
                        "kernel_residual": cert.residual,
                        "boundary_alpha": boundary_alpha,
                    })
                }
            };
            emit(&cli.common.out, &format!("{doc:#}\n"))?;
            Ok(0)
        }
        Command::Simulate { spec, trajectories } => {
            let text = std::fs::read_to_string(spec)?;
            let (sde_spec, init) = parse_spec_json(&text, tol)?;
            if !sde_spec.dt_is_comfortable() {
                eprintln!(
                    "warning: ||A|| dt = {:.3} >= 0.1; the explicit scheme may be inaccurate",
                    sde_spec.a.as_dmatrix().norm() * sde_spec.dt
                );
            }
            let ens = simulate(&sde_spec, &init, *trajectories)?;
            emit(&cli.common.out, &experiments::trajectory_csv(&ens))?;
            Ok(0)
        }
        Command::Ensemble {
            count,
            n,
            normal,
            keep_unstable,
        } => {
            let cfg = EnsembleConfig {
                count: *count,
                n: *n,
                seed: resolved.seed,
                discard_unstable: !keep_unstable,
                kind: if *normal {
                    MatrixKind::Normal
                } else {
                    MatrixKind::Ginibre
                },
            };
            let ds = ensemble_experiment(&cfg, tol)?;
            emit(&cli.common.out, &ds.to_csv())?;
            let violations = ds.violations();
            if !violations.is_empty() {
                for v in &violations {
                    eprintln!("invariant violation: {v}");
                }
                return Ok(3);
            }
            Ok(0)
        }
        Command::Family { m_max, m_values } => {
            let ms: Vec<u32> = match m_values {
                Some(v) => v.clone(),
                None => (1..=*m_max).collect(),
            };
            let rows = family_study(&ms, tol)?;
            emit(&cli.common.out, &family_csv(&rows))?;
            Ok(0)
        }
        Command::Figure1 {
            sigma2,
            dt,
            horizon,
        } => {
            let params = Fig1SimParams {
                dt: *dt,
                horizon: *horizon,
                seed: resolved.seed,
            };
            let outcome = figure1_experiment(sigma2, &params, tol)?;
            let dir = cli
                .common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("figure1-out"));
            std::fs::create_dir_all(&dir)?;
            let mut verdicts = String::from("sigma2,intensity,rate,verdict,trajectory_file\n");
            for row in &outcome.rows {
                let file = format!("trajectory_sigma2_{}.csv", row.sigma2);
                std::fs::write(
                    Path::new(&dir).join(&file),
                    experiments::trajectory_csv(&row.trajectory),
                )?;
                verdicts.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.sigma2, row.intensity, row.rate, row.verdict, file
                ));
            }
            std::fs::write(Path::new(&dir).join("verdicts.csv"), &verdicts)?;
            let summary = json!({
                "sstr_w": outcome.sstr_w,
                "threshold_sigma2": outcome.threshold_sigma2,
                "out_dir": dir,
            });
            println!("{summary:#}");
            Ok(0)
        }
        Command::ResolventCurve {
            matrix,
            omega_min,
            omega_max,
            points,
        } => {
            let a = read_matrix_file(matrix)?;
            if points < &2 || omega_max <= omega_min {
                return Err(Error::Parse(
                    "need points >= 2 and omega_max > omega_min".into(),
                ));
            }
            let grid: Vec<f64> = (0..*points)
                .map(|k| omega_min + (omega_max - omega_min) * k as f64 / (*points - 1) as f64)
                .collect();
            let curve = harmonic_response_curve(&a, &grid, tol)?;
            let mut out = String::from("omega,norm\n");
            for (w, v) in curve {
                out.push_str(&format!("{w},{v}\n"));
            }
            emit(&cli.common.out, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
