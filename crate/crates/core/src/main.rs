use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ofdm_anl1::admm::{estimate_noise_sigma, solve, SolverConfig};
use ofdm_anl1::baselines::{csl1_estimate, music_estimate, music_spectrum, spatial_smooth, CsL1Config, MusicConfig, SignalDim};
use ofdm_anl1::bench::{build_scenario, run_benchmark, Algorithm, ScenarioSpec};
use ofdm_anl1::extract::{dual_polynomial_grid, estimate_from_solution, PeakOptions};
use ofdm_anl1::io::{grid_to_csv, EstimateDoc, MeasurementDoc, SceneDoc, SolutionDoc};
use ofdm_anl1::scene::{simulate, Constellation, RadarConfig};
use ofdm_anl1::{Error, Result};

#[derive(Parser)]
#[command(name = "ofdm-anl1", version, about = "Super-resolution delay-Doppler estimation for OFDM passive radar")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Anl1,
    An,
    Csl1,
    Music,
}

impl Algo {
    fn algorithm(self) -> Algorithm {
        match self {
            Algo::Anl1 => Algorithm::Anl1,
            Algo::An => Algorithm::An,
            Algo::Csl1 => Algorithm::Csl1,
            Algo::Music => Algorithm::Music,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Scene file or preset -> measurement JSON.
    Simulate {
        /// Scene document (JSON).
        #[arg(long, conflicts_with = "preset")]
        scene: Option<PathBuf>,
        /// Draw a random scene from a benchmark preset instead.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Overrides the BER of the scene or preset.
        #[arg(long)]
        ber: Option<f64>,
    },
    /// Measurement -> estimate.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "anl1")]
        algo: Algo,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Noise standard deviation; taken from the measurement or estimated when absent.
        #[arg(long)]
        sigma: Option<f64>,
        /// MUSIC signal dimension (`auto` when absent).
        #[arg(long)]
        k: Option<usize>,
        /// Also write the full ADMM solution here.
        #[arg(long)]
        solution_out: Option<PathBuf>,
    },
    /// Estimate with a dual vector, or a measurement with `--algo music`, -> grid CSV.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        #[arg(long, default_value_t = 16)]
        oversample: usize,
        #[arg(long)]
        k: Option<usize>,
    },
    /// RMSE sweep -> report.
    Bench {
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Comma-separated BER values.
        #[arg(long, value_delimiter = ',')]
        ber: Vec<f64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated algorithms (default: all four).
        #[arg(long, value_enum, value_delimiter = ',')]
        algo: Vec<Algo>,
        /// Per-trial CSV destination.
        #[arg(long)]
        trials_out: Option<PathBuf>,
    },
    /// Emit a preset scenario spec.
    Scenario {
        #[arg(long, default_value = "rmse")]
        preset: String,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &FsPath) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let log = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::Simulate {
            scene,
            preset,
            trial,
            ber,
        } => {
            let (scene_doc, scene, config) = match (scene, preset) {
                (Some(path), _) => {
                    let doc: SceneDoc = read_json(&path)?;
                    let scene = doc.to_scene()?;
                    let config = doc.config.clone();
                    (doc, scene, config)
                }
                (None, Some(name)) => {
                    let mut spec = ScenarioSpec::preset(&name)?;
                    spec.seed = seed;
                    let (scene, config) = build_scenario(&spec, trial)?;
                    let doc = SceneDoc::from_scene(&scene, &config, spec.constellation, spec.ber);
                    (doc, scene, config)
                }
                (None, None) => return Err(Error::Config("simulate needs --scene or --preset".into())),
            };
            let ber = ber.unwrap_or(scene_doc.ber);
            let constellation = Constellation::from_kind(scene_doc.constellation);
            let (meas, mask) = simulate(&scene, &config, &constellation, ber, seed)?;
            log(format!(
                "simulated {} paths, {} symbol errors",
                scene.path_count(),
                mask.iter().filter(|b| **b).count()
            ));
            let mut doc = MeasurementDoc::from_measurement(&meas);
            doc.config = Some(config);
            doc.scene = Some(SceneDoc { ber, ..scene_doc });
            emit(&cli.out, &json(&doc)?)
        }
        Command::Solve {
            input,
            algo,
            lambda,
            mu,
            rho,
            iters,
            tol,
            sigma,
            k,
            solution_out,
        } => {
            let doc: MeasurementDoc = read_json(&input)?;
            let meas = doc.to_measurement()?;
            let config = doc
                .config
                .clone()
                .unwrap_or_else(|| RadarConfig::standard(meas.m, meas.n, f64::NEG_INFINITY));
            let sigma = sigma.unwrap_or_else(|| {
                if meas.sigma2 > 0.0 {
                    meas.sigma2.sqrt()
                } else {
                    estimate_noise_sigma(&meas)
                }
            });
            let (m, n) = (meas.m, meas.n);
            let (estimate, lambda_used) = match algo {
                Algo::Anl1 | Algo::An => {
                    let mut cfg = if algo == Algo::Anl1 {
                        SolverConfig::from_noise(sigma, m, n)
                    } else {
                        SolverConfig::atomic_only(sigma, m, n)
                    };
                    if let Some(v) = lambda {
                        cfg.lambda = v;
                    }
                    if let Some(v) = mu {
                        cfg.mu = v;
                    }
                    if algo == Algo::An {
                        cfg.mu = 0.0;
                    }
                    if let Some(v) = rho {
                        cfg.rho = v;
                    }
                    if let Some(v) = iters {
                        cfg.max_iters = v;
                    }
                    if let Some(v) = tol {
                        cfg = cfg.with_tol(v);
                    }
                    let sol = solve(&meas, &cfg)?;
                    let d = &sol.diagnostics;
                    log(format!(
                        "admm: {} iterations, converged {}, objective {}",
                        d.iterations, d.converged, d.final_objective
                    ));
                    if let Some(path) = &solution_out {
                        fs::write(path, json(&SolutionDoc::new(&sol, &meas, &cfg))?)?;
                    }
                    (estimate_from_solution(&sol, &meas, &cfg, &PeakOptions::default())?, Some(cfg.lambda))
                }
                Algo::Csl1 => {
                    let mut cfg = CsL1Config::standard(m, n, sigma);
                    if let Some(v) = lambda {
                        cfg.gamma = v;
                    }
                    if let Some(v) = iters {
                        cfg.max_iters = v;
                    }
                    if let Some(v) = tol {
                        cfg.tol = v;
                    }
                    (csl1_estimate(&meas, &cfg)?, None)
                }
                Algo::Music => {
                    let dim = k.map_or(SignalDim::Auto, SignalDim::Known);
                    (music_estimate(&meas, &MusicConfig::standard(m, n, dim))?, None)
                }
            };
            log(format!("{} paths", estimate.paths.len()));
            let out = EstimateDoc::new(algo.algorithm().label(), &estimate, &config, lambda_used);
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit(&cli.out, &json(&out)?),
                Format::Csv => emit(&cli.out, &out.to_csv()),
            }
        }
        Command::Spectrum {
            input,
            algo,
            oversample,
            k,
        } => {
            if oversample == 0 {
                return Err(Error::Config("oversample must be positive".into()));
            }
            let grid = if algo == Some(Algo::Music) {
                let doc: MeasurementDoc = read_json(&input)?;
                let meas = doc.to_measurement()?;
                let mut cfg = MusicConfig::standard(meas.m, meas.n, k.map_or(SignalDim::Auto, SignalDim::Known));
                cfg.grid_phi = oversample * meas.m;
                cfg.grid_psi = oversample * meas.n;
                music_spectrum(&spatial_smooth(&meas, &cfg)?, &cfg)?
            } else {
                let doc: EstimateDoc = read_json(&input)?;
                let nu = doc
                    .nu()?
                    .ok_or_else(|| Error::Config("input has no dual vector (nu_hat)".into()))?;
                if nu.len() != doc.m * doc.n {
                    return Err(Error::Config("nu_hat length does not match M*N".into()));
                }
                let grid = dual_polynomial_grid(&nu, doc.m, doc.n, oversample * doc.m, oversample * doc.n);
                if let Some(lambda) = doc.lambda {
                    log(format!("certificate level lambda = {lambda}"));
                }
                grid
            };
            emit(&cli.out, &grid_to_csv(&grid))
        }
        Command::Bench {
            preset,
            spec,
            ber,
            trials,
            algo,
            trials_out,
        } => {
            let mut spec = match (preset, spec) {
                (_, Some(path)) => read_json::<ScenarioSpec>(&path)?,
                (Some(name), None) => ScenarioSpec::preset(&name)?,
                (None, None) => ScenarioSpec::rmse(),
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            let bers = if ber.is_empty() { vec![spec.ber] } else { ber };
            let algorithms: Vec<Algorithm> = if algo.is_empty() {
                Algorithm::ALL.to_vec()
            } else {
                algo.iter().map(|a| a.algorithm()).collect()
            };
            log(format!(
                "bench '{}': {} trials x {} BER x {} algorithms",
                spec.name,
                spec.trials,
                bers.len(),
                algorithms.len()
            ));
            let report = run_benchmark(&spec, &algorithms, &bers)?;
            if let Some(path) = trials_out {
                fs::write(path, report.trials_csv())?;
            }
            match cli.format.unwrap_or(Format::Csv) {
                Format::Csv => emit(&cli.out, &report.to_csv()),
                Format::Json => emit(&cli.out, &json(&report)?),
            }
        }
        Command::Scenario { preset } => {
            let mut spec = ScenarioSpec::preset(&preset)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            emit(&cli.out, &json(&spec)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
