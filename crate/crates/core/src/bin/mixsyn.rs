use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixsyn::cruise;
use mixsyn::gare::{self, GameConfig};
use mixsyn::hinf;
use mixsyn::learner::{self, KnownData};
use mixsyn::lti::{FeedbackGain, LtiPlant};
use mixsyn::matops;
use mixsyn::narmax::{Dataset, NarmaxModel};
use mixsyn::pipeline::{self, GainsFile, PipelineConfig};
use mixsyn::simsde::{self, Trajectory};
use mixsyn::{Error, Result};

#[derive(Parser)]
#[command(name = "mixsyn", version, about = "Mixed H2/H-infinity synthesis from data")]
struct Cli {
    /// Seed for every random draw; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cruise-control identification dataset.
    BenchmarkGen {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Fit a NARMAX model to a dataset CSV.
    Identify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Linearize a fitted model about the configured operating point.
    Linearize {
        #[arg(long)]
        model: PathBuf,
    },
    /// Search for a gain meeting the H-infinity bound.
    Hinf {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        /// Candidate closed-loop poles, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        poles: Option<Vec<f64>>,
    },
    /// Solve the game Riccati equation by policy iteration on the model.
    Synthesize {
        #[arg(long)]
        model_based: bool,
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        /// Initial gain (JSON with a `k` entry); searched when absent.
        #[arg(long)]
        k1: Option<PathBuf>,
    },
    /// Simulate the closed loop under a gain.
    Simulate {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        gain: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        tf: Option<f64>,
        #[arg(long)]
        no_noise: bool,
    },
    /// Learn the robust gains from state-input data.
    Learn {
        /// Plant supplying the known weights and disturbance input, and the reference solution.
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        k1: PathBuf,
        /// Recorded trajectory CSV; simulated from the config when absent.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Run the configured pipeline stages.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_plant(path: &Path) -> Result<LtiPlant> {
    LtiPlant::from_json(&pipeline::read(path)?)
}

fn load_gain(path: &Path) -> Result<FeedbackGain> {
    Ok(FeedbackGain(matops::from_rows(&GainsFile::from_json(&pipeline::read(path)?)?.k)?))
}

fn search_k1(plant: &LtiPlant, gamma: f64, cfg: &PipelineConfig) -> Result<hinf::AdmissibleGain> {
    hinf::find_admissible_gain(plant, gamma, &cfg.gain_search.poles, &cfg.search_options())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.display().to_string(), source })?;
    let put = |name: &str, text: &str| -> Result<()> {
        let path = out.join(name);
        pipeline::write(&path, text)?;
        println!("wrote {}", path.display());
        Ok(())
    };
    match &cli.command {
        Command::BenchmarkGen { samples } => {
            let mut bench = cfg.benchmark.clone();
            if let Some(s) = samples {
                bench.samples = *s;
            }
            let data = cruise::generate_benchmark(&cfg.cruise, &bench, cfg.seed)?;
            put("dataset.csv", &data.to_csv())?;
        }
        Command::Identify { data } => {
            let data = Dataset::from_csv(&pipeline::read(data)?)?;
            let (model, rep, pred, test) = pipeline::identify_stage(&data, &cfg.identification)?;
            print!("{model}");
            println!("held-out RRSE: {:?}", rep.rrse);
            put("model.json", &model.to_json())?;
            put("prediction.csv", &pipeline::prediction_csv(&test, &pred))?;
        }
        Command::Linearize { model } => {
            let model = NarmaxModel::from_json(&pipeline::read(model)?)?;
            let (eq, plant) = pipeline::linearize_stage(&model, &cfg.linearization)?;
            println!("equilibrium x = {:?}, u = {:?} (residual {:.3e})", eq.x_eq, eq.u_eq, eq.residual);
            let rep = mixsyn::lti::check_realizability(&plant);
            println!("stabilizable: {}, observable: {}", rep.stabilizable, rep.observable);
            put("plant.json", &plant.to_json())?;
        }
        Command::Hinf { plant, gamma, poles } => {
            let plant = load_plant(plant)?;
            let gamma = gamma.unwrap_or(cfg.gamma);
            let mut cfg = cfg.clone();
            if let Some(p) = poles {
                cfg.gain_search.poles = p.clone();
            }
            let found = search_k1(&plant, gamma, &cfg)?;
            println!("admissible gain at pole {:?}: ||T_zw|| = {:.6} < {gamma}", found.pole, found.norm);
            put("gain_search.csv", &pipeline::sweep_csv(&plant, &found.sweep))?;
            put("k1.json", &GainsFile { k: matops::to_rows(&found.gain), l: None, p: None }.to_json())?;
        }
        Command::Synthesize { model_based, plant, gamma, k1 } => {
            if !model_based {
                return Err(Error::InvalidArgument("synthesize requires --model-based; use `learn` for the data-driven solver".into()));
            }
            let plant = load_plant(plant)?;
            let gamma = gamma.unwrap_or(cfg.gamma);
            let k1 = match k1 {
                Some(p) => load_gain(p)?,
                None => search_k1(&plant, gamma, &cfg)?.gain,
            };
            let game = GameConfig { max_outer: cfg.learn.max_outer, max_inner: cfg.learn.max_inner, tol: cfg.learn.tol };
            let sol = gare::solve_game(&plant, gamma, &k1, &game)?;
            println!("converged: {}, GARE residual {:.3e}", sol.converged, sol.residual);
            let mut csv = String::from("p,q,norm_P,delta_K,residual\n");
            for it in &sol.history {
                csv.push_str(&format!("{},{},{},{},{}\n", it.p, it.q, it.value.norm(), it.delta_k, it.residual));
            }
            put("gare_history.csv", &csv)?;
            let gains = GainsFile {
                k: matops::to_rows(&sol.k_star),
                l: Some(matops::to_rows(&sol.l_star)),
                p: Some(matops::to_rows(sol.p.as_matrix())),
            };
            put("gare.json", &gains.to_json())?;
        }
        Command::Simulate { plant, gain, dt, tf, no_noise } => {
            let plant = load_plant(plant)?;
            let k = load_gain(gain)?;
            let mut sim = cfg.collect.sim_config(plant.m(), cfg.seed);
            sim.exploration = simsde::Exploration::none(plant.m());
            sim.x0 = Some(cfg.deploy.x0.clone()).filter(|x| x.len() == plant.n());
            if let Some(dt) = dt {
                sim.dt = *dt;
            }
            if let Some(tf) = tf {
                sim.horizon = *tf;
            }
            sim.noise_on = !no_noise;
            let traj = simsde::simulate(&plant, &k, &sim)?;
            put("trajectory.csv", &traj.to_csv())?;
        }
        Command::Learn { plant, k1, trajectory, gamma } => {
            let plant = load_plant(plant)?;
            let k1 = load_gain(k1)?;
            let gamma = gamma.unwrap_or(cfg.gamma);
            let traj = match trajectory {
                Some(p) => Trajectory::from_csv(&pipeline::read(p)?)?,
                None => simsde::simulate(&plant, &k1, &cfg.collect.sim_config(plant.m(), cfg.seed))?,
            };
            let batch = simsde::collect_batch(&traj, cfg.collect.interval_len)?;
            let oracle = pipeline::oracle_for(&plant, gamma).ok().map(|(o, _)| o);
            let res = learner::robust_gains(&batch, &KnownData::from_plant(&plant), &cfg.learn.learner_config(gamma), &k1, oracle.as_ref())?;
            println!("converged: {} after {} iterates", res.converged, res.history.len());
            put("learning_history.csv", &res.history_csv())?;
            let gains = GainsFile {
                k: matops::to_rows(&res.k_hat),
                l: Some(matops::to_rows(&res.l_hat)),
                p: Some(matops::to_rows(res.p_hat.as_matrix())),
            };
            put("gains.json", &gains.to_json())?;
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&cfg, out)?;
            for a in &report.artifacts {
                println!("wrote {}", out.join(a).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
