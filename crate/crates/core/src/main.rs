use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use h2fed::data::Scenario;
use h2fed::experiment::{
    load_datasets, prepare_output_dir, prepare_seed, report, run_all_seeds, run_sweep, DataSource, ExperimentError, RunConfig,
    ScenarioPreset, SweepAxis,
};
use h2fed::Baseline;

#[derive(Parser)]
#[command(name = "h2fed", version, about = "Hierarchical federated learning simulator for vehicular networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the shared starting model and write the per-seed artifacts.
    Pretrain(Common),
    /// Pretrain and run one configuration for every seed.
    Run(Common),
    /// Run every value of one parameter, sharing the pretrained model per seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary: mu1, mu2, csr, scd, fsr, lar or framework.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Recompute summary statistics from a finished run directory.
    Report {
        dir: PathBuf,
    },
    /// Print the effective configuration as TOML.
    ShowConfig(Common),
    /// List the named presets.
    Presets,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied after the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Framework preset: fedavg, fedprox, hierfavg or h2fed.
    #[arg(long)]
    framework: Option<String>,
    /// Override any key, e.g. --set training.lr=0.05 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    csr: Option<f64>,
    #[arg(long)]
    scd: Option<u64>,
    #[arg(long)]
    fsr: Option<f64>,
    #[arg(long)]
    lar: Option<usize>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    /// 1 for label skew across RSUs, 2 for label skew across agents.
    #[arg(long)]
    scenario: Option<u8>,
    /// Read MNIST IDX files from this directory.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Use the synthetic dataset with this many training examples.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Also train the centralized reference for MSE.
    #[arg(long)]
    centralized: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    overwrite: bool,
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, Option<ScenarioPreset>), ExperimentError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        let preset = self.preset.as_deref().map(str::parse::<ScenarioPreset>).transpose()?;
        if let Some(p) = preset {
            p.apply(&mut cfg);
        }
        if let Some(f) = &self.framework {
            let b: Baseline = f.parse().map_err(|e| ExperimentError::Config(format!("{e}")))?;
            cfg.apply_baseline(b);
        }
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| ExperimentError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(r) = self.rounds {
            cfg.run.rounds = r;
        }
        if !self.seeds.is_empty() {
            cfg.run.seeds = self.seeds.clone();
        }
        let het = &mut cfg.heterogeneity;
        het.csr = self.csr.unwrap_or(het.csr);
        het.scd_seconds = self.scd.unwrap_or(het.scd_seconds);
        het.fsr = self.fsr.unwrap_or(het.fsr);
        het.lar = self.lar.unwrap_or(het.lar);
        cfg.federation.mu1 = self.mu1.unwrap_or(cfg.federation.mu1);
        cfg.federation.mu2 = self.mu2.unwrap_or(cfg.federation.mu2);
        match self.scenario {
            None => {}
            Some(1) => cfg.partition.scenario = Scenario::ScenarioI,
            Some(2) => cfg.partition.scenario = Scenario::ScenarioII,
            Some(n) => return Err(ExperimentError::Config(format!("--scenario must be 1 or 2, got {n}"))),
        }
        if let Some(dir) = &self.mnist_dir {
            cfg.data.source = DataSource::Mnist;
            cfg.data.mnist_dir = dir.clone();
        }
        if let Some(n) = self.synthetic {
            cfg.data.source = DataSource::Synthetic;
            cfg.data.synthetic_train = n;
        }
        if self.centralized {
            cfg.run.centralized_reference = true;
        }
        if let Some(out) = &self.out {
            cfg.run.output_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok((cfg, preset))
    }

    fn output_dir(&self, cfg: &RunConfig, verb: &str) -> Result<PathBuf, ExperimentError> {
        let dir = cfg.run.output_dir.clone().unwrap_or_else(|| Path::new("runs").join(format!("{verb}-{}", &cfg.hash()[..12])));
        prepare_output_dir(&dir, self.overwrite)?;
        fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| ExperimentError::Config(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Presets => {
            for p in ScenarioPreset::ALL {
                println!("{:<12} {}", p.name(), p.description());
            }
        }
        Command::ShowConfig(common) => {
            let (cfg, _) = common.resolve()?;
            print!("{}", cfg.to_toml());
            println!("# hash {}", cfg.hash());
        }
        Command::Pretrain(common) => {
            let (cfg, _) = common.resolve()?;
            let out = common.output_dir(&cfg, "pretrain")?;
            let data = load_datasets(&cfg)?;
            for &seed in &cfg.run.seeds {
                let stage = prepare_seed(&cfg, &data, seed, Some(&out.join(format!("seed-{seed}"))))?;
                println!("seed {seed}: ACC_pre {:.4} after {} epochs", stage.pretrained.acc_pre, stage.pretrained.curve.len() - 1);
            }
            println!("wrote {}", out.display());
        }
        Command::Run(common) => {
            let (cfg, _) = common.resolve()?;
            let out = common.output_dir(&cfg, "run")?;
            let data = load_datasets(&cfg)?;
            for s in run_all_seeds(&cfg, &data, Some(&out))? {
                println!("seed {}: ACC_pre {:.4}, final accuracy {:.4}", s.header.seed, s.header.acc_pre, s.final_acc().unwrap_or(f64::NAN));
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { common, axis, values } => {
            let (cfg, preset) = common.resolve()?;
            let implied = preset.and_then(|p| p.sweep());
            let (axis, values) = match (axis, implied) {
                (Some(a), _) => (a.parse::<SweepAxis>()?, values),
                (None, Some((a, v))) => (a, if values.is_empty() { v } else { values }),
                (None, None) => return Err(ExperimentError::Config("sweep needs --axis or a sweep preset".into())),
            };
            let out = common.output_dir(&cfg, "sweep")?;
            let data = load_datasets(&cfg)?;
            let outcome = run_sweep(&cfg, &data, axis, &values, Some(&out))?;
            for row in &outcome.summary {
                println!("{:<20} seed {:>4}: final {:.4}, std {:.4}", row.variant, row.seed, row.final_acc, row.std);
            }
            println!("wrote {}", out.display());
        }
        Command::Report { dir } => {
            let r = report::report(&dir)?;
            print!("{}", r.render());
            if !r.problems.is_empty() {
                return Err(ExperimentError::Aborted(format!("{} stored values disagree with recomputation", r.problems.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
