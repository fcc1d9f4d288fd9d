//! The `mirid` command line: `simulate`, `train`, `recon` and `evaluate`.
//!
//! Every command resolves its configuration (file, then `--seed`/`--out`
//! overrides), validates it, and echoes it to the output directory as
//! `resolved_config.toml`.
//!
//! Output files, relative to the output directory:
//! - `simulate`: `dataset.mirid`
//! - `train`: `<method>_model.mirid`, `<method>_history.csv` (one
//!   `sirid_history_shot<m>.csv` per shot for the single-shot method)
//! - `recon`: `<label>.mirid` and `<label>_pgm/vol<v>.pgm` with `.scale` sidecars,
//!   where the label is the method name, suffixed `_untrained` under `--untrained`
//! - `evaluate`: `metrics.csv`; each reconstruction is labelled by its file stem

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::io::{self, RunConfig};
use crate::metrics::{evaluate_method, MetricsReport};
use crate::numerics::{RealTensor, RngStream};
use crate::recon::{combine_shots, ReconMode};
use crate::simulate::{simulate_dataset, SimulatedDataset};
use crate::ssltrain::{EpochRecord, Model, TrainHistory};

pub const DATASET_FILE: &str = "dataset.mirid";
pub const METRICS_FILE: &str = "metrics.csv";

/// Substream of the run seed used for network initialization and training.
const TRAIN_STREAM: u64 = 0x7472_6169_6e;

#[derive(Debug, Parser)]
#[command(name = "mirid", version, about = "Multi-shot diffusion MRI reconstruction with self-supervised unrolled denoisers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom acquisition and write the dataset container.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train denoisers self-supervised on the diffusion-weighted volumes.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// mirid or sirid.
        #[arg(long, default_value = "mirid")]
        method: ReconMode,
    },
    /// Reconstruct every volume of a dataset.
    Recon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// sense, mirid or sirid.
        #[arg(long, default_value = "mirid")]
        method: ReconMode,
        /// Trained model; required for mirid and sirid unless --untrained.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use freshly initialized denoisers instead of a checkpoint.
        #[arg(long)]
        untrained: bool,
    },
    /// Score reconstructions against the dataset's ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Reconstruction files written by `recon`.
        #[arg(required = true)]
        recons: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Simulate { common }
            | Self::Train { common, .. }
            | Self::Recon { common, .. }
            | Self::Evaluate { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out)?;
    cfg.echo(&out)?;
    Ok((cfg, out))
}

/// Parses arguments and runs one command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| invalid(e.to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    let threads = command.common().threads;
    if threads == Some(0) {
        return Err(invalid("--threads must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    pool.install(|| match command {
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Train { common, dataset, method } => cmd_train(&common, &dataset, method),
        Command::Recon {
            common,
            dataset,
            method,
            checkpoint,
            untrained,
        } => cmd_recon(&common, &dataset, method, checkpoint.as_deref(), untrained),
        Command::Evaluate { common, dataset, recons } => cmd_evaluate(&common, &dataset, &recons),
    })
}

/// Binary entry point: clap handles help and usage errors, everything else
/// ends with a one-line diagnostic and exit code 1.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mirid: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Expected per-sample k-space signal power over the noise variance, in dB.
fn snr_db(truth: &RealTensor, ncoils: usize, sigma: f64) -> f64 {
    let power = truth.data().iter().map(|v| v * v).sum::<f64>() / (truth.len() * ncoils) as f64;
    10.0 * (power / (sigma * sigma)).log10()
}

pub fn simulation_summary(cfg: &RunConfig, ds: &SimulatedDataset) -> String {
    let ny = ds.mask.ny();
    let coverage: Vec<String> = (0..ds.mask.nshots())
        .map(|m| format!("{:.2}", 100.0 * ds.mask.count(m) as f64 / ny as f64))
        .collect();
    let mut s = format!(
        "{}x{} image, {} coils, {} shots, R={}, pf={}: per-shot coverage {}% (pf/R = {:.2}%)\n",
        ny,
        ds.coils.nx(),
        ds.coils.ncoils(),
        ds.mask.nshots(),
        cfg.acquisition.r,
        cfg.acquisition.pf,
        coverage.join("/"),
        100.0 * cfg.acquisition.pf / cfg.acquisition.r as f64
    );
    s.push_str(&format!("{:>6} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "volume", "b", "gx", "gy", "gz", "SNR dB"));
    for (v, vol) in ds.volumes.iter().enumerate() {
        let g = ds.protocol.volume_gradient(v);
        s.push_str(&format!(
            "{:>6} {:>8.0} {:>8.4} {:>8.4} {:>8.4} {:>8.2}\n",
            v,
            ds.protocol.volume_b(v),
            g[0],
            g[1],
            g[2],
            snr_db(&vol.truth, ds.coils.ncoils(), cfg.acquisition.noise_sigma)
        ));
    }
    s
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let protocol = cfg.protocol.build()?;
    let ds = simulate_dataset(&cfg.acquisition, &cfg.phantom, &protocol, cfg.seed)?;
    let path = out.join(DATASET_FILE);
    io::save_dataset(&path, &ds)?;
    print!("{}", simulation_summary(&cfg, &ds));
    println!("wrote {}", path.display());
    Ok(())
}

fn load_checked_dataset(path: &Path, cfg: &RunConfig) -> Result<SimulatedDataset> {
    let ds = io::load_dataset(path)?;
    let a = &cfg.acquisition;
    let got = (ds.mask.nshots(), ds.coils.ncoils(), ds.coils.ny(), ds.coils.nx());
    if got != (a.nshots, a.ncoils, a.ny, a.nx) || ds.protocol.directions().len() != cfg.protocol.directions {
        return Err(shape_err(format!(
            "dataset has {} shots, {} coils, {}x{} and {} directions; configuration expects {} shots, {} coils, {}x{} and {} directions",
            got.0,
            got.1,
            got.2,
            got.3,
            ds.protocol.directions().len(),
            a.nshots,
            a.ncoils,
            a.ny,
            a.nx,
            cfg.protocol.directions
        )));
    }
    Ok(ds)
}

pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
    for r in &h.epochs {
        s.push_str(&format!("{},{:e},{:e},{:.3}\n", r.epoch, r.train_loss, r.val_loss, r.seconds));
    }
    s
}

fn cmd_train(common: &Common, dataset: &Path, method: ReconMode) -> Result<()> {
    if method == ReconMode::Sense {
        return Err(invalid("sense has no trainable parameters; use --method mirid or sirid"));
    }
    let (cfg, out) = resolve(common)?;
    let ds = load_checked_dataset(dataset, &cfg)?;
    let rng = RngStream::new(cfg.seed).substream(TRAIN_STREAM);
    let mut model = Model::untrained(method, &cfg.recon, ds.mask.nshots(), &rng)?;
    let dw: Vec<_> = (0..ds.volumes.len())
        .filter(|&v| ds.protocol.volume_b(v) > 0.0)
        .map(|v| &ds.volumes[v].kspace)
        .collect();
    println!(
        "training {method}: {} denoiser pair(s), {} parameters each, {} volumes x {} g1 masks per epoch",
        model.nets.len(),
        model.nets[0].parameter_count(),
        dw.len(),
        cfg.train.n_g1
    );
    let progress = |net: usize, r: &EpochRecord| {
        let tag = if method == ReconMode::Sirid { format!("shot {net} ") } else { String::new() };
        println!(
            "{tag}epoch {:>3}  train {:.6}  val {:.6}  {:>9.1}s",
            r.epoch, r.train_loss, r.val_loss, r.seconds
        );
    };
    let histories = model.train(&dw, &ds.coils, &ds.mask, &cfg.train, &rng, progress)?;
    let model_path = out.join(format!("{method}_model.mirid"));
    io::save_model(&model_path, &model)?;
    for (m, h) in histories.iter().enumerate() {
        let name = match method {
            ReconMode::Sirid => format!("sirid_history_shot{m}.csv"),
            _ => format!("{method}_history.csv"),
        };
        std::fs::write(out.join(&name), history_csv(h))?;
        if let Some(b) = h.best_epoch {
            println!("{name}: best epoch {b}, val {:.6}", h.epochs[b].val_loss);
        }
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

fn cmd_recon(common: &Common, dataset: &Path, method: ReconMode, checkpoint: Option<&Path>, untrained: bool) -> Result<()> {
    let (cfg, out) = resolve(common)?;
    let ds = load_checked_dataset(dataset, &cfg)?;
    let nshots = ds.mask.nshots();
    let model = match (method, checkpoint, untrained) {
        (ReconMode::Sense, _, _) | (_, None, true) => {
            Model::untrained(method, &cfg.recon, nshots, &RngStream::new(cfg.seed).substream(TRAIN_STREAM))?
        }
        (_, Some(_), true) => return Err(invalid("--checkpoint and --untrained are mutually exclusive")),
        (_, Some(p), false) => {
            let m = io::load_model(p, &cfg.recon, nshots)?;
            if m.mode != method {
                return Err(invalid(format!("checkpoint holds a {} model, --method is {method}", m.mode)));
            }
            m
        }
        (_, None, false) => {
            return Err(invalid(format!("{method} needs --checkpoint (or --untrained)")));
        }
    };
    let images = ds
        .volumes
        .par_iter()
        .map(|v| combine_shots(&model.reconstruct(&v.kspace, &ds.coils, &ds.mask)?))
        .collect::<Result<Vec<_>>>()?;
    let label = if untrained && method != ReconMode::Sense {
        format!("{method}_untrained")
    } else {
        method.to_string()
    };
    let path = out.join(format!("{label}.mirid"));
    io::recon_to_container(&images)?.save(&path)?;
    let pgm_dir = out.join(format!("{label}_pgm"));
    std::fs::create_dir_all(&pgm_dir)?;
    for (v, img) in images.iter().enumerate() {
        io::write_pgm(&pgm_dir.join(format!("vol{v:03}.pgm")), img)?;
    }
    println!("reconstructed {} volumes with {label}; wrote {}", images.len(), path.display());
    Ok(())
}

fn cmd_evaluate(common: &Common, dataset: &Path, recons: &[PathBuf]) -> Result<()> {
    let (_, out) = resolve(common)?;
    let ds = io::load_dataset(dataset)?;
    let truth: Vec<RealTensor> = ds.volumes.iter().map(|v| v.truth.clone()).collect();
    let mut report = MetricsReport::default();
    for path in recons {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| invalid(format!("cannot derive a method label from {}", path.display())))?;
        if label.contains(',') {
            return Err(invalid(format!("method label '{label}' contains a comma")));
        }
        let images = io::recon_from_container(&io::Container::load(path)?)?;
        if images.len() != truth.len() || images.iter().any(|i| i.shape() != truth[0].shape()) {
            return Err(Error::Shape(format!(
                "{} holds {} images of {:?}; dataset has {} of {:?}",
                path.display(),
                images.len(),
                images.first().map(|i| i.shape().to_vec()).unwrap_or_default(),
                truth.len(),
                truth[0].shape()
            )));
        }
        report
            .rows
            .extend(evaluate_method(label, &images, &truth, &ds.phantom.tensors, &ds.protocol)?);
    }
    let path = out.join(METRICS_FILE);
    std::fs::write(&path, report.to_csv())?;
    print!("{}", report.summary_table());
    println!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands_and_flags() {
        let cli = Cli::try_parse_from([
            "mirid", "recon", "--dataset", "d.mirid", "--method", "sense", "--threads", "1", "--seed", "3",
        ])
        .unwrap();
        match cli.command {
            Command::Recon { common, method, untrained, .. } => {
                assert_eq!(method, ReconMode::Sense);
                assert_eq!(common.threads, Some(1));
                assert_eq!(common.seed, Some(3));
                assert!(!untrained);
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["mirid", "recon", "--dataset", "d", "--method", "loraks"]).is_err());
        assert!(Cli::try_parse_from(["mirid", "evaluate", "--dataset", "d"]).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            initial_val_loss: None,
            epochs: vec![EpochRecord {
                epoch: 0,
                train_loss: 0.5,
                val_loss: 0.25,
                seconds: 1.23456,
            }],
            best_epoch: Some(0),
        };
        assert_eq!(history_csv(&h), "epoch,train_loss,val_loss,seconds\n0,5e-1,2.5e-1,1.235\n");
    }

    #[test]
    fn snr_of_unit_image() {
        let t = RealTensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert!((snr_db(&t, 1, 0.1) - 20.0).abs() < 1e-12);
    }
}
