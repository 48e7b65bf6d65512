use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use scale_core::store::{generate_synthetic, store_stats, FeatureStore, VideoDims};

use crate::config::RunConfig;
use crate::io::{import_delimited, load_checkpoint, read_store, save_checkpoint, write_atomic, write_store};
use crate::pipeline::{self, Axis, PipelineError, ProbeKind};
use crate::report;

#[derive(Parser, Debug)]
#[command(
    name = "scale",
    version,
    about = "Clip-set representation learning over precomputed clip features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Usage(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic train and eval stores.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_eval: PathBuf,
    },
    /// Convert comma-separated clip rows into a store.
    Import {
        #[arg(long)]
        csv: PathBuf,
        /// Video size as HxWxT (pixels, pixels, frames).
        #[arg(long, value_parser = parse_dims)]
        dims: VideoDims,
        /// Feature width.
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain a predictor on a store.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_ckpt: PathBuf,
        /// Per-epoch loss log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint written with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, value_parser = ["on", "off"])]
        mcm_loss: Option<String>,
        #[arg(long, value_parser = ["on", "off"])]
        set_loss: Option<String>,
    },
    /// Evaluate representations with a probe.
    Probe {
        #[arg(long)]
        kind: ProbeKind,
        #[arg(long)]
        train_store: PathBuf,
        #[arg(long)]
        eval_store: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Keep this fraction of every class of the train store.
        #[arg(long)]
        lowshot: Option<f64>,
        /// Starting weights of the fine-tuning probe.
        #[arg(long, default_value = "pretrained", value_parser = ["pretrained", "random"])]
        init: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and probe once per combination of axis values.
    Sweep {
        /// mask, layers, hidden or views; repeat to sweep a product grid.
        #[arg(long, required = true)]
        axis: Vec<Axis>,
        /// Comma-separated values, one list per --axis in the same order.
        #[arg(long, required = true)]
        values: Vec<String>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Train store; the synthetic stores from the config are used when absent.
        #[arg(long, requires = "eval_store")]
        train_store: Option<PathBuf>,
        #[arg(long, requires = "train_store")]
        eval_store: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print store statistics.
    Inspect {
        #[arg(long)]
        store: PathBuf,
    },
}

fn parse_dims(s: &str) -> Result<VideoDims, String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let n = |p: &str| p.parse::<u32>().map_err(|_| format!("expected HxWxT, got {s:?}"));
    match parts.as_slice() {
        [h, w, t] => Ok(VideoDims {
            height: n(h)?,
            width: n(w)?,
            frames: n(t)?,
        }),
        _ => Err(format!("expected HxWxT, got {s:?}")),
    }
}

fn echo(cfg: &RunConfig, input_dim: Option<usize>) {
    println!("# effective configuration");
    print!("{}", cfg.render());
    if let Some(d) = input_dim {
        println!("# model.input_dim = {d} (from store)");
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth {
            config,
            out_train,
            out_eval,
        } => {
            let cfg = config.load()?;
            cfg.synth.validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
            echo(&cfg, None);
            let (train, eval) = generate_synthetic(&cfg.synth).map_err(|e| PipelineError::Usage(e.to_string()))?;
            let a = write_store(&out_train, &train)?;
            let b = write_store(&out_eval, &eval)?;
            println!("wrote {} ({} videos, {a} bytes)", out_train.display(), train.len());
            println!("wrote {} ({} videos, {b} bytes)", out_eval.display(), eval.len());
        }
        Command::Import { csv, dims, dim, out } => {
            let store = import_delimited(&csv, dims, dim)?;
            let n = write_store(&out, &store)?;
            println!("wrote {} ({} videos, {n} bytes)", out.display(), store.len());
        }
        Command::Train {
            store,
            mut config,
            out_ckpt,
            log,
            resume,
            mcm_loss,
            set_loss,
        } => {
            if let Some(v) = mcm_loss {
                config.overrides.push(format!("train.mcm_loss={v}"));
            }
            if let Some(v) = set_loss {
                config.overrides.push(format!("train.set_loss={v}"));
            }
            let cfg = config.load()?;
            cfg.validate()?;
            let store = read_store(&store)?;
            echo(&cfg, Some(store.feature_dim));
            let on_epoch = |t: &scale_core::trainer::Trainer<'_>, e: &scale_core::trainer::EpochLog| {
                eprintln!(
                    "epoch {:>4}  mcm {:.5}  set {:.5}  total {:.5}  lr {:.3e}",
                    e.epoch, e.mcm, e.set, e.total, e.lr
                );
                if t.checkpoint_due() && !t.is_finished() {
                    save_checkpoint(&out_ckpt, &t.checkpoint())?;
                }
                Ok::<(), PipelineError>(())
            };
            let ckpt = match resume {
                Some(path) => {
                    let start = load_checkpoint(&path)?;
                    let mut t = scale_core::trainer::Trainer::resume(&store, start, &cfg.train)?;
                    t.run(on_epoch)?;
                    t.checkpoint()
                }
                None => pipeline::train(&store, &cfg, on_epoch)?,
            };
            save_checkpoint(&out_ckpt, &ckpt)?;
            if let Some(path) = log {
                write_text(&path, &report::loss_log(&ckpt.log))?;
            }
            println!("wrote {}", out_ckpt.display());
        }
        Command::Probe {
            kind,
            train_store,
            eval_store,
            ckpt,
            config,
            lowshot,
            init,
            report: out,
        } => {
            let cfg = config.load()?;
            cfg.validate()?;
            let random_init = init == "random";
            let ckpt = ckpt.map(|p| load_checkpoint(&p)).transpose()?;
            let train = read_store(&train_store)?;
            let eval = read_store(&eval_store)?;
            echo(&cfg, Some(train.feature_dim));
            let r = pipeline::probe(kind, &train, &eval, ckpt.as_ref(), &cfg, lowshot, random_init)?;
            let text = report::probe_report(&r);
            print!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }
        Command::Sweep {
            axis,
            values,
            config,
            train_store,
            eval_store,
            report: out,
        } => {
            if axis.len() != values.len() {
                return Err(PipelineError::Usage(format!(
                    "{} --axis flags but {} --values lists",
                    axis.len(),
                    values.len()
                )));
            }
            let cfg = config.load()?;
            cfg.validate()?;
            let (train, eval): (FeatureStore, FeatureStore) = match (train_store, eval_store) {
                (Some(t), Some(e)) => (read_store(&t)?, read_store(&e)?),
                _ => generate_synthetic(&cfg.synth).map_err(|e| PipelineError::Usage(e.to_string()))?,
            };
            echo(&cfg, Some(train.feature_dim));
            let axes: Vec<(Axis, Vec<String>)> = axis
                .into_iter()
                .zip(values)
                .map(|(a, v)| (a, v.split(',').map(|s| s.trim().to_string()).collect()))
                .collect();
            let rows = pipeline::sweep(&axes, &train, &eval, &cfg, |m| eprintln!("{m}"))?;
            let names: Vec<&str> = axes.iter().map(|(a, _)| a.name()).collect();
            let text = report::sweep_table(&names, &rows);
            print!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
        }
        Command::Inspect { store } => {
            let s = store_stats(&read_store(&store)?);
            println!("videos: {}", s.videos);
            println!("clips: {}", s.clips);
            println!("feature_dim: {}", s.feature_dim);
            match &s.label_histogram {
                Some(h) => {
                    for (label, n) in h {
                        println!("label {label}: {n}");
                    }
                    if s.unlabeled > 0 {
                        println!("unlabeled: {}", s.unlabeled);
                    }
                }
                None => println!("labels: absent"),
            }
            if let Some(r) = s.coord_ranges {
                for (name, (lo, hi)) in ["x", "y", "q", "h", "w", "t"].iter().zip(r) {
                    println!("{name}: {lo}..{hi}");
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
