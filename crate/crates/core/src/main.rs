use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use steinformer::harness::{
    self, config::config_from_value, load_config, parse_override, predict_export, save_dataset, synth_generate, train::CheckpointInfo,
    ExperimentConfig,
};
use steinformer::model::{count_params, estimate_flops, weights, SteinFormer};
use steinformer::nn::Ledger;
use steinformer::spectral::self_check;
use steinformer::{Error, Result};

const LEDGER_CONVENTION: &str = "# flops = 2 x multiply-accumulates of every convolution (DCT filters included), \
both temporal branches counted, normalisation and elementwise ops excluded";

#[derive(Parser)]
#[command(name = "steinformer", version, about = "Bi-temporal change detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set run.epochs=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Seed for initialisation, data generation and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing logs and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        val_dir: Option<PathBuf>,
        /// Output directory for logs and checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on labelled pairs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Directory with A/, B/ and label/; the synthetic hold-out set when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write change maps (and error maps for labelled pairs) as PNG.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset as PNG files.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Count learnable parameters.
    CountParams {
        #[command(flatten)]
        common: Common,
        /// Write the per-layer ledger as CSV.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Estimate forward-pass FLOPs.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Verify DCT orthonormality, inversion and energy preservation.
    DctCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<usize>,
        /// Comma-separated grid sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

fn resolve(common: &Common, extra: Vec<(&str, Value)>, sidecar: Option<&Path>) -> Result<ExperimentConfig> {
    let mut overrides = Vec::new();
    for s in &common.sets {
        overrides.push(parse_override(s)?);
    }
    overrides.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
    match (&common.config, sidecar) {
        (None, Some(weights)) if weights.with_extension("json").exists() => {
            let text = std::fs::read_to_string(weights.with_extension("json"))?;
            let info: CheckpointInfo = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("checkpoint metadata: {e}")))?;
            config_from_value(serde_json::to_value(&info.config)?, &overrides, common.seed)
        }
        (path, _) => load_config(path.as_deref(), &overrides, common.seed),
    }
}

fn some<T: serde::Serialize>(key: &'static str, v: Option<T>) -> Option<(&'static str, Value)> {
    v.map(|v| (key, json!(v)))
}

fn write_ledger(path: Option<&Path>, ledger: &Ledger) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, format!("{LEDGER_CONVENTION}\n{}", ledger.to_csv()))?;
    }
    Ok(())
}

fn ledger_json(ledger: &Ledger) -> Value {
    Value::Array(
        ledger.rows.iter().map(|r| json!({"name": r.name, "params": r.params, "flops": r.flops})).collect(),
    )
}

fn print_json(v: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, epochs, batch_size, lr, max_steps, train_dir, val_dir, out } => {
            let extra = [
                some("run.epochs", epochs),
                some("run.batch_size", batch_size),
                some("run.optimizer.lr", lr),
                some("run.max_steps", max_steps),
                some("data.train_dir", train_dir),
                some("data.val_dir", val_dir),
                some("run.out_dir", out),
            ];
            let cfg = resolve(&common, extra.into_iter().flatten().collect(), None)?;
            let (tr, va) = harness::load_training_data(&cfg)?;
            eprintln!("training on {} pairs, validating on {}", tr.len(), va.len());
            let outcome = harness::train(&cfg, &tr, &va, &mut |r| {
                let f1 = r.val.as_ref().map(|m| format!("{:.4}", m.f1)).unwrap_or_else(|| "-".into());
                eprintln!("epoch {:>3}  loss {:.4}  lr {:.2e}  val f1 {f1}  {:.1}s", r.epoch, r.mean_loss, r.lr, r.seconds);
            })?;
            let r = &outcome.report;
            print_json(&json!({
                "steps": r.steps(),
                "epochs": r.epochs.len(),
                "stop": r.stop,
                "final_loss": r.step_losses.last(),
                "best_epoch": r.best.map(|b| b.0),
                "best_f1": r.best.map(|b| b.1),
                "out_dir": cfg.run.out_dir,
            }))
        }
        Command::Eval { common, weights: wpath, data } => {
            let cfg = resolve(&common, Vec::new(), Some(&wpath))?;
            let mut model = SteinFormer::new(&cfg.model)?;
            weights::load(&mut model, &wpath)?;
            let samples = match data {
                Some(dir) => harness::load_dataset(&dir)?,
                None => harness::load_training_data(&cfg)?.1,
            };
            let report = harness::evaluate(&model, &samples, cfg.run.batch_size)?;
            print_json(&json!({ "pairs": samples.len(), "metrics": report }))
        }
        Command::Predict { common, weights: wpath, data, out } => {
            let cfg = resolve(&common, Vec::new(), Some(&wpath))?;
            let mut model = SteinFormer::new(&cfg.model)?;
            weights::load(&mut model, &wpath)?;
            let samples = harness::load_pairs(&data, false)?;
            let exported = predict_export(&model, &samples, &out)?;
            let rows: Vec<Value> = exported
                .iter()
                .map(|e| json!({"id": e.id, "change_map": e.change_map, "error_map": e.error_map, "metrics": e.metrics}))
                .collect();
            print_json(&Value::Array(rows))
        }
        Command::Synth { common, out, count, size } => {
            let extra = [some("data.synth.count", count), some("data.synth.size", size)];
            let cfg = resolve(&common, extra.into_iter().flatten().collect(), None)?;
            let samples = synth_generate(&cfg.data.synth)?;
            save_dataset(&out, &samples)?;
            let changed: usize = samples.iter().map(|s| s.changed_pixels()).sum();
            print_json(&json!({"pairs": samples.len(), "size": cfg.data.synth.size, "changed_pixels": changed, "out": out}))
        }
        Command::CountParams { common, ledger } => {
            let cfg = resolve(&common, Vec::new(), None)?;
            let (n, l) = count_params(&cfg.model)?;
            write_ledger(ledger.as_deref(), &l)?;
            print_json(&json!({"params": n, "millions": n as f64 / 1e6, "ledger": ledger_json(&l)}))
        }
        Command::Flops { common, height, width, ledger } => {
            let cfg = resolve(&common, Vec::new(), None)?;
            let h = height.unwrap_or(cfg.model.input_size[0]);
            let w = width.unwrap_or(cfg.model.input_size[1]);
            let (f, l) = estimate_flops(&cfg.model, h, w)?;
            write_ledger(ledger.as_deref(), &l)?;
            print_json(&json!({
                "height": h,
                "width": w,
                "flops": f,
                "gflops": f as f64 / 1e9,
                "convention": LEDGER_CONVENTION.trim_start_matches("# "),
                "ledger": ledger_json(&l),
            }))
        }
        Command::DctCheck { common, p, sizes, tol } => {
            let cfg = resolve(&common, Vec::new(), None)?;
            let p = p.unwrap_or(cfg.model.p);
            let sizes = sizes.unwrap_or_else(|| vec![2, 3, 4, 7, 8, 16]);
            let check = self_check(p, &sizes, cfg.run.seed)?;
            print_json(&serde_json::to_value(&check)?)?;
            if check.passed(tol) {
                Ok(())
            } else {
                Err(Error::Numeric(format!("DCT check exceeded tolerance {tol:e}")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
