use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sepvit::analyzer::{analytic_report, block_comparison, count_macs_empirical, write_comparison_csv};
use sepvit::backbone::{load, preset, save, ModelConfig, SepVit};
use sepvit::data::{generate, Dataset};
use sepvit::nn::Module;
use sepvit::sepvit::TokenMode;
use sepvit::train::{evaluate, train, EpochMetrics, TrainConfig, METRICS_HEADER};
use sepvit::{Error, Result};

#[derive(Parser)]
#[command(name = "sepvit", version, about = "Separable vision transformer models, cost analysis and desk-scale training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stage table, parameter count and analytic GMACs.
    Summary {
        #[command(flatten)]
        model: ModelArgs,
        /// Also write the per-component cost table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the block comparison and cost report CSVs and cross-check the counter.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus per-epoch metrics.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write per-class accuracy and confusion counts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Generate a synthetic class-pattern dataset.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "classes", visible_alias = "k", default_value_t = 4)]
        classes: usize,
        #[arg(long = "samples", visible_alias = "n", default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Named preset: lite, tiny, small, base or micro.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON model configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the input resolution.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, value_enum)]
    token_mode: Option<TokenModeArg>,
    /// Seed for weight initialisation and batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate the dataset in memory instead of reading one.
    #[arg(long)]
    synthetic: bool,
    #[arg(long = "data-seed", default_value_t = 7)]
    data_seed: u64,
    #[arg(long = "classes", visible_alias = "k", default_value_t = 4)]
    classes: usize,
    #[arg(long = "samples", visible_alias = "n", default_value_t = 256)]
    samples: usize,
    /// Side of synthetic images; defaults to the model resolution.
    #[arg(long = "data-resolution")]
    data_resolution: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenModeArg {
    Learnable,
    FixedZero,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig> {
        let mut config = match (&self.preset, &self.config) {
            (_, Some(path)) => ModelConfig::from_json_file(path)?,
            (Some(name), None) => preset(name)?,
            (None, None) => return Err(Error::Config("pass --preset <name> or --config <file>".into())),
        };
        if let Some(r) = self.resolution {
            config = config.with_resolution(r)?;
        }
        config.stage_sides()?;
        if let Some(mode) = self.token_mode {
            config.token_mode = match mode {
                TokenModeArg::Learnable => TokenMode::Learnable,
                TokenModeArg::FixedZero => TokenMode::FixedZero,
            };
        }
        Ok(config)
    }
}

impl DataArgs {
    fn dataset(&self, model_resolution: usize) -> Result<Dataset> {
        match &self.data {
            Some(dir) => Dataset::load(dir),
            None if self.synthetic => generate(
                self.data_seed,
                self.classes,
                self.samples,
                self.data_resolution.unwrap_or(model_resolution),
            ),
            None => Err(Error::Config("pass --data <dir> or --synthetic".into())),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn summary(model: &ModelArgs, out: Option<&Path>) -> Result<()> {
    let config = model.config()?;
    let sides = config.stage_sides()?;
    let report = analytic_report(&config, 1)?;
    println!("model {} @ {}x{}, {} classes", config.name, config.input_resolution, config.input_resolution, config.num_classes);
    println!("{:<6} {:>5} {:>6} {:>5} {:>3} {:>3} {:>5}  pattern", "stage", "depth", "C", "heads", "M", "g", "side");
    for (i, (s, side)) in config.stages.iter().zip(&sides).enumerate() {
        let pattern: Vec<&str> = s.block_pattern.iter().map(|k| k.as_str()).collect();
        println!(
            "{:<6} {:>5} {:>6} {:>5} {:>3} {:>3} {:>5}  {}",
            i + 1,
            s.depth,
            s.channels,
            s.heads,
            s.window,
            s.group,
            side,
            pattern.join(",")
        );
    }
    let params = report.total_params();
    println!("params {params} ({:.2}M)", params as f64 / 1e6);
    println!("macs {} ({:.3} GMACs)", report.total_analytic(), report.total_analytic() as f64 / 1e9);
    if let Some(path) = out {
        write(path, &report.to_csv_string())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn analyze(model: &ModelArgs, out: &Path) -> Result<()> {
    let config = model.config()?;
    let rows = block_comparison(&config)?;
    println!("{:<6} {:>9} {:>6} {:>8} {:>16} {:>16} {:>7}", "stage", "HxW", "C", "windows", "sepvit_macs", "two_block_macs", "ratio");
    for r in &rows {
        println!(
            "{:<6} {:>9} {:>6} {:>8} {:>16} {:>16} {:>7.4}",
            r.stage,
            format!("{}x{}", r.height, r.width),
            r.channels,
            r.windows,
            r.sepvit_macs,
            r.two_block_macs,
            r.ratio
        );
    }
    let net = SepVit::<f32>::new(&config, model.seed)?;
    let r = config.input_resolution;
    let report = count_macs_empirical(&net, &[1, config.in_channels, r, r])?;
    let mismatches = report.attention_mismatches();
    if let Some(row) = mismatches.first() {
        return Err(Error::Contract(format!(
            "{} attention rows disagree, first {}: analytic {} vs measured {:?}",
            mismatches.len(),
            row.name,
            row.analytic_macs,
            row.empirical_macs
        )));
    }
    create_dir(out)?;
    let mut buf = Vec::new();
    write_comparison_csv(&rows, &mut buf)?;
    write(&out.join("comparison.csv"), &String::from_utf8_lossy(&buf))?;
    write(&out.join("costs.csv"), &report.to_csv_string())?;
    let attention = report.rows.iter().filter(|r| r.is_attention()).count();
    println!("{attention} attention rows: analytic == measured");
    println!("wrote {} and {}", out.join("comparison.csv").display(), out.join("costs.csv").display());
    Ok(())
}

fn run_train(model: &ModelArgs, data: &DataArgs, epochs: usize, batch: usize, lr: f64, out: &Path) -> Result<()> {
    let config = model.config()?;
    let dataset = data.dataset(config.input_resolution)?;
    let mut net = SepVit::<f32>::new(&config, model.seed)?;
    println!(
        "training {} ({} params) on {} samples, {} classes, {}px",
        config.name,
        net.num_params(),
        dataset.len(),
        dataset.meta.k,
        dataset.meta.resolution
    );
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        seed: model.seed,
        ..Default::default()
    };
    create_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut log = format!("{METRICS_HEADER}\n");
    let start = Instant::now();
    let history = train(&mut net, &dataset, &cfg, |m: &EpochMetrics| {
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  acc {:.4}  ({:.1}s)",
            m.epoch,
            m.lr,
            m.loss,
            m.train_accuracy,
            start.elapsed().as_secs_f64()
        );
    })?;
    for m in &history {
        log.push_str(&m.csv_line());
        log.push('\n');
    }
    write(&metrics_path, &log)?;
    let ckpt = out.join("checkpoint");
    save(&net, &ckpt)?;
    println!("wrote {} and {}", metrics_path.display(), ckpt.display());
    Ok(())
}

fn run_eval(checkpoint: &Path, data: &DataArgs, batch: usize, out: &Path) -> Result<()> {
    let net = load::<f32>(checkpoint)?;
    let dataset = data.dataset(net.config.input_resolution)?;
    let report = evaluate(&net, &dataset, batch)?;
    println!("accuracy {:.6} ({}/{})", report.accuracy, report.correct, report.n);
    for (k, acc) in report.per_class_accuracy.iter().enumerate() {
        println!("class {k}: {acc:.4}");
    }
    write(out, &report.to_csv())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_data(seed: u64, k: usize, n: usize, r: usize, out: &Path) -> Result<()> {
    let data = generate(seed, k, n, r)?;
    data.save(out)?;
    let counts: Vec<String> = data.class_counts().iter().map(|c| c.to_string()).collect();
    println!("wrote {n} samples of {r}x{r} to {} (class counts {})", out.display(), counts.join("/"));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Summary { model, out } => summary(&model, out.as_deref()),
        Command::Analyze { model, out } => analyze(&model, &out),
        Command::Train {
            model,
            data,
            epochs,
            batch,
            lr,
            out,
        } => run_train(&model, &data, epochs, batch, lr, &out),
        Command::Eval {
            checkpoint,
            data,
            batch,
            out,
        } => run_eval(&checkpoint, &data, batch, &out),
        Command::GenData {
            seed,
            classes,
            samples,
            resolution,
            out,
        } => gen_data(seed, classes, samples, resolution, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            let prefix = format!("{} error: ", e.category());
            eprintln!("error[{}]: {}", e.category(), msg.strip_prefix(&prefix).unwrap_or(&msg));
            ExitCode::FAILURE
        }
    }
}
