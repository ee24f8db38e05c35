use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plb::attack::InitMethod;
use plb::harness::{
    default_thresholds, encode_pnm, load_dataset, parse_thresholds, read_csv, run_campaign, summarize, write_csv,
    AttackSettings, CampaignOptions,
};
use plb::model::{load_weights, parse_arch, save_weights, train, TrainConfig};
use plb::{Metric, Result};

#[derive(Parser)]
#[command(
    name = "plb",
    version,
    about = "Train small classifiers and run proximal log-barrier attack campaigns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write PLBW weights.
    Train(TrainArgs),
    /// Attack a sample of images and write per-image results as CSV.
    Attack(AttackArgs),
    /// Summarize a results CSV as a % error / median distance table.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// `blobs:<key=value,...>`, `<images>,<labels>` or an IDX directory.
    #[arg(long)]
    data: String,
    /// Split name used when --data is a directory.
    #[arg(long, default_value = "train")]
    split: String,
    /// Use only the first N examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Held-out data for reporting accuracy (same forms as --data).
    #[arg(long)]
    heldout: Option<String>,
    #[arg(long, default_value = "test")]
    heldout_split: String,
    #[arg(long)]
    heldout_limit: Option<usize>,
    /// `mlp:<widths>`, `cnn:<stages>[;<widths>]` or `linear`.
    #[arg(long, default_value = "mlp:256")]
    arch: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Random translation augmentation in pixels.
    #[arg(long, default_value_t = 0)]
    shift: usize,
    /// Decay the learning rate linearly to zero.
    #[arg(long)]
    anneal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: String,
    #[arg(long, default_value = "test")]
    split: String,
    /// Restrict the pool to the first N examples before sampling.
    #[arg(long)]
    limit: Option<usize>,
    /// `key = value` settings file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    softmax: bool,
    #[arg(long)]
    l1_substitute: bool,
    /// `noise` (noise ladder, then gradient ascent) or `ascent` (gradient
    /// ascent from the clean image only).
    #[arg(long)]
    init: Option<InitMethod>,
    #[arg(long)]
    init_tries: Option<usize>,
    /// Number of images to attack (default 100, capped at the pool size).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Thresholds for the summary printed after the campaign.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Write clean and adversarial images as PGM/PPM into this directory.
    #[arg(long)]
    save_images: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    /// Comma-separated ε values applied to every metric; per-metric defaults
    /// otherwise.
    #[arg(long)]
    thresholds: Option<String>,
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut data = load_dataset(&a.data, &a.split)?;
    if let Some(n) = a.limit {
        data = data.head(n);
    }
    let heldout = match &a.heldout {
        Some(spec) => {
            let h = load_dataset(spec, &a.heldout_split)?;
            match a.heldout_limit {
                Some(n) => h.head(n).examples,
                None => h.examples,
            }
        }
        None => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let net = parse_arch(&a.arch)?.build(data.shape(), data.classes, &mut rng)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        momentum: a.momentum,
        max_shift: a.shift,
        anneal: a.anneal,
        seed: a.seed,
    };
    let (net, report) = train(&net, &data.examples, &heldout, &cfg)?;
    for (e, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {loss:.5}", e + 1);
    }
    println!("train accuracy {:.4}", report.train_accuracy);
    if let Some(acc) = report.heldout_accuracy {
        println!("held-out accuracy {acc:.4}");
    }
    save_weights(&net, &a.out)?;
    println!("wrote {} ({} parameters)", a.out.display(), net.parameter_count());
    Ok(())
}

fn thresholds_for(list: &Option<Vec<f64>>) -> impl Fn(Metric) -> Vec<f64> + '_ {
    move |m| list.clone().unwrap_or_else(|| default_thresholds(m))
}

fn run_attack(a: AttackArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => AttackSettings::load(p)?,
        None => AttackSettings::default(),
    };
    let flags = AttackSettings {
        metric: a.metric,
        lambda0: a.lambda0,
        beta: a.beta,
        step: a.step,
        mu: a.mu,
        iters: a.iters,
        inner: a.inner,
        topk: a.topk,
        softmax: a.softmax.then_some(true),
        sample: a.sample,
        seed: a.seed,
        init: a.init,
        init_tries: a.init_tries,
        l1_substitute: a.l1_substitute.then_some(true),
        workers: a.workers,
        thresholds: a.thresholds.as_deref().map(parse_thresholds).transpose()?,
    };
    let settings = file.merged(flags);
    let cfg = settings.attack_config()?;
    let net = load_weights(&a.weights)?;
    let mut data = load_dataset(&a.data, &a.split)?;
    if let Some(n) = a.limit {
        data = data.head(n);
    }
    let opts = CampaignOptions {
        sample_size: settings.sample.unwrap_or(100).min(data.len()),
        seed: cfg.seed,
        workers: settings.workers,
    };
    let outcomes = run_campaign(&net, &data, &opts, std::slice::from_ref(&cfg))?;
    let records: Vec<_> = outcomes.iter().map(|o| o.record.clone()).collect();
    write_csv(&records, BufWriter::new(File::create(&a.out)?))?;
    if let Some(dir) = &a.save_images {
        fs::create_dir_all(dir)?;
        let ext = if data.shape().channels == 3 { "ppm" } else { "pgm" };
        for o in &outcomes {
            let id = o.record.image_id;
            fs::write(
                dir.join(format!("{id:05}-clean.{ext}")),
                encode_pnm(&data.examples[id].image)?,
            )?;
            if let Some(adv) = &o.adversarial {
                fs::write(dir.join(format!("{id:05}-{}.{ext}", o.record.metric)), encode_pnm(adv)?)?;
            }
        }
    }
    print!("{}", summarize(&records, thresholds_for(&settings.thresholds))?);
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let records = read_csv(File::open(&a.results)?)?;
    let list = a.thresholds.as_deref().map(parse_thresholds).transpose()?;
    print!("{}", summarize(&records, thresholds_for(&list))?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Attack(a) => run_attack(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
