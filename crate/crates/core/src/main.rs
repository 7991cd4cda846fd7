use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use runa::bank::{load_bank, DEFAULT_TEMPLATE};
use runa::encoder::{ToyEncoder, ToyEncoderConfig};
use runa::harness::detections::load_detections;
use runa::harness::eval::{run_eval, run_finetune, score_all, EvalReport, EvalSettings, FinetuneSettings};
use runa::harness::files::{
    encode_detections, encode_toy_table, load_eval_records, load_projection, load_train_pool, save_projection,
    toy_bank, write_synthetic,
};
use runa::harness::report::{format_report, format_scores_csv, format_table, format_timing};
use runa::harness::synth::{generate_synthetic, presets, SynthConfig};
use runa::harness::EvalRecord;
use runa::interchange::EmbeddingTable;
use runa::metrics::{calibrate_threshold, DEFAULT_TPR};
use runa::scoring::{FusionConfig, Membership, ProjectionLayer, ScoreMethod, DEFAULT_BLUR_RADIUS};
use runa::train::{AdamWConfig, FewShotConfig, TrainConfig};
use runa::{Error, Result};

#[derive(Parser)]
#[command(name = "runa", version, about = "Object-level OOD scoring against a concept bank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark as interchange files.
    Synth(SynthArgs),
    /// Score every detection and write `record_id,sigma`.
    Score(ScoreArgs),
    /// Print the threshold that keeps the target share of ID detections.
    Calibrate(CalibrateArgs),
    /// Score, threshold and report FPR95 / AUROC.
    Eval(EvalArgs),
    /// Fine-tune the projection on few-shot samples and report before/after.
    Finetune(FinetuneArgs),
    /// Encode PPM images and detections with the toy encoder.
    EncodeToy(EncodeToyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    DirectSum,
    Mcm,
    MaxSim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Figure4,
    Finetune,
    DualEncoder,
}

#[derive(Args)]
struct Inputs {
    /// Concept bank manifest.
    #[arg(long)]
    bank: PathBuf,
    /// Detections file.
    #[arg(long)]
    detections: PathBuf,
    /// Manifest holding `<record>.global` / `<record>.regional` embeddings.
    #[arg(long)]
    embeddings: PathBuf,
    /// Manifest holding a `projection` record. Identity when omitted.
    #[arg(long)]
    projection: Option<PathBuf>,
}

#[derive(Args)]
struct Scoring {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// MCM temperature.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Weight of the regional embedding in the fused embedding.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_id: Option<usize>,
    #[arg(long)]
    n_ood: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    scoring: Scoring,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    scoring: Scoring,
    #[arg(long, default_value_t = DEFAULT_TPR)]
    tpr: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Precomputed embeddings. Either this or `--images-dir`.
    #[arg(long, required_unless_present = "images_dir", conflicts_with = "images_dir")]
    embeddings: Option<PathBuf>,
    /// Encode detections from `<image_id>.ppm` files with the toy encoder.
    #[arg(long)]
    images_dir: Option<PathBuf>,
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Methods to evaluate, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    method: Vec<MethodArg>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Fixed threshold instead of calibrating on the ID rows.
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Shots behind the projection, echoed in the report.
    #[arg(long, default_value_t = 0)]
    shots: usize,
    /// Toy encoder seed for `--images-dir`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Toy encoder dimension for `--images-dir`.
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_BLUR_RADIUS)]
    radius: f64,
    /// Machine-readable report. Timing goes to `<out>.timing`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-record scores of the first method.
    #[arg(long)]
    dump_scores: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    scoring: Scoring,
    #[arg(long)]
    train_detections: PathBuf,
    #[arg(long)]
    train_embeddings: PathBuf,
    #[arg(long, default_value_t = 10)]
    shots: usize,
    /// Train on the whole pool instead of sampling shots.
    #[arg(long)]
    all_shots: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-6)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    loss_tau: f64,
    /// Output directory for the projection, reports and loss curve.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_scores: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeToyArgs {
    #[arg(long)]
    images_dir: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Bank labels, comma separated, in bank order.
    #[arg(long, value_delimiter = ',', required = true)]
    labels: Vec<String>,
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    template: String,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BLUR_RADIUS)]
    radius: f64,
    /// Output manifest holding the bank and every record.
    #[arg(long)]
    out: PathBuf,
}

fn method(m: MethodArg, tau: f64) -> Result<ScoreMethod> {
    match m {
        MethodArg::DirectSum => Ok(ScoreMethod::DirectSum),
        MethodArg::Mcm => ScoreMethod::mcm(tau),
        MethodArg::MaxSim => Ok(ScoreMethod::MaxSim),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn timing_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".timing");
    PathBuf::from(s)
}

struct Loaded {
    bank: runa::bank::ConceptBank,
    records: Vec<EvalRecord>,
    projection: ProjectionLayer,
}

fn load(inputs: &Inputs) -> Result<Loaded> {
    let bank = load_bank(&inputs.bank)?;
    let detections = load_detections(&inputs.detections)?;
    let table = EmbeddingTable::read(&inputs.embeddings)?;
    let records = load_eval_records(&detections, &table, &bank)?;
    let projection = match &inputs.projection {
        Some(p) => load_projection(&EmbeddingTable::read(p)?, bank.dim())?,
        None => ProjectionLayer::identity(bank.dim()),
    };
    Ok(Loaded {
        bank,
        records,
        projection,
    })
}

fn echo(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match a.preset {
        Preset::Default => SynthConfig::default(),
        Preset::Figure4 => presets::figure4(),
        Preset::Finetune => presets::finetune(),
        Preset::DualEncoder => presets::dual_encoder(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.classes = a.classes.unwrap_or(cfg.classes);
    cfg.dim = a.dim.unwrap_or(cfg.dim);
    cfg.n_id = a.n_id.unwrap_or(cfg.n_id);
    cfg.n_ood = a.n_ood.unwrap_or(cfg.n_ood);
    cfg.spread = a.spread.unwrap_or(cfg.spread);
    let data = generate_synthetic(&cfg)?;
    let files = write_synthetic(&data, &a.out)?;
    println!(
        "wrote {} concepts, {} eval records, {} train records to {}",
        data.bank.len(),
        data.eval.len(),
        data.train_pool.len(),
        a.out.display()
    );
    println!("bank={}", files.bank.display());
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let l = load(&a.inputs)?;
    let m = method(a.scoring.method, a.scoring.tau)?;
    let sigmas = score_all(&l.records, &l.projection, &l.bank, FusionConfig::new(a.scoring.lambda)?, m)?;
    let mut text = String::from("record_id,sigma\n");
    for (r, s) in l.records.iter().zip(sigmas) {
        text.push_str(&format!("{},{}\n", r.id, s));
    }
    match a.out {
        Some(p) => write(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let l = load(&a.inputs)?;
    let m = method(a.scoring.method, a.scoring.tau)?;
    let sigmas = score_all(&l.records, &l.projection, &l.bank, FusionConfig::new(a.scoring.lambda)?, m)?;
    let id: Vec<f64> = l
        .records
        .iter()
        .zip(&sigmas)
        .filter(|(r, _)| r.truth == Membership::Id)
        .map(|(_, &s)| s)
        .collect();
    if id.is_empty() {
        return Err(Error::NoIdRecords);
    }
    println!("gamma={}", calibrate_threshold(&id, a.tpr)?);
    Ok(())
}

fn emit(reports: &[EvalReport], out: Option<&Path>, dump: Option<&Path>) -> Result<()> {
    print!("{}", format_table(reports));
    if let Some(out) = out {
        write(out, &format_report(reports))?;
        write(&timing_path(out), &format_timing(reports))?;
    }
    if let (Some(dump), Some(first)) = (dump, reports.first()) {
        write(dump, &format_scores_csv(first))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let bank = load_bank(&a.bank)?;
    let detections = load_detections(&a.detections)?;
    let records = match (&a.embeddings, &a.images_dir) {
        (Some(e), _) => load_eval_records(&detections, &EmbeddingTable::read(e)?, &bank)?,
        (None, Some(dir)) => {
            let encoder = ToyEncoder::new(ToyEncoderConfig { dim: a.dim, seed: a.seed })?;
            runa::harness::detections::check_labels(&detections, &bank)?;
            encode_detections(&detections, dir, &encoder, a.radius)?
                .into_iter()
                .zip(&detections)
                .map(|((id, global, regional), d)| EvalRecord {
                    id,
                    truth: d.truth,
                    truth_label: d.truth_label.as_deref().and_then(|l| bank.index_of(l)),
                    global,
                    regional,
                })
                .collect()
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let projection = match &a.projection {
        Some(p) => load_projection(&EmbeddingTable::read(p)?, bank.dim())?,
        None => ProjectionLayer::identity(bank.dim()),
    };
    let config = echo(&[
        ("bank", a.bank.display().to_string()),
        ("detections", a.detections.display().to_string()),
        ("embeddings", show(&a.embeddings)),
        ("images_dir", show(&a.images_dir)),
        ("projection", show(&a.projection)),
        ("gamma", a.gamma.map_or_else(|| "calibrate".into(), |g| g.to_string())),
    ]);
    let fusion = FusionConfig::new(a.lambda)?;
    let mut reports = Vec::new();
    for &m in &a.method {
        let settings = EvalSettings {
            fusion,
            gamma: a.gamma,
            shots: a.shots,
            ..EvalSettings::new(method(m, a.tau)?)
        };
        let mut r = run_eval(&records, &bank, &projection, &settings)?;
        r.config = config.clone();
        reports.push(r);
    }
    emit(&reports, a.out.as_deref(), a.dump_scores.as_deref())
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let l = load(&a.inputs)?;
    let train_table = EmbeddingTable::read(&a.train_embeddings)?;
    let pool = load_train_pool(&load_detections(&a.train_detections)?, &train_table, &l.bank)?;
    let settings = FinetuneSettings {
        few_shot: FewShotConfig {
            shots_per_class: a.shots,
            seed: a.seed,
        },
        train: TrainConfig {
            batch_size: a.batch_size,
            epochs: a.epochs,
            loss_tau: a.loss_tau,
            optimizer: AdamWConfig {
                learning_rate: a.lr,
                ..AdamWConfig::default()
            },
            seed: a.seed,
        },
        eval: EvalSettings {
            fusion: FusionConfig::new(a.scoring.lambda)?,
            ..EvalSettings::new(method(a.scoring.method, a.scoring.tau)?)
        },
        all_shots: a.all_shots,
    };
    let mut out = run_finetune(&pool, &l.records, &l.bank, &settings)?;
    let config = echo(&[
        ("bank", a.inputs.bank.display().to_string()),
        ("detections", a.inputs.detections.display().to_string()),
        ("embeddings", a.inputs.embeddings.display().to_string()),
        ("train_detections", a.train_detections.display().to_string()),
        ("train_embeddings", a.train_embeddings.display().to_string()),
        ("seed", a.seed.to_string()),
        ("epochs", a.epochs.to_string()),
        ("batch_size", a.batch_size.to_string()),
        ("lr", a.lr.to_string()),
        ("loss_tau", a.loss_tau.to_string()),
        ("all_shots", a.all_shots.to_string()),
        ("initial_loss", out.training.initial_loss.to_string()),
        ("final_loss", out.training.loss_history.last().copied().unwrap_or(f64::NAN).to_string()),
    ]);
    out.before.config = config.clone();
    out.after.config = config;

    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    save_projection(&out.training.projection, &a.out.join("projection.tsv"))?;
    let mut loss = String::from("epoch,loss\n0,");
    loss.push_str(&format!("{}\n", out.training.initial_loss));
    for (i, l) in out.training.loss_history.iter().enumerate() {
        loss.push_str(&format!("{},{}\n", i + 1, l));
    }
    write(&a.out.join("loss.csv"), &loss)?;
    println!("zero-shot (identity projection):");
    emit(&[out.before], Some(&a.out.join("report_before.txt")), None)?;
    println!("fine-tuned:");
    emit(&[out.after], Some(&a.out.join("report_after.txt")), a.dump_scores.as_deref())
}

fn encode_toy(a: EncodeToyArgs) -> Result<()> {
    let encoder = ToyEncoder::new(ToyEncoderConfig { dim: a.dim, seed: a.seed })?;
    let bank = toy_bank(&a.labels, &a.template, &encoder)?;
    let detections = load_detections(&a.detections)?;
    let table = encode_toy_table(&detections, &a.images_dir, &encoder, &bank, a.radius)?;
    ensure_parent(&a.out)?;
    table.write(&a.out)?;
    println!(
        "encoded {} detections and {} concepts into {}",
        detections.len(),
        bank.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Score(a) => score(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Eval(a) => eval(a),
        Command::Finetune(a) => finetune(a),
        Command::EncodeToy(a) => encode_toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
