use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdd_core::corpus::{generate_synthetic_corpus, load_corpus, read_manifest, SynthSpec};
use mdd_core::evaluation::{evaluate, format_predictions, parse_predictions, records_tsv};
use mdd_core::gradcheck::{self, SuiteOptions, TOLERANCE};
use mdd_core::hybrid::{decode_all, DecodeMode, HybridConfig, DEFAULT_BEAM, DEFAULT_LAMBDA};
use mdd_core::phoneset::read_phone_file;
use mdd_core::training::{run_pipeline, Checkpoint, TrainConfig};
use mdd_core::{selftest, Error, InventoryMode, PhoneInventory};

#[derive(Parser)]
#[command(
    name = "mdd",
    version,
    about = "Mispronunciation detection and diagnosis with a hybrid CTC/attention recognizer"
)]
struct Cli {
    /// Master seed; overrides the seed in a spec or config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results are identical for every value.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic L2 corpus.
    GenCorpus {
        /// Spec file (`key = value`); built-in defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corpus root to create.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the three-stage training pipeline.
    Train {
        /// Training config file (`key = value`).
        #[arg(long, short)]
        config: PathBuf,
        /// Continue after the stage stored in this checkpoint.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Decode a manifest into a predictions TSV.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// CTC weight in the joint score.
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_BEAM)]
        beam: usize,
        /// hybrid, ctc-only or att-only.
        #[arg(long, default_value_t = DecodeMode::Hybrid)]
        mode: DecodeMode,
        /// Decoder step cap; twice the encoder length when omitted.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Phone list to check against the checkpoint; defaults to
        /// `phones.txt` beside the manifest when present.
        #[arg(long)]
        phones: Option<PathBuf>,
    },
    /// Score predictions against an annotated manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Phone list; defaults to `phones.txt` beside the manifest.
        #[arg(long)]
        phones: Option<PathBuf>,
        /// anti or unk.
        #[arg(long, default_value_t = InventoryMode::PerPhoneAnti)]
        inventory: InventoryMode,
        /// Write per-position outcome records as TSV.
        #[arg(long)]
        dump_records: Option<PathBuf>,
        /// Write the machine-readable report here as well.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the CTC oracle, gradient and metric self-checks.
    Selftest {
        #[arg(long, hide = true)]
        debug_corrupt_gradient: bool,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERIC: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn code_for(e: &Error) -> u8 {
    match e.root() {
        Error::NonFinite(_) => NUMERIC,
        Error::Config { .. } | Error::InvalidArgument(_) => USAGE,
        _ => DATA,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(code_for(&e), e.to_string())
    }
}

/// Errors while reading a spec or config: unreadable files are data
/// errors, anything else is a usage error.
fn settings_error(e: Error) -> Failure {
    let code = if matches!(e, Error::Io { .. }) { DATA } else { USAGE };
    Failure::new(code, e.to_string())
}

fn default_phones(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .unwrap_or(Path::new("."))
        .join("phones.txt")
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
            path: dir.to_owned(),
            source: e,
        }))?;
    }
    std::fs::write(path, body).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_owned(),
            source: e,
        })
    })
}

fn gen_corpus(cli: &Cli, spec: &Option<PathBuf>, out: &Path) -> Result<(), Failure> {
    let mut spec = match spec {
        Some(p) => SynthSpec::read(p).map_err(settings_error)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let corpus = generate_synthetic_corpus(&spec).map_err(settings_error)?;
    corpus.write(out)?;
    let errors = corpus
        .utterances
        .iter()
        .filter(|u| !u.is_correct())
        .count();
    log::info!(
        "wrote {} utterances ({} with injected errors) to {}",
        corpus.utterances.len(),
        errors,
        out.display()
    );
    Ok(())
}

fn train(cli: &Cli, config: &Path, resume_from: &Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = TrainConfig::read(config).map_err(settings_error)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.threads = cli.threads;
    cfg.validate().map_err(settings_error)?;
    let resume = resume_from
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    let out = run_pipeline(&cfg, resume)?;
    for p in &out.checkpoint_paths {
        println!("{}", p.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn decode(
    cli: &Cli,
    checkpoint: &Path,
    manifest: &Path,
    output: &Path,
    lambda: f64,
    beam: usize,
    mode: DecodeMode,
    max_steps: Option<usize>,
    phones: &Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = HybridConfig {
        lambda,
        beam,
        max_steps,
        mode,
    };
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let inv = ck.model.inventory.clone();
    let phones_path = phones.clone().unwrap_or_else(|| default_phones(manifest));
    if phones.is_some() || phones_path.is_file() {
        let listed = PhoneInventory::build(&read_phone_file(&phones_path)?, inv.mode())?;
        ck.check_inventory(&listed)?;
    }
    let utts = load_corpus(manifest, &inv)?;
    let feats: Vec<_> = utts.iter().map(|u| u.features.to_matrix()).collect();
    let results = decode_all(&feats, &ck.model, &cfg, cli.threads)?;
    let rows: Vec<_> = utts
        .iter()
        .zip(results)
        .map(|(u, r)| (u.id.clone(), r.phones))
        .collect();
    write_file(output, &format_predictions(&rows, &inv))?;
    log::info!("decoded {} utterances into {}", rows.len(), output.display());
    Ok(())
}

fn eval(
    manifest: &Path,
    predictions: &Path,
    phones: &Option<PathBuf>,
    mode: InventoryMode,
    dump_records: &Option<PathBuf>,
    report: &Option<PathBuf>,
) -> Result<(), Failure> {
    let phones_path = phones.clone().unwrap_or_else(|| default_phones(manifest));
    let inv = PhoneInventory::build(&read_phone_file(&phones_path)?, mode)?;
    let entries = read_manifest(manifest)?;
    let text = std::fs::read_to_string(predictions).map_err(|e| Error::Io {
        path: predictions.to_owned(),
        source: e,
    })?;
    let preds = parse_predictions(&text, predictions)?;
    let ev = evaluate(&entries, &preds, &inv)?;
    let kv = ev.report.to_key_values();
    print!("{kv}\n{}", ev.report.to_table());
    if let Some(p) = report {
        write_file(p, &kv)?;
    }
    if let Some(p) = dump_records {
        write_file(p, &records_tsv(&ev.records, &inv))?;
    }
    Ok(())
}

fn run_selftest(cli: &Cli, corrupt: bool) -> Result<(), Failure> {
    let groups = selftest::run(SuiteOptions {
        corrupt_gradients: corrupt,
        seed: cli.seed.unwrap_or(0),
    });
    let mut ok = true;
    for g in &groups {
        println!("{} {}: {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
        ok &= g.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::new(NUMERIC, "self-test failed"))
    }
}

fn run_gradcheck(cli: &Cli) -> Result<(), Failure> {
    let reports = gradcheck::run_suite(SuiteOptions {
        corrupt_gradients: false,
        seed: cli.seed.unwrap_or(0),
    });
    let mut ok = true;
    for r in &reports {
        println!(
            "{} {:<16} checked={:<6} max_relative_error={:.3e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.max_relative_error
        );
        ok &= r.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::new(
            NUMERIC,
            format!("gradient check exceeded tolerance {TOLERANCE}"),
        ))
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if cli.threads == 0 {
        return Err(Failure::new(USAGE, "--threads must be at least 1"));
    }
    match &cli.command {
        Command::GenCorpus { spec, out } => gen_corpus(cli, spec, out),
        Command::Train {
            config,
            resume_from,
        } => train(cli, config, resume_from),
        Command::Decode {
            checkpoint,
            manifest,
            output,
            lambda,
            beam,
            mode,
            max_steps,
            phones,
        } => decode(
            cli, checkpoint, manifest, output, *lambda, *beam, *mode, *max_steps, phones,
        ),
        Command::Eval {
            manifest,
            predictions,
            phones,
            inventory,
            dump_records,
            report,
        } => eval(manifest, predictions, phones, *inventory, dump_records, report),
        Command::Selftest {
            debug_corrupt_gradient,
        } => run_selftest(cli, *debug_corrupt_gradient),
        Command::Gradcheck => run_gradcheck(cli),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
