//! `whstamp`: embed, verify and stress-test fragile watermarks in model
//! parameter containers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::warn;
use serde::{Deserialize, Serialize};
use whstamp_core::attack::{apply_attack, reports_to_csv, run_experiment, AttackReport, AttackSpec};
use whstamp_core::container::{load_container, save_container, ParameterSet};
use whstamp_core::keys::{seed_for, SeedLabel};
use whstamp_core::plan::{capacity, recommend_payload_bits, DEFAULT_DENSITY, FRAME_OVERHEAD_BITS};
use whstamp_core::{embed, extract, frame_payload, VerificationReport, WatermarkConfig, WatermarkKey};

/// Exit code for a model whose watermark does not verify.
const EXIT_TAMPERED: u8 = 3;

#[derive(Parser)]
#[command(name = "whstamp", version, about = "Fragile Walsh-Hadamard watermarks for model parameters")]
struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true, env = "WHSTAMP_THREADS")]
    threads: Option<usize>,

    /// Emit a single JSON document on stdout
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ProtocolArgs {
    /// Low magnitude bits usable per coefficient
    #[arg(long, default_value_t = 4)]
    lsb_bits: u8,

    /// Significant figures kept by the coefficient quantizer
    #[arg(long, default_value_t = 5)]
    sigfigs: u32,

    /// Largest transform block (power of two)
    #[arg(long, default_value_t = 2048)]
    max_block: usize,
}

impl ProtocolArgs {
    fn config(self) -> WatermarkConfig {
        WatermarkConfig {
            lsb_bits: self.lsb_bits,
            sig_figs: self.sigfigs,
            max_block: self.max_block,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gaussian,
    Zero,
    Replace,
}

#[derive(Subcommand)]
enum Command {
    /// Hide a payload in a model
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        /// File whose bytes become the payload
        #[arg(long)]
        payload: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hidden bits per parameter the payload should stay within
        #[arg(long, default_value_t = DEFAULT_DENSITY)]
        density: f64,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Recover the payload and report integrity
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        /// Original payload file, for a bit error rate
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Like `extract`, but exits 3 when the model does not verify
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[command(flatten)]
        protocol: ProtocolArgs,
    },
    /// Report how many bits a model can carry
    Capacity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 4)]
        lsb_bits: u8,
        #[arg(long, default_value_t = DEFAULT_DENSITY)]
        density: f64,
    },
    /// Tamper with a model
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tensor: Option<String>,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        end: Option<usize>,
        #[arg(long)]
        value: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a batch of attacks described by a JSON file
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Write the result table here instead of stdout
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    model: PathBuf,
    key_file: PathBuf,
    payload_file: Option<PathBuf>,
    #[serde(default)]
    config: WatermarkConfig,
    attacks: Vec<AttackSpec>,
    /// Repeats every gaussian attack with seeds `seed..seed + trials`.
    trials: Option<u64>,
}

#[derive(Serialize)]
struct SweepRow {
    mode: String,
    target: String,
    seed: Option<u64>,
    modified_count: usize,
    ber: f64,
    verified: bool,
}

impl From<&AttackReport> for SweepRow {
    fn from(r: &AttackReport) -> Self {
        let spec = r.attack.as_ref();
        Self {
            mode: spec.map_or("none", AttackSpec::mode).to_owned(),
            target: spec.map_or_else(String::new, AttackSpec::target),
            seed: spec.and_then(AttackSpec::seed),
            modified_count: r.modified_count,
            ber: r.ber,
            verified: r.verified,
        }
    }
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn check_protocol(p: &ProtocolArgs) {
    if let Err(e) = p.config().validate() {
        usage_error(ErrorKind::ValueValidation, e);
    }
}

fn check_density(density: f64, lsb_bits: u8) {
    if !(density > 0.0 && density <= f64::from(lsb_bits)) {
        usage_error(
            ErrorKind::ValueValidation,
            format!("--density must lie in (0, {lsb_bits}], got {density}"),
        );
    }
}

fn require<T>(value: Option<T>, flag: &str, mode: &str) -> T {
    value.unwrap_or_else(|| {
        usage_error(
            ErrorKind::MissingRequiredArgument,
            format!("--{flag} is required for --mode {mode}"),
        )
    })
}

/// Checks flag combinations clap cannot express, before touching any file.
fn validate(cmd: &Command) -> Option<AttackSpec> {
    match cmd {
        Command::Embed { density, protocol, .. } => {
            check_protocol(protocol);
            check_density(*density, protocol.lsb_bits);
            None
        }
        Command::Extract { protocol, .. } | Command::Verify { protocol, .. } => {
            check_protocol(protocol);
            None
        }
        Command::Capacity { lsb_bits, density, .. } => {
            check_protocol(&ProtocolArgs {
                lsb_bits: *lsb_bits,
                sigfigs: 5,
                max_block: 2048,
            });
            check_density(*density, *lsb_bits);
            None
        }
        Command::Attack {
            mode,
            fraction,
            sigma,
            seed,
            tensor,
            start,
            end,
            value,
            ..
        } => {
            let spec = match mode {
                Mode::Gaussian => {
                    let fraction = require(*fraction, "fraction", "gaussian");
                    if !(0.0..=1.0).contains(&fraction) {
                        usage_error(ErrorKind::ValueValidation, format!("--fraction must lie in [0, 1], got {fraction}"));
                    }
                    if !(sigma.is_finite() && *sigma >= 0.0) {
                        usage_error(ErrorKind::ValueValidation, format!("invalid --sigma {sigma}"));
                    }
                    AttackSpec::Gaussian {
                        fraction,
                        sigma: *sigma,
                        seed: *seed,
                    }
                }
                Mode::Zero | Mode::Replace => {
                    let name = if matches!(mode, Mode::Zero) { "zero" } else { "replace" };
                    let tensor = require(tensor.clone(), "tensor", name);
                    let start = require(*start, "start", name);
                    let end = require(*end, "end", name);
                    if start > end {
                        usage_error(ErrorKind::ValueValidation, format!("--start {start} exceeds --end {end}"));
                    }
                    match mode {
                        Mode::Zero => AttackSpec::ZeroRange { tensor, start, end },
                        _ => AttackSpec::ReplaceValue {
                            tensor,
                            start,
                            end,
                            value: require(*value, "value", name),
                        },
                    }
                }
            };
            Some(spec)
        }
        Command::Sweep { .. } => None,
    }
}

fn load_model(path: &Path) -> Result<ParameterSet> {
    load_container(path).with_context(|| format!("reading model {}", path.display()))
}

fn load_key(path: &Path) -> Result<WatermarkKey> {
    WatermarkKey::load(path).with_context(|| format!("reading key {}", path.display()))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_report(report: &VerificationReport, json: bool) -> Result<()> {
    if json {
        return print_json(report);
    }
    println!("verified: {}", report.verified);
    if let Some(len) = report.payload_length {
        println!("payload length: {len} bytes");
    }
    if let Some(payload) = &report.payload {
        match std::str::from_utf8(payload) {
            Ok(text) if !text.chars().any(char::is_control) => println!("payload: {text}"),
            _ => println!("payload (hex): {}", hex::encode(payload)),
        }
    }
    if let Some(ber) = report.ber {
        println!("bit error rate: {:.6}", ber);
    }
    if let Some(diag) = &report.diagnostic {
        println!("note: {diag}");
    }
    Ok(())
}

/// Deterministic filler used when a sweep names no payload file.
fn default_payload(n_params: usize, lsb_bits: u8) -> Result<Vec<u8>> {
    let bits = recommend_payload_bits(n_params, DEFAULT_DENSITY, lsb_bits)?;
    Ok((0..bits / 8).map(|i| (i % 251) as u8).collect())
}

fn run(cli: Cli, attack: Option<AttackSpec>) -> Result<ExitCode> {
    let json = cli.json;
    match cli.command {
        Command::Embed {
            model,
            key_file,
            payload,
            out,
            density,
            protocol,
        } => {
            let cfg = protocol.config();
            let key = load_key(&key_file)?;
            let set = load_model(&model)?;
            let payload = read_file(&payload)?;
            let n_params = set.num_params();
            let hidden = FRAME_OVERHEAD_BITS + 8 * payload.len() as u64;
            let budget = (n_params as f64 * density).floor() as u64;
            if hidden > budget {
                warn!("{hidden} hidden bits exceed the density budget of {budget} bits");
            }
            let marked = embed(&set, &key, &payload, &cfg)?;
            save_container(&marked, &out).with_context(|| format!("writing {}", out.display()))?;
            if json {
                print_json(&serde_json::json!({
                    "out": out,
                    "n_params": n_params,
                    "payload_bytes": payload.len(),
                    "hidden_bits": hidden,
                    "capacity_bits": capacity(n_params, cfg.lsb_bits),
                    "density_budget_bits": budget,
                    "config": cfg,
                }))?;
            } else {
                println!(
                    "embedded {} payload bytes ({hidden} hidden bits) into {n_params} parameters -> {}",
                    payload.len(),
                    out.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Extract {
            model,
            key_file,
            reference,
            protocol,
        } => {
            let key = load_key(&key_file)?;
            let set = load_model(&model)?;
            let reference = reference.map(|p| read_file(&p)).transpose()?;
            let reference = reference.as_deref().map(frame_payload).transpose()?;
            let report = extract(&set, &key, &protocol.config(), reference.as_ref())?;
            print_report(&report, json)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            model,
            key_file,
            protocol,
        } => {
            let key = load_key(&key_file)?;
            let set = load_model(&model)?;
            let report = extract(&set, &key, &protocol.config(), None)?;
            print_report(&report, json)?;
            Ok(if report.verified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_TAMPERED)
            })
        }
        Command::Capacity {
            model,
            lsb_bits,
            density,
        } => {
            let set = load_model(&model)?;
            let n_params = set.num_params();
            let cap = capacity(n_params, lsb_bits);
            let recommended = recommend_payload_bits(n_params, density, lsb_bits)?;
            if json {
                print_json(&serde_json::json!({
                    "n_params": n_params,
                    "lsb_bits": lsb_bits,
                    "capacity_bits": cap,
                    "density": density,
                    "recommended_payload_bits": recommended,
                    "recommended_payload_bytes": recommended / 8,
                }))?;
            } else {
                println!("parameters: {n_params}");
                println!("capacity: {cap} bits at {lsb_bits} bits per coefficient");
                println!(
                    "recommended payload at density {density}: {} bytes",
                    recommended / 8
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { model, key_file, out, .. } => {
            let spec = attack.expect("attack flags validated");
            let key = load_key(&key_file)?;
            let set = load_model(&model)?;
            let (attacked, modified) = apply_attack(&set, &spec, &seed_for(&key, SeedLabel::Attack))?;
            save_container(&attacked, &out).with_context(|| format!("writing {}", out.display()))?;
            if json {
                print_json(&serde_json::json!({
                    "mode": spec.mode(),
                    "target": spec.target(),
                    "seed": spec.seed(),
                    "modified_count": modified,
                    "out": out,
                }))?;
            } else {
                println!("{} {}: modified {modified} parameters -> {}", spec.mode(), spec.target(), out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, csv } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let sweep: SweepFile =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            sweep.config.validate()?;
            let base = config.parent().unwrap_or(Path::new("."));
            let key = load_key(&base.join(&sweep.key_file))?;
            let set = load_model(&base.join(&sweep.model))?;
            let payload = match &sweep.payload_file {
                Some(p) => read_file(&base.join(p))?,
                None => default_payload(set.num_params(), sweep.config.lsb_bits)?,
            };
            let attacks = expand_trials(sweep.attacks, sweep.trials)?;
            let reports = run_experiment(&set, &key, &payload, &attacks, &sweep.config)?;
            let table = reports_to_csv(&reports)?;
            if let Some(path) = &csv {
                std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
            }
            if json {
                let rows: Vec<SweepRow> = reports.iter().map(SweepRow::from).collect();
                print_json(&serde_json::json!({ "rows": rows }))?;
            } else if csv.is_none() {
                print!("{table}");
            } else {
                let detected = reports.iter().skip(1).filter(|r| !r.verified).count();
                println!("{} attacks, {detected} detected", reports.len() - 1);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn expand_trials(attacks: Vec<AttackSpec>, trials: Option<u64>) -> Result<Vec<AttackSpec>> {
    let Some(trials) = trials else {
        return Ok(attacks);
    };
    if trials == 0 {
        bail!("trials must be at least 1");
    }
    Ok(attacks
        .into_iter()
        .flat_map(|spec| match spec {
            AttackSpec::Gaussian { fraction, sigma, seed } => (seed..seed + trials)
                .map(|seed| AttackSpec::Gaussian { fraction, sigma, seed })
                .collect(),
            other => vec![other],
        })
        .collect())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let attack = validate(&cli.command);

    let pool = match cli.threads {
        Some(0) => usage_error(ErrorKind::ValueValidation, "--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let outcome = match pool {
        Ok(pool) => pool.install(|| run(cli, attack)),
        Err(e) => Err(e.into()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
