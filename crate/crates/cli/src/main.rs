mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rrpsr_core::baselines::{Dictionary, RangeProfile};
use rrpsr_core::dataset::write_dataset;
use rrpsr_core::diagnostics::{gradcheck_suite, GRADCHECK_TOL};
use rrpsr_core::eval::{axis, Estimator, Harness, Sweep};
use rrpsr_core::network::DssrArch;
use rrpsr_core::seed;
use rrpsr_core::signal::{apply_awgn, generate_dataset, synthesize_echo, Echo, Scene};
use rrpsr_core::training::{train, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::CliConfig;

const SINGLE_TARGET_FIXTURE: &str = include_str!("../fixtures/single_target.json");

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<rrpsr_core::Error> for CliError {
    fn from(e: rrpsr_core::Error) -> Self {
        use rrpsr_core::Error as E;
        match e {
            E::UnknownEstimator(_) | E::Invalid { .. } | E::EmptyScene | E::RankDeficient { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

/// Radar range-profile super-resolution toolkit.
#[derive(Parser, Debug)]
#[command(name = "rrpsr", version, about)]
struct Cli {
    /// Base seed; every random stream is derived from it by name.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation, training and evaluation.
    #[arg(long, global = true, env = "RRPSR_WORKERS")]
    workers: Option<usize>,
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training dataset.
    Simulate(SimulateArgs),
    /// Train DSSR-Net on a dataset.
    Train(TrainArgs),
    /// Reconstruct one range profile and print it as `bin,value` CSV.
    Infer(InferArgs),
    /// Two-target success rate at one operating point.
    Eval(EvalArgs),
    /// Success rates over an SNR × relative-distance grid.
    PhaseMap(PhaseMapArgs),
    /// Success rate along one swept variable.
    Sweep(SweepArgs),
    /// Finite-difference check of every autodiff primitive and the tiny network.
    Gradcheck,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 20_000)]
    items: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchChoice {
    Default,
    Tiny,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory for the checkpoint, optimizer state and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from a preset instead of the config file's `train` section.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    arch: Option<ArchChoice>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    probe_trials: Option<usize>,
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EstimatorArgs {
    /// fft, music, omp, hqs or dssr.
    #[arg(long)]
    estimator: Option<String>,
    /// Trained network; required for dssr.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false)]
struct EchoSource {
    /// JSON echo: `{"samples": [[re, im], ...]}`.
    #[arg(long, group = "source")]
    echo: Option<PathBuf>,
    /// Inline JSON scene: `{"targets": [{"amplitude", "freq", "phase"}]}`.
    #[arg(long, group = "source")]
    scene: Option<String>,
    #[arg(long, group = "source")]
    scene_file: Option<PathBuf>,
    /// Bundled noise-free unit target at normalized frequency 0.25.
    #[arg(long, group = "source")]
    fixture: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    #[command(flatten)]
    source: EchoSource,
    /// Add white noise at this per-sample SNR before reconstruction.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Model order for MUSIC and OMP; defaults to the scene's target count, else 2.
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Comma-separated; all estimators see identical trials.
    #[arg(long, value_delimiter = ',', required = true)]
    estimator: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    rho_d: f64,
    #[arg(long, default_value_t = 15.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    amp2: f64,
    #[arg(long, default_value_t = 500)]
    trials: usize,
}

#[derive(Args, Debug)]
struct PhaseMapArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    /// `lo:hi:step` in dB.
    #[arg(long)]
    snr: Option<String>,
    /// `lo:hi:step` in Rayleigh cells.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    amp2: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// CSV output (`snr_db,rho_d,rate`); stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full map with metadata as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Vary {
    Snr,
    Rho,
    Amp,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long, value_enum, requires = "values")]
    vary: Option<Vary>,
    /// `lo:hi:step` of the swept variable.
    #[arg(long)]
    values: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    rho_d: f64,
    #[arg(long, default_value_t = 15.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    amp2: f64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    cfg.radar.rng_seed = seed;
    cfg.radar.validate()?;
    cfg.criteria().validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers.or(cfg.workers) {
        if k == 0 {
            return Err(CliError::Usage("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool.build().map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => simulate(&cfg, seed, a),
        Command::Train(a) => cmd_train(&cfg, seed, a),
        Command::Infer(a) => infer(&cfg, seed, a),
        Command::Eval(a) => eval(&cfg, seed, a),
        Command::PhaseMap(a) => phase_map(&cfg, seed, a),
        Command::Sweep(a) => sweep(&cfg, seed, a),
        Command::Gradcheck => gradcheck(seed),
    })
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", p.display()))),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))?;
    println!("{text}");
    Ok(())
}

fn parse_axis(flag: &str, spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("--{flag} expects lo:hi:step with step > 0 and lo <= hi, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match parts[..] {
        [lo, hi, step] if step > 0.0 && lo <= hi && lo.is_finite() && hi.is_finite() => Ok(axis(lo, hi, step)),
        [v] if v.is_finite() => Ok(vec![v]),
        _ => Err(bad()),
    }
}

fn estimator(cfg: &CliConfig, args: &EstimatorArgs) -> CliResult<Estimator> {
    let name = args
        .estimator
        .as_deref()
        .or(cfg.estimator.as_deref())
        .ok_or_else(|| CliError::Usage("no estimator given (pass --estimator)".into()))?;
    load_estimator(cfg, name, args.checkpoint.as_deref())
}

fn load_estimator(cfg: &CliConfig, name: &str, ckpt: Option<&Path>) -> CliResult<Estimator> {
    Ok(Estimator::from_name(name, ckpt.or(cfg.checkpoint.as_deref()), cfg.hqs)?)
}

fn harness(cfg: &CliConfig, seed: u64) -> CliResult<Harness> {
    Ok(Harness::new(cfg.radar, cfg.criteria(), seed)?)
}

fn simulate(cfg: &CliConfig, seed: u64, a: SimulateArgs) -> CliResult<()> {
    if a.items == 0 {
        return Err(CliError::Usage("--items must be >= 1".into()));
    }
    let items = generate_dataset(a.items, &cfg.radar, seed)?;
    let header = write_dataset(&a.out, seed, &items)?;
    print_json(&header)
}

fn cmd_train(cfg: &CliConfig, seed: u64, a: TrainArgs) -> CliResult<()> {
    let mut tc = match a.preset {
        Some(Preset::Desk) => TrainConfig::desk(),
        Some(Preset::Paper) => TrainConfig::paper(),
        None => cfg.train.clone(),
    };
    tc.seed = seed;
    if let Some(v) = a.dataset {
        tc.dataset_path = v;
    }
    if let Some(v) = a.out {
        tc.checkpoint_dir = v;
    }
    match a.arch {
        Some(ArchChoice::Tiny) => tc.arch = DssrArch::tiny(),
        Some(ArchChoice::Default) => tc.arch = DssrArch::default(),
        None => {}
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.eval_every {
        tc.eval_every = v;
    }
    if let Some(v) = a.probe_trials {
        tc.probe_trials = v;
    }
    tc.resume |= a.resume;
    let out = train(&tc, &mut |r| {
        let probe = r.probe_success.map_or("-".to_string(), |p| format!("{p:.3}"));
        eprintln!("epoch {} mean_loss {:.6} probe_success {probe}", r.epoch, r.mean_loss);
    })?;
    #[derive(Serialize)]
    struct Summary<'a> {
        checkpoint: &'a Path,
        steps: usize,
        epochs: &'a [rrpsr_core::training::EpochRecord],
    }
    print_json(&Summary {
        checkpoint: &out.checkpoint,
        steps: out.log.steps.len(),
        epochs: &out.log.epochs,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EchoFile {
    samples: Vec<[f64; 2]>,
}

fn parse_scene(text: &str, origin: &str) -> CliResult<Scene> {
    let scene: Scene = serde_json::from_str(text)
        .map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
    scene.validate()?;
    Ok(scene)
}

fn infer(cfg: &CliConfig, seed: u64, a: InferArgs) -> CliResult<()> {
    let est = estimator(cfg, &a.est)?;
    let src = &a.source;
    let scene = if src.fixture {
        Some(parse_scene(SINGLE_TARGET_FIXTURE, "bundled fixture")?)
    } else if let Some(s) = &src.scene {
        Some(parse_scene(s, "--scene")?)
    } else if let Some(p) = &src.scene_file {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
        Some(parse_scene(&text, &p.display().to_string())?)
    } else {
        None
    };
    let clean = match (&scene, &src.echo) {
        (Some(s), _) => synthesize_echo(s, &cfg.radar)?,
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            let file: EchoFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if file.samples.len() != cfg.radar.n_samples {
                return Err(CliError::Usage(format!(
                    "{} has {} samples but the radar config expects {}",
                    p.display(),
                    file.samples.len(),
                    cfg.radar.n_samples
                )));
            }
            Echo::noise_free(file.samples.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
        }
        (None, None) => unreachable!("clap requires one echo source"),
    };
    let echo = match a.snr_db {
        Some(snr) => apply_awgn(&clean, snr, seed::derive(seed, "infer-noise", 0))?,
        None => clean,
    };
    let n_targets = a.targets.or(scene.as_ref().map(|s| s.targets.len())).unwrap_or(2);
    let dict = Dictionary::new(&cfg.radar)?;
    let profile: RangeProfile = est.profiles(&[echo], n_targets, &cfg.radar, &dict)?.remove(0);
    let mut csv = String::from("bin,value\n");
    for (i, v) in profile.values.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    write_output(a.out.as_deref(), &csv)
}

fn eval(cfg: &CliConfig, seed: u64, a: EvalArgs) -> CliResult<()> {
    let h = harness(cfg, seed)?;
    #[derive(Serialize)]
    struct Row {
        estimator: String,
        rho_d: f64,
        snr_db: f64,
        amp2: f64,
        trials: usize,
        seed: u64,
        rate: f64,
    }
    let mut rows = Vec::new();
    for name in &a.estimator {
        let est = load_estimator(cfg, name, a.checkpoint.as_deref())?;
        rows.push(Row {
            estimator: name.clone(),
            rho_d: a.rho_d,
            snr_db: a.snr_db,
            amp2: a.amp2,
            trials: a.trials,
            seed,
            rate: h.success_rate(&est, 0, a.rho_d, a.snr_db, a.amp2, a.trials)?,
        });
    }
    print_json(&rows)
}

fn phase_map(cfg: &CliConfig, seed: u64, a: PhaseMapArgs) -> CliResult<()> {
    let est = estimator(cfg, &a.est)?;
    let spec = &cfg.phase_map;
    let snr = match &a.snr {
        Some(s) => parse_axis("snr", s)?,
        None => spec.snr_axis.clone(),
    };
    let rho = match &a.rho {
        Some(s) => parse_axis("rho", s)?,
        None => spec.rho_axis.clone(),
    };
    let map = harness(cfg, seed)?.phase_map(&est, &snr, &rho, a.amp2.unwrap_or(spec.amp2), a.trials.unwrap_or(spec.trials))?;
    if let Some(p) = &a.json {
        let text = serde_json::to_string_pretty(&map).map_err(|e| CliError::Runtime(e.into()))?;
        write_output(Some(p), &text)?;
    }
    write_output(a.out.as_deref(), &map.to_csv())
}

fn sweep(cfg: &CliConfig, seed: u64, a: SweepArgs) -> CliResult<()> {
    let est = estimator(cfg, &a.est)?;
    let (sweep, default_trials) = match (a.vary, &a.values, &cfg.sweep) {
        (Some(vary), Some(values), _) => {
            let values = parse_axis("values", values)?;
            let s = match vary {
                Vary::Snr => Sweep::Snr {
                    rho_d: a.rho_d,
                    amp2: a.amp2,
                    values,
                },
                Vary::Rho => Sweep::Rho {
                    snr_db: a.snr_db,
                    amp2: a.amp2,
                    values,
                },
                Vary::Amp => Sweep::Amp {
                    rho_d: a.rho_d,
                    snr_db: a.snr_db,
                    values,
                },
            };
            (s, cfg.sweep_trials.unwrap_or(200))
        }
        (None, _, Some(spec)) => (spec.clone(), cfg.sweep_trials.unwrap_or(200)),
        _ => {
            return Err(CliError::Usage(
                "no sweep given (pass --vary and --values, or a `sweep` section in --config)".into(),
            ))
        }
    };
    let curve = harness(cfg, seed)?.sweep_curve(&est, &sweep, a.trials.unwrap_or(default_trials))?;
    write_output(a.out.as_deref(), &curve.to_csv())
}

fn gradcheck(seed: u64) -> CliResult<()> {
    let cases = gradcheck_suite(seed)?;
    let mut failed = 0;
    for c in &cases {
        let status = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<30} {:>12.3e}  {status}", c.name, c.max_rel_error);
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{failed} gradient check(s) above relative error {GRADCHECK_TOL:e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_specs() {
        assert_eq!(parse_axis("x", "0:4:2").unwrap(), vec![0.0, 2.0, 4.0]);
        assert_eq!(parse_axis("x", "0.8").unwrap(), vec![0.8]);
        for bad in ["1:0:1", "0:1:0", "a:b:c", "0:1", ""] {
            assert!(matches!(parse_axis("x", bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn fixture_is_a_valid_single_target_scene() {
        let s = parse_scene(SINGLE_TARGET_FIXTURE, "fixture").unwrap();
        assert_eq!(s.targets.len(), 1);
        assert_eq!(s.targets[0].freq, 0.25);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
