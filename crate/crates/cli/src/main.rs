//! `mra`: experiment driver for multi-reference alignment.

mod commands;
mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use mra_core::MraError;

use settings::{parse_config, Manifest, Settings};

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing arguments; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl From<MraError> for CliError {
    fn from(e: MraError) -> Self {
        match e {
            MraError::InvalidArgument(_)
            | MraError::GeometryMismatch(_)
            | MraError::UnsupportedGeometry(_)
            | MraError::UndefinedPhase(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type R<T> = std::result::Result<T, CliError>;

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: &'static [(&'static str, &'static str)],
}

const MODEL_KEYS: [(&str, &str); 7] = [
    ("d", "signal length (population model, default 5)"),
    ("sigma", "noise level (default 1)"),
    ("beta", "truth norm; the truth is rescaled to this norm"),
    ("truth", "truth signal file (.csv or .pgm)"),
    ("waveform", "named truth when no file is given (bump|steps|sine|pair-a|pair-b)"),
    ("nodes", "Gauss-Hermite nodes per axis (default 11)"),
    ("latent", "latent shift average: exact|reduced (default exact)"),
];

const SUBS: &[Sub] = &[
    Sub {
        name: "gen",
        about: "Generate an observation set",
        keys: &[
            ("d", "line length"),
            ("grid", "image size HxW (instead of --d)"),
            ("n", "number of observations"),
            ("sigma", "noise level"),
            ("snr", "target SNR; rescales the truth when --sigma is given, else sets sigma"),
            ("truth", "truth signal file (.csv or .pgm)"),
            ("waveform", "named truth when no file is given (default bump)"),
            ("truth-norm", "rescale the truth to this norm"),
            ("out", "output dataset (default data.mra)"),
        ],
    },
    Sub {
        name: "run",
        about: "Run an estimator on a dataset and write its trajectory",
        keys: &[
            ("algo", "em|hard|sgd (default em)"),
            ("data", "dataset file"),
            ("init", "initial estimate file, or first|mean|zeros (default first)"),
            ("iters", "iterations (default 100)"),
            ("sigma", "noise level used by the estimator (default: dataset's)"),
            ("freqs", "comma-separated frequencies whose phase/magnitude are recorded"),
            ("loglik", "record log-likelihood: true|false (default true)"),
            ("path", "correlation path auto|fft|direct (default auto)"),
            ("batch", "SGD batch size (default 256)"),
            ("schedule", "SGD step schedule geometric|exponential|constant (default geometric)"),
            ("alpha0", "SGD initial step (default 0.95)"),
            ("gamma", "SGD schedule decay (default 0.99)"),
            ("beta1", "SGD first-moment decay (default 0.9)"),
            ("beta2", "SGD second-moment decay (default 0.999)"),
            ("eps", "SGD denominator offset (default 1e-8)"),
            ("moments", "SGD moment rule corrected|uncorrected (default corrected)"),
            ("final", "also write the final estimate (.csv or .pgm)"),
            ("out", "trajectory CSV (default traj.csv)"),
        ],
    },
    Sub {
        name: "pop",
        about: "Iterate the population EM operator",
        keys: &[
            MODEL_KEYS[0],
            MODEL_KEYS[1],
            MODEL_KEYS[2],
            MODEL_KEYS[3],
            MODEL_KEYS[4],
            MODEL_KEYS[5],
            MODEL_KEYS[6],
            ("init", "initial estimate file (default zeros)"),
            ("iters", "iterations (default 100)"),
            ("out", "trajectory CSV (default pop_traj.csv)"),
        ],
    },
    Sub {
        name: "jacobian",
        about: "Fourier-block spectrum of the population Jacobian",
        keys: &[
            MODEL_KEYS[0],
            MODEL_KEYS[1],
            MODEL_KEYS[2],
            MODEL_KEYS[3],
            MODEL_KEYS[4],
            MODEL_KEYS[5],
            MODEL_KEYS[6],
            ("at", "evaluation point: truth or a signal file (default truth)"),
            ("out", "report JSON (default spectral.json)"),
        ],
    },
    Sub {
        name: "efn",
        about: "Phase drift of EM on pure noise from a fixed initialization",
        keys: &[
            ("init", "initialization file (.csv or .pgm)"),
            ("d", "line length of a named initialization when no file is given (default 16)"),
            ("waveform", "named initialization when no file is given (default bump)"),
            ("init-norm", "rescale the initialization to this norm (default 0.1 for a named one)"),
            ("sigma", "noise level (default 1)"),
            ("n", "comma-separated sample sizes"),
            ("iters", "iterations per trial (default 100)"),
            ("trials", "trials per sample size (default 64)"),
            ("freqs", "frequencies to track (default: half spectrum)"),
            ("report", "also write fits as JSON to this path"),
            ("out", "drift CSV (default drift.csv)"),
        ],
    },
    Sub {
        name: "efn-law",
        about: "Predicted magnitude ratios under pure noise",
        keys: &[
            ("init", "initialization file; uses its non-mean squared magnitudes"),
            ("mag0-sq", "comma-separated squared initial magnitudes (instead of --init)"),
            ("iters", "last iteration (default 100)"),
            ("out", "CSV (default efn_law.csv)"),
        ],
    },
    Sub {
        name: "ghost",
        about: "EM and hard-assignment error curves with rebound detection",
        keys: &[
            ("data", "dataset file with ground truth"),
            ("init", "initial estimate file"),
            ("iters", "iterations (default 200)"),
            ("margin", "relative rebound margin (default 0.25)"),
            ("sigma", "noise level used by EM (default: dataset's)"),
            ("kappa", "contraction factor for the crossover prediction"),
            ("eps-m", "sample-population deviation for the crossover prediction"),
            ("nodes", "quadrature nodes when kappa is computed (default 11)"),
            ("trials", "trials when eps-m is estimated (default 8)"),
            ("out", "report JSON (default ghost.json)"),
        ],
    },
    Sub {
        name: "scan",
        about: "Parameter scans: deviation | highdim | two-phase",
        keys: &[
            ("kind", "deviation|highdim|two-phase"),
            MODEL_KEYS[0],
            MODEL_KEYS[1],
            MODEL_KEYS[2],
            MODEL_KEYS[3],
            MODEL_KEYS[4],
            MODEL_KEYS[5],
            MODEL_KEYS[6],
            ("n", "sample sizes (deviation) or sample size (highdim)"),
            ("trials", "Monte-Carlo trials"),
            ("probes", "random probe points besides truth and zero (deviation, default 3)"),
            ("tau", "initialization energy (highdim, default 1)"),
            ("dims", "comma-separated lengths (highdim, default 16,32,64)"),
            ("init", "initial estimate file (two-phase)"),
            ("iters", "iterations (two-phase, default 500)"),
            ("out", "output file (default scan.csv, or scan.json for two-phase)"),
        ],
    },
];

fn build_cli() -> Command {
    let mut cmd = Command::new("mra")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Multi-reference alignment experiments")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("seed").long("seed").global(true).value_name("N").help("base seed (fallback: MRA_SEED)"))
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .help("worker threads (fallback: MRA_THREADS)"),
        )
        .arg(Arg::new("config").long("config").global(true).value_name("FILE").help("flat key = value config file"))
        .arg(
            Arg::new("from-manifest")
                .long("from-manifest")
                .global(true)
                .value_name("FILE")
                .help("replay the settings recorded in a manifest.json"),
        )
        .arg(Arg::new("out-dir").long("out-dir").global(true).value_name("DIR").help("directory for outputs and manifest.json"));
    for sub in SUBS {
        let mut sc = Command::new(sub.name).about(sub.about);
        for (key, help) in sub.keys {
            sc = sc.arg(Arg::new(*key).long(*key).value_name("VALUE").help(*help).action(ArgAction::Set));
        }
        cmd = cmd.subcommand(sc);
    }
    cmd
}

const GLOBAL_KEYS: [&str; 5] = ["seed", "threads", "config", "from-manifest", "out-dir"];

fn explicit(m: &ArgMatches, keys: impl Iterator<Item = &'static str>) -> BTreeMap<String, String> {
    keys.filter(|k| m.value_source(k) == Some(ValueSource::CommandLine))
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

/// Per-invocation context shared by the subcommands.
pub struct Ctx {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
}

impl Ctx {
    pub fn seed(&self, what: &str) -> R<u64> {
        self.seed.ok_or_else(|| CliError::Usage(format!("{what} is randomized: pass --seed (or set MRA_SEED)")))
    }

    /// Output path relative to the output directory; recorded in the manifest.
    pub fn output(&mut self, path: &str) -> R<PathBuf> {
        let p = Path::new(path);
        let full = if p.is_absolute() { p.to_path_buf() } else { self.out_dir.join(p) };
        if let Some(parent) = full.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        self.outputs.push(full.clone());
        Ok(full)
    }
}

fn env_or(settings: &mut Settings, key: &str, var: &str) {
    if !settings.has(key) {
        if let Ok(v) = std::env::var(var) {
            if !v.trim().is_empty() {
                settings.set(key, v.trim());
            }
        }
    }
}

fn execute(matches: &ArgMatches) -> R<()> {
    let (name, sub_m) = matches.subcommand().ok_or_else(|| CliError::Usage("missing subcommand".into()))?;
    let sub = SUBS.iter().find(|s| s.name == name).expect("subcommand table covers clap definitions");

    let mut settings = Settings::default();
    if let Some(path) = sub_m.get_one::<String>("from-manifest") {
        let man = Manifest::load(Path::new(path))?;
        if man.command != name {
            return Err(CliError::Usage(format!("manifest records '{}', not '{name}'", man.command)));
        }
        settings.overlay(man.settings);
    }
    if let Some(path) = sub_m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
        settings.overlay(parse_config(&text, name)?);
    }
    let flags = explicit(sub_m, sub.keys.iter().map(|(k, _)| *k).chain(["seed", "threads", "out-dir"]));
    settings.overlay(flags);
    env_or(&mut settings, "seed", "MRA_SEED");
    env_or(&mut settings, "threads", "MRA_THREADS");

    let threads: Option<usize> = settings.get("threads")?;
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}")))?;
    }
    let seed: Option<u64> = settings.get("seed")?;
    let out_dir = PathBuf::from(settings.raw("out-dir").unwrap_or("."));
    let mut ctx = Ctx { seed, out_dir: out_dir.clone(), outputs: Vec::new() };

    match name {
        "gen" => commands::gen(&mut settings, &mut ctx)?,
        "run" => commands::run(&mut settings, &mut ctx)?,
        "pop" => commands::pop(&mut settings, &mut ctx)?,
        "jacobian" => commands::jacobian(&mut settings, &mut ctx)?,
        "efn" => commands::efn(&mut settings, &mut ctx)?,
        "efn-law" => commands::efn_law(&mut settings, &mut ctx)?,
        "ghost" => commands::ghost(&mut settings, &mut ctx)?,
        "scan" => commands::scan(&mut settings, &mut ctx)?,
        _ => unreachable!("unknown subcommand {name}"),
    }

    let known: Vec<&str> = sub.keys.iter().map(|(k, _)| *k).chain(GLOBAL_KEYS).collect();
    if let Some(k) = settings.map().keys().find(|k| !known.contains(&k.as_str())) {
        eprintln!("warning: setting '{k}' is not used by '{name}'");
    }
    let mut seeds = BTreeMap::new();
    if let Some(s) = ctx.seed {
        seeds.insert("base".to_string(), s);
    }
    let manifest = Manifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        threads,
        settings: settings.map().clone(),
        outputs: ctx.outputs.clone(),
    };
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    let matches = match build_cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    match execute(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
