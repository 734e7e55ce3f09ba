use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use gqsm::channel::ebn0_to_n0;
use gqsm::gabp::Prior;
use gqsm::harness::{realize_frame, run_sweep, scaling_probe};
use gqsm::report::{write_ber_csv, write_scaling_csv};
use gqsm::{decode_bits, UvdGabp};

use crate::config::{ConfigError, RunConfig};
use crate::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io(io::Error),
    /// Library failure after validation passed.
    Run(gqsm::GqsmError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) | CliError::Run(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o: {e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<gqsm::GqsmError> for CliError {
    fn from(e: gqsm::GqsmError) -> Self {
        CliError::Run(e)
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Subcommand flags become overrides applied after `--set`, so they win and
/// are reflected in the config hash.
fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.set.clone();
    if let Some(seed) = cli.seed {
        out.push(format!("sweep.seed={seed}"));
    }
    match &cli.command {
        Command::Sweep(a) => {
            if let Some(e) = &a.ebn0 {
                out.push(format!("sweep.ebn0={}", toml_str(e)));
            }
            if let Some(f) = a.frames {
                out.push(format!("sweep.frames={f}"));
            }
            if !a.decoders.is_empty() {
                let list: Vec<String> = a.decoders.iter().map(|d| toml_str(d.trim())).collect();
                out.push(format!("sweep.decoders=[{}]", list.join(",")));
            }
            if let Some(m) = a.max_errors {
                out.push(format!("sweep.max_bit_errors={m}"));
            }
        }
        Command::Scaling(a) => {
            if !a.cells.is_empty() {
                let list: Vec<String> = a.cells.iter().map(|c| toml_str(c)).collect();
                out.push(format!("scaling.cells=[{}]", list.join(",")));
            }
            if let Some(r) = a.reps {
                out.push(format!("scaling.repetitions={r}"));
            }
        }
        Command::Demo(a) => {
            if let Some(e) = a.ebn0 {
                out.push(format!("demo.ebn0={e:?}"));
            }
            if let Some(f) = a.frame {
                out.push(format!("demo.frame={f}"));
            }
        }
    }
    out
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &flag_overrides(&cli))?;
    let workers = match cli.workers {
        Some(0) => return Err(ConfigError("--workers must be at least 1".into()).into()),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let hash = cfg.hash();
    let seed = cfg.sweep.seed;
    // Validate everything before doing any work or touching the output path.
    let mut buf = Vec::new();
    match cli.command {
        Command::Sweep(_) => {
            let plan = cfg.sweep_plan()?;
            let records = run_sweep(&plan, workers)?;
            write_ber_csv(&mut buf, &records, seed, &hash)?;
        }
        Command::Scaling(_) => {
            let (cells, opts) = cfg.scaling()?;
            let rows = scaling_probe(&cells, &opts)?;
            write_scaling_csv(&mut buf, &rows, seed, &hash)?;
        }
        Command::Demo(_) => demo(&cfg, &hash, &mut buf)?,
    }
    emit(cli.out.as_deref(), &buf)
}

fn demo(cfg: &RunConfig, hash: &str, out: &mut Vec<u8>) -> Result<(), CliError> {
    let config = cfg.gqsm_config()?;
    let decoder = UvdGabp::new(cfg.decoder_params()?)?;
    let channel = cfg.channel()?;
    let ebn0 = cfg.demo.ebn0;
    if !ebn0.is_finite() {
        return Err(ConfigError("demo.ebn0 must be finite".into()).into());
    }
    let n0 = ebn0_to_n0(ebn0, &config)?;
    let real = realize_frame(&config, channel, n0, cfg.sweep.seed, 0, cfg.demo.frame)?;
    let mut entropies = Vec::new();
    let result = decoder.decode_traced(&real.system, &real.frame.pilots, &Prior::Uniform, |t| {
        entropies.push((t.iteration, t.mean_entropy()))
    })?;
    let decoded = decode_bits(&result.k_r_hat, &result.k_i_hat, &config)?;
    let errors = gqsm::codec::bit_errors(&decoded.bits, &real.frame.spatial_bits);

    writeln!(out, "# schema=1 seed={} config_hash={hash} ebn0_db={ebn0} frame={}", cfg.sweep.seed, cfg.demo.frame)?;
    writeln!(out, "iteration,mean_entropy_bits")?;
    for (it, h) in entropies {
        writeln!(out, "{it},{h:.6e}")?;
    }
    writeln!(out, "# true k_r={:?} k_i={:?}", real.frame.k_r, real.frame.k_i)?;
    writeln!(out, "# decoded k_r={:?} k_i={:?}", result.k_r_hat, result.k_i_hat)?;
    writeln!(out, "# spatial bit errors {errors} of {}", real.frame.spatial_bits.len())?;
    Ok(())
}

/// Writes to stdout, or atomically replaces `path` via a temp file in the same
/// directory.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let Some(path) = path else {
        let mut stdout = io::stdout().lock();
        stdout.write_all(bytes)?;
        return Ok(stdout.flush()?);
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
