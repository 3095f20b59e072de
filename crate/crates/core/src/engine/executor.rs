use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::CanonicalHasher;
use crate::model::ToolState;

/// Deterministic payload transforms for synthetic modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTransform {
    /// Concatenation of all inputs in port order.
    Identity,
    /// SHA-256 over the output-affecting parameters, the output port index
    /// and the length-prefixed inputs.
    ConcatDigest,
    /// One byte: the wrapping sum of every input byte.
    ByteSum,
}

/// How a module is run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorConfig {
    /// Sleeps `duration_ms`, then applies a pure transform.
    Synthetic {
        duration_ms: u64,
        transform: SyntheticTransform,
    },
    /// Runs a process. `argv` entries may contain `{inN}`, `{outN}` and
    /// `{param:NAME}` placeholders, replaced by input file paths, output
    /// file paths and canonical parameter values.
    ExternalCommand {
        argv: Vec<String>,
        #[serde(default)]
        working_dir: Option<PathBuf>,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_timeout() -> u64 {
    60_000
}

impl ExecutorConfig {
    pub fn synthetic(duration_ms: u64, transform: SyntheticTransform) -> Self {
        ExecutorConfig::Synthetic {
            duration_ms,
            transform,
        }
    }

    pub fn command<I, S>(argv: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ExecutorConfig::ExternalCommand {
            argv: argv.into_iter().map(Into::into).collect(),
            working_dir: None,
            timeout_ms: default_timeout(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("command exited with {status}: {stderr}")]
    NonZeroExit { status: String, stderr: String },
    #[error("command timed out after {0} ms")]
    Timeout(u64),
    #[error("command did not write output `{0}`")]
    MissingOutput(String),
    #[error("empty argv")]
    EmptyCommand,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ModuleOutput {
    /// One payload per output port, in port order.
    pub outputs: Vec<Vec<u8>>,
    pub exec_time_ms: f64,
}

pub fn apply_transform(
    transform: SyntheticTransform,
    inputs: &[Vec<u8>],
    output_count: usize,
    state: &ToolState,
) -> Vec<Vec<u8>> {
    match transform {
        SyntheticTransform::Identity => vec![inputs.concat(); output_count],
        SyntheticTransform::ByteSum => {
            let sum = inputs
                .iter()
                .flatten()
                .fold(0u8, |acc, b| acc.wrapping_add(*b));
            vec![vec![sum]; output_count]
        }
        SyntheticTransform::ConcatDigest => (0..output_count)
            .map(|port| {
                let mut h = CanonicalHasher::new("flowcache/synthetic/concat-digest");
                h.digest(&state.result_digest()).u64(port as u64);
                for i in inputs {
                    h.bytes(i);
                }
                h.finish().as_bytes().to_vec()
            })
            .collect(),
    }
}

/// Runs one module over its input payloads (input-port order).
pub fn run_module(
    config: &ExecutorConfig,
    inputs: &[Vec<u8>],
    output_count: usize,
    state: &ToolState,
) -> Result<ModuleOutput, ExecError> {
    let start = Instant::now();
    let outputs = match config {
        ExecutorConfig::Synthetic {
            duration_ms,
            transform,
        } => {
            std::thread::sleep(Duration::from_millis(*duration_ms));
            apply_transform(*transform, inputs, output_count, state)
        }
        ExecutorConfig::ExternalCommand {
            argv,
            working_dir,
            timeout_ms,
        } => run_command(argv, working_dir.as_deref(), *timeout_ms, inputs, output_count, state)?,
    };
    Ok(ModuleOutput {
        outputs,
        exec_time_ms: start.elapsed().as_secs_f64() * 1000.0,
    })
}

fn run_command(
    argv: &[String],
    working_dir: Option<&std::path::Path>,
    timeout_ms: u64,
    inputs: &[Vec<u8>],
    output_count: usize,
    state: &ToolState,
) -> Result<Vec<Vec<u8>>, ExecError> {
    let scratch = tempfile::tempdir()?;
    let mut in_paths = Vec::new();
    for (i, payload) in inputs.iter().enumerate() {
        let p = scratch.path().join(format!("in{i}"));
        std::fs::write(&p, payload)?;
        in_paths.push(p);
    }
    let out_paths: Vec<PathBuf> = (0..output_count)
        .map(|i| scratch.path().join(format!("out{i}")))
        .collect();

    let expand = |arg: &str| {
        let mut s = arg.to_string();
        for (i, p) in in_paths.iter().enumerate() {
            s = s.replace(&format!("{{in{i}}}"), &p.to_string_lossy());
        }
        for (i, p) in out_paths.iter().enumerate() {
            s = s.replace(&format!("{{out{i}}}"), &p.to_string_lossy());
        }
        for (name, value) in &state.params {
            s = s.replace(&format!("{{param:{name}}}"), &value.canonical());
        }
        s
    };
    let (program, rest) = argv.split_first().ok_or(ExecError::EmptyCommand)?;
    let stderr_path = scratch.path().join("stderr");
    let mut cmd = Command::new(expand(program));
    cmd.args(rest.iter().map(|a| expand(a)))
        .current_dir(working_dir.unwrap_or(scratch.path()))
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(std::fs::File::create(&stderr_path)?);
    let mut child = cmd.spawn()?;

    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ExecError::Timeout(timeout_ms));
        }
        std::thread::sleep(Duration::from_millis(2));
    };
    if !status.success() {
        let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(ExecError::NonZeroExit {
            status: status.to_string(),
            stderr: stderr.trim().to_string(),
        });
    }
    out_paths
        .iter()
        .enumerate()
        .map(|(i, p)| std::fs::read(p).map_err(|_| ExecError::MissingOutput(format!("out{i}"))))
        .collect()
}
