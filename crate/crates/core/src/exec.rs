//! Runs a repository through install, launch, and test.
//!
//! Each phase is a subprocess in its own process group with a sanitized
//! environment. Output is captured tail-first up to a byte cap, and absolute
//! paths of the per-run directories are replaced by stable tokens so logs
//! from different runs compare equal.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bundle;

pub const WORKSPACE_TOKEN: &str = "<workspace>";
pub const SCRATCH_TOKEN: &str = "<scratch>";
pub const TOOLCHAIN_TOKEN: &str = "<toolchain>";

/// Extra time allowed past a phase timeout for killing and reaping.
pub const TIMEOUT_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Install,
    Launch,
    Test,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Install, Phase::Launch, Phase::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Install => "install",
            Phase::Launch => "launch",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkspacePolicy {
    InPlace,
    #[default]
    CopyToTemp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseTimeouts {
    pub install: u64,
    pub launch: u64,
    pub test: u64,
}

impl Default for PhaseTimeouts {
    fn default() -> Self {
        Self {
            install: 120,
            launch: 120,
            test: 120,
        }
    }
}

/// The validation setting. Command templates may use `{root}` (the
/// directory the repository runs in), `{scratch}` (a per-run directory
/// outside it), and `{toolchain}` (the bundled installer and store).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    pub install_cmd: Vec<String>,
    pub launch_cmd: Vec<String>,
    pub test_cmd: Vec<String>,
    pub enabled_phases: Vec<Phase>,
    /// Seconds per phase.
    pub timeout_secs: PhaseTimeouts,
    /// Variables copied from the parent environment when set.
    pub env_allowlist: Vec<String>,
    /// Variables set for every phase; values may use the placeholders.
    pub env: BTreeMap<String, String>,
    pub workspace_policy: WorkspacePolicy,
    /// Per-stream capture limit in bytes; the tail is kept.
    pub stream_cap_bytes: usize,
}

fn argv(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            install_cmd: argv(&[
                "python3",
                "{toolchain}/offline_install.py",
                "{toolchain}/store",
                "{scratch}/site",
                "{root}",
            ]),
            // -S hides the host's site-packages so only installed
            // declarations are importable.
            launch_cmd: argv(&["python3", "-S", "main.py"]),
            test_cmd: argv(&["python3", "-S", "-m", "unittest", "discover", "-s", "tests", "-t", "."]),
            enabled_phases: Phase::ALL.to_vec(),
            timeout_secs: PhaseTimeouts::default(),
            env_allowlist: argv(&["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "SYSTEMROOT"]),
            env: [
                ("PYTHONPATH", "{scratch}/site"),
                ("PYTHONDONTWRITEBYTECODE", "1"),
                ("PYTHONHASHSEED", "0"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
            workspace_policy: WorkspacePolicy::default(),
            stream_cap_bytes: 256 * 1024,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExecConfigError {
    #[error("timeout for {0} must be positive")]
    ZeroTimeout(&'static str),
    #[error("command for enabled phase {0} is empty")]
    EmptyCommand(&'static str),
    #[error("stream cap must be positive")]
    ZeroStreamCap,
}

impl ExecConfig {
    pub fn is_enabled(&self, phase: Phase) -> bool {
        self.enabled_phases.contains(&phase)
    }

    pub fn with_phases(mut self, phases: &[Phase]) -> Self {
        self.enabled_phases = phases.to_vec();
        self
    }

    pub fn command(&self, phase: Phase) -> &[String] {
        match phase {
            Phase::Install => &self.install_cmd,
            Phase::Launch => &self.launch_cmd,
            Phase::Test => &self.test_cmd,
        }
    }

    pub fn timeout(&self, phase: Phase) -> Duration {
        Duration::from_secs(match phase {
            Phase::Install => self.timeout_secs.install,
            Phase::Launch => self.timeout_secs.launch,
            Phase::Test => self.timeout_secs.test,
        })
    }

    pub fn validate(&self) -> Result<(), ExecConfigError> {
        for phase in Phase::ALL {
            if self.timeout(phase).is_zero() {
                return Err(ExecConfigError::ZeroTimeout(phase.as_str()));
            }
            if self.is_enabled(phase) && self.command(phase).is_empty() {
                return Err(ExecConfigError::EmptyCommand(phase.as_str()));
            }
        }
        if self.stream_cap_bytes == 0 {
            return Err(ExecConfigError::ZeroStreamCap);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExecutionLog {
    pub phase: Phase,
    /// The command template as configured.
    pub command: Vec<String>,
    /// Absent exactly when the phase timed out.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    /// Wall time; cleared before reports are written without timestamps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

impl RawExecutionLog {
    pub fn succeeded(&self) -> bool {
        self.exit_code == Some(0)
    }
}

/// Where one run executes. Dropping it removes any temporary directories.
#[derive(Debug)]
pub struct ExecSite {
    pub root: PathBuf,
    pub scratch: PathBuf,
    _temp: tempfile::TempDir,
}

impl ExecSite {
    pub fn prepare(workspace: &Path, policy: WorkspacePolicy) -> std::io::Result<Self> {
        let temp = tempfile::Builder::new().prefix("envalign-run-").tempdir()?;
        let scratch = temp.path().join("scratch");
        std::fs::create_dir_all(&scratch)?;
        let root = match policy {
            WorkspacePolicy::InPlace => workspace.to_path_buf(),
            WorkspacePolicy::CopyToTemp => {
                let dest = temp.path().join("repo");
                copy_tree(workspace, &dest)?;
                dest
            }
        };
        Ok(Self {
            root,
            scratch,
            _temp: temp,
        })
    }
}

const COPY_SKIP: &[&str] = &[".git", "__pycache__"];

fn copy_tree(src: &Path, dest: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dest)?;
    let walker = walkdir::WalkDir::new(src)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !COPY_SKIP.contains(&e.file_name().to_string_lossy().as_ref()));
    for entry in walker {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under src");
        if rel.as_os_str().is_empty() {
            continue;
        }
        let target = dest.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if ft.is_file() {
            std::fs::copy(entry.path(), &target)?;
        } else if ft.is_symlink() {
            let link = std::fs::read_link(entry.path())?;
            std::os::unix::fs::symlink(link, &target)?;
        }
    }
    Ok(())
}

struct Tokens {
    pairs: Vec<(String, &'static str)>,
}

impl Tokens {
    fn new(root: &Path, scratch: &Path, toolchain: Option<&Path>) -> Self {
        let mut pairs = Vec::new();
        let mut push = |p: &Path, token: &'static str| {
            pairs.push((p.to_string_lossy().into_owned(), token));
            if let Ok(c) = p.canonicalize() {
                pairs.push((c.to_string_lossy().into_owned(), token));
            }
        };
        push(root, WORKSPACE_TOKEN);
        push(scratch, SCRATCH_TOKEN);
        if let Some(t) = toolchain {
            push(t, TOOLCHAIN_TOKEN);
        }
        pairs.retain(|(p, _)| !p.is_empty());
        pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        pairs.dedup();
        Self { pairs }
    }

    fn redact(&self, text: &str) -> String {
        let mut out = text.to_string();
        for (path, token) in &self.pairs {
            out = out.replace(path.as_str(), token);
        }
        out
    }
}

fn expand(template: &str, root: &Path, scratch: &Path, toolchain: Option<&Path>) -> String {
    let mut s = template
        .replace("{root}", &root.to_string_lossy())
        .replace("{scratch}", &scratch.to_string_lossy());
    if let Some(t) = toolchain {
        s = s.replace("{toolchain}", &t.to_string_lossy());
    }
    s
}

struct Captured {
    text: String,
    truncated: bool,
}

fn capture<R: Read + Send + 'static>(mut reader: R, cap: usize) -> thread::JoinHandle<Captured> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        let mut dropped = false;
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    buf.extend_from_slice(&chunk[..n]);
                    if buf.len() > cap * 2 {
                        buf.drain(..buf.len() - cap);
                        dropped = true;
                    }
                }
            }
        }
        if buf.len() > cap {
            buf.drain(..buf.len() - cap);
            dropped = true;
        }
        Captured {
            text: String::from_utf8_lossy(&buf).into_owned(),
            truncated: dropped,
        }
    })
}

fn kill_group(pgid: u32) {
    // SAFETY: killpg has no memory-safety preconditions.
    unsafe {
        libc::killpg(pgid as libc::pid_t, libc::SIGKILL);
    }
}

/// Run one phase in an already prepared site.
pub fn run_phase_in(site: &ExecSite, phase: Phase, config: &ExecConfig) -> RawExecutionLog {
    let template = config.command(phase).to_vec();
    let toolchain = template
        .iter()
        .chain(config.env.values())
        .any(|s| s.contains("{toolchain}"))
        .then(bundle::toolchain_dir)
        .and_then(Result::ok);
    let toolchain = toolchain.as_deref();
    let tokens = Tokens::new(&site.root, &site.scratch, toolchain);
    let started = Instant::now();
    let finish = |exit_code: Option<i32>, stdout: Captured, stderr: Captured| RawExecutionLog {
        phase,
        command: template.clone(),
        exit_code,
        timed_out: exit_code.is_none(),
        stdout: tokens.redact(&stdout.text),
        stderr: tokens.redact(&stderr.text),
        stdout_truncated: stdout.truncated,
        stderr_truncated: stderr.truncated,
        duration_ms: Some(started.elapsed().as_millis() as u64),
    };
    let empty = || Captured {
        text: String::new(),
        truncated: false,
    };

    let Some((program, args)) = template.split_first() else {
        let err = Captured {
            text: format!("envalign: no command configured for {}\n", phase.as_str()),
            truncated: false,
        };
        return finish(Some(127), empty(), err);
    };
    let mut cmd = Command::new(expand(program, &site.root, &site.scratch, toolchain));
    cmd.args(args.iter().map(|a| expand(a, &site.root, &site.scratch, toolchain)))
        .current_dir(&site.root)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for name in &config.env_allowlist {
        if let Some(value) = std::env::var_os(name) {
            cmd.env(name, value);
        }
    }
    for (name, value) in &config.env {
        cmd.env(name, expand(value, &site.root, &site.scratch, toolchain));
    }

    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) => {
            let (code, what) = if e.kind() == std::io::ErrorKind::NotFound {
                (127, "command not found")
            } else {
                (126, "cannot execute")
            };
            let err = Captured {
                text: format!("envalign: {what}: {program}: {e}\n"),
                truncated: false,
            };
            return finish(Some(code), empty(), err);
        }
    };
    let pgid = child.id();
    let out = capture(child.stdout.take().expect("piped"), config.stream_cap_bytes);
    let err = capture(child.stderr.take().expect("piped"), config.stream_cap_bytes);

    let deadline = started + config.timeout(phase);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => break None,
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(_) => break None,
        }
    };
    // Stray descendants would otherwise keep the pipes open.
    kill_group(pgid);
    let exit_code = match status {
        Some(status) => Some(
            status
                .code()
                .unwrap_or_else(|| 128 + status.signal().unwrap_or(0)),
        ),
        None => {
            let _ = child.wait();
            None
        }
    };
    let stdout = out.join().unwrap_or_else(|_| empty());
    let stderr = err.join().unwrap_or_else(|_| empty());
    finish(exit_code, stdout, stderr)
}

/// Result of a helper subprocess fed JSON on standard input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessOutcome {
    /// Absent when the process timed out.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

/// Run `argv` with `input` on standard input, killing its process group
/// at `timeout`. Spawn failures are reported as exit 127.
pub fn run_with_input(argv: &[String], input: &[u8], cwd: &Path, timeout: Duration) -> ProcessOutcome {
    let Some((program, args)) = argv.split_first() else {
        return ProcessOutcome {
            exit_code: Some(127),
            stdout: String::new(),
            stderr: "envalign: empty command\n".into(),
        };
    };
    let mut child = match Command::new(program)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
    {
        Ok(child) => child,
        Err(e) => {
            return ProcessOutcome {
                exit_code: Some(127),
                stdout: String::new(),
                stderr: format!("envalign: cannot run {program}: {e}\n"),
            }
        }
    };
    let pgid = child.id();
    let mut stdin = child.stdin.take().expect("piped");
    let input = input.to_vec();
    let writer = thread::spawn(move || {
        use std::io::Write;
        let _ = stdin.write_all(&input);
    });
    let cap = 16 * 1024 * 1024;
    let out = capture(child.stdout.take().expect("piped"), cap);
    let err = capture(child.stderr.take().expect("piped"), cap);
    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => break None,
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(_) => break None,
        }
    };
    kill_group(pgid);
    if status.is_none() {
        let _ = child.wait();
    }
    let _ = writer.join();
    let read = |h: thread::JoinHandle<Captured>| h.join().map(|c| c.text).unwrap_or_default();
    ProcessOutcome {
        exit_code: status.map(|s| s.code().unwrap_or_else(|| 128 + s.signal().unwrap_or(0))),
        stdout: read(out),
        stderr: read(err),
    }
}

/// Run one phase against `workspace` under the configured policy.
pub fn run_phase(workspace: &Path, phase: Phase, config: &ExecConfig) -> std::io::Result<RawExecutionLog> {
    let site = ExecSite::prepare(workspace, config.workspace_policy)?;
    Ok(run_phase_in(&site, phase, config))
}

/// Run enabled phases in order, stopping after the first failure.
pub fn run_all(workspace: &Path, config: &ExecConfig) -> std::io::Result<Vec<RawExecutionLog>> {
    let site = ExecSite::prepare(workspace, config.workspace_policy)?;
    let mut logs = Vec::new();
    for phase in Phase::ALL {
        if !config.is_enabled(phase) {
            continue;
        }
        let log = run_phase_in(&site, phase, config);
        let ok = log.succeeded();
        logs.push(log);
        if !ok {
            break;
        }
    }
    Ok(logs)
}

/// True when every enabled phase ran and exited 0.
pub fn pass_exec(logs: &[RawExecutionLog], config: &ExecConfig) -> bool {
    Phase::ALL
        .iter()
        .filter(|p| config.is_enabled(**p))
        .all(|p| logs.iter().any(|l| l.phase == *p && l.succeeded()))
        && logs.iter().all(RawExecutionLog::succeeded)
}
