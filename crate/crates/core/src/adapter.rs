//! External-process and HTTP adapters for models that live outside this crate
//! (neural inpainters, perceptual metrics). Images cross the boundary as PNG.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Command,
    Http,
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub kind: AdapterKind,
    /// Program and arguments; `{name}` placeholders are replaced by file paths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

impl AdapterConfig {
    pub fn command<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        Self {
            kind: AdapterKind::Command,
            command: argv.into_iter().map(Into::into).collect(),
            url: None,
            timeout_s: default_timeout(),
        }
    }

    pub fn http(url: impl Into<String>) -> Self {
        Self {
            kind: AdapterKind::Http,
            command: Vec::new(),
            url: Some(url.into()),
            timeout_s: default_timeout(),
        }
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.timeout_s = seconds;
        self
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.0))
    }

    /// Short human-readable identity used in error messages.
    pub fn describe(&self) -> String {
        match self.kind {
            AdapterKind::Command => format!(
                "command `{}`",
                self.command.first().map(String::as_str).unwrap_or("<empty>")
            ),
            AdapterKind::Http => format!("http {}", self.url.as_deref().unwrap_or("<no url>")),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout_s must be positive (got {})", self.timeout_s));
        }
        match self.kind {
            AdapterKind::Command if self.command.is_empty() => Err("command adapter needs a non-empty `command`".into()),
            AdapterKind::Http if self.url.is_none() => Err("http adapter needs a `url`".into()),
            _ => Ok(()),
        }
    }
}

/// Output of a finished adapter command.
pub(crate) struct CommandOutput {
    pub stdout: String,
}

/// Run the command template with `{key}` placeholders replaced by paths.
pub(crate) fn run_command(config: &AdapterConfig, substitutions: &[(&str, &Path)]) -> Result<CommandOutput, String> {
    let argv: Vec<String> = config
        .command
        .iter()
        .map(|arg| {
            substitutions.iter().fold(arg.clone(), |acc, (key, path)| {
                acc.replace(&format!("{{{key}}}"), &path.to_string_lossy())
            })
        })
        .collect();
    let (program, args) = argv.split_first().ok_or("empty command")?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start `{program}`: {e}"))?;

    let drain = |mut pipe: Box<dyn Read + Send>| {
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = pipe.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        })
    };
    let stdout = drain(Box::new(child.stdout.take().expect("stdout piped")));
    let stderr = drain(Box::new(child.stderr.take().expect("stderr piped")));

    let deadline = Instant::now() + config.timeout();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("timed out after {} s", config.timeout_s));
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(format!("wait failed: {e}")),
        }
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    if !status.success() {
        let tail: String = stderr.trim().chars().rev().take(400).collect::<Vec<_>>().into_iter().rev().collect();
        return Err(format!("exited with {status}: {tail}"));
    }
    Ok(CommandOutput { stdout })
}

/// POST the named PNG parts as multipart/form-data and return the body.
pub(crate) fn post_multipart(config: &AdapterConfig, parts: Vec<(&'static str, Vec<u8>)>) -> Result<Vec<u8>, String> {
    let url = config.url.as_deref().ok_or("no url configured")?;
    let client = reqwest::blocking::Client::builder()
        .timeout(config.timeout())
        .build()
        .map_err(|e| format!("http client: {e}"))?;
    let mut form = reqwest::blocking::multipart::Form::new();
    for (name, bytes) in parts {
        let part = reqwest::blocking::multipart::Part::bytes(bytes)
            .file_name(format!("{name}.png"))
            .mime_str("image/png")
            .map_err(|e| e.to_string())?;
        form = form.part(name, part);
    }
    let response = client.post(url).multipart(form).send().map_err(|e| {
        if e.is_timeout() {
            format!("timed out after {} s", config.timeout_s)
        } else {
            format!("request failed: {e}")
        }
    })?;
    let status = response.status();
    let body = response.bytes().map_err(|e| format!("reading body: {e}"))?;
    if !status.is_success() {
        return Err(format!("status {status}: {}", String::from_utf8_lossy(&body[..body.len().min(400)])));
    }
    Ok(body.to_vec())
}
