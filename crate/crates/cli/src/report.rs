use std::fmt::Write;
use std::path::Path;

use serde_json::{json, Value};

/// Exit statuses.
pub const OK: u8 = 0;
pub const FINDINGS: u8 = 1;
pub const USAGE: u8 = 2;

/// A failure that prevents analysis: unreadable or malformed input, or a
/// request the core rejects.
#[derive(Debug)]
pub struct InputError(pub String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> InputError {
        InputError(e.to_string())
    }
}

/// A loaded input file and the name reports cite it by.
pub struct Input {
    pub name: String,
    pub text: String,
}

impl Input {
    pub fn read(path: &Path) -> Result<Input, InputError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        let name = layercheck_core::format::document_name(&text).unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string())
        });
        Ok(Input { name, text })
    }
}

pub struct Report {
    pub command: &'static str,
    /// `(role, name)` of each input, system first.
    pub inputs: Vec<(&'static str, String)>,
    pub findings: bool,
    /// Text output is the body alone, without the citing header.
    pub bare: bool,
    pub text: String,
    pub result: Value,
}

impl Report {
    pub fn new(command: &'static str, inputs: Vec<(&'static str, String)>) -> Report {
        Report {
            command,
            inputs,
            findings: false,
            bare: false,
            text: String::new(),
            result: Value::Null,
        }
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    pub fn render_text(&self) -> String {
        if self.bare {
            return self.text.clone();
        }
        let mut out = String::new();
        let cited: Vec<String> = self
            .inputs
            .iter()
            .map(|(r, n)| format!("{r} `{n}`"))
            .collect();
        let _ = writeln!(out, "{}: {}", self.command, cited.join(", "));
        out.push_str(&self.text);
        out
    }

    pub fn render_json(&self) -> String {
        let inputs: serde_json::Map<String, Value> = self
            .inputs
            .iter()
            .map(|(r, n)| (r.to_string(), Value::String(n.clone())))
            .collect();
        let v = json!({
            "command": self.command,
            "inputs": inputs,
            "findings": self.findings,
            "result": self.result,
        });
        serde_json::to_string_pretty(&v).expect("plain data")
    }
}
