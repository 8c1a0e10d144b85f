use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{CliError, Format, GlobalArgs};

/// Writes a finished report in the requested format.
pub struct Emitter {
    out: String,
    format: Format,
    no_timing: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    report: &'a T,
}

impl Emitter {
    pub fn new(g: &GlobalArgs) -> Self {
        Self { out: g.out.clone(), format: g.format, no_timing: g.no_timing }
    }

    /// Stamp the manifest and write either the JSON document or the text
    /// rendering produced by `table`.
    pub fn emit<T: Serialize>(
        &self,
        manifest: &mut RunManifest,
        report: &T,
        started: Instant,
        threads: usize,
        table: impl FnOnce() -> String,
    ) -> Result<(), CliError> {
        manifest.finish(started, threads, self.no_timing);
        let text = match self.format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&Envelope { manifest, report })
                    .map_err(|e| CliError::Run(format!("cannot serialize report: {e}")))?;
                s.push('\n');
                s
            }
            Format::Table => table(),
        };
        if self.out == "-" {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush())
        } else {
            std::fs::write(&self.out, text.as_bytes())
        }
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", self.out)))
    }
}
