use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Flags that change how a run executes or where it writes, but never what
/// it computes. They are left out of the echoed command line so that
/// reports from the same computation compare equal.
const EXECUTION_FLAGS: [(&str, bool); 5] =
    [("--threads", true), ("--serial", false), ("--no-timing", false), ("--quiet", false), ("--out", true)];

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

/// Provenance attached to every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub program: &'static str,
    pub version: &'static str,
    /// Arguments with execution-only flags removed.
    pub command_line: Vec<String>,
    pub seed: Option<u64>,
    /// `sha256:<hex>` of the input file.
    pub input_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunManifest {
    pub fn new(argv: &[String]) -> Self {
        Self {
            program: "drm-monitor",
            version: env!("CARGO_PKG_VERSION"),
            command_line: canonical_args(argv),
            seed: None,
            input_digest: None,
            timing: None,
        }
    }

    pub fn record_input(&mut self, bytes: &[u8]) {
        self.input_digest = Some(format!("sha256:{}", hex::encode(Sha256::digest(bytes))));
    }

    pub fn finish(&mut self, started: Instant, threads: usize, no_timing: bool) {
        self.timing = (!no_timing).then(|| Timing { wall_clock_seconds: started.elapsed().as_secs_f64(), threads });
    }
}

fn canonical_args(argv: &[String]) -> Vec<String> {
    let mut out = vec!["drm-monitor".to_string()];
    let mut it = argv.iter().skip(1);
    while let Some(arg) = it.next() {
        let name = arg.split_once('=').map_or(arg.as_str(), |(n, _)| n);
        match EXECUTION_FLAGS.iter().find(|(flag, _)| *flag == name) {
            Some((_, takes_value)) => {
                if *takes_value && !arg.contains('=') {
                    it.next();
                }
            }
            None => out.push(arg.clone()),
        }
    }
    out
}
