//! Demonstration file format.
//!
//! Line-oriented text, one trajectory per record:
//!
//! ```text
//! # nfil-demos-v1
//! demo positive 1
//! 0 0.05 0.5
//! 0.02 0.071 0.53
//! ...
//! end
//! demo negative -1
//! 0.0167 0.12 0.5
//! ...
//! end
//! ```
//!
//! Record header is `demo <label> <weight>`; each row is `<phase> <x> <y> [z]`.
//! Floats are written in shortest round-trip form, so load(save(x)) == x.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DemoLabel, DemoSet, Demonstration, GmmError};

pub const DEMO_SCHEMA: &str = "# nfil-demos-v1";

pub fn demoset_to_string(demos: &DemoSet) -> String {
    let mut out = String::new();
    out.push_str(DEMO_SCHEMA);
    out.push('\n');
    for demo in demos.demos() {
        let label = match demo.label() {
            DemoLabel::Positive => "positive",
            DemoLabel::Negative => "negative",
        };
        writeln!(out, "demo {label} {}", demo.weight()).unwrap();
        for (phase, pos) in demo.samples() {
            write!(out, "{phase}").unwrap();
            for x in pos {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out.push_str("end\n");
    }
    out
}

pub fn demoset_from_str(text: &str) -> Result<DemoSet, GmmError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == DEMO_SCHEMA => {}
        other => {
            return Err(GmmError::Parse(format!(
                "expected schema line {DEMO_SCHEMA:?}, got {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    type OpenRecord = (DemoLabel, f64, Vec<(f64, Vec<f64>)>);
    let mut demos = Vec::new();
    let mut current: Option<OpenRecord> = None;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| GmmError::Parse(format!("line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("demo ") {
            if current.is_some() {
                return Err(err("unterminated record before new `demo`".into()));
            }
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(err(format!("bad record header {line:?}")));
            }
            let label = match fields[0] {
                "positive" => DemoLabel::Positive,
                "negative" => DemoLabel::Negative,
                other => return Err(err(format!("unknown label {other:?}"))),
            };
            let weight: f64 = fields[1]
                .parse()
                .map_err(|e| err(format!("bad weight: {e}")))?;
            current = Some((label, weight, Vec::new()));
        } else if line == "end" {
            let (label, weight, samples) = current
                .take()
                .ok_or_else(|| err("`end` without open record".into()))?;
            demos.push(Demonstration::new(samples, label, weight)?);
        } else {
            let record = current
                .as_mut()
                .ok_or_else(|| err("sample row outside a record".into()))?;
            let nums: Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| err(format!("bad row {line:?}: {e}")))?;
            if nums.len() != 3 && nums.len() != 4 {
                return Err(err(format!(
                    "row must be phase + 2 or 3 coordinates, got {} fields",
                    nums.len()
                )));
            }
            record.2.push((nums[0], nums[1..].to_vec()));
        }
    }
    if current.is_some() {
        return Err(GmmError::Parse("unterminated final record".into()));
    }
    DemoSet::new(demos)
}

pub fn save_demoset(demos: &DemoSet, path: &Path) -> std::io::Result<()> {
    fs::write(path, demoset_to_string(demos))
}

pub fn load_demoset(path: &Path) -> Result<DemoSet, GmmError> {
    let text = fs::read_to_string(path)
        .map_err(|e| GmmError::Parse(format!("read {}: {e}", path.display())))?;
    demoset_from_str(&text)
}
