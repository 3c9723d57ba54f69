//! Signal CSV: a `# fps=<float>` header line followed by one sample per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::BvpSignal;
use crate::error::{Error, Result};

pub fn format_signal(signal: &BvpSignal) -> String {
    let mut out = String::with_capacity(16 * (signal.len() + 1));
    let _ = writeln!(out, "# fps={}", signal.fps());
    for v in signal.samples() {
        // Shortest representation that round-trips exactly.
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_signal(text: &str) -> Result<BvpSignal> {
    let mut lines = text.lines().enumerate();
    let fps = loop {
        match lines.next() {
            None => return Err(Error::format("missing `# fps=` header")),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => {
                let body = l
                    .trim()
                    .strip_prefix('#')
                    .map(str::trim)
                    .and_then(|s| s.strip_prefix("fps="))
                    .ok_or_else(|| Error::format(format!("missing `# fps=` header, got {l:?}")))?;
                let fps: f64 = body
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("bad fps value {body:?}")))?;
                if !(fps.is_finite() && fps > 0.0) {
                    return Err(Error::format(format!("fps must be > 0, got {fps}")));
                }
                break fps;
            }
        }
    };
    let mut samples = Vec::new();
    for (i, line) in lines {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::format(format!("line {}: malformed sample {s:?}", i + 1)))?;
        if !v.is_finite() {
            return Err(Error::format(format!("line {}: non-finite sample", i + 1)));
        }
        samples.push(v);
    }
    BvpSignal::new(samples, fps)
}

pub fn write_signal(path: &Path, signal: &BvpSignal) -> Result<()> {
    std::fs::write(path, format_signal(signal))?;
    Ok(())
}

pub fn read_signal(path: &Path) -> Result<BvpSignal> {
    parse_signal(&std::fs::read_to_string(path)?)
}
