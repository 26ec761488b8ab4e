//! Flat CSV series for external plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use gripforge_core::refiner::WindowReport;
use gripforge_core::scenario::read_contacts;
use gripforge_core::Vec3;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// Optimizer trace lines.
    Trace,
    /// Window reports.
    Windows,
    /// Contact CSV.
    Contacts,
}

impl InputKind {
    pub fn detect(path: &Path) -> InputKind {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with(".csv") {
            InputKind::Contacts
        } else if name.ends_with(".windows.jsonl") {
            InputKind::Windows
        } else {
            InputKind::Trace
        }
    }
}

#[derive(Deserialize)]
struct TraceLine {
    best: f64,
}

fn json_lines<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

/// Generation counter runs on across windows.
pub fn trace_series(text: &str, path: &Path) -> Result<String> {
    let mut out = String::from("generation,best\n");
    for (i, line) in json_lines::<TraceLine>(text, path)?.iter().enumerate() {
        writeln!(out, "{i},{}", line.best)?;
    }
    Ok(out)
}

pub fn window_series(text: &str, path: &Path) -> Result<String> {
    let mut out = String::from("window,free_frame,incumbent,best,evaluations\n");
    for r in json_lines::<WindowReport>(text, path)? {
        writeln!(out, "{},{},{},{},{}", r.index, r.free_frame, r.incumbent_fitness, r.best_fitness, r.evaluations)?;
    }
    Ok(out)
}

/// Net contact force on the object per frame.
pub fn contact_series(path: &Path) -> Result<String> {
    let mut frames: BTreeMap<usize, Vec3> = BTreeMap::new();
    for r in read_contacts(path)? {
        *frames.entry(r.frame).or_insert_with(Vec3::zeros) += r.force;
    }
    let mut out = String::from("frame,fx,fy,fz,magnitude\n");
    for (frame, f) in frames {
        writeln!(out, "{frame},{},{},{},{}", f.x, f.y, f.z, f.norm())?;
    }
    Ok(out)
}

pub fn convert(input: &Path, kind: InputKind) -> Result<String> {
    if kind == InputKind::Contacts {
        return contact_series(input);
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    match kind {
        InputKind::Trace => trace_series(&text, input),
        _ => window_series(&text, input),
    }
}
