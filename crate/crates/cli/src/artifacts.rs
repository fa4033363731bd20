//! Files written by a run and their digests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tauflow_core::series::{format_float, TimeSeries};

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under one directory and keeps an inventory of them.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactWriter {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// `series/<name>.csv` and `plots/<name>.svg`.
    pub fn write_series(&mut self, s: &TimeSeries) -> io::Result<String> {
        let csv = format!("series/{}.csv", s.name);
        self.write(&csv, s.to_csv().as_bytes())?;
        self.write(&format!("plots/{}.svg", s.name), svg_chart(s).as_bytes())?;
        Ok(csv)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Polyline chart of a series in a fixed 800×500 viewport. Non-finite
/// values break the line.
pub fn svg_chart(s: &TimeSeries) -> String {
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (SVG_WIDTH - left - right, SVG_HEIGHT - top - bottom);
    let finite: Vec<(f64, f64)> = s.points().iter().copied().filter(|p| p.1.is_finite()).collect();
    let (mut t0, mut t1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (t, v) in &finite {
        t0 = t0.min(*t);
        t1 = t1.max(*t);
        v0 = v0.min(*v);
        v1 = v1.max(*v);
    }
    if finite.is_empty() {
        (t0, t1, v0, v1) = (0.0, 1.0, 0.0, 1.0);
    }
    if t1 <= t0 {
        t1 = t0 + 1.0;
    }
    if v1 <= v0 {
        let pad = if v0 == 0.0 { 1.0 } else { 0.5 * v0.abs() };
        (v0, v1) = (v0 - pad, v1 + pad);
    }
    let x = |t: f64| left + (t - t0) / (t1 - t0) * pw;
    let y = |v: f64| top + (v1 - v) / (v1 - v0) * ph;

    let mut lines: Vec<Vec<String>> = vec![Vec::new()];
    for (t, v) in s.points() {
        if v.is_finite() {
            lines.last_mut().expect("non-empty").push(format!("{:.2},{:.2}", x(*t), y(*v)));
        } else if !lines.last().expect("non-empty").is_empty() {
            lines.push(Vec::new());
        }
    }
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = SVG_WIDTH,
        h = SVG_HEIGHT
    );
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += &format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{} [{}]</text>\n",
        SVG_WIDTH / 2.0,
        escape(&s.name),
        escape(&s.units)
    );
    out += &format!("<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>\n");
    let label = |x: f64, y: f64, anchor: &str, text: String| {
        format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{text}</text>\n"
        )
    };
    out += &label(left - 6.0, top + 4.0, "end", format!("{v1:.4e}"));
    out += &label(left - 6.0, top + ph + 4.0, "end", format!("{v0:.4e}"));
    out += &label(left, top + ph + 18.0, "start", format!("{t0:.4}"));
    out += &label(left + pw, top + ph + 18.0, "end", format!("{t1:.4}"));
    out += &label(left + pw / 2.0, SVG_HEIGHT - 12.0, "middle", "t".into());
    for line in lines.iter().filter(|l| !l.is_empty()) {
        out += &format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            line.join(" ")
        );
    }
    out += "</svg>\n";
    out
}

/// Reads a `t,value` CSV back into points.
pub fn read_csv(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("t,value") {
        return Err("missing `t,value` header".into());
    }
    lines
        .map(|l| {
            let (t, v) = l.split_once(',').ok_or_else(|| format!("malformed row `{l}`"))?;
            Ok((t.parse().map_err(|e| format!("{e} in `{l}`"))?, v.parse().map_err(|e| format!("{e} in `{l}`"))?))
        })
        .collect()
}

/// Float text used in printed summaries.
pub fn show(x: f64) -> String {
    format_float(x)
}
