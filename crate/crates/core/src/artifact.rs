//! Artifact emission: CSV tables, JSON summaries and dependency-free SVG
//! plots. Every artifact embeds the run's config hash; writes go through
//! a temp file and an atomic rename.

use crate::error::Result;
use crate::grid::SpaceTimeField;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Hash of (canonical config text, seed); embedded in every artifact so
/// outputs can be traced back to their configuration.
pub fn config_hash(config_text: &str, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = String::new();
    for b in digest.iter().take(8) {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

pub struct ArtifactWriter {
    out_dir: PathBuf,
    pub hash: String,
}

impl ArtifactWriter {
    pub fn new(out_dir: &Path, hash: &str) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            hash: hash.to_string(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn write_atomic(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let tmp = self.out_dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// CSV with a `# config_hash=` comment line, a header row, and `{}`
    /// (shortest round-trip) float formatting for byte-stable output.
    pub fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf> {
        let mut text = format!("# config_hash={}\n{}\n", self.hash, header.join(","));
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_atomic(name, &text)
    }

    pub fn write_json(&self, name: &str, mut value: serde_json::Value) -> Result<PathBuf> {
        if let serde_json::Value::Object(map) = &mut value {
            map.insert(
                "config_hash".into(),
                serde_json::Value::String(self.hash.clone()),
            );
        }
        let text = serde_json::to_string_pretty(&value).expect("json serializes") + "\n";
        self.write_atomic(name, &text)
    }

    pub fn write_svg(&self, name: &str, svg: &str) -> Result<PathBuf> {
        self.write_atomic(name, svg)
    }

    /// Trajectory export: one row per stored time level, one column per
    /// space node.
    pub fn write_field_csv(&self, name: &str, field: &SpaceTimeField) -> Result<PathBuf> {
        let header: Vec<String> = (0..field.nx()).map(|j| format!("x{j}")).collect();
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let rows = (0..field.levels()).map(|k| {
            field
                .level(k)
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<String>>()
        });
        self.write_csv(name, &header_refs, rows)
    }
}

/// Minimal log-log scatter + fitted-slope annotation, emitted without
/// plotting dependencies.
pub fn loglog_plot_svg(
    points: &[(f64, f64)],
    slope: f64,
    hash: &str,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    let (w, h) = (640.0, 440.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let xs: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let px = |x: f64| ml + (x - xmin) / (xmax - xmin).max(1e-12) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - ymin) / (ymax - ymin).max(1e-12) * (h - mt - mb);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <!-- config_hash={hash} -->\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    );
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb,
        h - mb
    );
    // polyline through the data
    let mut path = String::new();
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        let _ = write!(
            path,
            "{}{:.2},{:.2}",
            if i == 0 { "M" } else { " L" },
            px(*x),
            py(*y)
        );
    }
    let _ = writeln!(
        svg,
        "<path d=\"{path}\" fill=\"none\" stroke=\"#2060c0\" stroke-width=\"1.5\"/>"
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            svg,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#2060c0\"/>",
            px(*x),
            py(*y)
        );
    }
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"9\" fill=\"#555\">1e{:.1},1e{:.1}</text>",
            px(*x) + 5.0,
            py(*y) - 5.0,
            x,
            y
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{y_label}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"13\" fill=\"#a02020\">fitted slope = {slope:.4}</text>\n</svg>\n",
        (ml + w - mr) / 2.0,
        h - 12.0,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        ml + 16.0,
        mt + 16.0
    );
    svg
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
