//! Fixation heatmaps: token sequences colored by one or more duration
//! tracks, rendered to a self-contained HTML file or 256-color terminal
//! text. Rendering is pure — the same document always produces the same
//! bytes.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

/// How raw track values map to color intensity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescale {
    /// Linear min-max scaling.
    Raw,
    /// Rank-based scaling: robust to the heavy right tail of human
    /// fixation durations.
    Rank,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Track {
    pub name: String,
    pub values: Vec<f64>,
    pub rescale: Rescale,
}

/// One heatmap: a token sequence plus aligned duration tracks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatmapDoc {
    pub tokens: Vec<String>,
    pub tracks: Vec<Track>,
    #[serde(default)]
    pub caption: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Html,
    Ansi,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "html" => Ok(Format::Html),
            "ansi" => Ok(Format::Ansi),
            other => bail!("unknown heatmap format '{other}' (use html or ansi)"),
        }
    }
}

fn validate(doc: &HeatmapDoc) -> Result<()> {
    if doc.tokens.is_empty() {
        bail!("heatmap document has no tokens");
    }
    for track in &doc.tracks {
        if track.values.len() != doc.tokens.len() {
            bail!(
                "track '{}' has {} values for {} tokens",
                track.name,
                track.values.len(),
                doc.tokens.len()
            );
        }
        if track.values.iter().any(|v| !v.is_finite()) {
            bail!("track '{}' contains non-finite values", track.name);
        }
    }
    Ok(())
}

/// Per-token intensities in `[0, 1]`.
fn intensities(track: &Track) -> Vec<f64> {
    let n = track.values.len();
    match track.rescale {
        Rescale::Raw => {
            let min = track.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = track.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                return vec![0.5; n];
            }
            track.values.iter().map(|v| (v - min) / (max - min)).collect()
        }
        Rescale::Rank => {
            if n == 1 {
                return vec![0.5];
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                track.values[a]
                    .partial_cmp(&track.values[b])
                    .expect("finite values")
            });
            let mut rank = vec![0usize; n];
            for (r, &idx) in order.iter().enumerate() {
                // Ties share the rank of the first equal value.
                rank[idx] = if r > 0 && track.values[idx] == track.values[order[r - 1]] {
                    rank[order[r - 1]]
                } else {
                    r
                };
            }
            rank.iter().map(|&r| r as f64 / (n - 1) as f64).collect()
        }
    }
}

/// White-to-red ramp level in `0..=175` (subtracted from G and B).
fn ramp_level(q: f64) -> u8 {
    (q * 175.0).round() as u8
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render(doc: &HeatmapDoc, format: Format) -> Result<String> {
    validate(doc)?;
    Ok(match format {
        Format::Html => render_html(doc),
        Format::Ansi => render_ansi(doc),
    })
}

fn render_html(doc: &HeatmapDoc) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    out.push_str("<title>fixation heatmap</title>\n</head>\n");
    out.push_str("<body style=\"font-family: monospace; background: #ffffff; color: #000000;\">\n");
    if !doc.caption.is_empty() {
        out.push_str(&format!(
            "<p style=\"font-style: italic;\">{}</p>\n",
            escape_html(&doc.caption)
        ));
    }
    for track in &doc.tracks {
        out.push_str("<div style=\"margin: 6px 0;\">\n");
        out.push_str(&format!(
            "<span style=\"display: inline-block; width: 10em; font-weight: bold;\">{}</span>",
            escape_html(&track.name)
        ));
        for (token, q) in doc.tokens.iter().zip(intensities(track)) {
            let level = ramp_level(q);
            let gb = 255 - level as u16;
            out.push_str(&format!(
                "<span style=\"background: rgb(255,{gb},{gb}); padding: 1px 3px; margin: 1px; display: inline-block;\">{}</span>",
                escape_html(token)
            ));
        }
        out.push_str("\n</div>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

fn render_ansi(doc: &HeatmapDoc) -> String {
    let mut out = String::new();
    if !doc.caption.is_empty() {
        out.push_str(&doc.caption);
        out.push('\n');
    }
    for track in &doc.tracks {
        out.push_str(&format!("{:>16} ", track.name));
        for (token, q) in doc.tokens.iter().zip(intensities(track)) {
            // 6x6x6 color cube: hold red at full, fade green/blue.
            let fade = 5 - (q * 5.0).round() as u8;
            let color = 16 + 36 * 5 + 6 * fade as u16 + fade as u16;
            out.push_str(&format!("\x1b[48;5;{color}m\x1b[30m {token} \x1b[0m"));
        }
        out.push('\n');
    }
    out
}

pub fn load_docs(path: &std::path::Path) -> Result<Vec<HeatmapDoc>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut docs = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(serde_json::from_str(&line)?);
    }
    if docs.is_empty() {
        bail!("{}: no heatmap documents", path.display());
    }
    Ok(docs)
}

pub fn save_docs(path: &std::path::Path, docs: &[HeatmapDoc]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
