//! SVG rendering of masking curves and similarity heatmaps, plus the
//! run manifest written alongside every experiment's outputs.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::occlusion::{ComparisonBin, ComparisonRecord};
use crate::stats::SimilarityMatrix;

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const BIN_COLORS: [(&str, ComparisonBin); 5] = [
    ("#1f77b4", ComparisonBin::SameInit),
    ("#ff7f0e", ComparisonBin::SameTrainTaskDiffInit),
    ("#2ca02c", ComparisonBin::SamePretrainDiffTask),
    ("#d62728", ComparisonBin::DiffPretrainSameTask),
    ("#9467bd", ComparisonBin::DiffPretrainDiffTask),
];

fn color_of(bin: ComparisonBin) -> &'static str {
    BIN_COLORS.iter().find(|&&(_, b)| b == bin).unwrap().0
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn x_at(p: f64) -> f64 {
    MARGIN_L + p / 100.0 * (CHART_W - MARGIN_L - MARGIN_R)
}

fn y_at(acc: f64) -> f64 {
    MARGIN_T + (1.0 - acc) * (CHART_H - MARGIN_T - MARGIN_B)
}

/// One line chart per destination model: mean accuracy per bin vs masking
/// percentile. Returns the SVG document as a string.
pub fn masking_curve_svg(title: &str, records: &[ComparisonRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to chart".into()));
    }
    let percentiles: Vec<f64> = records[0].curve.points.iter().map(|&(p, _)| p).collect();
    // Mean accuracy per (bin, percentile).
    let mut sums: BTreeMap<&'static str, (ComparisonBin, Vec<f64>, usize)> = BTreeMap::new();
    for rec in records {
        let entry = sums
            .entry(rec.bin.label())
            .or_insert_with(|| (rec.bin, vec![0.0; percentiles.len()], 0));
        for (i, &(_, acc)) in rec.curve.points.iter().enumerate() {
            entry.1[i] += acc;
        }
        entry.2 += 1;
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + CHART_W - MARGIN_R) / 2.0,
        xml_escape(title)
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_L,
        y_at(0.0),
        x_at(100.0),
        y_at(0.0)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        MARGIN_L,
        y_at(0.0),
        MARGIN_L,
        y_at(1.0)
    ));
    for tick in [0.0f64, 25.0, 50.0, 75.0, 100.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x_at(tick),
            y_at(0.0) + 16.0,
            tick
        ));
    }
    for tick in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            y_at(tick) + 4.0,
            tick
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">masked pixels (%)</text>\n",
        (MARGIN_L + CHART_W - MARGIN_R) / 2.0,
        CHART_H - 10.0
    ));

    let mut legend_y = MARGIN_T + 10.0;
    for (label, (bin, sum, count)) in &sums {
        let color = color_of(*bin);
        let pts: Vec<String> = percentiles
            .iter()
            .zip(sum)
            .map(|(&p, &s)| format!("{},{}", x_at(p), y_at(s / *count as f64)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let lx = CHART_W - MARGIN_R + 12.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{legend_y}\" x2=\"{}\" y2=\"{legend_y}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            lx + 18.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 24.0,
            legend_y + 4.0,
            xml_escape(label)
        ));
        legend_y += 18.0;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Similarity matrix rendered as a labeled heatmap; blue (-1) through white
/// (0) to red (+1).
pub fn similarity_heatmap_svg(title: &str, matrix: &SimilarityMatrix) -> Result<String> {
    let n = matrix.model_ids.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty similarity matrix".into()));
    }
    let cell = 36.0f64;
    let label_w = 140.0f64;
    let top = 60.0f64;
    let w = label_w + cell * n as f64 + 20.0;
    let h = top + cell * n as f64 + 20.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    ));
    for (i, id) in matrix.model_ids.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            label_w - 6.0,
            top + cell * (i as f64 + 0.5) + 3.0,
            xml_escape(id)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"start\" transform=\"rotate(-60 {} {})\">{}</text>\n",
            label_w + cell * (i as f64 + 0.5),
            top - 6.0,
            label_w + cell * (i as f64 + 0.5),
            top - 6.0,
            xml_escape(id)
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let v = matrix.values[i * n + j].clamp(-1.0, 1.0);
            let (r, g, b) = if v >= 0.0 {
                let t = 1.0 - v;
                (255, (255.0 * t) as u8, (255.0 * t) as u8)
            } else {
                let t = 1.0 + v;
                ((255.0 * t) as u8, (255.0 * t) as u8, 255)
            };
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({r},{g},{b})\" stroke=\"#ccc\"/>\n",
                label_w + cell * j as f64,
                top + cell * i as f64
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{:.2}</text>\n",
                label_w + cell * (j as f64 + 0.5),
                top + cell * (i as f64 + 0.5) + 3.0,
                v
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Everything needed to reproduce a run: the command line, the resolved
/// configuration, seeds, and SHA-256 digests of every input file read.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            config,
            input_digests: BTreeMap::new(),
        }
    }

    /// Records the digest of an input file, keyed by the path as given.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.input_digests
            .insert(path.display().to_string(), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}
