// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static SVG and CSV renderings of a [`RhythmProfile`]: an attention heatmap
//! and line panels for the per-token series with peak markers.
//!
//! Output is a pure function of its inputs. Coordinates are printed with two
//! decimals and colors come from a fixed viridis-like ramp.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::AttentionMap;
use crate::profile::RhythmProfile;

/// Largest heatmap side rendered; longer sequences are max-pooled.
pub const MAX_HEATMAP_CELLS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Panel {
    AttentionHeatmap,
    Waad,
    FaiGlobal,
    FaiReceiver,
    Entropy,
}

impl Panel {
    pub fn name(&self) -> &'static str {
        match self {
            Panel::AttentionHeatmap => "attention-heatmap",
            Panel::Waad => "waad",
            Panel::FaiGlobal => "fai-global",
            Panel::FaiReceiver => "fai-receiver",
            Panel::Entropy => "entropy",
        }
    }

    fn column(&self) -> &'static str {
        match self {
            Panel::AttentionHeatmap => "weight",
            Panel::Waad => "waad",
            Panel::FaiGlobal => "fai_global",
            Panel::FaiReceiver => "fai_receiver",
            Panel::Entropy => "entropy",
        }
    }
}

impl std::str::FromStr for Panel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Panel::AttentionHeatmap, Panel::Waad, Panel::FaiGlobal, Panel::FaiReceiver, Panel::Entropy]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown panel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotFormat {
    #[default]
    Svg,
    Csv,
}

impl std::str::FromStr for PlotFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svg" => Ok(PlotFormat::Svg),
            "csv" => Ok(PlotFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown plot format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub panels: Vec<Panel>,
    /// Response-local positions to mark, per line panel.
    pub highlight: BTreeMap<Panel, Vec<usize>>,
    pub format: PlotFormat,
}

impl PlotSpec {
    pub fn new(panels: Vec<Panel>, format: PlotFormat) -> Self {
        Self {
            panels,
            highlight: BTreeMap::new(),
            format,
        }
    }

    /// Marks each line panel with the profile's own peaks: WAAD peaks on the
    /// WAAD and entropy panels, FAI peaks on the FAI panels.
    pub fn with_profile_peaks(mut self, profile: &RhythmProfile) -> Self {
        for &panel in &self.panels {
            let peaks = match panel {
                Panel::Waad | Panel::Entropy => Some(profile.waad_peaks.clone()),
                Panel::FaiGlobal => Some(profile.fai_peaks.clone()),
                Panel::FaiReceiver => profile.receiver_peaks.clone(),
                Panel::AttentionHeatmap => None,
            };
            if let Some(p) = peaks {
                self.highlight.insert(panel, p);
            }
        }
        self
    }
}

fn series<'a>(profile: &'a RhythmProfile, panel: Panel) -> Result<&'a [f64]> {
    let missing = || Error::MissingPanelData(panel.name().to_string());
    match panel {
        Panel::Waad => Ok(&profile.waad),
        Panel::FaiGlobal => Ok(profile.fai_global_response()),
        Panel::FaiReceiver => profile.fai_receiver_response().ok_or_else(missing),
        Panel::Entropy => profile.entropy.as_deref().ok_or_else(missing),
        Panel::AttentionHeatmap => Err(missing()),
    }
}

/// Renders `spec` for `profile`. `heatmap` is the aggregated map shown by
/// the attention-heatmap panel.
pub fn emit_plot(profile: &RhythmProfile, heatmap: Option<&AttentionMap>, spec: &PlotSpec) -> Result<Vec<u8>> {
    if spec.panels.is_empty() {
        return Err(Error::InvalidConfig("at least one panel is required".into()));
    }
    if spec.panels.contains(&Panel::AttentionHeatmap) && heatmap.is_none() {
        return Err(Error::MissingPanelData(Panel::AttentionHeatmap.name().into()));
    }
    for &p in &spec.panels {
        if p != Panel::AttentionHeatmap {
            series(profile, p)?;
        }
    }
    for (p, marks) in &spec.highlight {
        if let Some(&bad) = marks.iter().find(|&&m| m >= profile.response_len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} marker at {bad} outside {} response positions",
                p.name(),
                profile.response_len()
            )));
        }
    }
    match spec.format {
        PlotFormat::Svg => Ok(svg(profile, heatmap, spec).into_bytes()),
        PlotFormat::Csv => csv_doc(profile, heatmap, spec).map(String::into_bytes),
    }
}

fn csv_doc(profile: &RhythmProfile, heatmap: Option<&AttentionMap>, spec: &PlotSpec) -> Result<String> {
    let has_heatmap = spec.panels.contains(&Panel::AttentionHeatmap);
    let mut out = String::new();
    if has_heatmap {
        if spec.panels.len() > 1 {
            return Err(Error::InvalidConfig(
                "csv output holds either the heatmap or line panels, not both".into(),
            ));
        }
        let map = heatmap.expect("checked above");
        out.push_str("row,col,weight\n");
        for t in 0..map.size() {
            for s in 0..=t {
                let _ = writeln!(out, "{t},{s},{}", map.get(t, s));
            }
        }
        return Ok(out);
    }
    let mut panels = spec.panels.clone();
    panels.dedup();
    out.push_str("pos");
    for p in &panels {
        out.push(',');
        out.push_str(p.column());
    }
    out.push('\n');
    let cols: Vec<&[f64]> = panels.iter().map(|&p| series(profile, p)).collect::<Result<_>>()?;
    for pos in 0..profile.response_len() {
        let _ = write!(out, "{pos}");
        for c in &cols {
            let _ = write!(out, ",{}", c[pos]);
        }
        out.push('\n');
    }
    Ok(out)
}

const WIDTH: f64 = 800.0;
const LINE_HEIGHT: f64 = 160.0;
const MARGIN: f64 = 40.0;
const GAP: f64 = 30.0;

/// Viridis control points, interpolated linearly in RGB.
const RAMP: [(u8, u8, u8); 9] = [
    (68, 1, 84),
    (71, 44, 122),
    (59, 81, 139),
    (44, 113, 142),
    (33, 144, 141),
    (39, 173, 129),
    (92, 200, 99),
    (170, 220, 50),
    (253, 231, 37),
];

/// Ramp color for `v` in `[0, 1]`.
pub fn ramp_color(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let x = v * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Max-pools `map` into blocks of `factor x factor`. Returns the pooled
/// side length and row-major cells.
pub fn max_pool(map: &AttentionMap, factor: usize) -> (usize, Vec<f64>) {
    let n = map.size();
    let m = n.div_ceil(factor);
    let mut cells = vec![0.0f64; m * m];
    for t in 0..n {
        for s in 0..=t {
            let c = &mut cells[(t / factor) * m + s / factor];
            *c = c.max(map.get(t, s));
        }
    }
    (m, cells)
}

pub fn pool_factor(n: usize) -> usize {
    n.div_ceil(MAX_HEATMAP_CELLS).max(1)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg(profile: &RhythmProfile, heatmap: Option<&AttentionMap>, spec: &PlotSpec) -> String {
    let inner = WIDTH - 2.0 * MARGIN;
    let heights: Vec<f64> = spec
        .panels
        .iter()
        .map(|p| if *p == Panel::AttentionHeatmap { inner } else { LINE_HEIGHT })
        .collect();
    let total_h = MARGIN * 2.0 + heights.iter().sum::<f64>() + GAP * (heights.len() - 1) as f64;
    let factor = heatmap.map(|m| pool_factor(m.size())).unwrap_or(1);

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.2}" height="{total_h:.2}" viewBox="0 0 {WIDTH:.2} {total_h:.2}" data-trace="{}">"#,
        esc(&profile.trace_id)
    );
    let panel_names: Vec<&str> = spec.panels.iter().map(Panel::name).collect();
    let _ = writeln!(
        out,
        r#"<metadata>{{"trace_id":"{}","panels":"{}","response_start":{},"pool_factor":{factor}}}</metadata>"#,
        esc(&profile.trace_id),
        panel_names.join(","),
        profile.response_start
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    let mut y = MARGIN;
    for (panel, h) in spec.panels.iter().zip(&heights) {
        let _ = writeln!(
            out,
            r#"<g class="panel" data-panel="{}" transform="translate({MARGIN:.2},{y:.2})">"#,
            panel.name()
        );
        let _ = writeln!(out, r#"<text x="0.00" y="-6.00" font-size="12" font-family="sans-serif">{}</text>"#, panel.name());
        match panel {
            Panel::AttentionHeatmap => heatmap_panel(&mut out, heatmap.expect("checked"), factor, inner),
            _ => {
                let values = series(profile, *panel).expect("checked");
                let marks = spec.highlight.get(panel).map(Vec::as_slice).unwrap_or(&[]);
                line_panel(&mut out, values, marks, inner, *h);
            }
        }
        out.push_str("</g>\n");
        y += h + GAP;
    }
    out.push_str("</svg>\n");
    out
}

fn heatmap_panel(out: &mut String, map: &AttentionMap, factor: usize, side: f64) {
    let (m, cells) = max_pool(map, factor);
    let top = cells.iter().copied().fold(0.0f64, f64::max);
    let cell = side / m as f64;
    let _ = writeln!(
        out,
        r#"<rect class="frame" x="0.00" y="0.00" width="{side:.2}" height="{side:.2}" fill="{}"/>"#,
        ramp_color(0.0)
    );
    for r in 0..m {
        for c in 0..=r {
            let v = cells[r * m + c];
            if v <= 0.0 {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"/>"#,
                c as f64 * cell,
                r as f64 * cell,
                ramp_color(if top > 0.0 { v / top } else { 0.0 })
            );
        }
    }
}

fn line_panel(out: &mut String, values: &[f64], marks: &[usize], width: f64, height: f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let step = if values.len() > 1 { width / (values.len() - 1) as f64 } else { 0.0 };
    let px = |i: usize| i as f64 * step;
    let py = |v: f64| height - (v - lo) / (hi - lo) * height;

    let _ = writeln!(
        out,
        "<rect class=\"frame\" x=\"0.00\" y=\"0.00\" width=\"{width:.2}\" height=\"{height:.2}\" fill=\"none\" stroke=\"#999999\"/>"
    );
    let _ = writeln!(
        out,
        r#"<text x="-4.00" y="10.00" font-size="10" text-anchor="end" font-family="sans-serif">{hi:.3}</text>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="-4.00" y="{height:.2}" font-size="10" text-anchor="end" font-family="sans-serif">{lo:.3}</text>"#
    );
    let points: Vec<String> = values.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v))).collect();
    let _ = writeln!(
        out,
        "<polyline class=\"series\" fill=\"none\" stroke=\"#2c728e\" stroke-width=\"1.50\" points=\"{}\"/>",
        points.join(" ")
    );
    for &m in marks {
        let _ = writeln!(
            out,
            "<circle class=\"peak\" data-pos=\"{m}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.00\" fill=\"#fde725\" stroke=\"#440154\"/>",
            px(m),
            py(values[m])
        );
    }
}
