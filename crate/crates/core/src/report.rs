//! JSON reports, run manifests and dependency-free SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::checkpoint::hash_hex;
use crate::error::{Error, Result};
use crate::experiments::CriterionResult;

/// Pretty JSON with a trailing newline. Field order follows struct declaration order
/// and maps are key-sorted, so output is stable across runs.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `value` as JSON and returns the FNV-1a hash of the bytes written.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let text = to_json(value)?;
    std::fs::write(path, &text)?;
    Ok(hash_hex(text.as_bytes()))
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    /// Effective configuration with all defaults filled in.
    pub config: serde_json::Value,
    /// Input file name to FNV-1a hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to FNV-1a hash.
    pub outputs: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    pub criteria: Vec<CriterionResult>,
    pub passed: bool,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            threads,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: now_rfc3339(),
            finished: String::new(),
            criteria: Vec::new(),
            passed: true,
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(name.into(), hash_hex(&bytes));
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.into(), hash_hex(bytes));
        Ok(())
    }

    pub fn record(&mut self, criteria: &[CriterionResult]) {
        for c in criteria {
            self.passed &= c.passed;
            self.criteria.push(c.clone());
        }
    }

    /// Stamps the finish time and writes `dir/run.json`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished = now_rfc3339();
        write_json(&dir.join("run.json"), &self)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a polyline.
    pub markers: bool,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            markers: false,
        }
    }

    pub fn scatter(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            markers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    // flat data gets a symmetric pad so it plots as a centred horizontal line
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    /// Finite points after the y transform; log plots drop nonpositive values.
    fn transformed(&self, s: &Series) -> Vec<(f64, f64)> {
        s.points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_y || *y > 0.0))
            .map(|&(x, y)| (x, if self.log_y { y.log10() } else { y }))
            .collect()
    }

    pub fn to_svg(&self) -> String {
        let data: Vec<Vec<(f64, f64)>> = self.series.iter().map(|s| self.transformed(s)).collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
            escape_xml(&self.title)
        );
        let (pw, ph) = (WIDTH - MARGIN_L - MARGIN_R, HEIGHT - MARGIN_T - MARGIN_B);
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let xr = range(data.iter().flatten().map(|p| p.0));
        let yr = range(data.iter().flatten().map(|p| p.1));
        let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) else {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
                MARGIN_L + pw / 2.0,
                MARGIN_T + ph / 2.0
            );
            out.push_str("</svg>\n");
            return out;
        };
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let ylab = if self.log_y { format!("{:.1e}", 10f64.powf(yv)) } else { tick_label(yv) };
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                MARGIN_T + ph + 16.0,
                tick_label(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN_L - 6.0,
                sy(yv) + 4.0,
                ylab
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 12.0,
            escape_xml(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape_xml(&self.y_label)
        );

        for (k, (s, pts)) in self.series.iter().zip(&data).enumerate() {
            let color = COLORS[k % COLORS.len()];
            if s.markers {
                for &(x, y) in pts {
                    let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
                }
            } else if !pts.is_empty() {
                let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    coords.join(" ")
                );
            }
            let ly = MARGIN_T + 14.0 + 18.0 * k as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0
            );
            let _ = writeln!(out, r#"<text x="{}" y="{ly:.2}">{}</text>"#, lx + 24.0, escape_xml(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Checks that a JSON document re-emits to the same bytes.
pub fn round_trips<T: Serialize + DeserializeOwned>(text: &str) -> Result<bool> {
    let parsed: T = from_json(text)?;
    Ok(to_json(&parsed)? == text)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Format(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentReport;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter_map(|l| l.split("points=\"").nth(1))
            .map(|rest| {
                rest.split('"')
                    .next()
                    .unwrap()
                    .split(' ')
                    .map(|p| {
                        let (a, b) = p.split_once(',').unwrap();
                        (a.parse().unwrap(), b.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_horizontal() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.5)).collect();
        for plot in [LinePlot::new("c", "t", "y"), LinePlot::new("c", "t", "y").log_y()] {
            let svg = plot.with(Series::line("flat", pts.clone())).to_svg();
            let lines = polylines(&svg);
            assert_eq!(lines.len(), 1);
            assert_eq!(lines[0].len(), 10);
            assert!(lines[0].iter().all(|p| p.1 == lines[0][0].1));
        }
    }

    #[test]
    fn empty_plot_is_valid_svg() {
        let svg = LinePlot::new("e", "x", "y").log_y().with(Series::line("none", vec![(1.0, 0.0)])).to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("no data"));
    }

    #[test]
    fn empty_report_round_trips() {
        let rep = ExperimentReport::new("stability");
        let text = to_json(&rep).unwrap();
        assert!(round_trips::<ExperimentReport>(&text).unwrap());
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["runs"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn report_field_order_is_stable() {
        let mut rep = ExperimentReport::new("hadamard");
        rep.lambda = Some(0.49);
        rep.fits.insert("zeta".into(), 1.0);
        rep.fits.insert("alpha".into(), 0.1 + 0.2);
        let text = to_json(&rep).unwrap();
        let order = ["\"experiment\"", "\"tool_version\"", "\"lambda\"", "\"runs\"", "\"fits\"", "\"alpha\"", "\"zeta\"", "\"criteria\""];
        let pos: Vec<usize> = order.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(round_trips::<ExperimentReport>(&text).unwrap());
    }

    #[test]
    fn manifest_hashes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("test", 3, 1, serde_json::json!({"a": 1}));
        m.write_output(dir.path(), "x.txt", b"hello").unwrap();
        let m = m.finish(dir.path()).unwrap();
        assert_eq!(m.outputs["x.txt"], hash_hex(b"hello"));
        let text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
        assert!(round_trips::<RunManifest>(&text).unwrap());
    }
}
