//! Artifact emission: CSV or JSON tables and optional SVG line plots.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Writes named tables into one output directory.
pub struct Sink {
    dir: PathBuf,
    format: Format,
    svg: bool,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, format: Format, svg: bool) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Sink { dir: dir.to_path_buf(), format, svg, written: Vec::new() })
    }

    pub fn svg_enabled(&self) -> bool {
        self.svg
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Emit a table produced by a CSV writer, as `name.csv` or `name.json`.
    pub fn table<F>(&mut self, name: &str, write: F) -> std::io::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let (path, bytes) = match self.format {
            Format::Csv => (self.dir.join(format!("{name}.csv")), buf),
            Format::Json => (self.dir.join(format!("{name}.json")), csv_to_json(&buf)?),
        };
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    pub fn plot(&mut self, name: &str, plot: &LinePlot) -> std::io::Result<()> {
        if !self.svg {
            return Ok(());
        }
        let path = self.dir.join(format!("{name}.svg"));
        fs::write(&path, plot.render())?;
        self.written.push(path);
        Ok(())
    }
}

fn cell(s: &str) -> Value {
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => match s.parse::<f64>().ok().and_then(Number::from_f64) {
            Some(n) if !s.is_empty() => {
                // keep integers integral
                match s.parse::<i64>() {
                    Ok(i) => Value::Number(i.into()),
                    Err(_) => Value::Number(n),
                }
            }
            _ => Value::String(s.to_string()),
        },
    }
}

/// Array of row objects keyed by the header.
pub fn csv_to_json(bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header: Vec<String> = rdr.headers().map_err(std::io::Error::other)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(std::io::Error::other)?;
        let mut obj = Map::new();
        for (k, v) in header.iter().zip(rec.iter()) {
            obj.insert(k.clone(), cell(v));
        }
        rows.push(Value::Object(obj));
    }
    let mut out = serde_json::to_vec_pretty(&Value::Array(rows)).map_err(std::io::Error::other)?;
    out.push(b'\n');
    Ok(out)
}

/// Polylines on shared axes.
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    /// Draw points instead of connecting them.
    pub scatter: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        LinePlot { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new(), scatter: false }
    }

    pub fn series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push((label.into(), points));
        self
    }

    pub fn render(&self) -> String {
        let (w, h, m) = (640.0, 420.0, 60.0);
        let finite = self.series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in finite {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n\
             <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
             <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>\n\
             <text x=\"{m}\" y=\"{}\" text-anchor=\"middle\">{x0:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x1:.3}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.3e}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3e}</text>\n",
            w / 2.0,
            escape(&self.title),
            h - m,
            w - m,
            h - m,
            h - m,
            w / 2.0,
            h - 15.0,
            escape(&self.x_label),
            h / 2.0,
            h / 2.0,
            escape(&self.y_label),
            h - m + 15.0,
            w - m,
            h - m + 15.0,
            m - 4.0,
            h - m,
            m - 4.0,
            m + 4.0,
        );
        for (i, (label, pts)) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = pts.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
            if self.scatter {
                for (x, y) in &pts {
                    s += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1\" fill=\"{colour}\"/>\n", sx(*x), sy(*y));
                }
            } else {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
                s += &format!("<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1\" points=\"{}\"/>\n", path.join(" "));
            }
            s += &format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{}</text>\n",
                w - m + 5.0,
                m + 15.0 * i as f64,
                escape(label)
            );
        }
        s += "</svg>\n";
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
