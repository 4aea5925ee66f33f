use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use plotters::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Whole-model inference latency over `K`, one curve per model.
    Latency,
    /// Single-layer latency over `K`.
    LayerLatency,
    /// BLEU over SNR, one curve per variant.
    Bleu,
    /// Scan latency over sequence length, one curve per implementation.
    Scan,
}

struct Layout {
    table: &'static str,
    series: &'static str,
    x: &'static str,
    y: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    log: bool,
}

impl PlotKind {
    fn layout(&self) -> Layout {
        match self {
            PlotKind::Latency => Layout {
                table: "latency.csv",
                series: "model",
                x: "K",
                y: "median_us",
                x_label: "users K",
                y_label: "median latency (us)",
                log: true,
            },
            PlotKind::LayerLatency => Layout { table: "layer_latency.csv", ..PlotKind::Latency.layout() },
            PlotKind::Bleu => Layout {
                table: "bleu.csv",
                series: "variant",
                x: "snr_db",
                y: "bleu",
                x_label: "SNR (dB)",
                y_label: "BLEU",
                log: false,
            },
            PlotKind::Scan => Layout {
                table: "scan_latency.csv",
                series: "impl",
                x: "L",
                y: "median_us",
                x_label: "sequence length L",
                y_label: "median latency (us)",
                log: true,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::Latency => "latency",
            PlotKind::LayerLatency => "layer-latency",
            PlotKind::Bleu => "bleu",
            PlotKind::Scan => "scan",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PlotKind::Latency, PlotKind::LayerLatency, PlotKind::Bleu, PlotKind::Scan]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown plot kind `{s}` (latency, layer-latency, bleu, scan)"))
            })
    }
}

/// The table in `dir` itself, else one per `seed-*` subdirectory.
fn find_tables(dir: &Path, table: &str) -> Result<Vec<(Option<String>, PathBuf)>> {
    let direct = dir.join(table);
    if direct.is_file() {
        return Ok(vec![(None, direct)]);
    }
    let mut found = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            let path = e.path().join(table);
            if name.starts_with("seed-") && path.is_file() {
                found.push((Some(name), path));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::MissingTable(direct));
    }
    found.sort();
    Ok(found)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn read_series(dir: &Path, layout: &Layout) -> Result<Series> {
    let tables = find_tables(dir, layout.table)?;
    let tagged = tables.len() > 1;
    let mut series = Series::new();
    for (seed, path) in tables {
        let mut r = csv::Reader::from_path(&path)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no `{name}` column", path.display())))
        };
        let (s, x, y) = (col(layout.series)?, col(layout.x)?, col(layout.y)?);
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{}` in {}", &rec[i], path.display())))
            };
            let (xv, yv) = (parse(x)?, parse(y)?);
            // The noiseless row has no place on a finite SNR axis.
            if !xv.is_finite() || !yv.is_finite() {
                continue;
            }
            let key = match (&seed, tagged) {
                (Some(sd), true) => format!("{} {sd}", &rec[s]),
                _ => rec[s].to_string(),
            };
            series.entry(key).or_default().push((xv, yv));
        }
    }
    if series.values().all(Vec::is_empty) {
        return Err(Error::Empty("plot table"));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(series)
}

fn bounds(series: &Series, log: bool) -> ((f64, f64), (f64, f64)) {
    let pts = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if log {
        ((x0 / 1.2, x1 * 1.2), (y0 / 1.5, y1 * 1.5))
    } else {
        let pad = |a: f64, b: f64| if b > a { (b - a) * 0.05 } else { 0.5 };
        let (px, py) = (pad(x0, x1), pad(y0, y1));
        ((x0 - px, x1 + px), (y0 - py, y1 + py))
    }
}

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::InvalidArgument(format!("plot rendering failed: {e}"))
}

/// Render `kind` from the run directory `dir` into `dir/<kind>.svg`.
pub fn plot(dir: impl AsRef<Path>, kind: PlotKind) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let layout = kind.layout();
    let series = read_series(dir, &layout)?;
    let ((x0, x1), (y0, y1)) = bounds(&series, layout.log);
    let out = dir.join(format!("{}.svg", kind.name()));
    {
        let root = SVGBackend::new(&out, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut builder = ChartBuilder::on(&root);
        builder.margin(16).x_label_area_size(40).y_label_area_size(64).caption(kind.name(), ("sans-serif", 20));
        let style = |i: usize| Palette99::pick(i).stroke_width(2);
        macro_rules! draw {
            ($chart:expr) => {{
                let mut chart = $chart;
                chart.configure_mesh().x_desc(layout.x_label).y_desc(layout.y_label).draw().map_err(draw_err)?;
                for (i, (name, pts)) in series.iter().enumerate() {
                    chart
                        .draw_series(LineSeries::new(pts.iter().copied(), style(i)))
                        .map_err(draw_err)?
                        .label(name.as_str())
                        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style(i)));
                    chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, style(i).filled()))).map_err(draw_err)?;
                }
                chart
                    .configure_series_labels()
                    .background_style(WHITE.mix(0.8))
                    .border_style(BLACK)
                    .draw()
                    .map_err(draw_err)?;
            }};
        }
        if layout.log {
            draw!(builder.build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale()).map_err(draw_err)?);
        } else {
            draw!(builder.build_cartesian_2d(x0..x1, y0..y1).map_err(draw_err)?);
        }
        root.present().map_err(draw_err)?;
    }
    Ok(out)
}
