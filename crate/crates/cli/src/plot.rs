//! Deterministic static SVG rendering of CSV tables.

use std::fmt::Write as _;

use difflab_core::csvio::{read_numeric_table, NumericTable};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Lines,
    Scatter,
    VectorField,
}

/// Column selection. Unset fields fall back to per-kind defaults: lines
/// plot every column against `t` (or the first column), grouped by
/// `path_id` when present; scatter plots the first two data columns;
/// vector fields draw (`J_0`, `J_1`) at (`x_0`, `x_1`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOptions {
    pub x: Option<String>,
    pub y: Vec<String>,
    pub u: Option<String>,
    pub v: Option<String>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub svg: String,
    /// True when the input had no data rows and only axes were drawn.
    pub empty: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const MAX_PATHS: usize = 64;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn column(table: &NumericTable, name: &str) -> CliResult<usize> {
    table.column(name).ok_or_else(|| {
        CliError::Config(format!("CSV has no column `{name}` (columns: {})", table.headers.join(", ")))
    })
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !(lo <= hi) {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            return Range { lo: lo - 0.5, hi: hi + 0.5 };
        }
        Range { lo, hi }
    }

    fn widen(self, by: f64) -> Self {
        let pad = (self.hi - self.lo) * by;
        Range { lo: self.lo - pad, hi: self.hi + pad }
    }
}

struct Canvas {
    out: String,
    x: Range,
    y: Range,
}

impl Canvas {
    fn new(x: Range, y: Range, title: &str, x_label: &str, y_label: &str) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(out, "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>");
        let _ = writeln!(out, "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", LEFT + pw / 2.0, escape(title));
        let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", LEFT + pw / 2.0, HEIGHT - 10.0, escape(x_label));
        let _ = writeln!(
            out,
            "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>",
            TOP + ph / 2.0,
            escape(y_label)
        );
        let mut canvas = Self { out, x, y };
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x.lo + (x.hi - x.lo) * f;
            let yv = y.lo + (y.hi - y.lo) * f;
            let (px, _) = canvas.map(xv, y.lo);
            let (_, py) = canvas.map(x.lo, yv);
            let _ = writeln!(canvas.out, "<line x1=\"{px:.2}\" y1=\"{0:.2}\" x2=\"{px:.2}\" y2=\"{1:.2}\" stroke=\"black\"/>", TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(canvas.out, "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", TOP + ph + 18.0, tick(xv));
            let _ = writeln!(canvas.out, "<line x1=\"{0:.2}\" y1=\"{py:.2}\" x2=\"{LEFT}\" y2=\"{py:.2}\" stroke=\"black\"/>", LEFT - 5.0);
            let _ = writeln!(canvas.out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", LEFT - 8.0, py + 4.0, tick(yv));
        }
        canvas
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        (
            LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * pw,
            TOP + ph - (y - self.y.lo) / (self.y.hi - self.y.lo) * ph,
        )
    }

    fn legend(&mut self, k: usize, label: &str, color: &str) {
        let y = TOP + 10.0 + 16.0 * k as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(self.out, "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>", x + 18.0);
        let _ = writeln!(self.out, "<text x=\"{}\" y=\"{}\">{}</text>", x + 24.0, y + 4.0, escape(label));
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders `csv` as an SVG. Input with no header or no rows yields empty
/// axes; missing or non-numeric columns are schema errors.
pub fn render(csv: &[u8], kind: PlotKind, options: &PlotOptions) -> CliResult<Rendered> {
    let title = options.title.clone().unwrap_or_else(|| format!("{kind:?}"));
    if csv.iter().all(u8::is_ascii_whitespace) {
        let canvas = Canvas::new(Range::of(std::iter::empty()), Range::of(std::iter::empty()), &title, "", "");
        return Ok(Rendered { svg: canvas.finish(), empty: true });
    }
    let table = read_numeric_table(csv).map_err(|e| CliError::Config(format!("plot input: {e}")))?;
    match kind {
        PlotKind::Lines => lines(&table, options, &title),
        PlotKind::Scatter => scatter(&table, options, &title),
        PlotKind::VectorField => vector_field(&table, options, &title),
    }
}

fn lines(table: &NumericTable, options: &PlotOptions, title: &str) -> CliResult<Rendered> {
    let group = table.column("path_id");
    let x_name = options.x.clone().unwrap_or_else(|| {
        if table.column("t").is_some() {
            "t".into()
        } else {
            table.headers.iter().find(|h| Some(table.column(h).unwrap()) != group).cloned().unwrap_or_default()
        }
    });
    let xc = column(table, &x_name)?;
    let ys: Vec<usize> = if options.y.is_empty() {
        (0..table.headers.len()).filter(|&c| c != xc && Some(c) != group).collect()
    } else {
        options.y.iter().map(|n| column(table, n)).collect::<CliResult<_>>()?
    };
    let x_range = Range::of(table.rows.iter().map(|r| r[xc]));
    let y_range = Range::of(table.rows.iter().flat_map(|r| ys.iter().map(move |&c| r[c]))).widen(0.05);
    let y_label = if ys.len() == 1 { table.headers[ys[0]].as_str() } else { "" };
    let mut canvas = Canvas::new(x_range, y_range, title, &x_name, y_label);

    // Rows grouped by path (first appearance order), one polyline per (path, column).
    let mut groups: Vec<(f64, Vec<&Vec<f64>>)> = Vec::new();
    for row in &table.rows {
        let key = group.map_or(0.0, |g| row[g]);
        match groups.iter().position(|(k, _)| *k == key) {
            Some(g) => groups[g].1.push(row),
            None if groups.len() < MAX_PATHS => groups.push((key, vec![row])),
            None => {}
        }
    }
    for (k, &c) in ys.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for (_, rows) in &groups {
            let mut points = String::new();
            for r in rows {
                let (px, py) = canvas.map(r[xc], r[c]);
                let _ = write!(points, "{px:.2},{py:.2} ");
            }
            let _ = writeln!(
                canvas.out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
                points.trim_end()
            );
        }
        canvas.legend(k, &table.headers[c], color);
    }
    Ok(Rendered { svg: canvas.finish(), empty: table.rows.is_empty() })
}

fn scatter(table: &NumericTable, options: &PlotOptions, title: &str) -> CliResult<Rendered> {
    let data: Vec<&String> = table.headers.iter().filter(|h| h.as_str() != "path_id" && h.as_str() != "t").collect();
    let x_name = options.x.clone().or_else(|| data.first().map(|s| s.to_string()));
    let y_name = options.y.first().cloned().or_else(|| data.get(1).map(|s| s.to_string()));
    let (Some(x_name), Some(y_name)) = (x_name, y_name) else {
        return Err(CliError::Config("scatter needs two data columns".into()));
    };
    let (xc, yc) = (column(table, &x_name)?, column(table, &y_name)?);
    let x_range = Range::of(table.rows.iter().map(|r| r[xc])).widen(0.05);
    let y_range = Range::of(table.rows.iter().map(|r| r[yc])).widen(0.05);
    let mut canvas = Canvas::new(x_range, y_range, title, &x_name, &y_name);
    for r in &table.rows {
        let (px, py) = canvas.map(r[xc], r[yc]);
        let _ = writeln!(canvas.out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.5\" fill=\"{}\" fill-opacity=\"0.5\"/>", PALETTE[0]);
    }
    Ok(Rendered { svg: canvas.finish(), empty: table.rows.is_empty() })
}

fn vector_field(table: &NumericTable, options: &PlotOptions, title: &str) -> CliResult<Rendered> {
    let name = |opt: &Option<String>, default: &str| opt.clone().unwrap_or_else(|| default.to_string());
    let x_name = name(&options.x, "x_0");
    let y_name = options.y.first().cloned().unwrap_or_else(|| "x_1".into());
    let (u_name, v_name) = (name(&options.u, "J_0"), name(&options.v, "J_1"));
    let (xc, yc) = (column(table, &x_name)?, column(table, &y_name)?);
    let (uc, vc) = (column(table, &u_name)?, column(table, &v_name)?);
    let x_range = Range::of(table.rows.iter().map(|r| r[xc])).widen(0.08);
    let y_range = Range::of(table.rows.iter().map(|r| r[yc])).widen(0.08);
    let mut canvas = Canvas::new(x_range, y_range, title, &x_name, &y_name);

    let longest = table.rows.iter().map(|r| r[uc].hypot(r[vc])).fold(0.0, f64::max);
    let cells = (table.rows.len() as f64).sqrt().max(1.0);
    let max_len = 0.8 * (WIDTH - LEFT - RIGHT).min(HEIGHT - TOP - BOTTOM) / cells;
    for r in &table.rows {
        let (px, py) = canvas.map(r[xc], r[yc]);
        if longest <= 0.0 {
            let _ = writeln!(canvas.out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1\" fill=\"black\"/>");
            continue;
        }
        let scale = max_len / longest;
        // SVG y grows downwards.
        let (dx, dy) = (r[uc] * scale, -r[vc] * scale);
        let (tx, ty) = (px + dx, py + dy);
        let _ = writeln!(canvas.out, "<line x1=\"{px:.2}\" y1=\"{py:.2}\" x2=\"{tx:.2}\" y2=\"{ty:.2}\" stroke=\"{}\"/>", PALETTE[0]);
        let len = dx.hypot(dy);
        if len > 1e-9 {
            let (ux, uy) = (dx / len, dy / len);
            let head = (0.3 * len).min(6.0);
            let (bx, by) = (tx - ux * head, ty - uy * head);
            let (nx, ny) = (-uy * head * 0.5, ux * head * 0.5);
            let _ = writeln!(
                canvas.out,
                "<polygon points=\"{tx:.2},{ty:.2} {:.2},{:.2} {:.2},{:.2}\" fill=\"{}\"/>",
                bx + nx,
                by + ny,
                bx - nx,
                by - ny,
                PALETTE[0]
            );
        }
    }
    canvas.legend(0, &format!("({u_name}, {v_name})"), PALETTE[0]);
    Ok(Rendered { svg: canvas.finish(), empty: table.rows.is_empty() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_axes_only() {
        for input in [&b""[..], b"  \n", b"t,mean\n"] {
            let r = render(input, PlotKind::Lines, &PlotOptions::default()).unwrap();
            assert!(r.empty);
            assert!(r.svg.starts_with("<svg") && r.svg.ends_with("</svg>\n"));
            assert!(!r.svg.contains("polyline points=\"1"));
        }
    }

    #[test]
    fn schema_mismatch_is_a_config_error() {
        let csv = b"x_0,x_1\n0,1\n";
        let err = render(csv, PlotKind::VectorField, &PlotOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = render(b"t,v\n0,abc\n", PlotKind::Lines, &PlotOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let csv = b"t,variance,variance_closed_form\n0,0,0\n1,0.6,0.63\n2,0.85,0.86\n";
        let a = render(csv, PlotKind::Lines, &PlotOptions::default()).unwrap();
        let b = render(csv, PlotKind::Lines, &PlotOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.svg.matches("<polyline").count(), 2);
        let field = b"x_0,x_1,J_0,J_1\n0,0,1,0\n1,0,0,1\n0,1,-1,0\n1,1,0,0\n";
        let r = render(field, PlotKind::VectorField, &PlotOptions::default()).unwrap();
        assert_eq!(r.svg.matches("<polygon").count(), 3);
    }

    #[test]
    fn trajectories_are_grouped_by_path() {
        let csv = b"path_id,t,x_0\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n";
        let r = render(csv, PlotKind::Lines, &PlotOptions::default()).unwrap();
        assert_eq!(r.svg.matches("<polyline").count(), 2);
    }
}
