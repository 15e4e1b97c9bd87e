use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Case, SweepRow};
use crate::error::{Error, Result};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 90.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let (lo, hi) = values
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            0.5 * lo.abs().max(1e-3)
        };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

struct Panel<'a> {
    left: f64,
    x_label: &'a str,
    y_label: &'a str,
    x: Axis,
    y: Axis,
}

impl Panel<'_> {
    fn px(&self, v: f64) -> f64 {
        self.left + self.x.frac(v) * PANEL_W
    }

    fn py(&self, v: f64) -> f64 {
        MARGIN_T + (1.0 - self.y.frac(v)) * PANEL_H
    }

    fn frame(&self, out: &mut String) {
        let (l, t) = (self.left, MARGIN_T);
        let _ = writeln!(
            out,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{PANEL_W:.2}" height="{PANEL_H:.2}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.lo + f * (self.x.hi - self.x.lo);
            let yv = self.y.lo + f * (self.y.hi - self.y.lo);
            let gx = l + f * PANEL_W;
            let gy = t + (1.0 - f) * PANEL_H;
            let _ = writeln!(
                out,
                r##"<text x="{gx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xv:.3}</text>"##,
                t + PANEL_H + 16.0
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{yv:.3}</text>"##,
                l - 6.0,
                gy + 4.0
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"##,
            l + PANEL_W / 2.0,
            t + PANEL_H + 40.0,
            self.x_label
        );
        let (cx, cy) = (l - 48.0, t + PANEL_H / 2.0);
        let _ = writeln!(
            out,
            r##"<text x="{cx:.2}" y="{cy:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 {cx:.2} {cy:.2})">{}</text>"##,
            self.y_label
        );
    }

    fn series(&self, out: &mut String, color: &str, pts: &[(f64, f64, f64)]) {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y, _)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"##,
            path.join(" ")
        );
        for &(x, y, knob) in pts {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"><title>knob {knob}</title></circle>"##,
                self.px(x),
                self.py(y)
            );
        }
    }
}

/// Two panels: safety gap against the knob, and the `(g_s, g_f)` trade-off.
/// One colored series per seed. Output bytes depend only on `rows`.
pub fn render_svg(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("nothing to plot: no rows".into()));
    }
    let mut by_seed: BTreeMap<u64, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    for series in by_seed.values_mut() {
        series.sort_by(|a, b| a.knob.total_cmp(&b.knob));
    }
    let knob_label = match rows[0].case {
        Case::I => "λ",
        Case::II => "ε₂",
    };
    let left = Panel {
        left: MARGIN_L,
        x_label: knob_label,
        y_label: "g_s (nats)",
        x: Axis::fit(rows.iter().map(|r| r.knob)),
        y: Axis::fit(rows.iter().map(|r| r.g_s)),
    };
    let right = Panel {
        left: MARGIN_L + PANEL_W + GAP,
        x_label: "g_s (nats)",
        y_label: "g_f (nats)",
        x: Axis::fit(rows.iter().map(|r| r.g_s)),
        y: Axis::fit(rows.iter().map(|r| r.g_f)),
    };
    let width = 2.0 * (MARGIN_L + PANEL_W) + GAP;
    let height = MARGIN_T + PANEL_H + 60.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="22" font-size="14" text-anchor="middle">Case {} sweep, {} seed(s)</text>"##,
        width / 2.0,
        rows[0].case,
        by_seed.len()
    );
    left.frame(&mut out);
    right.frame(&mut out);
    for (i, series) in by_seed.values().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let knob_pts: Vec<_> = series.iter().map(|r| (r.knob, r.g_s, r.knob)).collect();
        let trade_pts: Vec<_> = series.iter().map(|r| (r.g_s, r.g_f, r.knob)).collect();
        left.series(&mut out, color, &knob_pts);
        right.series(&mut out, color, &trade_pts);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Writes [`render_svg`] output to `path`; nothing is written on error.
pub fn emit_plot(rows: &[SweepRow], path: &Path) -> Result<()> {
    let svg = render_svg(rows)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<SweepRow> {
        (0..15)
            .map(|i| SweepRow {
                seed: i / 5,
                case: Case::I,
                knob: 0.1 + 0.2 * (i % 5) as f64,
                g_s: 1.0 / (1.0 + i as f64),
                g_f: 0.01 * i as f64,
                safety_bound: f64::INFINITY,
                capability_bound: 1.0,
                safety_slack: f64::INFINITY,
                capability_slack: 0.5,
                iterations: 3,
                converged: true,
            })
            .collect()
    }

    #[test]
    fn svg_parses_and_is_stable() {
        let a = render_svg(&rows()).unwrap();
        let doc = roxmltree::Document::parse(&a).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(
            doc.descendants()
                .filter(|n| n.has_tag_name("circle"))
                .count(),
            30
        );
        assert_eq!(a, render_svg(&rows()).unwrap());
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.svg");
        assert!(emit_plot(&[], &path).is_err());
        assert!(!path.exists());
        let bad = dir.path().join("missing").join("plot.svg");
        let err = emit_plot(&rows(), &bad).unwrap_err().to_string();
        assert!(err.contains("missing"));
    }
}
