//! Figures from sweep records: each is written as a CSV of the plotted
//! values plus a plain SVG. Output is byte-deterministic for given records.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use crate::harness::{aggregate_by, aggregate_ci, GroupKey, RunRecord, SAMPLES_DIR};
use crate::io::{format_f64, read_dataset};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Writes `auroc_vs_order`, `auroc_vs_time` and, when sample files exist,
/// `samples` figures into `dir`. Returns the files written.
pub fn emit_plots(records: &[RunRecord], output_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    if !records.iter().any(|r| r.is_ok()) {
        bail!("no successful records to plot");
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    written.extend(auroc_vs_order(records, dir)?);
    written.extend(auroc_vs_time(records, dir)?);
    written.extend(samples_scatter(records, output_dir, dir)?);
    Ok(written)
}

fn auroc_vs_order(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = aggregate_ci(records, &[GroupKey::Order, GroupKey::Beta]);
    let mut csv = String::from("order,beta,count,mean,ci_low,ci_high\n");
    for r in &rows {
        let (lo, hi) = r.interval().map(|(a, b)| (format_f64(a), format_f64(b))).unwrap_or_default();
        writeln!(
            csv,
            "{},{},{},{},{lo},{hi}",
            r.group.order.unwrap_or(0),
            format_f64(r.group.beta.unwrap_or(f64::NAN)),
            r.count,
            format_f64(r.mean)
        )?;
    }

    let betas = distinct(rows.iter().map(|r| r.group.beta.unwrap_or(0.0)));
    let orders: Vec<usize> = {
        let mut o: Vec<usize> = rows.iter().filter_map(|r| r.group.order).collect();
        o.dedup();
        o
    };
    let hi = rows
        .iter()
        .map(|r| r.interval().map(|(_, h)| h).unwrap_or(r.mean))
        .fold(0.5f64, f64::max)
        .min(1.0);
    let mut svg = Svg::new("AUROC by order", "order n", "AUROC");
    let y = Axis::new(0.0, (hi + 0.05).min(1.0));
    svg.y_ticks(&y, 5);
    let group_w = (WIDTH - 2.0 * MARGIN) / orders.len() as f64;
    let bar_w = group_w * 0.8 / betas.len() as f64;
    for (oi, order) in orders.iter().enumerate() {
        let gx = MARGIN + oi as f64 * group_w + group_w * 0.1;
        svg.text(gx + group_w * 0.4, HEIGHT - MARGIN + 16.0, &order.to_string(), "middle");
        for r in rows.iter().filter(|r| r.group.order == Some(*order)) {
            let bi = betas.iter().position(|b| Some(*b) == r.group.beta).unwrap_or(0);
            let x = gx + bi as f64 * bar_w;
            let top = y.to_px(r.mean);
            let colour = PALETTE[bi % PALETTE.len()];
            writeln!(
                svg.body,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                x,
                top,
                bar_w * 0.9,
                y.to_px(0.0) - top
            )?;
            if let Some((lo, hi)) = r.interval() {
                let cx = x + bar_w * 0.45;
                svg.line(cx, y.to_px(lo), cx, y.to_px(hi), "#000");
                svg.line(cx - 4.0, y.to_px(lo), cx + 4.0, y.to_px(lo), "#000");
                svg.line(cx - 4.0, y.to_px(hi), cx + 4.0, y.to_px(hi), "#000");
            }
        }
    }
    svg.dashed_hline(y.to_px(0.5));
    for (bi, b) in betas.iter().enumerate() {
        svg.legend(bi, &format!("beta={b}"));
    }
    write_pair(dir, "auroc_vs_order", &csv, &svg.finish())
}

fn auroc_vs_time(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let n_time = records.iter().filter(|r| r.is_ok()).map(|r| r.per_time_auroc.len()).max().unwrap_or(0);
    let times: Vec<f64> = records
        .iter()
        .find(|r| r.is_ok() && r.attack_times.len() == n_time)
        .map(|r| r.attack_times.clone())
        .unwrap_or_else(|| (0..n_time).map(|k| k as f64).collect());
    let keys = [GroupKey::Order, GroupKey::Beta];
    let per_k: Vec<_> = (0..n_time)
        .map(|k| aggregate_by(records, &keys, |r| r.per_time_auroc.get(k).copied()))
        .collect();

    let mut csv = String::from("order,beta,t,count,mean,ci_low,ci_high\n");
    for (k, rows) in per_k.iter().enumerate() {
        for r in rows {
            let (lo, hi) = r.interval().map(|(a, b)| (format_f64(a), format_f64(b))).unwrap_or_default();
            writeln!(
                csv,
                "{},{},{},{},{},{lo},{hi}",
                r.group.order.unwrap_or(0),
                format_f64(r.group.beta.unwrap_or(f64::NAN)),
                format_f64(times[k]),
                r.count,
                format_f64(r.mean)
            )?;
        }
    }

    let mut svg = Svg::new("AUROC over attack time", "t", "AUROC");
    let x = Axis::new(0.0, times.last().copied().unwrap_or(1.0).max(1e-9) * 1.05);
    let y = Axis::new(0.3, 1.0);
    svg.y_ticks(&y, 7);
    svg.x_ticks(&x, 5);
    svg.dashed_hline(y.to_px(0.5));
    let groups = per_k.first().map(|rows| rows.iter().map(|r| r.group).collect::<Vec<_>>()).unwrap_or_default();
    for (gi, group) in groups.iter().enumerate() {
        let pts: Vec<(f64, f64)> = per_k
            .iter()
            .enumerate()
            .filter_map(|(k, rows)| rows.iter().find(|r| r.group == *group).map(|r| (times[k], r.mean)))
            .collect();
        let colour = PALETTE[gi % PALETTE.len()];
        let path: Vec<String> =
            pts.iter().map(|(t, m)| format!("{:.2},{:.2}", x.to_px_h(*t), y.to_px(m.clamp(0.3, 1.0)))).collect();
        writeln!(
            svg.body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            path.join(" ")
        )?;
        svg.legend(gi, &group.label());
    }
    write_pair(dir, "auroc_vs_time", &csv, &svg.finish())
}

fn samples_scatter(records: &[RunRecord], output_dir: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    // One run per order: the successful one with the smallest (beta, repeat).
    let mut chosen: Vec<&RunRecord> = Vec::new();
    let mut ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    ok.sort_by(|a, b| {
        a.order
            .cmp(&b.order)
            .then(a.beta.total_cmp(&b.beta))
            .then(a.eps_num.total_cmp(&b.eps_num))
            .then(a.repeat.cmp(&b.repeat))
    });
    for r in ok {
        let file = output_dir.join(SAMPLES_DIR).join(format!("{}.csv", r.run_id));
        if chosen.last().map(|c| c.order) != Some(r.order) && file.exists() {
            chosen.push(r);
        }
    }
    if chosen.is_empty() {
        return Ok(Vec::new());
    }
    let mut csv = String::from("run_id,order,x0,x1\n");
    let mut sets = Vec::new();
    for r in &chosen {
        let data = read_dataset(&output_dir.join(SAMPLES_DIR).join(format!("{}.csv", r.run_id)))?;
        for p in data.iter() {
            writeln!(csv, "{},{},{},{}", r.run_id, r.order, format_f64(p[0]), format_f64(p[1]))?;
        }
        sets.push((r.order, data));
    }
    let mut svg = Svg::new("Generated samples", "x0", "x1");
    let x = Axis::new(-1.5, 1.5);
    let y = Axis::new(-1.5, 1.5);
    svg.x_ticks(&x, 6);
    svg.y_ticks(&y, 6);
    for (i, (order, data)) in sets.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        for p in data.iter() {
            if p[0].abs() > 1.5 || p[1].abs() > 1.5 {
                continue;
            }
            writeln!(
                svg.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{colour}" fill-opacity="0.6"/>"#,
                x.to_px_h(p[0]),
                y.to_px(p[1])
            )?;
        }
        svg.legend(i, &format!("n={order}"));
    }
    write_pair(dir, "samples", &csv, &svg.finish())
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn write_pair(dir: &Path, stem: &str, csv: &str, svg: &str) -> Result<Vec<PathBuf>> {
    let c = dir.join(format!("{stem}.csv"));
    let s = dir.join(format!("{stem}.svg"));
    fs::write(&c, csv)?;
    fs::write(&s, svg)?;
    Ok(vec![c, s])
}

/// Linear map from data coordinates to the plot area.
struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Vertical pixel position.
    fn to_px(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - self.frac(v) * (HEIGHT - 2.0 * MARGIN)
    }

    /// Horizontal pixel position.
    fn to_px_h(&self, v: f64) -> f64 {
        MARGIN + self.frac(v) * (WIDTH - 2.0 * MARGIN)
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(body, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
            WIDTH / 2.0
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 14.0
        );
        let _ = writeln!(
            body,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0
        );
        let mut svg = Self { body };
        svg.line(MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, "#000");
        svg.line(MARGIN, MARGIN, MARGIN, HEIGHT - MARGIN, "#000");
        svg
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, colour: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{colour}"/>"#
        );
    }

    fn dashed_hline(&mut self, y: f64) {
        let _ = writeln!(
            self.body,
            r##"<line x1="{MARGIN:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#888" stroke-dasharray="4 3"/>"##,
            WIDTH - MARGIN
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{s}</text>"#
        );
    }

    fn y_ticks(&mut self, axis: &Axis, count: usize) {
        for i in 0..=count {
            let v = axis.lo + (axis.hi - axis.lo) * i as f64 / count as f64;
            let y = axis.to_px(v);
            self.line(MARGIN - 4.0, y, MARGIN, y, "#000");
            self.text(MARGIN - 6.0, y + 4.0, &format!("{v:.2}"), "end");
        }
    }

    fn x_ticks(&mut self, axis: &Axis, count: usize) {
        for i in 0..=count {
            let v = axis.lo + (axis.hi - axis.lo) * i as f64 / count as f64;
            let x = axis.to_px_h(v);
            self.line(x, HEIGHT - MARGIN, x, HEIGHT - MARGIN + 4.0, "#000");
            self.text(x, HEIGHT - MARGIN + 16.0, &format!("{v:.2}"), "middle");
        }
    }

    fn legend(&mut self, index: usize, label: &str) {
        let y = MARGIN + 4.0 + 16.0 * index as f64;
        let x = WIDTH - MARGIN - 110.0;
        let colour = PALETTE[index % PALETTE.len()];
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{colour}"/>"#,
            y - 9.0
        );
        self.text(x + 14.0, y, label, "start");
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}
