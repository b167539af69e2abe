//! Top-down scene plots and report bar charts as plain SVG text.

use std::fmt::Write;

use rearrange_core::geometry::{extent, Footprint, Pose};
use rearrange_core::lang::{StructureShape, Vocabulary};
use rearrange_core::model::color_rgb;
use rearrange_core::scenegen::{RearrangementExample, TableBounds};
use rearrange_core::traineval::EvalReport;

const PX_PER_M: f64 = 500.0;
const MARGIN: f64 = 20.0;
const CAPTION_H: f64 = 40.0;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Instruction tokens as words, padding dropped.
pub fn caption(vocab: &Vocabulary, tokens: &[u32]) -> String {
    tokens
        .iter()
        .filter_map(|&id| vocab.token(id).ok())
        .map(|t| t.concept())
        .filter(|(c, _)| c.name() != "pad")
        .map(|(_, v)| v)
        .collect::<Vec<_>>()
        .join(" ")
}

struct Canvas {
    table: TableBounds,
    out: String,
}

impl Canvas {
    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.table.lo[0]) * PX_PER_M
    }

    fn y(&self, y: f64) -> f64 {
        MARGIN + (self.table.hi[1] - y) * PX_PER_M
    }

    fn footprint(&mut self, f: &Footprint, style: &str) {
        match *f {
            Footprint::Circle { c, r } => {
                let _ = writeln!(
                    self.out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" {style}/>"#,
                    self.x(c[0]),
                    self.y(c[1]),
                    r * PX_PER_M
                );
            }
            Footprint::Rect { c, ax, half } => {
                let mut pts = String::new();
                for (s0, s1) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
                    let px = c[0] + s0 * half[0] * ax[0][0] + s1 * half[1] * ax[1][0];
                    let py = c[1] + s0 * half[0] * ax[0][1] + s1 * half[1] * ax[1][1];
                    let _ = write!(pts, "{:.2},{:.2} ", self.x(px), self.y(py));
                }
                let _ = writeln!(self.out, r#"<polygon points="{}" {style}/>"#, pts.trim_end());
            }
        }
    }

    fn frame_glyph(&mut self, frame: &Pose) {
        let (cx, cy) = (self.x(frame.t[0]), self.y(frame.t[1]));
        let len = 0.08;
        for (k, color) in [(0, "#d62728"), (1, "#2ca02c")] {
            let ex = frame.t[0] + len * frame.r[0][k];
            let ey = frame.t[1] + len * frame.r[1][k];
            let _ = writeln!(
                self.out,
                r#"<line x1="{cx:.2}" y1="{cy:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                self.x(ex),
                self.y(ey)
            );
        }
        let _ = writeln!(self.out, r##"<circle class="frame" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="#000"/>"##);
    }
}

fn hex(rgb: [f64; 3]) -> String {
    let c = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(rgb[0]), c(rgb[1]), c(rgb[2]))
}

/// Plots `ex` with object footprints outlined at their initial poses and
/// filled at `goals` (one entry per object, `None` for objects that stay),
/// plus the structure frame glyph and a caption.
pub fn scene_svg(ex: &RearrangementExample, goals: &[Option<Pose>], frame: Option<&Pose>, caption: &str, table: &TableBounds) -> String {
    let w = (table.hi[0] - table.lo[0]) * PX_PER_M + 2.0 * MARGIN;
    let h = (table.hi[1] - table.lo[1]) * PX_PER_M + 2.0 * MARGIN + CAPTION_H;
    let mut cv = Canvas { table: *table, out: String::new() };
    let _ = writeln!(
        cv.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(
        cv.out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{:.2}" height="{:.2}" fill="#f4efe6" stroke="#888"/>"##,
        w - 2.0 * MARGIN,
        h - 2.0 * MARGIN - CAPTION_H
    );
    for (o, goal) in ex.objects.iter().zip(goals) {
        let fill = hex(color_rgb(o.color));
        if let Some(g) = goal {
            let style = format!(r##"class="goal" data-id="{}" fill="{fill}" fill-opacity="0.85" stroke="#222""##, o.id);
            cv.footprint(&extent(&o.shape, g).foot, &style);
        }
        let style = format!(r#"class="initial" data-id="{}" fill="none" stroke="{fill}" stroke-width="2" stroke-dasharray="4 2""#, o.id);
        cv.footprint(&extent(&o.shape, &o.initial_pose).foot, &style);
    }
    if let Some(f) = frame {
        cv.frame_glyph(f);
    }
    let _ = writeln!(
        cv.out,
        r#"<text x="{MARGIN}" y="{:.2}" font-family="sans-serif" font-size="14">{}</text>"#,
        h - CAPTION_H / 2.0,
        escape(caption)
    );
    cv.out.push_str("</svg>\n");
    cv.out
}

/// Grouped bars of mean object translation and rotation error per structure
/// and model.
pub fn report_svg(report: &EvalReport) -> String {
    const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
    let shapes: Vec<&str> =
        StructureShape::ALL.iter().map(|s| s.name()).filter(|s| report.structure_counts.contains_key(*s)).collect();
    let bar_w = 16.0;
    let group_w = bar_w * report.models.len().max(1) as f64 + 24.0;
    let chart_h = 200.0;
    let left = 60.0;
    let width = left + group_w * shapes.len().max(1) as f64 + 160.0;
    let height = 2.0 * (chart_h + 60.0) + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let panels: [(&str, fn(&rearrange_core::traineval::ErrorRow) -> f64); 2] =
        [("object translation error (cm)", |r| r.obj_t_cm), ("object rotation error (deg)", |r| r.obj_r_deg)];
    for (p, (title, get)) in panels.iter().enumerate() {
        let top = 30.0 + p as f64 * (chart_h + 60.0);
        let base = top + chart_h;
        let max = report
            .models
            .iter()
            .flat_map(|m| m.errors.by_structure.values().map(get))
            .fold(0.0_f64, f64::max)
            .max(1e-9);
        let _ = writeln!(out, r#"<text x="{left}" y="{:.2}" font-size="14">{}</text>"#, top - 10.0, escape(title));
        let _ = writeln!(out, r##"<line x1="{left}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="#000"/>"##, width - 150.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{max:.2}</text>"#, left - 4.0, top + 4.0);
        for (g, s) in shapes.iter().enumerate() {
            let gx = left + 12.0 + g as f64 * group_w;
            for (k, m) in report.models.iter().enumerate() {
                let Some(row) = m.errors.by_structure.get(*s) else { continue };
                let v = get(row);
                let bh = v / max * chart_h;
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" data-model="{}" data-structure="{s}" data-value="{v:.4}" x="{:.2}" y="{:.2}" width="{bar_w}" height="{bh:.2}" fill="{}"/>"#,
                    escape(&m.name),
                    gx + k as f64 * bar_w,
                    base - bh,
                    PALETTE[k % PALETTE.len()]
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{s}</text>"#,
                gx + bar_w * report.models.len() as f64 / 2.0,
                base + 16.0
            );
        }
    }
    for (k, m) in report.models.iter().enumerate() {
        let y = 30.0 + 18.0 * k as f64;
        let x = width - 140.0;
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 18.0, escape(&m.name));
    }
    out.push_str("</svg>\n");
    out
}
