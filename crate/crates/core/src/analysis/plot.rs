//! Minimal hand-written SVG for the range bars and the correlation heatmap.

use std::fmt::Write;

use super::{AuditReport, CorrelationStat, RangeKind, Target};

const BAR_COLORS: [(RangeKind, &str, &str); 3] = [
    (RangeKind::RDelta, "#4c72b0", "R_delta"),
    (RangeKind::RRag, "#dd8452", "R_rag"),
    (RangeKind::RLlm, "#55a868", "R_llm"),
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one cluster per (retriever, category), one bar per range.
pub fn range_bars_svg(report: &AuditReport) -> String {
    let clusters: Vec<(String, [Option<f64>; 3])> = report
        .retrievers
        .iter()
        .flat_map(|r| {
            r.categories.iter().map(move |c| {
                let pick = |k: RangeKind| c.ranges.iter().find(|s| s.setting == k).and_then(|s| s.value);
                (
                    format!("{}/{}", r.retriever_id, c.category),
                    [pick(RangeKind::RDelta), pick(RangeKind::RRag), pick(RangeKind::RLlm)],
                )
            })
        })
        .collect();
    let max = clusters
        .iter()
        .flat_map(|(_, v)| v.iter().flatten())
        .fold(0.0f64, |m, &v| m.max(v))
        .max(1e-9);

    let (bar_w, gap, plot_h, left, top) = (18.0, 24.0, 240.0, 50.0, 30.0);
    let cluster_w = 3.0 * bar_w + gap;
    let width = left + cluster_w * clusters.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 90.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="16" font-size="12">Group accuracy ranges (max {max:.3})</text>"#);
    let _ = writeln!(
        svg,
        r##"<line x1="{left}" y1="{y}" x2="{x2}" y2="{y}" stroke="#333"/>"##,
        y = top + plot_h,
        x2 = width - 10.0
    );
    for (i, (label, values)) in clusters.iter().enumerate() {
        let x0 = left + i as f64 * cluster_w + gap / 2.0;
        for (j, v) in values.iter().enumerate() {
            let Some(v) = v else { continue };
            let h = plot_h * v / max;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{bar_w}" height="{:.2}" fill="{}"><title>{} {}: {v}</title></rect>"#,
                x0 + j as f64 * bar_w,
                top + plot_h - h,
                h,
                BAR_COLORS[j].1,
                escape(label),
                BAR_COLORS[j].2
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" transform="rotate(45 {:.2} {:.2})">{}</text>"#,
            x0,
            top + plot_h + 12.0,
            x0,
            top + plot_h + 12.0,
            escape(label)
        );
    }
    for (j, (_, color, name)) in BAR_COLORS.iter().enumerate() {
        let x = left + j as f64 * 70.0;
        let y = height - 12.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{name}</text>"#, x + 14.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn row_label(s: &CorrelationStat) -> String {
    let target = match s.target {
        Target::AcRag => "AC_rag",
        Target::DeltaAc => "dAC",
    };
    format!("{:?} ~ {target}", s.factor)
}

fn heat_color(rho: f64) -> String {
    // Blue for negative, red for positive, white at zero.
    let t = rho.clamp(-1.0, 1.0);
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{:02x}{:02x}", fade(t), fade(t))
    } else {
        format!("#{:02x}{:02x}ff", fade(t), fade(t))
    }
}

/// Rows are factor/target pairs, columns are categories; cells hold the
/// retriever-averaged rho. Undefined cells are grey.
pub fn correlation_heatmap_svg(report: &AuditReport) -> String {
    let mut categories: Vec<&str> = Vec::new();
    let mut rows: Vec<String> = Vec::new();
    for s in &report.correlations {
        if !categories.contains(&s.category.as_str()) {
            categories.push(&s.category);
        }
        let row = row_label(s);
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    let (cell, left, top) = (56.0, 100.0, 40.0);
    let width = left + cell * categories.len().max(1) as f64 + 20.0;
    let height = top + cell * rows.len().max(1) as f64 + 20.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="16" font-size="12">Spearman rho (averaged over retrievers)</text>"#);
    for (ci, c) in categories.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + (ci as f64 + 0.5) * cell,
            top - 6.0,
            escape(c)
        );
    }
    for (ri, row) in rows.iter().enumerate() {
        let y = top + ri as f64 * cell;
        let _ = writeln!(svg, r#"<text x="4" y="{:.1}">{}</text>"#, y + cell / 2.0 + 3.0, escape(row));
        for (ci, c) in categories.iter().enumerate() {
            let x = left + ci as f64 * cell;
            let stat = report
                .correlations
                .iter()
                .find(|s| s.category == *c && row_label(s) == *row);
            let value = stat.and_then(|s| s.averaged);
            let (fill, text) = match value {
                Some(v) => (heat_color(v), format!("{v:.2}")),
                None => ("#cccccc".to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="#fff"/>"##
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{text}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
