//! Self-contained SVG output for ROC overlays and importance heatmaps.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

pub struct Series<'a> {
    pub label: String,
    pub points: &'a [(f64, f64)],
}

/// Unit-square ROC plot with a dashed chance diagonal and a legend.
pub fn roc_svg(title: &str, series: &[Series<'_>]) -> String {
    let (w, h) = (520.0, 440.0);
    let (left, top, size) = (60.0, 40.0, 340.0);
    let px = |x: f64| left + x * size;
    let py = |y: f64| top + (1.0 - y) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + size / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#,
            px(t),
            top + size + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            left - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        left + size / 2.0,
        top + size + 34.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">True positive rate</text>"#,
        top + size / 2.0,
        top + size / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 10.0 + i as f64 * 18.0;
        let lx = left + size + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
            lx + 20.0,
            ly + 4.0,
            xml_escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub struct HeatmapPanel {
    pub key: String,
    pub title: String,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// Blue (negative) through white (0) to red (positive).
pub fn diverging_color(v: f64, max_abs: f64) -> String {
    let t = if max_abs > 0.0 {
        (v / max_abs).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        r.round() as u8,
        g.round() as u8,
        b.round() as u8
    )
}

/// Side-by-side panels; each row keeps the order it was given in.
pub fn heatmap_svg(title: &str, columns: &[&str], panels: &[HeatmapPanel]) -> String {
    let max_abs = panels
        .iter()
        .flat_map(|p| p.rows.iter().flat_map(|(_, v)| v.iter()))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let (label_w, cell_w, cell_h) = (230.0, 62.0, 20.0);
    let panel_w = label_w + cell_w * columns.len() as f64 + 20.0;
    let max_rows = panels.iter().map(|p| p.rows.len()).max().unwrap_or(0);
    let w = panel_w * panels.len().max(1) as f64 + 20.0;
    let h = 90.0 + cell_h * max_rows as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    for (pi, panel) in panels.iter().enumerate() {
        let x0 = 10.0 + pi as f64 * panel_w;
        let _ = writeln!(
            s,
            r#"<g class="panel" data-key="{}">"#,
            xml_escape(&panel.key)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="46" font-size="12" font-weight="bold">{}</text>"#,
            x0,
            xml_escape(&panel.title)
        );
        for (ci, col) in columns.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="70" text-anchor="middle">{}</text>"#,
                x0 + label_w + cell_w * (ci as f64 + 0.5),
                xml_escape(col)
            );
        }
        for (ri, (label, values)) in panel.rows.iter().enumerate() {
            let y = 78.0 + ri as f64 * cell_h;
            let _ = writeln!(
                s,
                r#"<text class="row-label" data-rank="{}" x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                ri + 1,
                x0 + label_w - 6.0,
                y + cell_h * 0.7,
                xml_escape(label)
            );
            for (ci, v) in values.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="{}" stroke="#ddd"><title>{v:.4}</title></rect>"##,
                    x0 + label_w + cell_w * ci as f64,
                    diverging_color(*v, max_abs)
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{v:+.3}</text>"#,
                    x0 + label_w + cell_w * (ci as f64 + 0.5),
                    y + cell_h * 0.68
                );
            }
        }
        s.push_str("</g>\n");
    }
    let _ = writeln!(
        s,
        r#"<text x="10" y="{}" font-size="10">color scale: blue = lowers mean probability, red = raises it (max |delta| = {max_abs:.4})</text>"#,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_is_centered() {
        assert_eq!(diverging_color(0.0, 1.0), "#ffffff");
        assert_eq!(diverging_color(1.0, 1.0), "#ff0000");
        assert_eq!(diverging_color(-1.0, 1.0), "#0000ff");
        assert_eq!(diverging_color(0.3, 0.0), "#ffffff");
    }

    #[test]
    fn escapes_labels() {
        assert_eq!(xml_escape(">=300 & <x>"), "&gt;=300 &amp; &lt;x&gt;");
    }

    #[test]
    fn roc_svg_has_one_polyline_per_series() {
        let pts = [(0.0, 0.0), (0.5, 0.8), (1.0, 1.0)];
        let svg = roc_svg(
            "t",
            &[
                Series {
                    label: "a".into(),
                    points: &pts,
                },
                Series {
                    label: "b".into(),
                    points: &pts,
                },
            ],
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
    }
}
