//! Self-contained SVG rendering of a record with shaded wave segments.

use crate::signal_io::{AnnotationSet, EcgRecord, WaveClass};

const CANVAS_WIDTH: f64 = 1200.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 30.0;
const LANE_HEIGHT: f64 = 70.0;
/// Longest polyline kept per lead; longer signals are drawn as a
/// min/max envelope so spikes survive the decimation.
const MAX_POINTS: usize = 2000;

fn class_color(class: WaveClass) -> &'static str {
    match class {
        WaveClass::P => "#1f77b4",
        WaveClass::Qrs => "#d62728",
        WaveClass::T => "#2ca02c",
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Renders the record as an SVG document. Every annotated segment becomes
/// exactly one shaded `<rect>` spanning all leads, tagged
/// `class="segment segment-<WAVE>"`.
pub fn render_svg(record: &EcgRecord, annotations: Option<&AnnotationSet>) -> String {
    let n = record.n_samples() as f64;
    let lanes = record.n_leads() as f64;
    let height = MARGIN_TOP + MARGIN_BOTTOM + LANE_HEIGHT * lanes;
    let plot_width = CANVAS_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let x_of = |sample: f64| MARGIN_LEFT + sample / n * plot_width;

    let mut svg = String::with_capacity(64 * 1024);
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_WIDTH}" height="{height}" viewBox="0 0 {CANVAS_WIDTH} {height}">"#
    ));
    svg.push('\n');
    svg.push_str(&format!("<title>{}</title>\n", escape(&record.id)));
    svg.push_str(&format!(
        r#"<rect x="0" y="0" width="{CANVAS_WIDTH}" height="{height}" fill="white"/>"#
    ));
    svg.push('\n');

    // Shaded segments first, under the traces.
    if let Some(set) = annotations {
        for seg in &set.segments {
            let x = x_of(seg.onset as f64);
            let w = (x_of(seg.offset as f64) - x).max(0.5);
            svg.push_str(&format!(
                r#"<rect class="segment segment-{}" x="{x:.2}" y="{MARGIN_TOP}" width="{w:.2}" height="{:.2}" fill="{}" fill-opacity="0.18"/>"#,
                seg.wave_class,
                LANE_HEIGHT * lanes,
                class_color(seg.wave_class),
            ));
            svg.push('\n');
        }
    }

    for (lane, (name, samples)) in record.leads.iter().zip(&record.samples).enumerate() {
        let lane_top = MARGIN_TOP + LANE_HEIGHT * lane as f64;
        let mid = lane_top + LANE_HEIGHT / 2.0;
        let (min, max) = samples.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = ((max - min) as f64).max(1e-6);
        let y_of = |v: f32| mid + (0.5 - ((v - min) as f64) / span) * (LANE_HEIGHT - 12.0);

        let mut points = String::new();
        let len = samples.len();
        if len <= MAX_POINTS {
            for (i, &v) in samples.iter().enumerate() {
                points.push_str(&format!("{:.2},{:.2} ", x_of(i as f64), y_of(v)));
            }
        } else {
            let bucket = len.div_ceil(MAX_POINTS / 2);
            let mut i = 0;
            while i < len {
                let end = (i + bucket).min(len);
                let chunk = &samples[i..end];
                let (mut lo, mut hi) = (chunk[0], chunk[0]);
                let (mut lo_at, mut hi_at) = (i, i);
                for (j, &v) in chunk.iter().enumerate() {
                    if v < lo {
                        lo = v;
                        lo_at = i + j;
                    }
                    if v > hi {
                        hi = v;
                        hi_at = i + j;
                    }
                }
                let (first, second) = if lo_at <= hi_at {
                    ((lo_at, lo), (hi_at, hi))
                } else {
                    ((hi_at, hi), (lo_at, lo))
                };
                points.push_str(&format!(
                    "{:.2},{:.2} {:.2},{:.2} ",
                    x_of(first.0 as f64),
                    y_of(first.1),
                    x_of(second.0 as f64),
                    y_of(second.1)
                ));
                i = end;
            }
        }
        svg.push_str(&format!(
            r##"<polyline fill="none" stroke="#333333" stroke-width="0.8" points="{}"/>"##,
            points.trim_end()
        ));
        svg.push('\n');
        svg.push_str(&format!(
            r##"<text x="8" y="{:.2}" font-family="monospace" font-size="12" fill="#333333">{}</text>"##,
            mid + 4.0,
            escape(name)
        ));
        svg.push('\n');
    }

    svg.push_str("</svg>\n");
    svg
}
