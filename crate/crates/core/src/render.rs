//! SVG rendering of a frame: ground truth, warped previous ground truth,
//! noisy samples and temporal matches.
//!
//! Colors per class: road boundaries green, lane dividers red, pedestrian
//! crossings blue. The ego frame is drawn with x (forward) pointing up.

use std::fmt::Write as _;

use crate::geometry::{min_bounding_rect, ClassId, MapElement, PerceptionRange, Point2};
use crate::matching::MatchResult;

pub fn class_color(class: ClassId) -> &'static str {
    match class {
        ClassId::ROAD_BOUNDARY => "#2ca02c",
        ClassId::LANE_DIVIDER => "#d62728",
        ClassId::PED_CROSSING => "#1f77b4",
        _ => "#7f7f7f",
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameLayers<'a> {
    pub ground_truth: &'a [MapElement],
    pub prev_warped: &'a [MapElement],
    pub samples: &'a [MapElement],
    pub matches: &'a [MatchResult],
}

fn svg_xy(p: Point2) -> (f64, f64) {
    (-p.y, -p.x)
}

fn path_data(points: &[Point2]) -> String {
    let mut d = String::new();
    for (i, &p) in points.iter().enumerate() {
        let (x, y) = svg_xy(p);
        write!(d, "{}{:.4},{:.4}", if i == 0 { "M" } else { " L" }, x, y).unwrap();
    }
    d
}

fn polyline_layer(out: &mut String, id: &str, elements: &[MapElement], style: &str) {
    writeln!(out, "  <g id=\"{id}\" fill=\"none\" {style}>").unwrap();
    for e in elements {
        writeln!(
            out,
            "    <path class=\"{}\" stroke=\"{}\" d=\"{}\"/>",
            e.class.name(),
            class_color(e.class),
            path_data(e.points())
        )
        .unwrap();
    }
    writeln!(out, "  </g>").unwrap();
}

pub fn render_frame_svg(title: &str, layers: &FrameLayers<'_>, range: &PerceptionRange) -> String {
    let (hl, hw) = (range.half_length, range.half_width);
    let mut out = String::new();
    writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>").unwrap();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.4} {:.4} {:.4} {:.4}\" width=\"{}\" height=\"{}\">",
        -hw - 1.0,
        -hl - 1.0,
        2.0 * hw + 2.0,
        2.0 * hl + 6.0,
        ((2.0 * hw + 2.0) * 12.0).round(),
        ((2.0 * hl + 6.0) * 12.0).round()
    )
    .unwrap();
    writeln!(out, "  <title>{}</title>", escape(title)).unwrap();
    writeln!(
        out,
        "  <rect x=\"{:.4}\" y=\"{:.4}\" width=\"{:.4}\" height=\"{:.4}\" fill=\"white\" stroke=\"#999999\" stroke-width=\"0.1\"/>",
        -hw,
        -hl,
        2.0 * hw,
        2.0 * hl
    )
    .unwrap();

    polyline_layer(&mut out, "samples", layers.samples, "stroke-width=\"0.1\" stroke-opacity=\"0.25\"");
    polyline_layer(
        &mut out,
        "prev-warped",
        layers.prev_warped,
        "stroke-width=\"0.25\" stroke-opacity=\"0.6\" stroke-dasharray=\"0.8 0.5\"",
    );
    polyline_layer(&mut out, "ground-truth", layers.ground_truth, "stroke-width=\"0.3\"");

    writeln!(out, "  <g id=\"matches\" stroke=\"#000000\" stroke-width=\"0.12\">").unwrap();
    for m in layers.matches {
        let (Some(j), Some(cur)) = (m.matched_prev(), layers.ground_truth.get(m.current_index)) else {
            continue;
        };
        let Some(prev) = layers.prev_warped.get(j) else {
            continue;
        };
        let a = min_bounding_rect(&cur.polyline);
        let b = min_bounding_rect(&prev.polyline);
        let (x1, y1) = svg_xy(Point2::new(a.x, a.y));
        let (x2, y2) = svg_xy(Point2::new(b.x, b.y));
        writeln!(out, "    <line x1=\"{x1:.4}\" y1=\"{y1:.4}\" x2=\"{x2:.4}\" y2=\"{y2:.4}\"/>").unwrap();
    }
    writeln!(out, "  </g>").unwrap();

    // ego marker and legend
    writeln!(out, "  <polygon points=\"0,-1.5 0.8,0.8 -0.8,0.8\" fill=\"#333333\"/>").unwrap();
    let legend = [
        (ClassId::ROAD_BOUNDARY, "road boundary"),
        (ClassId::LANE_DIVIDER, "lane divider"),
        (ClassId::PED_CROSSING, "ped crossing"),
    ];
    for (i, (class, label)) in legend.iter().enumerate() {
        let x = -hw + i as f64 * (2.0 * hw / 3.0);
        let y = hl + 3.0;
        writeln!(
            out,
            "  <line x1=\"{:.4}\" y1=\"{y:.4}\" x2=\"{:.4}\" y2=\"{y:.4}\" stroke=\"{}\" stroke-width=\"0.4\"/>",
            x,
            x + 2.0,
            class_color(*class)
        )
        .unwrap();
        writeln!(
            out,
            "  <text x=\"{:.4}\" y=\"{:.4}\" font-size=\"1.5\" font-family=\"sans-serif\">{label}</text>",
            x + 2.5,
            y + 0.5
        )
        .unwrap();
    }
    writeln!(out, "</svg>").unwrap();
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
