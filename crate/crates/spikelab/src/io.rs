//! Output helpers: file writing and a minimal SVG canvas used for phase
//! diagrams, kymograph heatmaps and branch plots.

use crate::error::{Result, SpikeError};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| SpikeError::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| SpikeError::io(path, e))
}

/// Pretty-printed JSON file.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, text + "\n")
}

/// Read a whole file to a string.
pub fn read_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| SpikeError::io(path, e))
}

/// RGB colour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

/// Perceptually ordered colour ramp (dark blue → green → yellow) for `t ∈ [0, 1]`.
pub fn colormap(t: f64) -> Rgb {
    const STOPS: [(f64, f64, f64); 5] = [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.546),
        (0.128, 0.567, 0.551),
        (0.369, 0.789, 0.383),
        (0.993, 0.906, 0.144),
    ];
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let w = s - i as f64;
    let lerp = |a: f64, b: f64| ((a + (b - a) * w) * 255.0).round() as u8;
    let (p, q) = (STOPS[i], STOPS[i + 1]);
    Rgb(lerp(p.0, q.0), lerp(p.1, q.1), lerp(p.2, q.2))
}

/// Affine map from data coordinates to a plotting rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame {
    pub fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        self.top + self.height
            - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.height
    }
}

/// Minimal SVG document builder.
#[derive(Debug, Clone)]
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        let mut svg = Self {
            width,
            height,
            body: String::new(),
        };
        svg.rect(0.0, 0.0, width, height, Rgb(255, 255, 255));
        svg
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: Rgb) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}" shape-rendering="crispEdges"/>"#,
            fill.hex()
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: Rgb, width: f64, dashed: bool) {
        if points.len() < 2 {
            return;
        }
        let pts: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let dash = if dashed {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{width}"{dash}/>"#,
            pts.join(" "),
            stroke.hex()
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: Rgb) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{}"/>"#,
            fill.hex()
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let escaped = content
            .replace('&', "&amp;")
            .replace('<', "&lt;")
            .replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{escaped}</text>"#
        );
    }

    /// Axes box with min/max tick labels and axis titles.
    pub fn axes(&mut self, frame: &Frame, x_label: &str, y_label: &str) {
        let black = Rgb(0, 0, 0);
        let (l, t, w, h) = (frame.left, frame.top, frame.width, frame.height);
        self.polyline(
            &[(l, t), (l + w, t), (l + w, t + h), (l, t + h), (l, t)],
            black,
            1.0,
            false,
        );
        self.text(
            l,
            t + h + 16.0,
            12.0,
            "middle",
            &format!("{:.3}", frame.x_range.0),
        );
        self.text(
            l + w,
            t + h + 16.0,
            12.0,
            "middle",
            &format!("{:.3}", frame.x_range.1),
        );
        self.text(
            l - 6.0,
            t + h,
            12.0,
            "end",
            &format!("{:.3}", frame.y_range.0),
        );
        self.text(
            l - 6.0,
            t + 10.0,
            12.0,
            "end",
            &format!("{:.3}", frame.y_range.1),
        );
        self.text(l + w / 2.0, t + h + 32.0, 14.0, "middle", x_label);
        self.text(l - 40.0, t + h / 2.0, 14.0, "middle", y_label);
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints_and_clamping() {
        assert_eq!(colormap(-1.0), colormap(0.0));
        assert_eq!(colormap(2.0), colormap(1.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
        assert_ne!(colormap(0.0), colormap(1.0));
    }

    #[test]
    fn svg_is_well_formed_and_escapes_text() {
        let mut svg = Svg::new(100.0, 50.0);
        svg.text(1.0, 2.0, 10.0, "start", "a<b & c");
        svg.polyline(&[(0.0, 0.0), (10.0, 10.0)], Rgb(1, 2, 3), 1.0, true);
        let s = svg.finish();
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b &amp; c"));
        assert!(s.contains("#010203"));
    }

    #[test]
    fn frame_maps_corners() {
        let f = Frame {
            x_range: (0.0, 2.0),
            y_range: (1.0, 3.0),
            left: 10.0,
            top: 5.0,
            width: 100.0,
            height: 50.0,
        };
        assert_eq!(f.px(0.0), 10.0);
        assert_eq!(f.px(2.0), 110.0);
        assert_eq!(f.py(1.0), 55.0);
        assert_eq!(f.py(3.0), 5.0);
    }

    #[test]
    fn write_creates_parent_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_file(&p, "hi").unwrap();
        assert_eq!(read_file(&p).unwrap(), "hi");
    }
}
