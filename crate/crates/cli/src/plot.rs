//! Static SVG renderings of a run: phase portrait with the safe-set
//! boundary, h(t) time series, and weight trajectories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use safe_mbrl::sim::{SafeSetSpec, ScenarioConfig, SimLog};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 46.0;

const SERIES_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_bounds(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Frame {
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).abs().max(1e-9);
            (lo - 0.06 * span, hi + 0.06 * span)
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Frame {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = write!(
            body,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = write!(
            body,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Svg { body }
    }

    fn axes(&mut self, f: &Frame, x_label: &str, y_label: &str) {
        let x0 = MARGIN_L;
        let x1 = WIDTH - MARGIN_R;
        let y0 = HEIGHT - MARGIN_B;
        let y1 = MARGIN_T;
        let _ = write!(
            self.body,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black" stroke-width="1"/>"#
        );
        let _ = write!(
            self.body,
            r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black" stroke-width="1"/>"#
        );
        for i in 0..=4 {
            let fx = f.x_min + (f.x_max - f.x_min) * i as f64 / 4.0;
            let px = f.sx(fx);
            let _ = write!(
                self.body,
                r#"<line x1="{px}" y1="{y0}" x2="{px}" y2="{}" stroke="black" stroke-width="1"/>"#,
                y0 + 4.0
            );
            let _ = write!(
                self.body,
                r#"<text x="{px}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
                y0 + 16.0,
                tick(fx)
            );
            let fy = f.y_min + (f.y_max - f.y_min) * i as f64 / 4.0;
            let py = f.sy(fy);
            let _ = write!(
                self.body,
                r#"<line x1="{}" y1="{py}" x2="{x0}" y2="{py}" stroke="black" stroke-width="1"/>"#,
                x0 - 4.0
            );
            let _ = write!(
                self.body,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{}</text>"#,
                x0 - 7.0,
                py + 3.0,
                tick(fy)
            );
        }
        let _ = write!(
            self.body,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = write!(
            self.body,
            r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    fn polyline(&mut self, f: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let stride = (pts.len() / 2000).max(1);
        let mut s = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i % stride != 0 && i + 1 != pts.len() {
                continue;
            }
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            let _ = write!(s, "{:.2},{:.2} ", f.sx(*x), f.sy(*y));
        }
        let dash = if dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = write!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            s.trim_end()
        );
    }

    fn circle(&mut self, f: &Frame, cx: f64, cy: f64, r_world: f64, fill: &str, stroke: &str) {
        let rx = f.sx(cx + r_world) - f.sx(cx);
        let _ = write!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{fill}" stroke="{stroke}" stroke-width="1"/>"#,
            f.sx(cx),
            f.sy(cy),
            rx.abs()
        );
    }

    fn marker(&mut self, f: &Frame, x: f64, y: f64, color: &str) {
        let _ = write!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
            f.sx(x),
            f.sy(y)
        );
    }

    fn label(&mut self, x: f64, y: f64, text: &str, color: &str) {
        let _ = write!(
            self.body,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            escape(text)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>");
        self.body
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Polyline sampling of the safe-set boundary `h = 0` over the frame.
fn boundary_points(set: &SafeSetSpec, ys: (f64, f64)) -> Vec<(f64, f64)> {
    match *set {
        SafeSetSpec::Parabola { p } => {
            let (lo, hi) = ys;
            (0..=400)
                .map(|i| {
                    let y = lo + (hi - lo) * i as f64 / 400.0;
                    (p * y * y + 1.0, y)
                })
                .collect()
        }
        SafeSetSpec::Disk { center, radius } => (0..=360)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 180.0;
                (center[0] + radius * a.cos(), center[1] + radius * a.sin())
            })
            .collect(),
    }
}

fn phase_plot(log: &SimLog, cfg: &ScenarioConfig) -> String {
    let traj: Vec<(f64, f64)> = log.records.iter().map(|r| (r.x[0], r.x[1])).collect();
    let mut x_min = traj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut x_max = traj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut y_min = traj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut y_max = traj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    // Keep the origin and the relevant boundary piece in view.
    x_min = x_min.min(0.0);
    x_max = x_max.max(0.0);
    y_min = y_min.min(0.0);
    y_max = y_max.max(0.0);
    if let SafeSetSpec::Disk { center, radius } = cfg.safe_set {
        x_min = x_min.min(center[0] - radius);
        x_max = x_max.max(center[0] + radius);
        y_min = y_min.min(center[1] - radius);
        y_max = y_max.max(center[1] + radius);
    }
    if let SafeSetSpec::Parabola { .. } = cfg.safe_set {
        x_max = x_max.max(1.2);
    }
    let f = Frame::from_bounds(x_min, x_max, y_min, y_max);

    let mut svg = Svg::new(&format!("{} - state trajectory", cfg.name));
    svg.axes(&f, "x1", "x2");
    if let SafeSetSpec::Disk { center, radius } = cfg.safe_set {
        svg.circle(&f, center[0], center[1], radius, "#cccccc", "#555555");
    }
    svg.polyline(
        &f,
        &boundary_points(&cfg.safe_set, (f.y_min, f.y_max)),
        "black",
        false,
    );
    svg.polyline(&f, &traj, SERIES_COLORS[0], false);
    if let Some(first) = traj.first() {
        svg.marker(&f, first.0, first.1, "#2ca02c");
    }
    if let Some(last) = traj.last() {
        svg.marker(&f, last.0, last.1, "#d62728");
    }
    svg.label(
        MARGIN_L + 6.0,
        MARGIN_T + 12.0,
        "black: h = 0 boundary, green: start, red: end",
        "#333333",
    );
    svg.finish()
}

fn h_plot(log: &SimLog, cfg: &ScenarioConfig) -> String {
    let pts: Vec<(f64, f64)> = log.records.iter().map(|r| (r.t, r.h)).collect();
    let h_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let h_max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let f = Frame::from_bounds(
        0.0,
        pts.last().map(|p| p.0).unwrap_or(1.0).max(1e-9),
        h_min.min(0.0),
        h_max.max(0.0),
    );
    let mut svg = Svg::new(&format!("{} - constraint value h(x(t))", cfg.name));
    svg.axes(&f, "t", "h");
    svg.polyline(&f, &[(f.x_min, 0.0), (f.x_max, 0.0)], "#888888", true);
    svg.polyline(&f, &pts, SERIES_COLORS[0], false);
    svg.finish()
}

type Series = Vec<(f64, f64)>;

fn weights_plot(log: &SimLog, cfg: &ScenarioConfig) -> String {
    // For plants with an identified drift, show the estimated drift weights
    // against their true values; otherwise show the critic/actor weights.
    let (series, truth, title): (Vec<Series>, Vec<f64>, String) = if log.param_dim > 0 {
        let s = (0..log.param_dim)
            .map(|i| {
                log.records
                    .iter()
                    .map(|r| (r.t, r.theta_hat[i]))
                    .collect::<Vec<_>>()
            })
            .collect();
        (
            s,
            vec![-0.6, -1.0, 1.0],
            format!("{} - drift weight estimates", cfg.name),
        )
    } else {
        let mut s: Vec<Series> = Vec::new();
        for i in 0..log.basis_len {
            s.push(log.records.iter().map(|r| (r.t, r.w_c[i])).collect());
        }
        for i in 0..log.basis_len {
            s.push(log.records.iter().map(|r| (r.t, r.w_a[i])).collect());
        }
        (
            s,
            Vec::new(),
            format!("{} - critic (solid) and actor (dashed) weights", cfg.name),
        )
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &series {
        for &(_, v) in s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    for &v in &truth {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let t_end = log.records.last().map(|r| r.t).unwrap_or(1.0).max(1e-9);
    let f = Frame::from_bounds(0.0, t_end, lo, hi);
    let mut svg = Svg::new(&title);
    svg.axes(&f, "t", "weight");
    for (i, &v) in truth.iter().enumerate() {
        svg.polyline(
            &f,
            &[(f.x_min, v), (f.x_max, v)],
            SERIES_COLORS[i % SERIES_COLORS.len()],
            true,
        );
    }
    // Critic series i and actor series i + L share a color; dashes tell
    // them apart.
    let solid = if log.param_dim > 0 {
        series.len()
    } else {
        log.basis_len
    };
    for (i, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[(i % solid.max(1)) % SERIES_COLORS.len()];
        svg.polyline(&f, s, color, i >= solid);
    }
    svg.finish()
}

/// Render the three standard plots next to the log. Returns the paths.
pub fn render_plots(
    log: &SimLog,
    cfg: &ScenarioConfig,
    out_dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    let files = [
        (format!("{}_phase.svg", cfg.name), phase_plot(log, cfg)),
        (format!("{}_h.svg", cfg.name), h_plot(log, cfg)),
        (format!("{}_weights.svg", cfg.name), weights_plot(log, cfg)),
    ];
    let mut paths = Vec::new();
    for (name, content) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use safe_mbrl::scenarios::scenario_by_name;
    use safe_mbrl::sim::run_scenario;

    /// Minimal well-formedness check: tags balance and attributes are quoted.
    pub fn assert_well_formed_xml(s: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = s;
        while let Some(open) = rest.find('<') {
            let close = rest[open..].find('>').expect("unclosed tag") + open;
            let tag = &rest[open + 1..close];
            rest = &rest[close + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched close tag");
            } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
                let name: String = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
            // Quote balance inside the tag.
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in {tag}");
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert!(!rest.contains('<'));
    }

    #[test]
    fn parabola_boundary_is_the_expected_curve() {
        let pts = boundary_points(&SafeSetSpec::Parabola { p: -1.0 }, (-2.0, 2.0));
        for (x, y) in pts {
            assert!((x - (1.0 - y * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn renders_three_well_formed_svgs() {
        let mut cfg = scenario_by_name("nonlinear_convex_safe").unwrap();
        cfg.horizon = 0.2;
        let log = run_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = render_plots(&log, &cfg, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            let content = std::fs::read_to_string(p).unwrap();
            assert!(!content.is_empty());
            assert!(content.starts_with("<svg"));
            assert_well_formed_xml(&content);
        }
    }

    #[test]
    fn integrator_phase_plot_draws_the_obstacle_disk() {
        let mut cfg = scenario_by_name("integrator_lqr").unwrap();
        cfg.horizon = 0.05;
        let log = run_scenario(&cfg).unwrap();
        let svg = phase_plot(&log, &cfg);
        assert!(svg.contains("circle"));
        assert_well_formed_xml(&svg);
    }
}
