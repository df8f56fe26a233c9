//! Standalone SVG rendering of 2D regions: a heatmap of `min_i W_i`, the
//! `rho` contour of every class, anchors, an optional oracle boundary
//! (dashed) and trajectories.

use std::fmt::Write as _;

use zubov::nets::LevelFunction;
use zubov::verify::GridSpec;
use zubov::{Error, Result};

const SIZE: f64 = 600.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub type Segment = [[f64; 2]; 2];

/// Everything drawn by [`render`]. `levels[k]` holds `W_k` at every node of
/// `grid`, last axis fastest.
#[derive(Clone, Debug)]
pub struct Scene {
    pub grid: GridSpec,
    pub rho: f64,
    pub levels: Vec<Vec<f64>>,
    pub anchors: Vec<[f64; 2]>,
    pub oracle: Option<Vec<Option<usize>>>,
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

fn check_2d(dim: usize) -> Result<()> {
    if dim != 2 {
        return Err(Error::Config(format!("plots need a 2-dimensional state space, got {dim}")));
    }
    Ok(())
}

impl Scene {
    /// Evaluates every class level of `head` on `grid`.
    pub fn from_head<H: LevelFunction + ?Sized>(head: &H, grid: &GridSpec, rho: f64) -> Result<Self> {
        check_2d(head.dim())?;
        check_2d(grid.dim())?;
        let points = grid.points()?;
        let levels = (0..head.num_classes()).map(|k| head.level_values(&points, k)).collect::<Result<_>>()?;
        let anchors = (0..head.num_classes())
            .map(|k| {
                let c = head.anchor_point(k);
                [c[0], c[1]]
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            rho,
            levels,
            anchors,
            oracle: None,
            trajectories: Vec::new(),
        })
    }
}

/// Marching squares for `values == level` on a 2D grid, in state
/// coordinates. Saddle cells are split by the cell-center average.
pub fn contour(values: &[f64], grid: &GridSpec, level: f64) -> Result<Vec<Segment>> {
    check_2d(grid.dim())?;
    let n = grid.resolution;
    if values.len() != n * n {
        return Err(Error::Config(format!("contour needs {} values, got {}", n * n, values.len())));
    }
    let at = |i: usize, j: usize| values[i * n + j] - level;
    let node = |i: usize, j: usize| [grid.coordinate(0, i), grid.coordinate(1, j)];
    let cross = |p: [f64; 2], q: [f64; 2], a: f64, b: f64| {
        let t = if a == b { 0.5 } else { a / (a - b) };
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut out = Vec::new();
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            // Corners counter-clockwise from (i, j).
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: Vec<f64> = corners.iter().map(|&(a, b)| at(a, b)).collect();
            let p: Vec<[f64; 2]> = corners.iter().map(|&(a, b)| node(a, b)).collect();
            let mut hits = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (v[e], v[(e + 1) % 4]);
                if (a < 0.0) != (b < 0.0) {
                    hits.push(cross(p[e], p[(e + 1) % 4], a, b));
                }
            }
            match hits.len() {
                2 => out.push([hits[0], hits[1]]),
                4 => {
                    let center = v.iter().sum::<f64>() / 4.0;
                    if (center < 0.0) == (v[0] < 0.0) {
                        out.push([hits[0], hits[3]]);
                        out.push([hits[1], hits[2]]);
                    } else {
                        out.push([hits[0], hits[1]]);
                        out.push([hits[2], hits[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

struct View {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl View {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let x = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * SIZE;
        let y = SIZE - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * SIZE;
        (x, y)
    }
}

/// Perceptually ordered ramp from dark (W = 0) to light (W = 1).
fn shade(w: f64) -> String {
    let t = w.clamp(0.0, 1.0);
    let r = (20.0 + 235.0 * t) as u8;
    let g = (30.0 + 210.0 * t) as u8;
    let b = (70.0 + 150.0 * t) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn path_of(segments: &[Segment], view: &View) -> String {
    let mut d = String::new();
    for s in segments {
        let (x0, y0) = view.px(s[0]);
        let (x1, y1) = view.px(s[1]);
        let _ = write!(d, "M{x0:.2} {y0:.2}L{x1:.2} {y1:.2}");
    }
    d
}

pub fn render(scene: &Scene) -> Result<String> {
    let grid = &scene.grid;
    check_2d(grid.dim())?;
    let n = grid.resolution;
    let view = View {
        lo: [grid.lower[0], grid.lower[1]],
        hi: [grid.upper[0], grid.upper[1]],
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r##"<rect width="{SIZE}" height="{SIZE}" fill="#ffffff"/>"##);

    // Heatmap: one rectangle per node, centered on it.
    let cell = SIZE / (n - 1) as f64;
    let _ = writeln!(s, r#"<g id="heatmap" shape-rendering="crispEdges">"#);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let w = scene.levels.iter().map(|l| l[k]).fold(f64::INFINITY, f64::min);
            let (x, y) = view.px([grid.coordinate(0, i), grid.coordinate(1, j)]);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x - cell / 2.0,
                y - cell / 2.0,
                cell,
                cell,
                shade(if w.is_finite() { w } else { 1.0 })
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if let Some(oracle) = &scene.oracle {
        let _ = writeln!(s, r#"<g id="oracle" fill="none" stroke-width="2" stroke-dasharray="6 4">"#);
        for k in 0..scene.levels.len() {
            let indicator: Vec<f64> = oracle.iter().map(|o| if *o == Some(k) { 0.0 } else { 1.0 }).collect();
            let segs = contour(&indicator, grid, 0.5)?;
            let _ = writeln!(s, r#"<path stroke="{}" d="{}"/>"#, PALETTE[k % PALETTE.len()], path_of(&segs, &view));
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r#"<g id="contours" fill="none" stroke-width="2.5">"#);
    for (k, level) in scene.levels.iter().enumerate() {
        let segs = contour(level, grid, scene.rho)?;
        let _ = writeln!(s, r#"<path stroke="{}" d="{}"/>"#, PALETTE[k % PALETTE.len()], path_of(&segs, &view));
    }
    let _ = writeln!(s, "</g>");

    if !scene.trajectories.is_empty() {
        let _ = writeln!(s, r##"<g id="trajectories" fill="none" stroke="#000000" stroke-opacity="0.6" stroke-width="1">"##);
        for t in &scene.trajectories {
            let pts: Vec<String> = t
                .iter()
                .map(|p| {
                    let (x, y) = view.px(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
        }
        let _ = writeln!(s, "</g>");
    }

    let _ = writeln!(s, r##"<g id="anchors" stroke="#000000" stroke-width="1.5">"##);
    for (k, a) in scene.anchors.iter().enumerate() {
        let (x, y) = view.px(*a);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="{}"/>"#,
            PALETTE[k % PALETTE.len()]
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}
