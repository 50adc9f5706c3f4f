//! SVG arrow and grid plots of a 2-D velocity embedding.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{DsneError, Result};

const CANVAS: f64 = 800.0;
const MARGIN: f64 = 40.0;
/// Median arrow length as a fraction of the plot width.
pub const ARROW_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotStyle {
    Arrow,
    Grid,
}

/// Arrow in data coordinates, already scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrow {
    pub from: [f64; 2],
    pub to: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bounds {
    min: [f64; 2],
    max: [f64; 2],
}

impl Bounds {
    fn of(y: ArrayView2<'_, f64>) -> Self {
        let mut b = Bounds {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for row in y.outer_iter() {
            for a in 0..2 {
                b.min[a] = b.min[a].min(row[a]);
                b.max[a] = b.max[a].max(row[a]);
            }
        }
        b
    }

    fn width(&self) -> f64 {
        let w = self.max[0] - self.min[0];
        if w > 0.0 {
            w
        } else {
            (self.max[1] - self.min[1]).max(1.0)
        }
    }
}

fn check_inputs(y: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Result<()> {
    if y.ncols() != 2 || w.ncols() != 2 {
        return Err(DsneError::usage("plotting requires 2-D map"));
    }
    if y.nrows() != w.nrows() {
        return Err(DsneError::Dimension {
            context: "plot rows of W against Y",
            expected: y.nrows(),
            found: w.nrows(),
        });
    }
    if y.nrows() == 0 {
        return Err(DsneError::usage("nothing to plot"));
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    })
}

fn scaled(anchors: Vec<([f64; 2], [f64; 2])>, width: f64) -> Vec<Arrow> {
    let lengths: Vec<f64> = anchors.iter().map(|(_, w)| w[0].hypot(w[1])).collect();
    let s = median(lengths).map_or(0.0, |m| ARROW_FRACTION * width / m);
    anchors
        .into_iter()
        .map(|(p, w)| Arrow {
            from: p,
            to: [p[0] + s * w[0], p[1] + s * w[1]],
        })
        .collect()
}

/// One arrow per nonzero row, anchored at its map point.
pub fn arrow_field(y: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Result<Vec<Arrow>> {
    check_inputs(y, w)?;
    let anchors = y
        .outer_iter()
        .zip(w.outer_iter())
        .filter(|(_, wi)| wi[0] != 0.0 || wi[1] != 0.0)
        .map(|(yi, wi)| ([yi[0], yi[1]], [wi[0], wi[1]]))
        .collect();
    Ok(scaled(anchors, Bounds::of(y).width()))
}

/// Cell-mean arrows on a `grid_nx` x `grid_nx` partition of the bounding box,
/// anchored at the centers of nonempty cells.
pub fn grid_field(y: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, grid_nx: usize) -> Result<Vec<Arrow>> {
    check_inputs(y, w)?;
    if grid_nx == 0 {
        return Err(DsneError::usage("grid size must be at least 1"));
    }
    let b = Bounds::of(y);
    let span = [b.max[0] - b.min[0], b.max[1] - b.min[1]];
    let cell_of = |v: f64, a: usize| -> usize {
        if span[a] == 0.0 {
            return 0;
        }
        (((v - b.min[a]) / span[a] * grid_nx as f64) as usize).min(grid_nx - 1)
    };
    let mut sums = vec![[0.0f64; 3]; grid_nx * grid_nx];
    for (yi, wi) in y.outer_iter().zip(w.outer_iter()) {
        let c = cell_of(yi[1], 1) * grid_nx + cell_of(yi[0], 0);
        sums[c][0] += wi[0];
        sums[c][1] += wi[1];
        sums[c][2] += 1.0;
    }
    let mut anchors = Vec::new();
    for (c, s) in sums.iter().enumerate() {
        if s[2] == 0.0 {
            continue;
        }
        let mean = [s[0] / s[2], s[1] / s[2]];
        if mean == [0.0, 0.0] {
            continue;
        }
        let (cx, cy) = (c % grid_nx, c / grid_nx);
        let center = [
            b.min[0] + (cx as f64 + 0.5) * span[0] / grid_nx as f64,
            b.min[1] + (cy as f64 + 0.5) * span[1] / grid_nx as f64,
        ];
        anchors.push((center, mean));
    }
    Ok(scaled(anchors, b.width()))
}

/// Renders arrows over the map points; the vertical axis points up.
pub fn render_svg(y: ArrayView2<'_, f64>, arrows: &[Arrow]) -> String {
    let mut b = Bounds::of(y);
    for a in arrows {
        for p in [a.from, a.to] {
            for k in 0..2 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
    }
    let span = (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]);
    let scale = if span > 0.0 { (CANVAS - 2.0 * MARGIN) / span } else { 1.0 };
    let cx = 0.5 * (b.min[0] + b.max[0]);
    let cy = 0.5 * (b.min[1] + b.max[1]);
    let px = |p: [f64; 2]| {
        (
            CANVAS / 2.0 + (p[0] - cx) * scale,
            CANVAS / 2.0 - (p[1] - cy) * scale,
        )
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(out, r##"<g class="points" fill="#9e9e9e">"##);
    for row in y.outer_iter() {
        let (x, yy) = px([row[0], row[1]]);
        let _ = writeln!(out, r#"<circle cx="{x:.3}" cy="{yy:.3}" r="2"/>"#);
    }
    let _ = writeln!(out, "</g>");
    for a in arrows {
        let (x0, y0) = px(a.from);
        let (x1, y1) = px(a.to);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len = dx.hypot(dy);
        let _ = writeln!(out, r#"<g class="arrow">"#);
        let _ = writeln!(
            out,
            r##"<line x1="{x0:.3}" y1="{y0:.3}" x2="{x1:.3}" y2="{y1:.3}" stroke="#1f4e9c" stroke-width="1.2"/>"##
        );
        if len > 0.0 {
            let head = (0.35 * len).clamp(2.0, 8.0);
            let (ux, uy) = (dx / len, dy / len);
            let (bx, by) = (x1 - head * ux, y1 - head * uy);
            let (nx, ny) = (-uy * head * 0.5, ux * head * 0.5);
            let _ = writeln!(
                out,
                r##"<polygon points="{x1:.3},{y1:.3} {:.3},{:.3} {:.3},{:.3}" fill="#1f4e9c"/>"##,
                bx + nx,
                by + ny,
                bx - nx,
                by - ny
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

pub fn plot_svg(
    y: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    style: PlotStyle,
    grid_nx: usize,
) -> Result<String> {
    let arrows = match style {
        PlotStyle::Arrow => arrow_field(y, w)?,
        PlotStyle::Grid => grid_field(y, w, grid_nx)?,
    };
    Ok(render_svg(y, &arrows))
}
