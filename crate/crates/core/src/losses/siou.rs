//! SIoU box-regression loss: IoU complement plus angle, distance, and shape
//! costs, `loss = c_iou + (angle + distance + shape) / 2`.
//!
//! With center offsets `(dx, dy)` and squared center distance `s`, the
//! angle cost reduces to the closed form `2|dx||dy| / s` (equivalently
//! `sin(2a)` for center-line angle `a`), which is what both the loss and
//! the gradient use. The distance cost is `sum_t 1 - exp(-gamma * rho_t)`
//! with `gamma = 2 - angle` and `rho` the squared center offsets normalized
//! by the enclosing-box extents; the shape cost is
//! `sum_t (1 - exp(-omega_t))^4` with `omega` the relative width/height
//! mismatch. Coincident centers take the angle-cost limit of 0 rather than
//! dividing by zero.

use super::{LossError, SHAPE_EXPONENT};
use crate::clue::BoundingBox;
use crate::detect::iou;
use serde::Serialize;

/// Squared-center-distance threshold below which centers count as coincident.
const CENTER_EPS_SQ: f64 = 1e-24;

/// The four SIoU components. `c_iou` is `1 - IoU`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiouTerms {
    pub c_iou: f64,
    pub angle_cost: f64,
    pub distance_cost: f64,
    pub shape_cost: f64,
}

struct Geometry {
    dx: f64,
    dy: f64,
    s: f64,
    cw: f64,
    ch: f64,
    pw: f64,
    ph: f64,
    tw: f64,
    th: f64,
}

fn geometry(pred: &BoundingBox, truth: &BoundingBox) -> Geometry {
    let (pcx, pcy) = pred.center();
    let (tcx, tcy) = truth.center();
    let dx = tcx - pcx;
    let dy = tcy - pcy;
    Geometry {
        dx,
        dy,
        s: dx * dx + dy * dy,
        cw: pred.x_max.max(truth.x_max) - pred.x_min.min(truth.x_min),
        ch: pred.y_max.max(truth.y_max) - pred.y_min.min(truth.y_min),
        pw: pred.width(),
        ph: pred.height(),
        tw: truth.width(),
        th: truth.height(),
    }
}

fn angle_cost(g: &Geometry) -> f64 {
    if g.s <= CENTER_EPS_SQ {
        0.0
    } else {
        2.0 * g.dx.abs() * g.dy.abs() / g.s
    }
}

/// SIoU loss and its components. Zero iff the boxes coincide.
pub fn siou_loss(pred: &BoundingBox, truth: &BoundingBox) -> Result<(f64, SiouTerms), LossError> {
    if !pred.is_valid() || !truth.is_valid() {
        return Err(LossError::InvalidBox);
    }
    let g = geometry(pred, truth);
    let angle = angle_cost(&g);
    let gamma = 2.0 - angle;
    let rho_x = (g.dx / g.cw).powi(2);
    let rho_y = (g.dy / g.ch).powi(2);
    let distance = (1.0 - (-gamma * rho_x).exp()) + (1.0 - (-gamma * rho_y).exp());
    let omega_w = (g.pw - g.tw).abs() / g.pw.max(g.tw);
    let omega_h = (g.ph - g.th).abs() / g.ph.max(g.th);
    let shape = (1.0 - (-omega_w).exp()).powi(SHAPE_EXPONENT)
        + (1.0 - (-omega_h).exp()).powi(SHAPE_EXPONENT);
    let c_iou = 1.0 - iou(pred, truth);
    let terms = SiouTerms {
        c_iou,
        angle_cost: angle,
        distance_cost: distance,
        shape_cost: shape,
    };
    Ok((c_iou + (angle + distance + shape) / 2.0, terms))
}

/// Analytic gradient of the SIoU loss with respect to the four prediction
/// coordinates `[x_min, y_min, x_max, y_max]`, truth held fixed.
///
/// The loss is piecewise smooth; at its kinks (axis-aligned centers,
/// equal widths or heights, touching edges) this returns the one-sided
/// formula with the kink terms dropped. Gradient verification samples away
/// from those sets.
pub fn siou_grad_pred(pred: &BoundingBox, truth: &BoundingBox) -> Result<[f64; 4], LossError> {
    if !pred.is_valid() || !truth.is_valid() {
        return Err(LossError::InvalidBox);
    }
    let g = geometry(pred, truth);

    // d(dx)/du and d(dy)/du for u = [px1, py1, px2, py2]; dx = tcx - (px1+px2)/2.
    let ddx = [-0.5, 0.0, -0.5, 0.0];
    let ddy = [0.0, -0.5, 0.0, -0.5];
    // Enclosing-box extents move only when the prediction edge is binding.
    let dcw = [
        if pred.x_min < truth.x_min { -1.0 } else { 0.0 },
        0.0,
        if pred.x_max > truth.x_max { 1.0 } else { 0.0 },
        0.0,
    ];
    let dch = [
        0.0,
        if pred.y_min < truth.y_min { -1.0 } else { 0.0 },
        0.0,
        if pred.y_max > truth.y_max { 1.0 } else { 0.0 },
    ];
    let dpw = [-1.0, 0.0, 1.0, 0.0];
    let dph = [0.0, -1.0, 0.0, 1.0];

    // IoU term.
    let ix1 = pred.x_min.max(truth.x_min);
    let iy1 = pred.y_min.max(truth.y_min);
    let ix2 = pred.x_max.min(truth.x_max);
    let iy2 = pred.y_max.min(truth.y_max);
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let union = g.pw * g.ph + g.tw * g.th - inter;
    let d_inter = if inter > 0.0 {
        [
            if pred.x_min > truth.x_min { -ih } else { 0.0 },
            if pred.y_min > truth.y_min { -iw } else { 0.0 },
            if pred.x_max < truth.x_max { ih } else { 0.0 },
            if pred.y_max < truth.y_max { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };
    let d_pred_area = [-g.ph, -g.pw, g.ph, g.pw];

    // Angle cost: 2|dx||dy| / s.
    let angle = angle_cost(&g);
    let (dang_ddx, dang_ddy) = if g.s <= CENTER_EPS_SQ || g.dx == 0.0 || g.dy == 0.0 {
        (0.0, 0.0)
    } else {
        let s2 = g.s * g.s;
        (
            2.0 * g.dx.signum() * g.dy.abs() * (g.dy * g.dy - g.dx * g.dx) / s2,
            2.0 * g.dy.signum() * g.dx.abs() * (g.dx * g.dx - g.dy * g.dy) / s2,
        )
    };

    // Distance cost pieces.
    let gamma = 2.0 - angle;
    let rho_x = (g.dx / g.cw).powi(2);
    let rho_y = (g.dy / g.ch).powi(2);
    let ex = (-gamma * rho_x).exp();
    let ey = (-gamma * rho_y).exp();
    let ddelta_dgamma = rho_x * ex + rho_y * ey;

    // Shape cost pieces.
    let omega_w = (g.pw - g.tw).abs() / g.pw.max(g.tw);
    let omega_h = (g.ph - g.th).abs() / g.ph.max(g.th);
    let shape_slope = |omega: f64| {
        SHAPE_EXPONENT as f64 * (1.0 - (-omega).exp()).powi(SHAPE_EXPONENT - 1) * (-omega).exp()
    };
    let domw_dpw = if g.pw > g.tw {
        g.tw / (g.pw * g.pw)
    } else if g.pw < g.tw {
        -1.0 / g.tw
    } else {
        0.0
    };
    let domh_dph = if g.ph > g.th {
        g.th / (g.ph * g.ph)
    } else if g.ph < g.th {
        -1.0 / g.th
    } else {
        0.0
    };

    let mut grad = [0.0; 4];
    for u in 0..4 {
        let d_union = d_pred_area[u] - d_inter[u];
        let d_iou = (d_inter[u] * union - inter * d_union) / (union * union);

        let d_angle = dang_ddx * ddx[u] + dang_ddy * ddy[u];
        let d_gamma = -d_angle;
        let d_rho_x =
            2.0 * g.dx / (g.cw * g.cw) * ddx[u] - 2.0 * g.dx * g.dx / (g.cw * g.cw * g.cw) * dcw[u];
        let d_rho_y =
            2.0 * g.dy / (g.ch * g.ch) * ddy[u] - 2.0 * g.dy * g.dy / (g.ch * g.ch * g.ch) * dch[u];
        let d_distance = ddelta_dgamma * d_gamma + gamma * ex * d_rho_x + gamma * ey * d_rho_y;

        let d_shape =
            shape_slope(omega_w) * domw_dpw * dpw[u] + shape_slope(omega_h) * domh_dph * dph[u];

        grad[u] = -d_iou + 0.5 * (d_angle + d_distance + d_shape);
    }
    Ok(grad)
}
