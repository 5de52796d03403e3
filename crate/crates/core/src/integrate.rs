//! Depth from normals by weighted least squares on grid differences.
//!
//! Under an orthographic camera a normal `(n_x, n_y, n_z)` gives the slopes
//! `p = dz/dx = -n_x / n_z` and `q = dz/dy = -n_y / n_z`, with `x` along
//! columns and `y` along rows. Every pair of 4-neighbouring valid pixels
//! contributes `w_e (z_b - z_a - d_e)^2`, where `d_e` is the step length
//! times the mean slope of the two pixels and `w_e` the mean of their
//! weights. Nothing couples across the grid border or the mask. The first
//! valid pixel of each connected component is pinned to zero and the
//! remaining normal equations are solved by conjugate gradients.

use crate::error::{Error, Result};
use crate::exec;
use crate::normal::NormalMap;
use std::collections::VecDeque;
use std::fmt::Write as _;

pub const DEFAULT_Z_FLOOR: f64 = 0.05;
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub height: usize,
    pub width: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub weight: Vec<f64>,
    pub mask: Vec<bool>,
}

/// `n_z` is clamped below by `z_floor` before dividing; the clamped value
/// doubles as the pixel weight.
pub fn normals_to_gradients(n: &NormalMap, z_floor: f64) -> Result<Gradients> {
    if !(z_floor > 0.0) {
        return Err(Error::arg(format!("z_floor must be positive, got {z_floor}")));
    }
    let len = n.len();
    let (mut p, mut q, mut weight) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for (i, (v, &valid)) in n.normals().iter().zip(n.mask()).enumerate() {
        if valid {
            let nz = v[2].max(z_floor);
            p[i] = -v[0] / nz;
            q[i] = -v[1] / nz;
            weight[i] = nz;
        }
    }
    Ok(Gradients { height: n.height(), width: n.width(), p, q, weight, mask: n.mask().to_vec() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthField {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthField {
    pub fn new(height: usize, width: usize, depth: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || depth.len() != height * width || mask.len() != depth.len() {
            return Err(Error::arg("depth field dimensions do not match its payload"));
        }
        if depth.iter().zip(&mask).any(|(d, &m)| m && !d.is_finite()) {
            return Err(Error::NonFinite("depth".into()));
        }
        Ok(Self { height, width, depth, mask })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationParams {
    /// Relative residual target `|r| <= tol |r_0|`.
    pub tol: f64,
    /// Defaults to `10 * H * W`.
    pub max_iter: Option<usize>,
    /// Grid step along columns and rows.
    pub dx: f64,
    pub dy: f64,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None, dx: 1.0, dy: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentReport {
    pub pixels: usize,
    pub reference: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `|r|` after each iteration, starting with the initial residual.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Integration {
    pub depth: DepthField,
    pub components: Vec<ComponentReport>,
}

impl Integration {
    pub fn converged(&self) -> bool {
        self.components.iter().all(|c| c.converged)
    }
}

/// 4-connected components of the mask, each listed in scan order.
pub fn mask_components(height: usize, width: usize, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut comps = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / width, i % width);
            let mut push = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            };
            if c > 0 {
                push(i - 1);
            }
            if c + 1 < width {
                push(i + 1);
            }
            if r > 0 {
                push(i - width);
            }
            if r + 1 < height {
                push(i + width);
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

struct Edge {
    a: usize,
    b: usize,
    w: f64,
    d: f64,
}

struct System {
    n: usize,
    edges: Vec<Edge>,
    reference: usize,
}

impl System {
    /// `L z` for the weighted graph Laplacian with the reference row and
    /// column replaced by the identity.
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for e in &self.edges {
            let za = if e.a == self.reference { 0.0 } else { z[e.a] };
            let zb = if e.b == self.reference { 0.0 } else { z[e.b] };
            let f = e.w * (zb - za);
            out[e.b] += f;
            out[e.a] -= f;
        }
        out[self.reference] = z[self.reference];
    }

    fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n];
        for e in &self.edges {
            b[e.b] += e.w * e.d;
            b[e.a] -= e.w * e.d;
        }
        b[self.reference] = 0.0;
        b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn solve_component(g: &Gradients, members: &[usize], params: &IntegrationParams, max_iter: usize) -> (Vec<f64>, ComponentReport) {
    let index: std::collections::HashMap<usize, usize> = members.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let w = g.width;
    let mut edges = Vec::new();
    for (k, &i) in members.iter().enumerate() {
        let (r, c) = (i / w, i % w);
        if c + 1 < w {
            if let Some(&kb) = index.get(&(i + 1)) {
                edges.push(Edge {
                    a: k,
                    b: kb,
                    w: 0.5 * (g.weight[i] + g.weight[i + 1]),
                    d: params.dx * 0.5 * (g.p[i] + g.p[i + 1]),
                });
            }
        }
        if r + 1 < g.height {
            if let Some(&kb) = index.get(&(i + w)) {
                edges.push(Edge {
                    a: k,
                    b: kb,
                    w: 0.5 * (g.weight[i] + g.weight[i + w]),
                    d: params.dy * 0.5 * (g.q[i] + g.q[i + w]),
                });
            }
        }
    }
    let sys = System { n: members.len(), edges, reference: 0 };
    let b = sys.rhs();
    let mut z = vec![0.0; sys.n];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut ad = vec![0.0; sys.n];
    let mut rr = dot(&r, &r);
    let r0 = rr.sqrt();
    let mut residuals = vec![r0];
    let mut iterations = 0;
    let mut converged = r0 == 0.0;
    while !converged && iterations < max_iter {
        sys.apply(&d, &mut ad);
        let dad = dot(&d, &ad);
        if !(dad > 0.0) {
            break;
        }
        let alpha = rr / dad;
        for k in 0..sys.n {
            z[k] += alpha * d[k];
            r[k] -= alpha * ad[k];
        }
        let rr_new = dot(&r, &r);
        iterations += 1;
        residuals.push(rr_new.sqrt());
        if rr_new.sqrt() <= params.tol * r0 {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..sys.n {
            d[k] = r[k] + beta * d[k];
        }
    }
    let report = ComponentReport { pixels: sys.n, reference: members[0], iterations, converged, residuals };
    (z, report)
}

pub fn integrate_depth(g: &Gradients, params: &IntegrationParams) -> Result<Integration> {
    let len = g.height * g.width;
    if [g.p.len(), g.q.len(), g.weight.len(), g.mask.len()].iter().any(|&l| l != len) || len == 0 {
        return Err(Error::arg("gradient rasters do not share one shape"));
    }
    if !(params.tol > 0.0) {
        return Err(Error::arg(format!("tolerance must be positive, got {}", params.tol)));
    }
    if !(params.dx > 0.0 && params.dy > 0.0) {
        return Err(Error::arg("grid steps must be positive"));
    }
    for i in 0..len {
        if g.mask[i] && !(g.p[i].is_finite() && g.q[i].is_finite() && g.weight[i].is_finite() && g.weight[i] > 0.0) {
            return Err(Error::NonFinite(format!("gradient or weight at pixel {i}")));
        }
    }
    let comps = mask_components(g.height, g.width, &g.mask);
    if comps.is_empty() {
        return Err(Error::arg("mask has no valid pixels"));
    }
    let max_iter = params.max_iter.unwrap_or(10 * len);
    let solved = exec::map_range(comps.len(), |c| solve_component(g, &comps[c], params, max_iter));
    let mut depth = vec![0.0; len];
    let mut components = Vec::with_capacity(comps.len());
    for (members, (z, report)) in comps.iter().zip(solved) {
        for (&i, v) in members.iter().zip(z) {
            depth[i] = v;
        }
        components.push(report);
    }
    Ok(Integration { depth: DepthField::new(g.height, g.width, depth, g.mask.clone())?, components })
}

/// RMSE after removing each field's mean over the shared mask.
pub fn depth_rmse(pred: &DepthField, gt: &DepthField) -> Result<f64> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::ShapeMismatch { expected: (gt.height, gt.width, 1), actual: (pred.height, pred.width, 1) });
    }
    let shared: Vec<usize> = (0..gt.depth.len()).filter(|&i| pred.mask[i] && gt.mask[i]).collect();
    if shared.is_empty() {
        return Err(Error::arg("depth fields share no valid pixels"));
    }
    let n = shared.len() as f64;
    let mp = shared.iter().map(|&i| pred.depth[i]).sum::<f64>() / n;
    let mg = shared.iter().map(|&i| gt.depth[i]).sum::<f64>() / n;
    let sse: f64 = shared.iter().map(|&i| ((pred.depth[i] - mp) - (gt.depth[i] - mg)).powi(2)).sum();
    Ok((sse / n).sqrt())
}

/// Wavefront OBJ text: one `v x y z` per valid pixel (x along columns, y
/// along rows) and two triangles per fully valid grid cell.
pub fn mesh_obj(depth: &DepthField, dx: f64, dy: f64) -> String {
    let w = depth.width;
    let mut id = vec![0usize; depth.depth.len()];
    let mut out = String::new();
    let mut next = 1;
    for i in 0..depth.depth.len() {
        if depth.mask[i] {
            let _ = writeln!(out, "v {} {} {}", (i % w) as f64 * dx, (i / w) as f64 * dy, depth.depth[i]);
            id[i] = next;
            next += 1;
        }
    }
    for r in 0..depth.height.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            let (a, b, cc, d) = (r * w + c, r * w + c + 1, (r + 1) * w + c, (r + 1) * w + c + 1);
            if [a, b, cc, d].iter().all(|&i| depth.mask[i]) {
                let _ = writeln!(out, "f {} {} {}", id[a], id[cc], id[b]);
                let _ = writeln!(out, "f {} {} {}", id[b], id[cc], id[d]);
            }
        }
    }
    out
}
