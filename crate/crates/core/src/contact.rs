//! Self-contact between slender edges: a smoothed penalty on the minimum
//! distance of each non-adjacent edge pair, plus velocity-smoothed Coulomb
//! friction driven by the contact force magnitude.
//!
//! The distance gradient uses the envelope theorem: with the closest-point
//! parameters at their constrained optimum, only the explicit position
//! dependence survives, so grad Delta = w_i n_hat for barycentric weights w.
//! Second derivatives differentiate the active case: clamped parameters stay
//! put, interior ones respond per the implicit function theorem. At a case
//! boundary this picks the one-sided value, which Newton with a line search
//! tolerates. Friction is not a potential force; its Jacobian chains through
//! the contact magnitude, the closest-point motion, the tangential projector,
//! and (scaled by `vel_scale`) the dependence of velocity on position that
//! the time integrator imposes.

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

use crate::energy::ElementBlock;
use crate::math::{outer, Mat3, Vec3};
use crate::topology::{Material, MeshTopology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ContactParams {
    /// Penalty stiffness k_c multiplying the raw barrier energy.
    pub stiffness: f64,
    /// Distance tolerance delta: the barrier smoothing half-width.
    pub delta: f64,
    /// Coulomb friction coefficient; 0 disables friction entirely.
    pub mu: f64,
    /// Slip tolerance: relative tangential speed past which the smooth
    /// sticking-to-sliding factor saturates.
    pub nu_slip: f64,
}

impl ContactParams {
    pub fn new(stiffness: f64, delta: f64, mu: f64, nu_slip: f64) -> Self {
        ContactParams {
            stiffness,
            delta,
            mu,
            nu_slip,
        }
    }
    pub fn k1(&self) -> f64 {
        15.0 / self.delta
    }
    pub fn k2(&self) -> f64 {
        15.0 / self.nu_slip
    }
}

/// Closest-point solution between two segments.
#[derive(Debug, Clone, Copy)]
pub struct Closest {
    pub dist: f64,
    /// Parameter along the first segment, in [0, 1].
    pub s: f64,
    /// Parameter along the second segment, in [0, 1].
    pub t: f64,
}

const PARALLEL_EPS: f64 = 1e-12;

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Global minimum distance between segments (a, b) and (c, d), with the
/// closest-point parameters. Exact in every case: interior-interior,
/// interior-endpoint, endpoint-endpoint, parallel, and collinear.
pub fn min_distance(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> Result<Closest> {
    let d1 = b - a;
    let d2 = d - c;
    let r = a - c;
    let aa = d1.norm_squared();
    let ee = d2.norm_squared();
    if aa == 0.0 || ee == 0.0 {
        return Err(Error::Degenerate("zero-length contact edge".into()));
    }
    let f = d2.dot(&r);
    let cc = d1.dot(&r);
    let bb = d1.dot(&d2);
    let denom = aa * ee - bb * bb;

    let mut s = if denom > PARALLEL_EPS * aa * ee {
        clamp01((bb * f - cc * ee) / denom)
    } else {
        // Parallel: the minimizer is a segment; pick its s = 0 end.
        0.0
    };
    let mut t = (bb * s + f) / ee;
    if t < 0.0 {
        t = 0.0;
        s = clamp01(-cc / aa);
    } else if t > 1.0 {
        t = 1.0;
        s = clamp01((bb - cc) / aa);
    }
    let p = a + d1 * s;
    let q = c + d2 * t;
    Ok(Closest {
        dist: (p - q).norm(),
        s,
        t,
    })
}

/// Raw barrier energy (no stiffness factor): quadratic inside penetration,
/// zero beyond activation, a squared softplus blend across the tolerance
/// band in between.
pub fn contact_energy(dist: f64, diameter: f64, params: &ContactParams) -> f64 {
    energy_derivs(dist, diameter, params).0
}

/// (E, dE/dDelta, d2E/dDelta2) of the raw barrier.
pub(crate) fn energy_derivs(dist: f64, diameter: f64, params: &ContactParams) -> (f64, f64, f64) {
    let delta = params.delta;
    let k1 = params.k1();
    let y = diameter - dist;
    if dist <= diameter - delta {
        ((y) * (y), -2.0 * y, 2.0)
    } else if dist >= diameter + delta {
        (0.0, 0.0, 0.0)
    } else {
        // |y| < delta here, so k1*y stays within +-15: no overflow.
        let l = (k1 * y).exp().ln_1p() / k1;
        let sig = 1.0 / (1.0 + (-k1 * y).exp());
        let e1 = -2.0 * l * sig;
        let e2 = 2.0 * sig * sig + 2.0 * l * k1 * sig * (1.0 - sig);
        (l * l, e1, e2)
    }
}

/// An edge that can collide: a rod edge with its cross-section radius, or a
/// shell edge carrying half the shell thickness.
#[derive(Debug, Clone, Copy)]
pub struct ContactEdge {
    pub nodes: [usize; 2],
    pub radius: f64,
}

/// Every rod edge plus every shell edge (triangles collide through their
/// edges). A pair activates at the sum of the two radii, so rod pairs see
/// the full cross-section diameter and shell pairs the plate thickness.
pub fn contact_edges(topo: &MeshTopology, material: &Material) -> Vec<ContactEdge> {
    let mut out = Vec::with_capacity(topo.rod_edges.len() + topo.shell_edges.len());
    out.extend(topo.rod_edges.iter().map(|&nodes| ContactEdge {
        nodes,
        radius: material.rod.radius,
    }));
    out.extend(topo.shell_edges.iter().map(|se| ContactEdge {
        nodes: se.nodes,
        radius: 0.5 * material.shell.thickness,
    }));
    out
}

/// Candidate pairs within `cutoff`, by uniform spatial hashing of padded
/// bounding boxes. Guaranteed superset of the true set: two segments closer
/// than `cutoff` have overlapping padded boxes, which always share a cell.
/// Pairs sharing a node are excluded; output is sorted and deduplicated, so
/// downstream evaluation order never depends on hash iteration.
pub fn broadphase(edges: &[ContactEdge], xs: &[Vec3], cutoff: f64) -> Vec<[usize; 2]> {
    assert!(cutoff > 0.0, "broadphase cutoff must be positive");
    let inv = 1.0 / cutoff;
    let cell_of = |p: f64| -> i64 { (p * inv).floor() as i64 };

    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (ei, e) in edges.iter().enumerate() {
        let (p, q) = (&xs[e.nodes[0]], &xs[e.nodes[1]]);
        let pad = 0.5 * cutoff;
        let lo = [
            cell_of(p.x.min(q.x) - pad),
            cell_of(p.y.min(q.y) - pad),
            cell_of(p.z.min(q.z) - pad),
        ];
        let hi = [
            cell_of(p.x.max(q.x) + pad),
            cell_of(p.y.max(q.y) + pad),
            cell_of(p.z.max(q.z) + pad),
        ];
        for cx in lo[0]..=hi[0] {
            for cy in lo[1]..=hi[1] {
                for cz in lo[2]..=hi[2] {
                    grid.entry([cx, cy, cz]).or_default().push(ei);
                }
            }
        }
    }

    let adjacent = |i: usize, j: usize| -> bool {
        let (a, b) = (edges[i].nodes, edges[j].nodes);
        a[0] == b[0] || a[0] == b[1] || a[1] == b[0] || a[1] == b[1]
    };
    let mut pairs: Vec<[usize; 2]> = Vec::new();
    for bucket in grid.values() {
        for i in 0..bucket.len() {
            for j in (i + 1)..bucket.len() {
                let (a, b) = (bucket[i].min(bucket[j]), bucket[i].max(bucket[j]));
                if !adjacent(a, b) {
                    pairs.push([a, b]);
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Closest-point geometry differentiated through the active case.
struct PairGeom {
    closest: Closest,
    nhat: Vec3,
    /// Signed weights: dDelta/dx_i = w[i] * nhat over nodes (a, b, c, d).
    w: [f64; 4],
    /// ds/dx_i and dt/dx_i; zero where the parameter is clamped.
    ds: [Vec3; 4],
    dt: [Vec3; 4],
}

fn pair_geometry(x: &[Vec3; 4]) -> Result<Option<PairGeom>> {
    let closest = min_distance(&x[0], &x[1], &x[2], &x[3])?;
    if closest.dist < 1e-12 {
        // Exactly crossing centerlines leave the push-apart direction
        // undefined; the penalty has already peaked, so contribute nothing
        // and let the neighbors resolve it.
        return Ok(None);
    }
    let (s, t) = (closest.s, closest.t);
    let e1 = x[1] - x[0];
    let e2 = x[3] - x[2];
    let p = x[0] + e1 * s;
    let q = x[2] + e2 * t;
    let dvec = p - q;
    let nhat = dvec / closest.dist;

    let s_free = s > 0.0 && s < 1.0;
    let t_free = t > 0.0 && t < 1.0;

    // Optimality residuals R_s = d.e1, R_t = -d.e2 over the free set; their
    // position gradients drive the closest-point motion.
    let rs_x = [
        e1 * (1.0 - s) - dvec,
        e1 * s + dvec,
        e1 * (-(1.0 - t)),
        e1 * (-t),
    ];
    let rt_x = [
        e2 * (-(1.0 - s)),
        e2 * (-s),
        e2 * (1.0 - t) + dvec,
        e2 * t - dvec,
    ];
    let aa = e1.norm_squared();
    let ee = e2.norm_squared();
    let bb = e1.dot(&e2);

    let mut ds = [Vec3::zeros(); 4];
    let mut dt = [Vec3::zeros(); 4];
    match (s_free, t_free) {
        (true, true) => {
            // K = [[a, -b], [-b, e]] from differentiating (R_s, R_t).
            let det = aa * ee - bb * bb;
            for i in 0..4 {
                ds[i] = -(ee * rs_x[i] + bb * rt_x[i]) / det;
                dt[i] = -(bb * rs_x[i] + aa * rt_x[i]) / det;
            }
        }
        (true, false) => {
            for i in 0..4 {
                ds[i] = -rs_x[i] / aa;
            }
        }
        (false, true) => {
            for i in 0..4 {
                dt[i] = -rt_x[i] / ee;
            }
        }
        (false, false) => {}
    }

    Ok(Some(PairGeom {
        closest,
        nhat,
        w: [1.0 - s, s, -(1.0 - t), -t],
        ds,
        dt,
    }))
}

impl PairGeom {
    /// dnhat/dx_j as one 3x3 block per node.
    fn dn(&self, x: &[Vec3; 4]) -> [Mat3; 4] {
        let e1 = x[1] - x[0];
        let e2 = x[3] - x[2];
        let proj = Mat3::identity() - outer(&self.nhat, &self.nhat);
        std::array::from_fn(|j| {
            let dd = Mat3::identity() * self.w[j] + outer(&e1, &self.ds[j])
                - outer(&e2, &self.dt[j]);
            proj * dd / self.closest.dist
        })
    }

    /// d(grad Delta)/dx: block (i, j) of the distance Hessian.
    fn dist_hess(&self, dn: &[Mat3; 4]) -> [[Mat3; 4]; 4] {
        // w = (1-s, s, -(1-t), -t) differentiates to -ds, ds, dt, -dt.
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let dw = match i {
                    0 => -self.ds[j],
                    1 => self.ds[j],
                    2 => self.dt[j],
                    _ => -self.dt[j],
                };
                outer(&self.nhat, &dw) + dn[j] * self.w[i]
            })
        })
    }
}

/// Smooth sticking-to-sliding factor in [0, 1).
pub fn slip_factor(speed: f64, k2: f64) -> f64 {
    2.0 / (1.0 + (-k2 * speed).exp()) - 1.0
}

/// Penalty and friction contribution of one candidate pair, as an energy
/// block over the 12 position DOFs of nodes (a, b, c, d): `grad` holds the
/// energy gradient (minus the force) and `hess` minus the force Jacobian.
/// Returns None when the pair is out of range or exactly crossing.
///
/// `vels` enables friction (with `params.mu > 0`); `vel_scale` is dv/dx of
/// the integrator in use (1/dt for backward Euler, 0 to hold velocities
/// fixed), chained into the friction Jacobian.
pub fn pair_block(
    nodes: [usize; 4],
    x: &[Vec3; 4],
    vels: Option<&[Vec3; 4]>,
    vel_scale: f64,
    diameter: f64,
    params: &ContactParams,
    want_hess: bool,
) -> Result<Option<ElementBlock>> {
    let Some(geom) = pair_geometry(x)? else {
        return Ok(None);
    };
    if geom.closest.dist >= diameter + params.delta {
        return Ok(None);
    }
    let (e_raw, e1_raw, e2_raw) = energy_derivs(geom.closest.dist, diameter, params);
    let kc = params.stiffness;
    let (e1, e2) = (kc * e1_raw, kc * e2_raw);

    let mut block = ElementBlock::default();
    let dofs: Vec<usize> = nodes
        .iter()
        .flat_map(|&n| (0..3).map(move |r| 3 * n + r))
        .collect();
    block.reset(&dofs);
    block.energy = kc * e_raw;

    let grad_d: [Vec3; 4] = std::array::from_fn(|i| geom.nhat * geom.w[i]);
    for i in 0..4 {
        for r in 0..3 {
            block.add_grad(3 * i + r, e1 * grad_d[i][r]);
        }
    }

    let dn = (want_hess || vels.is_some()).then(|| geom.dn(x));
    if want_hess {
        let hd = geom.dist_hess(dn.as_ref().unwrap());
        for i in 0..4 {
            for j in 0..4 {
                for r in 0..3 {
                    for c in 0..3 {
                        let v = e2 * grad_d[i][r] * grad_d[j][c] + e1 * hd[i][j][(r, c)];
                        block.add_hess(3 * i + r, 3 * j + c, v);
                    }
                }
            }
        }
    }

    let (Some(v), true) = (vels, params.mu > 0.0) else {
        return Ok(Some(block));
    };

    // Tangential relative velocity of the first edge over the second, taken
    // at the closest points.
    let (s, t) = (geom.closest.s, geom.closest.t);
    let v_rel = v[0] * (1.0 - s) + v[1] * s - v[2] * (1.0 - t) - v[3] * t;
    let n_dot_v = geom.nhat.dot(&v_rel);
    let u = v_rel - geom.nhat * n_dot_v;
    let speed = u.norm();
    let k2 = params.k2();
    let gamma = slip_factor(speed, k2);
    // gamma * uhat, smooth through u = 0.
    let g_vec = if speed < 1e-12 {
        u * (0.5 * k2)
    } else {
        u * (gamma / speed)
    };

    // Per-node force magnitude |F_con_i| and its sign pattern: the first
    // edge is dragged against u, the second along it.
    let strength = -e1; // = |dE/dDelta|, positive in every active branch
    let wa = [1.0 - s, s, 1.0 - t, t];
    let eps = [-1.0, -1.0, 1.0, 1.0];
    for i in 0..4 {
        let f = g_vec * (eps[i] * params.mu * strength * wa[i]);
        for r in 0..3 {
            block.add_grad(3 * i + r, -f[r]);
        }
    }

    if want_hess {
        let dn = dn.as_ref().unwrap();
        let proj = Mat3::identity() - outer(&geom.nhat, &geom.nhat);
        // dg/du of the smoothed direction factor.
        let dg: Mat3 = if speed < 1e-12 {
            Mat3::identity() * (0.5 * k2)
        } else {
            let uhat = u / speed;
            let expm = (-k2 * speed).exp();
            let dgamma = 2.0 * k2 * expm / ((1.0 + expm) * (1.0 + expm));
            outer(&uhat, &uhat) * dgamma
                + (Mat3::identity() - outer(&uhat, &uhat)) * (gamma / speed)
        };
        let dv = [v[1] - v[0], v[3] - v[2]];
        for j in 0..4 {
            // du/dx_j: velocity chain, closest-point slide, and the turning
            // tangential projector.
            let dv_rel = Mat3::identity() * (geom.w[j] * vel_scale) + outer(&dv[0], &geom.ds[j])
                - outer(&dv[1], &geom.dt[j]);
            let du = proj * dv_rel - dn[j] * n_dot_v - outer(&geom.nhat, &(dn[j].transpose() * v_rel));
            let dg_du = dg * du;
            for i in 0..4 {
                // d|F_con_i|/dx_j through the barrier slope and the weight.
                let dwa = match i {
                    0 => -geom.ds[j],
                    1 => geom.ds[j],
                    2 => -geom.dt[j],
                    _ => geom.dt[j],
                };
                let dm = grad_d[j] * (-e2 * wa[i]) + dwa * strength;
                let dfr = (outer(&g_vec, &dm) + dg_du * (strength * wa[i]))
                    * (eps[i] * params.mu);
                for r in 0..3 {
                    for c in 0..3 {
                        block.add_hess(3 * i + r, 3 * j + c, -dfr[(r, c)]);
                    }
                }
            }
        }
    }

    Ok(Some(block))
}

/// Detect and evaluate every active pair. Blocks come back ordered by the
/// (sorted) edge-index pair, and each is computed independently, so the
/// result is bitwise identical no matter the thread count.
pub fn collect(
    edges: &[ContactEdge],
    xs: &[Vec3],
    vels: Option<&[Vec3]>,
    vel_scale: f64,
    params: &ContactParams,
    want_hess: bool,
) -> Result<Vec<ElementBlock>> {
    for e in edges {
        if (xs[e.nodes[1]] - xs[e.nodes[0]]).norm_squared() == 0.0 {
            return Err(Error::Degenerate(format!(
                "zero-length contact edge ({}, {})",
                e.nodes[0] + 1,
                e.nodes[1] + 1
            )));
        }
    }
    let max_r = edges.iter().map(|e| e.radius).fold(0.0, f64::max);
    let cutoff = 2.0 * max_r + params.delta;
    let candidates = broadphase(edges, xs, cutoff);

    let eval = |&[i, j]: &[usize; 2]| -> Result<Option<ElementBlock>> {
        let (ei, ej) = (&edges[i], &edges[j]);
        let nodes = [ei.nodes[0], ei.nodes[1], ej.nodes[0], ej.nodes[1]];
        let x = nodes.map(|n| xs[n]);
        let v = vels.map(|vs| nodes.map(|n| vs[n]));
        pair_block(
            nodes,
            &x,
            v.as_ref(),
            vel_scale,
            ei.radius + ej.radius,
            params,
            want_hess,
        )
    };

    let evaluated: Result<Vec<Option<ElementBlock>>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            candidates.par_iter().map(eval).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            candidates.iter().map(eval).collect()
        }
    };
    Ok(evaluated?.into_iter().flatten().collect())
}

/// Dense total force and force Jacobian over all position DOFs; for tests
/// and small scenes. The solver consumes the blocks from [`collect`]
/// directly instead.
pub fn assemble_dense(
    edges: &[ContactEdge],
    xs: &[Vec3],
    vels: Option<&[Vec3]>,
    vel_scale: f64,
    params: &ContactParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = 3 * xs.len();
    let mut force = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    for block in collect(edges, xs, vels, vel_scale, params, true)? {
        for i in 0..block.n {
            force[block.dofs[i]] -= block.grad[i];
            for j in 0..block.n {
                jac[(block.dofs[i], block.dofs[j])] -= block.hess_at(i, j);
            }
        }
    }
    Ok((force, jac))
}
