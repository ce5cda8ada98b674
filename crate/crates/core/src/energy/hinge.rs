//! Dihedral (hinge) bending between two triangles sharing an edge.
//!
//! The hinge edge runs m -> n with m < n; the angle follows the right-hand
//! rule about that direction, so swapping the wings negates it. The normals
//! here are built directly from the stencil (not from stored triangle
//! winding), which keeps the sign convention independent of input order.

use super::{ElementBlock, EvalCtx};
use crate::math::{outer, Mat3, Vec3};
use crate::topology::HingeSpring;
use crate::{Error, Result};

/// Signed dihedral angle for the stencil (l, m, n, o): wings l and o,
/// shared edge m -> n. Zero when coplanar with wings on opposite sides.
pub fn hinge_angle(xl: &Vec3, xm: &Vec3, xn: &Vec3, xo: &Vec3) -> Result<f64> {
    let e0 = xn - xm;
    let n1 = e0.cross(&(xl - xm));
    let n2 = (xo - xm).cross(&e0);
    let (l0, l1, l2) = (e0.norm(), n1.norm(), n2.norm());
    if l0 < 1e-14 || l1 < 1e-14 || l2 < 1e-14 {
        return Err(Error::Degenerate("hinge stencil has a degenerate triangle".into()));
    }
    let ehat = e0 / l0;
    let (n1, n2) = (n1 / l1, n2 / l2);
    Ok(n1.cross(&n2).dot(&ehat).atan2(n1.dot(&n2)))
}

pub fn energy(s: &HingeSpring, ctx: &EvalCtx) -> f64 {
    let [l, m, n, o] = s.nodes;
    match hinge_angle(&ctx.xs[l], &ctx.xs[m], &ctx.xs[n], &ctx.xs[o]) {
        Ok(phi) => {
            let d = phi - s.phi_bar;
            0.5 * s.stiffness * d * d
        }
        Err(_) => f64::INFINITY,
    }
}

/// Angle derivatives for one triangle of the stencil, vertex order matching
/// an ordered triple whose winding normal is `n_hat`.
struct TriSide {
    n_hat: Vec3,
    inv_2a: f64,
    /// CCW opposite edge per local vertex.
    e: [Vec3; 3],
    /// Scaled in-plane perpendiculars e_v x n_hat.
    t: [Vec3; 3],
    /// u = ehat x n_hat, the angle-variation axis factor.
    u: Vec3,
    /// d(e_v)/d(x_w) coefficients.
    c: [[f64; 3]; 3],
}

impl TriSide {
    /// `tri` is the ordered triple, `which_e0` gives (index of m, index of n)
    /// within the triple for the edge-length derivative bookkeeping.
    fn new(tri: [&Vec3; 3], ehat: &Vec3) -> Option<TriSide> {
        let big_n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
        let norm = big_n.norm();
        if norm < 1e-14 {
            return None;
        }
        let n_hat = big_n / norm;
        let e = [tri[2] - tri[1], tri[0] - tri[2], tri[1] - tri[0]];
        let t = [e[0].cross(&n_hat), e[1].cross(&n_hat), e[2].cross(&n_hat)];
        let mut c = [[0.0; 3]; 3];
        // e_v = tri[v+2] - tri[v+1] (cyclic)
        for v in 0..3 {
            c[v][(v + 2) % 3] = 1.0;
            c[v][(v + 1) % 3] = -1.0;
        }
        Some(TriSide {
            n_hat,
            inv_2a: 1.0 / norm,
            e,
            t,
            u: ehat.cross(&n_hat),
            c,
        })
    }
}

pub fn fill(s: &HingeSpring, ctx: &EvalCtx, block: &mut ElementBlock, want_hess: bool) {
    let [l, m, n, o] = s.nodes;
    let mut dofs = [0usize; 12];
    for (b, node) in [l, m, n, o].into_iter().enumerate() {
        for r in 0..3 {
            dofs[3 * b + r] = ctx.layout.node_dof(node, r);
        }
    }
    block.reset(&dofs);

    let (xl, xm, xn, xo) = (&ctx.xs[l], &ctx.xs[m], &ctx.xs[n], &ctx.xs[o]);
    let e0 = xn - xm;
    let e0_len = e0.norm();
    let ehat = e0 / e0_len;

    // Ordered triples: (m, n, l) and (m, o, n); their winding normals match
    // the convention in `hinge_angle`.
    let (t1, t2) = match (
        TriSide::new([xm, xn, xl], &ehat),
        TriSide::new([xm, xo, xn], &ehat),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            block.energy = f64::INFINITY;
            return;
        }
    };
    let phi = t1
        .n_hat
        .cross(&t2.n_hat)
        .dot(&ehat)
        .atan2(t1.n_hat.dot(&t2.n_hat));
    let d = phi - s.phi_bar;
    block.energy = 0.5 * s.stiffness * d * d;

    // Stencil slot of each triangle-local vertex: T1 = (m, n, l), T2 = (m, o, n).
    const SLOT1: [usize; 3] = [1, 2, 0];
    const SLOT2: [usize; 3] = [1, 3, 2];
    // d(e0)/d(x_slot) for the shared edge m -> n.
    const EPS0: [f64; 4] = [0.0, -1.0, 1.0, 0.0];

    // dphi/dx_v = alpha_v n1 + beta_v n2.
    let mut alpha = [0.0; 4];
    let mut beta = [0.0; 4];
    for v in 0..3 {
        alpha[SLOT1[v]] += -t1.t[v].dot(&t1.u) * t1.inv_2a;
        beta[SLOT2[v]] += t2.t[v].dot(&t2.u) * t2.inv_2a;
    }
    let mut dphi = [Vec3::zeros(); 4];
    for slot in 0..4 {
        dphi[slot] = t1.n_hat * alpha[slot] + t2.n_hat * beta[slot];
    }
    for slot in 0..4 {
        let g = dphi[slot] * (s.stiffness * d);
        for r in 0..3 {
            block.add_grad(3 * slot + r, g[r]);
        }
    }

    if !want_hess {
        return;
    }

    // Second derivatives of the angle itself.
    let proj = Mat3::identity() - outer(&ehat, &ehat);
    // d(alpha_v)/dx_w and d(beta_v)/dx_w, per stencil slot.
    let mut dalpha = [[Vec3::zeros(); 4]; 4];
    let mut dbeta = [[Vec3::zeros(); 4]; 4];
    for side in 0..2 {
        let (tri, slots, coeffs, sgn) = if side == 0 {
            (&t1, &SLOT1, &mut dalpha, -1.0)
        } else {
            (&t2, &SLOT2, &mut dbeta, 1.0)
        };
        for v in 0..3 {
            // s_v = t^v . u collapses to e_v . ehat, so its gradient keeps only
            // the edge-difference term and the unit-edge projector.
            let sv = tri.e[v].dot(&ehat);
            for w in 0..3 {
                let ds = ehat * tri.c[v][w] + proj * tri.e[v] * (EPS0[slots[w]] / e0_len);
                // coeff_v = sgn * s_v / 2A: product rule with d(1/2A) = t^w/(2A)^2
                let da = (ds + tri.t[w] * (sv * tri.inv_2a)) * (sgn * tri.inv_2a);
                coeffs[slots[v]][slots[w]] += da;
            }
        }
    }

    // H[v][w] = n1 (dalpha_v/dx_w)^T + alpha_v dn1/dx_w + same for side 2.
    let mut hphi = [[Mat3::zeros(); 4]; 4];
    for v in 0..4 {
        for w in 0..4 {
            hphi[v][w] += outer(&t1.n_hat, &dalpha[v][w]) + outer(&t2.n_hat, &dbeta[v][w]);
        }
        for w_local in 0..3 {
            hphi[v][SLOT1[w_local]] +=
                outer(&t1.t[w_local], &t1.n_hat) * (alpha[v] * t1.inv_2a);
            hphi[v][SLOT2[w_local]] +=
                outer(&t2.t[w_local], &t2.n_hat) * (beta[v] * t2.inv_2a);
        }
    }

    for v in 0..4 {
        for w in 0..4 {
            for r in 0..3 {
                for c in 0..3 {
                    let h = s.stiffness
                        * (dphi[v][r] * dphi[w][c] + d * hphi[v][w][(r, c)]);
                    block.add_hess(3 * v + r, 3 * w + c, h);
                }
            }
        }
    }
}
