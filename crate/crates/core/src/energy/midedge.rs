//! Per-triangle mid-edge bending: the shape operator is assembled from the
//! three edge rotations xi and the projections f^k = n.tau^k0 of the face
//! normal onto the per-edge axes captured at step start.
//!
//! Derivatives follow the thin-shell simplification: the in-plane tangents
//! t^k and coefficients c^k are treated as constants, only n/(2A) and the
//! f^k vary. The force is therefore defined by these formulas rather than
//! as the exact differential of the energy; the finite-difference oracles
//! in the tests freeze c and t the same way. One consequence is a mildly
//! asymmetric position-position Hessian block, which the unsymmetric linear
//! solver downstream accepts.

use super::{ElementBlock, EvalCtx};
use crate::math::{outer, Mat3, Vec3};
use crate::topology::MidedgeElement;
use crate::{Error, Result};

/// Quantities the derivative formulas treat as constant, captured at the
/// evaluation point.
pub struct Frozen {
    /// a^k = c^k t^k (x) t^k per side.
    pub a: [Mat3; 3],
    pub tr_a: [f64; 3],
    /// Frozen per-side axes tau^{k,0}.
    pub tau: [Vec3; 3],
    /// Scaled in-plane tangent of the side opposite each vertex.
    pub tv: [Vec3; 3],
    pub signs: [f64; 3],
    /// k_b * rest area, the energy prefactor.
    pub kb_area: f64,
    pub nu: f64,
    pub lambda_bar: Mat3,
}

fn face_normal(x0: &Vec3, x1: &Vec3, x2: &Vec3) -> Result<(Vec3, f64)> {
    let n = (x1 - x0).cross(&(x2 - x0));
    let norm = n.norm();
    if norm < 1e-14 {
        return Err(Error::Degenerate("mid-edge element has zero area".into()));
    }
    Ok((n / norm, norm)) // (unit normal, 2A)
}

/// Capture the frozen coefficient set at the given configuration.
pub fn freeze(e: &MidedgeElement, xs: [&Vec3; 3], tau0: &[Vec3]) -> Result<Frozen> {
    let (n_hat, _two_a) = face_normal(xs[0], xs[1], xs[2])?;
    // Sides in winding order: (0,1), (1,2), (2,0); outward scaled tangents.
    let side = [xs[1] - xs[0], xs[2] - xs[1], xs[0] - xs[2]];
    let t: [Vec3; 3] = [
        side[0].cross(&n_hat),
        side[1].cross(&n_hat),
        side[2].cross(&n_hat),
    ];
    let mut a = [Mat3::zeros(); 3];
    let mut tr_a = [0.0; 3];
    let mut tau = [Vec3::zeros(); 3];
    for k in 0..3 {
        tau[k] = tau0[e.edges[k]];
        let that = t[k].normalize();
        let align = that.dot(&tau[k]);
        if align.abs() < 1e-8 {
            return Err(Error::Degenerate(
                "mid-edge axis nearly tangent to the face (severely sheared element)".into(),
            ));
        }
        let c = 1.0 / (e.area_bar * e.edge_len_bar[k] * align);
        a[k] = outer(&t[k], &t[k]) * c;
        tr_a[k] = a[k].trace();
    }
    // Vertex 0 faces side 1, vertex 1 side 2, vertex 2 side 0.
    let tv = [t[1], t[2], t[0]];
    Ok(Frozen {
        a,
        tr_a,
        tau,
        tv,
        signs: e.signs,
        kb_area: e.stiffness * e.area_bar,
        nu: e.poisson,
        lambda_bar: e.lambda_bar,
    })
}

fn shape_operator(fr: &Frozen, n_hat: &Vec3, xi: &[f64; 3]) -> Mat3 {
    let mut lambda = Mat3::zeros();
    for k in 0..3 {
        let w = fr.signs[k] * xi[k] - n_hat.dot(&fr.tau[k]);
        lambda += fr.a[k] * w;
    }
    lambda
}

/// Shape operator at an arbitrary configuration (fresh coefficients), used
/// to capture the natural state.
pub fn shape_operator_at(
    e: &MidedgeElement,
    xs: &[Vec3],
    xi: &[f64; 3],
    tau0: &[Vec3],
) -> Result<Mat3> {
    let pts = [&xs[e.nodes[0]], &xs[e.nodes[1]], &xs[e.nodes[2]]];
    let fr = freeze(e, pts, tau0)?;
    let (n_hat, _) = face_normal(pts[0], pts[1], pts[2])?;
    Ok(shape_operator(&fr, &n_hat, xi))
}

fn energy_of(fr: &Frozen, lambda: &Mat3) -> f64 {
    let d = lambda - fr.lambda_bar;
    let tr = d.trace();
    fr.kb_area * ((1.0 - fr.nu) * (d * d).trace() + fr.nu * tr * tr)
}

/// Energy with frozen coefficients; the FD oracle for the gradient
/// differentiates exactly this function of the vertex positions.
pub fn energy_frozen(fr: &Frozen, xs: [&Vec3; 3], xi: &[f64; 3]) -> f64 {
    match face_normal(xs[0], xs[1], xs[2]) {
        Ok((n_hat, _)) => energy_of(fr, &shape_operator(fr, &n_hat, xi)),
        Err(_) => f64::INFINITY,
    }
}

/// dE/dw^k where w^k = s^k xi^k - f^k.
fn p_coeffs(fr: &Frozen, lambda: &Mat3) -> [f64; 3] {
    let d = lambda - fr.lambda_bar;
    let tr = d.trace();
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = fr.kb_area
            * (2.0 * (1.0 - fr.nu) * (d * fr.a[k]).trace() + 2.0 * fr.nu * tr * fr.tr_a[k]);
    }
    p
}

fn q_coeffs(fr: &Frozen) -> [[f64; 3]; 3] {
    let mut q = [[0.0; 3]; 3];
    for k in 0..3 {
        for j in 0..3 {
            q[k][j] = fr.kb_area
                * (2.0 * (1.0 - fr.nu) * (fr.a[j] * fr.a[k]).trace()
                    + 2.0 * fr.nu * fr.tr_a[j] * fr.tr_a[k]);
        }
    }
    q
}

/// Analytic gradient with frozen coefficients: position part and xi part.
/// The FD oracle for the Hessian differentiates this map.
pub fn grad_frozen(fr: &Frozen, xs: [&Vec3; 3], xi: &[f64; 3]) -> ([Vec3; 3], [f64; 3]) {
    let (n_hat, two_a) = face_normal(xs[0], xs[1], xs[2]).expect("non-degenerate element");
    let lambda = shape_operator(fr, &n_hat, xi);
    let p = p_coeffs(fr, &lambda);
    let mut gx = [Vec3::zeros(); 3];
    for v in 0..3 {
        let mut coeff = 0.0;
        for k in 0..3 {
            coeff += p[k] * fr.tau[k].dot(&fr.tv[v]);
        }
        gx[v] = n_hat * (-coeff / two_a);
    }
    let gxi = [
        p[0] * fr.signs[0],
        p[1] * fr.signs[1],
        p[2] * fr.signs[2],
    ];
    (gx, gxi)
}

pub fn energy(e: &MidedgeElement, ctx: &EvalCtx) -> f64 {
    let pts = [
        &ctx.xs[e.nodes[0]],
        &ctx.xs[e.nodes[1]],
        &ctx.xs[e.nodes[2]],
    ];
    let xi = [
        ctx.xis[e.edges[0]],
        ctx.xis[e.edges[1]],
        ctx.xis[e.edges[2]],
    ];
    match freeze(e, pts, &ctx.frames.tau0) {
        Ok(fr) => energy_frozen(&fr, pts, &xi),
        Err(_) => f64::INFINITY,
    }
}

pub fn fill(e: &MidedgeElement, ctx: &EvalCtx, block: &mut ElementBlock, want_hess: bool) {
    let mut dofs = [0usize; 12];
    for (b, node) in e.nodes.into_iter().enumerate() {
        for r in 0..3 {
            dofs[3 * b + r] = ctx.layout.node_dof(node, r);
        }
    }
    for k in 0..3 {
        dofs[9 + k] = ctx.layout.xi_dof(e.edges[k]);
    }
    block.reset(&dofs);

    let pts = [
        &ctx.xs[e.nodes[0]],
        &ctx.xs[e.nodes[1]],
        &ctx.xs[e.nodes[2]],
    ];
    let xi = [
        ctx.xis[e.edges[0]],
        ctx.xis[e.edges[1]],
        ctx.xis[e.edges[2]],
    ];
    let fr = match freeze(e, pts, &ctx.frames.tau0) {
        Ok(fr) => fr,
        Err(_) => {
            block.energy = f64::INFINITY;
            return;
        }
    };
    let (n_hat, two_a) = face_normal(pts[0], pts[1], pts[2]).expect("checked by freeze");
    let lambda = shape_operator(&fr, &n_hat, &xi);
    block.energy = energy_of(&fr, &lambda);

    let p = p_coeffs(&fr, &lambda);
    // df^k/dx_v = (tau^k . t^v) n / 2A
    let mut g = [[Vec3::zeros(); 3]; 3];
    for k in 0..3 {
        for v in 0..3 {
            g[k][v] = n_hat * (fr.tau[k].dot(&fr.tv[v]) / two_a);
        }
    }
    for v in 0..3 {
        let mut gv = Vec3::zeros();
        for k in 0..3 {
            gv -= g[k][v] * p[k];
        }
        for r in 0..3 {
            block.add_grad(3 * v + r, gv[r]);
        }
    }
    for k in 0..3 {
        block.add_grad(9 + k, p[k] * fr.signs[k]);
    }

    if !want_hess {
        return;
    }
    let q = q_coeffs(&fr);

    // xi-xi block
    for k in 0..3 {
        for j in 0..3 {
            block.add_hess(9 + k, 9 + j, fr.signs[k] * fr.signs[j] * q[k][j]);
        }
    }
    // position-xi blocks
    for j in 0..3 {
        for v in 0..3 {
            let mut h = Vec3::zeros();
            for k in 0..3 {
                h -= g[k][v] * (q[j][k] * fr.signs[j]);
            }
            for r in 0..3 {
                block.add_hess(3 * v + r, 9 + j, h[r]);
                block.add_hess(9 + j, 3 * v + r, h[r]);
            }
        }
    }
    // position-position: Gauss-Newton part plus the exact derivative of
    // n/(2A) in the frozen-coefficient gradient.
    let inv_4a2 = 1.0 / (two_a * two_a);
    for v in 0..3 {
        for u in 0..3 {
            let mut h = Mat3::zeros();
            for k in 0..3 {
                for j in 0..3 {
                    h += outer(&g[k][v], &g[j][u]) * q[k][j];
                }
                let sym = outer(&fr.tv[u], &n_hat) + outer(&n_hat, &fr.tv[u]);
                h -= sym * (p[k] * fr.tau[k].dot(&fr.tv[v]) * inv_4a2);
            }
            for r in 0..3 {
                for c in 0..3 {
                    block.add_hess(3 * v + r, 3 * u + c, h[(r, c)]);
                }
            }
        }
    }
}
