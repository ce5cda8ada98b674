//! Axial springs on rod and shell edges: E = 1/2 k eps^2 l_bar with
//! eps = |e|/l_bar - 1.

use super::{ElementBlock, EvalCtx};
use crate::math::{outer, Mat3, Vec3};
use crate::topology::StretchSpring;

pub fn strain(s: &StretchSpring, xs: &[Vec3]) -> f64 {
    (xs[s.nodes[1]] - xs[s.nodes[0]]).norm() / s.rest_len - 1.0
}

pub fn energy(s: &StretchSpring, ctx: &EvalCtx) -> f64 {
    let eps = strain(s, ctx.xs);
    0.5 * s.stiffness * eps * eps * s.rest_len
}

pub fn fill(s: &StretchSpring, ctx: &EvalCtx, block: &mut ElementBlock, want_hess: bool) {
    let [a, b] = s.nodes;
    let dofs = [
        ctx.layout.node_dof(a, 0),
        ctx.layout.node_dof(a, 1),
        ctx.layout.node_dof(a, 2),
        ctx.layout.node_dof(b, 0),
        ctx.layout.node_dof(b, 1),
        ctx.layout.node_dof(b, 2),
    ];
    block.reset(&dofs);

    let e = ctx.xs[b] - ctx.xs[a];
    let len = e.norm();
    let ehat = e / len;
    let eps = len / s.rest_len - 1.0;
    block.energy = 0.5 * s.stiffness * eps * eps * s.rest_len;

    // dE/dx_b = k eps ehat, dE/dx_a the negative
    let g = ehat * (s.stiffness * eps);
    for k in 0..3 {
        block.add_grad(k, -g[k]);
        block.add_grad(3 + k, g[k]);
    }

    if want_hess {
        let ee = outer(&ehat, &ehat);
        let h: Mat3 = ee * (s.stiffness / s.rest_len)
            + (Mat3::identity() - ee) * (s.stiffness * eps / len);
        for r in 0..3 {
            for c in 0..3 {
                block.add_hess(r, c, h[(r, c)]);
                block.add_hess(3 + r, 3 + c, h[(r, c)]);
                block.add_hess(r, 3 + c, -h[(r, c)]);
                block.add_hess(3 + r, c, -h[(r, c)]);
            }
        }
    }
}
