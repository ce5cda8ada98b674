//! Two-edge bending and twisting stencil.
//!
//! Works on effective edges e = x_m - x_a, f = x_c - x_m; stored theta-edges
//! that point the other way enter with sign -1, which negates their tangent,
//! first director, and twist angle. Curvature components are measured
//! against the averaged material frame, twist against the reference frame
//! with the accumulated reference twist added.
//!
//! Gradients and Hessians are the exact derivatives of the discrete
//! quantities, including the frame-transport terms (the reference frame
//! never spins about the tangent under variation, which is what makes the
//! holonomy terms kb/2|e| exact).

use super::{ElementBlock, EvalCtx};
use crate::math::{outer, skew, Mat3, Vec3};
use crate::topology::BendTwistSpring;

const NDOF: usize = 11; // 9 positions + 2 twist angles

/// 2 e_i x e_j / (|e_i||e_j| + e_i . e_j); singular for antiparallel edges.
pub fn curvature_binormal(ei: &Vec3, ej: &Vec3) -> Vec3 {
    let denom = ei.norm() * ej.norm() + ei.dot(ej);
    ei.cross(ej) * (2.0 / denom.max(1e-14))
}

pub struct SpringGeom {
    pub norm_e: f64,
    pub norm_f: f64,
    pub te: Vec3,
    pub tf: Vec3,
    pub chi: f64,
    pub tilde_t: Vec3,
    pub kb: Vec3,
    pub m1e: Vec3,
    pub m2e: Vec3,
    pub m1f: Vec3,
    pub m2f: Vec3,
    pub kappa: [f64; 2],
    pub tau: f64,
}

/// Flipped-frame geometry of one spring at a trial configuration.
pub fn geom(
    s: &BendTwistSpring,
    xs: &[Vec3],
    thetas: &[f64],
    frames: &crate::state::FrameSet,
    spring_index: usize,
) -> SpringGeom {
    let [a, m, c] = s.nodes;
    let [e1, e2] = s.edges;
    let [s1, s2] = s.signs;

    let e = xs[m] - xs[a];
    let f = xs[c] - xs[m];
    let norm_e = e.norm();
    let norm_f = f.norm();
    let te = e / norm_e;
    let tf = f / norm_f;
    // Clamp at the antiparallel singularity; the huge curvature it produces
    // makes the line search reject such a trial state.
    let chi = (1.0 + te.dot(&tf)).max(1e-12);
    let tilde_t = (te + tf) / chi;
    let kb = te.cross(&tf) * (2.0 / chi);

    let m1e = frames.m1[e1] * s1;
    let m2e = frames.m2[e1];
    let m1f = frames.m1[e2] * s2;
    let m2f = frames.m2[e2];

    let kappa = [
        0.5 * kb.dot(&(m2e + m2f)),
        -0.5 * kb.dot(&(m1e + m1f)),
    ];
    let tau = s2 * thetas[e2] - s1 * thetas[e1] + frames.ref_twist[spring_index];

    SpringGeom {
        norm_e,
        norm_f,
        te,
        tf,
        chi,
        tilde_t,
        kb,
        m1e,
        m2e,
        m1f,
        m2f,
        kappa,
        tau,
    }
}

/// Curvature and twist of the as-built configuration (theta = 0), used to
/// make the rest state stress free.
pub fn natural_values(
    s: &BendTwistSpring,
    xs: &[Vec3],
    frames: &crate::state::FrameSet,
    spring_index: usize,
) -> ([f64; 2], f64) {
    let ne = frames.m1.len();
    let zeros = vec![0.0; ne];
    let g = geom(s, xs, &zeros, frames, spring_index);
    (g.kappa, g.tau)
}

pub fn energy(s: &BendTwistSpring, spring_index: usize, ctx: &EvalCtx) -> f64 {
    let g = geom(s, ctx.xs, ctx.thetas, ctx.frames, spring_index);
    energy_from_geom(s, &g)
}

pub fn energy_from_geom(s: &BendTwistSpring, g: &SpringGeom) -> f64 {
    let dk1 = g.kappa[0] - s.kappa_bar[0];
    let dk2 = g.kappa[1] - s.kappa_bar[1];
    let dt = g.tau - s.twist_bar;
    0.5 * s.ei / s.voronoi_len * (dk1 * dk1 + dk2 * dk2)
        + 0.5 * s.gj / s.voronoi_len * dt * dt
}

/// Derivatives of one scalar (a curvature component or the twist) wired
/// from edge space to the stencil DOFs [a, m, c, theta1, theta2].
struct ScalarDerivs {
    grad: [f64; NDOF],
    hess: [[f64; NDOF]; NDOF],
}

#[allow(clippy::too_many_arguments)]
fn wire(
    ge: &Vec3,
    gf: &Vec3,
    gt1: f64,
    gt2: f64,
    s1: f64,
    s2: f64,
    hess_in: Option<(
        &Mat3,        // d2/de de
        &Mat3,        // d2/de df (row e, col f)
        &Mat3,        // d2/df df
        &Vec3,        // d2/de dtheta1'
        &Vec3,        // d2/de dtheta2'
        &Vec3,        // d2/df dtheta1'
        &Vec3,        // d2/df dtheta2'
        [f64; 3],     // [t1t1, t1t2, t2t2] in flipped angles
    )>,
) -> ScalarDerivs {
    let mut out = ScalarDerivs {
        grad: [0.0; NDOF],
        hess: [[0.0; NDOF]; NDOF],
    };
    // de/dx per 3-block [a, m, c], then df/dx
    let se = [-1.0, 1.0, 0.0];
    let sf = [0.0, -1.0, 1.0];

    for b in 0..3 {
        for r in 0..3 {
            out.grad[3 * b + r] = se[b] * ge[r] + sf[b] * gf[r];
        }
    }
    out.grad[9] = s1 * gt1;
    out.grad[10] = s2 * gt2;

    if let Some((mee, mef, mff, vet1, vet2, vft1, vft2, htt)) = hess_in {
        let mfe = mef.transpose();
        for bu in 0..3 {
            for bv in 0..3 {
                for r in 0..3 {
                    for c in 0..3 {
                        out.hess[3 * bu + r][3 * bv + c] = se[bu] * se[bv] * mee[(r, c)]
                            + se[bu] * sf[bv] * mef[(r, c)]
                            + sf[bu] * se[bv] * mfe[(r, c)]
                            + sf[bu] * sf[bv] * mff[(r, c)];
                    }
                }
            }
        }
        for bu in 0..3 {
            for r in 0..3 {
                let v1 = s1 * (se[bu] * vet1[r] + sf[bu] * vft1[r]);
                let v2 = s2 * (se[bu] * vet2[r] + sf[bu] * vft2[r]);
                out.hess[3 * bu + r][9] = v1;
                out.hess[9][3 * bu + r] = v1;
                out.hess[3 * bu + r][10] = v2;
                out.hess[10][3 * bu + r] = v2;
            }
        }
        out.hess[9][9] = htt[0];
        out.hess[9][10] = s1 * s2 * htt[1];
        out.hess[10][9] = s1 * s2 * htt[1];
        out.hess[10][10] = htt[2];
    }
    out
}

fn kappa_derivs(g: &SpringGeom, want_hess: bool, s1: f64, s2: f64) -> (ScalarDerivs, ScalarDerivs) {
    let id = Mat3::identity();
    let m_tilde1 = (g.m1e + g.m1f) / g.chi;
    let m_tilde2 = (g.m2e + g.m2f) / g.chi;
    let (k1, k2) = (g.kappa[0], g.kappa[1]);

    // First derivatives in edge space.
    let g1e = (g.tilde_t * (-k1) + g.tf.cross(&m_tilde2)) / g.norm_e;
    let g1f = (g.tilde_t * (-k1) - g.te.cross(&m_tilde2)) / g.norm_f;
    let g2e = (g.tilde_t * (-k2) - g.tf.cross(&m_tilde1)) / g.norm_e;
    let g2f = (g.tilde_t * (-k2) + g.te.cross(&m_tilde1)) / g.norm_f;
    let g1t1 = -0.5 * g.m1e.dot(&g.kb);
    let g1t2 = -0.5 * g.m1f.dot(&g.kb);
    let g2t1 = -0.5 * g.m2e.dot(&g.kb);
    let g2t2 = -0.5 * g.m2f.dot(&g.kb);

    if !want_hess {
        return (
            wire(&g1e, &g1f, g1t1, g1t2, s1, s2, None),
            wire(&g2e, &g2f, g2t1, g2t2, s1, s2, None),
        );
    }

    let tt = outer(&g.tilde_t, &g.tilde_t);
    let sym = |a: &Vec3, b: &Vec3| outer(a, b) + outer(b, a);
    let (inv_e2, inv_f2, inv_ef) = (
        1.0 / (g.norm_e * g.norm_e),
        1.0 / (g.norm_f * g.norm_f),
        1.0 / (g.norm_e * g.norm_f),
    );
    let pe = id - outer(&g.te, &g.te);
    let pf = id - outer(&g.tf, &g.tf);

    let tf_x_m2 = g.tf.cross(&m_tilde2);
    let te_x_m2 = g.te.cross(&m_tilde2);
    let tf_x_m1 = g.tf.cross(&m_tilde1);
    let te_x_m1 = g.te.cross(&m_tilde1);

    let m1_ee = (tt * (2.0 * k1) - sym(&tf_x_m2, &g.tilde_t)) * inv_e2
        - pe * (k1 / g.chi * inv_e2)
        + sym(&g.kb, &g.m2e) * (0.25 * inv_e2);
    let m1_ff = (tt * (2.0 * k1) + sym(&te_x_m2, &g.tilde_t)) * inv_f2
        - pf * (k1 / g.chi * inv_f2)
        + sym(&g.kb, &g.m2f) * (0.25 * inv_f2);
    let m1_ef = (id + outer(&g.te, &g.tf)) * (-k1 / g.chi * inv_ef)
        + (tt * (2.0 * k1) - outer(&tf_x_m2, &g.tilde_t) + outer(&g.tilde_t, &te_x_m2)
            - skew(&m_tilde2))
            * inv_ef;

    let m2_ee = (tt * (2.0 * k2) + sym(&tf_x_m1, &g.tilde_t)) * inv_e2
        - pe * (k2 / g.chi * inv_e2)
        - sym(&g.kb, &g.m1e) * (0.25 * inv_e2);
    let m2_ff = (tt * (2.0 * k2) - sym(&te_x_m1, &g.tilde_t)) * inv_f2
        - pf * (k2 / g.chi * inv_f2)
        - sym(&g.kb, &g.m1f) * (0.25 * inv_f2);
    let m2_ef = (id + outer(&g.te, &g.tf)) * (-k2 / g.chi * inv_ef)
        + (tt * (2.0 * k2) + outer(&tf_x_m1, &g.tilde_t) - outer(&g.tilde_t, &te_x_m1)
            + skew(&m_tilde1))
            * inv_ef;

    // Mixed position-angle second derivatives.
    let k1_et1 = (g.tilde_t * (0.5 * g.kb.dot(&g.m1e)) - g.tf.cross(&g.m1e) / g.chi) / g.norm_e;
    let k1_et2 = (g.tilde_t * (0.5 * g.kb.dot(&g.m1f)) - g.tf.cross(&g.m1f) / g.chi) / g.norm_e;
    let k1_ft1 = (g.tilde_t * (0.5 * g.kb.dot(&g.m1e)) + g.te.cross(&g.m1e) / g.chi) / g.norm_f;
    let k1_ft2 = (g.tilde_t * (0.5 * g.kb.dot(&g.m1f)) + g.te.cross(&g.m1f) / g.chi) / g.norm_f;
    let k2_et1 = (g.tilde_t * (0.5 * g.kb.dot(&g.m2e)) - g.tf.cross(&g.m2e) / g.chi) / g.norm_e;
    let k2_et2 = (g.tilde_t * (0.5 * g.kb.dot(&g.m2f)) - g.tf.cross(&g.m2f) / g.chi) / g.norm_e;
    let k2_ft1 = (g.tilde_t * (0.5 * g.kb.dot(&g.m2e)) + g.te.cross(&g.m2e) / g.chi) / g.norm_f;
    let k2_ft2 = (g.tilde_t * (0.5 * g.kb.dot(&g.m2f)) + g.te.cross(&g.m2f) / g.chi) / g.norm_f;

    // Pure angle second derivatives; the cross theta1-theta2 terms vanish.
    let k1_tt = [-0.5 * g.m2e.dot(&g.kb), 0.0, -0.5 * g.m2f.dot(&g.kb)];
    let k2_tt = [0.5 * g.m1e.dot(&g.kb), 0.0, 0.5 * g.m1f.dot(&g.kb)];

    (
        wire(
            &g1e,
            &g1f,
            g1t1,
            g1t2,
            s1,
            s2,
            Some((&m1_ee, &m1_ef, &m1_ff, &k1_et1, &k1_et2, &k1_ft1, &k1_ft2, k1_tt)),
        ),
        wire(
            &g2e,
            &g2f,
            g2t1,
            g2t2,
            s1,
            s2,
            Some((&m2_ee, &m2_ef, &m2_ff, &k2_et1, &k2_et2, &k2_ft1, &k2_ft2, k2_tt)),
        ),
    )
}

fn tau_derivs(g: &SpringGeom, want_hess: bool, s1: f64, s2: f64) -> ScalarDerivs {
    let ge = g.kb / (2.0 * g.norm_e);
    let gf = g.kb / (2.0 * g.norm_f);
    if !want_hess {
        return wire(&ge, &gf, -1.0, 1.0, s1, s2, None);
    }
    let sym = |a: &Vec3, b: &Vec3| outer(a, b) + outer(b, a);
    let m_ee = sym(&g.kb, &(g.te + g.tilde_t)) * (-0.25 / (g.norm_e * g.norm_e));
    let m_ff = sym(&g.kb, &(g.tf + g.tilde_t)) * (-0.25 / (g.norm_f * g.norm_f));
    let m_ef = (skew(&g.te) * (2.0 / g.chi) - outer(&g.kb, &g.tilde_t))
        * (0.5 / (g.norm_e * g.norm_f));
    let zero = Vec3::zeros();
    wire(
        &ge,
        &gf,
        -1.0,
        1.0,
        s1,
        s2,
        Some((&m_ee, &m_ef, &m_ff, &zero, &zero, &zero, &zero, [0.0; 3])),
    )
}

pub fn fill(
    s: &BendTwistSpring,
    spring_index: usize,
    ctx: &EvalCtx,
    block: &mut ElementBlock,
    want_hess: bool,
) {
    let [a, m, c] = s.nodes;
    let [e1, e2] = s.edges;
    let mut dofs = [0usize; NDOF];
    for (b, node) in [a, m, c].into_iter().enumerate() {
        for r in 0..3 {
            dofs[3 * b + r] = ctx.layout.node_dof(node, r);
        }
    }
    dofs[9] = ctx.layout.theta_dof(e1);
    dofs[10] = ctx.layout.theta_dof(e2);
    block.reset(&dofs);

    let g = geom(s, ctx.xs, ctx.thetas, ctx.frames, spring_index);
    block.energy = energy_from_geom(s, &g);

    let [s1, s2] = s.signs;
    let (k1d, k2d) = kappa_derivs(&g, want_hess, s1, s2);
    let taud = tau_derivs(&g, want_hess, s1, s2);

    let kb_fac = s.ei / s.voronoi_len;
    let kt_fac = s.gj / s.voronoi_len;
    let dk1 = g.kappa[0] - s.kappa_bar[0];
    let dk2 = g.kappa[1] - s.kappa_bar[1];
    let dt = g.tau - s.twist_bar;

    for i in 0..NDOF {
        block.add_grad(
            i,
            kb_fac * (dk1 * k1d.grad[i] + dk2 * k2d.grad[i]) + kt_fac * dt * taud.grad[i],
        );
    }
    if want_hess {
        for i in 0..NDOF {
            for j in 0..NDOF {
                let v = kb_fac
                    * (k1d.grad[i] * k1d.grad[j]
                        + k2d.grad[i] * k2d.grad[j]
                        + dk1 * k1d.hess[i][j]
                        + dk2 * k2d.hess[i][j])
                    + kt_fac * (taud.grad[i] * taud.grad[j] + dt * taud.hess[i][j]);
                block.add_hess(i, j, v);
            }
        }
    }
}
