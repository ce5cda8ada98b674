//! Finite-difference oracles and validation drivers: derivative checks,
//! analytic cantilever comparison, and the mesh-robustness study.

use nalgebra::{DMatrix, DVector};

use crate::energy::{self, ElementBlock, EvalCtx};
use crate::state::{self, FrameSet};
use crate::topology::{DofLayout, MeshTopology, SpringSet};
use crate::Result;

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    q: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(q.len());
    let mut qp = q.clone();
    for i in 0..q.len() {
        qp[i] = q[i] + h;
        let fp = f(&qp);
        qp[i] = q[i] - h;
        let fm = f(&qp);
        qp[i] = q[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector function (e.g. a gradient).
pub fn fd_jacobian(
    g: &mut dyn FnMut(&DVector<f64>) -> DVector<f64>,
    q: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = q.len();
    let m = g(q).len();
    let mut jac = DMatrix::zeros(m, n);
    let mut qp = q.clone();
    for i in 0..n {
        qp[i] = q[i] + h;
        let gp = g(&qp);
        qp[i] = q[i] - h;
        let gm = g(&qp);
        qp[i] = q[i];
        for r in 0..m {
            jac[(r, i)] = (gp[r] - gm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Central second differences of a scalar function: four-point stencil off
/// the diagonal, three-point on it. Symmetric by construction.
pub fn fd_hessian(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    q: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = q.len();
    let f0 = f(q);
    let mut out = DMatrix::zeros(n, n);
    let mut qp = q.clone();
    for i in 0..n {
        qp[i] = q[i] + h;
        let fp = f(&qp);
        qp[i] = q[i] - h;
        let fm = f(&qp);
        qp[i] = q[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for i in 0..n {
        for j in 0..i {
            qp[i] = q[i] + h;
            qp[j] = q[j] + h;
            let fpp = f(&qp);
            qp[j] = q[j] - h;
            let fpm = f(&qp);
            qp[i] = q[i] - h;
            qp[j] = q[j] + h;
            let fmp = f(&qp);
            qp[j] = q[j] - h;
            let fmm = f(&qp);
            qp[i] = q[i];
            qp[j] = q[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub const FD_STEPS: [f64; 5] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// Second differences lose digits twice; their sweet spot sits at larger
/// steps than the first-difference sweeps.
pub const FD2_STEPS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, Copy)]
pub struct FdAgreement {
    pub best_h: f64,
    pub rel_err: f64,
}

fn rel_inf(diff: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let scale = reference.amax().max(1e-10);
    diff.amax() / scale
}

/// Sweep step sizes and report the best agreement between the analytic
/// gradient and central differences of `f`.
pub fn check_gradient(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    analytic: &DVector<f64>,
    q: &DVector<f64>,
    scale: f64,
) -> FdAgreement {
    let mut best = FdAgreement {
        best_h: 0.0,
        rel_err: f64::INFINITY,
    };
    for &h in &FD_STEPS {
        let fd = fd_gradient(f, q, h * scale);
        let err = rel_inf(&(analytic - &fd), analytic);
        if err < best.rel_err {
            best = FdAgreement {
                best_h: h * scale,
                rel_err: err,
            };
        }
    }
    best
}

/// Same sweep for a Jacobian/Hessian against central differences of `g`.
pub fn check_jacobian(
    g: &mut dyn FnMut(&DVector<f64>) -> DVector<f64>,
    analytic: &DMatrix<f64>,
    q: &DVector<f64>,
    scale: f64,
) -> FdAgreement {
    let mut best = FdAgreement {
        best_h: 0.0,
        rel_err: f64::INFINITY,
    };
    let ref_scale = analytic.amax().max(1e-10);
    for &h in &FD_STEPS {
        let fd = fd_jacobian(g, q, h * scale);
        let err = (analytic - &fd).amax() / ref_scale;
        if err < best.rel_err {
            best = FdAgreement {
                best_h: h * scale,
                rel_err: err,
            };
        }
    }
    best
}

/// Sweep for a Hessian against second differences of the scalar `f`.
pub fn check_hessian(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    analytic: &DMatrix<f64>,
    q: &DVector<f64>,
    scale: f64,
) -> FdAgreement {
    let mut best = FdAgreement {
        best_h: 0.0,
        rel_err: f64::INFINITY,
    };
    let ref_scale = analytic.amax().max(1e-10);
    for &h in &FD2_STEPS {
        let fd = fd_hessian(f, q, h * scale);
        let err = (analytic - &fd).amax() / ref_scale;
        if err < best.rel_err {
            best = FdAgreement {
                best_h: h * scale,
                rel_err: err,
            };
        }
    }
    best
}

/// Elastic energy as a pure function of the DOF vector: directors are
/// transported from `base` to the trial configuration exactly as the
/// implicit solver does inside Newton.
pub fn elastic_energy_at(
    topo: &MeshTopology,
    springs: &SpringSet,
    layout: &DofLayout,
    base: &FrameSet,
    q: &DVector<f64>,
) -> Result<f64> {
    let xs = state::positions(q, layout.num_nodes);
    let thetas = state::thetas(q, layout);
    let xis = state::xis(q, layout);
    let frames = base.advanced(topo, springs, &xs, &thetas)?;
    let ctx = EvalCtx {
        springs,
        layout,
        xs: &xs,
        thetas: &thetas,
        xis: &xis,
        frames: &frames,
    };
    let elements = energy::element_list(springs);
    let mut scratch = Vec::new();
    Ok(energy::total_energy(&ctx, &elements, &mut scratch))
}

/// Dense assembled elastic gradient at a trial configuration.
pub fn elastic_gradient_at(
    topo: &MeshTopology,
    springs: &SpringSet,
    layout: &DofLayout,
    base: &FrameSet,
    q: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (g, _) = elastic_derivs_at(topo, springs, layout, base, q, false)?;
    Ok(g)
}

/// Dense assembled elastic gradient and Hessian.
pub fn elastic_derivs_at(
    topo: &MeshTopology,
    springs: &SpringSet,
    layout: &DofLayout,
    base: &FrameSet,
    q: &DVector<f64>,
    want_hess: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xs = state::positions(q, layout.num_nodes);
    let thetas = state::thetas(q, layout);
    let xis = state::xis(q, layout);
    let frames = base.advanced(topo, springs, &xs, &thetas)?;
    let ctx = EvalCtx {
        springs,
        layout,
        xs: &xs,
        thetas: &thetas,
        xis: &xis,
        frames: &frames,
    };
    let elements = energy::element_list(springs);
    let mut blocks: Vec<ElementBlock> = Vec::new();
    energy::assemble(&ctx, &elements, &mut blocks, want_hess);

    let n = layout.total();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(if want_hess { n } else { 0 }, if want_hess { n } else { 0 });
    for b in &blocks {
        for i in 0..b.n {
            grad[b.dofs[i]] += b.grad[i];
        }
        if want_hess {
            for i in 0..b.n {
                for j in 0..b.n {
                    hess[(b.dofs[i], b.dofs[j])] += b.hess_at(i, j);
                }
            }
        }
    }
    Ok((grad, hess))
}

/// Convenience: run the gradient and Hessian sweeps for one configuration.
///
/// The probe is rebased first: directors are advanced to `q` and that frame
/// set becomes the transport origin for every finite-difference sample. The
/// analytic derivatives assume director variations that are twist-free at
/// the evaluation point, which is the derivative of the transport map only
/// when it starts there; probing from a distant origin would pick up the
/// spin the transport accumulates when its endpoint swings around (the same
/// reason the solver re-advances frames from the step start, not from the
/// initial state).
///
/// The Hessian is checked against second differences of the energy rather
/// than first differences of the assembled force. The force formula applied
/// at a displaced configuration is the exact gradient of the energy rebased
/// at that displaced point, so the force field has a small curl away from
/// the base point and differencing it adds a purely antisymmetric holonomy
/// bias that is not part of the energy Hessian.
pub fn check_elastic_derivs(
    topo: &MeshTopology,
    springs: &SpringSet,
    layout: &DofLayout,
    base: &FrameSet,
    q: &DVector<f64>,
    scale: f64,
) -> Result<(FdAgreement, FdAgreement)> {
    let xs = state::positions(q, layout.num_nodes);
    let thetas = state::thetas(q, layout);
    let based = base.advanced(topo, springs, &xs, &thetas)?;

    let (grad, hess) = elastic_derivs_at(topo, springs, layout, &based, q, true)?;
    let mut f = |qq: &DVector<f64>| elastic_energy_at(topo, springs, layout, &based, qq).unwrap();
    let g_res = check_gradient(&mut f, &grad, q, scale);
    let h_res = check_hessian(&mut f, &hess, q, scale);
    Ok((g_res, h_res))
}

pub mod meshes;

/// Euler-Bernoulli small-deflection solution for a uniformly loaded
/// cantilever: tip deflection w L^4 / (8 EI) with w the load per length.
pub fn cantilever_tip_deflection(load_per_length: f64, length: f64, ei: f64) -> f64 {
    load_per_length * length.powi(4) / (8.0 * ei)
}
