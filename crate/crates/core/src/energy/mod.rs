//! Elastic energies and their exact first and second derivatives.
//!
//! Every spring writes into its own fixed-size [`ElementBlock`]; blocks are
//! filled in parallel (feature `parallel`) and scattered sequentially in
//! element order, so assembly is bitwise reproducible for any thread count
//! and identical to the sequential build.

pub mod bend_twist;
pub mod hinge;
pub mod midedge;
pub mod stretch;

use crate::state::FrameSet;
use crate::topology::{DofLayout, SpringSet};
use crate::math::Vec3;

/// Largest stencil: hinge and contact pairs touch 4 nodes, the mid-edge
/// element 3 nodes + 3 edge rotations.
pub const MAX_DOFS: usize = 12;

/// Dense gradient/Hessian contribution of one element over its own DOFs.
#[derive(Clone, Debug)]
pub struct ElementBlock {
    pub n: usize,
    pub dofs: [usize; MAX_DOFS],
    pub energy: f64,
    pub grad: [f64; MAX_DOFS],
    pub hess: [f64; MAX_DOFS * MAX_DOFS],
}

impl Default for ElementBlock {
    fn default() -> Self {
        ElementBlock {
            n: 0,
            dofs: [0; MAX_DOFS],
            energy: 0.0,
            grad: [0.0; MAX_DOFS],
            hess: [0.0; MAX_DOFS * MAX_DOFS],
        }
    }
}

impl ElementBlock {
    pub fn reset(&mut self, dofs: &[usize]) {
        self.n = dofs.len();
        self.dofs[..dofs.len()].copy_from_slice(dofs);
        self.energy = 0.0;
        self.grad = [0.0; MAX_DOFS];
        self.hess = [0.0; MAX_DOFS * MAX_DOFS];
    }
    #[inline]
    pub fn add_grad(&mut self, i: usize, v: f64) {
        self.grad[i] += v;
    }
    #[inline]
    pub fn add_hess(&mut self, i: usize, j: usize, v: f64) {
        self.hess[i * MAX_DOFS + j] += v;
    }
    #[inline]
    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * MAX_DOFS + j]
    }
}

/// Everything an element needs to evaluate itself at a trial configuration.
pub struct EvalCtx<'a> {
    pub springs: &'a SpringSet,
    pub layout: &'a DofLayout,
    pub xs: &'a [Vec3],
    pub thetas: &'a [f64],
    pub xis: &'a [f64],
    pub frames: &'a FrameSet,
}

/// Flat enumeration of all elastic elements, fixed order.
#[derive(Debug, Clone, Copy)]
pub enum Element {
    Stretch(usize),
    BendTwist(usize),
    Hinge(usize),
    Midedge(usize),
}

pub fn element_list(springs: &SpringSet) -> Vec<Element> {
    let mut out = Vec::with_capacity(
        springs.stretch.len()
            + springs.bend_twist.len()
            + springs.hinges.len()
            + springs.midedge.len(),
    );
    out.extend((0..springs.stretch.len()).map(Element::Stretch));
    out.extend((0..springs.bend_twist.len()).map(Element::BendTwist));
    out.extend((0..springs.hinges.len()).map(Element::Hinge));
    out.extend((0..springs.midedge.len()).map(Element::Midedge));
    out
}

fn fill_block(el: Element, ctx: &EvalCtx, block: &mut ElementBlock, want_hess: bool) {
    match el {
        Element::Stretch(i) => stretch::fill(&ctx.springs.stretch[i], ctx, block, want_hess),
        Element::BendTwist(i) => {
            bend_twist::fill(&ctx.springs.bend_twist[i], i, ctx, block, want_hess)
        }
        Element::Hinge(i) => hinge::fill(&ctx.springs.hinges[i], ctx, block, want_hess),
        Element::Midedge(i) => midedge::fill(&ctx.springs.midedge[i], ctx, block, want_hess),
    }
}

fn element_energy(el: Element, ctx: &EvalCtx) -> f64 {
    match el {
        Element::Stretch(i) => stretch::energy(&ctx.springs.stretch[i], ctx),
        Element::BendTwist(i) => bend_twist::energy(&ctx.springs.bend_twist[i], i, ctx),
        Element::Hinge(i) => hinge::energy(&ctx.springs.hinges[i], ctx),
        Element::Midedge(i) => midedge::energy(&ctx.springs.midedge[i], ctx),
    }
}

/// Fill one block per element. Parallel map, no shared writes.
pub fn assemble(
    ctx: &EvalCtx,
    elements: &[Element],
    blocks: &mut Vec<ElementBlock>,
    want_hess: bool,
) {
    blocks.resize(elements.len(), ElementBlock::default());
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        blocks
            .par_iter_mut()
            .zip(elements.par_iter())
            .for_each(|(block, &el)| fill_block(el, ctx, block, want_hess));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (block, &el) in blocks.iter_mut().zip(elements.iter()) {
            fill_block(el, ctx, block, want_hess);
        }
    }
}

/// Total elastic energy. Per-element terms are computed independently and
/// summed in element order so the result does not depend on scheduling.
pub fn total_energy(ctx: &EvalCtx, elements: &[Element], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.resize(elements.len(), 0.0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scratch
            .par_iter_mut()
            .zip(elements.par_iter())
            .for_each(|(slot, &el)| *slot = element_energy(el, ctx));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (slot, &el) in scratch.iter_mut().zip(elements.iter()) {
            *slot = element_energy(el, ctx);
        }
    }
    scratch.iter().sum()
}
