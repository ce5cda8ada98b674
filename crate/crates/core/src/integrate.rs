//! Time stepping and statics.
//!
//! One Newton loop serves backward Euler, implicit midpoint, and static
//! solves; forward Euler bypasses it. The residual at a trial configuration
//! is
//!
//! ```text
//! f = M (q - q_k - dt u_k) / dt^2  -  F_elastic - F_external - F_contact
//! ```
//!
//! (without the inertial term for statics), so a converged step drives the
//! discrete equations of motion to the requested tolerance on the free DOFs.
//! The force Jacobian is assembled sparse from the same element blocks and
//! factored with an LU decomposition; symmetry is never assumed because
//! friction breaks it.
//!
//! Velocities seen by dissipative forces are the backward difference
//! (q_trial - q_k)/dt, which makes those forces implicit in the unknown.
//! The implicit midpoint rule evaluates all forces at (q_k + q_trial)/2;
//! its residual carries the factor 1/2 on forces and the chain factors
//! fold into the scaling constants below.

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};

use crate::actuation::{self, ActuationSchedule, Tags};
use crate::contact::{self, ContactEdge, ContactParams};
use crate::energy::{self, Element, ElementBlock, EvalCtx};
use crate::forces::{collect_external, Environment, EnvironmentParams};
use crate::state::{node_pos, positions, thetas, xis, State};
use crate::topology::{
    build_springs, lumped_mass, BendModel, DofLayout, LumpedMass, Material, MeshTopology,
    SpringSet,
};
use crate::{Error, Result};

pub const ALPHA_MIN: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    BackwardEuler,
    ImplicitMidpoint,
    ForwardEuler,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub dt: f64,
    /// Convergence threshold on the Euclidean norm of the free residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub line_search: bool,
    pub integrator: Integrator,
    /// Solve statics (no inertia) instead of stepping dynamics.
    pub statics: bool,
    /// Plane-constrained run: fixes every z coordinate and every twist angle.
    pub two_d: bool,
    /// Start Newton from q_k + dt u_k instead of q_k. Off by default.
    pub inertial_guess: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            dt: 1e-3,
            tolerance: 1e-6,
            max_iterations: 50,
            line_search: true,
            integrator: Integrator::BackwardEuler,
            statics: false,
            two_d: false,
            inertial_guess: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("time step must be > 0, got {}", self.dt)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// What one solve did: Newton iteration count, the residual at the returned
/// configuration, and the accepted line-search step lengths in order.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
    pub alphas: Vec<f64>,
    pub converged: bool,
}

/// Scalar-DOF fixing requests for [`apply_boundary_conditions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fix {
    /// All three coordinates of a node.
    Node(usize),
    /// One coordinate (0 = x, 1 = y, 2 = z), e.g. a roller support.
    Axis { node: usize, axis: usize },
    /// Twist angle of a theta-edge.
    Theta(usize),
    /// Mid-edge rotation of a shell edge.
    Xi(usize),
}

/// Mark DOFs fixed. `two_d` additionally pins every z coordinate and every
/// twist angle. Errors if nothing remains free afterwards.
pub fn apply_boundary_conditions(
    layout: &mut DofLayout,
    fixes: &[Fix],
    two_d: bool,
) -> Result<()> {
    for fix in fixes {
        match *fix {
            Fix::Node(n) => {
                if n >= layout.num_nodes {
                    return Err(Error::Config(format!("fixed node {n} out of range")));
                }
                for axis in 0..3 {
                    layout.fix(layout.node_dof(n, axis));
                }
            }
            Fix::Axis { node, axis } => {
                if node >= layout.num_nodes || axis > 2 {
                    return Err(Error::Config(format!(
                        "fixed DOF (node {node}, axis {axis}) out of range"
                    )));
                }
                layout.fix(layout.node_dof(node, axis));
            }
            Fix::Theta(e) => {
                if e >= layout.num_theta {
                    return Err(Error::Config(format!("fixed twist edge {e} out of range")));
                }
                layout.fix(layout.theta_dof(e));
            }
            Fix::Xi(s) => {
                if s >= layout.num_xi {
                    return Err(Error::Config(format!("fixed shell edge {s} out of range")));
                }
                layout.fix(layout.xi_dof(s));
            }
        }
    }
    if two_d {
        for n in 0..layout.num_nodes {
            layout.fix(layout.node_dof(n, 2));
        }
        for e in 0..layout.num_theta {
            layout.fix(layout.theta_dof(e));
        }
    }
    if layout.num_free() == 0 {
        return Err(Error::Config(
            "boundary conditions leave no free degrees of freedom".into(),
        ));
    }
    Ok(())
}

/// User force callback: (q, u, t) -> force over the full DOF vector.
pub type ForceFn = Box<dyn FnMut(&DVector<f64>, &DVector<f64>, f64) -> DVector<f64> + Send>;
/// Optional position Jacobian dF/dq as (row, col, value) triplets.
pub type ForceJacobianFn =
    Box<dyn FnMut(&DVector<f64>, &DVector<f64>, f64) -> Vec<(usize, usize, f64)> + Send>;

struct CustomForce {
    force: ForceFn,
    jacobian: Option<ForceJacobianFn>,
}

/// A structure plus everything needed to advance it in time: topology,
/// springs, lumped mass, environment, optional self-contact, boundary
/// conditions (via `layout.free`), and the current state.
pub struct Simulation {
    pub topo: MeshTopology,
    pub material: Material,
    pub layout: DofLayout,
    pub springs: SpringSet,
    pub mass: LumpedMass,
    pub env: Environment,
    /// Self-contact parameters; `None` disables edge-edge contact entirely.
    pub contact: Option<ContactParams>,
    pub settings: SolverSettings,
    pub state: State,
    pub step_count: usize,
    /// Natural-quantity schedules, applied at each step's force evaluation
    /// time before assembly.
    pub schedules: Vec<ActuationSchedule>,
    /// Named spring sets the schedules may address.
    pub tags: Tags,
    contact_edges: Vec<ContactEdge>,
    elements: Vec<Element>,
    custom: Vec<CustomForce>,
    /// External + custom load multiplier used by static continuation.
    load_scale: f64,
    blocks_scratch: Vec<ElementBlock>,
}

enum EvalMode<'a> {
    /// Residual of an implicit step from (q_k, u_k) at a trial q.
    Implicit {
        q_k: &'a DVector<f64>,
        u_k: &'a DVector<f64>,
    },
    /// Forces at (q, u) as given, no inertia: statics and forward Euler.
    AtPoint { u: &'a DVector<f64>, vel_scale: f64 },
}

enum Target {
    Dynamic {
        q_k: DVector<f64>,
        u_k: DVector<f64>,
    },
    Static,
}

impl Simulation {
    pub fn new(
        topo: MeshTopology,
        material: Material,
        mode: BendModel,
        settings: SolverSettings,
        env_params: EnvironmentParams,
    ) -> Result<Simulation> {
        settings.validate()?;
        let springs = build_springs(&topo, &material, mode)?;
        let mut layout = DofLayout::new(&topo, mode);
        if settings.two_d {
            apply_boundary_conditions(&mut layout, &[], true)?;
        }
        let mass = lumped_mass(&topo, &layout, &material)?;
        let env = Environment::new(&topo, &material, env_params);
        let state = State::rest(&topo, &layout, &springs)?;
        let contact_edges = contact::contact_edges(&topo, &material);
        let elements = energy::element_list(&springs);
        Ok(Simulation {
            topo,
            material,
            layout,
            springs,
            mass,
            env,
            contact: None,
            settings,
            state,
            step_count: 0,
            schedules: Vec::new(),
            tags: Tags::default(),
            contact_edges,
            elements,
            custom: Vec::new(),
            load_scale: 1.0,
            blocks_scratch: Vec::new(),
        })
    }

    /// Overwrite scheduled natural quantities at the force evaluation time
    /// of the upcoming step: the end of the step for backward Euler, the
    /// midpoint for the midpoint rule, the current time for forward Euler
    /// and statics.
    fn actuate(&mut self) -> Result<()> {
        if self.schedules.is_empty() {
            return Ok(());
        }
        let t = if self.settings.statics {
            self.state.time
        } else {
            match self.settings.integrator {
                Integrator::BackwardEuler => self.state.time + self.settings.dt,
                Integrator::ImplicitMidpoint => self.state.time + 0.5 * self.settings.dt,
                Integrator::ForwardEuler => self.state.time,
            }
        };
        actuation::apply_actuation(&mut self.springs, &self.schedules, &self.tags, t)
    }

    /// Mark DOFs fixed; see [`Fix`].
    pub fn fix(&mut self, fixes: &[Fix]) -> Result<()> {
        apply_boundary_conditions(&mut self.layout, fixes, false)
    }

    /// Register a user force evaluated alongside the built-in external
    /// forces (at the integrator's evaluation point, scaled the same way).
    /// The callback is probed once against the current state and rejected
    /// if its output length differs from the DOF count. The Jacobian is
    /// optional; when given it is read as dF/dq at the evaluation point.
    pub fn register_custom_force(
        &mut self,
        mut force: ForceFn,
        jacobian: Option<ForceJacobianFn>,
    ) -> Result<usize> {
        let probe = force(&self.state.q, &self.state.vel, self.state.time);
        if probe.len() != self.layout.total() {
            return Err(Error::Config(format!(
                "custom force returned {} values for {} DOFs",
                probe.len(),
                self.layout.total()
            )));
        }
        self.custom.push(CustomForce { force, jacobian });
        Ok(self.custom.len() - 1)
    }

    /// Elastic energy of the current state.
    pub fn elastic_energy(&self) -> f64 {
        let xs = positions(&self.state.q, self.topo.num_nodes());
        let th = thetas(&self.state.q, &self.layout);
        let xi = xis(&self.state.q, &self.layout);
        let ctx = EvalCtx {
            springs: &self.springs,
            layout: &self.layout,
            xs: &xs,
            thetas: &th,
            xis: &xi,
            frames: &self.state.frames,
        };
        let mut scratch = Vec::new();
        energy::total_energy(&ctx, &self.elements, &mut scratch)
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.mass
            .diag
            .iter()
            .zip(self.state.vel.iter())
            .map(|(m, u)| 0.5 * m * u * u)
            .sum()
    }

    /// Advance one time step with the configured integrator, or run the
    /// static solve when the statics flag is set.
    pub fn step(&mut self) -> Result<StepReport> {
        self.settings.validate()?;
        if self.settings.statics {
            return self.solve_static();
        }
        match self.settings.integrator {
            Integrator::BackwardEuler | Integrator::ImplicitMidpoint => self.implicit_step(),
            Integrator::ForwardEuler => self.forward_step(),
        }
    }

    fn implicit_step(&mut self) -> Result<StepReport> {
        self.actuate()?;
        let dt = self.settings.dt;
        let q_k = self.state.q.clone();
        let u_k = self.state.vel.clone();
        let q0 = if self.settings.inertial_guess {
            let mut q = q_k.clone();
            for (d, free) in self.layout.free.clone().iter().enumerate() {
                if *free {
                    q[d] += dt * u_k[d];
                }
            }
            q
        } else {
            q_k.clone()
        };
        let target = Target::Dynamic {
            q_k: q_k.clone(),
            u_k: u_k.clone(),
        };
        let (q_new, report) = self.newton(q0, &target)?;
        if !report.converged {
            return Err(Error::NonConvergence {
                step: self.step_count,
                iterations: report.iterations,
                residual: report.residual,
            });
        }
        let vel_new = match self.settings.integrator {
            Integrator::BackwardEuler => (&q_new - &q_k) / dt,
            Integrator::ImplicitMidpoint => (&q_new - &q_k) * (2.0 / dt) - &u_k,
            Integrator::ForwardEuler => unreachable!(),
        };
        self.commit(q_new, vel_new, dt)?;
        self.step_count += 1;
        Ok(report)
    }

    fn forward_step(&mut self) -> Result<StepReport> {
        self.actuate()?;
        let dt = self.settings.dt;
        let q_k = self.state.q.clone();
        let u_k = self.state.vel.clone();
        let (f, _) = self.assemble(
            &q_k,
            &EvalMode::AtPoint {
                u: &u_k,
                vel_scale: 0.0,
            },
            false,
        )?;
        let mut q_new = q_k;
        let mut vel_new = u_k;
        for d in 0..self.layout.total() {
            if !self.layout.free[d] {
                continue;
            }
            q_new[d] += dt * vel_new[d];
            vel_new[d] -= dt * f[d] / self.mass.diag[d];
            if !q_new[d].is_finite() || !vel_new[d].is_finite() {
                return Err(Error::NonFinite(format!(
                    "forward Euler update at DOF {d} (unstable time step?)"
                )));
            }
        }
        self.commit(q_new, vel_new, dt)?;
        self.step_count += 1;
        Ok(StepReport {
            iterations: 0,
            residual: 0.0,
            alphas: Vec::new(),
            converged: true,
        })
    }

    /// Newton on force balance over the free DOFs, no inertia. If the
    /// direct solve fails, the external and custom loads are ramped from
    /// zero in ten increments, re-solving at each.
    pub fn solve_static(&mut self) -> Result<StepReport> {
        self.settings.validate()?;
        self.actuate()?;
        let direct = self.newton(self.state.q.clone(), &Target::Static);
        let (q_new, report) = match direct {
            Ok((q, r)) if r.converged => (q, r),
            _ => {
                let mut q = self.state.q.clone();
                let mut last = StepReport::default();
                for inc in 1..=10 {
                    self.load_scale = inc as f64 / 10.0;
                    match self.newton(q.clone(), &Target::Static) {
                        Ok((qn, r)) if r.converged => {
                            q = qn;
                            last = r;
                        }
                        Ok((_, r)) => {
                            self.load_scale = 1.0;
                            return Err(Error::NonConvergence {
                                step: inc,
                                iterations: r.iterations,
                                residual: r.residual,
                            });
                        }
                        Err(e) => {
                            self.load_scale = 1.0;
                            return Err(e);
                        }
                    }
                }
                self.load_scale = 1.0;
                (q, last)
            }
        };
        let vel = self.state.vel.clone();
        self.commit(q_new, vel, 0.0)?;
        Ok(report)
    }

    /// Residual and dense Jacobian of the configured step at a trial
    /// configuration, over all DOFs. Diagnostic helper; the solver itself
    /// stays sparse.
    pub fn residual_and_jacobian(
        &mut self,
        q_trial: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q_k = self.state.q.clone();
        let u_k = self.state.vel.clone();
        let zeros;
        let mode = if self.settings.statics {
            zeros = DVector::zeros(self.layout.total());
            EvalMode::AtPoint {
                u: &zeros,
                vel_scale: 0.0,
            }
        } else {
            EvalMode::Implicit {
                q_k: &q_k,
                u_k: &u_k,
            }
        };
        let (f, trips) = self.assemble(q_trial, &mode, true)?;
        let n = self.layout.total();
        let mut jac = DMatrix::zeros(n, n);
        for t in &trips {
            jac[(t.row, t.col)] += t.val;
        }
        Ok((f, jac))
    }

    fn commit(&mut self, q_new: DVector<f64>, vel_new: DVector<f64>, dt: f64) -> Result<()> {
        let xs = positions(&q_new, self.topo.num_nodes());
        let th = thetas(&q_new, &self.layout);
        let mut frames = self
            .state
            .frames
            .advanced(&self.topo, &self.springs, &xs, &th)?;
        frames.refresh_tau0(&self.topo, &xs);
        self.state.q = q_new;
        self.state.vel = vel_new;
        self.state.frames = frames;
        self.state.time += dt;
        Ok(())
    }

    /// Total potential at a configuration with velocities frozen to zero:
    /// strain energy, contact barriers, and the conservative external terms
    /// (scaled by the continuation factor). Dissipative forces vanish at
    /// rest, so this scalar is a valid line-search merit for statics.
    fn potential(&mut self, q: &DVector<f64>) -> Result<f64> {
        let n = self.topo.num_nodes();
        let xs = positions(q, n);
        let th = thetas(q, &self.layout);
        let xi = xis(q, &self.layout);
        let frames = self
            .state
            .frames
            .advanced(&self.topo, &self.springs, &xs, &th)?;
        let ctx = EvalCtx {
            springs: &self.springs,
            layout: &self.layout,
            xs: &xs,
            thetas: &th,
            xis: &xi,
            frames: &frames,
        };
        let mut scratch = Vec::new();
        let mut e = energy::total_energy(&ctx, &self.elements, &mut scratch);
        if let Some(params) = self.contact {
            let cb = contact::collect(&self.contact_edges, &xs, None, 0.0, &params, false)?;
            e += cb.iter().map(|b| b.energy).sum::<f64>();
        }
        let still: Vec<nalgebra::Vector3<f64>> = vec![nalgebra::Vector3::zeros(); n];
        let eb = collect_external(&self.env, &self.topo, &xs, &still, 0.0, false)?;
        e += self.load_scale * eb.iter().map(|b| b.energy).sum::<f64>();
        if !e.is_finite() {
            return Err(Error::NonFinite("potential energy".into()));
        }
        Ok(e)
    }

    fn newton(&mut self, q0: DVector<f64>, target: &Target) -> Result<(DVector<f64>, StepReport)> {
        let free: Vec<usize> = (0..self.layout.total())
            .filter(|&d| self.layout.free[d])
            .collect();
        if free.is_empty() {
            return Err(Error::Config("no free degrees of freedom".into()));
        }
        let zeros;
        let mode = match target {
            Target::Dynamic { q_k, u_k } => EvalMode::Implicit { q_k, u_k },
            Target::Static => {
                zeros = DVector::zeros(self.layout.total());
                EvalMode::AtPoint {
                    u: &zeros,
                    vel_scale: 0.0,
                }
            }
        };

        let free_norm = |f: &DVector<f64>| -> f64 {
            free.iter().map(|&d| f[d] * f[d]).sum::<f64>().sqrt()
        };

        let mut q = q0;
        let mut report = StepReport::default();
        for it in 0..=self.settings.max_iterations {
            let (f, trips) = self.assemble(&q, &mode, true)?;
            let res = free_norm(&f);
            report.iterations = it;
            report.residual = res;
            if res <= self.settings.tolerance {
                report.converged = true;
                return Ok((q, report));
            }
            if it == self.settings.max_iterations {
                break;
            }

            let dq = solve_sparse(&free, &trips, &f)?;

            let mut accepted = q.clone();
            let mut alpha = 1.0;
            if self.settings.line_search && matches!(target, Target::Static) {
                // Statics line-searches on the potential, not on ||f||: a
                // good step trades a soft-mode residual for a transient
                // stretch residual orders of magnitude larger, which strict
                // norm decrease would reject at every iteration.
                let merit0 = self.potential(&q)?;
                let mut slope = 0.0;
                for (k, &d) in free.iter().enumerate() {
                    slope -= f[d] * dq[k];
                }
                // User forces have no potential; model their work along the
                // step with the force frozen at the iterate (exact for
                // constant loads).
                let mut work = 0.0;
                if !self.custom.is_empty() {
                    let still = DVector::zeros(self.layout.total());
                    let t = self.state.time;
                    let mut fc = DVector::zeros(self.layout.total());
                    for cf in &mut self.custom {
                        fc += (cf.force)(&q, &still, t);
                    }
                    for (k, &d) in free.iter().enumerate() {
                        work += self.load_scale * fc[d] * dq[k];
                    }
                }
                loop {
                    let mut q_try = q.clone();
                    for (k, &d) in free.iter().enumerate() {
                        q_try[d] -= alpha * dq[k];
                    }
                    let m_try = match self.potential(&q_try) {
                        Ok(v) => v + alpha * work,
                        Err(_) if alpha > ALPHA_MIN => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    if m_try <= merit0 + 1e-4 * alpha * slope || alpha <= ALPHA_MIN {
                        accepted = q_try;
                        break;
                    }
                    alpha *= 0.5;
                }
            } else if self.settings.line_search {
                loop {
                    let mut q_try = q.clone();
                    for (k, &d) in free.iter().enumerate() {
                        q_try[d] -= alpha * dq[k];
                    }
                    // A trial that wrecks the geometry counts as no decrease.
                    let res_try = match self.assemble(&q_try, &mode, false) {
                        Ok((ft, _)) => free_norm(&ft),
                        Err(_) if alpha > ALPHA_MIN => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    if res_try < res || alpha <= ALPHA_MIN {
                        accepted = q_try;
                        break;
                    }
                    alpha *= 0.5;
                }
            } else {
                for (k, &d) in free.iter().enumerate() {
                    accepted[d] -= dq[k];
                }
            }
            q = accepted;
            report.alphas.push(alpha);
        }
        Ok((q, report))
    }

    /// Assemble the full-space residual and Jacobian triplets at a trial
    /// configuration. Fixed DOFs are filtered later, at the linear solve.
    fn assemble(
        &mut self,
        q_trial: &DVector<f64>,
        mode: &EvalMode,
        want_hess: bool,
    ) -> Result<(DVector<f64>, Vec<Triplet<usize, usize, f64>>)> {
        let dt = self.settings.dt;
        let total = self.layout.total();
        let n = self.topo.num_nodes();

        let (q_eval, u_flat, vel_scale, grad_scale, hess_scale, t_eval) = match mode {
            EvalMode::Implicit { q_k, u_k: _ } => match self.settings.integrator {
                Integrator::BackwardEuler => (
                    q_trial.clone(),
                    (q_trial - *q_k) / dt,
                    1.0 / dt,
                    1.0,
                    1.0,
                    self.state.time + dt,
                ),
                Integrator::ImplicitMidpoint => (
                    (*q_k + q_trial) * 0.5,
                    (q_trial - *q_k) / dt,
                    2.0 / dt,
                    0.5,
                    0.25,
                    self.state.time + 0.5 * dt,
                ),
                Integrator::ForwardEuler => unreachable!("forward Euler is explicit"),
            },
            EvalMode::AtPoint { u, vel_scale } => (
                q_trial.clone(),
                (*u).clone(),
                *vel_scale,
                1.0,
                1.0,
                self.state.time,
            ),
        };

        let xs = positions(&q_eval, n);
        let th = thetas(&q_eval, &self.layout);
        let xi = xis(&q_eval, &self.layout);
        let u_nodes: Vec<_> = (0..n).map(|i| node_pos(&u_flat, i)).collect();

        let mut f = DVector::zeros(total);
        let mut trips: Vec<Triplet<usize, usize, f64>> = Vec::new();

        // User forces first: they need &mut self while everything below
        // holds shared borrows.
        let ext_scale = self.load_scale;
        for cf in &mut self.custom {
            let fc = (cf.force)(&q_eval, &u_flat, t_eval);
            for d in 0..total {
                f[d] -= grad_scale * ext_scale * fc[d];
            }
            if want_hess {
                if let Some(jac) = &mut cf.jacobian {
                    for (r, c, v) in jac(&q_eval, &u_flat, t_eval) {
                        trips.push(Triplet {
                            row: r,
                            col: c,
                            val: -hess_scale * ext_scale * v,
                        });
                    }
                }
            }
        }

        let mut blocks = std::mem::take(&mut self.blocks_scratch);
        {
            let frames = self
                .state
                .frames
                .advanced(&self.topo, &self.springs, &xs, &th)?;
            let ctx = EvalCtx {
                springs: &self.springs,
                layout: &self.layout,
                xs: &xs,
                thetas: &th,
                xis: &xi,
                frames: &frames,
            };
            energy::assemble(&ctx, &self.elements, &mut blocks, want_hess);
            scatter(&blocks, grad_scale, hess_scale, want_hess, &mut f, &mut trips);
        }
        self.blocks_scratch = blocks;

        if let Some(params) = self.contact {
            let cb = contact::collect(
                &self.contact_edges,
                &xs,
                Some(&u_nodes),
                vel_scale,
                &params,
                want_hess,
            )?;
            scatter(&cb, grad_scale, hess_scale, want_hess, &mut f, &mut trips);
        }

        let eb = collect_external(&self.env, &self.topo, &xs, &u_nodes, vel_scale, want_hess)?;
        scatter(
            &eb,
            grad_scale * ext_scale,
            hess_scale * ext_scale,
            want_hess,
            &mut f,
            &mut trips,
        );

        if let EvalMode::Implicit { q_k, u_k } = mode {
            for d in 0..total {
                let m = self.mass.diag[d];
                f[d] += m * (q_trial[d] - q_k[d] - dt * u_k[d]) / (dt * dt);
                if want_hess {
                    trips.push(Triplet {
                        row: d,
                        col: d,
                        val: m / (dt * dt),
                    });
                }
            }
        }

        if let Some(d) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("residual at DOF {d}")));
        }
        Ok((f, trips))
    }
}

fn scatter(
    blocks: &[ElementBlock],
    grad_scale: f64,
    hess_scale: f64,
    want_hess: bool,
    f: &mut DVector<f64>,
    trips: &mut Vec<Triplet<usize, usize, f64>>,
) {
    for b in blocks {
        for i in 0..b.n {
            let gi = b.dofs[i];
            f[gi] += grad_scale * b.grad[i];
            if want_hess {
                for j in 0..b.n {
                    let v = b.hess_at(i, j);
                    if v != 0.0 {
                        trips.push(Triplet {
                            row: gi,
                            col: b.dofs[j],
                            val: hess_scale * v,
                        });
                    }
                }
            }
        }
    }
}

/// Solve J_free dq = f_free from full-space triplets. The factorization is
/// forced sequential so results are bitwise identical across thread counts.
fn solve_sparse(
    free: &[usize],
    trips: &[Triplet<usize, usize, f64>],
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    use faer::linalg::solvers::Solve;
    static SEQ: std::sync::Once = std::sync::Once::new();
    SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));

    let nf = free.len();
    let mut remap = vec![usize::MAX; f.len()];
    for (k, &d) in free.iter().enumerate() {
        remap[d] = k;
    }
    let reduced: Vec<Triplet<usize, usize, f64>> = trips
        .iter()
        .filter(|t| remap[t.row] != usize::MAX && remap[t.col] != usize::MAX)
        .map(|t| Triplet {
            row: remap[t.row],
            col: remap[t.col],
            val: t.val,
        })
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(nf, nf, &reduced)
        .map_err(|e| Error::Singular(format!("Jacobian assembly: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Singular(format!("LU factorization: {e:?}")))?;
    let mut rhs = faer::Mat::<f64>::from_fn(nf, 1, |i, _| f[free[i]]);
    lu.solve_in_place(rhs.as_mut());
    let out = DVector::from_fn(nf, |i, _| rhs[(i, 0)]);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular(
            "non-finite Newton direction (singular Jacobian?)".into(),
        ));
    }
    Ok(out)
}
