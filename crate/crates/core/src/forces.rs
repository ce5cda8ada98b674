//! Environmental forces: gravity with buoyancy, floor contact and friction,
//! viscous damping, anisotropic resistive fluid drag on rod edges, quadratic
//! aerodynamic drag on shell triangles, and fixed-sphere obstacles.
//!
//! Every force is emitted as element blocks in the elastic convention:
//! `grad` holds minus the force and `hess` minus the force Jacobian, so the
//! solver accumulates them alongside the elastic and self-contact blocks.
//! Dissipative forces read nodal velocities; `vel_scale` is dv/dx of the
//! integrator in use (1/dt for backward Euler, 0 to hold velocities fixed)
//! and folds the velocity dependence into the position Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::contact::{energy_derivs, slip_factor, ContactParams};
use crate::energy::ElementBlock;
use crate::math::{outer, Mat3, Vec3};
use crate::topology::{triangle_area, Material, MeshTopology};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FloorParams {
    pub stiffness: f64,
    /// Contact tolerance: the barrier turns on within this clearance.
    pub delta: f64,
    pub mu: f64,
    pub nu_slip: f64,
    pub normal: Vec3,
    pub height: f64,
}

impl FloorParams {
    /// Horizontal floor through `height` with the z axis as its normal.
    pub fn new(stiffness: f64, delta: f64, mu: f64, nu_slip: f64) -> Self {
        FloorParams {
            stiffness,
            delta,
            mu,
            nu_slip,
            normal: Vec3::new(0.0, 0.0, 1.0),
            height: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RftParams {
    /// Tangential resistive coefficient.
    pub c_t: f64,
    /// Normal resistive coefficient.
    pub c_n: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DragParams {
    pub c_d: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SphereObstacle {
    pub center: Vec3,
    pub radius: f64,
    pub stiffness: f64,
    pub delta: f64,
    pub mu: f64,
    pub nu_slip: f64,
}

#[derive(Debug, Clone)]
pub struct EnvironmentParams {
    pub gravity: Vec3,
    /// Density of the surrounding medium; 0 for vacuum.
    pub rho_med: f64,
    /// Viscous damping coefficient; 0 disables.
    pub viscosity: f64,
    pub floor: Option<FloorParams>,
    pub rft: Option<RftParams>,
    pub drag: Option<DragParams>,
    pub obstacles: Vec<SphereObstacle>,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        EnvironmentParams {
            gravity: Vec3::zeros(),
            rho_med: 0.0,
            viscosity: 0.0,
            floor: None,
            rft: None,
            drag: None,
            obstacles: Vec::new(),
        }
    }
}

/// Weight minus buoyancy on one node: the submerged fraction of gravity.
pub fn gravity_buoyancy(mass: f64, rho: f64, rho_med: f64, g: &Vec3) -> Vec3 {
    g * (mass * (rho - rho_med) / rho)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Floor barrier at signed clearance `dist`: (energy, repulsive magnitude
/// along the normal, d magnitude / d dist). Smooth for every clearance,
/// exponentially small beyond `delta`, asymptotically linear in
/// penetration depth (so the energy is asymptotically quadratic).
pub fn floor_contact(dist: f64, stiffness: f64, delta: f64) -> (f64, f64, f64) {
    let k1 = 15.0 / delta;
    let z = -k1 * dist;
    let sp = softplus(z);
    let l = sp / k1;
    let sig = logistic(z);
    let energy = stiffness * l * l;
    let f = 2.0 * stiffness * l * sig;
    let df = -2.0 * stiffness * sig * (sig + sp * (1.0 - sig));
    (energy, f, df)
}

/// Precomputed per-scene quantities the environmental forces need:
/// undeformed lengths and areas, lumped node masses, and the buoyant
/// (medium-corrected) masses.
pub struct Environment {
    pub params: EnvironmentParams,
    node_mass: Vec<f64>,
    /// Per-node sum of piece masses scaled by (rho - rho_med) / rho.
    buoyant_mass: Vec<f64>,
    /// Voronoi length along incident rod edges; zero for shell-only nodes.
    voronoi: Vec<f64>,
    rod_rest_len: Vec<f64>,
    tri_rest_area: Vec<f64>,
    rod_radius: f64,
}

impl Environment {
    pub fn new(topo: &MeshTopology, material: &Material, params: EnvironmentParams) -> Self {
        let x = &topo.nodes;
        let n = topo.num_nodes();
        let mut node_mass = vec![0.0; n];
        let mut buoyant_mass = vec![0.0; n];
        let mut voronoi = vec![0.0; n];

        let rod_scale = (material.rod.density - params.rho_med) / material.rod.density;
        let shell_scale = (material.shell.density - params.rho_med) / material.shell.density;

        let mut rod_rest_len = Vec::with_capacity(topo.rod_edges.len());
        for e in &topo.rod_edges {
            let len = (x[e[1]] - x[e[0]]).norm();
            rod_rest_len.push(len);
            let m = material.rod.density * material.rod.area() * len;
            for &v in e {
                node_mass[v] += 0.5 * m;
                buoyant_mass[v] += 0.5 * m * rod_scale;
                voronoi[v] += 0.5 * len;
            }
        }
        let mut tri_rest_area = Vec::with_capacity(topo.triangles.len());
        for t in &topo.triangles {
            let area = triangle_area(&x[t[0]], &x[t[1]], &x[t[2]]);
            tri_rest_area.push(area);
            let m = material.shell.density * material.shell.thickness * area;
            for &v in t {
                node_mass[v] += m / 3.0;
                buoyant_mass[v] += m / 3.0 * shell_scale;
            }
        }

        Environment {
            params,
            node_mass,
            buoyant_mass,
            voronoi,
            rod_rest_len,
            tri_rest_area,
            rod_radius: material.rod.radius,
        }
    }

    pub fn node_mass(&self) -> &[f64] {
        &self.node_mass
    }

    /// Concentrated payload at a node. Payloads are treated as dense: they
    /// add their full weight with no buoyancy correction.
    pub fn add_point_mass(&mut self, node: usize, mass: f64) {
        self.node_mass[node] += mass;
        self.buoyant_mass[node] += mass;
    }
}

fn node_block(node: usize) -> ElementBlock {
    let mut b = ElementBlock::default();
    b.reset(&[3 * node, 3 * node + 1, 3 * node + 2]);
    b
}

fn pair_dofs(nodes: [usize; 2]) -> Vec<usize> {
    nodes
        .iter()
        .flat_map(|&n| (0..3).map(move |a| 3 * n + a))
        .collect()
}

fn add_vec(b: &mut ElementBlock, at: usize, v: &Vec3) {
    for r in 0..3 {
        b.add_grad(at + r, v[r]);
    }
}

fn add_mat(b: &mut ElementBlock, row: usize, col: usize, m: &Mat3) {
    for r in 0..3 {
        for c in 0..3 {
            b.add_hess(row + r, col + c, m[(r, c)]);
        }
    }
}

/// Tangential-velocity friction pieces shared by the floor and the sphere
/// obstacle: smoothed direction g = gamma(|u_t|) u_hat and its velocity
/// derivative.
fn slip_terms(u_t: &Vec3, k2: f64) -> (Vec3, Mat3) {
    let speed = u_t.norm();
    if speed < 1e-12 {
        return (u_t * (0.5 * k2), Mat3::identity() * (0.5 * k2));
    }
    let uhat = u_t / speed;
    let gamma = slip_factor(speed, k2);
    let expm = (-k2 * speed).exp();
    let dgamma = 2.0 * k2 * expm / ((1.0 + expm) * (1.0 + expm));
    let dg = outer(&uhat, &uhat) * dgamma
        + (Mat3::identity() - outer(&uhat, &uhat)) * (gamma / speed);
    (uhat * gamma, dg)
}

/// Evaluate every enabled environmental force over the current positions
/// and velocities. Blocks come out in a fixed order (gravity, floor,
/// viscous per node; resistive drag per rod edge; aerodynamic drag per
/// triangle; obstacles per edge), so assembly is deterministic.
pub fn collect_external(
    env: &Environment,
    topo: &MeshTopology,
    xs: &[Vec3],
    vels: &[Vec3],
    vel_scale: f64,
    want_hess: bool,
) -> Result<Vec<ElementBlock>> {
    let p = &env.params;
    let mut out = Vec::new();

    if p.gravity != Vec3::zeros() {
        for (i, &bm) in env.buoyant_mass.iter().enumerate() {
            let mut b = node_block(i);
            let f = p.gravity * bm;
            b.energy = -f.dot(&xs[i]);
            add_vec(&mut b, 0, &(-f));
            out.push(b);
        }
    }

    if let Some(floor) = &p.floor {
        let nhat = floor.normal.normalize();
        let k2 = 15.0 / floor.nu_slip;
        let proj = Mat3::identity() - outer(&nhat, &nhat);
        for i in 0..xs.len() {
            let dist = nhat.dot(&xs[i]) - floor.height;
            let (energy, fmag, dfmag) = floor_contact(dist, floor.stiffness, floor.delta);
            if fmag == 0.0 && dfmag == 0.0 {
                continue;
            }
            let mut b = node_block(i);
            b.energy = energy;
            let mut force = nhat * fmag;
            let mut jac = outer(&nhat, &nhat) * dfmag;
            if floor.mu > 0.0 {
                let u_t = proj * vels[i];
                let (g_vec, dg) = slip_terms(&u_t, k2);
                force -= g_vec * (floor.mu * fmag);
                if want_hess {
                    jac -= (outer(&g_vec, &nhat) * dfmag + dg * proj * (vel_scale * fmag))
                        * floor.mu;
                }
            }
            add_vec(&mut b, 0, &(-force));
            if want_hess {
                add_mat(&mut b, 0, 0, &(-jac));
            }
            out.push(b);
        }
    }

    if p.viscosity > 0.0 {
        for (i, &dl) in env.voronoi.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            let mut b = node_block(i);
            add_vec(&mut b, 0, &(vels[i] * (p.viscosity * dl)));
            if want_hess {
                add_mat(&mut b, 0, 0, &(Mat3::identity() * (p.viscosity * dl * vel_scale)));
            }
            out.push(b);
        }
    }

    if let Some(rft) = &p.rft {
        for (k, e) in topo.rod_edges.iter().enumerate() {
            out.push(rft_block(rft, *e, env.rod_rest_len[k], xs, vels, vel_scale, want_hess)?);
        }
    }

    if let Some(drag) = &p.drag {
        for (k, t) in topo.triangles.iter().enumerate() {
            out.push(drag_block(
                p.rho_med,
                drag.c_d,
                *t,
                env.tri_rest_area[k],
                xs,
                vels,
                vel_scale,
                want_hess,
            )?);
        }
    }

    for obstacle in &p.obstacles {
        for e in &topo.rod_edges {
            if let Some(b) =
                sphere_block(obstacle, env.rod_radius, *e, xs, vels, vel_scale, want_hess)?
            {
                out.push(b);
            }
        }
    }

    Ok(out)
}

/// Anisotropic resistive drag of one rod edge on both its endpoints:
/// F_i = -(l/2) [(C_t - C_n) e_hat e_hat^T + C_n I] u_i with the current
/// edge direction and the undeformed length.
#[allow(clippy::too_many_arguments)]
fn rft_block(
    rft: &RftParams,
    nodes: [usize; 2],
    rest_len: f64,
    xs: &[Vec3],
    vels: &[Vec3],
    vel_scale: f64,
    want_hess: bool,
) -> Result<ElementBlock> {
    let e = xs[nodes[1]] - xs[nodes[0]];
    let len = e.norm();
    if len < 1e-14 {
        return Err(Error::Degenerate(format!(
            "zero-length edge ({}, {}) in resistive drag",
            nodes[0] + 1,
            nodes[1] + 1
        )));
    }
    let ehat = e / len;
    let aniso = rft.c_t - rft.c_n;
    let half_l = 0.5 * rest_len;
    let drag_op = outer(&ehat, &ehat) * aniso + Mat3::identity() * rft.c_n;
    // d e_hat / d x: the tail sees the negative of the head's projector.
    let dehat_head = (Mat3::identity() - outer(&ehat, &ehat)) / len;

    let mut b = ElementBlock::default();
    b.reset(&pair_dofs(nodes));
    for (slot, &node) in nodes.iter().enumerate() {
        let u = vels[node];
        let force = drag_op * u * (-half_l);
        add_vec(&mut b, 3 * slot, &(-force));
        if !want_hess {
            continue;
        }
        // Velocity chain lands on the diagonal block; the turning edge
        // direction couples both endpoints.
        let u_dot_e = u.dot(&ehat);
        for (jslot, sign) in [(0usize, -1.0), (1usize, 1.0)] {
            let dehat = dehat_head * sign;
            let mut jac = (dehat * u_dot_e + outer(&ehat, &(dehat.transpose() * u))) * aniso;
            if jslot == slot {
                jac += drag_op * vel_scale;
            }
            add_mat(&mut b, 3 * slot, 3 * jslot, &(jac * half_l));
        }
    }
    Ok(b)
}

/// Quadratic normal drag of one triangle on its three corners:
/// F_i = -(rho C_D / 2)(A/3) sgn(u.n_hat)(u.n_hat)^2 n_hat with the current
/// normal and the undeformed area. Orientation-free: flipping the winding
/// flips both n_hat and the signum.
#[allow(clippy::too_many_arguments)]
fn drag_block(
    rho_med: f64,
    c_d: f64,
    tri: [usize; 3],
    rest_area: f64,
    xs: &[Vec3],
    vels: &[Vec3],
    vel_scale: f64,
    want_hess: bool,
) -> Result<ElementBlock> {
    let big_n = (xs[tri[1]] - xs[tri[0]]).cross(&(xs[tri[2]] - xs[tri[0]]));
    let nn = big_n.norm();
    if nn < 1e-14 {
        return Err(Error::Degenerate(format!(
            "degenerate triangle ({}, {}, {}) in aerodynamic drag",
            tri[0] + 1,
            tri[1] + 1,
            tri[2] + 1
        )));
    }
    let nhat = big_n / nn;
    let coeff = 0.5 * rho_med * c_d * rest_area / 3.0;

    // d n_hat / d corner m: project out n_hat, then the opposite-edge cross.
    let dn: [Mat3; 3] = std::array::from_fn(|m| {
        let opp = xs[tri[(m + 2) % 3]] - xs[tri[(m + 1) % 3]];
        (Mat3::identity() - outer(&nhat, &nhat)) * opp.cross_matrix() / nn
    });

    let mut b = ElementBlock::default();
    let dofs: Vec<usize> = tri
        .iter()
        .flat_map(|&n| (0..3).map(move |a| 3 * n + a))
        .collect();
    b.reset(&dofs);
    for (slot, &node) in tri.iter().enumerate() {
        let u = vels[node];
        let s = u.dot(&nhat);
        let force = nhat * (-coeff * s.signum() * s * s);
        add_vec(&mut b, 3 * slot, &(-force));
        if !want_hess {
            continue;
        }
        for jslot in 0..3 {
            let du_chain = if jslot == slot {
                nhat * vel_scale
            } else {
                Vec3::zeros()
            };
            let jac = (outer(&nhat, &(du_chain + dn[jslot].transpose() * u)) * (2.0 * s)
                + dn[jslot] * (s * s))
                * (-coeff * s.signum());
            add_mat(&mut b, 3 * slot, 3 * jslot, &(-jac));
        }
    }
    Ok(b)
}

/// Penalty contact plus friction between one rod edge and a fixed sphere.
/// The activation gap is the sphere radius plus the rod radius; within it
/// the segment-to-center distance feeds the same smoothed barrier as
/// self-contact, and friction opposes the material velocity of the closest
/// point tangentially to the sphere surface.
fn sphere_block(
    ob: &SphereObstacle,
    rod_radius: f64,
    nodes: [usize; 2],
    xs: &[Vec3],
    vels: &[Vec3],
    vel_scale: f64,
    want_hess: bool,
) -> Result<Option<ElementBlock>> {
    let (a, bpt) = (xs[nodes[0]], xs[nodes[1]]);
    let e = bpt - a;
    let ee = e.norm_squared();
    if ee == 0.0 {
        return Err(Error::Degenerate(format!(
            "zero-length edge ({}, {}) against obstacle",
            nodes[0] + 1,
            nodes[1] + 1
        )));
    }
    let s = ((ob.center - a).dot(&e) / ee).clamp(0.0, 1.0);
    let dvec = a + e * s - ob.center;
    let dist = dvec.norm();
    let diameter = ob.radius + rod_radius;
    let barrier = ContactParams::new(ob.stiffness, ob.delta, ob.mu, ob.nu_slip);
    if dist >= diameter + ob.delta || dist < 1e-12 {
        return Ok(None);
    }
    let (e_raw, e1_raw, e2_raw) = energy_derivs(dist, diameter, &barrier);
    let (e1, e2) = (ob.stiffness * e1_raw, ob.stiffness * e2_raw);
    let nhat = dvec / dist;

    // Closest-point slide, when the foot is interior.
    let mut ds = [Vec3::zeros(); 2];
    if s > 0.0 && s < 1.0 {
        ds[0] = -(e * (1.0 - s) - dvec) / ee;
        ds[1] = -(e * s + dvec) / ee;
    }
    let w = [1.0 - s, s];

    let mut b = ElementBlock::default();
    b.reset(&pair_dofs(nodes));
    b.energy = ob.stiffness * e_raw;
    for i in 0..2 {
        add_vec(&mut b, 3 * i, &(nhat * (e1 * w[i])));
    }

    let dn: [Mat3; 2] = std::array::from_fn(|j| {
        let dd = Mat3::identity() * w[j] + outer(&e, &ds[j]);
        (Mat3::identity() - outer(&nhat, &nhat)) * dd / dist
    });
    if want_hess {
        for i in 0..2 {
            for j in 0..2 {
                let dw = if i == 0 { -ds[j] } else { ds[j] };
                let hd = outer(&nhat, &dw) + dn[j] * w[i];
                let block = outer(&nhat, &nhat) * (e2 * w[i] * w[j]) + hd * e1;
                add_mat(&mut b, 3 * i, 3 * j, &block);
            }
        }
    }

    if ob.mu > 0.0 {
        let v_p = vels[nodes[0]] * w[0] + vels[nodes[1]] * w[1];
        let n_dot_v = nhat.dot(&v_p);
        let u_t = v_p - nhat * n_dot_v;
        let (g_vec, dg) = slip_terms(&u_t, 15.0 / ob.nu_slip);
        let strength = -e1;
        for i in 0..2 {
            let f = g_vec * (-ob.mu * strength * w[i]);
            add_vec(&mut b, 3 * i, &(-f));
        }
        if want_hess {
            let proj = Mat3::identity() - outer(&nhat, &nhat);
            let dv = vels[nodes[1]] - vels[nodes[0]];
            for j in 0..2 {
                let dv_p = Mat3::identity() * (w[j] * vel_scale) + outer(&dv, &ds[j]);
                let du = proj * dv_p - dn[j] * n_dot_v - outer(&nhat, &(dn[j].transpose() * v_p));
                let dg_du = dg * du;
                for i in 0..2 {
                    let dwi = if i == 0 { -ds[j] } else { ds[j] };
                    let dm = nhat * (-e2 * w[j] * w[i]) + dwi * strength;
                    let dfr = (outer(&g_vec, &dm) + dg_du * (strength * w[i])) * (-ob.mu);
                    add_mat(&mut b, 3 * i, 3 * j, &(-dfr));
                }
            }
        }
    }

    Ok(Some(b))
}

/// Dense total external force and Jacobian over `ndof` DOFs; test helper.
pub fn external_dense(
    env: &Environment,
    topo: &MeshTopology,
    xs: &[Vec3],
    vels: &[Vec3],
    vel_scale: f64,
    ndof: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let mut force = DVector::zeros(ndof);
    let mut jac = DMatrix::zeros(ndof, ndof);
    for b in collect_external(env, topo, xs, vels, vel_scale, true)? {
        for i in 0..b.n {
            force[b.dofs[i]] -= b.grad[i];
            for j in 0..b.n {
                jac[(b.dofs[i], b.dofs[j])] -= b.hess_at(i, j);
            }
        }
    }
    Ok((force, jac))
}
