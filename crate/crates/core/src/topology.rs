//! Mesh ingestion and derived structure: shell edges, joint detection,
//! spring stencils, DOF layout, and the lumped mass matrix.
//!
//! Node indices are 0-based everywhere in this crate; the 1-based convention
//! of the input files is converted at the parsing boundary.

use std::collections::{BTreeMap, BTreeSet};

use crate::math::{Mat3, Vec3};
use crate::state::FrameSet;
use crate::{Error, Result};

/// Rod section and material constants.
#[derive(Debug, Clone, Copy)]
pub struct RodMaterial {
    pub density: f64,
    pub youngs: f64,
    pub poisson: f64,
    /// Cross-section radius r0.
    pub radius: f64,
}

impl RodMaterial {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
    /// Second moment of area of the circular section.
    pub fn bending_moment(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / 4.0
    }
    /// Polar moment, pi r0^4 / 2.
    pub fn polar_moment(&self) -> f64 {
        std::f64::consts::PI * self.radius.powi(4) / 2.0
    }
    pub fn shear_modulus(&self) -> f64 {
        self.youngs / (2.0 * (1.0 + self.poisson))
    }
    /// EA for stretch springs on rod edges.
    pub fn stretch_stiffness(&self) -> f64 {
        self.youngs * self.area()
    }
}

/// Shell material constants.
#[derive(Debug, Clone, Copy)]
pub struct ShellMaterial {
    pub density: f64,
    pub youngs: f64,
    pub poisson: f64,
    pub thickness: f64,
}

impl ShellMaterial {
    /// Stretch stiffness of a shell edge of rest length `len`.
    pub fn stretch_stiffness(&self, len: f64) -> f64 {
        0.25 * 3.0_f64.sqrt() * self.youngs * self.thickness * len
    }
    /// Hinge bending stiffness, (1/sqrt(3)) E h^3 / 12.
    pub fn hinge_stiffness(&self) -> f64 {
        self.youngs * self.thickness.powi(3) / (12.0 * 3.0_f64.sqrt())
    }
    /// Mid-edge bending stiffness, E h^3 / (24 (1 - nu^2)).
    pub fn midedge_stiffness(&self) -> f64 {
        self.youngs * self.thickness.powi(3) / (24.0 * (1.0 - self.poisson * self.poisson))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Material {
    pub rod: RodMaterial,
    pub shell: ShellMaterial,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            rod: RodMaterial {
                density: 1200.0,
                youngs: 2e9,
                poisson: 0.5,
                radius: 1e-3,
            },
            shell: ShellMaterial {
                density: 1200.0,
                youngs: 2e9,
                poisson: 0.5,
                thickness: 1e-3,
            },
        }
    }
}

/// Which shell bending model is active. This also decides whether shell
/// edges carry xi DOFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BendModel {
    Hinge,
    Midedge,
}

/// Undirected triangle edge with its incident triangles (1 or 2, sorted).
#[derive(Debug, Clone)]
pub struct ShellEdge {
    /// (min, max) node pair; the canonical edge direction is min -> max.
    pub nodes: [usize; 2],
    /// Incident triangle indices, ascending. The first one owns the edge.
    pub tris: Vec<usize>,
}

/// An edge that carries a twist DOF and a director frame: every rod edge,
/// plus shell edges of triangles touching a joint node.
#[derive(Debug, Clone, Copy)]
pub struct ThetaEdge {
    /// Oriented node pair: rod edges keep their input orientation,
    /// augmented shell edges run min -> max.
    pub nodes: [usize; 2],
    /// Back-reference into `shell_edges` for augmented edges.
    pub shell_edge: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MeshTopology {
    /// Natural (undeformed) node positions.
    pub nodes: Vec<Vec3>,
    pub rod_edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Unique triangle edges sorted lexicographically by (min, max).
    pub shell_edges: Vec<ShellEdge>,
    /// Per triangle, shell-edge ids of (a,b), (b,c), (c,a).
    pub tri_edges: Vec<[usize; 3]>,
    /// Nodes shared by a rod edge and at least one triangle.
    pub joint_nodes: Vec<usize>,
    /// Rod edges first (input order), then joint-augmented shell edges
    /// (shell-edge order).
    pub theta_edges: Vec<ThetaEdge>,
}

impl MeshTopology {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn num_shell_edges(&self) -> usize {
        self.shell_edges.len()
    }
    /// Triangle corner positions in input winding order.
    pub fn triangle_nodes(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Derive shell edges, joints, and theta-edge augmentation from raw arrays.
pub fn build_topology(
    nodes: Vec<Vec3>,
    rod_edges: Vec<[usize; 2]>,
    triangles: Vec<[usize; 3]>,
) -> Result<MeshTopology> {
    let n = nodes.len();
    if n == 0 {
        return Err(Error::InvalidMesh("no nodes".into()));
    }
    let check = |i: usize| -> Result<()> {
        if i >= n {
            Err(Error::InvalidMesh(format!(
                "node index {} out of range (N={})",
                i + 1,
                n
            )))
        } else {
            Ok(())
        }
    };

    let mut seen_rod = BTreeSet::new();
    for e in &rod_edges {
        check(e[0])?;
        check(e[1])?;
        if e[0] == e[1] {
            return Err(Error::InvalidMesh(format!(
                "rod edge joins node {} to itself",
                e[0] + 1
            )));
        }
        let key = (e[0].min(e[1]), e[0].max(e[1]));
        if !seen_rod.insert(key) {
            return Err(Error::InvalidMesh(format!(
                "duplicate rod edge ({}, {})",
                key.0 + 1,
                key.1 + 1
            )));
        }
    }

    for (ti, t) in triangles.iter().enumerate() {
        for &v in t {
            check(v)?;
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(Error::InvalidMesh(format!("triangle {} repeats a node", ti + 1)));
        }
        let area = triangle_area(&nodes[t[0]], &nodes[t[1]], &nodes[t[2]]);
        if area <= 1e-14 {
            return Err(Error::InvalidMesh(format!("triangle {} has zero area", ti + 1)));
        }
    }

    // Unique undirected triangle edges, lexicographic order.
    let mut edge_tris: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (u.min(v), u.max(v));
            edge_tris.entry(key).or_default().push(ti);
        }
    }
    let mut shell_edges = Vec::with_capacity(edge_tris.len());
    let mut edge_index = BTreeMap::new();
    for (key, mut tris) in edge_tris {
        tris.sort_unstable();
        if tris.len() > 2 {
            return Err(Error::InvalidMesh(format!(
                "edge ({}, {}) is shared by {} triangles",
                key.0 + 1,
                key.1 + 1,
                tris.len()
            )));
        }
        edge_index.insert(key, shell_edges.len());
        shell_edges.push(ShellEdge {
            nodes: [key.0, key.1],
            tris,
        });
    }
    let tri_edges: Vec<[usize; 3]> = triangles
        .iter()
        .map(|t| {
            [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
                .map(|(u, v)| edge_index[&(u.min(v), u.max(v))])
        })
        .collect();

    // Joint nodes: on a rod edge and on a triangle.
    let rod_nodes: BTreeSet<usize> = rod_edges.iter().flatten().copied().collect();
    let tri_nodes: BTreeSet<usize> = triangles.iter().flatten().copied().collect();
    let joint_nodes: Vec<usize> = rod_nodes.intersection(&tri_nodes).copied().collect();

    // Augment every edge of every triangle that contains a joint node.
    let mut augmented = BTreeSet::new();
    for (ti, t) in triangles.iter().enumerate() {
        if t.iter().any(|v| joint_nodes.binary_search(v).is_ok()) {
            for &e in &tri_edges[ti] {
                augmented.insert(e);
            }
        }
    }
    let mut theta_edges: Vec<ThetaEdge> = rod_edges
        .iter()
        .map(|&nodes| ThetaEdge {
            nodes,
            shell_edge: None,
        })
        .collect();
    theta_edges.extend(augmented.iter().map(|&se| ThetaEdge {
        nodes: shell_edges[se].nodes,
        shell_edge: Some(se),
    }));

    Ok(MeshTopology {
        nodes,
        rod_edges,
        triangles,
        shell_edges,
        tri_edges,
        joint_nodes,
        theta_edges,
    })
}

/// Flat DOF indexing: positions, then twist angles, then (mid-edge mode)
/// per-shell-edge normal rotations.
#[derive(Debug, Clone)]
pub struct DofLayout {
    pub num_nodes: usize,
    pub num_theta: usize,
    pub num_xi: usize,
    /// Free mask; fixed scalars are never touched by the solver.
    pub free: Vec<bool>,
}

impl DofLayout {
    pub fn new(topo: &MeshTopology, mode: BendModel) -> Self {
        let num_xi = match mode {
            BendModel::Hinge => 0,
            BendModel::Midedge => topo.shell_edges.len(),
        };
        let num_theta = topo.theta_edges.len();
        let total = 3 * topo.num_nodes() + num_theta + num_xi;
        DofLayout {
            num_nodes: topo.num_nodes(),
            num_theta,
            num_xi,
            free: vec![true; total],
        }
    }

    pub fn total(&self) -> usize {
        3 * self.num_nodes + self.num_theta + self.num_xi
    }
    pub fn node_dof(&self, node: usize, axis: usize) -> usize {
        3 * node + axis
    }
    pub fn theta_dof(&self, edge: usize) -> usize {
        3 * self.num_nodes + edge
    }
    pub fn xi_dof(&self, shell_edge: usize) -> usize {
        3 * self.num_nodes + self.num_theta + shell_edge
    }
    pub fn num_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn fix(&mut self, dof: usize) {
        self.free[dof] = false;
    }
    pub fn fix_node(&mut self, node: usize) {
        for axis in 0..3 {
            let dof = self.node_dof(node, axis);
            self.free[dof] = false;
        }
    }
}

/// One linear spring per rod edge and per shell edge.
#[derive(Debug, Clone)]
pub struct StretchSpring {
    pub nodes: [usize; 2],
    pub rest_len: f64,
    pub stiffness: f64,
}

/// Two-edge bending-twisting stencil. `nodes` is (a, m, c) with m the
/// shared node; the effective edges are e1 = x_m - x_a (into m) and
/// e2 = x_c - x_m (out of m). `signs` record how the effective edges
/// relate to the stored theta-edge orientation: theta and the stored
/// directors d1, m1 of a flipped edge enter negated.
#[derive(Debug, Clone)]
pub struct BendTwistSpring {
    pub nodes: [usize; 3],
    pub edges: [usize; 2],
    pub signs: [f64; 2],
    pub voronoi_len: f64,
    pub kappa_bar: [f64; 2],
    pub twist_bar: f64,
    pub ei: f64,
    pub gj: f64,
}

/// Dihedral stencil: wings `l`, `o` and hinge nodes `m` -> `n` (min -> max).
#[derive(Debug, Clone)]
pub struct HingeSpring {
    pub nodes: [usize; 4],
    pub phi_bar: f64,
    pub stiffness: f64,
}

/// Per-triangle stencil of the mid-edge bending model. Edge order matches
/// the triangle's (a,b), (b,c), (c,a) sides.
#[derive(Debug, Clone)]
pub struct MidedgeElement {
    pub nodes: [usize; 3],
    /// Shell-edge ids of the three sides.
    pub edges: [usize; 3],
    /// Ownership signs: +1 if this triangle owns the shell edge.
    pub signs: [f64; 3],
    pub area_bar: f64,
    pub edge_len_bar: [f64; 3],
    /// Natural shape operator, captured at build with xi = 0.
    pub lambda_bar: Mat3,
    pub stiffness: f64,
    pub poisson: f64,
}

#[derive(Debug, Clone)]
pub struct SpringSet {
    pub stretch: Vec<StretchSpring>,
    pub bend_twist: Vec<BendTwistSpring>,
    pub hinges: Vec<HingeSpring>,
    pub midedge: Vec<MidedgeElement>,
}

/// Build every spring stencil and capture natural (barred) quantities from
/// the undeformed configuration, so the initial state is stress-free.
pub fn build_springs(topo: &MeshTopology, material: &Material, mode: BendModel) -> Result<SpringSet> {
    let x = &topo.nodes;

    let mut stretch = Vec::new();
    for e in &topo.rod_edges {
        let rest = (x[e[1]] - x[e[0]]).norm();
        if rest <= 0.0 {
            return Err(Error::Degenerate(format!(
                "rod edge ({}, {}) has zero length",
                e[0] + 1,
                e[1] + 1
            )));
        }
        stretch.push(StretchSpring {
            nodes: *e,
            rest_len: rest,
            stiffness: material.rod.stretch_stiffness(),
        });
    }
    for se in &topo.shell_edges {
        let rest = (x[se.nodes[1]] - x[se.nodes[0]]).norm();
        if rest <= 0.0 {
            return Err(Error::Degenerate(format!(
                "shell edge ({}, {}) has zero length",
                se.nodes[0] + 1,
                se.nodes[1] + 1
            )));
        }
        stretch.push(StretchSpring {
            nodes: se.nodes,
            rest_len: rest,
            stiffness: material.shell.stretch_stiffness(rest),
        });
    }

    // Bending-twisting springs: every unordered pair of theta-edges sharing
    // exactly one node. For a plain rod chain this is the usual interior-node
    // stencil; at joints it produces the full combination set.
    let mut incident: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ei, te) in topo.theta_edges.iter().enumerate() {
        incident.entry(te.nodes[0]).or_default().push(ei);
        incident.entry(te.nodes[1]).or_default().push(ei);
    }
    let mut bend_twist = Vec::new();
    for (&m, edges) in &incident {
        for i in 0..edges.len() {
            for j in (i + 1)..edges.len() {
                let (e1, e2) = (edges[i], edges[j]);
                let n1 = topo.theta_edges[e1].nodes;
                let n2 = topo.theta_edges[e2].nodes;
                let a = if n1[0] == m { n1[1] } else { n1[0] };
                let c = if n2[0] == m { n2[1] } else { n2[0] };
                if a == c {
                    // Two theta-edges covering the same node pair.
                    continue;
                }
                // Sign +1 when the stored orientation already points
                // into m (first edge) / out of m (second edge).
                let s1 = if n1[1] == m { 1.0 } else { -1.0 };
                let s2 = if n2[0] == m { 1.0 } else { -1.0 };
                let l1 = (x[m] - x[a]).norm();
                let l2 = (x[c] - x[m]).norm();
                let ei_stiff = material.rod.youngs * material.rod.bending_moment();
                let gj_stiff = material.rod.shear_modulus() * material.rod.polar_moment();
                bend_twist.push(BendTwistSpring {
                    nodes: [a, m, c],
                    edges: [e1, e2],
                    signs: [s1, s2],
                    voronoi_len: 0.5 * (l1 + l2),
                    kappa_bar: [0.0, 0.0],
                    twist_bar: 0.0,
                    ei: ei_stiff,
                    gj: gj_stiff,
                });
            }
        }
    }

    let mut hinges = Vec::new();
    let mut midedge = Vec::new();
    match mode {
        BendModel::Hinge => {
            for se in &topo.shell_edges {
                if se.tris.len() != 2 {
                    continue;
                }
                let [m, n] = se.nodes;
                let wing = |ti: usize| {
                    topo.triangles[ti]
                        .iter()
                        .copied()
                        .find(|&v| v != m && v != n)
                        .expect("non-degenerate triangle")
                };
                hinges.push(HingeSpring {
                    nodes: [wing(se.tris[0]), m, n, wing(se.tris[1])],
                    phi_bar: 0.0,
                    stiffness: material.shell.hinge_stiffness(),
                });
            }
        }
        BendModel::Midedge => {
            for (ti, t) in topo.triangles.iter().enumerate() {
                let area = triangle_area(&x[t[0]], &x[t[1]], &x[t[2]]);
                let edges = topo.tri_edges[ti];
                let signs = edges.map(|e| {
                    if topo.shell_edges[e].tris[0] == ti {
                        1.0
                    } else {
                        -1.0
                    }
                });
                let edge_len_bar = [
                    (x[t[1]] - x[t[0]]).norm(),
                    (x[t[2]] - x[t[1]]).norm(),
                    (x[t[0]] - x[t[2]]).norm(),
                ];
                midedge.push(MidedgeElement {
                    nodes: *t,
                    edges,
                    signs,
                    area_bar: area,
                    edge_len_bar,
                    lambda_bar: Mat3::zeros(),
                    stiffness: material.shell.midedge_stiffness(),
                    poisson: material.shell.poisson,
                });
            }
        }
    }

    let mut springs = SpringSet {
        stretch,
        bend_twist,
        hinges,
        midedge,
    };

    // Natural values from the undeformed configuration: discrete curvature
    // and reference twist with theta = 0, hinge angles, and the natural
    // shape operator with xi = 0.
    let frames = FrameSet::init(topo, x, &vec![0.0; topo.theta_edges.len()], &springs)?;
    for (si, s) in springs.bend_twist.iter_mut().enumerate() {
        let (kappa, tau) = crate::energy::bend_twist::natural_values(s, x, &frames, si);
        s.kappa_bar = kappa;
        s.twist_bar = tau;
    }
    for h in springs.hinges.iter_mut() {
        h.phi_bar = crate::energy::hinge::hinge_angle(
            &x[h.nodes[0]],
            &x[h.nodes[1]],
            &x[h.nodes[2]],
            &x[h.nodes[3]],
        )?;
    }
    for e in springs.midedge.iter_mut() {
        let xi = [0.0; 3];
        e.lambda_bar = crate::energy::midedge::shape_operator_at(e, x, &xi, &frames.tau0)?;
    }

    Ok(springs)
}

/// Diagonal lumped mass over the full DOF layout.
#[derive(Debug, Clone)]
pub struct LumpedMass {
    pub diag: Vec<f64>,
}

impl LumpedMass {
    /// Extra concentrated mass at one node (payloads and the like).
    pub fn add_point_mass(&mut self, layout: &DofLayout, node: usize, mass: f64) {
        for axis in 0..3 {
            self.diag[layout.node_dof(node, axis)] += mass;
        }
    }
}

/// Rod edges hand half their mass to each endpoint; triangles a third to
/// each corner. Twist inertia uses the polar radius of gyration r0^2/2 of
/// the edge's mass; augmented shell edges and xi DOFs use the plate rule
/// h^2/12 on the average incident-triangle mass.
pub fn lumped_mass(
    topo: &MeshTopology,
    layout: &DofLayout,
    material: &Material,
) -> Result<LumpedMass> {
    if topo.num_nodes() == 0 {
        return Err(Error::InvalidMesh("empty topology".into()));
    }
    let x = &topo.nodes;
    let mut diag = vec![0.0; layout.total()];

    let rod_edge_mass: Vec<f64> = topo
        .rod_edges
        .iter()
        .map(|e| material.rod.density * material.rod.area() * (x[e[1]] - x[e[0]]).norm())
        .collect();
    let tri_mass: Vec<f64> = topo
        .triangles
        .iter()
        .map(|t| {
            material.shell.density
                * material.shell.thickness
                * triangle_area(&x[t[0]], &x[t[1]], &x[t[2]])
        })
        .collect();

    for (ei, e) in topo.rod_edges.iter().enumerate() {
        for &v in e {
            for axis in 0..3 {
                diag[layout.node_dof(v, axis)] += 0.5 * rod_edge_mass[ei];
            }
        }
    }
    for (ti, t) in topo.triangles.iter().enumerate() {
        for &v in t {
            for axis in 0..3 {
                diag[layout.node_dof(v, axis)] += tri_mass[ti] / 3.0;
            }
        }
    }

    let avg_tri_mass = |se: &ShellEdge| -> f64 {
        se.tris.iter().map(|&t| tri_mass[t]).sum::<f64>() / se.tris.len() as f64
    };
    for (ei, te) in topo.theta_edges.iter().enumerate() {
        let inertia = match te.shell_edge {
            None => {
                let m = rod_edge_mass[ei];
                m * material.rod.radius * material.rod.radius / 2.0
            }
            Some(se) => {
                avg_tri_mass(&topo.shell_edges[se]) * material.shell.thickness.powi(2) / 12.0
            }
        };
        diag[layout.theta_dof(ei)] = inertia;
    }
    for se in 0..layout.num_xi {
        diag[layout.xi_dof(se)] =
            avg_tri_mass(&topo.shell_edges[se]) * material.shell.thickness.powi(2) / 12.0;
    }

    if diag.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::InvalidMesh(
            "lumped mass has a non-positive entry (isolated node?)".into(),
        ));
    }
    Ok(LumpedMass { diag })
}

/// Per-node integration length from incident rod edges: half-sum of their
/// rest lengths (half an edge at chain ends, the mean at interior nodes).
pub fn voronoi_lengths(topo: &MeshTopology) -> Vec<f64> {
    let x = &topo.nodes;
    let mut out = vec![0.0; topo.num_nodes()];
    for e in &topo.rod_edges {
        let len = (x[e[1]] - x[e[0]]).norm();
        out[e[0]] += 0.5 * len;
        out[e[1]] += 0.5 * len;
    }
    out
}
