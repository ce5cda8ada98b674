//! Dynamic state: the flat DOF vector, velocities, and the director frames
//! attached to theta-edges.
//!
//! Reference directors are gauge: they are seeded once by space-parallel
//! transport along each connected chain of theta-edges and afterwards evolve
//! only by time-parallel transport, never reset. The twist measured against
//! them is made well defined by tracking the reference twist incrementally,
//! so it stays continuous past +-pi.

use nalgebra::DVector;
use std::collections::VecDeque;

use crate::math::{parallel_transport_robust, perp_unit, rotate_about, signed_angle, Vec3};
use crate::topology::{BendTwistSpring, DofLayout, MeshTopology, SpringSet};
use crate::{Error, Result};

/// Directors, material frames, reference twists, and the per-shell-edge
/// average-normal axis used by the mid-edge bending model.
#[derive(Debug, Clone)]
pub struct FrameSet {
    /// Unit tangent per theta-edge, in stored orientation.
    pub tangent: Vec<Vec3>,
    /// First reference director, orthonormal to the tangent.
    pub d1: Vec<Vec3>,
    pub d2: Vec<Vec3>,
    /// Material frame: d1, d2 rotated by theta about the tangent.
    pub m1: Vec<Vec3>,
    pub m2: Vec<Vec3>,
    /// Accumulated reference twist per bend-twist spring.
    pub ref_twist: Vec<f64>,
    /// Per shell edge: average incident normal crossed with the canonical
    /// edge direction. Snapshotted once per step, frozen across Newton.
    pub tau0: Vec<Vec3>,
}

fn edge_tangent(x: &[Vec3], nodes: [usize; 2]) -> Result<Vec3> {
    let e = x[nodes[1]] - x[nodes[0]];
    let len = e.norm();
    if !(len >= 1e-14 && len.is_finite()) {
        return Err(Error::Degenerate(format!(
            "edge ({}, {}) has unusable length {len}",
            nodes[0] + 1,
            nodes[1] + 1
        )));
    }
    Ok(e / len)
}

fn orthonormalize(d: Vec3, t: &Vec3) -> Result<Vec3> {
    let d = d - t * d.dot(t);
    let len = d.norm();
    if len < 1e-12 {
        return Err(Error::Degenerate(
            "reference director collapsed onto the tangent".into(),
        ));
    }
    Ok(d / len)
}

/// Twist angle of the second frame against the transported first frame.
fn ref_twist_direct(d1a: &Vec3, ta: &Vec3, d1b: &Vec3, tb: &Vec3) -> f64 {
    let p = parallel_transport_robust(d1a, ta, tb);
    signed_angle(&p, d1b, tb)
}

impl FrameSet {
    /// Frames for the starting configuration. Directors are seeded per
    /// connected component and spread by space-parallel transport, so a
    /// straight untwisted chain gets zero reference twist.
    pub fn init(
        topo: &MeshTopology,
        x: &[Vec3],
        theta: &[f64],
        springs: &SpringSet,
    ) -> Result<FrameSet> {
        let ne = topo.theta_edges.len();
        let mut tangent = Vec::with_capacity(ne);
        for te in &topo.theta_edges {
            tangent.push(edge_tangent(x, te.nodes)?);
        }

        // Edge adjacency through shared nodes.
        let mut node_edges: Vec<Vec<usize>> = vec![Vec::new(); topo.num_nodes()];
        for (ei, te) in topo.theta_edges.iter().enumerate() {
            node_edges[te.nodes[0]].push(ei);
            node_edges[te.nodes[1]].push(ei);
        }

        let mut d1: Vec<Option<Vec3>> = vec![None; ne];
        let mut queue = VecDeque::new();
        for seed in 0..ne {
            if d1[seed].is_some() {
                continue;
            }
            d1[seed] = Some(perp_unit(&tangent[seed]));
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                let di = d1[i].unwrap();
                for &node in &topo.theta_edges[i].nodes {
                    for &j in &node_edges[node] {
                        if d1[j].is_none() {
                            let moved = parallel_transport_robust(&di, &tangent[i], &tangent[j]);
                            d1[j] = Some(orthonormalize(moved, &tangent[j])?);
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        let d1: Vec<Vec3> = d1.into_iter().map(|d| d.unwrap()).collect();
        let d2: Vec<Vec3> = tangent
            .iter()
            .zip(&d1)
            .map(|(t, d)| t.cross(d))
            .collect();

        let mut frames = FrameSet {
            tangent,
            d1,
            d2,
            m1: Vec::new(),
            m2: Vec::new(),
            ref_twist: vec![0.0; springs.bend_twist.len()],
            tau0: vec![Vec3::zeros(); topo.shell_edges.len()],
        };
        frames.update_material(theta);
        frames.reset_ref_twist(springs);
        frames.refresh_tau0(topo, x);
        Ok(frames)
    }

    /// Frames advanced from this (step-start) set to a trial configuration:
    /// per-edge time-parallel transport of directors plus incremental update
    /// of the reference twist. Call on the committed step-start frames with
    /// each Newton iterate, not on the previous iterate's output.
    pub fn advanced(
        &self,
        topo: &MeshTopology,
        springs: &SpringSet,
        x: &[Vec3],
        theta: &[f64],
    ) -> Result<FrameSet> {
        let ne = topo.theta_edges.len();
        let mut tangent = Vec::with_capacity(ne);
        let mut d1 = Vec::with_capacity(ne);
        for (ei, te) in topo.theta_edges.iter().enumerate() {
            let t_new = edge_tangent(x, te.nodes)?;
            let moved = parallel_transport_robust(&self.d1[ei], &self.tangent[ei], &t_new);
            d1.push(orthonormalize(moved, &t_new)?);
            tangent.push(t_new);
        }
        let d2: Vec<Vec3> = tangent.iter().zip(&d1).map(|(t, d)| t.cross(d)).collect();

        let mut out = FrameSet {
            tangent,
            d1,
            d2,
            m1: Vec::new(),
            m2: Vec::new(),
            ref_twist: vec![0.0; springs.bend_twist.len()],
            tau0: self.tau0.clone(),
        };
        out.update_material(theta);
        for (si, s) in springs.bend_twist.iter().enumerate() {
            // Remove the previous twist before measuring the angle so the
            // increment lands in (-pi, pi] and the total stays continuous.
            let [e1, e2] = s.edges;
            let [s1, s2] = s.signs;
            let t1 = out.tangent[e1] * s1;
            let t2 = out.tangent[e2] * s2;
            let guess = self.ref_twist[si];
            let ut = parallel_transport_robust(&(out.d1[e1] * s1), &t1, &t2);
            let ut = rotate_about(&ut, &t2, guess);
            out.ref_twist[si] = guess + signed_angle(&ut, &(out.d1[e2] * s2), &t2);
        }
        Ok(out)
    }

    fn update_material(&mut self, theta: &[f64]) {
        self.m1 = self
            .d1
            .iter()
            .zip(&self.d2)
            .zip(theta)
            .map(|((d1, d2), th)| d1 * th.cos() + d2 * th.sin())
            .collect();
        self.m2 = self
            .d1
            .iter()
            .zip(&self.d2)
            .zip(theta)
            .map(|((d1, d2), th)| d2 * th.cos() - d1 * th.sin())
            .collect();
    }

    /// Measure every reference twist directly from the current directors,
    /// dropping any accumulated multiple of 2 pi. For hand-built frames;
    /// a running simulation only ever uses the incremental update in
    /// [`FrameSet::advanced`].
    pub fn reset_ref_twist(&mut self, springs: &SpringSet) {
        for (si, s) in springs.bend_twist.iter().enumerate() {
            self.ref_twist[si] = self.spring_ref_twist_direct(s);
        }
    }

    fn spring_ref_twist_direct(&self, s: &BendTwistSpring) -> f64 {
        let [e1, e2] = s.edges;
        let [s1, s2] = s.signs;
        ref_twist_direct(
            &(self.d1[e1] * s1),
            &(self.tangent[e1] * s1),
            &(self.d1[e2] * s2),
            &(self.tangent[e2] * s2),
        )
    }

    /// Re-snapshot the mid-edge normal axis from the current surface. Done
    /// once per committed step so it is constant during the solve.
    pub fn refresh_tau0(&mut self, topo: &MeshTopology, x: &[Vec3]) {
        let normals: Vec<Vec3> = topo
            .triangles
            .iter()
            .map(|t| {
                let n = (x[t[1]] - x[t[0]]).cross(&(x[t[2]] - x[t[0]]));
                let len = n.norm();
                if len > 1e-14 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        for (se, edge) in topo.shell_edges.iter().enumerate() {
            let mut avg = Vec3::zeros();
            for &t in &edge.tris {
                avg += normals[t];
            }
            let len = avg.norm();
            if len < 1e-12 {
                // Fold-back configuration; keep the previous axis.
                continue;
            }
            let n_avg = avg / len;
            let e = (x[edge.nodes[1]] - x[edge.nodes[0]]).normalize();
            self.tau0[se] = n_avg.cross(&e);
        }
    }
}

/// Full dynamic state of a simulation.
#[derive(Debug, Clone)]
pub struct State {
    pub q: DVector<f64>,
    pub vel: DVector<f64>,
    pub frames: FrameSet,
    pub time: f64,
}

impl State {
    /// Rest state: undeformed positions, zero twist angles and velocities.
    pub fn rest(topo: &MeshTopology, layout: &DofLayout, springs: &SpringSet) -> Result<State> {
        let mut q = DVector::zeros(layout.total());
        for (i, p) in topo.nodes.iter().enumerate() {
            q[3 * i] = p.x;
            q[3 * i + 1] = p.y;
            q[3 * i + 2] = p.z;
        }
        let theta = vec![0.0; layout.num_theta];
        let frames = FrameSet::init(topo, &topo.nodes, &theta, springs)?;
        Ok(State {
            vel: DVector::zeros(layout.total()),
            q,
            frames,
            time: 0.0,
        })
    }
}

pub fn node_pos(q: &DVector<f64>, i: usize) -> Vec3 {
    Vec3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
}

pub fn set_node_pos(q: &mut DVector<f64>, i: usize, p: &Vec3) {
    q[3 * i] = p.x;
    q[3 * i + 1] = p.y;
    q[3 * i + 2] = p.z;
}

/// Copy the position block of `q` out as vectors.
pub fn positions(q: &DVector<f64>, num_nodes: usize) -> Vec<Vec3> {
    (0..num_nodes).map(|i| node_pos(q, i)).collect()
}

/// Twist angles in theta-edge order.
pub fn thetas(q: &DVector<f64>, layout: &DofLayout) -> Vec<f64> {
    (0..layout.num_theta)
        .map(|e| q[layout.theta_dof(e)])
        .collect()
}

/// Mid-edge normal rotations in shell-edge order (empty in hinge mode).
pub fn xis(q: &DVector<f64>, layout: &DofLayout) -> Vec<f64> {
    (0..layout.num_xi).map(|z| q[layout.xi_dof(z)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_springs, build_topology, BendModel, Material};
    use approx::assert_relative_eq;

    fn straight_rod(n: usize) -> MeshTopology {
        let nodes: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let edges: Vec<[usize; 2]> = (0..n - 1).map(|i| [i, i + 1]).collect();
        build_topology(nodes, edges, vec![]).unwrap()
    }

    #[test]
    fn straight_chain_has_orthonormal_frames_and_zero_ref_twist() {
        let topo = straight_rod(5);
        let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
        let theta = vec![0.0; topo.theta_edges.len()];
        let f = FrameSet::init(&topo, &topo.nodes, &theta, &springs).unwrap();
        for e in 0..topo.theta_edges.len() {
            assert_relative_eq!(f.tangent[e].dot(&f.d1[e]), 0.0, epsilon = 1e-14);
            assert_relative_eq!(f.d1[e].norm(), 1.0, epsilon = 1e-14);
            assert_relative_eq!(f.d1[e].dot(&f.d2[e]), 0.0, epsilon = 1e-14);
            // theta = 0 makes material and reference frames coincide
            assert_relative_eq!((f.m1[e] - f.d1[e]).norm(), 0.0, epsilon = 1e-14);
        }
        for &rt in &f.ref_twist {
            assert_relative_eq!(rt, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn frames_follow_a_rigid_rotation() {
        let topo = straight_rod(3);
        let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
        let theta = vec![0.0; 2];
        let f0 = FrameSet::init(&topo, &topo.nodes, &theta, &springs).unwrap();

        let angle = 0.3;
        let axis = Vec3::new(0.0, 0.0, 1.0);
        let x1: Vec<Vec3> = topo.nodes.iter().map(|p| rotate_about(p, &axis, angle)).collect();
        let f1 = f0.advanced(&topo, &springs, &x1, &theta).unwrap();
        for e in 0..2 {
            let expect = rotate_about(&f0.d1[e], &axis, angle);
            assert_relative_eq!((f1.d1[e] - expect).norm(), 0.0, epsilon = 1e-12);
            assert_relative_eq!(f1.d1[e].dot(&f1.tangent[e]), 0.0, epsilon = 1e-13);
        }
        for &rt in &f1.ref_twist {
            assert_relative_eq!(rt, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ref_twist_accumulates_cone_holonomy_past_pi() {
        // Walk the second edge's tangent around a cone of half-angle 60 deg
        // about the first edge. One revolution deposits 2 pi (1 - cos 60)
        // = pi of reference twist; tracking must not wrap at +-pi.
        let topo = straight_rod(3);
        let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
        let theta = vec![0.0; 2];

        let alpha: f64 = 60.0_f64.to_radians();
        let place = |phi: f64| -> Vec<Vec3> {
            let t2 = Vec3::new(
                alpha.cos(),
                alpha.sin() * phi.cos(),
                alpha.sin() * phi.sin(),
            );
            vec![
                Vec3::zeros(),
                Vec3::new(0.1, 0.0, 0.0),
                Vec3::new(0.1, 0.0, 0.0) + t2 * 0.1,
            ]
        };

        let mut frames = FrameSet::init(&topo, &place(0.0), &theta, &springs).unwrap();
        let start = frames.ref_twist[0];
        let steps = 200;
        let mut prev = start;
        for k in 1..=steps {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
            frames = frames.advanced(&topo, &springs, &place(phi), &theta).unwrap();
            let rt = frames.ref_twist[0];
            assert!((rt - prev).abs() < 0.2, "jump at step {k}: {prev} -> {rt}");
            prev = rt;
        }
        let total = (frames.ref_twist[0] - start).abs();
        let expect = 2.0 * std::f64::consts::PI * (1.0 - alpha.cos());
        assert_relative_eq!(total, expect, epsilon = 1e-3);
    }

    #[test]
    fn tau0_is_unit_and_orthogonal_to_the_edge() {
        let nodes = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 0.8, 0.0),
            Vec3::new(0.5, -0.8, 0.3),
        ];
        let topo = build_topology(nodes, vec![], vec![[0, 1, 2], [0, 3, 1]]).unwrap();
        let springs = build_springs(&topo, &Material::default(), BendModel::Midedge).unwrap();
        let f = FrameSet::init(&topo, &topo.nodes, &[], &springs).unwrap();
        for (se, edge) in topo.shell_edges.iter().enumerate() {
            let e = (topo.nodes[edge.nodes[1]] - topo.nodes[edge.nodes[0]]).normalize();
            assert_relative_eq!(f.tau0[se].dot(&e), 0.0, epsilon = 1e-13);
            assert_relative_eq!(f.tau0[se].norm(), 1.0, epsilon = 1e-13);
        }
    }
}
