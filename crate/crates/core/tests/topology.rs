//! Mesh ingestion: derived shell edges, joint augmentation, spring stencil
//! enumeration, DOF layout sizes, mass lumping, and Voronoi lengths. Counts
//! that are not dictated by a hand-checkable rule are cross-checked against
//! brute-force enumerations written independently inside the tests.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rodshell::topology::{
    build_springs, build_topology, lumped_mass, voronoi_lengths, BendModel, DofLayout, Material,
    MeshTopology, SpringSet,
};
use rodshell::verify::meshes;

type Vec3 = Vector3<f64>;

fn v(x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, 0.0)
}

/// The mixed rod/shell demo net: two three-edge rod chains bridged by a
/// rung, feeding a ten-triangle shell strip at nodes 4 and 10 (1-based).
fn demo_net() -> MeshTopology {
    let nodes = vec![
        v(0.0, 0.0),   // 1
        v(0.1, 0.0),   // 2
        v(0.2, 0.0),   // 3
        v(0.3, 0.0),   // 4
        v(0.4, 0.0),   // 5
        v(0.5, 0.0),   // 6
        v(0.0, 0.1),   // 7
        v(0.1, 0.1),   // 8
        v(0.2, 0.1),   // 9
        v(0.3, 0.1),   // 10
        v(0.4, 0.1),   // 11
        v(0.5, 0.1),   // 12
        v(0.6, 0.1),   // 13
        v(0.35, 0.2),  // 14
        v(0.45, 0.2),  // 15
        v(0.55, 0.2),  // 16
    ];
    let one = |edges: Vec<[usize; 2]>| -> Vec<[usize; 2]> {
        edges.iter().map(|e| [e[0] - 1, e[1] - 1]).collect()
    };
    let rod_edges = one(vec![[1, 2], [2, 3], [3, 4], [7, 8], [8, 9], [9, 10], [2, 8]]);
    let triangles: Vec<[usize; 3]> = vec![
        [10, 4, 11],
        [4, 5, 11],
        [11, 5, 12],
        [12, 5, 6],
        [12, 6, 13],
        [10, 11, 14],
        [11, 15, 14],
        [11, 12, 15],
        [15, 12, 16],
        [12, 13, 16],
    ]
    .iter()
    .map(|t| [t[0] - 1, t[1] - 1, t[2] - 1])
    .collect();
    build_topology(nodes, rod_edges, triangles).unwrap()
}

/// Unique undirected triangle edges, counted from scratch.
fn brute_force_edges(triangles: &[[usize; 3]]) -> BTreeMap<(usize, usize), usize> {
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *seen.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    seen
}

#[test]
fn demo_net_counts_match_its_construction() {
    let topo = demo_net();
    assert_eq!(topo.num_nodes(), 16);
    assert_eq!(topo.rod_edges.len(), 7);
    assert_eq!(topo.triangles.len(), 10);

    let brute = brute_force_edges(&topo.triangles);
    assert_eq!(topo.num_shell_edges(), brute.len());
    assert_eq!(topo.num_shell_edges(), 19);

    // Lexicographic order and adjacency agree with the brute-force map.
    let keys: Vec<(usize, usize)> = brute.keys().copied().collect();
    for (se, key) in topo.shell_edges.iter().zip(&keys) {
        assert_eq!((se.nodes[0], se.nodes[1]), *key);
        assert_eq!(se.tris.len(), brute[key]);
    }

    // Joint nodes are exactly the rod/triangle overlap: 4 and 10 (1-based).
    assert_eq!(topo.joint_nodes, vec![3, 9]);
}

#[test]
fn minimal_rod_has_one_stretch_spring_and_nothing_else() {
    let topo = build_topology(
        vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)],
        vec![[0, 1]],
        vec![],
    )
    .unwrap();
    assert_eq!(topo.num_shell_edges(), 0);
    let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
    assert_eq!(springs.stretch.len(), 1);
    assert!(springs.bend_twist.is_empty());
    assert!(springs.hinges.is_empty());
    assert!(springs.midedge.is_empty());
}

#[test]
fn three_node_chain_gets_one_interior_stencil() {
    let topo = build_topology(
        vec![v(0.0, 0.0), v(0.1, 0.0), v(0.2, 0.0)],
        vec![[0, 1], [1, 2]],
        vec![],
    )
    .unwrap();
    let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
    assert_eq!(springs.stretch.len(), 2);
    assert_eq!(springs.bend_twist.len(), 1);
    assert_eq!(springs.bend_twist[0].nodes, [0, 1, 2]);
}

#[test]
fn rod_into_one_triangle_yields_five_joint_stencils() {
    // One rod edge ending on a corner of a single triangle: the three
    // triangle sides are promoted to twist-carrying edges, and every
    // two-edge pair around the stencil gets a bending-twisting spring.
    let topo = build_topology(
        vec![
            v(-0.1, 0.0),        // b
            v(0.0, 0.0),         // m (joint)
            v(0.1, 0.0),         // n
            v(0.05, 0.1),        // l
        ],
        vec![[0, 1]],
        vec![[1, 2, 3]],
    )
    .unwrap();
    assert_eq!(topo.joint_nodes, vec![1]);
    assert_eq!(topo.theta_edges.len(), 4);

    let springs = build_springs(&topo, &Material::default(), BendModel::Midedge).unwrap();
    assert_eq!(springs.bend_twist.len(), 5);

    // Stencil set is the full two-edge enumeration around the joint.
    let mut got: Vec<[usize; 3]> = springs.bend_twist.iter().map(|s| s.nodes).collect();
    got.sort();
    let mut want = vec![
        [0, 1, 2], // rod edge + (m,n) side
        [0, 1, 3], // rod edge + (m,l) side
        [2, 1, 3], // the two sides meeting at m
        [1, 2, 3], // sides meeting at n
        [2, 3, 1], // sides meeting at l
    ];
    for s in &mut want {
        // Center node is fixed; wings are unordered in the comparison.
        if s[0] > s[2] {
            s.swap(0, 2);
        }
    }
    for s in &mut got {
        if s[0] > s[2] {
            s.swap(0, 2);
        }
    }
    want.sort();
    got.sort();
    assert_eq!(got, want);

    // In mid-edge mode the promoted sides carry both theta and xi.
    let layout = DofLayout::new(&topo, BendModel::Midedge);
    assert_eq!(layout.total(), 3 * 4 + 4 + 3);
    for te in &topo.theta_edges {
        if let Some(se) = te.shell_edge {
            assert!(se < layout.num_xi);
        }
    }
}

#[test]
fn two_triangles_sharing_an_edge_make_one_hinge() {
    let topo = build_topology(
        vec![v(0.0, 0.0), v(0.1, 0.0), v(0.05, 0.1), v(0.05, -0.1)],
        vec![],
        vec![[0, 1, 2], [1, 0, 3]],
    )
    .unwrap();
    let springs = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
    assert_eq!(springs.hinges.len(), 1);
    let h = &springs.hinges[0];
    assert_eq!(h.nodes[1], 0);
    assert_eq!(h.nodes[2], 1);
    assert_eq!(h.phi_bar, 0.0);
}

#[test]
fn demo_net_spring_counts_match_brute_force() {
    let topo = demo_net();

    // Stretch: one per rod edge plus one per shell edge.
    let hinge_set = build_springs(&topo, &Material::default(), BendModel::Hinge).unwrap();
    assert_eq!(hinge_set.stretch.len(), 7 + 19);

    // Hinges: one per interior shell edge.
    let brute = brute_force_edges(&topo.triangles);
    let interior = brute.values().filter(|&&c| c == 2).count();
    assert_eq!(hinge_set.hinges.len(), interior);
    assert_eq!(interior, 11);

    // Bending-twisting: every unordered pair of twist-carrying edges that
    // shares exactly one node. Counted independently from node degrees
    // (no two theta-edges of this net cover the same node pair).
    let mut degree = vec![0usize; topo.num_nodes()];
    let mut pairs = BTreeSet::new();
    for te in &topo.theta_edges {
        let key = (te.nodes[0].min(te.nodes[1]), te.nodes[0].max(te.nodes[1]));
        assert!(pairs.insert(key));
        degree[te.nodes[0]] += 1;
        degree[te.nodes[1]] += 1;
    }
    let expected: usize = degree.iter().map(|&d| d * (d.saturating_sub(1)) / 2).sum();
    assert_eq!(hinge_set.bend_twist.len(), expected);
    assert_eq!(expected, 28);

    // Mid-edge mode: one element per triangle, same stretch and bend-twist.
    let mid_set = build_springs(&topo, &Material::default(), BendModel::Midedge).unwrap();
    assert_eq!(mid_set.midedge.len(), 10);
    assert!(mid_set.hinges.is_empty());
    assert_eq!(mid_set.stretch.len(), hinge_set.stretch.len());
    assert_eq!(mid_set.bend_twist.len(), hinge_set.bend_twist.len());
}

#[test]
fn dof_totals_follow_the_mode() {
    // Without joints the totals are exactly 3N+E (hinge) and 3N+E+Z
    // (mid-edge): a rod chain and a detached plate, several sizes.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for family in meshes::ALL_FAMILIES {
        let (mut nodes, tris) = meshes::plate(family, 0.4, 0.3, 0.11);
        let shell_n = nodes.len();
        let chain = rng.random_range(2..7);
        for i in 0..chain {
            nodes.push(Vec3::new(1.0 + 0.05 * i as f64, 0.0, 0.0));
        }
        let rod_edges: Vec<[usize; 2]> = (0..chain - 1)
            .map(|i| [shell_n + i, shell_n + i + 1])
            .collect();
        let e = rod_edges.len();
        let topo = build_topology(nodes, rod_edges, tris.clone()).unwrap();
        assert!(topo.joint_nodes.is_empty());
        let z = brute_force_edges(&tris).len();
        assert_eq!(topo.num_shell_edges(), z);

        let n = topo.num_nodes();
        assert_eq!(DofLayout::new(&topo, BendModel::Hinge).total(), 3 * n + e);
        assert_eq!(DofLayout::new(&topo, BendModel::Midedge).total(), 3 * n + e + z);
    }

    // Joints promote the incident triangles' sides to theta edges on top
    // of the rod-edge count.
    let topo = demo_net();
    let mut promoted = BTreeSet::new();
    for t in &topo.triangles {
        if t.iter().any(|n| topo.joint_nodes.contains(n)) {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                promoted.insert((a.min(b), a.max(b)));
            }
        }
    }
    assert_eq!(topo.theta_edges.len(), 7 + promoted.len());
    assert_eq!(
        DofLayout::new(&topo, BendModel::Midedge).total(),
        3 * 16 + (7 + promoted.len()) + 19
    );
}

#[test]
fn shared_edges_get_opposite_ownership_signs() {
    let topo = demo_net();
    let springs = build_springs(&topo, &Material::default(), BendModel::Midedge).unwrap();

    let mut sign_sum = vec![0.0f64; topo.num_shell_edges()];
    let mut touches = vec![0usize; topo.num_shell_edges()];
    for el in &springs.midedge {
        for (k, &e) in el.edges.iter().enumerate() {
            sign_sum[e] += el.signs[k];
            touches[e] += 1;
        }
    }
    for (se, edge) in topo.shell_edges.iter().enumerate() {
        assert_eq!(touches[se], edge.tris.len());
        if edge.tris.len() == 2 {
            assert_eq!(sign_sum[se], 0.0, "shared edge {se} signs must cancel");
        } else {
            assert_eq!(sign_sum[se], 1.0, "boundary edge {se} owned by its one triangle");
        }
    }

    // The owner is the incident triangle with the smaller index.
    for el_pair in topo.shell_edges.iter().enumerate().filter(|(_, e)| e.tris.len() == 2) {
        let (se, edge) = el_pair;
        let owner = edge.tris[0];
        let k = springs.midedge[owner].edges.iter().position(|&e| e == se).unwrap();
        assert_eq!(springs.midedge[owner].signs[k], 1.0);
    }
}

#[test]
fn cyclic_corner_relabeling_leaves_springs_unchanged() {
    let topo_a = demo_net();
    let rotated: Vec<[usize; 3]> = topo_a
        .triangles
        .iter()
        .map(|t| [t[1], t[2], t[0]])
        .collect();
    let topo_b = build_topology(topo_a.nodes.clone(), topo_a.rod_edges.clone(), rotated).unwrap();

    assert_eq!(topo_a.num_shell_edges(), topo_b.num_shell_edges());
    assert_eq!(topo_a.joint_nodes, topo_b.joint_nodes);
    assert_eq!(topo_a.theta_edges.len(), topo_b.theta_edges.len());

    let mat = Material::default();
    for mode in [BendModel::Hinge, BendModel::Midedge] {
        let sa = build_springs(&topo_a, &mat, mode).unwrap();
        let sb = build_springs(&topo_b, &mat, mode).unwrap();

        let stretch_key = |s: &SpringSet| -> Vec<([usize; 2], u64)> {
            let mut v: Vec<_> = s
                .stretch
                .iter()
                .map(|sp| (sp.nodes, sp.rest_len.to_bits()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(stretch_key(&sa), stretch_key(&sb));

        let bt_key = |s: &SpringSet| -> Vec<[usize; 3]> {
            let mut v: Vec<_> = s
                .bend_twist
                .iter()
                .map(|sp| {
                    let mut n = sp.nodes;
                    if n[0] > n[2] {
                        n.swap(0, 2);
                    }
                    n
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(bt_key(&sa), bt_key(&sb));

        let hinge_key = |s: &SpringSet| -> Vec<([usize; 4], u64)> {
            let mut v: Vec<_> = s
                .hinges
                .iter()
                .map(|h| {
                    let mut n = h.nodes;
                    if n[0] > n[3] {
                        n.swap(0, 3);
                    }
                    (n, h.phi_bar.abs().to_bits())
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(hinge_key(&sa), hinge_key(&sb));

        // Same physical element per triangle: corner rotation permutes the
        // stored arrays but not the edge/sign pairing, the area, or the
        // world-space natural shape operator.
        for (ea, eb) in sa.midedge.iter().zip(&sb.midedge) {
            let pair = |el: &rodshell::topology::MidedgeElement| {
                let mut p: Vec<(usize, i8)> = el
                    .edges
                    .iter()
                    .zip(&el.signs)
                    .map(|(&e, &s)| (e, s as i8))
                    .collect();
                p.sort();
                p
            };
            assert_eq!(pair(ea), pair(eb));
            assert!((ea.area_bar - eb.area_bar).abs() < 1e-15);
            assert!((ea.lambda_bar - eb.lambda_bar).norm() < 1e-12);
        }
    }
}

#[test]
fn bad_meshes_are_rejected() {
    let nodes = vec![v(0.0, 0.0), v(0.1, 0.0), v(0.05, 0.1), v(0.05, -0.1)];

    assert!(build_topology(nodes.clone(), vec![[0, 7]], vec![]).is_err());
    assert!(build_topology(nodes.clone(), vec![], vec![[0, 1, 9]]).is_err());
    assert!(build_topology(nodes.clone(), vec![[0, 1], [1, 0]], vec![]).is_err());
    assert!(build_topology(nodes.clone(), vec![[2, 2]], vec![]).is_err());
    assert!(build_topology(nodes.clone(), vec![], vec![[0, 1, 1]]).is_err());
    // Collinear corners span no area.
    let flat = vec![v(0.0, 0.0), v(0.1, 0.0), v(0.2, 0.0)];
    assert!(build_topology(flat, vec![], vec![[0, 1, 2]]).is_err());
    // An edge shared by three triangles is not a manifold shell.
    let fan = vec![
        v(0.0, 0.0),
        v(0.1, 0.0),
        v(0.05, 0.1),
        v(0.05, -0.1),
        Vec3::new(0.05, 0.0, 0.1),
    ];
    assert!(build_topology(fan, vec![], vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).is_err());
    // No nodes at all.
    assert!(build_topology(vec![], vec![], vec![]).is_err());
}

#[test]
fn single_edge_mass_splits_between_endpoints() {
    let topo = build_topology(
        vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)],
        vec![[0, 1]],
        vec![],
    )
    .unwrap();
    let layout = DofLayout::new(&topo, BendModel::Hinge);
    let mat = Material::default(); // rod density 1200, radius 1 mm
    let m = lumped_mass(&topo, &layout, &mat).unwrap();

    let half = 1200.0 * std::f64::consts::PI * 1e-6 * 0.1 / 2.0;
    assert!((half - 1.885e-4).abs() < 1e-7);
    for node in 0..2 {
        for axis in 0..3 {
            let got = m.diag[layout.node_dof(node, axis)];
            assert!((got - half).abs() < 1e-18 * half.max(1.0));
        }
    }
    // Twist inertia: edge mass times the polar radius of gyration squared.
    let edge_mass = 2.0 * half;
    let want = edge_mass * 1e-6 / 2.0;
    assert!((m.diag[layout.theta_dof(0)] - want).abs() < 1e-25);
}

#[test]
fn single_triangle_mass_splits_in_thirds() {
    let topo = build_topology(
        vec![v(0.0, 0.0), v(0.1, 0.0), v(0.0, 0.1)],
        vec![],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let mat = Material::default(); // shell density 1200, thickness 1 mm
    let area = 0.5 * 0.1 * 0.1;
    let tri_mass = 1200.0 * 1e-3 * area;

    for mode in [BendModel::Hinge, BendModel::Midedge] {
        let layout = DofLayout::new(&topo, mode);
        let m = lumped_mass(&topo, &layout, &mat).unwrap();
        for node in 0..3 {
            let got = m.diag[layout.node_dof(node, 0)];
            assert!((got - tri_mass / 3.0).abs() < 1e-15 * tri_mass);
        }
        for se in 0..layout.num_xi {
            let want = tri_mass * 1e-6 / 12.0;
            assert!((m.diag[layout.xi_dof(se)] - want).abs() < 1e-15 * want);
        }
    }
}

#[test]
fn point_mass_touches_only_its_node() {
    let topo = demo_net();
    let layout = DofLayout::new(&topo, BendModel::Midedge);
    let mut m = lumped_mass(&topo, &layout, &Material::default()).unwrap();
    let before = m.diag.clone();
    m.add_point_mass(&layout, 12, 0.05);
    for (i, (&a, &b)) in before.iter().zip(&m.diag).enumerate() {
        let is_payload = (0..3).any(|axis| layout.node_dof(12, axis) == i);
        if is_payload {
            assert!((b - a - 0.05).abs() < 1e-15);
        } else {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn total_mass_matches_material_volumes() {
    let topo = demo_net();
    let mat = Material::default();
    let layout = DofLayout::new(&topo, BendModel::Midedge);
    let m = lumped_mass(&topo, &layout, &mat).unwrap();

    let nodal: f64 = (0..topo.num_nodes())
        .map(|n| m.diag[layout.node_dof(n, 0)])
        .sum();
    let rod_len: f64 = topo
        .rod_edges
        .iter()
        .map(|e| (topo.nodes[e[1]] - topo.nodes[e[0]]).norm())
        .sum();
    let shell_area: f64 = topo
        .triangles
        .iter()
        .map(|t| {
            0.5 * (topo.nodes[t[1]] - topo.nodes[t[0]])
                .cross(&(topo.nodes[t[2]] - topo.nodes[t[0]]))
                .norm()
        })
        .sum();
    let want = mat.rod.density * mat.rod.area() * rod_len
        + mat.shell.density * mat.shell.thickness * shell_area;
    assert!(
        ((nodal - want) / want).abs() < 1e-12,
        "total mass {nodal:.17e} vs volume formula {want:.17e}"
    );
    assert!(m.diag.iter().all(|&d| d > 0.0));
}

#[test]
fn lumped_mass_rejects_isolated_nodes() {
    // A node in no rod edge and no triangle gets zero translational mass.
    let topo = build_topology(
        vec![v(0.0, 0.0), v(0.1, 0.0), v(0.5, 0.5)],
        vec![[0, 1]],
        vec![],
    )
    .unwrap();
    let layout = DofLayout::new(&topo, BendModel::Hinge);
    assert!(lumped_mass(&topo, &layout, &Material::default()).is_err());
}

#[test]
fn voronoi_lengths_average_incident_edges() {
    let topo = build_topology(
        vec![v(0.0, 0.0), v(0.01, 0.0), v(0.02, 0.0), v(0.05, 0.0)],
        vec![[0, 1], [1, 2], [2, 3]],
        vec![],
    )
    .unwrap();
    let dl = voronoi_lengths(&topo);
    assert!((dl[0] - 0.005).abs() < 1e-15);
    assert!((dl[1] - 0.01).abs() < 1e-15);
    assert!((dl[2] - 0.02).abs() < 1e-15);
    assert!((dl[3] - 0.015).abs() < 1e-15);
}

#[test]
fn fixed_dofs_partition_the_layout() {
    let topo = demo_net();
    let mut layout = DofLayout::new(&topo, BendModel::Midedge);
    let total = layout.total();
    assert_eq!(layout.num_free(), total);
    layout.fix_node(0);
    layout.fix(layout.theta_dof(0));
    layout.fix(layout.xi_dof(2));
    assert_eq!(layout.num_free(), total - 5);
    assert!(!layout.free[layout.node_dof(0, 2)]);
    assert!(layout.free[layout.node_dof(1, 0)]);
}
