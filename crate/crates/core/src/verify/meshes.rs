//! Plate mesh generators for the mesh-robustness study: five triangulation
//! families over the same rectangular domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFamily {
    Equilateral,
    Random,
    RightIsosceles,
    EquilateralAligned,
    NonUniform,
}

pub const ALL_FAMILIES: [MeshFamily; 5] = [
    MeshFamily::Equilateral,
    MeshFamily::Random,
    MeshFamily::RightIsosceles,
    MeshFamily::EquilateralAligned,
    MeshFamily::NonUniform,
];

impl MeshFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MeshFamily::Equilateral => "equilateral",
            MeshFamily::Random => "random",
            MeshFamily::RightIsosceles => "right-isosceles",
            MeshFamily::EquilateralAligned => "equilateral-aligned",
            MeshFamily::NonUniform => "non-uniform",
        }
    }
}

/// Triangulate the plate [0,L] x [0,W] at roughly the requested edge length.
/// All triangles wind counter-clockwise seen from +z.
pub fn plate(
    family: MeshFamily,
    length: f64,
    width: f64,
    target_edge: f64,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    match family {
        MeshFamily::RightIsosceles => grid_plate(length, width, target_edge, GridKind::SameDiagonal),
        MeshFamily::Random => grid_plate(length, width, target_edge, GridKind::Random),
        MeshFamily::NonUniform => grid_plate(length, width, target_edge, GridKind::Graded),
        MeshFamily::Equilateral => equilateral_plate(length, width, target_edge),
        MeshFamily::EquilateralAligned => {
            // Same pattern rotated a quarter turn: strips run along the
            // plate axis instead of across it.
            let (mut nodes, mut tris) = equilateral_plate(width, length, target_edge);
            for p in &mut nodes {
                *p = Vec3::new(p.y, width - p.x, 0.0);
            }
            // The swap mirrors the plane; restore CCW winding.
            for t in &mut tris {
                t.swap(1, 2);
            }
            (nodes, tris)
        }
    }
}

enum GridKind {
    SameDiagonal,
    Random,
    Graded,
}

fn grid_plate(
    length: f64,
    width: f64,
    target_edge: f64,
    kind: GridKind,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let nx = (length / target_edge).round().max(1.0) as usize;
    let ny = (width / target_edge).round().max(1.0) as usize;

    let xs: Vec<f64> = match kind {
        GridKind::Graded => {
            // Geometric spacing, finer near the clamped end.
            let r: f64 = 1.3;
            let denom = r.powi(nx as i32) - 1.0;
            (0..=nx)
                .map(|i| length * (r.powi(i as i32) - 1.0) / denom)
                .collect()
        }
        _ => (0..=nx).map(|i| length * i as f64 / nx as f64).collect(),
    };
    let ys: Vec<f64> = (0..=ny).map(|j| width * j as f64 / ny as f64).collect();

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(Vec3::new(xs[i], ys[j], 0.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    if let GridKind::Random = kind {
        let jitter = 0.28 * target_edge;
        for j in 1..ny {
            for i in 1..nx {
                let p = &mut nodes[j * (nx + 1) + i];
                p.x += rng.random_range(-jitter..jitter);
                p.y += rng.random_range(-jitter..jitter);
            }
        }
    }

    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
            let flip = match kind {
                GridKind::Random => rng.random_bool(0.5),
                _ => false,
            };
            if flip {
                tris.push([v00, v10, v01]);
                tris.push([v10, v11, v01]);
            } else {
                tris.push([v00, v10, v11]);
                tris.push([v00, v11, v01]);
            }
        }
    }
    (nodes, tris)
}

fn equilateral_plate(length: f64, width: f64, target_edge: f64) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let s = target_edge;
    let nx = (length / s).round().max(1.0) as usize;
    let row_h = s * 3.0_f64.sqrt() / 2.0;
    let ny = (width / row_h).round().max(1.0) as usize;
    let dy = width / ny as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let off = if j % 2 == 1 { 0.5 } else { 0.0 };
        for i in 0..=nx {
            let x = ((i as f64 + off) / nx as f64 * length).min(length);
            nodes.push(Vec3::new(
                if i == nx { length } else { x },
                dy * j as f64,
                0.0,
            ));
        }
    }
    let at = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a0, a1, b0, b1) = (at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1));
            if j % 2 == 0 {
                tris.push([a0, a1, b0]);
                tris.push([a1, b1, b0]);
            } else {
                tris.push([a0, b1, b0]);
                tris.push([a0, a1, b1]);
            }
        }
    }
    (nodes, tris)
}

/// Straight rod along +x with `n` nodes.
pub fn straight_rod(n: usize, length: f64) -> (Vec<Vec3>, Vec<[usize; 2]>) {
    let nodes = (0..n)
        .map(|i| Vec3::new(length * i as f64 / (n - 1) as f64, 0.0, 0.0))
        .collect();
    let edges = (0..n - 1).map(|i| [i, i + 1]).collect();
    (nodes, edges)
}
