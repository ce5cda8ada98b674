//! Scenario files and runs.
//!
//! A scenario is a geometry file plus a config file. The geometry lists
//! nodes, rod edges, and shell triangles in plain text sections; the config
//! is flat `key = value` lines with dotted sections. [`build_simulation`]
//! turns the pair into a ready [`Simulation`] and a [`RunPlan`];
//! [`run_simulation`] steps it and writes the trajectory CSVs.
//!
//! # Geometry format
//!
//! ```text
//! # comment
//! *Nodes            x y z per line
//! *Edges            two 1-based node indices per line (rod edges)
//! *Triangles        three 1-based node indices per line (shell faces)
//! ```
//!
//! Only `*Nodes` is mandatory. Indices are 1-based in files and converted
//! at this boundary.
//!
//! # Config keys
//!
//! ```text
//! sim.dt, sim.total_time, sim.tolerance, sim.max_iterations,
//! sim.integrator = backward_euler | implicit_midpoint | forward_euler,
//! sim.statics, sim.two_d, sim.line_search, sim.inertial_guess
//! shell.bending = hinge | midedge
//! material.rod.density/youngs/poisson/radius
//! material.shell.density/youngs/poisson/thickness
//! env.gravity = "gx gy gz", env.rho_med, env.viscosity
//! env.floor.stiffness/delta/mu/nu_slip/height
//! env.rft.ct/cn          env.drag.cd
//! env.obstacle.center = "x y z", env.obstacle.radius/stiffness/delta/mu/nu_slip
//! contact.stiffness/delta/mu/nu_slip         (rod self-contact)
//! bc.fix_nodes = "1 2", bc.fix_thetas = "1", bc.fix_xis = "1",
//! bc.fix_axes = "3:z 4:x"                    (roller-style per-axis pins)
//! init.velocity = "vx vy vz", init.theta = "t1 t2 ..."
//! mass.point = "node:kg ..."                 (concentrated payloads)
//! tag.stretch.<name> / tag.bend.<name> / tag.hinge.<name> = "1 2 ..."
//! actuation.wave.<name>  = "<quantity> <tag> <mean> <amplitude> <hz> <phase_first> <phase_last>"
//! actuation.table.<name> = "<quantity> <tag> t:v t:v ..."
//! actuation.csv.<name>   = "<quantity> <path>"
//! log.every = N, log.nodes = "1 5"
//! ```
//!
//! Actuation quantities are `curvature1`, `curvature2`, `twist`, `length`,
//! `hinge_angle`. Wave phases ramp linearly from first to last across the
//! tag's springs in the order the tag lists them. Unrecognized keys are
//! errors, so typos cannot silently disable physics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use nalgebra::Vector3;

use crate::actuation::{
    parse_schedule_csv, sinusoid_per_spring, ActuationSchedule, Quantity, Selection,
};
use crate::contact::ContactParams;
use crate::forces::{DragParams, EnvironmentParams, FloorParams, RftParams, SphereObstacle};
use crate::integrate::{Fix, Integrator, Simulation, SolverSettings, StepReport};
use crate::state::FrameSet;
use crate::topology::{build_topology, BendModel, Material};
use crate::{Error, Result};

type Vec3 = Vector3<f64>;

// ---------------------------------------------------------------- geometry

/// Raw mesh arrays, 0-based in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub nodes: Vec<Vec3>,
    pub edges: Vec<[usize; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

enum Section {
    Nodes,
    Edges,
    Triangles,
}

fn parse_fields<const K: usize>(line: &str, file: &str, lno: usize) -> Result<[f64; K]> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != K {
        return Err(Error::Parse {
            file: file.into(),
            line: lno,
            msg: format!("expected {K} fields, got {}", parts.len()),
        });
    }
    let mut out = [0.0; K];
    for (k, p) in parts.iter().enumerate() {
        out[k] = p.parse().map_err(|_| Error::Parse {
            file: file.into(),
            line: lno,
            msg: format!("not a number: '{p}'"),
        })?;
    }
    Ok(out)
}

/// 1-based indices from a section line, converted to 0-based here. Bounds
/// against the node count are checked after the whole file is read.
fn parse_indices<const K: usize>(line: &str, file: &str, lno: usize) -> Result<[usize; K]> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != K {
        return Err(Error::Parse {
            file: file.into(),
            line: lno,
            msg: format!("expected {K} indices, got {}", parts.len()),
        });
    }
    let mut out = [0usize; K];
    for (k, p) in parts.iter().enumerate() {
        let i: usize = p.parse().map_err(|_| Error::Parse {
            file: file.into(),
            line: lno,
            msg: format!("not an index: '{p}'"),
        })?;
        if i == 0 {
            return Err(Error::Parse {
                file: file.into(),
                line: lno,
                msg: "indices are 1-based; 0 is out of range".into(),
            });
        }
        out[k] = i - 1;
    }
    Ok(out)
}

pub fn parse_geometry(text: &str, file: &str) -> Result<Geometry> {
    let mut geo = Geometry {
        nodes: Vec::new(),
        edges: Vec::new(),
        triangles: Vec::new(),
    };
    let mut section: Option<Section> = None;
    let mut edge_lines: Vec<usize> = Vec::new();
    let mut tri_lines: Vec<usize> = Vec::new();

    for (lno, raw) in text.lines().enumerate() {
        let lno = lno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('*') {
            section = Some(match name.trim().to_ascii_lowercase().as_str() {
                "nodes" => Section::Nodes,
                "edges" => Section::Edges,
                "triangles" => Section::Triangles,
                other => {
                    return Err(Error::Parse {
                        file: file.into(),
                        line: lno,
                        msg: format!("unknown section '*{other}'"),
                    })
                }
            });
            continue;
        }
        match section {
            None => {
                return Err(Error::Parse {
                    file: file.into(),
                    line: lno,
                    msg: "data before any *Section header".into(),
                })
            }
            Some(Section::Nodes) => {
                let [x, y, z] = parse_fields::<3>(line, file, lno)?;
                geo.nodes.push(Vec3::new(x, y, z));
            }
            Some(Section::Edges) => {
                let idx = parse_indices::<2>(line, file, lno)?;
                geo.edges.push(idx);
                edge_lines.push(lno);
            }
            Some(Section::Triangles) => {
                let idx = parse_indices::<3>(line, file, lno)?;
                geo.triangles.push(idx);
                tri_lines.push(lno);
            }
        }
    }

    if geo.nodes.is_empty() {
        return Err(Error::Parse {
            file: file.into(),
            line: 0,
            msg: "no *Nodes section (a geometry needs at least one node)".into(),
        });
    }
    let n = geo.nodes.len();
    for (e, &lno) in geo.edges.iter().zip(&edge_lines) {
        if let Some(&bad) = e.iter().find(|&&i| i >= n) {
            return Err(Error::Parse {
                file: file.into(),
                line: lno,
                msg: format!("edge references node {} but only {n} exist", bad + 1),
            });
        }
    }
    for (t, &lno) in geo.triangles.iter().zip(&tri_lines) {
        if let Some(&bad) = t.iter().find(|&&i| i >= n) {
            return Err(Error::Parse {
                file: file.into(),
                line: lno,
                msg: format!("triangle references node {} but only {n} exist", bad + 1),
            });
        }
    }
    Ok(geo)
}

/// Inverse of [`parse_geometry`]: floats print in shortest round-trip form,
/// indices go back to 1-based.
pub fn serialize_geometry(geo: &Geometry) -> String {
    let mut out = String::from("*Nodes\n");
    for p in &geo.nodes {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    if !geo.edges.is_empty() {
        out.push_str("*Edges\n");
        for e in &geo.edges {
            out.push_str(&format!("{} {}\n", e[0] + 1, e[1] + 1));
        }
    }
    if !geo.triangles.is_empty() {
        out.push_str("*Triangles\n");
        for t in &geo.triangles {
            out.push_str(&format!("{} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
    }
    out
}

pub fn load_geometry(path: &Path) -> Result<Geometry> {
    let text = fs::read_to_string(path)?;
    parse_geometry(&text, &path.display().to_string())
}

// ------------------------------------------------------------------ config

/// Flat `key = value` config with `#` comments. Every key must be consumed
/// by [`build_simulation`]; leftovers are reported as errors.
#[derive(Debug)]
pub struct Config {
    file: String,
    values: BTreeMap<String, (usize, String)>,
    used: std::cell::RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse(text: &str, file: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (lno, raw) in text.lines().enumerate() {
            let lno = lno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: file.into(),
                    line: lno,
                    msg: format!("expected `key = value`, got '{line}'"),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    file: file.into(),
                    line: lno,
                    msg: "empty key".into(),
                });
            }
            if let Some((prev, _)) = values.insert(key.clone(), (lno, value)) {
                return Err(Error::Parse {
                    file: file.into(),
                    line: lno,
                    msg: format!("duplicate key '{key}' (first set on line {prev})"),
                });
            }
        }
        Ok(Config {
            file: file.into(),
            values,
            used: Default::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)?;
        Config::parse(&text, &path.display().to_string())
    }

    fn err(&self, key: &str, msg: String) -> Error {
        let line = self.values.get(key).map(|(l, _)| *l).unwrap_or(0);
        Error::Parse {
            file: self.file.clone(),
            line,
            msg,
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key).map(|(_, v)| v.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| self.err(key, format!("missing required key '{key}'")))
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| self.err(key, format!("'{key}': not a number: '{v}'"))),
        }
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| self.err(key, format!("'{key}': not a number: '{v}'")))
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| self.err(key, format!("'{key}': not a count: '{v}'"))),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(self.err(key, format!("'{key}': expected true/false, got '{v}'"))),
        }
    }

    pub fn vec3(&self, key: &str, default: Vec3) -> Result<Vec3> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(self.err(key, format!("'{key}': expected 3 numbers, got '{v}'")));
                }
                let mut out = Vec3::zeros();
                for k in 0..3 {
                    out[k] = parts[k].parse().map_err(|_| {
                        self.err(key, format!("'{key}': not a number: '{}'", parts[k]))
                    })?;
                }
                Ok(out)
            }
        }
    }

    /// Whitespace-separated 1-based indices, converted to 0-based.
    pub fn index_list(&self, key: &str) -> Result<Vec<usize>> {
        let Some(v) = self.get(key) else {
            return Ok(Vec::new());
        };
        v.split_whitespace()
            .map(|p| {
                let i: usize = p
                    .parse()
                    .map_err(|_| self.err(key, format!("'{key}': not an index: '{p}'")))?;
                if i == 0 {
                    return Err(self.err(key, format!("'{key}': indices are 1-based")));
                }
                Ok(i - 1)
            })
            .collect()
    }

    pub fn float_list(&self, key: &str) -> Result<Vec<f64>> {
        let Some(v) = self.get(key) else {
            return Ok(Vec::new());
        };
        v.split_whitespace()
            .map(|p| {
                p.parse()
                    .map_err(|_| self.err(key, format!("'{key}': not a number: '{p}'")))
            })
            .collect()
    }

    /// All keys starting with `prefix`, in sorted order (not marked used).
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.values
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Error if any key was never read: a typo in a config should never
    /// silently disable physics.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        let unused: Vec<&String> = self.values.keys().filter(|k| !used.contains(*k)).collect();
        if let Some(first) = unused.first() {
            return Err(self.err(
                first,
                format!(
                    "unrecognized key{}: {}",
                    if unused.len() > 1 { "s" } else { "" },
                    unused
                        .iter()
                        .map(|s| format!("'{s}'"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ));
        }
        Ok(())
    }
}

// ------------------------------------------------------------ sim assembly

/// What to run and what to record.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub total_time: f64,
    pub log_every: usize,
    /// Tracked nodes, 0-based.
    pub tracked: Vec<usize>,
}

fn parse_quantity(s: &str, cfg: &Config, key: &str) -> Result<Quantity> {
    Ok(match s {
        "curvature1" => Quantity::Curvature1,
        "curvature2" => Quantity::Curvature2,
        "twist" => Quantity::Twist,
        "length" => Quantity::Length,
        "hinge_angle" => Quantity::HingeAngle,
        other => {
            return Err(cfg.err(
                key,
                format!(
                    "'{key}': unknown quantity '{other}' (curvature1, curvature2, twist, length, hinge_angle)"
                ),
            ))
        }
    })
}

fn quantity_family(q: Quantity) -> &'static str {
    match q {
        Quantity::Curvature1 | Quantity::Curvature2 | Quantity::Twist => "bend",
        Quantity::Length => "stretch",
        Quantity::HingeAngle => "hinge",
    }
}

fn parse_integrator(s: &str, cfg: &Config) -> Result<Integrator> {
    Ok(match s {
        "backward_euler" => Integrator::BackwardEuler,
        "implicit_midpoint" => Integrator::ImplicitMidpoint,
        "forward_euler" => Integrator::ForwardEuler,
        other => {
            return Err(cfg.err(
                "sim.integrator",
                format!("unknown integrator '{other}' (backward_euler, implicit_midpoint, forward_euler)"),
            ))
        }
    })
}

/// Assemble a [`Simulation`] plus its [`RunPlan`] from parsed files.
/// `base_dir` anchors relative paths referenced by the config (actuation
/// CSVs).
pub fn build_simulation(
    geo: &Geometry,
    cfg: &Config,
    base_dir: &Path,
) -> Result<(Simulation, RunPlan)> {
    let topo = build_topology(geo.nodes.clone(), geo.edges.clone(), geo.triangles.clone())?;

    let mut material = Material::default();
    material.rod.density = cfg.f64("material.rod.density", material.rod.density)?;
    material.rod.youngs = cfg.f64("material.rod.youngs", material.rod.youngs)?;
    material.rod.poisson = cfg.f64("material.rod.poisson", material.rod.poisson)?;
    material.rod.radius = cfg.f64("material.rod.radius", material.rod.radius)?;
    material.shell.density = cfg.f64("material.shell.density", material.shell.density)?;
    material.shell.youngs = cfg.f64("material.shell.youngs", material.shell.youngs)?;
    material.shell.poisson = cfg.f64("material.shell.poisson", material.shell.poisson)?;
    material.shell.thickness = cfg.f64("material.shell.thickness", material.shell.thickness)?;
    if material.rod.youngs <= 0.0 || material.shell.youngs <= 0.0 {
        return Err(Error::Config("Young's moduli must be positive".into()));
    }

    let mode = match cfg.get("shell.bending") {
        None | Some("hinge") => BendModel::Hinge,
        Some("midedge") => BendModel::Midedge,
        Some(other) => {
            return Err(cfg.err(
                "shell.bending",
                format!("unknown bending model '{other}' (hinge, midedge)"),
            ))
        }
    };

    let defaults = SolverSettings::default();
    let settings = SolverSettings {
        dt: cfg.f64("sim.dt", defaults.dt)?,
        tolerance: cfg.f64("sim.tolerance", defaults.tolerance)?,
        max_iterations: cfg.usize("sim.max_iterations", defaults.max_iterations)?,
        line_search: cfg.bool("sim.line_search", defaults.line_search)?,
        integrator: match cfg.get("sim.integrator") {
            None => defaults.integrator,
            Some(s) => parse_integrator(s, cfg)?,
        },
        statics: cfg.bool("sim.statics", false)?,
        two_d: cfg.bool("sim.two_d", false)?,
        inertial_guess: cfg.bool("sim.inertial_guess", false)?,
    };

    let mut env = EnvironmentParams {
        gravity: cfg.vec3("env.gravity", Vec3::zeros())?,
        rho_med: cfg.f64("env.rho_med", 0.0)?,
        viscosity: cfg.f64("env.viscosity", 0.0)?,
        floor: None,
        rft: None,
        drag: None,
        obstacles: Vec::new(),
    };
    if !cfg.keys_with_prefix("env.floor.").is_empty() {
        let mut floor = FloorParams::new(
            cfg.require_f64("env.floor.stiffness")?,
            cfg.require_f64("env.floor.delta")?,
            cfg.f64("env.floor.mu", 0.0)?,
            cfg.f64("env.floor.nu_slip", 1e-3)?,
        );
        floor.height = cfg.f64("env.floor.height", 0.0)?;
        env.floor = Some(floor);
    }
    if !cfg.keys_with_prefix("env.rft.").is_empty() {
        env.rft = Some(RftParams {
            c_t: cfg.require_f64("env.rft.ct")?,
            c_n: cfg.require_f64("env.rft.cn")?,
        });
    }
    if !cfg.keys_with_prefix("env.drag.").is_empty() {
        env.drag = Some(DragParams {
            c_d: cfg.require_f64("env.drag.cd")?,
        });
    }
    if !cfg.keys_with_prefix("env.obstacle.").is_empty() {
        env.obstacles.push(SphereObstacle {
            center: cfg.vec3("env.obstacle.center", Vec3::zeros())?,
            radius: cfg.require_f64("env.obstacle.radius")?,
            stiffness: cfg.require_f64("env.obstacle.stiffness")?,
            delta: cfg.require_f64("env.obstacle.delta")?,
            mu: cfg.f64("env.obstacle.mu", 0.0)?,
            nu_slip: cfg.f64("env.obstacle.nu_slip", 1e-3)?,
        });
    }

    let mut sim = Simulation::new(topo, material, mode, settings, env)?;

    if !cfg.keys_with_prefix("contact.").is_empty() {
        sim.contact = Some(ContactParams::new(
            cfg.require_f64("contact.stiffness")?,
            cfg.require_f64("contact.delta")?,
            cfg.f64("contact.mu", 0.0)?,
            cfg.f64("contact.nu_slip", 1e-3)?,
        ));
    }

    // Boundary conditions.
    let mut fixes: Vec<Fix> = Vec::new();
    for n in cfg.index_list("bc.fix_nodes")? {
        fixes.push(Fix::Node(n));
    }
    for e in cfg.index_list("bc.fix_thetas")? {
        fixes.push(Fix::Theta(e));
    }
    for s in cfg.index_list("bc.fix_xis")? {
        fixes.push(Fix::Xi(s));
    }
    if let Some(v) = cfg.get("bc.fix_axes") {
        let v = v.to_string();
        for part in v.split_whitespace() {
            let Some((node, axis)) = part.split_once(':') else {
                return Err(cfg.err(
                    "bc.fix_axes",
                    format!("'bc.fix_axes': expected node:axis, got '{part}'"),
                ));
            };
            let n: usize = node.parse().map_err(|_| {
                cfg.err("bc.fix_axes", format!("'bc.fix_axes': not an index: '{node}'"))
            })?;
            if n == 0 {
                return Err(cfg.err("bc.fix_axes", "'bc.fix_axes': indices are 1-based".into()));
            }
            let axis = match axis {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                other => {
                    return Err(cfg.err(
                        "bc.fix_axes",
                        format!("'bc.fix_axes': axis must be x, y, or z, got '{other}'"),
                    ))
                }
            };
            fixes.push(Fix::Axis { node: n - 1, axis });
        }
    }
    if !fixes.is_empty() {
        sim.fix(&fixes)?;
    }

    // Initial values: uniform nodal velocity, per-edge twist angles.
    let v0 = cfg.vec3("init.velocity", Vec3::zeros())?;
    if v0 != Vec3::zeros() {
        for n in 0..sim.topo.num_nodes() {
            for a in 0..3 {
                sim.state.vel[sim.layout.node_dof(n, a)] = v0[a];
            }
        }
    }
    let theta0 = cfg.float_list("init.theta")?;
    if !theta0.is_empty() {
        if theta0.len() != sim.layout.num_theta {
            return Err(cfg.err(
                "init.theta",
                format!(
                    "'init.theta': {} values for {} twist DOFs",
                    theta0.len(),
                    sim.layout.num_theta
                ),
            ));
        }
        for (e, &t) in theta0.iter().enumerate() {
            sim.state.q[sim.layout.theta_dof(e)] = t;
        }
        // Rebuild frames so reference twist is measured with the given
        // angles; natural values stay those of the undeformed build.
        sim.state.frames = FrameSet::init(&sim.topo, &sim.topo.nodes.clone(), &theta0, &sim.springs)?;
    }

    // Concentrated payloads.
    if let Some(v) = cfg.get("mass.point") {
        let v = v.to_string();
        for part in v.split_whitespace() {
            let Some((node, kg)) = part.split_once(':') else {
                return Err(cfg.err(
                    "mass.point",
                    format!("'mass.point': expected node:kg, got '{part}'"),
                ));
            };
            let n: usize = node.parse().map_err(|_| {
                cfg.err("mass.point", format!("'mass.point': not an index: '{node}'"))
            })?;
            let m: f64 = kg.parse().map_err(|_| {
                cfg.err("mass.point", format!("'mass.point': not a mass: '{kg}'"))
            })?;
            if n == 0 || n > sim.topo.num_nodes() {
                return Err(cfg.err("mass.point", format!("'mass.point': no node {n}")));
            }
            if !(m > 0.0) {
                return Err(cfg.err("mass.point", format!("'mass.point': mass must be positive, got {m}")));
            }
            sim.mass.add_point_mass(&sim.layout, n - 1, m);
            sim.env.add_point_mass(n - 1, m);
        }
    }

    // Tags: family-qualified so the same name can exist per family.
    for family in ["stretch", "bend", "hinge"] {
        let prefix = format!("tag.{family}.");
        for key in cfg.keys_with_prefix(&prefix) {
            let name = key[prefix.len()..].to_string();
            let idxs = cfg.index_list(&key)?;
            if idxs.is_empty() {
                return Err(cfg.err(&key, format!("'{key}': empty tag")));
            }
            let limit = match family {
                "stretch" => sim.springs.stretch.len(),
                "bend" => sim.springs.bend_twist.len(),
                _ => sim.springs.hinges.len(),
            };
            if let Some(&bad) = idxs.iter().find(|&&i| i >= limit) {
                return Err(cfg.err(
                    &key,
                    format!("'{key}': index {} outside {family} family of {limit}", bad + 1),
                ));
            }
            sim.tags.insert(format!("{family}:{name}"), idxs);
        }
    }

    // Actuation.
    for key in cfg.keys_with_prefix("actuation.wave.") {
        let v = cfg.require(&key)?.to_string();
        let parts: Vec<&str> = v.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(cfg.err(
                &key,
                format!("'{key}': expected `<quantity> <tag> <mean> <amplitude> <hz> <phase_first> <phase_last>`"),
            ));
        }
        let quantity = parse_quantity(parts[0], cfg, &key)?;
        let family = quantity_family(quantity);
        let tag = format!("{family}:{}", parts[1]);
        let nums: Result<Vec<f64>> = parts[2..]
            .iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| cfg.err(&key, format!("'{key}': not a number: '{p}'")))
            })
            .collect();
        let [mean, amplitude, hz, p0, p1] = nums?[..] else {
            unreachable!()
        };
        let indices = sim
            .tags
            .get(&tag)
            .ok_or_else(|| cfg.err(&key, format!("'{key}': unknown tag '{}'", parts[1])))?
            .to_vec();
        let m = indices.len();
        let phases: Vec<f64> = (0..m)
            .map(|k| {
                if m == 1 {
                    p0
                } else {
                    p0 + (p1 - p0) * k as f64 / (m - 1) as f64
                }
            })
            .collect();
        sim.schedules
            .extend(sinusoid_per_spring(quantity, &indices, mean, amplitude, hz, &phases)?);
    }
    for key in cfg.keys_with_prefix("actuation.table.") {
        let v = cfg.require(&key)?.to_string();
        let parts: Vec<&str> = v.split_whitespace().collect();
        if parts.len() < 3 {
            return Err(cfg.err(
                &key,
                format!("'{key}': expected `<quantity> <tag> t:v [t:v ...]`"),
            ));
        }
        let quantity = parse_quantity(parts[0], cfg, &key)?;
        let tag = format!("{}:{}", quantity_family(quantity), parts[1]);
        if sim.tags.get(&tag).is_none() {
            return Err(cfg.err(&key, format!("'{key}': unknown tag '{}'", parts[1])));
        }
        let mut samples = Vec::new();
        for p in &parts[2..] {
            let Some((t, val)) = p.split_once(':') else {
                return Err(cfg.err(&key, format!("'{key}': expected t:v, got '{p}'")));
            };
            let t: f64 = t
                .parse()
                .map_err(|_| cfg.err(&key, format!("'{key}': not a time: '{t}'")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| cfg.err(&key, format!("'{key}': not a value: '{val}'")))?;
            samples.push((t, val));
        }
        sim.schedules
            .push(ActuationSchedule::table(quantity, Selection::Tag(tag), samples)?);
    }
    for key in cfg.keys_with_prefix("actuation.csv.") {
        let v = cfg.require(&key)?.to_string();
        let parts: Vec<&str> = v.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(cfg.err(&key, format!("'{key}': expected `<quantity> <path>`")));
        }
        let quantity = parse_quantity(parts[0], cfg, &key)?;
        let path = base_dir.join(parts[1]);
        let text = fs::read_to_string(&path)?;
        let parsed = parse_schedule_csv(&text, &path.display().to_string(), quantity)?;
        for mut sch in parsed {
            // CSV headers carry bare tag names; qualify them by family.
            if let Selection::Tag(name) = &sch.springs {
                let tag = format!("{}:{}", quantity_family(quantity), name);
                if sim.tags.get(&tag).is_none() {
                    return Err(cfg.err(&key, format!("'{key}': unknown tag '{name}'")));
                }
                sch.springs = Selection::Tag(tag);
            }
            sim.schedules.push(sch);
        }
    }

    let plan = RunPlan {
        total_time: cfg.f64("sim.total_time", 0.0)?,
        log_every: cfg.usize("log.every", 10)?,
        tracked: cfg.index_list("log.nodes")?,
    };
    if let Some(&bad) = plan.tracked.iter().find(|&&n| n >= sim.topo.num_nodes()) {
        return Err(cfg.err(
            "log.nodes",
            format!("'log.nodes': no node {}", bad + 1),
        ));
    }
    if plan.log_every == 0 {
        return Err(cfg.err("log.every", "'log.every' must be at least 1".into()));
    }
    if !settings.statics && !(plan.total_time > 0.0) {
        return Err(cfg.err(
            "sim.total_time",
            "'sim.total_time' must be positive for a dynamic run".into(),
        ));
    }

    cfg.finish()?;
    Ok((sim, plan))
}

// ----------------------------------------------------------------- running

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub frames_logged: usize,
    pub final_time: f64,
    pub last_report: Option<StepReport>,
}

fn write_frame_row(
    w: &mut impl IoWrite,
    time: f64,
    q: &nalgebra::DVector<f64>,
    u: &nalgebra::DVector<f64>,
) -> std::io::Result<()> {
    write!(w, "{time}")?;
    for v in q.iter() {
        write!(w, ",{v}")?;
    }
    for v in u.iter() {
        write!(w, ",{v}")?;
    }
    writeln!(w)
}

fn write_tracked_row(
    w: &mut impl IoWrite,
    time: f64,
    sim: &Simulation,
    tracked: &[usize],
) -> std::io::Result<()> {
    write!(w, "{time}")?;
    for &n in tracked {
        let p = sim.state.node_pos(n);
        write!(w, ",{},{},{}", p.x, p.y, p.z)?;
    }
    writeln!(w)
}

/// Step the simulation per the plan, writing `frames.csv` (time, full q,
/// full u, one row every `log_every` steps plus the first and last) and,
/// when nodes are tracked, `tracked.csv` (time, x, y, z per node) into
/// `out`. A statics plan solves once and writes the single resulting row.
/// Solver failures flush what was logged and surface as errors.
pub fn run_simulation(
    sim: &mut Simulation,
    plan: &RunPlan,
    out: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let mut frames = BufWriter::new(fs::File::create(out.join("frames.csv"))?);
    write!(frames, "time")?;
    for d in 0..sim.layout.total() {
        write!(frames, ",q{d}")?;
    }
    for d in 0..sim.layout.total() {
        write!(frames, ",u{d}")?;
    }
    writeln!(frames)?;

    let mut tracked = if plan.tracked.is_empty() {
        None
    } else {
        let mut w = BufWriter::new(fs::File::create(out.join("tracked.csv"))?);
        write!(w, "time")?;
        for &n in &plan.tracked {
            let n1 = n + 1;
            write!(w, ",n{n1}_x,n{n1}_y,n{n1}_z")?;
        }
        writeln!(w)?;
        Some(w)
    };

    let mut frames_logged = 0usize;
    let mut log_state = |sim: &Simulation,
                         frames: &mut BufWriter<fs::File>,
                         tracked: &mut Option<BufWriter<fs::File>>|
     -> Result<()> {
        write_frame_row(frames, sim.state.time, &sim.state.q, &sim.state.vel)?;
        if let Some(w) = tracked {
            write_tracked_row(w, sim.state.time, sim, &plan.tracked)?;
        }
        Ok(())
    };

    if sim.settings.statics {
        let report = sim.step()?;
        log_state(sim, &mut frames, &mut tracked)?;
        frames.flush()?;
        if let Some(w) = &mut tracked {
            w.flush()?;
        }
        return Ok(RunSummary {
            steps: 1,
            frames_logged: 1,
            final_time: sim.state.time,
            last_report: Some(report),
        });
    }

    let n_steps = (plan.total_time / sim.settings.dt).round() as usize;
    log_state(sim, &mut frames, &mut tracked)?;
    frames_logged += 1;
    let mut last_report = None;
    for k in 1..=n_steps {
        match sim.step() {
            Ok(r) => last_report = Some(r),
            Err(e) => {
                frames.flush()?;
                if let Some(w) = &mut tracked {
                    w.flush()?;
                }
                return Err(e);
            }
        }
        if k % plan.log_every == 0 || k == n_steps {
            log_state(sim, &mut frames, &mut tracked)?;
            frames_logged += 1;
        }
    }
    frames.flush()?;
    if let Some(w) = &mut tracked {
        w.flush()?;
    }
    Ok(RunSummary {
        steps: n_steps,
        frames_logged,
        final_time: sim.state.time,
        last_report,
    })
}
