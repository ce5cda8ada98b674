//! Time-varying natural (stress-free) quantities.
//!
//! Actuation overwrites the barred values the elastic energies pull toward:
//! the natural curvature pair and natural twist of bend-twist springs, the
//! natural length of stretch springs, and the natural dihedral angle of
//! hinges. A schedule pairs one such quantity with the springs it drives
//! (by index range or by a tag assigned at build) and a signal, either
//! tabulated samples with linear interpolation and clamped ends, or an
//! analytic sinusoid. Schedules are applied once per step before assembly,
//! so the values are frozen during Newton iterations.
//!
//! Changing a natural length leaves the spring stiffness alone: the edge
//! still represents the same piece of material, only its rest state moves.

use std::collections::HashMap;

use crate::topology::SpringSet;
use crate::{Error, Result};

/// Which barred quantity a schedule drives. The quantity picks the spring
/// family: curvature and twist address bend-twist springs, length addresses
/// stretch springs, the dihedral angle addresses hinges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// First component of the natural curvature (along the first material
    /// director), dimensionless discrete curvature.
    Curvature1,
    /// Second component of the natural curvature.
    Curvature2,
    /// Natural twist.
    Twist,
    /// Natural edge length in meters. Values must stay positive.
    Length,
    /// Natural dihedral angle of a hinge, radians.
    HingeAngle,
}

/// Springs a schedule drives, within the family its quantity implies.
#[derive(Debug, Clone)]
pub enum Selection {
    /// Half-open index range `start..end`.
    Range(usize, usize),
    /// Named set assigned at build time.
    Tag(String),
}

#[derive(Debug, Clone)]
pub enum Signal {
    /// `(time, value)` samples with strictly increasing times. Linear in
    /// between, clamped to the end values outside the sampled range.
    Table(Vec<(f64, f64)>),
    /// `mean + amplitude * sin(2 pi frequency t + phase)`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ActuationSchedule {
    pub quantity: Quantity,
    pub springs: Selection,
    pub signal: Signal,
}

impl ActuationSchedule {
    /// Tabulated schedule. Times must be strictly increasing; a length
    /// schedule must keep every value positive.
    pub fn table(
        quantity: Quantity,
        springs: Selection,
        samples: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("actuation schedule has no samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "actuation sample times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if quantity == Quantity::Length {
            if let Some((t, v)) = samples.iter().find(|(_, v)| !(*v > 0.0)) {
                return Err(Error::Config(format!(
                    "natural length must stay positive, got {v} at t = {t}"
                )));
            }
        }
        Ok(Self {
            quantity,
            springs,
            signal: Signal::Table(samples),
        })
    }

    pub fn sinusoid(
        quantity: Quantity,
        springs: Selection,
        mean: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    ) -> Self {
        Self {
            quantity,
            springs,
            signal: Signal::Sinusoid {
                mean,
                amplitude,
                frequency,
                phase,
            },
        }
    }
}

/// Named spring-index sets, assigned by whoever builds the structure.
/// Indices are interpreted within the family a schedule's quantity implies.
#[derive(Debug, Clone, Default)]
pub struct Tags {
    map: HashMap<String, Vec<usize>>,
}

impl Tags {
    pub fn insert(&mut self, name: impl Into<String>, indices: Vec<usize>) {
        self.map.insert(name.into(), indices);
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.map.get(name).map(|v| v.as_slice())
    }
}

/// Value of a schedule at time `t`: interpolated for tables, closed-form
/// for sinusoids.
pub fn evaluate_schedule(schedule: &ActuationSchedule, t: f64) -> Result<f64> {
    match &schedule.signal {
        Signal::Table(samples) => {
            if samples.is_empty() {
                return Err(Error::Config("actuation schedule has no samples".into()));
            }
            let first = samples[0];
            let last = samples[samples.len() - 1];
            if t <= first.0 {
                return Ok(first.1);
            }
            if t >= last.0 {
                return Ok(last.1);
            }
            // First sample with time > t; its predecessor exists because
            // t > first.0.
            let hi = samples.partition_point(|&(st, _)| st <= t);
            let (t0, v0) = samples[hi - 1];
            let (t1, v1) = samples[hi];
            let w = (t - t0) / (t1 - t0);
            Ok(v0 + w * (v1 - v0))
        }
        Signal::Sinusoid {
            mean,
            amplitude,
            frequency,
            phase,
        } => Ok(mean + amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin()),
    }
}

fn family_len(springs: &SpringSet, quantity: Quantity) -> usize {
    match quantity {
        Quantity::Curvature1 | Quantity::Curvature2 | Quantity::Twist => springs.bend_twist.len(),
        Quantity::Length => springs.stretch.len(),
        Quantity::HingeAngle => springs.hinges.len(),
    }
}

fn resolve<'a>(
    selection: &'a Selection,
    tags: &'a Tags,
    len: usize,
) -> Result<std::borrow::Cow<'a, [usize]>> {
    use std::borrow::Cow;
    let indices: Cow<[usize]> = match selection {
        Selection::Range(start, end) => {
            if start > end || *end > len {
                return Err(Error::Config(format!(
                    "actuation range {start}..{end} outside spring family of {len}"
                )));
            }
            Cow::Owned((*start..*end).collect())
        }
        Selection::Tag(name) => {
            let idxs = tags
                .get(name)
                .ok_or_else(|| Error::Config(format!("unknown actuation tag '{name}'")))?;
            if let Some(&bad) = idxs.iter().find(|&&i| i >= len) {
                return Err(Error::Config(format!(
                    "actuation tag '{name}' index {bad} outside spring family of {len}"
                )));
            }
            Cow::Borrowed(idxs)
        }
    };
    Ok(indices)
}

/// Overwrite the addressed natural quantities with each schedule's value at
/// time `t`. Call before assembling forces for a step.
pub fn apply_actuation(
    springs: &mut SpringSet,
    schedules: &[ActuationSchedule],
    tags: &Tags,
    t: f64,
) -> Result<()> {
    for sch in schedules {
        let value = evaluate_schedule(sch, t)?;
        if sch.quantity == Quantity::Length && !(value > 0.0) {
            return Err(Error::Config(format!(
                "natural length must stay positive, got {value} at t = {t}"
            )));
        }
        let idxs = resolve(&sch.springs, tags, family_len(springs, sch.quantity))?;
        for &i in idxs.iter() {
            match sch.quantity {
                Quantity::Curvature1 => springs.bend_twist[i].kappa_bar[0] = value,
                Quantity::Curvature2 => springs.bend_twist[i].kappa_bar[1] = value,
                Quantity::Twist => springs.bend_twist[i].twist_bar = value,
                Quantity::Length => springs.stretch[i].rest_len = value,
                Quantity::HingeAngle => springs.hinges[i].phi_bar = value,
            }
        }
    }
    Ok(())
}

/// One sinusoid schedule per spring with its own phase: the building block
/// for traveling waves (snake curvature, manta flapping, worm peristalsis).
pub fn sinusoid_per_spring(
    quantity: Quantity,
    indices: &[usize],
    mean: f64,
    amplitude: f64,
    frequency: f64,
    phases: &[f64],
) -> Result<Vec<ActuationSchedule>> {
    if indices.len() != phases.len() {
        return Err(Error::Config(format!(
            "{} springs but {} phases",
            indices.len(),
            phases.len()
        )));
    }
    Ok(indices
        .iter()
        .zip(phases)
        .map(|(&i, &phase)| {
            ActuationSchedule::sinusoid(
                quantity,
                Selection::Range(i, i + 1),
                mean,
                amplitude,
                frequency,
                phase,
            )
        })
        .collect())
}

/// Parse a CSV schedule file: header `time,<tag>[,<tag>...]`, one column of
/// sample times and one value column per tagged spring set. Lines starting
/// with `#` and blank lines are skipped. Produces one tabulated schedule per
/// tag column, all driving `quantity`.
pub fn parse_schedule_csv(
    text: &str,
    file: &str,
    quantity: Quantity,
) -> Result<Vec<ActuationSchedule>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line: 0,
            msg: "empty schedule file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || !cols[0].eq_ignore_ascii_case("time") {
        return Err(Error::Parse {
            file: file.into(),
            line: hline,
            msg: "expected header `time,<tag>[,<tag>...]`".into(),
        });
    }
    let tags: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();

    let mut columns: Vec<Vec<(f64, f64)>> = vec![Vec::new(); tags.len()];
    for (lno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                file: file.into(),
                line: lno,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let mut nums = Vec::with_capacity(fields.len());
        for f in &fields {
            nums.push(f.parse::<f64>().map_err(|_| Error::Parse {
                file: file.into(),
                line: lno,
                msg: format!("not a number: '{f}'"),
            })?);
        }
        for (k, col) in columns.iter_mut().enumerate() {
            col.push((nums[0], nums[k + 1]));
        }
    }

    tags.into_iter()
        .zip(columns)
        .map(|(tag, samples)| {
            ActuationSchedule::table(quantity, Selection::Tag(tag), samples)
        })
        .collect()
}
