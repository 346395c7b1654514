//! Score tables: φ precomputed by short simulations over a parameter grid,
//! persisted as a commented text header followed by CSV rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bo::Candidate;
use crate::controller::{ControllerParams, ParamBounds, SpeedProfile, Variant};
use crate::dog::{episode_score, DogThresholds};
use crate::error::{Error, Result};
use crate::sim::{run_episode, ModelParams, RobotState};

pub const TABLE_VERSION: u32 = 1;

/// Points per scrambled Sobol block; longer grids chain blocks with
/// derived seeds.
const SOBOL_BLOCK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sobol,
    UniformRandom,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Sobol => "sobol",
            Scheme::UniformRandom => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sobol" => Ok(Scheme::Sobol),
            "uniform" | "random" => Ok(Scheme::UniformRandom),
            other => Err(Error::config(format!("unknown sampling scheme `{other}`"))),
        }
    }
}

/// Points of the unit cube, deterministic per seed.
pub fn unit_samples(dim: usize, n: usize, seed: u64, scheme: Scheme) -> Vec<Vec<f64>> {
    match scheme {
        Scheme::Sobol => (0..n)
            .map(|i| {
                let block = (i / SOBOL_BLOCK) as u64;
                let block_seed = seed.wrapping_add(block.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let s = (block_seed ^ (block_seed >> 32)) as u32;
                let idx = (i % SOBOL_BLOCK) as u32;
                (0..dim).map(|d| sobol_burley::sample(idx, d as u32, s) as f64).collect()
            })
            .collect(),
        Scheme::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
        }
    }
}

/// `n` controller points inside `bounds`; frozen entries come from `frozen`.
pub fn sample_grid(bounds: &ParamBounds, frozen: &ControllerParams, n: usize, seed: u64, scheme: Scheme) -> Result<Vec<ControllerParams>> {
    bounds.validate()?;
    if n == 0 {
        return Err(Error::invalid("grid size must be at least 1"));
    }
    unit_samples(bounds.dim(), n, seed, scheme)
        .iter()
        .map(|u| ControllerParams::from_free_values(bounds.variant, &bounds.scale(u), frozen))
        .collect()
}

/// Everything that determines a table's contents besides the grid itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub bounds: ParamBounds,
    pub frozen: ControllerParams,
    pub model: ModelParams,
    pub sim_seconds: f64,
    pub target_speed: f64,
    pub thresholds: DogThresholds,
    pub seed: u64,
    pub scheme: Scheme,
}

impl TableSpec {
    pub fn new(bounds: ParamBounds) -> Self {
        TableSpec {
            bounds,
            frozen: ControllerParams::reference(),
            model: ModelParams::default(),
            sim_seconds: 3.5,
            target_speed: 0.5,
            thresholds: DogThresholds::default(),
            seed: 0,
            scheme: Scheme::Sobol,
        }
    }

    /// Hash of the settings that make scores comparable: model, short-sim
    /// setup, thresholds and the frozen controller values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("v{TABLE_VERSION}\n"));
        h.update(self.model.describe());
        h.update(self.thresholds.describe());
        h.update(format!(
            "sim={};speed={};variant={};frozen={:?}",
            self.sim_seconds,
            self.target_speed,
            self.bounds.variant,
            self.frozen.all_values()
        ));
        h.finalize().iter().take(16).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    /// Free parameter values, in the variant's order.
    pub params: Vec<f64>,
    pub phi: f64,
    pub time_fraction: f64,
    /// Sums of M1..M4 over the episode's steps.
    pub metric_sums: [f64; 4],
    pub steps: usize,
    /// Set when the simulation failed and the row was scored 0.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub spec: TableSpec,
    pub rows: Vec<TableRow>,
}

/// Short-simulation score of a single point.
pub fn score_point(params: &ControllerParams, spec: &TableSpec) -> TableRow {
    let profile = SpeedProfile::constant(spec.target_speed, u32::MAX).expect("validated speed");
    let init = RobotState::at_rest(params.z_des);
    match run_episode(params, &profile, &spec.model, spec.sim_seconds, &init) {
        Ok(ep) => {
            let score = episode_score(&ep, &spec.thresholds);
            TableRow {
                params: params.free_values(),
                phi: score.phi,
                time_fraction: score.time_fraction,
                metric_sums: score.metric_sums(),
                steps: ep.steps.len(),
                flagged: false,
            }
        }
        Err(e) => {
            log::debug!("table point failed: {e}");
            TableRow {
                params: params.free_values(),
                phi: 0.0,
                time_fraction: 0.0,
                metric_sums: [0.0; 4],
                steps: 0,
                flagged: true,
            }
        }
    }
}

/// Scores every grid point; `parallel` only changes scheduling, never the
/// result.
pub fn build_table_with(spec: &TableSpec, grid: &[ControllerParams], parallel: bool) -> Result<ScoreTable> {
    spec.bounds.validate()?;
    spec.model.validate()?;
    if !(spec.sim_seconds > 0.0) {
        return Err(Error::invalid("short-sim duration must be positive"));
    }
    if !(spec.target_speed >= 0.0 && spec.target_speed.is_finite()) {
        return Err(Error::invalid("target speed must be non-negative"));
    }
    for p in grid {
        if p.variant != spec.bounds.variant || !spec.bounds.contains(&p.free_values()) {
            return Err(Error::invalid("grid point outside the table bounds"));
        }
    }
    let rows = if parallel {
        grid.par_iter().map(|p| score_point(p, spec)).collect()
    } else {
        grid.iter().map(|p| score_point(p, spec)).collect()
    };
    Ok(ScoreTable { spec: spec.clone(), rows })
}

pub fn build_table(spec: &TableSpec, grid: &[ControllerParams]) -> Result<ScoreTable> {
    build_table_with(spec, grid, true)
}

/// Samples `n` points with the scheme and seed in `spec`, then scores them.
pub fn generate_table(spec: &TableSpec, n: usize) -> Result<ScoreTable> {
    let grid = sample_grid(&spec.bounds, &spec.frozen, n, spec.seed, spec.scheme)?;
    build_table(spec, &grid)
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fingerprint(&self) -> String {
        self.spec.fingerprint()
    }

    /// `(min, max)` of φ over the rows.
    pub fn phi_range(&self) -> (f64, f64) {
        self.rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.phi), hi.max(r.phi)))
    }

    pub fn params(&self, index: usize) -> Result<ControllerParams> {
        ControllerParams::from_free_values(self.spec.bounds.variant, &self.rows[index].params, &self.spec.frozen)
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>> {
        (0..self.rows.len())
            .map(|i| {
                Ok(Candidate {
                    params: self.params(i)?,
                    phi: self.rows[i].phi,
                    normalized: self.spec.bounds.normalize(&self.rows[i].params),
                })
            })
            .collect()
    }

    /// Fails with a version error unless the table was built with the
    /// given thresholds and model.
    pub fn check_compatible(&self, thresholds: &DogThresholds, model: &ModelParams) -> Result<()> {
        if self.spec.thresholds != *thresholds {
            return Err(Error::Version(format!(
                "table thresholds ({}) differ from the expected ({})",
                self.spec.thresholds.describe(),
                thresholds.describe()
            )));
        }
        if self.spec.model != *model {
            return Err(Error::Version(format!(
                "table model ({}) differs from the expected ({})",
                self.spec.model.describe(),
                model.describe()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        let m = &s.model;
        let t = &s.thresholds;
        let mut out = String::new();
        out.push_str("# dogbo score table\n");
        let _ = writeln!(out, "# version: {TABLE_VERSION}");
        let _ = writeln!(out, "# fingerprint: {}", s.fingerprint());
        let _ = writeln!(out, "# variant: {}", s.bounds.variant);
        let _ = writeln!(out, "# lower: {}", list(&s.bounds.lower));
        let _ = writeln!(out, "# upper: {}", list(&s.bounds.upper));
        let _ = writeln!(out, "# frozen: {}", list(&s.frozen.all_values()));
        let _ = writeln!(
            out,
            "# model: {}",
            list(&[m.trunk_mass, m.trunk_inertia, m.com_to_pelvis_offset, m.leg_max_length, m.gravity, m.friction_coeff, m.control_dt])
        );
        let _ = writeln!(
            out,
            "# thresholds: {}",
            list(&[t.retraction_min, t.com_height_tol, t.trunk_lean_tol, t.chatter_step_time])
        );
        let _ = writeln!(out, "# sim_seconds: {:?}", s.sim_seconds);
        let _ = writeln!(out, "# target_speed: {:?}", s.target_speed);
        let _ = writeln!(out, "# seed: {}", s.seed);
        let _ = writeln!(out, "# scheme: {}", s.scheme.as_str());
        let _ = writeln!(out, "# rows: {}", self.rows.len());
        let _ = writeln!(out, "{},phi,time_fraction,m1,m2,m3,m4,steps,flagged", s.bounds.names().join(","));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{},{},{}",
                list(&r.params),
                r.phi,
                r.time_fraction,
                list(&r.metric_sums),
                r.steps,
                u8::from(r.flagged)
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = rest.split_once(':') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            lines.next();
        }
        let get = |k: &str| header.get(k).map(String::as_str).ok_or_else(|| Error::format(format!("missing header `{k}`")));
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| Error::format(format!("bad number in header `{k}`"))))
                .collect()
        };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::format(format!("bad header `{k}`"))) };
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| Error::format(format!("bad header `{k}`"))) };

        let version = int("version")?;
        if version != TABLE_VERSION as u64 {
            return Err(Error::Version(format!("table version {version}, expected {TABLE_VERSION}")));
        }
        let variant = Variant::parse(get("variant")?).map_err(|e| Error::format(e.to_string()))?;
        let bounds = ParamBounds {
            variant,
            lower: floats("lower")?,
            upper: floats("upper")?,
        };
        bounds.validate().map_err(|e| Error::format(e.to_string()))?;
        let frozen_all: [f64; 9] = floats("frozen")?.try_into().map_err(|_| Error::format("frozen needs 9 values"))?;
        let frozen = ControllerParams::from_free_values(Variant::NineD, &frozen_all, &ControllerParams::reference())?;
        let frozen = ControllerParams { variant, ..frozen };
        let m = floats("model")?;
        let t = floats("thresholds")?;
        if m.len() != 7 || t.len() != 4 {
            return Err(Error::format("model needs 7 values and thresholds 4"));
        }
        let spec = TableSpec {
            bounds,
            frozen,
            model: ModelParams {
                trunk_mass: m[0],
                trunk_inertia: m[1],
                com_to_pelvis_offset: m[2],
                leg_max_length: m[3],
                gravity: m[4],
                friction_coeff: m[5],
                control_dt: m[6],
            },
            sim_seconds: float("sim_seconds")?,
            target_speed: float("target_speed")?,
            thresholds: DogThresholds {
                retraction_min: t[0],
                com_height_tol: t[1],
                trunk_lean_tol: t[2],
                chatter_step_time: t[3],
            },
            seed: int("seed")?,
            scheme: Scheme::parse(get("scheme")?).map_err(|e| Error::format(e.to_string()))?,
        };
        let stored = get("fingerprint")?;
        if stored != spec.fingerprint() {
            return Err(Error::Version(format!(
                "fingerprint {stored} does not match the header contents ({})",
                spec.fingerprint()
            )));
        }
        let expected_rows = int("rows")? as usize;

        let dim = variant.dim();
        let columns = dim + 8;
        match lines.next() {
            Some((_, h)) if h.split(',').count() == columns => {}
            _ => return Err(Error::format("missing or malformed column header")),
        }
        let mut rows = Vec::with_capacity(expected_rows);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns {
                return Err(Error::format(format!("line {}: expected {columns} fields, got {}", n + 1, fields.len())));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("line {}: bad number `{}`", n + 1, fields[i])))
            };
            let params = (0..dim).map(num).collect::<Result<Vec<_>>>()?;
            let metric_sums = [num(dim + 2)?, num(dim + 3)?, num(dim + 4)?, num(dim + 5)?];
            let steps = fields[dim + 6]
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("line {}: bad step count", n + 1)))?;
            let flagged = match fields[dim + 7].trim() {
                "0" => false,
                "1" => true,
                _ => return Err(Error::format(format!("line {}: bad flag", n + 1))),
            };
            rows.push(TableRow {
                params,
                phi: num(dim)?,
                time_fraction: num(dim + 1)?,
                metric_sums,
                steps,
                flagged,
            });
        }
        if rows.len() != expected_rows {
            return Err(Error::format(format!("header promises {expected_rows} rows, found {}", rows.len())));
        }
        Ok(ScoreTable { spec, rows })
    }
}

pub fn save_table(table: &ScoreTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_text())?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<ScoreTable> {
    ScoreTable::from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> TableSpec {
        let mut spec = TableSpec::new(ParamBounds::default_for(Variant::NineD));
        spec.sim_seconds = 1.0;
        spec.seed = 3;
        spec
    }

    #[test]
    fn single_point_in_bounds() {
        let b = ParamBounds::default_for(Variant::FiveD);
        for scheme in [Scheme::Sobol, Scheme::UniformRandom] {
            let g = sample_grid(&b, &ControllerParams::reference(), 1, 5, scheme).unwrap();
            assert_eq!(g.len(), 1);
            assert!(b.contains(&g[0].free_values()));
        }
    }

    #[test]
    fn zero_points_rejected() {
        let b = ParamBounds::default_for(Variant::NineD);
        assert!(sample_grid(&b, &ControllerParams::reference(), 0, 1, Scheme::Sobol).is_err());
    }

    #[test]
    fn sobol_blocks_continue_past_limit() {
        let u = unit_samples(2, SOBOL_BLOCK + 2, 1, Scheme::Sobol);
        assert_eq!(u.len(), SOBOL_BLOCK + 2);
        assert_ne!(u[0], u[SOBOL_BLOCK]);
    }

    #[test]
    fn text_round_trip_small() {
        let spec = small_spec();
        let table = generate_table(&spec, 6).unwrap();
        let back = ScoreTable::from_text(&table.to_text()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let table = generate_table(&small_spec(), 4).unwrap();
        let text = table.to_text();
        let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(ScoreTable::from_text(&cut), Err(Error::Format(_))));
        let bad = text.replace("# rows: 4", "# rows: 7");
        assert!(matches!(ScoreTable::from_text(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn edited_header_breaks_fingerprint() {
        let table = generate_table(&small_spec(), 2).unwrap();
        let text = table.to_text().replace("# sim_seconds: 1.0", "# sim_seconds: 2.0");
        assert!(matches!(ScoreTable::from_text(&text), Err(Error::Version(_))));
        let text = table.to_text().replace("# version: 1", "# version: 2");
        assert!(matches!(ScoreTable::from_text(&text), Err(Error::Version(_))));
    }

    #[test]
    fn threshold_mismatch_is_version_error() {
        let table = generate_table(&small_spec(), 2).unwrap();
        let other = DogThresholds {
            retraction_min: 0.05,
            ..DogThresholds::default()
        };
        assert!(matches!(table.check_compatible(&other, &ModelParams::default()), Err(Error::Version(_))));
        assert!(table.check_compatible(&DogThresholds::default(), &ModelParams::default()).is_ok());
    }
}
