//! TOML scenario files and the synthetic day profiles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profiles::{ingest_profiles, write_profiles, Profile, ProfileError};
use crate::field::MERSENNE_31;
use crate::grid::{EssUnit, GridError, Line, PvUnit, Topology};
use crate::quantizer::{QuantError, QuantParams};
use crate::shamir::{ShareError, SharingPolicy};
use crate::solver::{CostCoefficients, Problem, SolveOptions, SolverError, StepSizes};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid `{field}`: {constraint}")]
    Validation { field: String, constraint: String },
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Share(#[from] ShareError),
}

fn invalid(field: &str, constraint: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// `"ieee13"` selects the bundled feeder; leave unset and list `lines`
    /// for a custom one.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default = "defaults::resistance")]
    pub resistance: f64,
    #[serde(default = "defaults::flow_cap")]
    pub flow_cap: f64,
    #[serde(default = "defaults::v0")]
    pub v0: f64,
    #[serde(default)]
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// Baseline consumption per bus (kW), or one shared column.
    pub load: PathBuf,
    /// Solar forecast per PV unit (kW) before `pv_scale`.
    pub solar: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssSpec {
    #[serde(default = "defaults::rate")]
    pub discharge_cap: f64,
    #[serde(default = "defaults::rate")]
    pub charge_cap: f64,
    #[serde(default)]
    pub soc_min: f64,
    #[serde(default = "defaults::soc_max")]
    pub soc_max: f64,
    #[serde(default = "defaults::soc_init")]
    pub soc_init: f64,
}

impl Default for EssSpec {
    fn default() -> Self {
        EssSpec {
            discharge_cap: defaults::rate(),
            charge_cap: defaults::rate(),
            soc_min: 0.0,
            soc_max: defaults::soc_max(),
            soc_init: defaults::soc_init(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    /// Each house owns one PV unit and one battery.
    #[serde(default = "defaults::houses_per_bus")]
    pub houses_per_bus: usize,
    #[serde(default = "defaults::one")]
    pub pv_scale: f64,
    #[serde(default)]
    pub ess: EssSpec,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec {
            houses_per_bus: defaults::houses_per_bus(),
            pv_scale: 1.0,
            ess: EssSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    #[serde(default = "defaults::theta")]
    pub theta: u64,
    pub gamma: u32,
    pub zeta: u32,
    #[serde(default = "defaults::modulus")]
    pub modulus: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingSpec {
    #[serde(default = "defaults::clouds")]
    pub clouds: usize,
    #[serde(default = "defaults::clouds")]
    pub threshold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "defaults::eps0")]
    pub eps0: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::feas_tol")]
    pub feas_tol: f64,
    #[serde(default)]
    pub record_stride: usize,
}

/// The on-disk schema. Every table except `profiles` may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "defaults::name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::dt")]
    pub dt_hours: f64,
    #[serde(default = "defaults::network")]
    pub network: NetworkSpec,
    pub profiles: ProfileSpec,
    #[serde(default)]
    pub devices: DeviceSpec,
    #[serde(default = "defaults::costs")]
    pub costs: CostCoefficients,
    #[serde(default = "defaults::steps")]
    pub steps: StepSizes,
    #[serde(default = "defaults::quant")]
    pub quant: QuantSpec,
    #[serde(default = "defaults::dual_quant")]
    pub dual_quant: QuantSpec,
    #[serde(default = "defaults::sharing")]
    pub sharing: SharingSpec,
    #[serde(default = "defaults::solver")]
    pub solver: SolverSpec,
}

/// Default values of the scenario schema.
pub mod defaults {
    use super::*;

    pub fn name() -> String {
        "scenario".into()
    }
    pub fn dt() -> f64 {
        0.25
    }
    pub fn resistance() -> f64 {
        0.01
    }
    pub fn flow_cap() -> f64 {
        1000.0
    }
    pub fn v0() -> f64 {
        1.0
    }
    pub fn network() -> NetworkSpec {
        NetworkSpec {
            preset: Some("ieee13".into()),
            resistance: resistance(),
            flow_cap: flow_cap(),
            v0: v0(),
            lines: Vec::new(),
        }
    }
    pub fn rate() -> f64 {
        3.0
    }
    pub fn soc_max() -> f64 {
        10.0
    }
    pub fn soc_init() -> f64 {
        4.0
    }
    pub fn houses_per_bus() -> usize {
        2
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn costs() -> CostCoefficients {
        CostCoefficients {
            delta1: 0.25,
            delta2: 0.1,
            delta3: 0.05,
        }
    }
    pub fn steps() -> StepSizes {
        StepSizes {
            alpha_pv: 2.3,
            alpha_ess: 1.8,
            beta: 4e-3,
        }
    }
    pub fn theta() -> u64 {
        2
    }
    pub fn modulus() -> u64 {
        MERSENNE_31
    }
    pub fn quant() -> QuantSpec {
        QuantSpec {
            theta: 2,
            gamma: 25,
            zeta: 4,
            modulus: MERSENNE_31,
        }
    }
    /// Multipliers are small and need fine resolution.
    pub fn dual_quant() -> QuantSpec {
        QuantSpec {
            theta: 2,
            gamma: 5,
            zeta: 24,
            modulus: MERSENNE_31,
        }
    }
    pub fn clouds() -> usize {
        4
    }
    pub fn sharing() -> SharingSpec {
        SharingSpec {
            clouds: 4,
            threshold: 4,
        }
    }
    pub fn eps0() -> f64 {
        1e-4
    }
    pub fn max_iter() -> usize {
        2000
    }
    pub fn feas_tol() -> f64 {
        1e-6
    }
    pub fn solver() -> SolverSpec {
        SolverSpec {
            eps0: eps0(),
            max_iter: max_iter(),
            feas_tol: feas_tol(),
            record_stride: 0,
        }
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub topology: Topology,
    pub pv: Vec<PvUnit>,
    pub ess: Vec<EssUnit>,
    pub baseline: Vec<Vec<f64>>,
    pub costs: CostCoefficients,
    pub steps: StepSizes,
    pub quant: QuantParams,
    pub dual_quant: QuantParams,
    pub sharing: SharingPolicy,
    pub solve: SolveOptions,
}

impl Scenario {
    pub fn slots(&self) -> usize {
        self.baseline.first().map_or(0, Vec::len)
    }

    pub fn problem(&self) -> Result<Problem, SolverError> {
        Problem::new(
            self.topology.clone(),
            self.pv.clone(),
            self.ess.clone(),
            self.baseline.clone(),
            self.costs,
            self.steps,
        )
    }

    /// Resolution override; `gamma` shrinks as needed to keep headroom.
    pub fn set_zeta(&mut self, zeta: u32) -> Result<(), QuantError> {
        self.quant = self.quant.with_zeta(zeta)?;
        Ok(())
    }
}

fn build_topology(spec: &NetworkSpec) -> Result<Topology, ScenarioError> {
    match spec.preset.as_deref() {
        Some("ieee13") => {
            if !spec.lines.is_empty() {
                return Err(invalid(
                    "network.lines",
                    "must be empty when a preset is selected",
                ));
            }
            if !(spec.resistance > 0.0 && spec.flow_cap > 0.0) {
                return Err(invalid(
                    "network",
                    "resistance and flow_cap must be positive",
                ));
            }
            let mut lines = Topology::ieee13(spec.resistance, spec.flow_cap)
                .lines()
                .to_vec();
            lines
                .iter_mut()
                .for_each(|l| l.resistance = spec.resistance);
            Ok(Topology::new(lines.len(), lines, spec.v0)?)
        }
        Some(other) => Err(invalid(
            "network.preset",
            format!("unknown preset `{other}`"),
        )),
        None => {
            if spec.lines.is_empty() {
                return Err(invalid("network", "needs a preset or a list of lines"));
            }
            Ok(Topology::new(
                spec.lines.len(),
                spec.lines.clone(),
                spec.v0,
            )?)
        }
    }
}

fn build_quant(field: &str, q: &QuantSpec) -> Result<QuantParams, ScenarioError> {
    QuantParams::new(q.theta, q.gamma, q.zeta, q.modulus).map_err(|e| invalid(field, e.to_string()))
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Resolves profile paths against `base` and validates everything.
    pub fn resolve(&self, base: &Path) -> Result<Scenario, ScenarioError> {
        let topology = build_topology(&self.network)?;
        let n = topology.bus_count();
        if !(self.dt_hours > 0.0) {
            return Err(invalid("dt_hours", "must be positive"));
        }
        let load_path = base.join(&self.profiles.load);
        let solar_path = base.join(&self.profiles.solar);
        let read = |field: &str, path: &Path| {
            ingest_profiles(path).map_err(|e| match e {
                ProfileError::Io { path, source } => {
                    invalid(field, format!("cannot read {}: {source}", path.display()))
                }
                other => other.into(),
            })
        };
        let load = read("profiles.load", &load_path)?;
        let solar = read("profiles.solar", &solar_path)?;
        if load.slots() != solar.slots() {
            return Err(invalid(
                "profiles",
                format!(
                    "{} has {} slots but {} has {}",
                    load_path.display(),
                    load.slots(),
                    solar_path.display(),
                    solar.slots()
                ),
            ));
        }
        if load.slots() == 0 {
            return Err(invalid("profiles", "profiles have no rows"));
        }
        let baseline = load.per_bus(n, &load_path)?;
        let solar = solar.per_bus(n, &solar_path)?;

        let d = &self.devices;
        if !(d.pv_scale >= 0.0) {
            return Err(invalid("devices.pv_scale", "must be nonnegative"));
        }
        let mut pv = Vec::new();
        let mut ess = Vec::new();
        for bus in 1..=n {
            for _ in 0..d.houses_per_bus {
                let cap: Vec<f64> = solar[bus - 1]
                    .iter()
                    .map(|s| (s * d.pv_scale).max(0.0))
                    .collect();
                pv.push(PvUnit::new(bus, cap)?);
                let unit = EssUnit {
                    bus,
                    discharge_cap: d.ess.discharge_cap,
                    charge_cap: d.ess.charge_cap,
                    soc_min: d.ess.soc_min,
                    soc_max: d.ess.soc_max,
                    soc_init: d.ess.soc_init,
                    dt: self.dt_hours,
                };
                unit.validate()
                    .map_err(|e| invalid("devices.ess", e.to_string()))?;
                ess.push(unit);
            }
        }

        let quant = build_quant("quant", &self.quant)?;
        let dual_quant = build_quant("dual_quant", &self.dual_quant)?;
        if dual_quant.modulus() != quant.modulus() {
            return Err(invalid(
                "dual_quant.modulus",
                "all codecs must share one field",
            ));
        }
        let sharing =
            SharingPolicy::new(self.sharing.clouds, self.sharing.threshold, quant.modulus())
                .map_err(|e| invalid("sharing", e.to_string()))?;
        let s = &self.solver;
        if !(s.eps0 >= 0.0 && s.feas_tol >= 0.0) {
            return Err(invalid("solver", "eps0 and feas_tol must be nonnegative"));
        }
        let scenario = Scenario {
            name: self.name.clone(),
            seed: self.seed,
            dt: self.dt_hours,
            topology,
            pv,
            ess,
            baseline,
            costs: self.costs,
            steps: self.steps,
            quant,
            dual_quant,
            sharing,
            solve: SolveOptions {
                eps0: s.eps0,
                max_iter: s.max_iter,
                feas_tol: s.feas_tol,
                fixed_iterations: false,
                record_stride: s.record_stride,
            },
        };
        scenario.problem()?;
        Ok(scenario)
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioFile::parse(&text, path)?.resolve(base)
}

/// Synthetic day: a clear-sky solar bell between 07:00 and 17:00 peaking at
/// `2.5 kW` at noon, and a residential load with a morning bump and a larger
/// evening peak. Houses get deterministic size factors in `[0.8, 1.2]`.
pub struct SyntheticDay {
    pub slots: usize,
    pub dt: f64,
    pub buses: usize,
    pub houses_per_bus: usize,
}

impl SyntheticDay {
    pub fn solar(&self) -> Vec<f64> {
        (0..self.slots)
            .map(|t| {
                let h = t as f64 * self.dt;
                if (7.0..=17.0).contains(&h) {
                    2.5 * (std::f64::consts::PI * (h - 7.0) / 10.0).sin().powi(2)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Load of a unit-size house (kW).
    pub fn house_load(&self) -> Vec<f64> {
        let bump = |h: f64, c: f64, w: f64| (-0.5 * ((h - c) / w).powi(2)).exp();
        (0..self.slots)
            .map(|t| {
                let h = t as f64 * self.dt;
                let daytime = if (8.0..=17.0).contains(&h) { 0.1 } else { 0.0 };
                0.3 + 0.35 * bump(h, 7.5, 1.5) + 0.6 * bump(h, 19.0, 2.0) + daytime
            })
            .collect()
    }

    pub fn house_scale(&self, house: usize) -> f64 {
        let total = self.buses * self.houses_per_bus;
        if total < 2 {
            return 1.0;
        }
        0.8 + 0.4 * ((7 * house) % total) as f64 / (total - 1) as f64
    }

    /// Per-bus baseline: the sum of the bus's houses.
    pub fn bus_load(&self) -> Vec<Vec<f64>> {
        let shape = self.house_load();
        (0..self.buses)
            .map(|b| {
                let scale: f64 = (0..self.houses_per_bus)
                    .map(|k| self.house_scale(b * self.houses_per_bus + k))
                    .sum();
                shape.iter().map(|x| x * scale).collect()
            })
            .collect()
    }
}

pub const BUNDLED_TOML: &str = include_str!("../../scenarios/ieee13.toml");

/// Writes the bundled scenario (TOML plus both CSVs) into `dir`.
pub fn write_bundled(dir: &Path, slots: usize) -> Result<PathBuf, ScenarioError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScenarioError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let day = SyntheticDay {
        slots,
        dt: 24.0 / slots as f64,
        buses: 12,
        houses_per_bus: 2,
    };
    let write_csv = |name: &str, profile: &Profile| -> Result<(), ScenarioError> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(io(&path))?;
        write_profiles(file, profile).map_err(|e| ScenarioError::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })
    };
    write_csv("ieee13_load.csv", &Profile::PerBus(day.bus_load()))?;
    write_csv("ieee13_solar.csv", &Profile::Shared(day.solar()))?;
    let toml_path = dir.join("ieee13.toml");
    let text = BUNDLED_TOML.replace("dt_hours = 0.25", &format!("dt_hours = {}", day.dt));
    std::fs::write(&toml_path, text).map_err(io(&toml_path))?;
    Ok(toml_path)
}
