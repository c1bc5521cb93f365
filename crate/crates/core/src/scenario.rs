//! TOML scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::Branch;
use crate::dynamics::SimOptions;
use crate::error::{Error, Result};
use crate::initial_data::{Atom, Block, InitialData, VelocityField};
use crate::protocol::ProtocolSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Density {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Particle counts, strictly increasing.
    pub n: Vec<usize>,
    pub horizon: f64,
    /// Uniform sampling step; samples are k·step up to the horizon.
    pub sample_step: f64,
    /// Extra sample times.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    /// Labels inserted into every grid.
    #[serde(default)]
    pub snaps: Vec<f64>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    /// Number of random label pairs for separation checks.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Times for the self-convergence table.
    #[serde(default)]
    pub converge_times: Vec<f64>,
}

fn default_model() -> String {
    "cucker-smale".into()
}

fn default_pairs() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_merge")]
    pub merge_eps: f64,
    #[serde(default = "default_floor")]
    pub gap_floor: f64,
    #[serde(default = "default_core")]
    pub core_fraction: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_rtol() -> f64 {
    1e-11
}
fn default_merge() -> f64 {
    1e-12
}
fn default_floor() -> f64 {
    1e-13
}
fn default_core() -> f64 {
    0.5
}
fn default_max_steps() -> usize {
    10_000_000
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: default_rtol(),
            merge_eps: default_merge(),
            gap_floor: default_floor(),
            core_fraction: default_core(),
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// The branch of the classification this scenario is built to exercise.
    #[serde(default)]
    pub branch: Option<String>,
    pub protocol: ProtocolSpec,
    pub density: Density,
    #[serde(default)]
    pub velocity: VelocityField,
    pub run: RunSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
}

const BUNDLED: [(&str, &str); 7] = [
    ("pressureless-two-body", include_str!("../scenarios/pressureless-two-body.toml")),
    ("strictly-convex-flux", include_str!("../scenarios/strictly-convex-flux.toml")),
    ("tent-flux", include_str!("../scenarios/tent-flux.toml")),
    ("flat-critical-bounded", include_str!("../scenarios/flat-critical-bounded.toml")),
    ("flat-critical-heavy-tail", include_str!("../scenarios/flat-critical-heavy-tail.toml")),
    ("flat-critical-weak-singular", include_str!("../scenarios/flat-critical-weak-singular.toml")),
    ("figure-1-composite", include_str!("../scenarios/figure-1-composite.toml")),
];

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("<document>").to_string();
            Error::config(field, e.to_string().trim_end())
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        match BUNDLED.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => Self::from_toml(text),
            None => Err(Error::UnknownStrategy {
                registry: "bundled scenario",
                name: name.into(),
                available: Self::bundled_names().join(", "),
            }),
        }
    }

    pub fn bundled_names() -> Vec<&'static str> {
        BUNDLED.iter().map(|(n, _)| *n).collect()
    }

    pub fn initial_data(&self) -> InitialData {
        InitialData {
            atoms: self.density.atoms.clone(),
            blocks: self.density.blocks.clone(),
            velocity: self.velocity.clone(),
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            model: self.run.model.clone(),
            rtol: self.tolerances.rtol,
            merge_eps: self.tolerances.merge_eps,
            gap_floor: self.tolerances.gap_floor,
            max_steps: self.tolerances.max_steps,
        }
    }

    pub fn expected_branch(&self) -> Option<Branch> {
        self.branch.as_deref().and_then(Branch::from_tag)
    }

    /// Sorted, deduplicated sample times in [0, horizon].
    pub fn sample_times(&self) -> Vec<f64> {
        let r = &self.run;
        let steps = (r.horizon / r.sample_step).round() as usize;
        let mut t: Vec<f64> = (0..=steps)
            .map(|k| (k as f64 * r.sample_step).min(r.horizon))
            .collect();
        t.extend(r.sample_times.iter().chain(&r.converge_times).copied());
        t.push(r.horizon);
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.n.is_empty() || r.n.contains(&0) {
            return Err(Error::config("run.n", "needs at least one positive particle count"));
        }
        if r.n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("run.n", "must be strictly increasing"));
        }
        if !(r.horizon > 0.0 && r.horizon.is_finite()) {
            return Err(Error::config("run.horizon", "must be positive and finite"));
        }
        if !(r.sample_step > 0.0 && r.sample_step <= r.horizon) {
            return Err(Error::config("run.sample_step", "must lie in (0, horizon]"));
        }
        for (k, &t) in r.sample_times.iter().chain(&r.converge_times).enumerate() {
            if !(t >= 0.0 && t <= r.horizon) {
                return Err(Error::config(format!("run.sample_times[{k}]"), format!("{t} outside [0, horizon]")));
            }
        }
        for (k, &s) in r.snaps.iter().enumerate() {
            if !(s > -0.5 && s < 0.5) {
                return Err(Error::config(format!("run.snaps[{k}]"), format!("{s} outside (-1/2, 1/2)")));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [("rtol", t.rtol), ("merge_eps", t.merge_eps), ("gap_floor", t.gap_floor)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("tolerances.{name}"), "must lie in (0, 1)"));
            }
        }
        if t.gap_floor > t.merge_eps {
            return Err(Error::config("tolerances.gap_floor", "must not exceed merge_eps"));
        }
        if !(t.core_fraction > 0.0 && t.core_fraction < 1.0) {
            return Err(Error::config("tolerances.core_fraction", "must lie in (0, 1)"));
        }
        if let Some(b) = &self.branch {
            if Branch::from_tag(b).is_none() {
                return Err(Error::config("branch", format!("unknown branch `{b}`")));
            }
        }
        self.initial_data().validate()
    }
}
