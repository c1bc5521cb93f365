//! Group-level flow models, registered by name.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::protocol::Protocol;

/// Frozen per-group data for one inter-collision interval.
#[derive(Clone, Debug)]
pub struct GroupData<'a> {
    pub protocol: &'a Protocol,
    pub mass: &'a [f64],
    /// Conserved ψ per group.
    pub psi: &'a [f64],
    /// Minimum separation at which a singular kernel may be evaluated.
    pub gap_floor: f64,
}

impl GroupData<'_> {
    fn weight(&self, dx: f64) -> Result<f64> {
        let r = dx.abs();
        if r < self.gap_floor && self.protocol.is_singular() {
            return Err(Error::GapBelowFloor { gap: r, floor: self.gap_floor });
        }
        Ok(self.protocol.phi(r))
    }
}

/// An ODE for the positions (and possibly velocities) of G sticky groups.
///
/// The state vector always starts with the G positions.
pub trait FlowModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn dim(&self, groups: usize) -> usize;
    fn pack(&self, x: &[f64], v: &[f64]) -> Vec<f64>;
    fn rhs(&self, g: &GroupData, y: &[f64], dy: &mut [f64]) -> Result<()>;
    /// Velocities read off a state vector.
    fn velocities(&self, g: &GroupData, y: &[f64]) -> Result<Vec<f64>>;
    /// Typical magnitude of each component, used for absolute tolerances.
    fn scales(&self, groups: usize, length: f64, speed: f64) -> Vec<f64>;
}

/// Second-order alignment: x' = v, v'_g = Σ_h M_h φ(x_h − x_g)(v_h − v_g).
#[derive(Clone, Copy, Debug, Default)]
pub struct CuckerSmale;

impl FlowModel for CuckerSmale {
    fn name(&self) -> &'static str {
        "cucker-smale"
    }

    fn dim(&self, groups: usize) -> usize {
        2 * groups
    }

    fn pack(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter().chain(v).copied().collect()
    }

    fn rhs(&self, g: &GroupData, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = g.mass.len();
        let (x, v) = y.split_at(n);
        let (dx, dv) = dy.split_at_mut(n);
        dx.copy_from_slice(v);
        dv.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let w = g.weight(x[j] - x[i])?;
                if w == 0.0 {
                    continue;
                }
                let dvel = v[j] - v[i];
                dv[i] += g.mass[j] * w * dvel;
                dv[j] -= g.mass[i] * w * dvel;
            }
        }
        Ok(())
    }

    fn velocities(&self, g: &GroupData, y: &[f64]) -> Result<Vec<f64>> {
        Ok(y[g.mass.len()..].to_vec())
    }

    fn scales(&self, groups: usize, length: f64, speed: f64) -> Vec<f64> {
        let mut s = vec![length; groups];
        s.extend(std::iter::repeat_n(speed, groups));
        s
    }
}

/// First-order form: x'_g = ψ_g − Σ_h M_h Φ(x_g − x_h), with ψ frozen per group.
/// Only Φ is evaluated, so singular kernels need no gap floor.
#[derive(Clone, Copy, Debug, Default)]
pub struct PsiFlow;

impl FlowModel for PsiFlow {
    fn name(&self) -> &'static str {
        "psi-flow"
    }

    fn dim(&self, groups: usize) -> usize {
        groups
    }

    fn pack(&self, x: &[f64], _v: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn rhs(&self, g: &GroupData, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = g.mass.len();
        dy.copy_from_slice(g.psi);
        for i in 0..n {
            for j in i + 1..n {
                let f = g.protocol.primitive(y[i] - y[j]);
                dy[i] -= g.mass[j] * f;
                dy[j] += g.mass[i] * f;
            }
        }
        Ok(())
    }

    fn velocities(&self, g: &GroupData, y: &[f64]) -> Result<Vec<f64>> {
        let mut dy = vec![0.0; y.len()];
        self.rhs(g, y, &mut dy)?;
        Ok(dy)
    }

    fn scales(&self, groups: usize, length: f64, _speed: f64) -> Vec<f64> {
        vec![length; groups]
    }
}

pub type ModelFactory = fn() -> Box<dyn FlowModel>;

#[derive(Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<String, ModelFactory>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = ModelRegistry::empty();
        r.register("cucker-smale", || Box::new(CuckerSmale));
        r.register("psi-flow", || Box::new(PsiFlow));
        r
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, factory: ModelFactory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn FlowModel>> {
        match self.entries.get(name) {
            Some(f) => Ok(f()),
            None => Err(Error::UnknownStrategy {
                registry: "flow model",
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
