//! Sticky-particle alignment dynamics.
//!
//! Particles are tracked as ordered groups. Between collisions each group
//! follows the selected [`FlowModel`]; when two neighbouring groups come
//! within `merge_eps` they fuse, conserving mass, momentum and the
//! mass-weighted ψ.

pub mod model;
pub mod rk;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::initial_data::Discretization;
use crate::protocol::Protocol;

pub use model::{CuckerSmale, FlowModel, GroupData, ModelRegistry, PsiFlow};

/// Particles `first..end` moving as one body.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub first: usize,
    pub end: usize,
    pub mass: f64,
    pub x: f64,
    pub v: f64,
    /// Book-kept ψ: the mass average of the members' initial ψ.
    pub psi: f64,
}

impl Group {
    pub fn len(&self) -> usize {
        self.end - self.first
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.first
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub groups: Vec<Group>,
}

impl ParticleState {
    pub fn particle_count(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.groups.partition_point(|g| g.end <= i)
    }

    pub fn positions(&self) -> Vec<f64> {
        self.expand(|g| g.x)
    }

    pub fn velocities(&self) -> Vec<f64> {
        self.expand(|g| g.v)
    }

    fn expand(&self, f: impl Fn(&Group) -> f64) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(f(g), g.len()))
            .collect()
    }

    /// ψ_g = v_g + Σ_h M_h Φ(x_g − x_h), per group.
    pub fn measured_psi(&self, p: &Protocol) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                g.v + self
                    .groups
                    .iter()
                    .map(|h| h.mass * p.primitive(g.x - h.x))
                    .sum::<f64>()
            })
            .collect()
    }

    /// Per-group acceleration Σ_h M_h φ(x_h − x_g)(v_h − v_g).
    pub fn accelerations(&self, p: &Protocol) -> Vec<f64> {
        self.groups
            .iter()
            .enumerate()
            .map(|(a, g)| {
                self.groups
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, h)| h.mass * p.phi(h.x - g.x) * (h.v - g.v))
                    .sum()
            })
            .collect()
    }

    pub fn momentum(&self) -> f64 {
        self.groups.iter().map(|g| g.mass * g.v).sum()
    }

    pub fn diameter(&self) -> f64 {
        match (self.groups.first(), self.groups.last()) {
            (Some(a), Some(b)) => b.x - a.x,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constituent {
    pub first: usize,
    pub end: usize,
    pub mass: f64,
    pub x: f64,
    pub v: f64,
    /// Measured ψ just before the merge.
    pub psi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionEvent {
    pub t: f64,
    pub first: usize,
    pub end: usize,
    pub x: f64,
    pub constituents: Vec<Constituent>,
    pub v: f64,
    /// Measured ψ of the merged group.
    pub psi: f64,
    /// Book-kept ψ of the merged group.
    pub psi_conserved: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Initial,
    Sample,
    Event,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub state: ParticleState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub model: String,
    pub rtol: f64,
    /// Merge distance relative to the initial diameter.
    pub merge_eps: f64,
    /// Singular-kernel evaluation floor relative to the initial diameter.
    pub gap_floor: f64,
    pub max_steps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            model: "cucker-smale".into(),
            rtol: 1e-11,
            merge_eps: 1e-12,
            gap_floor: 1e-13,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulator {
    protocol: Protocol,
    model: Arc<dyn FlowModel>,
    opts: SimOptions,
}

struct Scales {
    length: f64,
    speed: f64,
    eps: f64,
    floor: f64,
}

impl Simulator {
    pub fn new(protocol: Protocol, opts: SimOptions) -> Result<Self> {
        let model = ModelRegistry::default().build(&opts.model)?;
        Ok(Self::with_model(protocol, model, opts))
    }

    pub fn with_model(protocol: Protocol, model: Box<dyn FlowModel>, opts: SimOptions) -> Self {
        Simulator {
            protocol,
            model: Arc::from(model),
            opts,
        }
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn model_name(&self) -> &'static str {
        self.model.name()
    }

    pub fn options(&self) -> &SimOptions {
        &self.opts
    }

    fn scales(&self, disc: &Discretization) -> Scales {
        let lo = disc.x0.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = disc.x0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let length = if hi > lo { hi - lo } else { 1.0 };
        let vmax = disc.v0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Scales {
            length,
            speed: if vmax > 0.0 { vmax } else { length },
            eps: self.opts.merge_eps * length,
            floor: self.opts.gap_floor * length,
        }
    }

    /// Groups coincident particles; those with unequal velocities merge at t = 0.
    pub fn initial_state(&self, disc: &Discretization) -> Result<(ParticleState, Vec<CollisionEvent>)> {
        if disc.is_empty() {
            return Err(Error::InvalidInput("no particles".into()));
        }
        let sc = self.scales(disc);
        let groups = (0..disc.len())
            .map(|i| Group {
                first: i,
                end: i + 1,
                mass: disc.masses[i],
                x: disc.x0[i],
                v: disc.v0[i],
                psi: disc.psi0[i],
            })
            .collect();
        let mut st = ParticleState { t: 0.0, groups };
        let events = self.merge(&mut st, &sc, None, true);
        Ok((st, events))
    }

    /// Integrates from t = 0 to `t_end`, recording snapshots at `samples`.
    pub fn run(&self, disc: &Discretization, t_end: f64, samples: &[f64]) -> Result<Trajectory> {
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidInput(format!("horizon {t_end} must be finite and nonnegative")));
        }
        let sc = self.scales(disc);
        let (st, events) = self.initial_state(disc)?;
        let mut traj = Trajectory {
            theta: disc.theta.clone(),
            masses: disc.masses.clone(),
            snapshots: vec![Snapshot { kind: SnapshotKind::Initial, state: st.clone() }],
            events,
            t_end,
            length: sc.length,
            speed: sc.speed,
            sim: self.clone(),
        };
        if samples.contains(&0.0) {
            traj.snapshots.push(Snapshot { kind: SnapshotKind::Sample, state: st.clone() });
        }
        let mut s: Vec<f64> = samples.iter().copied().filter(|&t| t > 0.0 && t <= t_end).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        self.advance(st, t_end, &s, &sc, &mut traj)?;
        Ok(traj)
    }

    fn advance(&self, mut st: ParticleState, t_end: f64, samples: &[f64], sc: &Scales, out: &mut Trajectory) -> Result<ParticleState> {
        let mut targets: Vec<f64> = samples.to_vec();
        if targets.last() != Some(&t_end) {
            targets.push(t_end);
        }
        let mut steps = 0usize;
        let mut h = (1e-3 * sc.length / sc.speed).min((t_end - st.t).max(f64::MIN_POSITIVE));
        let mut cache = Interval::new(self, &st, sc)?;
        for &target in &targets {
            while st.t < target {
                steps += 1;
                if steps > self.opts.max_steps {
                    return Err(Error::TooManySteps(self.opts.max_steps));
                }
                let remaining = target - st.t;
                let last = h >= remaining;
                let hh = if last { remaining } else { h };
                let floor = 1e-14 * st.t.abs().max(1.0);
                let gd = cache.data(self, sc);
                let mut f = |y: &[f64], dy: &mut [f64]| self.model.rhs(&gd, y, dy);
                let attempt = rk::step(&mut f, &cache.y, &cache.k1, hh, &cache.atol, self.opts.rtol);
                let s = match attempt {
                    Err(Error::GapBelowFloor { .. }) => {
                        h = hh * 0.25;
                        if h < floor {
                            return Err(Error::StepUnderflow { t: st.t, h });
                        }
                        continue;
                    }
                    Err(e) => return Err(e),
                    Ok(s) => s,
                };
                if !(s.err <= 1.0) {
                    h = hh * rk::factor(s.err).min(0.9);
                    if h < floor {
                        return Err(Error::StepUnderflow { t: st.t, h });
                    }
                    continue;
                }
                let grow = rk::factor(s.err);
                let ng = st.groups.len();
                match self.detect(&s, ng, sc.eps, st.t) {
                    None => {
                        st.t = if last { target } else { st.t + hh };
                        cache.y = s.y1;
                        cache.k1 = s.k[6].clone();
                        self.sync(&mut st, &cache, sc)?;
                    }
                    Some((theta, pair)) => {
                        // Same interpolant the event was located on, so no other gap
                        // is past the merge threshold.
                        let y = if theta >= 1.0 { s.y1.clone() } else { s.dense(theta, 0..s.y1.len()) };
                        st.t = if theta >= 1.0 && last { target } else { st.t + theta * hh };
                        cache.y = y;
                        self.sync(&mut st, &cache, sc)?;
                        let evs = self.merge(&mut st, sc, Some(pair), false);
                        out.events.extend(evs);
                        out.snapshots.push(Snapshot { kind: SnapshotKind::Event, state: st.clone() });
                        cache = Interval::new(self, &st, sc)?;
                    }
                }
                if !last {
                    h = hh * grow;
                } else {
                    h = h.max(hh * grow);
                }
            }
            if samples.contains(&target) {
                out.snapshots.push(Snapshot { kind: SnapshotKind::Sample, state: st.clone() });
            }
        }
        Ok(st)
    }

    /// Earliest θ ∈ (0, 1] at which some neighbour gap falls to `eps`.
    fn detect(&self, s: &rk::Step, ng: usize, eps: f64, t: f64) -> Option<(f64, usize)> {
        if ng < 2 {
            return None;
        }
        let min_gap = |theta: f64| -> (f64, usize) {
            let x = if theta >= 1.0 { s.y1[..ng].to_vec() } else { s.dense(theta, 0..ng) };
            x.windows(2)
                .enumerate()
                .map(|(k, w)| (w[1] - w[0], k))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
        };
        let tol = 1e-13 * t.abs().max(1.0);
        let mut lo = 0.0;
        for theta in [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0] {
            let (g, k) = min_gap(theta);
            if g <= eps {
                let mut hi = theta;
                let mut pair = k;
                for _ in 0..200 {
                    if (hi - lo) * s.h <= tol {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let (gm, km) = min_gap(mid);
                    if gm <= eps {
                        hi = mid;
                        pair = km;
                    } else {
                        lo = mid;
                    }
                }
                return Some((hi, pair));
            }
            lo = theta;
        }
        None
    }

    /// Copies the integrator state into the groups.
    fn sync(&self, st: &mut ParticleState, cache: &Interval, sc: &Scales) -> Result<()> {
        let gd = cache.data(self, sc);
        let v = self.model.velocities(&gd, &cache.y)?;
        for (k, g) in st.groups.iter_mut().enumerate() {
            g.x = cache.y[k];
            g.v = v[k];
        }
        for k in 1..st.groups.len() {
            if st.groups[k].x - st.groups[k - 1].x < -sc.eps {
                return Err(Error::OrderingViolation { t: st.t, left: k - 1, right: k });
            }
        }
        Ok(())
    }

    /// Fuses every chain of neighbours closer than `eps` (plus `force`).
    fn merge(&self, st: &mut ParticleState, sc: &Scales, force: Option<usize>, initial: bool) -> Vec<CollisionEvent> {
        let ng = st.groups.len();
        let join: Vec<bool> = (0..ng.saturating_sub(1))
            .map(|k| {
                let gap = st.groups[k + 1].x - st.groups[k].x;
                Some(k) == force || if initial { gap == 0.0 } else { gap <= sc.eps }
            })
            .collect();
        if !join.iter().any(|&b| b) {
            return vec![];
        }
        let pre_psi = st.measured_psi(&self.protocol);
        let mut chains: Vec<(usize, usize)> = vec![];
        let mut start = 0;
        for k in 0..ng {
            if k + 1 == ng || !join[k] {
                chains.push((start, k + 1));
                start = k + 1;
            }
        }
        let mut merged = Vec::with_capacity(chains.len());
        let mut pending = vec![];
        for &(a, b) in &chains {
            let part = &st.groups[a..b];
            if part.len() == 1 {
                merged.push(part[0].clone());
                continue;
            }
            let mass: f64 = part.iter().map(|g| g.mass).sum();
            let avg = |f: &dyn Fn(&Group) -> f64| part.iter().map(|g| g.mass * f(g)).sum::<f64>() / mass;
            let g = Group {
                first: part[0].first,
                end: part[part.len() - 1].end,
                mass,
                x: avg(&|g| g.x),
                v: avg(&|g| g.v),
                psi: avg(&|g| g.psi),
            };
            let same_velocity = part.iter().all(|h| h.v == part[0].v);
            if !(initial && same_velocity) {
                let constituents = part
                    .iter()
                    .zip(&pre_psi[a..b])
                    .map(|(h, &psi)| Constituent {
                        first: h.first,
                        end: h.end,
                        mass: h.mass,
                        x: h.x,
                        v: h.v,
                        psi,
                    })
                    .collect();
                pending.push((merged.len(), constituents));
            }
            merged.push(g);
        }
        st.groups = merged;
        let post_psi = st.measured_psi(&self.protocol);
        pending
            .into_iter()
            .map(|(k, constituents)| {
                let g = &st.groups[k];
                CollisionEvent {
                    t: st.t,
                    first: g.first,
                    end: g.end,
                    x: g.x,
                    constituents,
                    v: g.v,
                    psi: post_psi[k],
                    psi_conserved: g.psi,
                }
            })
            .collect()
    }
}

/// Integrator state for one inter-collision interval.
struct Interval {
    mass: Vec<f64>,
    psi: Vec<f64>,
    y: Vec<f64>,
    k1: Vec<f64>,
    atol: Vec<f64>,
}

impl Interval {
    fn new(sim: &Simulator, st: &ParticleState, sc: &Scales) -> Result<Self> {
        let x: Vec<f64> = st.groups.iter().map(|g| g.x).collect();
        let v: Vec<f64> = st.groups.iter().map(|g| g.v).collect();
        let mut it = Interval {
            mass: st.groups.iter().map(|g| g.mass).collect(),
            psi: st.groups.iter().map(|g| g.psi).collect(),
            y: sim.model.pack(&x, &v),
            k1: vec![],
            atol: sim
                .model
                .scales(x.len(), sc.length, sc.speed)
                .into_iter()
                .map(|s| s * sim.opts.rtol)
                .collect(),
        };
        let mut k1 = vec![0.0; it.y.len()];
        let gd = it.data(sim, sc);
        sim.model.rhs(&gd, &it.y, &mut k1)?;
        it.k1 = k1;
        Ok(it)
    }

    fn data<'a>(&'a self, sim: &'a Simulator, sc: &Scales) -> GroupData<'a> {
        GroupData {
            protocol: &sim.protocol,
            mass: &self.mass,
            psi: &self.psi,
            gap_floor: sc.floor,
        }
    }
}

/// Output of [`Simulator::run`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    pub masses: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<CollisionEvent>,
    pub t_end: f64,
    length: f64,
    speed: f64,
    sim: Simulator,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &ParticleState> {
        self.snapshots
            .iter()
            .filter(|s| s.kind == SnapshotKind::Sample)
            .map(|s| &s.state)
    }

    pub fn initial(&self) -> &ParticleState {
        &self.snapshots[0].state
    }

    pub fn last(&self) -> &ParticleState {
        &self.snapshots.last().unwrap().state
    }

    /// State at time t. Recorded times are returned as stored (post-collision
    /// if an event coincides); other times are re-integrated from the
    /// latest earlier snapshot.
    pub fn state_at(&self, t: f64) -> Result<ParticleState> {
        if !(t >= 0.0 && t <= self.t_end) {
            return Err(Error::TimeOutOfRange { t, start: 0.0, end: self.t_end });
        }
        let k = self.snapshots.partition_point(|s| s.state.t <= t);
        let base = &self.snapshots[k.max(1) - 1].state;
        if base.t == t {
            return Ok(base.clone());
        }
        let sc = Scales {
            length: self.length,
            speed: self.speed,
            eps: self.sim.opts.merge_eps * self.length,
            floor: self.sim.opts.gap_floor * self.length,
        };
        let mut scratch = self.clone_shallow();
        self.sim.advance(base.clone(), t, &[], &sc, &mut scratch)
    }

    fn clone_shallow(&self) -> Trajectory {
        Trajectory {
            theta: vec![],
            masses: vec![],
            snapshots: vec![],
            events: vec![],
            t_end: self.t_end,
            length: self.length,
            speed: self.speed,
            sim: self.sim.clone(),
        }
    }

    /// X_N(m, t): position of the particle whose cell contains m.
    pub fn eval_xn(&self, m: f64, t: f64) -> Result<f64> {
        let i = self.particle_of(m)?;
        let st = self.state_at(t)?;
        Ok(st.groups[st.group_of(i)].x)
    }

    /// Index i with m ∈ (θ_{i−1}, θ_i], zero-based.
    pub fn particle_of(&self, m: f64) -> Result<usize> {
        if !(m > -0.5 && m <= 0.5) {
            return Err(Error::LabelOutOfRange(m));
        }
        Ok((self.theta.partition_point(|&t| t < m) - 1).min(self.len() - 1))
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Merge distance used for this run.
    pub fn merge_eps(&self) -> f64 {
        self.sim.opts.merge_eps * self.length
    }

    pub fn invariants(&self) -> InvariantReport {
        let p = &self.sim.protocol;
        let init = self.initial();
        let p0 = init.momentum();
        let v0 = init.velocities();
        let vmin = v0.iter().cloned().fold(f64::INFINITY, f64::min);
        let vmax = v0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let vscale = vmax.abs().max(vmin.abs()).max(f64::MIN_POSITIVE);
        let psi_scale = init.groups.iter().fold(0.0f64, |a, g| a.max(g.psi.abs())).max(f64::MIN_POSITIVE);
        let mut r = InvariantReport::default();
        let eps = self.merge_eps();
        let mut prev: Option<&ParticleState> = None;
        for snap in &self.snapshots {
            let st = &snap.state;
            r.momentum_drift = r.momentum_drift.max((st.momentum() - p0).abs() / vscale);
            for g in &st.groups {
                let over = (g.v - vmax).max(vmin - g.v).max(0.0) / vscale;
                r.max_principle_excess = r.max_principle_excess.max(over);
            }
            for w in st.groups.windows(2) {
                r.min_gap = r.min_gap.min(w[1].x - w[0].x);
            }
            if p.is_bounded() {
                for (g, m) in st.groups.iter().zip(st.measured_psi(p)) {
                    r.psi_drift = r.psi_drift.max((m - g.psi).abs() / psi_scale);
                }
            }
            if let Some(q) = prev {
                // Every earlier group must sit inside one later group.
                let coarsens = q.groups.iter().all(|g| st.group_of(g.first) == st.group_of(g.end - 1));
                r.sticky &= coarsens && st.t >= q.t;
            }
            prev = Some(st);
        }
        r.ordered = r.min_gap >= -eps;
        r
    }
}

/// Worst-case deviations over all recorded snapshots, relative to the
/// initial velocity (momentum, max principle) or ψ scale.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantReport {
    pub momentum_drift: f64,
    pub max_principle_excess: f64,
    pub psi_drift: f64,
    pub min_gap: f64,
    pub ordered: bool,
    pub sticky: bool,
}

impl Default for InvariantReport {
    fn default() -> Self {
        InvariantReport {
            momentum_drift: 0.0,
            max_principle_excess: 0.0,
            psi_drift: 0.0,
            min_gap: f64::INFINITY,
            ordered: true,
            sticky: true,
        }
    }
}
