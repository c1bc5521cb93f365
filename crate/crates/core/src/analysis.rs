//! Cluster predictions, quantitative bounds and their empirical verification.

use crate::convexity::{
    check_a4, l_interval, level_set_params, lower_convex_envelope, Envelope, LabelSet, LevelSet, Region,
    RegionDecomposition,
};
use crate::dynamics::{ParticleState, Trajectory};
use crate::error::{Error, Result};
use crate::initial_data::{Flux, QuantileFn};
use crate::protocol::Protocol;

/// Multiplicative slack on separation and contraction bounds.
pub const BOUND_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Subcritical,
    Supercritical,
    Bounded,
    HeavyTail,
    WeakSingular,
}

impl Branch {
    pub fn tag(&self) -> &'static str {
        match self {
            Branch::Subcritical => "I",
            Branch::Supercritical => "II",
            Branch::Bounded => "III(i)",
            Branch::HeavyTail => "III(ii)",
            Branch::WeakSingular => "III(iii)",
        }
    }

    pub fn from_tag(s: &str) -> Option<Branch> {
        [
            Branch::Subcritical,
            Branch::Supercritical,
            Branch::Bounded,
            Branch::HeavyTail,
            Branch::WeakSingular,
        ]
        .into_iter()
        .find(|b| b.tag() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    NoCluster,
    /// Labels collapse to one point no later than `by` (None: finite but
    /// no explicit bound).
    FiniteTimeCluster { by: Option<f64> },
    InfiniteTimeCluster { rate: f64 },
    ConfinedTo,
    /// Distinct C-units stay apart at least like c·e^(−rate·t).
    Separated { rate: f64 },
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::NoCluster => "no_cluster",
            Verdict::FiniteTimeCluster { .. } => "finite_time_cluster",
            Verdict::InfiniteTimeCluster { .. } => "infinite_time_cluster",
            Verdict::ConfinedTo => "confined_to",
            Verdict::Separated { .. } => "separated",
        }
    }
}

/// A verdict about the labels in `lo..hi`; `closed` includes `lo`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionRecord {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
    pub verdict: Verdict,
    pub branch: Branch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProtocolClass {
    pub bounded: bool,
    pub heavy_tailed: bool,
    pub singular: bool,
    pub sup_norm: Option<f64>,
}

impl ProtocolClass {
    pub fn of(p: &Protocol) -> Self {
        ProtocolClass {
            bounded: p.is_bounded(),
            heavy_tailed: p.heavy_tailed(),
            singular: p.power_law().is_some(),
            sup_norm: p.sup_norm(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub records: Vec<PredictionRecord>,
    pub class: ProtocolClass,
    pub d0: f64,
    /// φ̲ at the assumed diameter bound.
    pub phi_floor: f64,
    pub level_sets: Vec<LevelSet>,
}

impl Prediction {
    pub fn branches(&self) -> Vec<Branch> {
        let mut b: Vec<Branch> = self.records.iter().map(|r| r.branch).collect();
        b.sort();
        b.dedup();
        b
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    /// K is the middle `core_fraction` of each supercritical component.
    pub core_fraction: f64,
    /// Flocking diameter bound D̄ for φ̲; D⁰ when absent.
    pub diameter_bound: Option<f64>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            core_fraction: 0.5,
            diameter_bound: None,
        }
    }
}

/// K for a component under `core_fraction`.
pub fn core_of(component: (f64, f64), core_fraction: f64) -> (f64, f64) {
    let (lo, hi) = component;
    let pad = 0.5 * (1.0 - core_fraction) * (hi - lo);
    (lo + pad, hi - pad)
}

/// Distinct L-intervals meeting Σ₀ ∪ Σ₋, in order.
pub fn critical_units(env: &Envelope, regions: &RegionDecomposition) -> Result<Vec<(f64, f64)>> {
    let mut probes: Vec<f64> = regions
        .sigma_zero
        .iter()
        .chain(&regions.sigma_minus)
        .map(|&(lo, hi)| 0.5 * (lo + hi))
        .collect();
    probes.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, f64)> = vec![];
    for m in probes {
        if let LabelSet::Interval(lo, hi) = l_interval(m, env, regions)? {
            if !out.contains(&(lo, hi)) {
                out.push((lo, hi));
            }
        }
    }
    Ok(out)
}

pub fn predict(
    regions: &RegionDecomposition,
    x0: &QuantileFn,
    flux: &Flux,
    env: &Envelope,
    p: &Protocol,
    d0: f64,
    opts: PredictOptions,
) -> Result<Prediction> {
    let a4 = check_a4(flux, regions);
    if !a4.holds {
        return Err(Error::A4Violated { witnesses: a4.witnesses });
    }
    let class = ProtocolClass::of(p);
    let phi_floor = p.floor(opts.diameter_bound.unwrap_or(d0).max(d0));
    let mut records = vec![];
    for &(lo, hi) in &regions.sigma_plus {
        records.push(PredictionRecord {
            lo,
            hi,
            closed: false,
            verdict: Verdict::NoCluster,
            branch: Branch::Subcritical,
        });
    }
    let mut level_sets = vec![];
    for &comp in &regions.sigma_minus {
        let k = core_of(comp, opts.core_fraction);
        let ls = level_set_params(flux, env, regions, comp, k)?;
        let t = supercritical_time_bound(&ls, x0);
        level_sets.push(ls);
        records.push(PredictionRecord {
            lo: k.0,
            hi: k.1,
            closed: true,
            verdict: Verdict::FiniteTimeCluster { by: Some(t) },
            branch: Branch::Supercritical,
        });
        records.push(PredictionRecord {
            lo: comp.0,
            hi: comp.1,
            closed: false,
            verdict: Verdict::ConfinedTo,
            branch: Branch::Supercritical,
        });
    }
    for (lo, hi) in critical_units(env, regions)? {
        let has_critical = regions.sigma_zero.iter().any(|&(a, b)| a < hi && b > lo);
        if class.bounded && has_critical {
            records.push(PredictionRecord {
                lo,
                hi,
                closed: false,
                verdict: Verdict::Separated {
                    rate: class.sup_norm.unwrap_or(0.0),
                },
                branch: Branch::Bounded,
            });
        }
        if class.heavy_tailed && phi_floor > 0.0 {
            records.push(PredictionRecord {
                lo,
                hi,
                closed: false,
                verdict: Verdict::InfiniteTimeCluster { rate: phi_floor },
                branch: Branch::HeavyTail,
            });
            if let Some(law) = p.power_law() {
                let t = weak_singular_collapse_time(d0, phi_floor, law.c, law.beta, law.radius, lo, hi)?;
                records.push(PredictionRecord {
                    lo,
                    hi,
                    closed: false,
                    verdict: Verdict::FiniteTimeCluster { by: Some(t) },
                    branch: Branch::WeakSingular,
                });
            }
        }
    }
    records.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
    Ok(Prediction {
        records,
        class,
        d0,
        phi_floor,
        level_sets,
    })
}

/// T = (X⁰(m₊) − X⁰(m₋))·(m₊ − m₋)/(h⁰/2).
pub fn supercritical_time_bound(ls: &LevelSet, x0: &QuantileFn) -> f64 {
    let width_x = x0.eval(ls.m_plus) - x0.eval(ls.m_minus);
    width_x * (ls.m_plus - ls.m_minus) / (0.5 * ls.h0)
}

pub fn bounded_phi_separation(c0: f64, phi_sup: f64, t: f64) -> f64 {
    c0 * (-phi_sup * t).exp()
}

pub fn heavy_tail_contraction(d0: f64, phi_floor: f64, t: f64) -> f64 {
    d0 * (-phi_floor * t).exp()
}

/// T₁ + R^β/(cβ(m₊ − m₋)) with D⁰e^(−φ̲T₁) = R.
pub fn weak_singular_collapse_time(
    d0: f64,
    phi_floor: f64,
    c: f64,
    beta: f64,
    radius: f64,
    m_minus: f64,
    m_plus: f64,
) -> Result<f64> {
    if !(phi_floor > 0.0) {
        return Err(Error::InvalidInput("φ̲ must be positive for a collapse time".into()));
    }
    if !(beta > 0.0 && beta < 1.0 && c > 0.0 && radius > 0.0 && m_plus > m_minus) {
        return Err(Error::InvalidInput("collapse time needs c, R > 0, β ∈ (0,1), m₊ > m₋".into()));
    }
    let t1 = ((d0 / radius).ln() / phi_floor).max(0.0);
    Ok(t1 + radius.powf(beta) / (c * beta * (m_plus - m_minus)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    /// Labels (lo, hi].
    pub lo: f64,
    pub hi: f64,
    pub first: usize,
    pub end: usize,
    pub x: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    pub t: f64,
    pub clusters: Vec<Cluster>,
    /// Upper labels θ_i of particles not in any cluster.
    pub singletons: Vec<f64>,
}

pub fn clusters_of(theta: &[f64], st: &ParticleState) -> ClusterReport {
    let mut clusters = vec![];
    let mut singletons = vec![];
    for g in &st.groups {
        if g.len() >= 2 {
            clusters.push(Cluster {
                lo: theta[g.first],
                hi: theta[g.end],
                first: g.first,
                end: g.end,
                x: g.x,
                mass: g.mass,
            });
        } else {
            singletons.push(theta[g.end]);
        }
    }
    ClusterReport {
        t: st.t,
        clusters,
        singletons,
    }
}

pub fn extract_clusters(traj: &Trajectory, t: f64) -> Result<ClusterReport> {
    Ok(clusters_of(&traj.theta, &traj.state_at(t)?))
}

/// Mass-weighted mean position over the grid-aligned labels (lo, hi].
pub fn barycenter_r(traj: &Trajectory, lo: f64, hi: f64, t: f64) -> Result<f64> {
    let a = grid_index(&traj.theta, lo)?;
    let b = grid_index(&traj.theta, hi)?;
    if b <= a {
        return Err(Error::InvalidInput(format!("empty label interval ({lo}, {hi}]")));
    }
    let x = traj.state_at(t)?.positions();
    let mass: f64 = traj.masses[a..b].iter().sum();
    Ok((a..b).map(|i| traj.masses[i] * x[i]).sum::<f64>() / mass)
}

fn grid_index(theta: &[f64], m: f64) -> Result<usize> {
    let k = theta.partition_point(|&t| t < m);
    if k < theta.len() && theta[k] == m {
        Ok(k)
    } else {
        Err(Error::LabelNotSnapped(m))
    }
}

/// Quantile function X_N(·, t) of a particle state.
pub fn state_quantile(theta: &[f64], st: &ParticleState) -> QuantileFn {
    QuantileFn::step(theta, &st.positions())
}

/// Exact ∫ |Xa − Xb| dm over (−½, ½] for piecewise-affine quantiles.
pub fn wasserstein1(a: &QuantileFn, b: &QuantileFn) -> f64 {
    let mut cuts: Vec<f64> = a.breakpoints().into_iter().chain(b.breakpoints()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let value = |q: &QuantileFn, k: usize, m: f64| {
        let p = &q.pieces[k];
        if p.x_lo == p.x_hi {
            p.x_lo
        } else {
            p.x_lo + (m - p.m_lo) / (p.m_hi - p.m_lo) * (p.x_hi - p.x_lo)
        }
    };
    let piece = |q: &QuantileFn, mid: f64| q.pieces.partition_point(|p| p.m_hi < mid).min(q.pieces.len() - 1);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (ka, kb) = (piece(a, mid), piece(b, mid));
        let d0 = value(a, ka, lo) - value(b, kb, lo);
        let d1 = value(a, ka, hi) - value(b, kb, hi);
        let len = hi - lo;
        total += if d0 * d1 >= 0.0 {
            0.5 * (d0.abs() + d1.abs()) * len
        } else {
            0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * len
        };
    }
    total
}

/// Largest η with 2Φ(η/2) ≤ σ, capped at `cap`.
pub fn solve_eta(p: &Protocol, sigma: f64, cap: f64) -> f64 {
    let g = |eta: f64| 2.0 * p.primitive(0.5 * eta);
    if g(cap) <= sigma {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= sigma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    lo
}

/// Parameters of the explicit subcritical separation bound for a pair of
/// grid labels m′ = θ_i < m″ = θ_{j+1}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubcriticalBound {
    pub gap0: f64,
    pub sigma: f64,
    pub eta: f64,
    /// Cap on the closing speed of any two particles.
    pub closing_speed: f64,
}

impl SubcriticalBound {
    /// max{gap⁰ − t·closing_speed, min(tσ, η)}.
    pub fn at(&self, t: f64) -> f64 {
        (self.gap0 - t * self.closing_speed).max((t * self.sigma).min(self.eta))
    }
}

/// Least-squares slope of ln y against t.
pub fn decay_exponent(ts: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&t, &y)| (t, y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    num / den
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerdictRecord {
    pub id: String,
    pub theorem: &'static str,
    pub n: usize,
    /// Time at which the margin is smallest.
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

pub struct VerifyInput<'a> {
    pub prediction: &'a Prediction,
    pub protocol: &'a Protocol,
    pub x0: &'a QuantileFn,
    pub regions: &'a RegionDecomposition,
    pub envelope: &'a Envelope,
    /// Grid-label pairs m′ < m″ for separation checks.
    pub pairs: &'a [(f64, f64)],
    pub sample_times: &'a [f64],
}

/// First cell (zero-based) with a label above `lo` (or at it, if closed)
/// through the cell containing `hi`.
pub fn cells_in(theta: &[f64], lo: f64, hi: f64, closed: bool) -> (usize, usize) {
    let upper = &theta[1..];
    let first = if closed {
        upper.partition_point(|&t| t < lo)
    } else {
        upper.partition_point(|&t| t <= lo)
    };
    let last = upper.partition_point(|&t| t < hi).min(upper.len() - 1);
    (first, last)
}

struct Ctx<'a> {
    input: &'a VerifyInput<'a>,
    traj: &'a Trajectory,
    states: Vec<ParticleState>,
}

impl Ctx<'_> {
    fn n(&self) -> usize {
        self.traj.len()
    }

    /// Every recorded state plus the samples, in time order.
    fn all_states(&self) -> Vec<&ParticleState> {
        let mut v: Vec<&ParticleState> = self.traj.snapshots.iter().map(|s| &s.state).collect();
        v.extend(self.states.iter());
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
        v
    }

    fn x_initial(&self, cell: usize) -> f64 {
        let st = self.traj.initial();
        st.groups[st.group_of(cell)].x
    }

    /// ‖X_N⁰ − X⁰‖ over the upper labels of the given cells.
    fn allowance(&self, cells: &[usize]) -> f64 {
        cells
            .iter()
            .map(|&c| (self.x_initial(c) - self.input.x0.eval(self.traj.theta[c + 1])).abs())
            .fold(0.0, f64::max)
    }
}

fn record(id: String, theorem: &'static str, n: usize, t: f64, empirical: f64, bound: f64, margin: f64, pass: bool) -> VerdictRecord {
    VerdictRecord {
        id,
        theorem,
        n,
        t,
        empirical,
        bound,
        margin,
        pass,
    }
}

/// Checks each prediction record and the pair bounds on every trajectory.
pub fn verify(input: &VerifyInput, trajs: &[Trajectory]) -> Result<Vec<VerdictRecord>> {
    let mut out = vec![];
    for traj in trajs {
        let states = input
            .sample_times
            .iter()
            .filter(|&&t| t <= traj.t_end)
            .map(|&t| traj.state_at(t))
            .collect::<Result<Vec<_>>>()?;
        let ctx = Ctx { input, traj, states };
        for (k, rec) in input.prediction.records.iter().enumerate() {
            out.extend(check_record(&ctx, k, rec)?);
        }
        out.extend(check_pairs(&ctx)?);
    }
    Ok(out)
}

fn check_record(ctx: &Ctx, k: usize, rec: &PredictionRecord) -> Result<Vec<VerdictRecord>> {
    let n = ctx.n();
    let theta = &ctx.traj.theta;
    let id = format!("{}:{}[{:.6},{:.6}]", k, rec.verdict.kind(), rec.lo, rec.hi);
    let (first, last) = cells_in(theta, rec.lo, rec.hi, rec.closed);
    let mut out = vec![];
    match rec.verdict {
        Verdict::NoCluster => {
            let mut violations = 0usize;
            let mut worst_t = 0.0;
            for st in ctx.all_states() {
                let bad = (first..=last).filter(|&i| st.groups[st.group_of(i)].len() > 1).count();
                if bad > violations {
                    violations = bad;
                    worst_t = st.t;
                }
            }
            out.push(record(id, "I", n, worst_t, violations as f64, 0.0, -(violations as f64), violations == 0));
        }
        Verdict::FiniteTimeCluster { by } => {
            let by = by.unwrap_or(f64::INFINITY);
            let collapse = ctx
                .all_states()
                .into_iter()
                .find(|st| st.group_of(first) == st.group_of(last))
                .map_or(f64::INFINITY, |st| st.t);
            let tag = if rec.branch == Branch::WeakSingular { "III(iii)" } else { "II" };
            out.push(record(id, tag, n, collapse.min(ctx.traj.t_end), collapse, by, by - collapse, collapse <= by));
        }
        Verdict::ConfinedTo => {
            let mut violations = 0usize;
            let mut worst_t = 0.0;
            for st in ctx.all_states() {
                let rep = clusters_of(theta, st);
                let bad = rep
                    .clusters
                    .iter()
                    .filter(|c| c.lo < rec.hi && c.hi > rec.lo)
                    .filter(|c| !(c.lo >= rec.lo && c.hi <= rec.hi) && !(c.lo <= rec.lo && c.hi >= rec.hi))
                    .count();
                if bad > violations {
                    violations = bad;
                    worst_t = st.t;
                }
            }
            out.push(record(id, "II", n, worst_t, violations as f64, 0.0, -(violations as f64), violations == 0));
        }
        Verdict::InfiniteTimeCluster { .. } => {
            let d0 = ctx.input.prediction.d0;
            let observed = ctx.all_states().iter().map(|s| s.diameter()).fold(d0, f64::max);
            let floor = ctx.input.protocol.floor(observed);
            let allowance = ctx.allowance(&[first, last]);
            let mut worst = (f64::INFINITY, 0.0, 0.0, 0.0);
            let mut ts = vec![];
            let mut gaps = vec![];
            for st in &ctx.states {
                let gap = st.groups[st.group_of(last)].x - st.groups[st.group_of(first)].x;
                let bound = heavy_tail_contraction(d0, floor, st.t);
                let margin = bound * (1.0 + BOUND_SLACK) + allowance - gap;
                if margin < worst.0 {
                    worst = (margin, st.t, gap, bound);
                }
                if st.t > 0.0 {
                    ts.push(st.t);
                    gaps.push(gap);
                }
            }
            out.push(record(id.clone(), "III(ii)", n, worst.1, worst.2, worst.3, worst.0, worst.0 >= 0.0));
            let eps = ctx.traj.merge_eps();
            let keep: Vec<usize> = (0..ts.len()).filter(|&i| gaps[i] > 1e3 * eps).collect();
            if keep.len() >= 2 {
                let rate = decay_exponent(
                    &keep.iter().map(|&i| ts[i]).collect::<Vec<_>>(),
                    &keep.iter().map(|&i| gaps[i]).collect::<Vec<_>>(),
                );
                let bound = -floor * (1.0 - 0.05);
                out.push(record(format!("{id}:decay"), "III(ii)", n, ctx.traj.t_end, rate, bound, bound - rate, rate <= bound));
            }
        }
        Verdict::Separated { .. } => {}
    }
    Ok(out)
}

fn check_pairs(ctx: &Ctx) -> Result<Vec<VerdictRecord>> {
    let input = ctx.input;
    let theta = &ctx.traj.theta;
    let n = ctx.n();
    let mut out = vec![];
    let class = input.prediction.class;
    let pure_subcritical = input.regions.sigma_zero.is_empty() && input.regions.sigma_minus.is_empty();
    let env_n = if pure_subcritical {
        Some(lower_convex_envelope(&Flux::linear(ctx.traj.theta.clone(), discrete_flux(ctx.traj, input.protocol)))?)
    } else {
        None
    };
    // Velocities stay in [min v⁰, max v⁰], so no pair closes faster than the spread.
    let v0 = ctx.traj.initial().velocities();
    let spread = v0.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v)) - v0.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    for &(m1, m2) in input.pairs {
        let i = grid_index(theta, m1)?;
        let j1 = grid_index(theta, m2)?;
        if !(i >= 1 && j1 > i) {
            continue;
        }
        // Cells i−1 and j1−1 (zero-based) carry upper labels m′ and m″.
        let (ci, cj) = (i - 1, j1 - 1);
        let outside_minus = |m: f64| input.regions.region_of(m).map(|r| r != Region::Supercritical);
        let gap_at = |st: &ParticleState| st.groups[st.group_of(cj)].x - st.groups[st.group_of(ci)].x;
        let allowance = ctx.allowance(&[ci, cj]);
        let id = format!("pair[{m1:.6},{m2:.6}]");
        if class.bounded && outside_minus(theta[i])? && outside_minus(theta[j1 - 1])? {
            let c0 = input.x0.eval(m2) - input.x0.eval(m1);
            let sup = class.sup_norm.unwrap_or(0.0);
            let mut worst = (f64::INFINITY, 0.0, 0.0, 0.0);
            for st in &ctx.states {
                let gap = gap_at(st);
                let bound = bounded_phi_separation(c0, sup, st.t);
                let margin = gap - (bound * (1.0 - BOUND_SLACK) - allowance);
                if margin < worst.0 {
                    worst = (margin, st.t, gap, bound);
                }
            }
            if worst.0.is_finite() {
                out.push(record(format!("{id}:exp"), "III(i)", n, worst.1, worst.2, worst.3, worst.0, worst.0 >= 0.0));
            }
        }
        if let Some(env) = &env_n {
            let sigma = 0.5 * (env.slope(cj) - env.slope(ci));
            if !(sigma > input.regions.tolerances.slope) {
                continue;
            }
            let b = SubcriticalBound {
                gap0: ctx.x_initial(cj) - ctx.x_initial(ci),
                sigma,
                eta: solve_eta(input.protocol, sigma, 1e6 * input.prediction.d0.max(1.0)),
                closing_speed: spread.max(0.0),
            };
            let mut worst = (f64::INFINITY, 0.0, 0.0, 0.0);
            let mut ts = vec![];
            let mut gaps = vec![];
            for st in &ctx.states {
                let gap = gap_at(st);
                let bound = b.at(st.t);
                let margin = gap - (bound * (1.0 - BOUND_SLACK) - allowance);
                if margin < worst.0 {
                    worst = (margin, st.t, gap, bound);
                }
                ts.push(st.t);
                gaps.push(gap);
            }
            out.push(record(format!("{id}:sub"), "I", n, worst.1, worst.2, worst.3, worst.0, worst.0 >= 0.0));
            let half = ctx.traj.t_end * 0.5;
            let late: Vec<usize> = (0..ts.len()).filter(|&k| ts[k] >= half).collect();
            if late.len() >= 2 {
                let rate = decay_exponent(
                    &late.iter().map(|&k| ts[k]).collect::<Vec<_>>(),
                    &late.iter().map(|&k| gaps[k]).collect::<Vec<_>>(),
                );
                out.push(record(format!("{id}:decay"), "I", n, ctx.traj.t_end, rate, -1e-3, rate + 1e-3, rate >= -1e-3));
            }
        }
    }
    Ok(out)
}

/// A_N(θ_i) rebuilt from the initial state: cumulative Σ m_i ψ_i.
fn discrete_flux(traj: &Trajectory, p: &Protocol) -> Vec<f64> {
    let st = traj.initial();
    let psi = st.measured_psi(p);
    let mut a = vec![0.0];
    for (g, s) in st.groups.iter().zip(psi) {
        for i in g.first..g.end {
            let prev = *a.last().unwrap();
            a.push(prev + traj.masses[i] * s);
        }
    }
    a
}

/// Left averages dominate the merged ψ, which dominates right averages, at
/// every internal particle split. Returns the largest violation (≤ 0 when
/// the inequality holds).
pub fn barycentric_violation(event: &crate::dynamics::CollisionEvent, masses: &[f64]) -> f64 {
    let mut parts: Vec<(f64, f64)> = vec![];
    for c in &event.constituents {
        for i in c.first..c.end {
            parts.push((masses[i], c.psi));
        }
    }
    let total_m: f64 = parts.iter().map(|p| p.0).sum();
    let total_mpsi: f64 = parts.iter().map(|p| p.0 * p.1).sum();
    let mut worst = f64::NEG_INFINITY;
    let (mut lm, mut lmpsi) = (0.0, 0.0);
    for k in 0..parts.len() - 1 {
        lm += parts[k].0;
        lmpsi += parts[k].0 * parts[k].1;
        let left = lmpsi / lm;
        let right = (total_mpsi - lmpsi) / (total_m - lm);
        worst = worst.max(event.psi - left).max(right - event.psi);
    }
    worst
}

/// Lemma check: for m′ < inf L(m″), X⁰(m′) < X⁰(m″).
pub fn separated_by_l(m1: f64, m2: f64, x0: &QuantileFn, env: &Envelope, regions: &RegionDecomposition) -> Result<Option<bool>> {
    let (lo, _) = l_interval(m2, env, regions)?.bounds();
    let inf = if lo == m2 { m2 } else { lo };
    if m1 < inf || (lo == m2 && m1 < m2) {
        Ok(Some(x0.eval(m1) < x0.eval(m2)))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convexity::{classify_regions, Tolerances};

    fn q(theta: &[f64], xs: &[f64]) -> QuantileFn {
        QuantileFn::step(theta, xs)
    }

    #[test]
    fn wasserstein_examples() {
        let a = q(&[-0.5, 0.5], &[0.0]);
        let b = q(&[-0.5, 0.5], &[1.0]);
        assert_eq!(wasserstein1(&a, &a), 0.0);
        assert!((wasserstein1(&a, &b) - 1.0).abs() < 1e-15);
        let two = q(&[-0.5, 0.0, 0.5], &[0.0, 1.0]);
        let mid = q(&[-0.5, 0.5], &[0.5]);
        assert!((wasserstein1(&two, &mid) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_affine_crossing() {
        // X_a(m) = m + ½ against the constant ½: ∫|m| over (−½,½] = ¼.
        let a = QuantileFn {
            pieces: vec![crate::initial_data::QuantilePiece { m_lo: -0.5, m_hi: 0.5, x_lo: 0.0, x_hi: 1.0 }],
        };
        let b = q(&[-0.5, 0.5], &[0.5]);
        assert!((wasserstein1(&a, &b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bound_formulas() {
        assert_eq!(bounded_phi_separation(1.0, 0.0, 7.0), 1.0);
        assert!((bounded_phi_separation(2.0, 1.0, 2f64.ln()) - 1.0).abs() < 1e-15);
        assert_eq!(bounded_phi_separation(1.0, 1.0, 0.0), 1.0);
        assert_eq!(heavy_tail_contraction(1.0, 1.0, 0.0), 1.0);
        assert!((heavy_tail_contraction(1.0, 2f64.ln(), 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(heavy_tail_contraction(2.0, 0.0, 3.0), 2.0);
    }

    #[test]
    fn weak_singular_time_examples() {
        let t = weak_singular_collapse_time(1.0, 0.7, 1.0, 0.5, 1.0, -0.5, 0.5).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        let t = weak_singular_collapse_time(e, 1.0, 1.0, 0.5, 1.0, -0.5, 0.5).unwrap();
        assert!((t - 3.0).abs() < 1e-15);
        let t2 = weak_singular_collapse_time(1.0, 0.7, 1.0, 0.8, 1.0, -0.5, 0.5).unwrap();
        assert!(t2 < 2.0);
        assert!(weak_singular_collapse_time(1.0, 0.0, 1.0, 0.5, 1.0, -0.5, 0.5).is_err());
    }

    #[test]
    fn eta_inverts_primitive() {
        let p = Protocol::constant(1.0).unwrap();
        assert!((solve_eta(&p, 0.3, 1e6) - 0.3).abs() < 1e-12);
        assert_eq!(solve_eta(&Protocol::zero(), 0.3, 50.0), 50.0);
    }

    #[test]
    fn decay_exponent_of_exponential() {
        let ts: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        assert!((decay_exponent(&ts, &ys) + 0.7).abs() < 1e-12);
    }

    #[test]
    fn cells_in_half_open_and_closed() {
        let theta = [-0.5, -0.25, 0.0, 0.25, 0.5];
        assert_eq!(cells_in(&theta, -0.25, 0.25, false), (1, 2));
        assert_eq!(cells_in(&theta, -0.25, 0.25, true), (0, 2));
        assert_eq!(cells_in(&theta, -0.5, 0.5, false), (0, 3));
    }

    #[test]
    fn strictly_convex_predicts_no_cluster() {
        let knots: Vec<f64> = (0..=10).map(|k| -0.5 + k as f64 / 10.0).collect();
        let vals: Vec<f64> = knots.iter().map(|m| m * m).collect();
        let flux = Flux { curved: vec![true; 10], ..Flux::linear(knots.clone(), vals) };
        let env = lower_convex_envelope(&flux).unwrap();
        let reg = classify_regions(&flux, &env, Tolerances::for_flux(&flux)).unwrap();
        let x0 = q(&knots, &knots[1..].iter().map(|m| m + 0.5).collect::<Vec<_>>());
        let p = Protocol::constant(1.0).unwrap();
        let pred = predict(&reg, &x0, &flux, &env, &p, 1.0, PredictOptions::default()).unwrap();
        assert!(pred.records.iter().all(|r| r.verdict == Verdict::NoCluster));
        assert_eq!(pred.branches(), vec![Branch::Subcritical]);
    }

    #[test]
    fn tent_predicts_collapse_with_bound() {
        let flux = Flux::linear(vec![-0.5, 0.0, 0.5], vec![0.0, 1.0, 0.0]);
        let env = lower_convex_envelope(&flux).unwrap();
        let reg = classify_regions(&flux, &env, Tolerances::for_flux(&flux)).unwrap();
        let x0 = QuantileFn {
            pieces: vec![crate::initial_data::QuantilePiece { m_lo: -0.5, m_hi: 0.5, x_lo: 0.0, x_hi: 1.0 }],
        };
        let p = Protocol::constant(1.0).unwrap();
        let pred = predict(&reg, &x0, &flux, &env, &p, 1.0, PredictOptions::default()).unwrap();
        let fin = pred
            .records
            .iter()
            .find(|r| r.branch == Branch::Supercritical && r.closed)
            .unwrap();
        assert_eq!((fin.lo, fin.hi), (-0.25, 0.25));
        // h⁰ = ½·min of the tent gap over [¼, ¾] in rescaled labels = ¼.
        assert_eq!(fin.verdict, Verdict::FiniteTimeCluster { by: Some(8.0) });
        assert!(pred
            .records
            .iter()
            .any(|r| r.verdict == Verdict::ConfinedTo && (r.lo, r.hi) == (-0.5, 0.5)));
        // φ ≡ 1 is heavy-tailed, so the component is also an infinite-time cluster.
        assert!(pred.branches().contains(&Branch::HeavyTail));
    }

    #[test]
    fn time_bound_is_linear_in_width() {
        let ls = LevelSet { m_minus: -0.5, m_plus: 0.5, a0: -0.25, b0: 0.25, h0: 0.5, h: 0.5, a_h: 0.0, b_h: 0.0, c_h: 0.5 };
        let unit = QuantileFn {
            pieces: vec![crate::initial_data::QuantilePiece { m_lo: -0.5, m_hi: 0.5, x_lo: 0.0, x_hi: 1.0 }],
        };
        let double = QuantileFn {
            pieces: vec![crate::initial_data::QuantilePiece { m_lo: -0.5, m_hi: 0.5, x_lo: 0.0, x_hi: 2.0 }],
        };
        assert!((supercritical_time_bound(&ls, &unit) - 4.0).abs() < 1e-15);
        assert!((supercritical_time_bound(&ls, &double) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn a4_failure_refuses_prediction() {
        // Concave kink 1e-9 inside the supercritical component, so no dyadic
        // neighbourhood of its left boundary is convex.
        let flux = Flux::linear(
            vec![-0.5, -0.25, -0.25 + 1e-9, 0.1, 0.5],
            vec![0.0, 0.0, 4e-9, 0.5, 0.0],
        );
        let env = lower_convex_envelope(&flux).unwrap();
        let reg = classify_regions(&flux, &env, Tolerances::for_flux(&flux)).unwrap();
        assert_eq!(reg.sigma_minus, vec![(-0.25, 0.5)]);
        let x0 = q(&[-0.5, 0.5], &[0.0]);
        let e = predict(&reg, &x0, &flux, &env, &Protocol::zero(), 1.0, PredictOptions::default());
        match e {
            Err(Error::A4Violated { witnesses }) => assert_eq!(witnesses, vec![-0.25]),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn barycenter_of_two_halves() {
        use crate::dynamics::{SimOptions, Simulator};
        use crate::initial_data::Discretization;
        let p = Protocol::zero();
        let d = Discretization::from_particles(&p, &[0.5, 0.5], &[0.0, 1.0], &[0.0, 0.0]).unwrap();
        let tr = Simulator::new(p, SimOptions::default()).unwrap().run(&d, 1.0, &[1.0]).unwrap();
        assert!((barycenter_r(&tr, -0.5, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(barycenter_r(&tr, 0.0, 0.5, 0.0).unwrap(), 1.0);
        assert!(barycenter_r(&tr, 0.1, 0.5, 0.0).is_err());
        assert!(extract_clusters(&tr, 0.0).unwrap().clusters.is_empty());
    }
}
