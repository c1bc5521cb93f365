//! Lower convex envelope of the flux, the Σ₊/Σ₀/Σ₋ decomposition, L(m),
//! C(m), the (A4) check and the level-set parameters of supercritical
//! components.

use crate::error::{Error, Result};
use crate::initial_data::{Flux, QuantileFn};

/// A** sampled on the knots of the flux it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Knot indices of hull vertices, collinear ones included.
    pub vertices: Vec<usize>,
}

impl Envelope {
    pub fn eval(&self, m: f64) -> f64 {
        Flux::linear(self.knots.clone(), self.values.clone()).eval(m)
    }

    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.knots[k + 1] - self.knots[k])
    }

    pub fn as_flux(&self) -> Flux {
        let vx = self.vertices.iter().map(|&k| self.knots[k]).collect();
        let vy = self.vertices.iter().map(|&k| self.values[k]).collect();
        Flux::linear(vx, vy)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain lower hull of the flux knots.
pub fn lower_convex_envelope(flux: &Flux) -> Result<Envelope> {
    let n = flux.knots.len();
    if n < 2 {
        return Err(Error::InvalidInput("flux needs at least 2 breakpoints".into()));
    }
    let pt = |k: usize| (flux.knots[k], flux.values[k]);
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for k in 0..n {
        while hull.len() >= 2 && cross(pt(hull[hull.len() - 2]), pt(hull[hull.len() - 1]), pt(k)) < 0.0 {
            hull.pop();
        }
        hull.push(k);
    }
    let mut values = flux.values.clone();
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let s = (flux.values[b] - flux.values[a]) / (flux.knots[b] - flux.knots[a]);
        for k in a + 1..b {
            values[k] = flux.values[a] + s * (flux.knots[k] - flux.knots[a]);
        }
    }
    Ok(Envelope {
        knots: flux.knots.clone(),
        values,
        vertices: hull,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance on A − A**.
    pub contact: f64,
    /// Absolute tolerance on slope differences.
    pub slope: f64,
}

impl Tolerances {
    pub fn for_flux(flux: &Flux) -> Self {
        Tolerances {
            contact: (1e-9 * flux.value_range()).max(1e-14),
            slope: (1e-9 * flux.lipschitz()).max(1e-14),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Subcritical,
    Critical,
    Supercritical,
    /// Right endpoint of a Σ₋ component, belonging to no region.
    SupercriticalEndpoint,
}

impl Region {
    pub fn symbol(&self) -> &'static str {
        match self {
            Region::Subcritical => "sigma_plus",
            Region::Critical => "sigma_zero",
            Region::Supercritical => "sigma_minus",
            Region::SupercriticalEndpoint => "sigma_minus_endpoint",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionDecomposition {
    /// Half-open (m′, m″].
    pub sigma_plus: Vec<(f64, f64)>,
    /// Half-open (m′, m″].
    pub sigma_zero: Vec<(f64, f64)>,
    /// Open (m₋, m₊).
    pub sigma_minus: Vec<(f64, f64)>,
    /// Contact labels with Σ₋ on both sides.
    pub touching: Vec<f64>,
    pub tolerances: Tolerances,
    /// Class of each flux segment (knot k, knot k+1].
    segments: Vec<Region>,
    knots: Vec<f64>,
}

impl RegionDecomposition {
    pub fn region_of(&self, m: f64) -> Result<Region> {
        if !(m > -0.5 && m <= 0.5) {
            return Err(Error::LabelOutOfRange(m));
        }
        if self.sigma_minus.iter().any(|&(_, hi)| hi == m) {
            return Ok(Region::SupercriticalEndpoint);
        }
        if self.sigma_minus.iter().any(|&(lo, hi)| lo < m && m < hi) {
            return Ok(Region::Supercritical);
        }
        let k = (self.knots.partition_point(|&p| p < m) - 1).min(self.segments.len() - 1);
        Ok(self.segments[k])
    }

    pub fn minus_component(&self, m: f64) -> Option<(f64, f64)> {
        self.sigma_minus.iter().copied().find(|&(lo, hi)| lo < m && m < hi)
    }

    /// ∂Σ₋ without ±½.
    pub fn interior_boundary(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .sigma_minus
            .iter()
            .flat_map(|&(lo, hi)| [lo, hi])
            .filter(|&b| b > -0.5 && b < 0.5)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn segment_regions(&self) -> &[Region] {
        &self.segments
    }
}

fn components(segments: &[Region], knots: &[f64], want: Region) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, r) in segments.iter().enumerate() {
        if *r != want {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.1 == knots[k] => last.1 = knots[k + 1],
            _ => out.push((knots[k], knots[k + 1])),
        }
    }
    out
}

/// Classifies labels by the flux segment to their left: Σ₋ where A sits
/// above A** by more than the contact tolerance, otherwise Σ₊ for curved
/// segments and Σ₀ for affine ones.
pub fn classify_regions(flux: &Flux, env: &Envelope, tol: Tolerances) -> Result<RegionDecomposition> {
    if env.knots != flux.knots {
        return Err(Error::RegionInconsistent(
            "envelope and flux have different breakpoints".into(),
        ));
    }
    let n = flux.knots.len();
    let mut contact: Vec<bool> = (0..n)
        .map(|k| flux.values[k] - env.values[k] <= tol.contact)
        .collect();
    contact[0] = true;
    contact[n - 1] = true;

    let mut sigma_minus = Vec::new();
    let mut k = 0;
    while k < n {
        if contact[k] {
            k += 1;
            continue;
        }
        let start = k - 1;
        while !contact[k] {
            k += 1;
        }
        sigma_minus.push((flux.knots[start], flux.knots[k]));
    }

    let segments: Vec<Region> = (0..n - 1)
        .map(|k| {
            if !contact[k] || !contact[k + 1] {
                Region::Supercritical
            } else if flux.curved[k] {
                Region::Subcritical
            } else {
                Region::Critical
            }
        })
        .collect();

    let touching = (1..n - 1)
        .filter(|&k| contact[k] && !contact[k - 1] && !contact[k + 1])
        .map(|k| flux.knots[k])
        .collect();

    Ok(RegionDecomposition {
        sigma_plus: components(&segments, &flux.knots, Region::Subcritical),
        sigma_zero: components(&segments, &flux.knots, Region::Critical),
        sigma_minus,
        touching,
        tolerances: tol,
        segments,
        knots: flux.knots.clone(),
    })
}

/// A set of mass labels: a single label or a half-open interval (lo, hi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelSet {
    Point(f64),
    Interval(f64, f64),
}

impl LabelSet {
    pub fn contains(&self, m: f64) -> bool {
        match *self {
            LabelSet::Point(p) => p == m,
            LabelSet::Interval(lo, hi) => lo < m && m <= hi,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            LabelSet::Point(p) => (p, p),
            LabelSet::Interval(lo, hi) => (lo, hi),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, LabelSet::Point(_))
    }
}

/// L(m): {m} on Σ₊, otherwise the maximal (m′, m″] ∋ m on which A** is
/// affine.
pub fn l_interval(m: f64, env: &Envelope, regions: &RegionDecomposition) -> Result<LabelSet> {
    if regions.region_of(m)? == Region::Subcritical {
        return Ok(LabelSet::Point(m));
    }
    let segs = regions.segment_regions();
    let n = segs.len();
    let k = (env.knots.partition_point(|&p| p < m) - 1).min(n - 1);
    let affine = |j: usize| segs[j] != Region::Subcritical;
    let same = |a: usize, b: usize| (env.slope(a) - env.slope(b)).abs() <= regions.tolerances.slope;
    let mut lo = k;
    while lo > 0 && affine(lo - 1) && same(lo - 1, k) {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < n && affine(hi + 1) && same(hi + 1, k) {
        hi += 1;
    }
    Ok(LabelSet::Interval(env.knots[lo], env.knots[hi + 1]))
}

/// C(m): the initial cluster at m, else the closed-right Σ₋ component,
/// else {m}.
pub fn c_interval(m: f64, x0: &QuantileFn, regions: &RegionDecomposition) -> Result<LabelSet> {
    if !(m > -0.5 && m <= 0.5) {
        return Err(Error::LabelOutOfRange(m));
    }
    if let Some((lo, hi)) = x0.flat_interval(m) {
        return Ok(LabelSet::Interval(lo, hi));
    }
    if let Some((lo, hi)) = regions.minus_component(m) {
        return Ok(LabelSet::Interval(lo, hi));
    }
    Ok(LabelSet::Point(m))
}

#[derive(Clone, Debug, PartialEq)]
pub struct A4Report {
    pub holds: bool,
    pub witnesses: Vec<f64>,
}

/// Dyadic neighbourhood radii ½·2^(−k), k = 1..20.
pub fn a4_radii() -> impl Iterator<Item = f64> {
    (1..=20).map(|k| 0.5 * 0.5f64.powi(k))
}

fn convex_near(flux: &Flux, s: f64, delta: f64, slope_tol: f64) -> bool {
    let lo = (s - delta).max(-0.5);
    let hi = (s + delta).min(0.5);
    let mut pts = vec![(lo, flux.eval(lo))];
    for (k, &m) in flux.knots.iter().enumerate() {
        if m > lo && m < hi {
            pts.push((m, flux.values[k]));
        }
    }
    pts.push((hi, flux.eval(hi)));
    let slopes: Vec<f64> = pts
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    slopes.windows(2).all(|w| w[1] >= w[0] - slope_tol)
}

/// Checks that A is convex near every boundary point of Σ₋.
pub fn check_a4(flux: &Flux, regions: &RegionDecomposition) -> A4Report {
    let mut witnesses = Vec::new();
    let mut boundary: Vec<f64> = regions.sigma_minus.iter().flat_map(|&(a, b)| [a, b]).collect();
    boundary.dedup();
    for s in boundary {
        if !a4_radii().any(|d| convex_near(flux, s, d, regions.tolerances.slope)) {
            witnesses.push(s);
        }
    }
    A4Report {
        holds: witnesses.is_empty(),
        witnesses,
    }
}

/// Level-set parameters for a Σ₋ component, in mass labels except where
/// noted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSet {
    pub m_minus: f64,
    pub m_plus: f64,
    /// Convexity-trimmed core [a⁰, b⁰].
    pub a0: f64,
    pub b0: f64,
    pub h0: f64,
    pub h: f64,
    /// The two labels where A − A** = h.
    pub a_h: f64,
    pub b_h: f64,
    /// c(h) = h/(m₊ − m₋).
    pub c_h: f64,
}

/// f(x) = (A − A**)(m₋ + x(m₊ − m₋)) on its knots in [0, 1].
fn rescaled_gap(flux: &Flux, env: &Envelope, m_minus: f64, m_plus: f64) -> (Vec<f64>, Vec<f64>) {
    let width = m_plus - m_minus;
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    for (k, &m) in flux.knots.iter().enumerate() {
        if m >= m_minus && m <= m_plus {
            xs.push((m - m_minus) / width);
            fs.push(flux.values[k] - env.values[k]);
        }
    }
    *fs.first_mut().unwrap() = 0.0;
    *fs.last_mut().unwrap() = 0.0;
    (xs, fs)
}

pub fn level_set_params(
    flux: &Flux,
    env: &Envelope,
    regions: &RegionDecomposition,
    component: (f64, f64),
    k: (f64, f64),
) -> Result<LevelSet> {
    let (m_minus, m_plus) = component;
    if !(m_minus < k.0 && k.0 <= k.1 && k.1 < m_plus) {
        return Err(Error::InvalidInput(format!(
            "K = [{}, {}] is not a compact subset of ({m_minus}, {m_plus})",
            k.0, k.1
        )));
    }
    let width = m_plus - m_minus;
    let (xs, fs) = rescaled_gap(flux, env, m_minus, m_plus);
    if xs.len() < 3 || xs[0] != 0.0 || *xs.last().unwrap() != 1.0 {
        return Err(Error::RegionInconsistent(
            "component endpoints are not flux breakpoints".into(),
        ));
    }
    if fs[1..fs.len() - 1].iter().any(|&f| !(f > 0.0)) {
        return Err(Error::RegionInconsistent(
            "A − A** is not positive inside the supercritical component".into(),
        ));
    }
    let slope = |j: usize| (fs[j + 1] - fs[j]) / (xs[j + 1] - xs[j]);
    let stol = regions.tolerances.slope * width;
    let nseg = xs.len() - 1;

    let mut conv_left = xs[nseg];
    for j in 1..nseg {
        if slope(j) < slope(j - 1) - stol {
            conv_left = xs[j];
            break;
        }
    }
    let mut conv_right = xs[0];
    for j in (1..nseg).rev() {
        if slope(j) < slope(j - 1) - stol {
            conv_right = xs[j];
            break;
        }
    }
    let kt = ((k.0 - m_minus) / width, (k.1 - m_minus) / width);
    let a0 = kt.0.min(conv_left);
    let b0 = kt.1.max(conv_right);

    let f_at = |x: f64| Flux::linear(xs.clone(), fs.clone()).eval(x);
    let mut fmin = f_at(a0).min(f_at(b0));
    for j in 0..xs.len() {
        if xs[j] > a0 && xs[j] < b0 {
            fmin = fmin.min(fs[j]);
        }
    }
    let h0 = 0.5 * fmin;
    let h = h0;

    // f increases strictly on [0, a⁰] and decreases strictly on [b⁰, 1].
    let mut a_h = a0;
    for j in 0..nseg {
        if fs[j + 1] >= h && xs[j] < a0 {
            a_h = xs[j] + (h - fs[j]) / (fs[j + 1] - fs[j]) * (xs[j + 1] - xs[j]);
            break;
        }
    }
    let mut b_h = b0;
    for j in (0..nseg).rev() {
        if fs[j] >= h && xs[j + 1] > b0 {
            b_h = xs[j + 1] - (h - fs[j + 1]) / (fs[j] - fs[j + 1]) * (xs[j + 1] - xs[j]);
            break;
        }
    }
    let to_mass = |x: f64| m_minus + x * width;
    Ok(LevelSet {
        m_minus,
        m_plus,
        a0: to_mass(a0),
        b0: to_mass(b0),
        h0,
        h,
        a_h: to_mass(a_h),
        b_h: to_mass(b_h),
        c_h: h / width,
    })
}
