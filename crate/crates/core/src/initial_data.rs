//! Initial data (ρ⁰, u⁰), its distribution function and quantile, the flux A
//! and the N-particle discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Protocol;
use crate::quadrature;

/// Knot-insertion tolerance for curved flux pieces.
pub const FLUX_KNOT_TOL: f64 = 1e-10;
const MASS_TOL: f64 = 1e-12;
const DEDUP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub mass: f64,
    pub position: f64,
    /// Falls back to the piecewise field when absent.
    #[serde(default)]
    pub velocity: Option<f64>,
}

/// Uniform density of total `mass` on [left, right].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub mass: f64,
    pub left: f64,
    pub right: f64,
}

/// Linear from `start` at `left` to `end` at `right`, on [left, right).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearPiece {
    pub left: f64,
    pub right: f64,
    pub start: f64,
    pub end: f64,
}

impl LinearPiece {
    fn at(&self, x: f64) -> f64 {
        if self.right == self.left {
            return self.start;
        }
        let s = (x - self.left) / (self.right - self.left);
        self.start + s * (self.end - self.start)
    }
}

/// Whether the piecewise field (and atom values) prescribe u⁰ or ψ⁰.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    #[default]
    Velocity,
    Psi,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityField {
    #[serde(default)]
    pub mode: FieldMode,
    #[serde(default)]
    pub pieces: Vec<LinearPiece>,
}

impl VelocityField {
    fn lookup(&self, x: f64) -> Option<f64> {
        self.pieces
            .iter()
            .find(|p| p.left <= x && x < p.right)
            .or_else(|| self.pieces.iter().find(|p| p.right == x))
            .map(|p| p.at(x))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pieces.iter().flat_map(|p| [p.left, p.right]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub velocity: VelocityField,
}

impl InitialData {
    pub fn validate(&self) -> Result<()> {
        for (k, a) in self.atoms.iter().enumerate() {
            if !(a.mass > 0.0 && a.mass.is_finite()) {
                return Err(Error::config(format!("density.atoms[{k}].mass"), "must be positive"));
            }
            if !a.position.is_finite() {
                return Err(Error::config(format!("density.atoms[{k}].position"), "must be finite"));
            }
            if matches!(a.velocity, Some(v) if !v.is_finite()) {
                return Err(Error::config(format!("density.atoms[{k}].velocity"), "must be finite"));
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if !(b.mass > 0.0 && b.mass.is_finite()) {
                return Err(Error::config(format!("density.blocks[{k}].mass"), "must be positive"));
            }
            if !(b.left.is_finite() && b.right.is_finite() && b.left < b.right) {
                return Err(Error::config(
                    format!("density.blocks[{k}]"),
                    "needs finite left < right",
                ));
            }
        }
        let mut pieces = self.velocity.pieces.clone();
        for (k, p) in pieces.iter().enumerate() {
            if !(p.left.is_finite() && p.right.is_finite() && p.left < p.right) {
                return Err(Error::config(format!("velocity.pieces[{k}]"), "needs finite left < right"));
            }
            if !(p.start.is_finite() && p.end.is_finite()) {
                return Err(Error::config(format!("velocity.pieces[{k}]"), "values must be finite"));
            }
        }
        pieces.sort_by(|a, b| a.left.total_cmp(&b.left));
        if pieces.windows(2).any(|w| w[1].left < w[0].right) {
            return Err(Error::config("velocity.pieces", "pieces overlap"));
        }
        let total: f64 = self.atoms.iter().map(|a| a.mass).sum::<f64>()
            + self.blocks.iter().map(|b| b.mass).sum::<f64>();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::MassNotNormalized(total));
        }
        for a in &self.atoms {
            if a.velocity.is_none() && self.velocity.lookup(a.position).is_none() {
                return Err(Error::VelocityUndefined(a.position));
            }
        }
        for b in &self.blocks {
            let mut covered = b.left;
            for p in &pieces {
                if p.left <= covered && p.right > covered {
                    covered = p.right;
                }
            }
            if covered < b.right {
                return Err(Error::VelocityUndefined(covered));
            }
        }
        for (i, a) in self.atoms.iter().enumerate() {
            for b in &self.atoms[i + 1..] {
                if a.position == b.position && self.atom_value(a) != self.atom_value(b) {
                    return Err(Error::InvalidInput(format!(
                        "atoms at x = {} carry different velocities",
                        a.position
                    )));
                }
            }
        }
        Ok(())
    }

    fn atom_value(&self, a: &Atom) -> f64 {
        a.velocity
            .or_else(|| self.velocity.lookup(a.position))
            .unwrap_or(f64::NAN)
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self
            .atoms
            .iter()
            .map(|a| a.position)
            .chain(self.blocks.iter().map(|b| b.left))
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .atoms
            .iter()
            .map(|a| a.position)
            .chain(self.blocks.iter().map(|b| b.right))
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// M⁰(x) = −½ + ρ⁰((−∞, x]), stored as atoms at `xs` plus a constant
/// density on each (xs[k], xs[k+1]).
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf {
    pub xs: Vec<f64>,
    pub atoms: Vec<f64>,
    pub density: Vec<f64>,
    right_values: Vec<f64>,
}

impl Cdf {
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&p| p <= x);
        if k == 0 {
            return -0.5;
        }
        let k = k - 1;
        if k + 1 == self.xs.len() {
            return self.right_values[k];
        }
        (self.right_values[k] + self.density[k] * (x - self.xs[k])).min(0.5)
    }
}

pub fn build_cdf(data: &InitialData) -> Result<Cdf> {
    data.validate()?;
    let mut xs: Vec<f64> = data
        .atoms
        .iter()
        .map(|a| a.position)
        .chain(data.blocks.iter().flat_map(|b| [b.left, b.right]))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut atoms = vec![0.0; xs.len()];
    for a in &data.atoms {
        let k = xs.partition_point(|&p| p < a.position);
        atoms[k] += a.mass;
    }
    let mut density = vec![0.0; xs.len().saturating_sub(1)];
    for b in &data.blocks {
        let rho = b.mass / (b.right - b.left);
        let lo = xs.partition_point(|&p| p < b.left);
        let hi = xs.partition_point(|&p| p < b.right);
        for d in &mut density[lo..hi] {
            *d += rho;
        }
    }
    let mut right_values = Vec::with_capacity(xs.len());
    let mut m = -0.5;
    for k in 0..xs.len() {
        if k > 0 {
            m += density[k - 1] * (xs[k] - xs[k - 1]);
        }
        m += atoms[k];
        right_values.push(m);
    }
    if let Some(last) = right_values.last_mut() {
        *last = 0.5;
    }
    Ok(Cdf {
        xs,
        atoms,
        density,
        right_values,
    })
}

/// One affine piece of a quantile function on (m_lo, m_hi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantilePiece {
    pub m_lo: f64,
    pub m_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl QuantilePiece {
    fn at(&self, m: f64) -> f64 {
        if self.x_lo == self.x_hi {
            return self.x_lo;
        }
        let s = (m - self.m_lo) / (self.m_hi - self.m_lo);
        self.x_lo + s * (self.x_hi - self.x_lo)
    }

    pub fn is_constant(&self) -> bool {
        self.x_lo == self.x_hi
    }
}

/// Left-continuous nondecreasing function on (−½, ½], affine on each piece.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileFn {
    pub pieces: Vec<QuantilePiece>,
}

impl QuantileFn {
    /// Step function taking value xs[i] on (θ_{i}, θ_{i+1}].
    pub fn step(theta: &[f64], xs: &[f64]) -> Self {
        let pieces = theta
            .windows(2)
            .zip(xs)
            .map(|(w, &x)| QuantilePiece {
                m_lo: w[0],
                m_hi: w[1],
                x_lo: x,
                x_hi: x,
            })
            .collect();
        QuantileFn { pieces }
    }

    /// X(m); at m = −½ the right limit is returned.
    pub fn eval(&self, m: f64) -> f64 {
        let k = self.pieces.partition_point(|p| p.m_hi < m);
        let k = k.min(self.pieces.len() - 1);
        self.pieces[k].at(m.max(self.pieces[k].m_lo))
    }

    /// Maximal interval (m′, m″] containing m on which X is constant, if
    /// it has positive length.
    pub fn flat_interval(&self, m: f64) -> Option<(f64, f64)> {
        let k = self.pieces.partition_point(|p| p.m_hi < m).min(self.pieces.len() - 1);
        if !self.pieces[k].is_constant() {
            return None;
        }
        let x = self.pieces[k].x_lo;
        let mut lo = k;
        while lo > 0 && self.pieces[lo - 1].is_constant() && self.pieces[lo - 1].x_lo == x {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < self.pieces.len() && self.pieces[hi + 1].is_constant() && self.pieces[hi + 1].x_lo == x {
            hi += 1;
        }
        Some((self.pieces[lo].m_lo, self.pieces[hi].m_hi))
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = vec![self.pieces[0].m_lo];
        v.extend(self.pieces.iter().map(|p| p.m_hi));
        v
    }
}

pub fn generalized_inverse(cdf: &Cdf) -> QuantileFn {
    let mut pieces = Vec::new();
    let mut m = -0.5;
    let n = cdf.xs.len();
    for k in 0..n {
        if cdf.atoms[k] > 0.0 {
            let hi = if k + 1 == n { 0.5 } else { (m + cdf.atoms[k]).min(0.5) };
            pieces.push(QuantilePiece {
                m_lo: m,
                m_hi: hi,
                x_lo: cdf.xs[k],
                x_hi: cdf.xs[k],
            });
            m = hi;
        }
        if k + 1 < n && cdf.density[k] > 0.0 {
            let hi = if k + 2 == n && cdf.atoms[k + 1] == 0.0 {
                0.5
            } else {
                (m + cdf.density[k] * (cdf.xs[k + 1] - cdf.xs[k])).min(0.5)
            };
            pieces.push(QuantilePiece {
                m_lo: m,
                m_hi: hi,
                x_lo: cdf.xs[k],
                x_hi: cdf.xs[k + 1],
            });
            m = hi;
        }
    }
    pieces.retain(|p| p.m_hi > p.m_lo);
    if let Some(last) = pieces.last_mut() {
        last.m_hi = 0.5;
    }
    QuantileFn { pieces }
}

/// Piecewise-linear flux on [−½, ½]. Segment k joins knots k and k+1;
/// `curved[k]` marks segments interpolating a non-affine A.
#[derive(Clone, Debug, PartialEq)]
pub struct Flux {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub curved: Vec<bool>,
}

impl Flux {
    pub fn linear(knots: Vec<f64>, values: Vec<f64>) -> Self {
        let curved = vec![false; knots.len().saturating_sub(1)];
        Flux {
            knots,
            values,
            curved,
        }
    }

    pub fn eval(&self, m: f64) -> f64 {
        let k = self.knots.partition_point(|&p| p < m);
        if k == 0 {
            return self.values[0];
        }
        if k == self.knots.len() {
            return *self.values.last().unwrap();
        }
        let (m0, m1) = (self.knots[k - 1], self.knots[k]);
        let (a0, a1) = (self.values[k - 1], self.values[k]);
        a0 + (m - m0) / (m1 - m0) * (a1 - a0)
    }

    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.knots[k + 1] - self.knots[k])
    }

    pub fn lipschitz(&self) -> f64 {
        (0..self.knots.len() - 1)
            .map(|k| self.slope(k).abs())
            .fold(0.0, f64::max)
    }

    pub fn value_range(&self) -> f64 {
        let lo = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    pub fn knot_index(&self, m: f64) -> Option<usize> {
        let k = self.knots.partition_point(|&p| p < m);
        (k < self.knots.len() && self.knots[k] == m).then_some(k)
    }
}

#[derive(Clone, Copy, Debug)]
struct MassPiece {
    m_lo: f64,
    m_hi: f64,
    x_lo: f64,
    x_hi: f64,
    atom_psi: Option<f64>,
}

impl MassPiece {
    fn x_at(&self, m: f64) -> f64 {
        if self.x_lo == self.x_hi {
            return self.x_lo;
        }
        self.x_lo + (m - self.m_lo) / (self.m_hi - self.m_lo) * (self.x_hi - self.x_lo)
    }
}

/// Everything derived from (ρ⁰, u⁰) and φ: M⁰, X⁰, ψ⁰ and A.
#[derive(Clone, Debug)]
pub struct InitialProfile {
    data: InitialData,
    protocol: Protocol,
    cdf: Cdf,
    quantile: QuantileFn,
    pieces: Vec<MassPiece>,
    piece_start: Vec<f64>,
    piece_constant: Vec<bool>,
    flux: Flux,
    psi_scale: f64,
}

impl InitialProfile {
    pub fn new(data: InitialData, protocol: Protocol) -> Result<Self> {
        let cdf = build_cdf(&data)?;
        let quantile = generalized_inverse(&cdf);
        let mut profile = InitialProfile {
            data,
            protocol,
            cdf,
            quantile,
            pieces: Vec::new(),
            piece_start: Vec::new(),
            piece_constant: Vec::new(),
            flux: Flux::linear(vec![], vec![]),
            psi_scale: 0.0,
        };
        profile.pieces = profile.mass_pieces();
        profile.build_flux();
        Ok(profile)
    }

    fn mass_pieces(&self) -> Vec<MassPiece> {
        let cuts = self.data.velocity.breakpoints();
        let mut out = Vec::new();
        for q in &self.quantile.pieces {
            if q.is_constant() {
                let psi = self.psi_at(q.x_lo);
                out.push(MassPiece {
                    m_lo: q.m_lo,
                    m_hi: q.m_hi,
                    x_lo: q.x_lo,
                    x_hi: q.x_hi,
                    atom_psi: Some(psi),
                });
                continue;
            }
            let mut m_lo = q.m_lo;
            let mut x_lo = q.x_lo;
            for &c in cuts.iter().filter(|&&c| c > q.x_lo && c < q.x_hi) {
                let m_c = q.m_lo + (c - q.x_lo) / (q.x_hi - q.x_lo) * (q.m_hi - q.m_lo);
                out.push(MassPiece {
                    m_lo,
                    m_hi: m_c,
                    x_lo,
                    x_hi: c,
                    atom_psi: None,
                });
                m_lo = m_c;
                x_lo = c;
            }
            out.push(MassPiece {
                m_lo,
                m_hi: q.m_hi,
                x_lo,
                x_hi: q.x_hi,
                atom_psi: None,
            });
        }
        out
    }

    /// Φ∗ρ⁰(x).
    pub fn convolution(&self, x: f64) -> f64 {
        let c = &self.cdf;
        let mut s = 0.0;
        for k in 0..c.xs.len() {
            if c.atoms[k] > 0.0 {
                s += c.atoms[k] * self.protocol.primitive(x - c.xs[k]);
            }
            if k + 1 < c.xs.len() && c.density[k] > 0.0 {
                s += c.density[k] * self.protocol.block_convolution(x, c.xs[k], c.xs[k + 1]);
            }
        }
        s
    }

    fn field_at(&self, x: f64) -> Option<f64> {
        let atom = self
            .data
            .atoms
            .iter()
            .find(|a| a.position == x)
            .and_then(|a| a.velocity);
        atom.or_else(|| self.data.velocity.lookup(x))
    }

    fn psi_at(&self, x: f64) -> f64 {
        let f = self.field_at(x).unwrap_or(f64::NAN);
        match self.data.velocity.mode {
            FieldMode::Velocity => f + self.convolution(x),
            FieldMode::Psi => f,
        }
    }

    /// ψ⁰(x) = u⁰(x) + Φ∗ρ⁰(x).
    pub fn psi0(&self, x: f64) -> Result<f64> {
        match self.field_at(x) {
            Some(_) => Ok(self.psi_at(x)),
            None => Err(Error::VelocityUndefined(x)),
        }
    }

    /// u⁰(x).
    pub fn u0(&self, x: f64) -> Result<f64> {
        let f = self.field_at(x).ok_or(Error::VelocityUndefined(x))?;
        Ok(match self.data.velocity.mode {
            FieldMode::Velocity => f,
            FieldMode::Psi => f - self.convolution(x),
        })
    }

    fn piece_integral(&self, k: usize, a: f64, b: f64) -> f64 {
        let p = self.pieces[k];
        match p.atom_psi {
            Some(psi) => psi * (b - a),
            None => {
                let tol = 1e-15 * self.psi_scale.max(1.0) * (b - a).max(1e-3);
                quadrature::integrate(|m| self.psi_at(p.x_at(m)), a, b, tol).value
            }
        }
    }

    fn build_flux(&mut self) {
        let n = self.pieces.len();
        let mut constant = vec![true; n];
        let mut scale: f64 = 0.0;
        let samples: Vec<Vec<f64>> = self
            .pieces
            .iter()
            .map(|p| match p.atom_psi {
                Some(psi) => vec![psi],
                None => (1..=9)
                    .map(|j| self.psi_at(p.x_at(p.m_lo + (p.m_hi - p.m_lo) * j as f64 / 10.0)))
                    .collect(),
            })
            .collect();
        for s in &samples {
            scale = s.iter().fold(scale, |a, v| a.max(v.abs()));
        }
        self.psi_scale = scale;
        for (k, s) in samples.iter().enumerate() {
            let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            constant[k] = hi - lo <= 1e-11 * scale.max(1.0);
        }

        let mut knots = vec![-0.5];
        let mut values = vec![0.0];
        let mut curved = Vec::new();
        let mut starts = Vec::with_capacity(n);
        for k in 0..n {
            let p = self.pieces[k];
            let a0 = *values.last().unwrap();
            starts.push(a0);
            if constant[k] {
                let v = match p.atom_psi {
                    Some(psi) => psi * (p.m_hi - p.m_lo),
                    None => self.piece_integral(k, p.m_lo, p.m_hi),
                };
                knots.push(p.m_hi);
                values.push(a0 + v);
                curved.push(false);
            } else {
                self.refine(k, p.m_lo, p.m_hi, a0, 0, &mut knots, &mut values, &mut curved);
                *values.last_mut().unwrap() = a0 + self.piece_integral(k, p.m_lo, p.m_hi);
            }
        }
        if let Some(last) = knots.last_mut() {
            *last = 0.5;
        }
        self.piece_start = starts;
        self.piece_constant = constant;
        self.flux = Flux {
            knots,
            values,
            curved,
        };
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        k: usize,
        lo: f64,
        hi: f64,
        a_lo: f64,
        depth: u32,
        knots: &mut Vec<f64>,
        values: &mut Vec<f64>,
        curved: &mut Vec<bool>,
    ) -> f64 {
        let mid = 0.5 * (lo + hi);
        let i1 = self.piece_integral(k, lo, mid);
        let i2 = self.piece_integral(k, mid, hi);
        let deviation = 0.5 * (i1 - i2).abs();
        if (depth >= 2 && deviation <= FLUX_KNOT_TOL) || hi - lo < 1e-9 {
            let a_hi = a_lo + i1 + i2;
            knots.push(hi);
            values.push(a_hi);
            curved.push(true);
            return a_hi;
        }
        let a_mid = self.refine(k, lo, mid, a_lo, depth + 1, knots, values, curved);
        self.refine(k, mid, hi, a_mid, depth + 1, knots, values, curved)
    }

    /// A(m) by direct quadrature of ψ⁰∘X⁰, independent of the knot grid.
    pub fn flux_at(&self, m: f64) -> Result<f64> {
        if !(-0.5..=0.5).contains(&m) {
            return Err(Error::LabelOutOfRange(m));
        }
        if m == -0.5 {
            return Ok(0.0);
        }
        let k = self.pieces.partition_point(|p| p.m_hi < m).min(self.pieces.len() - 1);
        if let Some(i) = self.flux.knot_index(m) {
            if self.pieces[k].m_hi == m || self.piece_constant[k] {
                return Ok(self.flux.values[i]);
            }
        }
        let p = self.pieces[k];
        Ok(self.piece_start[k] + self.piece_integral(k, p.m_lo, m))
    }

    pub fn data(&self) -> &InitialData {
        &self.data
    }
    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }
    pub fn cdf(&self) -> &Cdf {
        &self.cdf
    }
    pub fn quantile(&self) -> &QuantileFn {
        &self.quantile
    }
    pub fn flux(&self) -> &Flux {
        &self.flux
    }
    pub fn psi_scale(&self) -> f64 {
        self.psi_scale
    }

    /// D⁰ = diam supp ρ⁰.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.data.support();
        hi - lo
    }

    /// Label boundaries of atoms strictly inside (−½, ½).
    pub fn atom_boundaries(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for q in self.quantile.pieces.iter().filter(|q| q.is_constant()) {
            for b in [q.m_lo, q.m_hi] {
                if b > -0.5 && b < 0.5 {
                    v.push(b);
                }
            }
        }
        v
    }

    pub fn discretize(&self, n: usize, snaps: &[f64]) -> Result<Discretization> {
        if n == 0 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        for &s in snaps {
            if !(s > -0.5 && s < 0.5) {
                return Err(Error::LabelOutOfRange(s));
            }
        }
        let theta = label_grid(n, snaps, &self.atom_boundaries());
        let x0: Vec<f64> = theta[1..].iter().map(|&m| self.quantile.eval(m)).collect();
        let mut a = Vec::with_capacity(theta.len());
        for &m in &theta {
            a.push(self.flux_at(m)?);
        }
        let masses: Vec<f64> = theta.windows(2).map(|w| w[1] - w[0]).collect();
        let psi0: Vec<f64> = (0..masses.len())
            .map(|i| (a[i + 1] - a[i]) / masses[i])
            .collect();
        let v0 = velocities_from_psi(&self.protocol, &masses, &x0, &psi0);
        Ok(Discretization {
            theta,
            masses,
            x0,
            psi0,
            v0,
            flux_values: a,
        })
    }
}

/// Uniform N-partition of [−½, ½] with `snaps` and `forced` inserted.
/// Grid points within 1e−12 of a snap are replaced by the snap.
pub fn label_grid(n: usize, snaps: &[f64], forced: &[f64]) -> Vec<f64> {
    let mut special: Vec<f64> = snaps.iter().chain(forced).cloned().collect();
    special.sort_by(f64::total_cmp);
    special.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOL);
    let mut theta: Vec<f64> = (1..n)
        .map(|k| -0.5 + k as f64 / n as f64)
        .filter(|g| special.iter().all(|s| (g - s).abs() > DEDUP_TOL))
        .collect();
    theta.extend(special);
    theta.push(-0.5);
    theta.push(0.5);
    theta.sort_by(f64::total_cmp);
    theta
}

/// v_i = ψ_i − Σ_j m_j Φ(x_i − x_j).
pub fn velocities_from_psi(p: &Protocol, masses: &[f64], x: &[f64], psi: &[f64]) -> Vec<f64> {
    (0..masses.len())
        .map(|i| {
            let s: f64 = (0..masses.len())
                .map(|j| masses[j] * p.primitive(x[i] - x[j]))
                .sum();
            psi[i] - s
        })
        .collect()
}

/// N-particle data (D1)–(D4).
#[derive(Clone, Debug, PartialEq)]
pub struct Discretization {
    pub theta: Vec<f64>,
    pub masses: Vec<f64>,
    pub x0: Vec<f64>,
    pub psi0: Vec<f64>,
    pub v0: Vec<f64>,
    /// A_N(θ_i), i = 0..N.
    pub flux_values: Vec<f64>,
}

impl Discretization {
    /// Builds the discretization directly from particles; θ are cumulative
    /// masses and A_N is accumulated from ψ.
    pub fn from_particles(p: &Protocol, masses: &[f64], x0: &[f64], v0: &[f64]) -> Result<Self> {
        if masses.is_empty() || masses.len() != x0.len() || masses.len() != v0.len() {
            return Err(Error::InvalidInput("particle arrays must be nonempty and equally long".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidInput("particle masses must be positive".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::MassNotNormalized(total));
        }
        if x0.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("positions must be nondecreasing".into()));
        }
        for i in 1..x0.len() {
            if x0[i] == x0[i - 1] && v0[i] != v0[i - 1] {
                return Err(Error::InvalidInput(format!(
                    "coincident particles {} and {} have different velocities",
                    i - 1,
                    i
                )));
            }
        }
        let mut theta = vec![-0.5];
        let mut acc = -0.5;
        for &m in masses {
            acc += m;
            theta.push(acc);
        }
        *theta.last_mut().unwrap() = 0.5;
        let psi0: Vec<f64> = (0..masses.len())
            .map(|i| {
                v0[i] + (0..masses.len())
                    .map(|j| masses[j] * p.primitive(x0[i] - x0[j]))
                    .sum::<f64>()
            })
            .collect();
        let mut flux_values = vec![0.0];
        for i in 0..masses.len() {
            flux_values.push(flux_values[i] + masses[i] * psi0[i]);
        }
        Ok(Discretization {
            theta,
            masses: masses.to_vec(),
            x0: x0.to_vec(),
            psi0,
            v0: v0.to_vec(),
            flux_values,
        })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Index i with m ∈ (θ_{i−1}, θ_i], zero-based.
    pub fn particle_of(&self, m: f64) -> Result<usize> {
        if !(m > -0.5 && m <= 0.5) {
            return Err(Error::LabelOutOfRange(m));
        }
        Ok((self.theta.partition_point(|&t| t < m) - 1).min(self.len() - 1))
    }

    /// Index k with θ_k = m exactly.
    pub fn label_index(&self, m: f64) -> Result<usize> {
        let k = self.theta.partition_point(|&t| t < m);
        if k < self.theta.len() && self.theta[k] == m {
            Ok(k)
        } else {
            Err(Error::LabelNotSnapped(m))
        }
    }

    pub fn flux(&self) -> Flux {
        Flux::linear(self.theta.clone(), self.flux_values.clone())
    }

    pub fn quantile(&self) -> QuantileFn {
        QuantileFn::step(&self.theta, &self.x0)
    }

    /// (D2) plus the two-cell resolution requirement for each component.
    pub fn check_resolution(&self, components: &[(f64, f64)]) -> Result<()> {
        for &(lo, hi) in components {
            for b in [lo, hi] {
                if b > -0.5 && b < 0.5 {
                    self.label_index(b)?;
                }
            }
            let inside = self.theta.iter().filter(|&&t| t > lo && t < hi).count();
            if inside < 1 {
                return Err(Error::RefineN { lo, hi });
            }
        }
        Ok(())
    }
}
