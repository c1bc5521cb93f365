//! Communication protocols φ, their primitives, and the kernel registry.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const PRIMITIVE_TOL: f64 = 1e-12;

/// Lower bound φ(r) ≥ c r^(−β) on (0, R).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLaw {
    pub c: f64,
    pub beta: f64,
    pub radius: f64,
}

/// A radial kernel evaluated on r ≥ 0.
///
/// `primitive` and `second_primitive` default to quadrature; kernels with
/// closed forms override them.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn kind(&self) -> &str;

    fn phi(&self, r: f64) -> f64;

    /// Φ(x) = ∫_0^x φ for x ≥ 0.
    fn primitive(&self, x: f64) -> f64 {
        quadrature::integrate(|r| self.phi(r), 0.0, x, PRIMITIVE_TOL).value
    }

    /// ∫_0^x Φ for x ≥ 0.
    fn second_primitive(&self, x: f64) -> f64 {
        quadrature::integrate(|s| self.primitive(s), 0.0, x, PRIMITIVE_TOL).value
    }

    fn sup_norm(&self) -> Option<f64>;

    fn heavy_tailed(&self) -> bool;

    fn power_law(&self) -> Option<PowerLaw> {
        None
    }
}

#[derive(Debug)]
pub struct ZeroKernel;

impl Kernel for ZeroKernel {
    fn kind(&self) -> &str {
        "zero"
    }
    fn phi(&self, _r: f64) -> f64 {
        0.0
    }
    fn primitive(&self, _x: f64) -> f64 {
        0.0
    }
    fn second_primitive(&self, _x: f64) -> f64 {
        0.0
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(0.0)
    }
    fn heavy_tailed(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub struct ConstantKernel {
    pub value: f64,
}

impl Kernel for ConstantKernel {
    fn kind(&self) -> &str {
        "constant"
    }
    fn phi(&self, _r: f64) -> f64 {
        self.value
    }
    fn primitive(&self, x: f64) -> f64 {
        self.value * x
    }
    fn second_primitive(&self, x: f64) -> f64 {
        0.5 * self.value * x * x
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.value)
    }
    fn heavy_tailed(&self) -> bool {
        true
    }
}

/// φ(r) = k (1 + r/λ)^(−γ).
#[derive(Debug)]
pub struct AlgebraicKernel {
    pub strength: f64,
    pub gamma: f64,
    pub scale: f64,
}

fn algebraic_primitive(k: f64, gamma: f64, lambda: f64, x: f64) -> f64 {
    let u = x / lambda;
    if gamma == 1.0 {
        k * lambda * u.ln_1p()
    } else {
        let e = 1.0 - gamma;
        k * lambda * (e * u.ln_1p()).exp_m1() / e
    }
}

fn algebraic_second_primitive(k: f64, gamma: f64, lambda: f64, x: f64) -> f64 {
    let u = x / lambda;
    if gamma == 1.0 {
        k * lambda * ((lambda + x) * u.ln_1p() - x)
    } else if gamma == 2.0 {
        k * lambda * (x - lambda * u.ln_1p())
    } else {
        let e = 2.0 - gamma;
        let inner = lambda * (e * u.ln_1p()).exp_m1() / e;
        k * lambda * (inner - x) / (1.0 - gamma)
    }
}

impl Kernel for AlgebraicKernel {
    fn kind(&self) -> &str {
        "algebraic"
    }
    fn phi(&self, r: f64) -> f64 {
        self.strength * (1.0 + r / self.scale).powf(-self.gamma)
    }
    fn primitive(&self, x: f64) -> f64 {
        algebraic_primitive(self.strength, self.gamma, self.scale, x)
    }
    fn second_primitive(&self, x: f64) -> f64 {
        algebraic_second_primitive(self.strength, self.gamma, self.scale, x)
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.strength)
    }
    fn heavy_tailed(&self) -> bool {
        self.gamma <= 1.0
    }
}

/// φ(r) = k exp(−r²/(2w²)).
#[derive(Debug)]
pub struct GaussianKernel {
    pub strength: f64,
    pub width: f64,
}

impl Kernel for GaussianKernel {
    fn kind(&self) -> &str {
        "gaussian"
    }
    fn phi(&self, r: f64) -> f64 {
        let z = r / self.width;
        self.strength * (-0.5 * z * z).exp()
    }
    fn primitive(&self, x: f64) -> f64 {
        let a = self.width * std::f64::consts::FRAC_PI_2.sqrt();
        self.strength * a * libm::erf(x / (self.width * std::f64::consts::SQRT_2))
    }
    fn second_primitive(&self, x: f64) -> f64 {
        let w = self.width;
        let a = w * std::f64::consts::FRAC_PI_2.sqrt();
        let erf = libm::erf(x / (w * std::f64::consts::SQRT_2));
        let z = x / w;
        self.strength * a * (x * erf + w * std::f64::consts::FRAC_2_PI.sqrt() * ((-0.5 * z * z).exp() - 1.0))
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.strength)
    }
    fn heavy_tailed(&self) -> bool {
        false
    }
}

/// φ(r) = c r^(−β) on (0, R), continued for r ≥ R by the algebraic tail
/// c R^(−β) (1 + (r − R)/λ)^(−γ).
#[derive(Debug)]
pub struct WeaklySingularKernel {
    pub c: f64,
    pub beta: f64,
    pub radius: f64,
    pub tail_gamma: f64,
    pub tail_scale: f64,
}

impl WeaklySingularKernel {
    fn tail_strength(&self) -> f64 {
        self.c * self.radius.powf(-self.beta)
    }
    fn core_primitive(&self, x: f64) -> f64 {
        self.c * x.powf(1.0 - self.beta) / (1.0 - self.beta)
    }
    fn core_second_primitive(&self, x: f64) -> f64 {
        self.c * x.powf(2.0 - self.beta) / ((1.0 - self.beta) * (2.0 - self.beta))
    }
}

impl Kernel for WeaklySingularKernel {
    fn kind(&self) -> &str {
        "weakly-singular"
    }
    fn phi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            f64::INFINITY
        } else if r < self.radius {
            self.c * r.powf(-self.beta)
        } else {
            self.tail_strength() * (1.0 + (r - self.radius) / self.tail_scale).powf(-self.tail_gamma)
        }
    }
    fn primitive(&self, x: f64) -> f64 {
        if x <= self.radius {
            self.core_primitive(x)
        } else {
            self.core_primitive(self.radius)
                + algebraic_primitive(
                    self.tail_strength(),
                    self.tail_gamma,
                    self.tail_scale,
                    x - self.radius,
                )
        }
    }
    fn second_primitive(&self, x: f64) -> f64 {
        if x <= self.radius {
            self.core_second_primitive(x)
        } else {
            let s = x - self.radius;
            self.core_second_primitive(self.radius)
                + self.core_primitive(self.radius) * s
                + algebraic_second_primitive(
                    self.tail_strength(),
                    self.tail_gamma,
                    self.tail_scale,
                    s,
                )
        }
    }
    fn sup_norm(&self) -> Option<f64> {
        None
    }
    fn heavy_tailed(&self) -> bool {
        self.tail_gamma <= 1.0
    }
    fn power_law(&self) -> Option<PowerLaw> {
        Some(PowerLaw {
            c: self.c,
            beta: self.beta,
            radius: self.radius,
        })
    }
}

type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Kernel built from closures. Flags are declared by the caller; the
/// primitive falls back to quadrature when not supplied.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub phi: RadialFn,
    pub primitive: Option<RadialFn>,
    pub sup_norm: Option<f64>,
    pub heavy_tailed: bool,
    pub power_law: Option<PowerLaw>,
}

impl CustomKernel {
    pub fn new(name: &str, phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomKernel {
            name: name.to_string(),
            phi: Arc::new(phi),
            primitive: None,
            sup_norm: None,
            heavy_tailed: false,
            power_law: None,
        }
    }

    pub fn with_primitive(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.primitive = Some(Arc::new(f));
        self
    }

    pub fn bounded_by(mut self, sup: f64) -> Self {
        self.sup_norm = Some(sup);
        self
    }

    pub fn heavy_tailed(mut self, yes: bool) -> Self {
        self.heavy_tailed = yes;
        self
    }

    pub fn singular(mut self, law: PowerLaw) -> Self {
        self.power_law = Some(law);
        self
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel")
            .field("name", &self.name)
            .field("sup_norm", &self.sup_norm)
            .field("heavy_tailed", &self.heavy_tailed)
            .field("power_law", &self.power_law)
            .finish()
    }
}

impl Kernel for CustomKernel {
    fn kind(&self) -> &str {
        &self.name
    }
    fn phi(&self, r: f64) -> f64 {
        (self.phi)(r)
    }
    fn primitive(&self, x: f64) -> f64 {
        match &self.primitive {
            Some(p) => p(x),
            None => quadrature::integrate(|r| (self.phi)(r), 0.0, x, PRIMITIVE_TOL).value,
        }
    }
    fn sup_norm(&self) -> Option<f64> {
        self.sup_norm
    }
    fn heavy_tailed(&self) -> bool {
        self.heavy_tailed
    }
    fn power_law(&self) -> Option<PowerLaw> {
        self.power_law
    }
}

/// Kernel name plus numeric parameters, as written in scenario files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl ProtocolSpec {
    pub fn new(kind: &str) -> Self {
        ProtocolSpec {
            kind: kind.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }
}

struct Params<'a> {
    kind: &'a str,
    values: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::config(
                    format!("protocol.{key}"),
                    format!("unknown parameter for kind `{}`", self.kind),
                ));
            }
        }
        Ok(())
    }

    fn get(&self, name: &str, default: Option<f64>) -> Result<f64> {
        match (self.values.get(name), default) {
            (Some(v), _) if v.is_finite() => Ok(*v),
            (Some(_), _) => Err(Error::config(format!("protocol.{name}"), "must be finite")),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(Error::config(
                format!("protocol.{name}"),
                format!("required for kind `{}`", self.kind),
            )),
        }
    }

    fn positive(&self, name: &str, default: Option<f64>) -> Result<f64> {
        let v = self.get(name, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::config(format!("protocol.{name}"), "must be positive"))
        }
    }
}

pub type KernelFactory = fn(&ProtocolSpec) -> Result<Box<dyn Kernel>>;

fn build_zero(spec: &ProtocolSpec) -> Result<Box<dyn Kernel>> {
    params(spec).check_known(&[])?;
    Ok(Box::new(ZeroKernel))
}

fn build_constant(spec: &ProtocolSpec) -> Result<Box<dyn Kernel>> {
    let p = params(spec);
    p.check_known(&["value"])?;
    Ok(Box::new(ConstantKernel {
        value: p.positive("value", None)?,
    }))
}

fn build_algebraic(spec: &ProtocolSpec) -> Result<Box<dyn Kernel>> {
    let p = params(spec);
    p.check_known(&["strength", "gamma", "scale"])?;
    let gamma = p.get("gamma", None)?;
    if gamma < 0.0 {
        return Err(Error::config("protocol.gamma", "must be nonnegative"));
    }
    Ok(Box::new(AlgebraicKernel {
        strength: p.positive("strength", Some(1.0))?,
        gamma,
        scale: p.positive("scale", Some(1.0))?,
    }))
}

fn build_gaussian(spec: &ProtocolSpec) -> Result<Box<dyn Kernel>> {
    let p = params(spec);
    p.check_known(&["strength", "width"])?;
    Ok(Box::new(GaussianKernel {
        strength: p.positive("strength", Some(1.0))?,
        width: p.positive("width", None)?,
    }))
}

fn build_weakly_singular(spec: &ProtocolSpec) -> Result<Box<dyn Kernel>> {
    let p = params(spec);
    p.check_known(&["c", "beta", "radius", "tail_gamma", "tail_scale"])?;
    let beta = p.get("beta", None)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::config("protocol.beta", "must lie in (0, 1)"));
    }
    let tail_gamma = p.get("tail_gamma", Some(1.0))?;
    if tail_gamma < 0.0 {
        return Err(Error::config("protocol.tail_gamma", "must be nonnegative"));
    }
    let radius = p.positive("radius", None)?;
    Ok(Box::new(WeaklySingularKernel {
        c: p.positive("c", None)?,
        beta,
        radius,
        tail_gamma,
        tail_scale: p.positive("tail_scale", Some(radius))?,
    }))
}

fn params(spec: &ProtocolSpec) -> Params<'_> {
    Params {
        kind: &spec.kind,
        values: &spec.params,
    }
}

/// Name-keyed kernel factories.
pub struct KernelRegistry {
    factories: BTreeMap<String, KernelFactory>,
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut reg = KernelRegistry::empty();
        reg.register("zero", build_zero);
        reg.register("constant", build_constant);
        reg.register("algebraic", build_algebraic);
        reg.register("gaussian", build_gaussian);
        reg.register("weakly-singular", build_weakly_singular);
        reg
    }
}

impl KernelRegistry {
    pub fn empty() -> Self {
        KernelRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: KernelFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &ProtocolSpec) -> Result<Protocol> {
        let factory = self
            .factories
            .get(&spec.kind)
            .ok_or_else(|| Error::UnknownStrategy {
                registry: "protocol kind",
                name: spec.kind.clone(),
                available: self.names().join(", "),
            })?;
        Protocol::new(factory(spec)?)
    }
}

/// A validated communication protocol. Cheap to clone and share.
#[derive(Clone, Debug)]
pub struct Protocol {
    kernel: Arc<dyn Kernel>,
}

impl Protocol {
    /// Wraps a kernel after spot-checking (A1) and the declared power-law
    /// lower bound on a sample grid.
    pub fn new(kernel: Box<dyn Kernel>) -> Result<Self> {
        let p = Protocol {
            kernel: Arc::from(kernel),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_spec(spec: &ProtocolSpec) -> Result<Self> {
        KernelRegistry::default().build(spec)
    }

    pub fn zero() -> Self {
        Protocol {
            kernel: Arc::new(ZeroKernel),
        }
    }

    pub fn constant(value: f64) -> Result<Self> {
        Protocol::new(Box::new(ConstantKernel { value }))
    }

    pub fn kernel(&self) -> &dyn Kernel {
        self.kernel.as_ref()
    }

    pub fn kind(&self) -> &str {
        self.kernel.kind()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(format!("protocol `{}`: {msg}", self.kind())));
        let mut grid: Vec<f64> = (0..=120).map(|k| 10f64.powf(-6.0 + 0.075 * k as f64)).collect();
        grid.extend((1..=200).map(|k| 0.05 * k as f64));
        grid.sort_by(f64::total_cmp);
        let mut prev = f64::INFINITY;
        for &r in &grid {
            let v = self.kernel.phi(r);
            if !(v >= 0.0) {
                return bad(format!("φ({r}) = {v} is negative or NaN"));
            }
            if v > prev * (1.0 + 1e-12) + 1e-300 {
                return bad(format!("φ increases near r = {r}"));
            }
            prev = v;
        }
        if let Some(sup) = self.kernel.sup_norm() {
            let at0 = self.kernel.phi(0.0);
            if !(at0.is_finite() && at0 <= sup * (1.0 + 1e-12)) {
                return bad(format!("declared sup {sup} below φ(0) = {at0}"));
            }
        }
        if let Some(law) = self.kernel.power_law() {
            for k in 1..=100 {
                let r = law.radius * k as f64 / 101.0;
                if self.kernel.phi(r) < law.c * r.powf(-law.beta) * (1.0 - 1e-12) {
                    return bad(format!("φ({r}) below c·r^(−β)"));
                }
            }
        }
        let mut last = 0.0;
        for &x in grid.iter().step_by(8) {
            let v = self.kernel.primitive(x);
            if !(v >= last - 1e-12 * v.abs().max(1.0)) {
                return bad(format!("Φ not nondecreasing near x = {x}"));
            }
            last = v;
        }
        Ok(())
    }

    /// φ(|r|); +∞ at r = 0 for singular kernels.
    pub fn phi(&self, r: f64) -> f64 {
        self.kernel.phi(r.abs())
    }

    /// Φ(x) = ∫_0^x φ, odd in x.
    pub fn primitive(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.kernel.primitive(x)
        } else {
            -self.kernel.primitive(-x)
        }
    }

    /// ∫_a^b Φ(x − y) dy.
    pub fn block_convolution(&self, x: f64, a: f64, b: f64) -> f64 {
        let g = |s: f64| self.kernel.second_primitive(s.abs());
        g(x - a) - g(x - b)
    }

    /// φ̲ = φ(D̄).
    pub fn floor(&self, diameter_bound: f64) -> f64 {
        self.kernel.phi(diameter_bound.abs())
    }

    pub fn sup_norm(&self) -> Option<f64> {
        self.kernel.sup_norm()
    }

    pub fn is_bounded(&self) -> bool {
        self.kernel.sup_norm().is_some()
    }

    pub fn is_zero(&self) -> bool {
        self.kernel.sup_norm() == Some(0.0)
    }

    pub fn heavy_tailed(&self) -> bool {
        self.kernel.heavy_tailed()
    }

    pub fn power_law(&self) -> Option<PowerLaw> {
        self.kernel.power_law()
    }

    pub fn is_singular(&self) -> bool {
        !self.is_bounded()
    }
}
