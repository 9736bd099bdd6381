//! Multicritical circle maps as trigonometric-polynomial lifts.
//!
//! A map is fixed by its critical points `c_i` with odd criticalities
//! `d_i >= 3` and an offset `a`. Its derivative is
//!
//! ```text
//! DF(x) = Z * prod_i sin^(d_i - 1)(pi (x - c_i)) = sum_{|k| <= M} gamma_k e^(2 pi i k x)
//! ```
//!
//! with `Z` chosen so that `gamma_0 = 1`, and the lift is
//! `F(x) = a + x + sum_{k != 0} gamma_k (e^(2 pi i k x) - 1) / (2 pi i k)`.
//! `F(x + 1) = F(x) + 1`, `DF >= 0` with zeros exactly at the `c_i`, and
//! `DF(c_i + t) ~ |t|^(d_i - 1)`. With no critical points the lift is the
//! rigid rotation `x + a`.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use rug::ops::Pow;
use rug::{Float, Integer, Rational};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    circle_distance, decimal_string, format_scalar, reduce_mod1, CirclePoint,
    PrecisionContext, Real,
};

/// Value and first three derivatives of a lift at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct JetValue {
    pub f: Real,
    pub d1: Real,
    pub d2: Real,
    pub d3: Real,
}

impl JetValue {
    /// `D3/D1 - (3/2)(D2/D1)^2`.
    pub fn schwarzian(&self) -> Result<Real> {
        if self.d1 <= 0 {
            return Err(Error::Singular(format!(
                "Schwarzian undefined where Df = {}",
                decimal_string(&self.d1)
            )));
        }
        let prec = self.d1.prec();
        let n = Float::with_val(prec, &self.d2 / &self.d1);
        let first = Float::with_val(prec, &self.d3 / &self.d1);
        let sq = Float::with_val(prec, n.square_ref()) * 3u32 / 2u32;
        Ok(first - sq)
    }
}

/// Anything that can be evaluated as a lift on the real line.
pub trait LiftMap: Sync {
    fn context(&self) -> PrecisionContext;

    fn lift(&self, x: &Real) -> Real;

    fn jet(&self, x: &Real) -> JetValue;

    fn derivative(&self, x: &Real) -> Real {
        self.jet(x).d1
    }
}

/// A critical point and its (odd) criticality.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub position: CirclePoint,
    pub criticality: u32,
}

/// Critical structure plus rotation offset. A template (offset still to be
/// tuned) carries `offset = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSpec {
    pub critical_points: Vec<CriticalPoint>,
    pub offset: Real,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum RawScalar {
    Text(String),
    Number(f64),
}

impl RawScalar {
    pub(crate) fn to_real(&self, ctx: &PrecisionContext) -> Result<Real> {
        match self {
            RawScalar::Text(s) => ctx.parse(s),
            RawScalar::Number(v) => {
                if v.is_finite() {
                    Ok(ctx.real(*v))
                } else {
                    Err(Error::NonFinite)
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct RawCritical {
    pub c: RawScalar,
    pub d: u32,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub(crate) struct RawSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<RawScalar>,
    #[serde(default)]
    pub critical_points: Vec<RawCritical>,
}

impl RawSpec {
    pub(crate) fn to_spec(&self, ctx: &PrecisionContext) -> Result<MapSpec> {
        let offset = match &self.a {
            Some(a) => a.to_real(ctx)?,
            None => ctx.zero(),
        };
        let critical_points = self
            .critical_points
            .iter()
            .map(|cp| {
                Ok(CriticalPoint {
                    position: reduce_mod1(&cp.c.to_real(ctx)?)?,
                    criticality: cp.d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = MapSpec {
            critical_points,
            offset,
        };
        spec.validate(ctx)?;
        Ok(spec)
    }
}

impl MapSpec {
    pub fn new(critical_points: Vec<CriticalPoint>, offset: Real) -> Self {
        Self {
            critical_points,
            offset,
        }
    }

    /// Rigid rotation `x -> x + a`.
    pub fn rigid(offset: Real) -> Self {
        Self::new(Vec::new(), offset)
    }

    /// Critical points given as `(position, criticality)` pairs.
    pub fn with_points(ctx: &PrecisionContext, points: &[(f64, u32)], offset: Real) -> Result<Self> {
        let critical_points = points
            .iter()
            .map(|&(c, d)| {
                Ok(CriticalPoint {
                    position: reduce_mod1(&ctx.real(c))?,
                    criticality: d,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = Self::new(critical_points, offset);
        spec.validate(ctx)?;
        Ok(spec)
    }

    /// The classical critical lift `x + a - sin(2 pi x)/(2 pi)`.
    pub fn arnold(ctx: &PrecisionContext, offset: Real) -> Self {
        Self::with_points(ctx, &[(0.0, 3)], offset).expect("valid by construction")
    }

    pub fn with_offset(&self, offset: Real) -> Self {
        Self {
            critical_points: self.critical_points.clone(),
            offset,
        }
    }

    pub fn criticalities(&self) -> Vec<u32> {
        self.critical_points.iter().map(|c| c.criticality).collect()
    }

    pub fn max_criticality(&self) -> u32 {
        self.critical_points
            .iter()
            .map(|c| c.criticality)
            .max()
            .unwrap_or(1)
    }

    pub fn validate(&self, ctx: &PrecisionContext) -> Result<()> {
        ctx.check(&self.offset)?;
        for (i, cp) in self.critical_points.iter().enumerate() {
            ctx.check(cp.position.value())?;
            if cp.criticality < 3 || cp.criticality % 2 == 0 {
                return Err(Error::InvalidMapSpec(format!(
                    "criticality of c_{i} must be an odd integer >= 3, got {}",
                    cp.criticality
                )));
            }
            for (j, other) in self.critical_points.iter().enumerate().skip(i + 1) {
                if circle_distance(&cp.position, &other.position) == 0 {
                    return Err(Error::InvalidMapSpec(format!(
                        "critical points c_{i} and c_{j} coincide"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn to_raw(&self, include_offset: bool) -> RawSpec {
        RawSpec {
            a: include_offset.then(|| RawScalar::Text(format_scalar(&self.offset))),
            critical_points: self
                .critical_points
                .iter()
                .map(|cp| RawCritical {
                    c: RawScalar::Text(format_scalar(cp.position.value())),
                    d: cp.criticality,
                })
                .collect(),
        }
    }

    /// TOML table with `a` and `critical_points = [{ c = "...", d = 3 }, ...]`.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw(true)).expect("spec serializes")
    }

    /// Reads a spec; a missing `a` yields a template with offset 0.
    pub fn from_toml(ctx: &PrecisionContext, text: &str) -> Result<Self> {
        let raw: RawSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("map spec: {e}")))?;
        raw.to_spec(ctx)
    }
}

/// Fourier data of the derivative for one harmonic `k >= 1`, pre-scaled for
/// each derivative order.
#[derive(Debug)]
struct Harmonic {
    /// `Re gamma_k`, `Im gamma_k`.
    re: Real,
    im: Real,
    lift_sin: Real,
    lift_cos: Real,
    d1_cos: Real,
    d1_sin: Real,
    d2_sin: Real,
    d2_cos: Real,
    d3_cos: Real,
    d3_sin: Real,
}

#[derive(Debug)]
struct Shape {
    ctx: PrecisionContext,
    critical_points: Vec<CriticalPoint>,
    harmonics: Vec<Harmonic>,
    lift_constant: Real,
    normalization: Real,
    two_pi: Real,
    radii: OnceLock<Vec<Real>>,
}

/// A built map: immutable and cheap to clone.
#[derive(Clone, Debug)]
pub struct TrigProductMap {
    shape: Arc<Shape>,
    offset: Real,
}

/// Complex number as a pair of reals, used only while building.
#[derive(Clone, Debug)]
struct Cplx {
    re: Real,
    im: Real,
}

fn convolve(a: &[Cplx], b: &[Cplx], prec: u32) -> Vec<Cplx> {
    let mut out = vec![
        Cplx {
            re: Float::new(prec),
            im: Float::new(prec),
        };
        a.len() + b.len() - 1
    ];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let re = Float::with_val(prec, &x.re * &y.re) - Float::with_val(prec, &x.im * &y.im);
            let im = Float::with_val(prec, &x.re * &y.im) + Float::with_val(prec, &x.im * &y.re);
            out[i + j].re += re;
            out[i + j].im += im;
        }
    }
    out
}

/// Exact coefficients of `sin^(2m)(pi u)` in `e^(2 pi i k u)`, `k = -m..=m`:
/// `4^-m (-1)^k C(2m, m - k)`.
fn sin_power_coefficients(m: u32) -> Vec<Rational> {
    let scale = Rational::from((Integer::from(1), Integer::from(1) << (2 * m)));
    (-(m as i64)..=m as i64)
        .map(|k| {
            let binom = Integer::from(Integer::binomial_u(2 * m, (m as i64 - k) as u32));
            let mut r = Rational::from(binom) * &scale;
            if k % 2 != 0 {
                r = -r;
            }
            r
        })
        .collect()
}

/// Builds the lift for `spec` at the precision of `ctx`.
pub fn build(spec: &MapSpec, ctx: &PrecisionContext) -> Result<TrigProductMap> {
    spec.validate(ctx)?;
    let prec = ctx.bits();
    let two_pi = ctx.pi() * 2u32;

    let mut product = vec![Cplx {
        re: ctx.one(),
        im: ctx.zero(),
    }];
    for cp in &spec.critical_points {
        let m = (cp.criticality - 1) / 2;
        let exact = sin_power_coefficients(m);
        let factor: Vec<Cplx> = exact
            .iter()
            .enumerate()
            .map(|(idx, r)| {
                let k = idx as i64 - m as i64;
                let mag = ctx.real(r);
                // phase e^(-2 pi i k c)
                let angle = Float::with_val(prec, &two_pi * cp.position.value()) * (-k);
                let mut sin = angle;
                let mut cos = Float::new(prec);
                sin.sin_cos_mut(&mut cos);
                Cplx {
                    re: Float::with_val(prec, &mag * &cos),
                    im: Float::with_val(prec, &mag * &sin),
                }
            })
            .collect();
        product = convolve(&product, &factor, prec);
    }
    let big_m = (product.len() - 1) / 2;
    let gamma0 = product[big_m].re.clone();
    if gamma0 <= 0 {
        return Err(Error::InvalidMapSpec("degenerate derivative product".into()));
    }
    let normalization = Float::with_val(prec, 1 / &gamma0);

    let mut harmonics = Vec::with_capacity(big_m);
    let mut lift_constant = ctx.zero();
    for k in 1..=big_m {
        let c = &product[big_m + k];
        let re = Float::with_val(prec, &c.re * &normalization);
        let im = Float::with_val(prec, &c.im * &normalization);
        let wk = Float::with_val(prec, &two_pi * k as u32);
        let wk2 = Float::with_val(prec, wk.square_ref());
        let lift_sin = Float::with_val(prec, &re * 2u32) / &wk;
        let lift_cos = Float::with_val(prec, &im * 2u32) / &wk;
        lift_constant -= &lift_cos;
        harmonics.push(Harmonic {
            d1_cos: Float::with_val(prec, &re * 2u32),
            d1_sin: Float::with_val(prec, &im * -2i32),
            d2_sin: Float::with_val(prec, &re * &wk) * -2i32,
            d2_cos: Float::with_val(prec, &im * &wk) * -2i32,
            d3_cos: Float::with_val(prec, &re * &wk2) * -2i32,
            d3_sin: Float::with_val(prec, &im * &wk2) * 2u32,
            lift_sin,
            lift_cos,
            re,
            im,
        });
    }

    Ok(TrigProductMap {
        shape: Arc::new(Shape {
            ctx: *ctx,
            critical_points: spec.critical_points.clone(),
            harmonics,
            lift_constant,
            normalization,
            two_pi,
            radii: OnceLock::new(),
        }),
        offset: spec.offset.clone(),
    })
}

/// Orbit derivative data: `factors[k] = Df(f^k x)` and
/// `products[k] = Df^k(x)` for `k = 0..j-1`.
#[derive(Clone, Debug)]
pub struct OrbitDerivatives {
    pub factors: Vec<Real>,
    pub products: Vec<Real>,
}

impl TrigProductMap {
    pub fn ctx(&self) -> PrecisionContext {
        self.shape.ctx
    }

    pub fn offset(&self) -> &Real {
        &self.offset
    }

    /// Same critical structure with a new offset; Fourier data is shared.
    pub fn with_offset(&self, offset: Real) -> Result<Self> {
        self.shape.ctx.check(&offset)?;
        Ok(Self {
            shape: Arc::clone(&self.shape),
            offset,
        })
    }

    pub fn spec(&self) -> MapSpec {
        MapSpec::new(self.shape.critical_points.clone(), self.offset.clone())
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.shape.critical_points
    }

    pub fn critical_count(&self) -> usize {
        self.shape.critical_points.len()
    }

    pub fn is_rigid(&self) -> bool {
        self.shape.critical_points.is_empty()
    }

    /// Base point used for combinatorics and partitions: `c_0`, or 0 for the
    /// rigid rotation.
    pub fn base_point(&self) -> CirclePoint {
        match self.shape.critical_points.first() {
            Some(cp) => cp.position.clone(),
            None => reduce_mod1(&self.shape.ctx.zero()).expect("zero is finite"),
        }
    }

    /// `Z` in `DF = Z prod sin^(d_i - 1)(pi (x - c_i))`.
    pub fn normalization(&self) -> &Real {
        &self.shape.normalization
    }

    /// Highest harmonic `M = sum (d_i - 1)/2`.
    pub fn harmonic_count(&self) -> usize {
        self.shape.harmonics.len()
    }

    /// `gamma_k` for `k = -M..=M` as `(re, im)` pairs.
    pub fn fourier(&self) -> Vec<(Real, Real)> {
        let ctx = self.shape.ctx;
        let mut out: Vec<(Real, Real)> = self
            .shape
            .harmonics
            .iter()
            .rev()
            .map(|h| (h.re.clone(), Float::with_val(ctx.bits(), -&h.im)))
            .collect();
        out.push((ctx.one(), ctx.zero()));
        out.extend(self.shape.harmonics.iter().map(|h| (h.re.clone(), h.im.clone())));
        out
    }

    /// CSV `k, re, im` of the derivative's Fourier coefficients.
    pub fn write_fourier_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "re", "im"])?;
        let m = self.harmonic_count() as i64;
        for (idx, (re, im)) in self.fourier().iter().enumerate() {
            w.write_record([
                (idx as i64 - m).to_string(),
                format_scalar(re),
                format_scalar(im),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `sin(k theta), cos(k theta)` for `k = 1..=M`, `theta = 2 pi y`.
    fn harmonics_at(&self, y: &Real) -> Vec<(Real, Real)> {
        let prec = self.shape.ctx.bits();
        let m = self.harmonic_count();
        let mut out = Vec::with_capacity(m);
        if m == 0 {
            return out;
        }
        let mut s1 = Float::with_val(prec, &self.shape.two_pi * y);
        let mut c1 = Float::new(prec);
        s1.sin_cos_mut(&mut c1);
        let two_c = Float::with_val(prec, &c1 * 2u32);
        out.push((s1, c1));
        let (mut s_prev, mut c_prev) = (Float::new(prec), Float::with_val(prec, 1));
        for k in 1..m {
            let (s_k, c_k) = (&out[k - 1].0, &out[k - 1].1);
            let s_next = Float::with_val(prec, &two_c * s_k) - &s_prev;
            let c_next = Float::with_val(prec, &two_c * c_k) - &c_prev;
            s_prev = s_k.clone();
            c_prev = c_k.clone();
            out.push((s_next, c_next));
        }
        out
    }

    fn split(&self, x: &Real) -> (Real, Real) {
        let prec = self.shape.ctx.bits();
        let k = Float::with_val(prec, x.floor_ref());
        let y = Float::with_val(prec, x - &k);
        (k, y)
    }

    /// Periodic part of the lift at `y`, plus `y`.
    fn lift_unit(&self, y: &Real) -> Real {
        let prec = self.shape.ctx.bits();
        let mut f = Float::with_val(prec, y + &self.offset);
        f += &self.shape.lift_constant;
        for (h, (s, c)) in self.shape.harmonics.iter().zip(self.harmonics_at(y)) {
            f += Float::with_val(prec, &h.lift_sin * &s);
            f += Float::with_val(prec, &h.lift_cos * &c);
        }
        f
    }

    /// `F(x)` on the real line.
    pub fn eval_lift(&self, x: &Real) -> Real {
        let (k, y) = self.split(x);
        self.lift_unit(&y) + k
    }

    /// `DF(x)`.
    pub fn eval_df(&self, x: &Real) -> Real {
        let prec = self.shape.ctx.bits();
        let (_, y) = self.split(x);
        let mut d = Float::with_val(prec, 1);
        for (h, (s, c)) in self.shape.harmonics.iter().zip(self.harmonics_at(&y)) {
            d += Float::with_val(prec, &h.d1_cos * &c);
            d += Float::with_val(prec, &h.d1_sin * &s);
        }
        d
    }

    /// `F, DF, D2F, D3F` at `x`, by term-wise differentiation in ascending
    /// harmonic order.
    pub fn eval_jet(&self, x: &Real) -> JetValue {
        let prec = self.shape.ctx.bits();
        let (k, y) = self.split(x);
        let mut f = Float::with_val(prec, &y + &self.offset);
        f += &self.shape.lift_constant;
        let mut d1 = Float::with_val(prec, 1);
        let mut d2 = Float::new(prec);
        let mut d3 = Float::new(prec);
        for (h, (s, c)) in self.shape.harmonics.iter().zip(self.harmonics_at(&y)) {
            f += Float::with_val(prec, &h.lift_sin * &s);
            f += Float::with_val(prec, &h.lift_cos * &c);
            d1 += Float::with_val(prec, &h.d1_cos * &c);
            d1 += Float::with_val(prec, &h.d1_sin * &s);
            d2 += Float::with_val(prec, &h.d2_sin * &s);
            d2 += Float::with_val(prec, &h.d2_cos * &c);
            d3 += Float::with_val(prec, &h.d3_cos * &c);
            d3 += Float::with_val(prec, &h.d3_sin * &s);
        }
        f += k;
        JetValue { f, d1, d2, d3 }
    }

    /// One step on the circle.
    pub fn step(&self, x: &CirclePoint) -> CirclePoint {
        reduce_mod1(&self.lift_unit(x.value())).expect("finite lift")
    }

    /// `f^j(x)` on the circle, reducing mod 1 after every step.
    pub fn iterate(&self, x: &CirclePoint, j: usize) -> CirclePoint {
        let mut p = x.clone();
        for _ in 0..j {
            p = self.step(&p);
        }
        p
    }

    /// `F^j(x)` on the lift, without reduction.
    pub fn iterate_lift(&self, x: &Real, j: usize) -> Real {
        let mut p = self.shape.ctx.convert(x);
        for _ in 0..j {
            p = self.eval_lift(&p);
        }
        p
    }

    /// Circle orbit `x, f(x), ..., f^(len-1)(x)`.
    pub fn orbit(&self, x: &CirclePoint, len: usize) -> Vec<CirclePoint> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(x.clone());
        while out.len() < len {
            let next = self.step(out.last().expect("non-empty"));
            out.push(next);
        }
        out
    }

    pub fn derivative_along_orbit(&self, x: &CirclePoint, j: usize) -> Result<OrbitDerivatives> {
        if j == 0 {
            return Err(Error::Precondition("orbit length j must be >= 1".into()));
        }
        let prec = self.shape.ctx.bits();
        let mut factors = Vec::with_capacity(j);
        let mut products = Vec::with_capacity(j);
        let mut p = x.clone();
        let mut running = Float::with_val(prec, 1);
        for _ in 0..j {
            let df = self.eval_df(p.value());
            products.push(running.clone());
            running *= &df;
            factors.push(df);
            p = self.step(&p);
        }
        Ok(OrbitDerivatives { factors, products })
    }

    /// `Sf(x)` from the jet.
    pub fn schwarzian(&self, x: &Real) -> Result<Real> {
        self.eval_jet(x).schwarzian()
    }

    /// `Sf(x) = N' - N^2/2` with the nonlinearity
    /// `N = (log DF)' = sum (d_i - 1) pi cot(pi (x - c_i))`.
    pub fn schwarzian_cot(&self, x: &Real) -> Result<Real> {
        let prec = self.shape.ctx.bits();
        let pi = self.shape.ctx.pi();
        let mut n = Float::new(prec);
        let mut dn = Float::new(prec);
        for cp in &self.shape.critical_points {
            let w = cp.criticality - 1;
            let mut s = Float::with_val(prec, x - cp.position.value()) * &pi;
            let mut c = Float::new(prec);
            s.sin_cos_mut(&mut c);
            if s.is_zero() {
                return Err(Error::Singular(format!(
                    "x = {} is a critical point",
                    format_scalar(x)
                )));
            }
            let cot = Float::with_val(prec, &c / &s);
            n += Float::with_val(prec, &cot * &pi) * w;
            let csc2 = Float::with_val(prec, s.square_ref()).recip();
            dn -= Float::with_val(prec, pi.square_ref()) * csc2 * w;
        }
        let half_sq = Float::with_val(prec, n.square_ref()) / 2u32;
        Ok(dn - half_sq)
    }

    /// Radius `r_i` of the critical neighborhood of each `c_i`: the largest
    /// radius (up to half the gap to the nearest other critical point) on
    /// whose sample grid `max g / min g < 3/2` for
    /// `g(t) = DF(c_i + t) / |t|^(d_i - 1)`.
    pub fn critical_radii(&self) -> &[Real] {
        self.shape.radii.get_or_init(|| {
            (0..self.critical_count())
                .map(|i| self.compute_radius(i))
                .collect()
        })
    }

    fn compute_radius(&self, i: usize) -> Real {
        let ctx = self.shape.ctx;
        let cps = &self.shape.critical_points;
        let mut cap = 0.5f64;
        for (j, other) in cps.iter().enumerate() {
            if j != i {
                let d = circle_distance(&cps[i].position, &other.position).to_f64();
                cap = cap.min(d / 2.0);
            }
        }
        let ok = |r: f64| self.power_law_bracket(i, r) < 1.5;
        let r = if ok(cap) {
            cap
        } else {
            let (mut lo, mut hi) = (0.0f64, cap);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        ctx.real(r)
    }

    /// `max g / min g` over the sample grid of radius `r` around `c_i`.
    pub fn power_law_bracket(&self, i: usize, r: f64) -> f64 {
        let ctx = self.shape.ctx;
        let cp = &self.shape.critical_points[i];
        let exponent = cp.criticality - 1;
        let mut ts: Vec<f64> = (1..=32).map(|j| r * j as f64 / 32.0).collect();
        ts.extend((6..=30).map(|j| r * (-(j as f64)).exp2()));
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for t in ts {
            for sign in [1.0, -1.0] {
                let tt = ctx.real(sign * t);
                let x = Float::with_val(ctx.bits(), cp.position.value() + &tt);
                let df = self.eval_df(&x);
                let denom = Float::with_val(ctx.bits(), tt.abs_ref()).pow(exponent);
                let g = (df / denom).to_f64();
                lo = lo.min(g);
                hi = hi.max(g);
            }
        }
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// Index of a critical point within `r_i` of `x`, if any.
    pub fn critical_neighborhood_of(&self, x: &CirclePoint) -> Option<usize> {
        let radii = self.critical_radii();
        self.shape
            .critical_points
            .iter()
            .zip(radii)
            .position(|(cp, r)| circle_distance(&cp.position, x) < *r)
    }
}

impl LiftMap for TrigProductMap {
    fn context(&self) -> PrecisionContext {
        self.shape.ctx
    }

    fn lift(&self, x: &Real) -> Real {
        self.eval_lift(x)
    }

    fn jet(&self, x: &Real) -> JetValue {
        self.eval_jet(x)
    }

    fn derivative(&self, x: &Real) -> Real {
        self.eval_df(x)
    }
}
