//! Lorentz (hyperboloid) model of hyperbolic space with curvature `-1/K`.
//!
//! Points live on the upper sheet
//! `{x ∈ R^{d+1} : <x, x>_L = -K, x_0 > 0}` where
//! `<x, y>_L = -x_0 y_0 + Σ_{i≥1} x_i y_i`. The Klein model is used only as a
//! chart for Einstein-midpoint aggregation.
//!
//! Everything here works on plain `f64`. The recorded (differentiable)
//! counterparts used during training live in [`diff`].

pub mod diff;

use crate::error::{Error, Result};

/// Relative tolerance for hyperboloid membership checks.
pub const MANIFOLD_TOL: f64 = 1e-9;
/// Below this tangent norm (or geodesic distance) the maps switch to their
/// Taylor / identity branches.
pub const EXP_TAYLOR_EPS: f64 = 1e-7;
/// Tolerance for exp/log and Klein/Lorentz round trips.
pub const ROUNDTRIP_TOL: f64 = 1e-6;

/// The constant `K > 0`; the space has sectional curvature `-1/K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k > 0.0 {
            Ok(Self(k))
        } else {
            Err(Error::Config(format!("curvature K must be positive and finite, got {k}")))
        }
    }

    /// `K = exp(log_k)`.
    pub fn from_log(log_k: f64) -> Result<Self> {
        Self::new(log_k.exp())
    }

    #[inline]
    pub fn k(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt_k(self) -> f64 {
        self.0.sqrt()
    }

    fn matches(self, other: Curvature) -> bool {
        (self.0 - other.0).abs() <= 1e-12 * self.0.max(other.0)
    }
}

/// A point on the hyperboloid `L^{d,K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzPoint {
    /// Validates the hyperboloid constraint and the upper-sheet condition.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Dimension { expected: 2, got: coords.len() });
        }
        if coords[0] <= 0.0 {
            return Err(Error::Domain("time-like coordinate must be positive".into()));
        }
        let p = Self { coords, curvature };
        let residual = p.residual();
        if residual > MANIFOLD_TOL * (curvature.k() + p.coords[0] * p.coords[0]) {
            return Err(Error::Domain(format!(
                "point is off the hyperboloid: |<x,x>_L + K| = {residual:e}"
            )));
        }
        Ok(p)
    }

    /// Builds the point whose spatial block is `spatial`, solving
    /// `x_0 = sqrt(K + |spatial|^2)` exactly.
    pub fn from_spatial(spatial: &[f64], curvature: Curvature) -> Self {
        let sq: f64 = spatial.iter().map(|v| v * v).sum();
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push((curvature.k() + sq).sqrt());
        coords.extend_from_slice(spatial);
        Self { coords, curvature }
    }

    /// Intrinsic dimension `d` (the ambient vector has length `d + 1`).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// `|<x,x>_L + K|`.
    pub fn residual(&self) -> f64 {
        (lorentz_norm_sq(&self.coords) + self.curvature.k()).abs()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: LorentzPoint,
    coords: Vec<f64>,
}

impl TangentVector {
    /// Validates `<v, base>_L = 0` up to [`MANIFOLD_TOL`] (relative).
    pub fn new(base: LorentzPoint, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(Error::Dimension { expected: base.coords.len(), got: coords.len() });
        }
        let dot = lorentz_inner_unchecked(&coords, &base.coords);
        let scale = euclid_norm(&coords) * euclid_norm(&base.coords);
        if dot.abs() > MANIFOLD_TOL * scale.max(1.0) {
            return Err(Error::Domain(format!("vector is not tangent at base: <v,x>_L = {dot:e}")));
        }
        Ok(Self { base, coords })
    }

    /// Projects `coords` onto the tangent space at `base` and wraps it.
    pub fn projected(base: LorentzPoint, mut coords: Vec<f64>) -> Result<Self> {
        if coords.len() != base.coords.len() {
            return Err(Error::Dimension { expected: base.coords.len(), got: coords.len() });
        }
        project_tangent(&base, &mut coords);
        Ok(Self { base, coords })
    }

    /// The zero vector at `base`.
    pub fn zero(base: LorentzPoint) -> Self {
        let n = base.coords.len();
        Self { base, coords: vec![0.0; n] }
    }

    /// Tangent vector `(0, spatial)` at the origin.
    pub fn at_origin(spatial: &[f64], curvature: Curvature) -> Self {
        let base = origin(spatial.len(), curvature);
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push(0.0);
        coords.extend_from_slice(spatial);
        Self { base, coords }
    }

    pub fn base(&self) -> &LorentzPoint {
        &self.base
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `||v||_L = sqrt(<v,v>_L)`, clamped at zero.
    pub fn norm(&self) -> f64 {
        lorentz_norm_sq(&self.coords).max(0.0).sqrt()
    }
}

/// A point in the Klein ball `{x ∈ R^d : |x|^2 < K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KleinPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl KleinPoint {
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        let sq: f64 = coords.iter().map(|v| v * v).sum();
        if sq >= curvature.k() {
            return Err(Error::Domain(format!(
                "Klein point outside the ball: |x|^2 = {sq} >= K = {}",
                curvature.k()
            )));
        }
        Ok(Self { coords, curvature })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    /// Lorentz factor `η = sqrt(K / (K - |x|^2))`.
    pub fn lorentz_factor(&self) -> f64 {
        let sq: f64 = self.coords.iter().map(|v| v * v).sum();
        (self.curvature.k() / (self.curvature.k() - sq)).sqrt()
    }
}

fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn lorentz_inner_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = -x[0] * y[0];
    for (a, b) in x[1..].iter().zip(&y[1..]) {
        acc += a * b;
    }
    acc
}

#[inline]
fn lorentz_norm_sq(x: &[f64]) -> f64 {
    lorentz_inner_unchecked(x, x)
}

fn project_tangent(base: &LorentzPoint, v: &mut [f64]) {
    let c = lorentz_inner_unchecked(v, &base.coords) / base.curvature.k();
    for (vi, xi) in v.iter_mut().zip(&base.coords) {
        *vi += c * xi;
    }
}

fn check_same_space(x: &LorentzPoint, y: &LorentzPoint) -> Result<()> {
    if x.coords.len() != y.coords.len() {
        return Err(Error::Dimension { expected: x.coords.len(), got: y.coords.len() });
    }
    if !x.curvature.matches(y.curvature) {
        return Err(Error::Config(format!(
            "curvature mismatch: {} vs {}",
            x.curvature.k(),
            y.curvature.k()
        )));
    }
    Ok(())
}

fn check_base(x: &LorentzPoint, v: &TangentVector) -> Result<()> {
    check_same_space(x, &v.base)?;
    let same = x
        .coords
        .iter()
        .zip(&v.base.coords)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
    if same {
        Ok(())
    } else {
        Err(Error::Contract("tangent vector is not based at the given point".into()))
    }
}

/// Lorentzian inner product `-x_0 y_0 + Σ x_i y_i`.
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::Dimension { expected: 2, got: x.len() });
    }
    Ok(lorentz_inner_unchecked(x, y))
}

/// The origin `(sqrt K, 0, ..., 0)` of `L^{d,K}`.
pub fn origin(d: usize, curvature: Curvature) -> LorentzPoint {
    let mut coords = vec![0.0; d + 1];
    coords[0] = curvature.sqrt_k();
    LorentzPoint { coords, curvature }
}

/// Geodesic distance `sqrt K · arcosh(-<x,y>_L / K)`, argument clamped to `>= 1`.
pub fn distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_same_space(x, y)?;
    let k = x.curvature.k();
    let arg = (-lorentz_inner_unchecked(&x.coords, &y.coords) / k).max(1.0);
    Ok(k.sqrt() * arg.acosh())
}

/// Exponential map at `x`. The time-like coordinate of the result is
/// re-solved from the spatial block.
pub fn exp_map(x: &LorentzPoint, v: &TangentVector) -> Result<LorentzPoint> {
    check_base(x, v)?;
    let k = x.curvature.k();
    let sk = k.sqrt();
    let vv = lorentz_norm_sq(&v.coords).max(0.0);
    let n = vv.sqrt();
    let spatial: Vec<f64> = if n < EXP_TAYLOR_EPS {
        (1..x.coords.len())
            .map(|i| x.coords[i] + v.coords[i] + vv * x.coords[i] / (2.0 * k))
            .collect()
    } else {
        let c = (n / sk).cosh();
        let s = sk * (n / sk).sinh() / n;
        (1..x.coords.len()).map(|i| c * x.coords[i] + s * v.coords[i]).collect()
    };
    Ok(LorentzPoint::from_spatial(&spatial, x.curvature))
}

/// Logarithmic map at `x`: the tangent vector at `x` pointing at `y` with
/// Lorentzian norm equal to the geodesic distance.
pub fn log_map(x: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    let dist = distance(x, y)?;
    if dist < EXP_TAYLOR_EPS {
        return Ok(TangentVector::zero(x.clone()));
    }
    let k = x.curvature.k();
    let xy = lorentz_inner_unchecked(&x.coords, &y.coords);
    let mut u: Vec<f64> = x.coords.iter().zip(&y.coords).map(|(a, b)| b + xy / k * a).collect();
    let n = lorentz_norm_sq(&u).max(0.0).sqrt();
    if n == 0.0 {
        return Ok(TangentVector::zero(x.clone()));
    }
    let scale = dist / n;
    u.iter_mut().for_each(|c| *c *= scale);
    project_tangent(x, &mut u);
    Ok(TangentVector { base: x.clone(), coords: u })
}

/// Parallel transport of `v ∈ T_x` along the geodesic from `x` to `y`.
pub fn parallel_transport(x: &LorentzPoint, y: &LorentzPoint, v: &TangentVector) -> Result<TangentVector> {
    check_base(x, v)?;
    check_same_space(x, y)?;
    let dist = distance(x, y)?;
    if dist < EXP_TAYLOR_EPS {
        return Ok(TangentVector { base: y.clone(), coords: v.coords.clone() });
    }
    let lxy = log_map(x, y)?;
    let lyx = log_map(y, x)?;
    let c = lorentz_inner_unchecked(&lxy.coords, &v.coords) / (dist * dist);
    let mut out: Vec<f64> = v
        .coords
        .iter()
        .zip(lxy.coords.iter().zip(&lyx.coords))
        .map(|(vi, (a, b))| vi - c * (a + b))
        .collect();
    project_tangent(y, &mut out);
    Ok(TangentVector { base: y.clone(), coords: out })
}

/// Embeds `x ∈ R^d` as `(0, x) ∈ T_O` and maps it onto the hyperboloid.
pub fn lift_euclidean(x: &[f64], curvature: Curvature) -> LorentzPoint {
    let o = origin(x.len(), curvature);
    let v = TangentVector::at_origin(x, curvature);
    exp_map(&o, &v).expect("origin tangent vector is based at the origin")
}

/// Spatial block of `log_O(x)`.
pub fn log_origin_spatial(x: &LorentzPoint) -> Vec<f64> {
    let o = origin(x.dim(), x.curvature);
    let v = log_map(&o, x).expect("points share a space");
    v.coords[1..].to_vec()
}

/// Klein coordinates `sqrt K · y_i / y_0`.
pub fn lorentz_to_klein(y: &LorentzPoint) -> KleinPoint {
    let sk = y.curvature.sqrt_k();
    let coords = y.coords[1..].iter().map(|v| sk * v / y.coords[0]).collect();
    KleinPoint { coords, curvature: y.curvature }
}

/// Inverse of [`lorentz_to_klein`]: `η(x) · (sqrt K, x)`.
pub fn klein_to_lorentz(x: &KleinPoint) -> Result<LorentzPoint> {
    let k = x.curvature.k();
    let sq: f64 = x.coords.iter().map(|v| v * v).sum();
    if sq >= k {
        return Err(Error::Domain(format!("|x|^2 = {sq} must be below K = {k}")));
    }
    let eta = (k / (k - sq)).sqrt();
    let spatial: Vec<f64> = x.coords.iter().map(|v| eta * v).collect();
    Ok(LorentzPoint::from_spatial(&spatial, x.curvature))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COSH1: f64 = 1.543_080_634_815_243_8;
    const SINH1: f64 = 1.175_201_193_643_801_4;

    fn k1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    fn p(coords: &[f64], k: f64) -> LorentzPoint {
        LorentzPoint::new(coords.to_vec(), Curvature::new(k).unwrap()).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(lorentz_inner(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(lorentz_inner(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let v = lorentz_inner(&[1f64.cosh(), 1f64.sinh(), 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((v + 1.543_080_6).abs() < 1e-7);
        assert!(matches!(lorentz_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn origin_examples() {
        assert_eq!(origin(2, k1()).coords(), &[1.0, 0.0, 0.0]);
        let o = origin(2, Curvature::new(4.0).unwrap());
        assert_eq!(o.coords(), &[2.0, 0.0, 0.0]);
        assert_eq!(lorentz_inner(o.coords(), o.coords()).unwrap(), -4.0);
    }

    #[test]
    fn curvature_must_be_positive() {
        assert!(Curvature::new(0.0).is_err());
        assert!(Curvature::new(-1.0).is_err());
        assert!(Curvature::new(f64::NAN).is_err());
    }

    #[test]
    fn distance_examples() {
        let x = p(&[1.0, 0.0, 0.0], 1.0);
        let y = p(&[COSH1, SINH1, 0.0], 1.0);
        assert_eq!(distance(&x, &x).unwrap(), 0.0);
        assert!((distance(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(distance(&x, &y).unwrap(), distance(&y, &x).unwrap());
        let z = p(&[2.0, 0.0, 0.0], 4.0);
        assert!(matches!(distance(&x, &z), Err(Error::Config(_))));
    }

    #[test]
    fn exp_map_examples() {
        let x = origin(2, k1());
        let zero = TangentVector::zero(x.clone());
        assert_eq!(exp_map(&x, &zero).unwrap(), x);
        let v = TangentVector::new(x.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        let y = exp_map(&x, &v).unwrap();
        assert!((y.coords()[0] - 1.543_080_6).abs() < 1e-7);
        assert!((y.coords()[1] - 1.175_201_2).abs() < 1e-7);
        assert_eq!(y.coords()[2], 0.0);
    }

    #[test]
    fn exp_map_rejects_foreign_base() {
        let x = origin(2, k1());
        let y = p(&[COSH1, SINH1, 0.0], 1.0);
        let v = TangentVector::zero(y);
        assert!(matches!(exp_map(&x, &v), Err(Error::Contract(_))));
    }

    #[test]
    fn log_map_examples() {
        let x = origin(2, k1());
        let y = p(&[COSH1, SINH1, 0.0], 1.0);
        let v = log_map(&x, &y).unwrap();
        assert!(v.coords()[0].abs() < 1e-12);
        assert!((v.coords()[1] - 1.0).abs() < 1e-12);
        assert!(v.coords()[2].abs() < 1e-12);
        let z = log_map(&y, &y).unwrap();
        assert!(z.coords().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn transport_identity_when_points_coincide() {
        let y = p(&[COSH1, SINH1, 0.0], 1.0);
        let v = TangentVector::projected(y.clone(), vec![0.0, 0.3, -0.2]).unwrap();
        let w = parallel_transport(&y, &y, &v).unwrap();
        assert_eq!(w.coords(), v.coords());
    }

    #[test]
    fn lift_examples() {
        let o = lift_euclidean(&[0.0, 0.0], k1());
        assert_eq!(o, origin(2, k1()));
        let y = lift_euclidean(&[1.0, 0.0], k1());
        assert!((y.coords()[0] - 1.543_080_6).abs() < 1e-7);
        assert!((y.coords()[1] - 1.175_201_2).abs() < 1e-7);
    }

    #[test]
    fn klein_examples() {
        let o = origin(2, k1());
        assert_eq!(lorentz_to_klein(&o).coords(), &[0.0, 0.0]);
        let y = p(&[COSH1, SINH1, 0.0], 1.0);
        let kp = lorentz_to_klein(&y);
        assert!((kp.coords()[0] - 0.761_594_2).abs() < 1e-7);
        let x = KleinPoint::new(vec![0.5, 0.0], k1()).unwrap();
        assert!((x.lorentz_factor() - 1.154_700_5).abs() < 1e-7);
        let l = klein_to_lorentz(&x).unwrap();
        assert!((l.coords()[0] - 1.154_700_5).abs() < 1e-7);
        assert!((l.coords()[1] - 0.577_350_3).abs() < 1e-7);
        let zero = KleinPoint::new(vec![0.0, 0.0], k1()).unwrap();
        assert_eq!(klein_to_lorentz(&zero).unwrap(), o);
    }

    #[test]
    fn klein_domain_error() {
        assert!(KleinPoint::new(vec![1.0, 0.0], k1()).is_err());
        let bad = KleinPoint { coords: vec![1.0, 0.5], curvature: k1() };
        assert!(matches!(klein_to_lorentz(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn point_validation() {
        assert!(LorentzPoint::new(vec![1.0, 0.5, 0.0], k1()).is_err());
        assert!(LorentzPoint::new(vec![-1.0, 0.0, 0.0], k1()).is_err());
        let t = TangentVector::new(origin(2, k1()), vec![1.0, 0.0, 0.0]);
        assert!(t.is_err());
    }
}
