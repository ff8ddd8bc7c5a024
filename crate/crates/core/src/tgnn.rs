//! Temporal graph attention layers in the Lorentz model (HypTGA) and their
//! Euclidean mirror, stacked into multi-hop temporal encoders.
//!
//! One layer maps the previous representations of a node `i` and its
//! time-aware neighbors `j` to
//!
//! `h̃_j = φ_L(|t - t_j|) ⊕ (W ⊗ h_j)`, `α_ij = sigmoid(γ <h̃_i, h̃_j>_L + c)`,
//! `h_i(t) = Agg({α_ij, h̃_j})` over `j ∈ {i} ∪ N_{i,t}`,
//!
//! where the target enters as a self-loop with `t̂ = 0` and `Agg` is the
//! Einstein midpoint.

use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{sigmoid, Tape, Var};
use crate::data::{TemporalGraph, TimeAwareNeighborhood};
use crate::error::{Error, Result};
use crate::manifold::diff::Geometry;
use crate::manifold::{self, Curvature, KleinPoint, LorentzPoint};
use crate::time_encoding::{self, TimeEncodingParams};

pub const DEFAULT_MAX_NEIGHBORS: usize = 20;
pub const DEFAULT_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    Hyperbolic,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Row-major `d × d`.
    pub weight: Vec<f64>,
    pub attn_gamma: f64,
    pub attn_bias: f64,
    pub time_params: TimeEncodingParams,
}

impl LayerParams {
    pub fn new(weight: Vec<f64>, attn_gamma: f64, attn_bias: f64, time_params: TimeEncodingParams) -> Result<Self> {
        let d = time_params.dim();
        if weight.len() != d * d {
            return Err(Error::Dimension { expected: d * d, got: weight.len() });
        }
        if weight.iter().any(|w| !w.is_finite()) || !attn_gamma.is_finite() || !attn_bias.is_finite() {
            return Err(Error::Domain("layer parameters must be finite".into()));
        }
        Ok(Self { weight, attn_gamma, attn_bias, time_params })
    }

    /// `W ~ U(-1/√d, 1/√d)`, `γ = 1`, `c = 0`.
    pub fn init<R: Rng + ?Sized>(time_params: TimeEncodingParams, rng: &mut R) -> Self {
        let d = time_params.dim();
        let weight = uniform_init(d * d, d, rng);
        Self { weight, attn_gamma: 1.0, attn_bias: 0.0, time_params }
    }

    pub fn dim(&self) -> usize {
        self.time_params.dim()
    }
}

fn uniform_init<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<f64> {
    let a = 1.0 / (d as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

fn check_dim(w: &[f64], d: usize) -> Result<()> {
    if w.len() != d * d {
        return Err(Error::Dimension { expected: d * d, got: w.len() });
    }
    Ok(())
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks(x.len()).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `W ⊗ x = exp_O(W · log_O(x))`, with `W` acting on the spatial block.
pub fn hyperbolic_linear(w: &[f64], x: &LorentzPoint) -> Result<LorentzPoint> {
    check_dim(w, x.dim())?;
    let u = manifold::log_origin_spatial(x);
    Ok(manifold::lift_euclidean(&matvec(w, &u), x.curvature()))
}

/// Einstein midpoint through the Klein chart:
/// `Σ_i [α_i η_i / Σ_l α_l η_l] · x_i` in Klein coordinates.
pub fn einstein_midpoint(weights: &[f64], points: &[LorentzPoint]) -> Result<LorentzPoint> {
    let first = points.first().ok_or_else(|| Error::Contract("midpoint of an empty set".into()))?;
    if weights.len() != points.len() {
        return Err(Error::Dimension { expected: points.len(), got: weights.len() });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Domain(format!("midpoint weights must be positive, got {w}")));
    }
    let c = first.curvature();
    let mut acc = vec![0.0; first.dim()];
    let mut total = 0.0;
    for (w, p) in weights.iter().zip(points) {
        if p.dim() != first.dim() {
            return Err(Error::Dimension { expected: first.dim(), got: p.dim() });
        }
        let k = manifold::lorentz_to_klein(p);
        let a = w * k.lorentz_factor();
        total += a;
        for (s, v) in acc.iter_mut().zip(k.coords()) {
            *s += a * v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= total);
    manifold::klein_to_lorentz(&KleinPoint::new(acc, c)?)
}

/// `x ⊕ y`: the equal-weight Einstein midpoint.
pub fn weighted_addition(x: &LorentzPoint, y: &LorentzPoint) -> Result<LorentzPoint> {
    einstein_midpoint(&[0.5, 0.5], &[x.clone(), y.clone()])
}

/// `h̃_j = φ_L(t̂) ⊕ (W ⊗ h_j)`.
pub fn time_aware_representation(h: &LorentzPoint, t_hat: f64, p: &LayerParams) -> Result<LorentzPoint> {
    let wh = hyperbolic_linear(&p.weight, h)?;
    let enc = time_encoding::encode_hyperbolic(t_hat, &p.time_params);
    weighted_addition(&enc, &wh)
}

/// `sigmoid(γ <h_i, h_j>_L + c)`.
pub fn attention_weight(h_i: &LorentzPoint, h_j: &LorentzPoint, p: &LayerParams) -> Result<f64> {
    let ip = manifold::lorentz_inner(h_i.coords(), h_j.coords())?;
    Ok(sigmoid(p.attn_gamma * ip + p.attn_bias))
}

/// One HypTGA layer for `nbhd.target` with inputs `reps` indexed by node.
pub fn hyptga_forward(reps: &[LorentzPoint], nbhd: &TimeAwareNeighborhood, p: &LayerParams) -> Result<LorentzPoint> {
    let get = |n: usize| {
        reps.get(n).ok_or_else(|| Error::Input(format!("no representation for node {n}")))
    };
    let target = time_aware_representation(get(nbhd.target)?, 0.0, p)?;
    let mut points = vec![target.clone()];
    let mut weights = vec![attention_weight(&target, &target, p)?];
    for &(j, tj) in &nbhd.neighbors {
        let h = time_aware_representation(get(j)?, (nbhd.query_time - tj).abs(), p)?;
        weights.push(attention_weight(&target, &h, p)?);
        points.push(h);
    }
    einstein_midpoint(&weights, &points)
}

/// All parameters of one temporal encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TgnnParams {
    pub kind: GeometryKind,
    /// Row-major `d × f` input map applied in the tangent space at the origin.
    pub input: Vec<f64>,
    pub n_features: usize,
    pub layers: Vec<LayerParams>,
}

impl TgnnParams {
    /// Fresh parameters for an `n_layers`-deep encoder over unit-rescaled time.
    pub fn init<R: Rng + ?Sized>(
        kind: GeometryKind,
        d: usize,
        n_features: usize,
        n_layers: usize,
        curvature: Curvature,
        rng: &mut R,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::Config("an encoder needs at least one layer".into()));
        }
        if n_features == 0 {
            return Err(Error::Config("nodes need at least one feature".into()));
        }
        let input = uniform_init(d * n_features, d, rng);
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tp = TimeEncodingParams::new(d, curvature, 1.0)?;
            layers.push(LayerParams::init(tp, rng));
        }
        Ok(Self { kind, input, n_features, layers })
    }

    pub fn dim(&self) -> usize {
        self.layers[0].dim()
    }

    /// Named parameter blocks in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("input".into(), &self.input)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &l.weight));
            out.push((format!("layer{i}.gamma"), std::slice::from_ref(&l.attn_gamma)));
            out.push((format!("layer{i}.bias"), std::slice::from_ref(&l.attn_bias)));
            out.push((format!("layer{i}.omega"), &l.time_params.omegas));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![("input".into(), &mut self.input)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weight"), &mut l.weight));
            out.push((format!("layer{i}.gamma"), std::slice::from_mut(&mut l.attn_gamma)));
            out.push((format!("layer{i}.bias"), std::slice::from_mut(&mut l.attn_bias)));
            out.push((format!("layer{i}.omega"), &mut l.time_params.omegas));
        }
        out
    }

    /// Places the parameters on `tape`, as leaves or as constants.
    pub fn record<'t>(&self, tape: &'t Tape, trainable: bool) -> TgnnVars<'t> {
        let leaf = |v: &[f64]| if trainable { tape.var(v) } else { tape.constant(v) };
        TgnnVars {
            kind: self.kind,
            d: self.dim(),
            n_features: self.n_features,
            input: leaf(&self.input),
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    weight: leaf(&l.weight),
                    gamma: leaf(&[l.attn_gamma]),
                    bias: leaf(&[l.attn_bias]),
                    omegas: leaf(&l.time_params.omegas),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars<'t> {
    pub weight: Var<'t>,
    pub gamma: Var<'t>,
    pub bias: Var<'t>,
    pub omegas: Var<'t>,
}

/// Recorded encoder parameters.
#[derive(Debug, Clone)]
pub struct TgnnVars<'t> {
    pub kind: GeometryKind,
    pub d: usize,
    pub n_features: usize,
    pub input: Var<'t>,
    pub layers: Vec<LayerVars<'t>>,
}

impl<'t> TgnnVars<'t> {
    /// Leaves in the order of [`TgnnParams::tensors`].
    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.input];
        for l in &self.layers {
            out.extend([l.weight, l.gamma, l.bias, l.omegas]);
        }
        out
    }
}

/// Recorded `W ⊗ h` (hyperbolic) or `W h` (Euclidean).
pub fn linear_diff<'t>(geo: &Geometry<'t>, kind: GeometryKind, w: Var<'t>, h: Var<'t>) -> Var<'t> {
    match kind {
        GeometryKind::Hyperbolic => {
            let u = geo.log_origin(h);
            let d = u.len();
            geo.exp_origin(w.matvec(d, d, u))
        }
        GeometryKind::Euclidean => {
            let d = h.len();
            w.matvec(d, d, h)
        }
    }
}

/// Recorded `h̃ = φ(t̂) ⊕ (W ⊗ h)` with `⊕ = +` in the Euclidean case.
pub fn combine_diff<'t>(geo: &Geometry<'t>, kind: GeometryKind, layer: &LayerVars<'t>, h: Var<'t>, t_hat: f64) -> Var<'t> {
    combine_linear(geo, kind, layer, linear_diff(geo, kind, layer.weight, h), t_hat)
}

/// [`combine_diff`] for an already transformed `W ⊗ h`.
fn combine_linear<'t>(geo: &Geometry<'t>, kind: GeometryKind, layer: &LayerVars<'t>, wh: Var<'t>, t_hat: f64) -> Var<'t> {
    match kind {
        GeometryKind::Hyperbolic => {
            geo.weighted_addition(time_encoding::encode_hyperbolic_diff(geo, layer.omegas, t_hat), wh)
        }
        GeometryKind::Euclidean => time_encoding::encode_euclidean_diff(layer.omegas, t_hat) + wh,
    }
}

/// Recorded attention weight.
pub fn attention_diff<'t>(kind: GeometryKind, layer: &LayerVars<'t>, h_i: Var<'t>, h_j: Var<'t>) -> Var<'t> {
    let ip = match kind {
        GeometryKind::Hyperbolic => h_i.lorentz_inner(h_j),
        GeometryKind::Euclidean => h_i.dot(h_j),
    };
    (layer.gamma * ip + layer.bias).sigmoid()
}

/// Recorded aggregation: Einstein midpoint, or the self-normalised
/// weighted mean in the Euclidean case.
pub fn aggregate_diff<'t>(geo: &Geometry<'t>, kind: GeometryKind, weights: &[Var<'t>], points: &[Var<'t>]) -> Var<'t> {
    match kind {
        GeometryKind::Hyperbolic => geo.einstein_midpoint(weights, points),
        GeometryKind::Euclidean => {
            let mut s = points[0] * weights[0];
            let mut total = weights[0];
            for (w, p) in weights.iter().zip(points).skip(1) {
                s = s + *p * *w;
                total = total + *w;
            }
            s / total
        }
    }
}

/// One recorded attention layer. `neighbors` holds `(h_j, t̂_j)`.
pub fn layer_diff<'t>(
    geo: &Geometry<'t>,
    kind: GeometryKind,
    layer: &LayerVars<'t>,
    target: Var<'t>,
    neighbors: &[(Var<'t>, f64)],
) -> Var<'t> {
    let lin = |h| linear_diff(geo, kind, layer.weight, h);
    let nbs: Vec<_> = neighbors.iter().map(|&(h, t)| (lin(h), t)).collect();
    layer_from_linear(geo, kind, layer, lin(target), &nbs)
}

/// [`layer_diff`] with inputs already passed through `W ⊗ ·`.
fn layer_from_linear<'t>(
    geo: &Geometry<'t>,
    kind: GeometryKind,
    layer: &LayerVars<'t>,
    target: Var<'t>,
    neighbors: &[(Var<'t>, f64)],
) -> Var<'t> {
    let hi = combine_linear(geo, kind, layer, target, 0.0);
    let mut points = vec![hi];
    let mut weights = vec![attention_diff(kind, layer, hi, hi)];
    for &(wh, t_hat) in neighbors {
        let hj = combine_linear(geo, kind, layer, wh, t_hat);
        weights.push(attention_diff(kind, layer, hi, hj));
        points.push(hj);
    }
    aggregate_diff(geo, kind, &weights, &points)
}

/// Stacked encoder evaluated on a tape, memoising every `(layer, node,
/// time)` representation it builds.
pub struct Encoder<'a, 't> {
    graph: &'a TemporalGraph,
    geo: Geometry<'t>,
    vars: &'a TgnnVars<'t>,
    max_neighbors: usize,
    cache: HashMap<(usize, usize, u64), Var<'t>>,
    /// `W_ℓ ⊗ h` keyed like `cache` by the layer that consumes it.
    linear: HashMap<(usize, usize, u64), Var<'t>>,
}

impl<'a, 't> Encoder<'a, 't> {
    pub fn new(graph: &'a TemporalGraph, geo: Geometry<'t>, vars: &'a TgnnVars<'t>, max_neighbors: usize) -> Result<Self> {
        if vars.n_features != graph.n_features() {
            return Err(Error::Dimension { expected: vars.n_features, got: graph.n_features() });
        }
        Ok(Self { graph, geo, vars, max_neighbors, cache: HashMap::new(), linear: HashMap::new() })
    }

    /// Final-layer representation of `node` at time `t`.
    pub fn represent(&mut self, node: usize, t: f64) -> Result<Var<'t>> {
        self.graph.check_node(node)?;
        self.rep(self.vars.layers.len(), node, t)
    }

    fn input(&mut self, node: usize) -> Var<'t> {
        if let Some(v) = self.cache.get(&(0, node, 0)) {
            return *v;
        }
        let tape = self.geo.tape();
        let x = tape.constant(self.graph.feature(node));
        let u = self.vars.input.matvec(self.vars.d, self.vars.n_features, x);
        let h = match self.vars.kind {
            GeometryKind::Hyperbolic => self.geo.exp_origin(u),
            GeometryKind::Euclidean => u,
        };
        self.cache.insert((0, node, 0), h);
        h
    }

    /// `W_layer ⊗ h_{layer-1}(node, t)`.
    fn transformed(&mut self, layer: usize, node: usize, t: f64) -> Result<Var<'t>> {
        let key = (layer, node, if layer == 1 { 0 } else { t.to_bits() });
        if let Some(v) = self.linear.get(&key) {
            return Ok(*v);
        }
        let h = self.rep(layer - 1, node, t)?;
        let out = linear_diff(&self.geo, self.vars.kind, self.vars.layers[layer - 1].weight, h);
        self.linear.insert(key, out);
        Ok(out)
    }

    fn rep(&mut self, layer: usize, node: usize, t: f64) -> Result<Var<'t>> {
        if layer == 0 {
            return Ok(self.input(node));
        }
        let key = (layer, node, t.to_bits());
        if let Some(v) = self.cache.get(&key) {
            return Ok(*v);
        }
        let nbhd = self.graph.time_aware_neighbors(node, t, self.max_neighbors)?;
        let target = self.transformed(layer, node, t)?;
        let mut neighbors = Vec::with_capacity(nbhd.neighbors.len());
        for &(j, tj) in &nbhd.neighbors {
            neighbors.push((self.transformed(layer, j, tj)?, (t - tj).abs()));
        }
        let lv = self.vars.layers[layer - 1];
        let out = layer_from_linear(&self.geo, self.vars.kind, &lv, target, &neighbors);
        self.cache.insert(key, out);
        Ok(out)
    }
}

/// An encoder output.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Lorentz(LorentzPoint),
    Euclidean(Vec<f64>),
}

impl Representation {
    pub fn coords(&self) -> &[f64] {
        match self {
            Self::Lorentz(p) => p.coords(),
            Self::Euclidean(v) => v,
        }
    }
}

/// Evaluates the stacked encoder for each `(node, time)` query.
pub fn tgnn_forward(
    graph: &TemporalGraph,
    queries: &[(usize, f64)],
    params: &TgnnParams,
    curvature: Curvature,
    max_neighbors: usize,
) -> Result<Vec<Representation>> {
    let tape = Tape::new();
    let geo = Geometry::constant(&tape, curvature);
    let vars = params.record(&tape, false);
    let mut enc = Encoder::new(graph, geo, &vars, max_neighbors)?;
    queries
        .iter()
        .map(|&(node, t)| {
            let v = enc.represent(node, t)?.value();
            Ok(match params.kind {
                GeometryKind::Hyperbolic => Representation::Lorentz(LorentzPoint::new(v, curvature)?),
                GeometryKind::Euclidean => Representation::Euclidean(v),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c1() -> Curvature {
        Curvature::new(1.0).unwrap()
    }

    fn identity(d: usize) -> Vec<f64> {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        w
    }

    fn point(spatial: &[f64], c: Curvature) -> LorentzPoint {
        LorentzPoint::from_spatial(spatial, c)
    }

    fn layer(d: usize, c: Curvature, seed: u64) -> LayerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerParams::init(TimeEncodingParams::new(d, c, 1.0).unwrap(), &mut rng)
    }

    fn close(a: &LorentzPoint, b: &LorentzPoint, tol: f64) -> bool {
        a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_examples() {
        let c = Curvature::new(0.7).unwrap();
        let x = point(&[0.3, -0.8, 0.2], c);
        assert!(close(&hyperbolic_linear(&identity(3), &x).unwrap(), &x, 1e-6));
        let o = hyperbolic_linear(&[0.0; 9], &x).unwrap();
        assert!(close(&o, &manifold::origin(3, c), 1e-15));
        let w2: Vec<f64> = identity(3).iter().map(|v| 2.0 * v).collect();
        let y = hyperbolic_linear(&w2, &x).unwrap();
        let org = manifold::origin(3, c);
        let r = manifold::distance(&org, &x).unwrap();
        assert!((manifold::distance(&org, &y).unwrap() - 2.0 * r).abs() < 1e-9);
        assert!(matches!(hyperbolic_linear(&[1.0; 4], &x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn addition_examples() {
        let c = c1();
        let x = point(&[0.4, 0.1], c);
        assert!(close(&weighted_addition(&x, &x).unwrap(), &x, 1e-12));
        let y = point(&[-0.4, -0.1], c);
        assert!(close(&weighted_addition(&x, &y).unwrap(), &manifold::origin(2, c), 1e-12));
        let z = point(&[1.3, -0.2], c);
        let a = weighted_addition(&x, &z).unwrap();
        let b = weighted_addition(&z, &x).unwrap();
        assert!(close(&a, &b, 1e-10));
    }

    #[test]
    fn midpoint_examples() {
        let c = c1();
        let x = point(&[0.9, 0.5, -0.3], c);
        assert!(close(&einstein_midpoint(&[1.0], &[x.clone()]).unwrap(), &x, 1e-12));

        let pts = vec![x.clone(), point(&[-1.0, 0.2, 0.0], c), point(&[0.1, 2.0, 1.0], c)];
        let w = [0.2, 0.7, 0.4];
        let a = einstein_midpoint(&w, &pts).unwrap();
        let w5: Vec<f64> = w.iter().map(|v| v * 5.0).collect();
        let b = einstein_midpoint(&w5, &pts).unwrap();
        assert!(close(&a, &b, 1e-12));
        assert!(a.residual() < 1e-9);

        let p = manifold::klein_to_lorentz(&KleinPoint::new(vec![0.5, 0.0], c).unwrap()).unwrap();
        let q = manifold::klein_to_lorentz(&KleinPoint::new(vec![-0.5, 0.0], c).unwrap()).unwrap();
        assert!(close(&einstein_midpoint(&[1.0, 1.0], &[p, q]).unwrap(), &manifold::origin(2, c), 1e-12));

        assert!(matches!(einstein_midpoint(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(einstein_midpoint(&[0.0], &[x.clone()]), Err(Error::Domain(_))));
        assert!(matches!(einstein_midpoint(&[-1.0], &[x]), Err(Error::Domain(_))));
    }

    #[test]
    fn recorded_midpoint_matches_klein_route() {
        let c = Curvature::new(2.5).unwrap();
        let pts = vec![point(&[0.9, 0.5], c), point(&[-1.0, 0.2], c), point(&[0.1, 3.0], c)];
        let w = [0.2, 0.7, 0.4];
        let expect = einstein_midpoint(&w, &pts).unwrap();
        let tape = Tape::new();
        let geo = Geometry::constant(&tape, c);
        let wv: Vec<_> = w.iter().map(|v| tape.scalar(*v)).collect();
        let pv: Vec<_> = pts.iter().map(|p| tape.constant(p.coords())).collect();
        let got = geo.einstein_midpoint(&wv, &pv).value();
        for (a, b) in got.iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn time_aware_representation_examples() {
        let c = c1();
        let mut p = layer(4, c, 3);
        let h = point(&[0.3, 0.2, -0.5, 0.1], c);
        let out = time_aware_representation(&h, 0.3, &p).unwrap();
        assert!((manifold::lorentz_inner(out.coords(), out.coords()).unwrap() + 1.0).abs() < 1e-9);

        p.weight = vec![0.0; 16];
        let expect = weighted_addition(
            &time_encoding::encode_hyperbolic(0.3, &p.time_params),
            &manifold::origin(4, c),
        )
        .unwrap();
        assert!(close(&time_aware_representation(&h, 0.3, &p).unwrap(), &expect, 1e-12));

        let p = layer(4, c, 3);
        let a = time_aware_representation(&h, 0.0, &p).unwrap();
        let b = time_aware_representation(&h, 0.5, &p).unwrap();
        assert!(manifold::distance(&a, &b).unwrap() > 1e-3);
    }

    #[test]
    fn attention_examples() {
        let c = c1();
        let mut p = layer(2, c, 1);
        let h = point(&[0.6, -0.2], c);
        let g = point(&[-1.5, 0.9], c);
        p.attn_gamma = 0.0;
        assert_eq!(attention_weight(&h, &g, &p).unwrap(), 0.5);
        p.attn_gamma = 1.0;
        assert!((attention_weight(&h, &h, &p).unwrap() - 0.268_941_4).abs() < 1e-7);
        p.attn_gamma = 40.0;
        let a = attention_weight(&h, &g, &p).unwrap();
        assert!(a > 0.0 && a < 1.0);
    }

    fn toy_graph() -> TemporalGraph {
        let raw = vec![(0, 1, 0.0), (1, 2, 1.0), (0, 2, 2.0), (2, 3, 3.0), (0, 3, 4.0), (1, 3, 5.0), (0, 1, 6.0)];
        TemporalGraph::from_raw(5, raw, None, FeatureSource::Identity).unwrap()
    }

    #[test]
    fn hyptga_examples() {
        let c = c1();
        let p = layer(4, c, 9);
        let reps: Vec<LorentzPoint> = (0..5)
            .map(|i| point(&[0.1 * i as f64, -0.2, 0.3, 0.05 * i as f64], c))
            .collect();

        let lonely = TimeAwareNeighborhood::new(4, 0.5, vec![]).unwrap();
        let out = hyptga_forward(&reps, &lonely, &p).unwrap();
        assert!(close(&out, &time_aware_representation(&reps[4], 0.0, &p).unwrap(), 1e-12));

        let self_copies = TimeAwareNeighborhood::new(2, 0.5, vec![]).unwrap();
        let mut nb = self_copies.clone();
        nb.neighbors = vec![(2, 0.5), (2, 0.5)];
        let a = hyptga_forward(&reps, &self_copies, &p).unwrap();
        let b = hyptga_forward(&reps, &nb, &p).unwrap();
        assert!(close(&a, &b, 1e-12));

        let nbhd = TimeAwareNeighborhood::new(0, 0.9, vec![(1, 0.1), (2, 0.4), (3, 0.7)]).unwrap();
        let mut perm = nbhd.clone();
        perm.neighbors = vec![(3, 0.7), (1, 0.1), (2, 0.4)];
        let a = hyptga_forward(&reps, &nbhd, &p).unwrap();
        let b = hyptga_forward(&reps, &perm, &p).unwrap();
        assert!(close(&a, &b, 1e-10));
    }

    #[test]
    fn recorded_layer_matches_plain_layer() {
        let c = Curvature::new(0.6).unwrap();
        let p = layer(4, c, 2);
        let reps: Vec<LorentzPoint> = (0..4)
            .map(|i| point(&[0.2 * i as f64, -0.3, 0.1, 0.5], c))
            .collect();
        let nbhd = TimeAwareNeighborhood::new(0, 0.8, vec![(1, 0.1), (3, 0.5)]).unwrap();
        let expect = hyptga_forward(&reps, &nbhd, &p).unwrap();

        let tape = Tape::new();
        let geo = Geometry::constant(&tape, c);
        let lv = LayerVars {
            weight: tape.constant(&p.weight),
            gamma: tape.scalar(p.attn_gamma),
            bias: tape.scalar(p.attn_bias),
            omegas: tape.constant(&p.time_params.omegas),
        };
        let target = tape.constant(reps[0].coords());
        let nbs: Vec<_> = nbhd
            .neighbors
            .iter()
            .map(|&(j, tj)| (tape.constant(reps[j].coords()), 0.8 - tj))
            .collect();
        let got = layer_diff(&geo, GeometryKind::Hyperbolic, &lv, target, &nbs).value();
        for (a, b) in got.iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    fn params(kind: GeometryKind, g: &TemporalGraph, layers: usize, seed: u64) -> TgnnParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TgnnParams::init(kind, 4, g.n_features(), layers, c1(), &mut rng).unwrap()
    }

    #[test]
    fn single_layer_is_one_hyptga_step() {
        let g = toy_graph();
        let p = params(GeometryKind::Hyperbolic, &g, 1, 5);
        let t = 0.7;
        let out = tgnn_forward(&g, &[(0, t)], &p, c1(), 20).unwrap();
        let inputs: Vec<LorentzPoint> = (0..g.n_nodes())
            .map(|n| {
                let u = matvec(&p.input, g.feature(n));
                manifold::lift_euclidean(&u, c1())
            })
            .collect();
        let nbhd = g.time_aware_neighbors(0, t, 20).unwrap();
        let expect = hyptga_forward(&inputs, &nbhd, &p.layers[0]).unwrap();
        let Representation::Lorentz(got) = &out[0] else { panic!("expected a Lorentz point") };
        assert!(close(got, &expect, 1e-10));
    }

    #[test]
    fn isolated_node_depends_on_own_feature_only() {
        let g = toy_graph();
        let p = params(GeometryKind::Hyperbolic, &g, 2, 6);
        let a = tgnn_forward(&g, &[(4, 0.5)], &p, c1(), 20).unwrap();
        let mut q = p.clone();
        // Perturb the input map columns of every other node.
        for r in 0..4 {
            for col in 0..4 {
                q.input[r * g.n_features() + col] += 0.3;
            }
        }
        let b = tgnn_forward(&g, &[(4, 0.5)], &q, c1(), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn future_events_do_not_change_representations() {
        let g = toy_graph();
        let mut raw: Vec<(usize, usize, f64)> = g.events().iter().map(|e| (e.src, e.dst, e.raw_timestamp)).collect();
        let before = TemporalGraph::from_raw(5, raw.clone(), None, FeatureSource::Identity).unwrap();
        raw.extend([(0, 4, 4.5), (1, 4, 5.5), (2, 0, 3.5)]);
        let after = TemporalGraph::from_raw(5, raw, None, FeatureSource::Identity).unwrap();
        for kind in [GeometryKind::Hyperbolic, GeometryKind::Euclidean] {
            let p = params(kind, &before, 2, 8);
            let t = 0.5;
            let q: Vec<_> = (0..5).map(|n| (n, t)).collect();
            let a = tgnn_forward(&before, &q, &p, c1(), 20).unwrap();
            let b = tgnn_forward(&after, &q, &p, c1(), 20).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stacked_outputs_stay_on_manifold() {
        let g = toy_graph();
        let c = Curvature::new(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TgnnParams::init(GeometryKind::Hyperbolic, 6, g.n_features(), 2, c, &mut rng).unwrap();
        let q: Vec<_> = (0..5).flat_map(|n| [(n, 0.2), (n, 0.8), (n, 1.1)]).collect();
        for r in tgnn_forward(&g, &q, &p, c, 20).unwrap() {
            let Representation::Lorentz(x) = r else { panic!() };
            assert!(x.residual() <= 1e-5 * c.k());
        }
    }

    #[test]
    fn rejects_unknown_nodes() {
        let g = toy_graph();
        let p = params(GeometryKind::Euclidean, &g, 2, 1);
        assert!(matches!(tgnn_forward(&g, &[(7, 0.5)], &p, c1(), 20), Err(Error::Input(_))));
    }

    #[test]
    fn euclidean_layer_is_weighted_mean() {
        let tape = Tape::new();
        let geo = Geometry::constant(&tape, c1());
        let lv = LayerVars {
            weight: tape.constant(&identity(2)),
            gamma: tape.scalar(0.0),
            bias: tape.scalar(0.0),
            omegas: tape.constant(&[1.0]),
        };
        let h0 = tape.constant(&[1.0, 2.0]);
        let h1 = tape.constant(&[3.0, -2.0]);
        let out = layer_diff(&geo, GeometryKind::Euclidean, &lv, h0, &[(h1, 0.0)]).value();
        // Equal weights 1/2; both see φ_R(0) = (1/√2, 0).
        let s = 0.5f64.sqrt();
        assert!((out[0] - (2.0 + s)).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
    }

    #[test]
    fn gradient_of_origin_distance_matches_finite_differences() {
        let g = toy_graph();
        let base = params(GeometryKind::Hyperbolic, &g, 2, 12);
        let c = c1();
        let f = |p: &TgnnParams| {
            let tape = Tape::new();
            let geo = Geometry::constant(&tape, c);
            let vars = p.record(&tape, true);
            let mut enc = Encoder::new(&g, geo, &vars, 20).unwrap();
            let z = enc.represent(0, 0.95).unwrap();
            geo.distance(geo.origin(4), z).item()
        };
        let tape = Tape::new();
        let geo = Geometry::constant(&tape, c);
        let vars = base.record(&tape, true);
        let mut enc = Encoder::new(&g, geo, &vars, 20).unwrap();
        let z = enc.represent(0, 0.95).unwrap();
        let out = geo.distance(geo.origin(4), z);
        let grads = tape.backward(out).unwrap();
        let leaves = vars.all();
        let n_blocks = base.tensors().len();
        let h = 1e-6;
        for b in 0..n_blocks {
            let analytic = grads.wrt(leaves[b]).to_vec();
            for (i, an) in analytic.iter().enumerate() {
                let mut p = base.clone();
                p.tensors_mut()[b].1[i] += h;
                let up = f(&p);
                let mut m = base.clone();
                m.tensors_mut()[b].1[i] -= h;
                let fd = (up - f(&m)) / (2.0 * h);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "block {b} entry {i}: {an} vs {fd}");
            }
        }
    }
}
