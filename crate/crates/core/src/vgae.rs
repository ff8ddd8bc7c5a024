//! Variational temporal graph autoencoders.
//!
//! The posterior over `z_i(t)` factorises over `(node, time)` queries. In
//! the hyperbolic model it is a wrapped normal whose mean comes from a
//! hyperbolic temporal encoder and whose log scale comes from a Euclidean
//! one. Edges are decoded with a Fermi-Dirac function of squared distance,
//! node classes with a multinomial logistic head on `log_O(z)`. Training
//! maximises the ELBO with Adam.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{log_sigmoid, sigmoid, Tape, Var};
use crate::data::{NegativeSampler, Split, TemporalGraph};
use crate::error::{Error, Result};
use crate::manifold::diff::Geometry;
use crate::manifold::{self, Curvature, LorentzPoint};
use crate::metrics;
use crate::tgnn::{Encoder, GeometryKind, TgnnParams, TgnnVars, DEFAULT_LAYERS, DEFAULT_MAX_NEIGHBORS};
use crate::wrapped_normal::{self, WrappedNormalParams};

/// Query time used for node classification: just after the last event.
pub const CLASSIFY_TIME: f64 = 1.0 + 1e-6;

/// Share of labelled, non-inductive nodes held out for transductive
/// classification.
pub const LABEL_HOLDOUT: f64 = 0.2;

const HOLDOUT_SEED: u64 = 0x5eed_1abe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Wrapped-normal posterior on the hyperboloid.
    Hvgnn,
    /// Diagonal Gaussian posterior in `R^d`.
    Evgnn,
    /// Deterministic hyperbolic encoder.
    TgnnL,
    /// Deterministic Euclidean encoder.
    TgnnR,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::Hvgnn, Self::Evgnn, Self::TgnnL, Self::TgnnR];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hvgnn => "hvgnn",
            Self::Evgnn => "evgnn",
            Self::TgnnL => "tgnn_l",
            Self::TgnnR => "tgnn_r",
        }
    }

    /// Geometry of the latent space.
    pub fn latent_geometry(self) -> GeometryKind {
        match self {
            Self::Hvgnn | Self::TgnnL => GeometryKind::Hyperbolic,
            Self::Evgnn | Self::TgnnR => GeometryKind::Euclidean,
        }
    }

    pub fn is_variational(self) -> bool {
        matches!(self, Self::Hvgnn | Self::Evgnn)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown geometry '{s}' (expected hvgnn, evgnn, tgnn_l or tgnn_r)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub fd_r: f64,
    pub fd_t: f64,
    /// Zero disables the classification head.
    pub n_classes: usize,
}

impl DecoderConfig {
    pub fn new(fd_r: f64, fd_t: f64, n_classes: usize) -> Result<Self> {
        if !(fd_r >= 0.0 && fd_r.is_finite()) {
            return Err(Error::Config(format!("Fermi-Dirac radius must be >= 0, got {fd_r}")));
        }
        if !(fd_t > 0.0 && fd_t.is_finite()) {
            return Err(Error::Config(format!("Fermi-Dirac temperature must be > 0, got {fd_t}")));
        }
        if n_classes == 1 {
            return Err(Error::Config("classification needs at least 2 classes".into()));
        }
        Ok(Self { fd_r, fd_t, n_classes })
    }
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { fd_r: 2.0, fd_t: 1.0, n_classes: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub layers: usize,
    pub max_neighbors: usize,
    /// `log K` (initial value when trainable).
    pub log_k: f64,
    pub trainable_k: bool,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Hvgnn,
            dim: 16,
            layers: DEFAULT_LAYERS,
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            log_k: 0.0,
            trainable_k: false,
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("dimension must be even and >= 2, got {}", self.dim)));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        if self.max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be positive".into()));
        }
        Curvature::from_log(self.log_k)?;
        DecoderConfig::new(self.decoder.fd_r, self.decoder.fd_t, self.decoder.n_classes)?;
        Ok(())
    }
}

/// Encoders plus decoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Produces `μ` (or the deterministic representation).
    pub mean: TgnnParams,
    /// Produces `log σ`; present for variational models.
    pub scale: Option<TgnnParams>,
    /// Row-major `C × d`.
    pub mlr_weight: Vec<f64>,
    pub mlr_bias: Vec<f64>,
    pub log_k: f64,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, n_features: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = Curvature::from_log(config.log_k)?;
        let (d, l) = (config.dim, config.layers);
        let mean = TgnnParams::init(config.kind.latent_geometry(), d, n_features, l, c, rng)?;
        let scale = if config.kind.is_variational() {
            Some(TgnnParams::init(GeometryKind::Euclidean, d, n_features, l, c, rng)?)
        } else {
            None
        };
        let n_classes = config.decoder.n_classes;
        Ok(Self {
            mean,
            scale,
            mlr_weight: vec![0.0; n_classes * d],
            mlr_bias: vec![0.0; n_classes],
            log_k: config.log_k,
            config,
        })
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Curvature::from_log(self.log_k)
    }

    pub fn classifies(&self) -> bool {
        self.config.decoder.n_classes >= 2
    }

    /// Named parameter blocks in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        out.extend(self.mean.tensors().into_iter().map(|(n, v)| (format!("mean.{n}"), v)));
        if let Some(s) = &self.scale {
            out.extend(s.tensors().into_iter().map(|(n, v)| (format!("scale.{n}"), v)));
        }
        if self.classifies() {
            out.push(("mlr.weight".into(), &self.mlr_weight));
            out.push(("mlr.bias".into(), &self.mlr_bias));
        }
        out.push(("log_k".into(), std::slice::from_ref(&self.log_k)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let classifies = self.classifies();
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        out.extend(self.mean.tensors_mut().into_iter().map(|(n, v)| (format!("mean.{n}"), v)));
        if let Some(s) = &mut self.scale {
            out.extend(s.tensors_mut().into_iter().map(|(n, v)| (format!("scale.{n}"), v)));
        }
        if classifies {
            out.push(("mlr.weight".into(), &mut self.mlr_weight));
            out.push(("mlr.bias".into(), &mut self.mlr_bias));
        }
        out.push(("log_k".into(), std::slice::from_mut(&mut self.log_k)));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, v)| v.to_vec()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.n_params();
        if values.len() != n {
            return Err(Error::Dimension { expected: n, got: values.len() });
        }
        let mut rest = values;
        for (_, block) in self.tensors_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Places the parameters on `tape`; `trainable = false` records constants.
    pub fn record<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<ModelVars<'t>> {
        let c = self.curvature()?;
        let log_k = if trainable && self.config.trainable_k { tape.var(&[self.log_k]) } else { tape.scalar(self.log_k) };
        let geo = if self.config.trainable_k { Geometry::from_log(log_k) } else { Geometry::constant(tape, c) };
        let leaf = |v: &[f64]| if trainable { tape.var(v) } else { tape.constant(v) };
        Ok(ModelVars {
            geo,
            mean: self.mean.record(tape, trainable),
            scale: self.scale.as_ref().map(|s| s.record(tape, trainable)),
            mlr: self.classifies().then(|| (leaf(&self.mlr_weight), leaf(&self.mlr_bias))),
            log_k,
        })
    }
}

/// Recorded model parameters.
pub struct ModelVars<'t> {
    pub geo: Geometry<'t>,
    pub mean: TgnnVars<'t>,
    pub scale: Option<TgnnVars<'t>>,
    pub mlr: Option<(Var<'t>, Var<'t>)>,
    pub log_k: Var<'t>,
}

impl<'t> ModelVars<'t> {
    /// Leaves in the order of [`Model::tensors`].
    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = self.mean.all();
        if let Some(s) = &self.scale {
            out.extend(s.all());
        }
        if let Some((w, b)) = self.mlr {
            out.extend([w, b]);
        }
        out.push(self.log_k);
        out
    }
}

/// Recorded posterior parameters at one query.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'t> {
    pub mu: Var<'t>,
    pub log_sigma: Option<Var<'t>>,
}

/// Runs the mean and scale encoders over shared neighborhoods.
pub struct PosteriorEncoder<'a, 't> {
    mean: Encoder<'a, 't>,
    scale: Option<Encoder<'a, 't>>,
}

impl<'a, 't> PosteriorEncoder<'a, 't> {
    pub fn new(model: &Model, graph: &'a TemporalGraph, vars: &'a ModelVars<'t>) -> Result<Self> {
        let n = model.config.max_neighbors;
        let mean = Encoder::new(graph, vars.geo, &vars.mean, n)?;
        let scale = match &vars.scale {
            Some(s) => {
                if s.d != vars.mean.d {
                    return Err(Error::Config(format!("scale encoder has dimension {}, mean has {}", s.d, vars.mean.d)));
                }
                Some(Encoder::new(graph, vars.geo, s, n)?)
            }
            None => None,
        };
        Ok(Self { mean, scale })
    }

    pub fn query(&mut self, node: usize, t: f64) -> Result<Posterior<'t>> {
        let mu = self.mean.represent(node, t)?;
        let log_sigma = match &mut self.scale {
            Some(s) => Some(s.represent(node, t)?),
            None => None,
        };
        Ok(Posterior { mu, log_sigma })
    }
}

/// Wrapped-normal posterior parameters of a hyperbolic variational model.
pub fn encode_posterior(model: &Model, graph: &TemporalGraph, queries: &[(usize, f64)]) -> Result<Vec<WrappedNormalParams>> {
    if model.config.kind != ModelKind::Hvgnn {
        return Err(Error::Config(format!("{} has no wrapped-normal posterior", model.config.kind)));
    }
    let c = model.curvature()?;
    let tape = Tape::new();
    let vars = model.record(&tape, false)?;
    let mut enc = PosteriorEncoder::new(model, graph, &vars)?;
    queries
        .iter()
        .map(|&(n, t)| {
            let p = enc.query(n, t)?;
            let mu = LorentzPoint::new(p.mu.value(), c)?;
            let ls = p.log_sigma.expect("variational model has a scale encoder").value();
            WrappedNormalParams::from_log_sigma(mu, ls)
        })
        .collect()
}

/// Posterior means (deterministic representations) per query.
pub fn posterior_means(model: &Model, graph: &TemporalGraph, queries: &[(usize, f64)]) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let vars = model.record(&tape, false)?;
    let mut enc = Encoder::new(graph, vars.geo, &vars.mean, model.config.max_neighbors)?;
    queries.iter().map(|&(n, t)| Ok(enc.represent(n, t)?.value())).collect()
}

/// `1 / (exp((d² - r)/t) + 1)` with `d` the geodesic distance.
pub fn fermi_dirac_likelihood(z_i: &LorentzPoint, z_j: &LorentzPoint, cfg: &DecoderConfig) -> Result<f64> {
    let d = manifold::distance(z_i, z_j)?;
    Ok(sigmoid(-(d * d - cfg.fd_r) / cfg.fd_t))
}

/// Class probabilities `softmax(W log_O(z)_{1:} + b)`; `weights[k]` is the
/// weight vector of class `k`.
pub fn hyperbolic_mlr_likelihood(z: &LorentzPoint, weights: &[Vec<f64>], biases: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != biases.len() {
        return Err(Error::Dimension { expected: weights.len(), got: biases.len() });
    }
    if weights.len() < 2 {
        return Err(Error::Config("classification needs at least 2 classes".into()));
    }
    let u = manifold::log_origin_spatial(z);
    let mut logits = Vec::with_capacity(weights.len());
    for (w, b) in weights.iter().zip(biases) {
        if w.len() != u.len() {
            return Err(Error::Dimension { expected: u.len(), got: w.len() });
        }
        logits.push(w.iter().zip(&u).map(|(a, x)| a * x).sum::<f64>() + b);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Recorded squared latent distance.
pub fn distance_sq_diff<'t>(geo: &Geometry<'t>, kind: GeometryKind, a: Var<'t>, b: Var<'t>) -> Var<'t> {
    match kind {
        GeometryKind::Hyperbolic => geo.distance_sq(a, b),
        GeometryKind::Euclidean => (a - b).norm_sq(),
    }
}

/// Recorded Bernoulli log-likelihood of an edge (`present`) or a non-edge.
pub fn edge_log_likelihood<'t>(
    geo: &Geometry<'t>,
    kind: GeometryKind,
    a: Var<'t>,
    b: Var<'t>,
    cfg: &DecoderConfig,
    present: bool,
) -> Var<'t> {
    let logit = (distance_sq_diff(geo, kind, a, b) - cfg.fd_r) * (-1.0 / cfg.fd_t);
    if present {
        logit.log_sigmoid()
    } else {
        (-logit).log_sigmoid()
    }
}

/// Recorded class log-probabilities.
pub fn class_log_probs<'t>(geo: &Geometry<'t>, kind: GeometryKind, z: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    let u = match kind {
        GeometryKind::Hyperbolic => geo.log_origin(z),
        GeometryKind::Euclidean => z,
    };
    let c = b.len();
    let logits = w.matvec(c, u.len(), u) + b;
    logits - logits.logsumexp()
}

/// One reparameterised latent draw and its KL contribution
/// `log q(z) - log p(z)` (closed form for the Euclidean posterior, absent
/// for deterministic models).
pub fn draw_latent<'t>(geo: &Geometry<'t>, kind: ModelKind, post: Posterior<'t>, noise: &[f64]) -> (Var<'t>, Option<Var<'t>>) {
    let tape = geo.tape();
    match (kind, post.log_sigma) {
        (ModelKind::Hvgnn, Some(ls)) => {
            let (z, scaled) = wrapped_normal::diff::sample(geo, post.mu, ls, noise);
            let kl = wrapped_normal::diff::log_density_at_own_sample(geo, scaled, ls)
                - wrapped_normal::diff::log_prior(geo, z);
            (z, Some(kl))
        }
        (ModelKind::Evgnn, Some(ls)) => {
            let z = post.mu + ls.exp() * tape.constant(noise);
            (z, Some(wrapped_normal::diff::euclidean_kl(post.mu, ls)))
        }
        _ => (post.mu, None),
    }
}

/// Positive and negative pairs `(u, v, t)` and labelled queries
/// `(node, t, class)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub positives: Vec<(usize, usize, f64)>,
    pub negatives: Vec<(usize, usize, f64)>,
    pub labeled: Vec<(usize, f64, usize)>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty() && self.labeled.is_empty()
    }
}

/// How the KL of the queried latents enters a minibatch objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlScaling {
    /// Every queried latent contributes its full KL.
    PerQuery,
    /// Minibatch estimate of a graph-level bound that charges one KL term per
    /// node per pass over the training events: the summed query KL is
    /// rescaled by `batch_fraction · n_nodes / n_queries`.
    PerNode { batch_fraction: f64, n_nodes: usize },
}

impl KlScaling {
    fn weight(self, n_queries: usize) -> f64 {
        match self {
            Self::PerQuery => 1.0,
            Self::PerNode { batch_fraction, n_nodes } => batch_fraction * n_nodes as f64 / n_queries.max(1) as f64,
        }
    }
}

impl FromStr for KlScaling {
    type Err = Error;
    /// `per_query` or `per_node`; the latter is completed by the trainer.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_query" => Ok(Self::PerQuery),
            "per_node" => Ok(Self::PerNode { batch_fraction: 1.0, n_nodes: 1 }),
            other => Err(Error::Config(format!("unknown KL scaling '{other}' (expected per_query or per_node)"))),
        }
    }
}

/// ELBO on a tape plus plain-valued components.
pub struct ElboOutput<'t> {
    pub elbo: Var<'t>,
    pub recon: f64,
    /// Weighted KL term as it enters `elbo`.
    pub kl: f64,
    /// Monte Carlo standard error of `kl` (zero for a single sample or a
    /// closed form).
    pub kl_std_error: f64,
}

/// `E_q[log p(edges, labels | Z)] - KL[q || p]` over the queries touched by
/// `batch`, with one shared latent draw per query and `n_mc` draws.
pub fn elbo<'t, R: Rng + ?Sized>(
    vars: &ModelVars<'t>,
    model: &Model,
    graph: &TemporalGraph,
    batch: &Batch,
    rng: &mut R,
    n_mc: usize,
    scaling: KlScaling,
) -> Result<ElboOutput<'t>> {
    if batch.is_empty() {
        return Err(Error::Contract("ELBO of an empty batch".into()));
    }
    if n_mc == 0 {
        return Err(Error::Contract("at least one Monte Carlo sample is required".into()));
    }
    if !batch.labeled.is_empty() && vars.mlr.is_none() {
        return Err(Error::Config("labelled queries given but the classification head is disabled".into()));
    }
    let geo = vars.geo;
    let tape = geo.tape();
    let kind = model.config.kind;
    let lat = kind.latent_geometry();
    let dec = model.config.decoder;
    let d = model.config.dim;

    let mut index: HashMap<(usize, u64), usize> = HashMap::new();
    let mut queries: Vec<(usize, f64)> = Vec::new();
    let mut slot = |n: usize, t: f64| {
        *index.entry((n, t.to_bits())).or_insert_with(|| {
            queries.push((n, t));
            queries.len() - 1
        })
    };
    let pos: Vec<(usize, usize)> = batch.positives.iter().map(|&(u, v, t)| (slot(u, t), slot(v, t))).collect();
    let neg: Vec<(usize, usize)> = batch.negatives.iter().map(|&(u, v, t)| (slot(u, t), slot(v, t))).collect();
    let lab: Vec<(usize, usize)> = batch.labeled.iter().map(|&(n, t, c)| (slot(n, t), c)).collect();

    let mut enc = PosteriorEncoder::new(model, graph, vars)?;
    let posts = queries.iter().map(|&(n, t)| enc.query(n, t)).collect::<Result<Vec<_>>>()?;

    let mut recon = tape.scalar(0.0);
    let mut kl = tape.scalar(0.0);
    let mut kl_draws = Vec::with_capacity(n_mc);
    for s in 0..n_mc {
        let mut zs = Vec::with_capacity(posts.len());
        let mut kl_s = tape.scalar(0.0);
        for p in &posts {
            let noise = if kind.is_variational() { wrapped_normal::draw_noise(rng, d) } else { Vec::new() };
            let (z, k) = draw_latent(&geo, kind, *p, &noise);
            // The Euclidean KL is exact and counted once.
            if let Some(k) = k {
                if kind == ModelKind::Hvgnn || s == 0 {
                    kl_s = kl_s + k;
                }
            }
            zs.push(z);
        }
        let mut r = tape.scalar(0.0);
        for &(a, b) in &pos {
            r = r + edge_log_likelihood(&geo, lat, zs[a], zs[b], &dec, true);
        }
        for &(a, b) in &neg {
            r = r + edge_log_likelihood(&geo, lat, zs[a], zs[b], &dec, false);
        }
        if let Some((w, b)) = vars.mlr {
            for &(q, c) in &lab {
                let lp = class_log_probs(&geo, lat, zs[q], w, b);
                r = r + lp.slice(c, 1);
            }
        }
        recon = recon + r;
        kl_draws.push(kl_s.item());
        kl = kl + kl_s;
    }
    let n = n_mc as f64;
    let w = scaling.weight(queries.len());
    let recon = recon / n;
    let kl = if kind == ModelKind::Hvgnn { kl * (w / n) } else { kl * w };
    let kl_std_error = if kind == ModelKind::Hvgnn && n_mc > 1 {
        let m = kl_draws.iter().sum::<f64>() / n;
        let var = kl_draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        w * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ElboOutput { elbo: recon - kl, recon: recon.item(), kl: kl.item(), kl_std_error })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam in ascent form.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Moves `params` along `grad` (maximisation).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            if lr != 0.0 {
                params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    pub kl_std_error: f64,
    pub grad_norm: f64,
}

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl TrainState {
    pub fn new(model: Model, adam: AdamConfig, seed: u64) -> Self {
        let n = model.n_params();
        Self { model, adam: Adam::new(n, adam), rng: ChaCha8Rng::seed_from_u64(seed), step: 0 }
    }
}

/// ELBO value and gradient with respect to [`Model::flat`].
pub fn elbo_and_gradient<R: Rng + ?Sized>(
    model: &Model,
    graph: &TemporalGraph,
    batch: &Batch,
    rng: &mut R,
    n_mc: usize,
    scaling: KlScaling,
) -> Result<(StepMetrics, Vec<f64>)> {
    let tape = Tape::new();
    let vars = model.record(&tape, true)?;
    let out = elbo(&vars, model, graph, batch, rng, n_mc, scaling)?;
    let value = out.elbo.item();
    let mut grad = Vec::with_capacity(model.n_params());
    if value.is_finite() {
        let g = tape.backward(out.elbo)?;
        for v in vars.all() {
            grad.extend_from_slice(g.wrt(v));
        }
    }
    let grad_norm = if grad.is_empty() { f64::NAN } else { grad.iter().map(|g| g * g).sum::<f64>().sqrt() };
    let m = StepMetrics { step: 0, elbo: value, recon: out.recon, kl: out.kl, kl_std_error: out.kl_std_error, grad_norm };
    Ok((m, grad))
}

/// One Adam ascent step on the ELBO. A non-finite objective or gradient
/// leaves the state untouched and returns [`Error::NonFinite`].
pub fn train_step(
    state: &mut TrainState,
    graph: &TemporalGraph,
    batch: &Batch,
    n_mc: usize,
    scaling: KlScaling,
) -> Result<StepMetrics> {
    let (mut m, grad) = elbo_and_gradient(&state.model, graph, batch, &mut state.rng, n_mc, scaling)?;
    if !m.elbo.is_finite() || !m.grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective {} / gradient norm {} at step {}",
            m.elbo,
            m.grad_norm,
            state.step + 1
        )));
    }
    let mut params = state.model.flat();
    state.adam.step(&mut params, &grad);
    state.model.set_flat(&params)?;
    state.step += 1;
    m.step = state.step;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops early once this many steps have run.
    pub max_steps: Option<usize>,
    pub n_mc: usize,
    pub seed: u64,
    /// `PerNode` parameters are filled in from the graph and split.
    pub kl_scaling: KlScaling,
    /// Include the edge reconstruction term; `false` trains on labels only.
    pub link_prediction: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 10,
            batch_size: 200,
            max_steps: None,
            n_mc: 1,
            seed: 0,
            kl_scaling: KlScaling::PerNode { batch_fraction: 1.0, n_nodes: 1 },
            link_prediction: true,
        }
    }
}

/// Labelled nodes used for training the classification head.
pub fn training_label_nodes(graph: &TemporalGraph, split: &Split) -> Vec<bool> {
    let held: std::collections::HashSet<usize> = classification_holdout(graph, split).into_iter().collect();
    (0..graph.n_nodes())
        .map(|n| graph.label(n).is_some() && !split.inductive[n] && !held.contains(&n))
        .collect()
}

/// Held-out labelled nodes for transductive classification. The choice
/// depends only on the graph and split, so training and evaluation agree.
pub fn classification_holdout(graph: &TemporalGraph, split: &Split) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..graph.n_nodes())
        .filter(|&n| graph.label(n).is_some() && !split.inductive[n])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(HOLDOUT_SEED);
    nodes.shuffle(&mut rng);
    let k = (nodes.len() as f64 * LABEL_HOLDOUT).ceil() as usize;
    let mut held: Vec<usize> = nodes.into_iter().take(k).collect();
    held.sort_unstable();
    held
}

/// Shuffled minibatches over the training events, one negative per positive.
pub fn epoch_batches<R: Rng + ?Sized>(
    graph: &TemporalGraph,
    split: &Split,
    sampler: &NegativeSampler,
    label_nodes: Option<&[bool]>,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    let mut order: Vec<usize> = split.train.clone().collect();
    order.shuffle(rng);
    let events = graph.events();
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let mut b = Batch::default();
            let mut seen = std::collections::HashSet::new();
            for &i in chunk {
                let e = events[i];
                b.positives.push((e.src, e.dst, e.timestamp));
                b.negatives.push((e.src, sampler.sample(e.src, rng), e.timestamp));
                if let Some(mask) = label_nodes {
                    for n in [e.src, e.dst] {
                        if mask[n] && seen.insert((n, e.timestamp.to_bits())) {
                            b.labeled.push((n, e.timestamp, graph.label(n).expect("masked nodes are labelled")));
                        }
                    }
                }
            }
            b
        })
        .collect()
}

/// Runs `cfg.epochs` epochs (or `cfg.max_steps` steps), calling `on_step`
/// after each successful step. On error the state holds the last good
/// parameters.
pub fn train(
    state: &mut TrainState,
    graph: &TemporalGraph,
    split: &Split,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
) -> Result<()> {
    let sampler = NegativeSampler::new(graph, split.train.end);
    let mask = state.model.classifies().then(|| training_label_nodes(graph, split));
    let n_train = split.train.len();
    if n_train == 0 {
        return Err(Error::InsufficientData("the training split has no events".into()));
    }
    if !cfg.link_prediction && mask.is_none() {
        return Err(Error::Config("nothing to train: link prediction is off and the model has no classifier".into()));
    }
    for _ in 0..cfg.epochs {
        let mut batches = epoch_batches(graph, split, &sampler, mask.as_deref(), cfg.batch_size, &mut state.rng);
        let sizes: Vec<usize> = batches.iter().map(|b| b.positives.len()).collect();
        if !cfg.link_prediction {
            for b in &mut batches {
                b.positives.clear();
                b.negatives.clear();
            }
        }
        for (b, &size) in batches.iter().zip(&sizes).filter(|(b, _)| !b.is_empty()) {
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                return Ok(());
            }
            let scaling = match cfg.kl_scaling {
                KlScaling::PerQuery => KlScaling::PerQuery,
                KlScaling::PerNode { .. } => KlScaling::PerNode {
                    batch_fraction: size as f64 / n_train as f64,
                    n_nodes: graph.n_nodes(),
                },
            };
            let m = train_step(state, graph, b, cfg.n_mc, scaling)?;
            on_step(&m, state)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSetting {
    Transductive,
    Inductive,
}

impl FromStr for EvalSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(Self::Transductive),
            "inductive" => Ok(Self::Inductive),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Test-split metrics computed from posterior means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalReport {
    pub n_pairs: usize,
    pub ap: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    /// The inductive setting was requested but no test node is unseen.
    pub no_inductive_nodes: bool,
}

/// Link-prediction probability for two posterior means.
fn edge_probability(model: &Model, a: &[f64], b: &[f64]) -> Result<f64> {
    let dec = &model.config.decoder;
    let d2 = match model.config.kind.latent_geometry() {
        GeometryKind::Hyperbolic => {
            let c = model.curvature()?;
            let x = manifold::distance(&LorentzPoint::new(a.to_vec(), c)?, &LorentzPoint::new(b.to_vec(), c)?)?;
            x * x
        }
        GeometryKind::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
    };
    Ok(sigmoid(-(d2 - dec.fd_r) / dec.fd_t))
}

/// Test-split link pairs `(u, v, t, is_edge)`: every kept test event plus
/// one seeded negative with the same source and time.
fn link_pairs(graph: &TemporalGraph, split: &Split, setting: EvalSetting, seed: u64) -> Vec<(usize, usize, f64, bool)> {
    let events = &graph.events()[split.test.clone()];
    let keep = |u: usize, v: usize| setting == EvalSetting::Transductive || split.inductive[u] || split.inductive[v];
    let sampler = NegativeSampler::new(graph, graph.events().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for e in events.iter().filter(|e| keep(e.src, e.dst)) {
        pairs.push((e.src, e.dst, e.timestamp, true));
        pairs.push((e.src, sampler.sample(e.src, &mut rng), e.timestamp, false));
    }
    pairs
}

/// Edge probabilities and truth labels for the test link pairs.
pub fn link_scores(
    model: &Model,
    graph: &TemporalGraph,
    split: &Split,
    setting: EvalSetting,
    seed: u64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let pairs = link_pairs(graph, split, setting, seed);
    let tape = Tape::new();
    let vars = model.record(&tape, false)?;
    let mut enc = Encoder::new(graph, vars.geo, &vars.mean, model.config.max_neighbors)?;
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for &(u, v, t, y) in &pairs {
        let a = enc.represent(u, t)?.value();
        let b = enc.represent(v, t)?.value();
        scores.push(edge_probability(model, &a, &b)?);
        labels.push(y);
    }
    Ok((scores, labels))
}

/// Evaluates link prediction on the test split (positives plus one
/// negative per positive, seeded) and, when the model classifies, macro
/// one-vs-rest AUC on held-out or inductive nodes.
pub fn evaluate(model: &Model, graph: &TemporalGraph, split: &Split, setting: EvalSetting, seed: u64) -> Result<EvalReport> {
    let inductive = split.inductive_nodes();
    if setting == EvalSetting::Inductive && inductive.is_empty() {
        return Ok(EvalReport { no_inductive_nodes: true, ..EvalReport::default() });
    }
    let (scores, labels) = link_scores(model, graph, split, setting, seed)?;
    let mut report = EvalReport { n_pairs: scores.len(), ..EvalReport::default() };
    if !scores.is_empty() {
        report.ap = Some(metrics::average_precision(&scores, &labels)?);
        report.accuracy = Some(metrics::accuracy(&scores, &labels, 0.5)?);
    }

    if model.classifies() {
        let tape = Tape::new();
        let vars = model.record(&tape, false)?;
        let (w, b) = vars.mlr.expect("classifying models record a head");
        let mut enc = Encoder::new(graph, vars.geo, &vars.mean, model.config.max_neighbors)?;
        let nodes: Vec<usize> = match setting {
            EvalSetting::Transductive => classification_holdout(graph, split),
            EvalSetting::Inductive => inductive.into_iter().filter(|&n| graph.label(n).is_some()).collect(),
        };
        let mut probs = Vec::with_capacity(nodes.len());
        let mut ys = Vec::with_capacity(nodes.len());
        for &n in &nodes {
            let z = enc.represent(n, CLASSIFY_TIME)?;
            let lp = class_log_probs(&vars.geo, model.config.kind.latent_geometry(), z, w, b);
            probs.push(lp.value().iter().map(|v| v.exp()).collect::<Vec<f64>>());
            ys.push(graph.label(n).expect("filtered to labelled nodes"));
        }
        report.auc = metrics::macro_auc_ovr(&probs, &ys, model.config.decoder.n_classes).ok();
    }
    Ok(report)
}

/// `log sigmoid(-(d² - r)/t)` in plain arithmetic.
pub fn fermi_dirac_log_likelihood(d2: f64, cfg: &DecoderConfig) -> f64 {
    log_sigmoid(-(d2 - cfg.fd_r) / cfg.fd_t)
}
