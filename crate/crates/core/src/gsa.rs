//! Graph-Laplacian MAP smoothing of the six channels with a learned feature
//! metric.
//!
//! Every (channel, time) sample is a graph node carrying a 3-vector feature
//! `f = (t / (T-1), channel / 5, standardised value)`. Edge weights are
//! `w = exp(-Δfᵀ M Δf)` for a symmetric PSD metric `M`. For fixed `M` the
//! denoised signal minimises `‖y − x‖² + μ xᵀ L x`, i.e. solves
//! `(I + μL) x = y`. The metric is then moved one projected-gradient step
//! down `Q(M) = xᵀ L(M) x`, the Laplacian rebuilt, and the two steps
//! alternate until the objective stalls.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ChannelId, CleanChannels};

/// Relative residual every MAP solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Internal CG stopping target; tighter than [`RESIDUAL_TOL`] so the
/// recomputed true residual clears it.
const CG_TARGET: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsaConfig {
    pub mu: f64,
    /// Initial metric step size.
    pub alpha0: f64,
    /// Step multiplier after an accepted step.
    pub step_growth: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    /// Temporal neighbours on each side within a channel.
    pub window: usize,
    /// Connect every pair of nodes instead of the windowed neighbourhood.
    pub dense: bool,
}

impl Default for GsaConfig {
    fn default() -> Self {
        GsaConfig {
            mu: 0.5,
            alpha0: 1e-2,
            step_growth: 1.1,
            max_iters: 50,
            tol: 1e-4,
            window: 15,
            dense: false,
        }
    }
}

impl GsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::parameter("mu", "must be finite and >= 0"));
        }
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return Err(Error::parameter("alpha0", "must be > 0"));
        }
        if !(self.step_growth >= 1.0) {
            return Err(Error::parameter("step_growth", "must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::parameter("tol", "must be >= 0"));
        }
        if self.window == 0 && !self.dense {
            return Err(Error::parameter("window", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// `f_a − f_b`
    pub df: [f64; 3],
}

/// Weighted undirected graph over all samples, with the metric that
/// produced its weights.
#[derive(Debug, Clone)]
pub struct BreathGraph {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub weights: Vec<f64>,
    pub metric: Matrix3<f64>,
    pub degree: Vec<f64>,
    pub mu: f64,
}

impl BreathGraph {
    /// Graph over `features` with the given undirected node pairs. Self
    /// pairs are dropped.
    pub fn new(
        features: &[[f64; 3]],
        pairs: impl IntoIterator<Item = (usize, usize)>,
        metric: Matrix3<f64>,
        mu: f64,
    ) -> Self {
        let edges: Vec<Edge> = pairs
            .into_iter()
            .filter(|(a, b)| a != b)
            .map(|(a, b)| {
                let (fa, fb) = (features[a], features[b]);
                Edge {
                    a,
                    b,
                    df: [fa[0] - fb[0], fa[1] - fb[1], fa[2] - fb[2]],
                }
            })
            .collect();
        let mut g = BreathGraph {
            n: features.len(),
            weights: vec![0.0; edges.len()],
            edges,
            metric,
            degree: vec![0.0; features.len()],
            mu,
        };
        g.set_metric(metric);
        g
    }

    /// Recompute weights and degrees for a new metric.
    pub fn set_metric(&mut self, metric: Matrix3<f64>) {
        self.metric = metric;
        self.degree.iter_mut().for_each(|d| *d = 0.0);
        for (e, w) in self.edges.iter().zip(self.weights.iter_mut()) {
            *w = edge_weight(&metric, &e.df);
            self.degree[e.a] += *w;
            self.degree[e.b] += *w;
        }
    }

    pub fn with_metric(&self, metric: Matrix3<f64>) -> Self {
        let mut g = self.clone();
        g.set_metric(metric);
        g
    }

    /// `out = L x`
    pub fn apply_laplacian(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, &w) in self.edges.iter().zip(&self.weights) {
            let d = w * (x[e.a] - x[e.b]);
            out[e.a] += d;
            out[e.b] -= d;
        }
    }

    /// `xᵀ L x = Σ_edges w (x_a − x_b)²`
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .map(|(e, &w)| w * (x[e.a] - x[e.b]).powi(2))
            .sum()
    }

    /// `‖y − x‖² + μ xᵀ L x`
    pub fn objective(&self, y: &[f64], x: &[f64]) -> f64 {
        let fit: f64 = y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        fit + self.mu * self.quadratic(x)
    }

    /// `out = (I + μL) x`
    fn apply_system(&self, x: &[f64], out: &mut [f64]) {
        self.apply_laplacian(x, out);
        for (o, v) in out.iter_mut().zip(x) {
            *o = v + self.mu * *o;
        }
    }
}

#[inline]
fn edge_weight(m: &Matrix3<f64>, df: &[f64; 3]) -> f64 {
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += df[i] * m[(i, j)] * df[j];
        }
    }
    (-q).exp()
}

/// Node layout of a graph built from clean channels.
#[derive(Debug, Clone)]
pub struct NodeLayout {
    pub channels: Vec<ChannelId>,
    pub len: usize,
}

impl NodeLayout {
    pub fn node(&self, slot: usize, t: usize) -> usize {
        slot * self.len + t
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Graph, standardised signal, layout, (mean, std).
pub type GraphParts = (BreathGraph, Vec<f64>, NodeLayout, (f64, f64));

/// Stack the usable channels into one standardised vector `y` plus node
/// features and the neighbourhood edge set. Returns the graph, `y`, the
/// layout and the (mean, std) used for standardisation.
pub fn build_graph(clean: &CleanChannels, cfg: &GsaConfig) -> Result<GraphParts> {
    let len = clean.len();
    if len < 2 {
        return Err(Error::parameter("length", "graph needs at least 2 time samples"));
    }
    let channels: Vec<ChannelId> = clean.usable_ids().collect();
    if channels.is_empty() {
        return Err(Error::EmptySignal("no usable channel for graph filtering".into()));
    }
    let layout = NodeLayout { channels, len };
    let mut y = Vec::with_capacity(layout.channels.len() * len);
    for id in &layout.channels {
        y.extend_from_slice(&clean.channels[id.index()]);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    y.iter_mut().for_each(|v| *v = (*v - mean) / std);

    let mut features = Vec::with_capacity(y.len());
    for (slot, id) in layout.channels.iter().enumerate() {
        for t in 0..len {
            features.push([
                t as f64 / (len - 1) as f64,
                id.index() as f64 / 5.0,
                y[layout.node(slot, t)],
            ]);
        }
    }

    let n = features.len();
    let mut pairs = Vec::new();
    if cfg.dense {
        for a in 0..n {
            for b in a + 1..n {
                pairs.push((a, b));
            }
        }
    } else {
        let k = layout.channels.len();
        for slot in 0..k {
            for t in 0..len {
                for dt in 1..=cfg.window {
                    if t + dt < len {
                        pairs.push((layout.node(slot, t), layout.node(slot, t + dt)));
                    }
                }
            }
        }
        for t in 0..len {
            for s1 in 0..k {
                for s2 in s1 + 1..k {
                    pairs.push((layout.node(s1, t), layout.node(s2, t)));
                }
            }
        }
    }
    let graph = BreathGraph::new(&features, pairs, Matrix3::identity(), cfg.mu);
    Ok((graph, y, layout, (mean, std)))
}

/// Solve `(I + μL) x = y` by Jacobi-preconditioned conjugate gradients,
/// started from `x = y`. The returned solution satisfies
/// `‖(I + μL)x − y‖ ≤ 1e-8 ‖y‖`.
pub fn solve_map(graph: &BreathGraph, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != graph.n {
        return Err(Error::parameter(
            "y",
            format!("{} values for {} nodes", y.len(), graph.n),
        ));
    }
    let ynorm = norm(y);
    if graph.mu == 0.0 || ynorm == 0.0 {
        return Ok(y.to_vec());
    }
    let precond: Vec<f64> = graph.degree.iter().map(|d| 1.0 / (1.0 + graph.mu * d)).collect();
    let max_iters = 10 * graph.n + 1000;

    let mut x = y.to_vec();
    let mut ax = vec![0.0; graph.n];
    let mut iters = 0usize;
    // restart loop: recompute the true residual after each CG run
    loop {
        graph.apply_system(&x, &mut ax);
        let mut r: Vec<f64> = y.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let true_res = norm(&r);
        if true_res <= RESIDUAL_TOL * ynorm {
            return Ok(x);
        }
        if iters >= max_iters {
            return Err(Error::Solver {
                message: format!("conjugate gradients did not converge in {iters} iterations"),
                residual: true_res / ynorm,
            });
        }
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, p)| a * p).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; graph.n];
        while iters < max_iters {
            iters += 1;
            graph.apply_system(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..graph.n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= CG_TARGET * ynorm {
                break;
            }
            for i in 0..graph.n {
                z[i] = r[i] * precond[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..graph.n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// `∂Q/∂M_{mn} = −Σ_edges Δf_m Δf_n w (x_a − x_b)²` for
/// `Q(M) = xᵀ L(M) x` with `x` held fixed.
pub fn metric_gradient(graph: &BreathGraph, x: &[f64]) -> Matrix3<f64> {
    let mut g = Matrix3::zeros();
    for (e, &w) in graph.edges.iter().zip(&graph.weights) {
        let c = -w * (x[e.a] - x[e.b]).powi(2);
        if c == 0.0 {
            continue;
        }
        for m in 0..3 {
            for n in 0..3 {
                g[(m, n)] += c * e.df[m] * e.df[n];
            }
        }
    }
    g
}

/// Frobenius-nearest positive semidefinite matrix: symmetrise, then clamp
/// negative eigenvalues to zero.
pub fn project_psd(s: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = eig.eigenvectors;
    let out = v * Matrix3::from_diagonal(&clamped) * v.transpose();
    (out + out.transpose()) * 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsaResult {
    pub denoised: CleanChannels,
    pub metric: Matrix3<f64>,
    /// Objective after the initial solve and after every accepted step, in
    /// standardised units.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub accepted: usize,
}

/// Alternate MAP solves and projected-gradient metric steps.
///
/// The step size grows by `step_growth` after an accepted step and halves
/// after a rejected one; a step is accepted only if it lowers the objective.
pub fn denoise(clean: &CleanChannels, cfg: &GsaConfig) -> Result<GsaResult> {
    cfg.validate()?;
    let (mut graph, y, layout, (mean, std)) = build_graph(clean, cfg)?;
    let mut x = solve_map(&graph, &y)?;
    let mut obj = graph.objective(&y, &x);
    let mut trace = vec![obj];
    let mut alpha = cfg.alpha0;
    let mut iterations = 0;
    let mut accepted = 0;

    while iterations < cfg.max_iters && obj > 0.0 {
        iterations += 1;
        let grad = metric_gradient(&graph, &x);
        if grad.norm() == 0.0 {
            break;
        }
        let candidate = project_psd(&(graph.metric - grad * alpha));
        let trial = graph.with_metric(candidate);
        let x_trial = solve_map(&trial, &y)?;
        let obj_trial = trial.objective(&y, &x_trial);
        if obj_trial < obj {
            let rel = (obj - obj_trial) / obj;
            graph = trial;
            x = x_trial;
            obj = obj_trial;
            trace.push(obj);
            accepted += 1;
            alpha *= cfg.step_growth;
            if rel < cfg.tol {
                break;
            }
        } else {
            alpha *= 0.5;
        }
    }

    let mut denoised = CleanChannels {
        frame_rate: clean.frame_rate,
        channels: std::array::from_fn(|_| vec![0.0; layout.len]),
        usable: clean.usable,
    };
    for (slot, id) in layout.channels.iter().enumerate() {
        let out = &mut denoised.channels[id.index()];
        for (t, v) in out.iter_mut().enumerate() {
            *v = mean + std * x[layout.node(slot, t)];
        }
    }
    Ok(GsaResult {
        denoised,
        metric: graph.metric,
        trace,
        iterations,
        accepted,
    })
}
