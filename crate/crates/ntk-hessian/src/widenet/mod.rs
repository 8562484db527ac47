//! Exact finite-width laboratory: a fully connected network in the
//! 1/sqrt(n) parametrization with analytic first and second derivatives,
//! gradient-flow training, and the assembled Hessian decomposition `H = I + S`
//! together with its moment, orthogonality, rank, and decay probes.
//!
//! Parameter layout: per layer, the weight matrix row-major, then the biases.
//! Forward pass: `z^(l+1) = W^(l) a^(l) / sqrt(n_l) + beta * b^(l)` with the
//! nonlinearity applied everywhere except the final preactivation, which is
//! the network output.

mod analysis;
mod autodiff;

pub use analysis::*;
pub use autodiff::*;

use crate::activations::Nonlin;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read as _, Write as _};
use std::path::Path;

/// Layer widths `n_0..n_L` plus the bias coupling `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    pub widths: Vec<usize>,
    pub beta: f64,
}

impl Arch {
    pub fn new(widths: Vec<usize>, beta: f64) -> Result<Arch> {
        if widths.len() < 2 {
            return Err(Error::Config("architecture needs at least input and output".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all layer widths must be >= 1".into()));
        }
        Ok(Arch { widths, beta })
    }

    /// Rectangular network: all hidden layers share one width.
    pub fn rectangular(n0: usize, hidden: usize, n_out: usize, depth: usize, beta: f64) -> Result<Arch> {
        if depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        let mut widths = vec![n0];
        widths.extend(std::iter::repeat(hidden).take(depth - 1));
        widths.push(n_out);
        Arch::new(widths, beta)
    }

    /// Number of layer maps (depth L).
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_in(&self) -> usize {
        self.widths[0]
    }

    pub fn n_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Total parameter count `sum_l (n_l + 1) n_{l+1}`.
    pub fn param_count(&self) -> usize {
        (0..self.depth()).map(|l| (self.widths[l] + 1) * self.widths[l + 1]).sum()
    }

    pub fn hidden_sum(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().sum()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| (self.widths[l] + 1) * self.widths[l + 1]).sum()
    }

    /// Index range of `W^(layer)` (row-major `n_{l+1} x n_l`).
    pub fn w_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.widths[layer] * self.widths[layer + 1]
    }

    /// Index range of `b^(layer)`.
    pub fn b_range(&self, layer: usize) -> std::ops::Range<usize> {
        let w = self.w_range(layer);
        let start = w.end;
        start..start + self.widths[layer + 1]
    }
}

/// A flat parameter vector with its architecture.
#[derive(Debug, Clone)]
pub struct NetParams {
    pub theta: Vec<f64>,
    pub arch: Arch,
}

impl NetParams {
    pub fn zeros(arch: Arch) -> NetParams {
        let p = arch.param_count();
        NetParams { theta: vec![0.0; p], arch }
    }

    pub fn w(&self, layer: usize) -> &[f64] {
        &self.theta[self.arch.w_range(layer)]
    }

    pub fn b(&self, layer: usize) -> &[f64] {
        &self.theta[self.arch.b_range(layer)]
    }
}

/// One standard normal draw (polar-free Box-Muller; deterministic per RNG
/// stream).
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Fresh parameters, every coordinate iid N(0,1), deterministic per seed.
pub fn init_params(arch: &Arch, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = arch.param_count();
    let theta = (0..p).map(|_| standard_normal(&mut rng)).collect();
    NetParams { theta, arch: arch.clone() }
}

/// Activations and preactivations from one forward pass.
/// `pre[l]` is `z^(l+1)` and `act[l]` is `a^(l)` (so `act[0]` is the input);
/// the network output is the last preactivation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
}

impl Forward {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }
}

pub fn forward(params: &NetParams, nl: &Nonlin, x: &[f64]) -> Result<Forward> {
    let arch = &params.arch;
    if x.len() != arch.n_in() {
        return Err(Error::Config(format!(
            "input dimension {} does not match n_0 = {}",
            x.len(),
            arch.n_in()
        )));
    }
    let depth = arch.depth();
    let mut act = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth);
    act.push(x.to_vec());
    for layer in 0..depth {
        let (n_in, n_out) = (arch.widths[layer], arch.widths[layer + 1]);
        let w = params.w(layer);
        let b = params.b(layer);
        let a = &act[layer];
        let scale = 1.0 / (n_in as f64).sqrt();
        let mut z = vec![0.0; n_out];
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = scale * crate::linalg::dot(&w[r * n_in..(r + 1) * n_in], a)
                + arch.beta * b[r];
        }
        if layer + 1 < depth {
            act.push(z.iter().map(|&v| nl.eval_k(0, v)).collect());
        }
        pre.push(z);
    }
    Ok(Forward { pre, act })
}

/// Network outputs on a whole dataset, flattened `(i, k) -> i*n_out + k`.
pub fn outputs(params: &NetParams, nl: &Nonlin, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut y = Vec::with_capacity(inputs.len() * params.arch.n_out());
    for x in inputs {
        y.extend_from_slice(forward(params, nl, x)?.output());
    }
    Ok(y)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"NTKH";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes a parameter snapshot: magic "NTKH", version, widths, beta, then the
/// flat parameter vector as little-endian f64.
pub fn save_params(params: &NetParams, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + params.theta.len() * 8);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.arch.widths.len() as u32).to_le_bytes());
    for &w in &params.arch.widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&params.arch.beta.to_le_bytes());
    for &v in &params.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<NetParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let take_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or(Error::Ingest { offset, msg: "truncated snapshot".into() })
    };
    if bytes.get(0..4) != Some(SNAPSHOT_MAGIC.as_slice()) {
        return Err(Error::Ingest { offset: 0, msg: "bad snapshot magic".into() });
    }
    if take_u32(4)? != SNAPSHOT_VERSION {
        return Err(Error::Ingest { offset: 4, msg: "unsupported snapshot version".into() });
    }
    let n_widths = take_u32(8)? as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for i in 0..n_widths {
        widths.push(take_u32(12 + 4 * i)? as usize);
    }
    let mut offset = 12 + 4 * n_widths;
    let beta = f64::from_le_bytes(
        bytes
            .get(offset..offset + 8)
            .ok_or(Error::Ingest { offset, msg: "truncated snapshot".into() })?
            .try_into()
            .unwrap(),
    );
    offset += 8;
    let arch = Arch::new(widths, beta)?;
    let p = arch.param_count();
    let mut theta = Vec::with_capacity(p);
    for i in 0..p {
        let at = offset + 8 * i;
        theta.push(f64::from_le_bytes(
            bytes
                .get(at..at + 8)
                .ok_or(Error::Ingest { offset: at, msg: "truncated parameter block".into() })?
                .try_into()
                .unwrap(),
        ));
    }
    Ok(NetParams { theta, arch })
}
