//! Fully connected leaky-ReLU networks for the generator and discriminator.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{sigmoid, Array, Inputs, LeafKind, NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanKind {
    Vanilla,
    Wasserstein,
}

/// How the last layer's output is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Unconstrained real output (generator, critic).
    Identity,
    /// Raw logit whose sigmoid is a probability.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    /// Negative-side slope of the hidden activations.
    #[serde(default = "default_slope")]
    pub slope: f64,
    pub head: Head,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_slope() -> f64 {
    0.2
}

impl NetConfig {
    pub fn new(layer_widths: Vec<usize>, head: Head, init_seed: u64) -> Self {
        Self {
            layer_widths,
            slope: default_slope(),
            head,
            init_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::NetConfig(format!(
                "need input, at least one hidden layer and output; got widths {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::NetConfig(format!(
                "all widths must be ≥ 1, got {:?}",
                self.layer_widths
            )));
        }
        if !self.slope.is_finite() || self.slope <= 0.0 {
            // A zero slope would make the activation non-injective.
            return Err(Error::NetConfig(format!("slope must be positive, got {}", self.slope)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

/// Affine layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array,
    pub bias: Array,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: NetConfig,
    layers: Vec<Dense>,
}

/// Named leaves of one network's parameters on a tape.
#[derive(Debug, Clone)]
pub struct ParamLeaves {
    pub layers: Vec<(NodeId, NodeId)>,
    pub names: Vec<String>,
}

impl Mlp {
    /// Fan-in scaled uniform weights (Kaiming-style for leaky ReLU), zero biases.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.init_seed);
        let gain = (2.0 / (1.0 + config.slope * config.slope)).sqrt();
        let layers = config
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = gain * (3.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Dense {
                    weight: Array::from_parts(vec![fan_in, fan_out], data),
                    bias: Array::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: NetConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_widths.len() - 1 {
            return Err(Error::NetConfig(format!(
                "{} layers for widths {:?}",
                layers.len(),
                config.layer_widths
            )));
        }
        for (i, (l, w)) in layers.iter().zip(config.layer_widths.windows(2)).enumerate() {
            if l.weight.shape() != [w[0], w[1]] || l.bias.shape() != [w[1]] {
                return Err(Error::NetConfig(format!(
                    "layer {i}: weight {:?} / bias {:?} do not match widths {w:?}",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Parameter blocks in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> impl Iterator<Item = &Array> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Array> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.w{i}"), format!("{prefix}.b{i}")])
            .collect()
    }

    pub fn declare(&self, tape: &mut Tape, prefix: &str, kind: LeafKind) -> Result<ParamLeaves> {
        let names = self.param_names(prefix);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, pair) in self.layers.iter().zip(names.chunks(2)) {
            let w = tape.leaf(&pair[0], l.weight.shape(), kind)?;
            let b = tape.leaf(&pair[1], l.bias.shape(), kind)?;
            layers.push((w, b));
        }
        Ok(ParamLeaves { layers, names })
    }

    pub fn bind<'a>(&'a self, leaves: &ParamLeaves, inputs: &mut Inputs<'a>) {
        for (name, p) in leaves.names.iter().zip(self.params()) {
            inputs.insert(name.clone(), p);
        }
    }

    /// Appends the network applied to `input` (`[batch, in]`) and returns the
    /// output node plus the pre-activation node of every hidden layer.
    pub fn apply(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut h = input;
        let mut pre = Vec::new();
        let last = leaves.layers.len() - 1;
        for (i, &(w, b)) in leaves.layers.iter().enumerate() {
            let xw = tape.matmul(h, w)?;
            let a = tape.bias_add(xw, b)?;
            if i < last {
                pre.push(a);
                h = tape.leaky_relu(a, self.config.slope);
            } else {
                h = a;
            }
        }
        Ok((h, pre))
    }

    /// Direct forward pass on a batch `[b, in]` (or a single row `[in]`).
    pub fn forward(&self, x: &Array) -> Result<Array> {
        Ok(self.forward_with_preacts(x)?.0)
    }

    fn forward_with_preacts(&self, x: &Array) -> Result<(Array, Vec<Array>)> {
        let single = x.shape().len() == 1;
        if x.cols() != self.input_dim() || x.shape().is_empty() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.cols(),
            });
        }
        let rows = x.rows();
        let mut h = x.data().to_vec();
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (din, dout) = (l.weight.shape()[0], l.weight.shape()[1]);
            let mut out = vec![0.0; rows * dout];
            crate::tensor::gemm(rows, din, dout, &h, false, l.weight.data(), false, 0.0, &mut out);
            for r in out.chunks_mut(dout) {
                r.iter_mut().zip(l.bias.data()).for_each(|(o, b)| *o += b);
            }
            if i < last {
                pre.push(Array::from_parts(vec![rows, dout], out.clone()));
                let s = self.config.slope;
                out.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v *= s
                    }
                });
            }
            h = out;
        }
        let shape = if single {
            vec![self.output_dim()]
        } else {
            vec![rows, self.output_dim()]
        };
        Ok((Array::from_parts(shape, h), pre))
    }

    /// Local slopes (1 or `slope`) of every hidden activation at `x`.
    pub fn slope_masks(&self, x: &Array) -> Result<Vec<Array>> {
        let (_, pre) = self.forward_with_preacts(&x.as_batch())?;
        let s = self.config.slope;
        Ok(pre
            .iter()
            .map(|p| p.map(|v| if v >= 0.0 { 1.0 } else { s }))
            .collect())
    }

    /// Appends the per-row input gradient `d out / d x` (`[b, in]`) of a
    /// scalar-output network whose activation pattern is frozen to `masks`.
    ///
    /// A leaky-ReLU network is piecewise linear, so with the pattern fixed
    /// the input gradient is multilinear in the weights and first-order
    /// reverse mode differentiates it exactly (away from kinks).
    pub fn input_gradient_graph(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        masks: &[Array],
    ) -> Result<NodeId> {
        if self.output_dim() != 1 {
            return Err(Error::NetConfig("input gradient needs a scalar head".into()));
        }
        if masks.len() + 1 != leaves.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masks for {} layers",
                masks.len(),
                leaves.layers.len()
            )));
        }
        let rows = masks.first().map_or(1, Array::rows);
        let ones = tape.constant(Array::filled(&[rows, 1], 1.0));
        let (w_last, _) = *leaves.layers.last().unwrap();
        let wt = tape.transpose(w_last)?;
        let mut g = tape.matmul(ones, wt)?;
        for (j, mask) in masks.iter().enumerate().rev() {
            let m = tape.constant(mask.clone());
            g = tape.mul(g, m)?;
            let wt = tape.transpose(leaves.layers[j].0)?;
            g = tape.matmul(g, wt)?;
        }
        Ok(g)
    }
}

/// Generator, discriminator and the metadata needed to sample from them.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub kind: GanKind,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub calibration: Option<Calibration>,
}

impl GanModel {
    pub fn new(kind: GanKind, generator: Mlp, discriminator: Mlp) -> Result<Self> {
        let model = Self {
            kind,
            generator,
            discriminator,
            calibration: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// Default toy architecture: `latent -> hidden.. -> sample_dim` and
    /// `sample_dim -> hidden.. -> 1`.
    pub fn with_hidden(
        kind: GanKind,
        latent_dim: usize,
        sample_dim: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let widths = |a: usize, b: usize| {
            let mut w = vec![a];
            w.extend_from_slice(hidden);
            w.push(b);
            w
        };
        let head = match kind {
            GanKind::Vanilla => Head::Logit,
            GanKind::Wasserstein => Head::Identity,
        };
        let g = Mlp::new(NetConfig::new(widths(latent_dim, sample_dim), Head::Identity, seed))?;
        let d = Mlp::new(NetConfig::new(
            widths(sample_dim, 1),
            head,
            seed.wrapping_add(1),
        ))?;
        Self::new(kind, g, d)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.generator.input_dim(), self.generator.output_dim());
        if n > m {
            return Err(Error::NetConfig(format!(
                "generator must not reduce dimension (latent {n} > sample {m})"
            )));
        }
        if self.discriminator.input_dim() != m {
            return Err(Error::NetConfig(format!(
                "discriminator input {} != generator output {m}",
                self.discriminator.input_dim()
            )));
        }
        if self.discriminator.output_dim() != 1 {
            return Err(Error::NetConfig("discriminator must have one output".into()));
        }
        let want = match self.kind {
            GanKind::Vanilla => Head::Logit,
            GanKind::Wasserstein => Head::Identity,
        };
        if self.discriminator.config().head != want {
            return Err(Error::NetConfig(format!(
                "{:?} model needs a {:?} discriminator head",
                self.kind, want
            )));
        }
        if self.generator.config().head != Head::Identity {
            return Err(Error::NetConfig("generator head must be identity".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn sample_dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// `x = G(z)` for one latent `[n]` or a batch `[b, n]`.
    pub fn generator_forward(&self, z: &Array) -> Result<Array> {
        if !z.is_finite() {
            return Err(Error::NonFinite("latent input".into()));
        }
        self.generator.forward(z)
    }

    /// Raw discriminator outputs (logits or critic values), one per row.
    pub fn raw_scores(&self, x: &Array) -> Result<Vec<f64>> {
        Ok(self.discriminator.forward(&x.as_batch())?.into_data())
    }

    /// Calibrated logit for vanilla models, critic value for Wasserstein.
    pub fn effective_logit(&self, raw: f64) -> f64 {
        match (self.kind, &self.calibration) {
            (GanKind::Vanilla, Some(c)) => c.logit(raw),
            _ => raw,
        }
    }

    /// `D(x)`: a probability in (0, 1) for vanilla models (calibrated when a
    /// calibration is present), an unbounded critic value otherwise.
    pub fn discriminator_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.sample_dim() {
            return Err(Error::Dimension {
                expected: self.sample_dim(),
                got: x.len(),
            });
        }
        let raw = self.raw_scores(&Array::vector(x.to_vec()))?[0];
        let l = self.effective_logit(raw);
        Ok(match self.kind {
            GanKind::Vanilla => sigmoid(l),
            GanKind::Wasserstein => l,
        })
    }

    /// `J[i][j] = d x_i / d z_j` at one latent point, via one reverse pass per
    /// output coordinate.
    pub fn jacobian(&self, z: &[f64]) -> Result<Array> {
        let (n, m) = (self.latent_dim(), self.sample_dim());
        if z.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: z.len(),
            });
        }
        let mut tape = Tape::new();
        let zi = tape.input("z", &[1, n])?;
        let e = tape.leaf("e", &[1, m], LeafKind::Constant)?;
        let leaves = self.generator.declare(&mut tape, "g", LeafKind::Constant)?;
        let (x, _) = self.generator.apply(&mut tape, &leaves, zi)?;
        let picked = tape.mul(x, e)?;
        let out = tape.sum(picked);
        tape.set_output(out);

        let za = Array::from_parts(vec![1, n], z.to_vec());
        let mut jac = vec![0.0; m * n];
        for i in 0..m {
            let mut onehot = vec![0.0; m];
            onehot[i] = 1.0;
            let ea = Array::from_parts(vec![1, m], onehot);
            let mut inputs = Inputs::new().with("z", &za).with("e", &ea);
            self.generator.bind(&leaves, &mut inputs);
            let g = tape.gradient(&inputs, "z")?;
            jac[i * n..(i + 1) * n].copy_from_slice(g.data());
        }
        Ok(Array::from_parts(vec![m, n], jac))
    }

    pub fn injectivity_rank_check(&self, z_samples: &[Vec<f64>], tol: f64) -> Result<RankReport> {
        if z_samples.is_empty() {
            return Err(Error::InvalidArgument("need at least one latent sample".into()));
        }
        let mut min_sv = f64::INFINITY;
        let mut worst = 0;
        for (i, z) in z_samples.iter().enumerate() {
            let s = smallest_singular_value(&self.jacobian(z)?);
            if s < min_sv {
                min_sv = s;
                worst = i;
            }
        }
        Ok(RankReport {
            min_singular_value: min_sv,
            worst_sample: worst,
            samples: z_samples.len(),
            tol,
            pass: min_sv > tol,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from_model(self, None))?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model(None)
    }

    /// Writes `path` as JSON, with parameters inline.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Writes JSON metadata to `path` and all parameters as little-endian
    /// `f64` to a sidecar `<path>.bin`.
    pub fn save_with_sidecar(&self, path: &Path) -> Result<()> {
        let bin = sidecar_path(path);
        let mut bytes = Vec::new();
        for p in self.generator.params().chain(self.discriminator.params()) {
            for v in p.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let name = bin
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        std::fs::write(&bin, bytes)?;
        std::fs::write(path, serde_json::to_string(&ModelFile::from_model(self, Some(name)))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let sidecar = match &file.params_file {
            Some(name) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(name);
                Some(std::fs::read(&p)?)
            }
            None => None,
        };
        file.into_model(sidecar.as_deref())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    s.into()
}

pub fn smallest_singular_value(j: &Array) -> f64 {
    let (m, n) = (j.shape()[0], j.shape()[1]);
    let mat = DMatrix::from_row_slice(m, n, j.data());
    mat.singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub min_singular_value: f64,
    pub worst_sample: usize,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
}

/// On-disk model layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub gan_kind: GanKind,
    pub generator: NetFile,
    pub discriminator: NetFile,
    pub calibration: Option<Calibration>,
    /// Sidecar holding every parameter as little-endian `f64`, generator
    /// blocks first, in `NetFile::params` order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_file: Option<String>,
}

pub const MODEL_FORMAT: &str = "repgan-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub config: NetConfig,
    pub params: Vec<ParamBlock>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inline values; empty when a sidecar is used.
    #[serde(default)]
    pub data: Vec<f64>,
}

impl ModelFile {
    fn from_model(model: &GanModel, sidecar: Option<String>) -> Self {
        let inline = sidecar.is_none();
        let net = |mlp: &Mlp| NetFile {
            config: mlp.config().clone(),
            params: mlp
                .param_names("")
                .into_iter()
                .zip(mlp.params())
                .map(|(name, p)| ParamBlock {
                    name: name.trim_start_matches('.').to_string(),
                    shape: p.shape().to_vec(),
                    data: if inline { p.data().to_vec() } else { vec![] },
                })
                .collect(),
        };
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            gan_kind: model.kind,
            generator: net(&model.generator),
            discriminator: net(&model.discriminator),
            calibration: model.calibration,
            params_file: sidecar,
        }
    }

    fn into_model(self, sidecar: Option<&[u8]>) -> Result<GanModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        let mut cursor = 0usize;
        let mut sidecar_vals = sidecar.map(|b| {
            if b.len() % 8 != 0 {
                Err(Error::InvalidArgument("sidecar length is not a multiple of 8".into()))
            } else {
                Ok(b.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<_>>())
            }
        });
        let sidecar_vals = sidecar_vals.take().transpose()?;
        if self.params_file.is_some() && sidecar_vals.is_none() {
            return Err(Error::InvalidArgument("model references a missing sidecar".into()));
        }
        let mut build = |net: NetFile| -> Result<Mlp> {
            net.config.validate()?;
            let expected = net.config.layer_widths.len() - 1;
            if net.params.len() != 2 * expected {
                return Err(Error::NetConfig(format!(
                    "expected {} parameter blocks, got {}",
                    2 * expected,
                    net.params.len()
                )));
            }
            let mut arrays = Vec::with_capacity(net.params.len());
            for block in net.params {
                let n = block
                    .shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| Error::NetConfig("parameter shape overflows".into()))?;
                let data = match &sidecar_vals {
                    Some(vals) => {
                        let end = cursor
                            .checked_add(n)
                            .filter(|&e| e <= vals.len())
                            .ok_or_else(|| Error::NetConfig("sidecar too short".into()))?;
                        let d = vals[cursor..end].to_vec();
                        cursor = end;
                        d
                    }
                    None => block.data,
                };
                arrays.push(Array::new(block.shape, data)?);
            }
            let mut it = arrays.into_iter();
            let mut layers = Vec::new();
            while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
                layers.push(Dense { weight, bias });
            }
            Mlp::from_layers(net.config, layers)
        };
        let generator = build(self.generator)?;
        let discriminator = build(self.discriminator)?;
        if let Some(c) = &self.calibration {
            c.validate()?;
        }
        let model = GanModel {
            kind: self.gan_kind,
            generator,
            discriminator,
            calibration: self.calibration,
        };
        model.validate()?;
        Ok(model)
    }
}
