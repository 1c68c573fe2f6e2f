//! Adversarial training on 2-D point clouds: vanilla GAN with the
//! non-saturating generator loss, and WGAN with gradient penalty.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_platt, DEFAULT_L2};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nets::{GanKind, GanModel, Mlp};
use crate::rng::{normal_vec, seeded, SeededRng};
use crate::tensor::{Array, Inputs, LeafKind, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

fn d_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.5
}
fn d_beta2() -> f64 {
    0.9
}
fn d_eps() -> f64 {
    1e-8
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.lr > 0.0) {
            errs.push(format!("adam.lr must be > 0, got {}", self.lr));
        }
        for (name, b) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            errs.push(format!("adam.eps must be > 0, got {}", self.eps));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// First and second moment accumulators for a list of parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Array>) -> Self {
        let m: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. Gradients are checked before anything is
/// modified, so a failing call leaves state and parameters untouched.
pub fn adam_update<'a>(
    state: &mut AdamState,
    params: impl IntoIterator<Item = &'a mut Array>,
    grads: &[Array],
    names: &[String],
    hyper: &AdamHyper,
) -> Result<()> {
    let params: Vec<&mut Array> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter blocks, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| format!("block {i}"));
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "`{name}`: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of `{name}`")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * gi;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
}

fn d_latent() -> usize {
    2
}
fn d_hidden() -> Vec<usize> {
    vec![256, 256]
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            latent_dim: d_latent(),
            hidden: d_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gan_kind: GanKind,
    #[serde(default)]
    pub arch: Architecture,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Generator updates.
    #[serde(default = "d_iters")]
    pub iterations: usize,
    /// Discriminator updates per generator update; defaults to 5 for
    /// Wasserstein and 1 for vanilla.
    #[serde(default)]
    pub critic_steps: Option<usize>,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default = "d_gp")]
    pub gp_lambda: f64,
    #[serde(default = "d_l2")]
    pub calibration_l2: f64,
    #[serde(default = "d_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep a copy of the model after every this many generator updates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn d_batch() -> usize {
    256
}
fn d_iters() -> usize {
    20_000
}
fn d_gp() -> f64 {
    10.0
}
fn d_l2() -> f64 {
    DEFAULT_L2
}
fn d_holdout() -> f64 {
    0.1
}
fn d_log_every() -> usize {
    100
}

impl TrainConfig {
    pub fn new(gan_kind: GanKind) -> Self {
        Self {
            gan_kind,
            arch: Architecture::default(),
            batch_size: d_batch(),
            iterations: d_iters(),
            critic_steps: None,
            adam: AdamHyper::default(),
            gp_lambda: d_gp(),
            calibration_l2: d_l2(),
            holdout_fraction: d_holdout(),
            log_every: d_log_every(),
            seed: 0,
            checkpoint_every: None,
        }
    }

    pub fn critic_steps(&self) -> usize {
        self.critic_steps.unwrap_or(match self.gan_kind {
            GanKind::Wasserstein => 5,
            GanKind::Vanilla => 1,
        })
    }

    pub fn errors(&self) -> Vec<String> {
        let mut errs = match self.adam.validate() {
            Err(Error::Config(e)) => e,
            _ => vec![],
        };
        if self.batch_size == 0 {
            errs.push("train.batch_size must be ≥ 1".into());
        }
        if self.critic_steps == Some(0) {
            errs.push("train.critic_steps must be ≥ 1".into());
        }
        if !(self.gp_lambda >= 0.0) {
            errs.push(format!("train.gp_lambda must be ≥ 0, got {}", self.gp_lambda));
        }
        if !(self.calibration_l2 >= 0.0) {
            errs.push("train.calibration_l2 must be ≥ 0".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            errs.push("train.holdout_fraction must lie in [0, 1)".into());
        }
        if self.arch.latent_dim == 0 || self.arch.hidden.is_empty() || self.arch.hidden.contains(&0) {
            errs.push("train.arch needs latent_dim ≥ 1 and nonempty positive hidden widths".into());
        }
        if self.log_every == 0 {
            errs.push("train.log_every must be ≥ 1".into());
        }
        if self.checkpoint_every == Some(0) {
            errs.push("train.checkpoint_every must be ≥ 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss_d: f64,
    pub loss_g: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GanModel,
    pub curve: Vec<CurvePoint>,
    /// `(generator updates so far, model)` snapshots requested by
    /// `checkpoint_every`; vanilla snapshots carry their own calibration.
    pub checkpoints: Vec<(usize, GanModel)>,
}

pub fn write_curve_csv<W: std::io::Write>(w: W, curve: &[CurvePoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "loss_d", "loss_g"])?;
    for p in curve {
        wr.write_record([
            p.step.to_string(),
            crate::datasets::format_f64(p.loss_d),
            crate::datasets::format_f64(p.loss_g),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Discriminator loss to minimize on one batch. For vanilla models this is
/// the binary cross-entropy `-log D(real) - log(1 - D(fake))`; for
/// Wasserstein models `E[D(fake)] - E[D(real)] + lambda * E[(|grad D(x_hat)| - 1)^2]`
/// with `x_hat` given by `interpolates`.
pub struct DiscriminatorLoss {
    tape: Tape,
    leaves: crate::nets::ParamLeaves,
}

impl DiscriminatorLoss {
    pub fn build(
        model: &GanModel,
        batch: usize,
        gp: Option<(f64, &[Array])>,
    ) -> Result<Self> {
        let d = &model.discriminator;
        let m = model.sample_dim();
        let mut tape = Tape::new();
        let real = tape.leaf("real", &[batch, m], LeafKind::Constant)?;
        let fake = tape.leaf("fake", &[batch, m], LeafKind::Constant)?;
        let leaves = d.declare(&mut tape, "d", LeafKind::Differentiable)?;
        let (out_real, _) = d.apply(&mut tape, &leaves, real)?;
        let (out_fake, _) = d.apply(&mut tape, &leaves, fake)?;
        let loss = match model.kind {
            GanKind::Vanilla => {
                let neg = tape.scale(out_real, -1.0);
                let lr = tape.softplus(neg);
                let lf = tape.softplus(out_fake);
                let a = tape.mean(lr);
                let b = tape.mean(lf);
                tape.add(a, b)?
            }
            GanKind::Wasserstein => {
                let mr = tape.mean(out_real);
                let mf = tape.mean(out_fake);
                let mut loss = tape.sub(mf, mr)?;
                if let Some((lambda, masks)) = gp {
                    let g = d.input_gradient_graph(&mut tape, &leaves, masks)?;
                    let sq = tape.row_sq_norm(g)?;
                    let norm = tape.sqrt(sq);
                    let dev = tape.add_scalar(norm, -1.0);
                    let dev2 = tape.mul(dev, dev)?;
                    let pen = tape.mean(dev2);
                    loss = tape.affine(1.0, loss, lambda, pen)?;
                }
                loss
            }
        };
        tape.set_output(loss);
        Ok(Self { tape, leaves })
    }

    pub fn value_and_grads(&self, d: &Mlp, real: &Array, fake: &Array) -> Result<(f64, Vec<Array>)> {
        let mut inputs = Inputs::new().with("real", real).with("fake", fake);
        d.bind(&self.leaves, &mut inputs);
        let names: Vec<&str> = self.leaves.names.iter().map(String::as_str).collect();
        self.tape.gradients(&inputs, &names)
    }
}

/// `x_hat = eps * real + (1 - eps) * fake`, one `eps ~ U(0,1)` per row.
pub fn interpolate<R: Rng + ?Sized>(real: &Array, fake: &Array, rng: &mut R) -> Array {
    let mut out = real.clone();
    let w = real.cols();
    for i in 0..real.rows() {
        let e: f64 = rng.random();
        let f = fake.row(i);
        for (o, &fv) in out.row_mut(i)[..w].iter_mut().zip(f) {
            *o = e * *o + (1.0 - e) * fv;
        }
    }
    out
}

/// Generator loss: `-E[D(G(z))]` (Wasserstein) or `E[softplus(-logit)]`
/// (non-saturating vanilla).
fn generator_loss(model: &GanModel, batch: usize) -> Result<(Tape, crate::nets::ParamLeaves, crate::nets::ParamLeaves)> {
    let mut tape = Tape::new();
    let z = tape.leaf("z", &[batch, model.latent_dim()], LeafKind::Constant)?;
    let gl = model.generator.declare(&mut tape, "g", LeafKind::Differentiable)?;
    let dl = model.discriminator.declare(&mut tape, "d", LeafKind::Constant)?;
    let (x, _) = model.generator.apply(&mut tape, &gl, z)?;
    let (out, _) = model.discriminator.apply(&mut tape, &dl, x)?;
    let loss = match model.kind {
        GanKind::Vanilla => {
            let neg = tape.scale(out, -1.0);
            let sp = tape.softplus(neg);
            tape.mean(sp)
        }
        GanKind::Wasserstein => {
            let m = tape.mean(out);
            tape.scale(m, -1.0)
        }
    };
    tape.set_output(loss);
    Ok((tape, gl, dl))
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    model: GanModel,
    d_state: AdamState,
    g_state: AdamState,
    d_names: Vec<String>,
    g_names: Vec<String>,
    rng: SeededRng,
}

impl<'a> Trainer<'a> {
    fn new(model: GanModel, cfg: &'a TrainConfig) -> Self {
        Self {
            d_state: AdamState::new(model.discriminator.params()),
            g_state: AdamState::new(model.generator.params()),
            d_names: model.discriminator.param_names("d"),
            g_names: model.generator.param_names("g"),
            rng: seeded(cfg.seed),
            cfg,
            model,
        }
    }

    fn latent_batch(&mut self, b: usize) -> Array {
        let n = self.model.latent_dim();
        Array::from_parts(vec![b, n], normal_vec(&mut self.rng, b * n))
    }

    fn data_batch(&mut self, data: &[[f64; 2]], b: usize) -> Array {
        let mut v = Vec::with_capacity(2 * b);
        for _ in 0..b {
            let p = data[self.rng.random_range(0..data.len())];
            v.extend_from_slice(&p);
        }
        Array::from_parts(vec![b, 2], v)
    }

    fn discriminator_step(&mut self, real: &Array, fake: &Array, step: usize) -> Result<f64> {
        let b = real.rows();
        let (loss, grads) = match self.model.kind {
            GanKind::Wasserstein if self.cfg.gp_lambda > 0.0 => {
                let xhat = interpolate(real, fake, &mut self.rng);
                let masks = self.model.discriminator.slope_masks(&xhat)?;
                let l = DiscriminatorLoss::build(&self.model, b, Some((self.cfg.gp_lambda, &masks)))?;
                l.value_and_grads(&self.model.discriminator, real, fake)?
            }
            _ => DiscriminatorLoss::build(&self.model, b, None)?
                .value_and_grads(&self.model.discriminator, real, fake)?,
        };
        check_loss(loss, step, "discriminator")?;
        adam_update(
            &mut self.d_state,
            self.model.discriminator.params_mut(),
            &grads,
            &self.d_names,
            &self.cfg.adam,
        )
        .map_err(|e| diverged(step, e))?;
        Ok(loss)
    }

    fn generator_step(&mut self, step: usize) -> Result<f64> {
        let b = self.cfg.batch_size;
        let z = self.latent_batch(b);
        let (tape, gl, dl) = generator_loss(&self.model, b)?;
        let mut inputs = Inputs::new().with("z", &z);
        self.model.generator.bind(&gl, &mut inputs);
        self.model.discriminator.bind(&dl, &mut inputs);
        let names: Vec<&str> = gl.names.iter().map(String::as_str).collect();
        let (loss, grads) = tape.gradients(&inputs, &names)?;
        drop(inputs);
        check_loss(loss, step, "generator")?;
        adam_update(
            &mut self.g_state,
            self.model.generator.params_mut(),
            &grads,
            &self.g_names,
            &self.cfg.adam,
        )
        .map_err(|e| diverged(step, e))?;
        Ok(loss)
    }
}

fn check_loss(loss: f64, step: usize, which: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("{which} loss is {loss}"),
        })
    }
}

fn diverged(step: usize, e: Error) -> Error {
    Error::Diverged {
        step,
        detail: e.to_string(),
    }
}

/// Trains a fresh model of `cfg.arch` on `data` with the objective selected
/// by `cfg.gan_kind`.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    match cfg.gan_kind {
        GanKind::Vanilla => train_vanilla_gan(data, cfg),
        GanKind::Wasserstein => train_wgan_gp(data, cfg),
    }
}

fn fresh_model(cfg: &TrainConfig) -> Result<GanModel> {
    GanModel::with_hidden(
        cfg.gan_kind,
        cfg.arch.latent_dim,
        2,
        &cfg.arch.hidden,
        crate::rng::derive_seed(cfg.seed, "init"),
    )
}

fn run_loop(
    trainer: &mut Trainer<'_>,
    points: &[[f64; 2]],
    mut snapshot: impl FnMut(usize, &GanModel) -> Result<()>,
) -> Result<Vec<CurvePoint>> {
    let cfg = trainer.cfg;
    let b = cfg.batch_size;
    let mut curve = Vec::new();
    for step in 0..cfg.iterations {
        let mut loss_d = 0.0;
        for _ in 0..cfg.critic_steps() {
            let real = trainer.data_batch(points, b);
            let z = trainer.latent_batch(b);
            let fake = trainer.model.generator_forward(&z)?;
            loss_d = trainer.discriminator_step(&real, &fake, step)?;
        }
        let loss_g = trainer.generator_step(step)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.iterations {
            curve.push(CurvePoint {
                step,
                loss_d,
                loss_g,
            });
        }
        if cfg.checkpoint_every.is_some_and(|k| (step + 1) % k == 0) {
            snapshot(step + 1, &trainer.model)?;
        }
    }
    Ok(curve)
}

/// WGAN-GP: critic maximizes `E[D(real)] - E[D(fake)]` minus the gradient
/// penalty on random interpolates; generator maximizes `E[D(G(z))]`.
pub fn train_wgan_gp(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.gan_kind != GanKind::Wasserstein {
        return Err(Error::InvalidArgument("train_wgan_gp needs gan_kind = wasserstein".into()));
    }
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut trainer = Trainer::new(fresh_model(cfg)?, cfg);
    let mut checkpoints = Vec::new();
    let curve = run_loop(&mut trainer, &data.points, |step, m| {
        checkpoints.push((step, m.clone()));
        Ok(())
    })?;
    Ok(TrainOutcome {
        model: trainer.model,
        curve,
        checkpoints,
    })
}

/// Vanilla GAN with the non-saturating generator loss. A held-out slice of
/// the data is used afterwards to fit a logistic calibration of the logits.
pub fn train_vanilla_gan(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.gan_kind != GanKind::Vanilla {
        return Err(Error::InvalidArgument("train_vanilla_gan needs gan_kind = vanilla".into()));
    }
    cfg.validate()?;
    let mut points = data.points.clone();
    let mut split_rng = seeded(crate::rng::derive_seed(cfg.seed, "holdout"));
    points.shuffle(&mut split_rng);
    let n_hold = ((points.len() as f64) * cfg.holdout_fraction).floor() as usize;
    let (held, train_pts) = points.split_at(n_hold);
    if train_pts.is_empty() {
        return Err(Error::InvalidArgument("no training points after holdout split".into()));
    }
    let calibrate = |model: &mut GanModel, rng: &mut SeededRng| -> Result<()> {
        if held.is_empty() {
            return Ok(());
        }
        let real = Array::from_parts(vec![held.len(), 2], held.iter().flatten().copied().collect());
        let z = Array::from_parts(
            vec![held.len(), model.latent_dim()],
            normal_vec(rng, held.len() * model.latent_dim()),
        );
        let fake = model.generator_forward(&z)?;
        let rl = model.raw_scores(&real)?;
        let fl = model.raw_scores(&fake)?;
        model.calibration = Some(fit_platt(&rl, &fl, cfg.calibration_l2)?);
        Ok(())
    };
    let mut trainer = Trainer::new(fresh_model(cfg)?, cfg);
    let mut checkpoints = Vec::new();
    let curve = run_loop(&mut trainer, train_pts, |step, m| {
        let mut m = m.clone();
        calibrate(&mut m, &mut seeded(crate::rng::derive_seed(cfg.seed, &format!("calibration:{step}"))))?;
        checkpoints.push((step, m));
        Ok(())
    })?;
    let mut model = trainer.model;
    calibrate(&mut model, &mut split_rng)?;
    Ok(TrainOutcome {
        model,
        curve,
        checkpoints,
    })
}

/// Trains only the discriminator of `model`, with "fake" batches drawn by
/// `fake_source`. Used to probe the optimal-discriminator limit.
pub fn fit_discriminator<F>(
    model: &mut GanModel,
    real_points: &[[f64; 2]],
    mut fake_source: F,
    cfg: &TrainConfig,
) -> Result<f64>
where
    F: FnMut(&mut SeededRng, usize) -> Array,
{
    let mut trainer = Trainer::new(model.clone(), cfg);
    let mut loss = f64::NAN;
    for step in 0..cfg.iterations {
        let real = trainer.data_batch(real_points, cfg.batch_size);
        let fake = fake_source(&mut trainer.rng, cfg.batch_size);
        loss = trainer.discriminator_step(&real, &fake, step)?;
    }
    *model = trainer.model;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::sample_grid_mixture;
    use crate::nets::{Dense, Head, NetConfig};

    #[test]
    fn adam_defaults() {
        let h = AdamHyper::default();
        assert_eq!((h.lr, h.beta1, h.beta2), (1e-4, 0.5, 0.9));
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut p = vec![Array::vector(vec![1.0, -2.0]), Array::scalar(3.0)];
        let before = p.clone();
        let mut s = AdamState::new(p.iter());
        let g = vec![Array::zeros(&[2]), Array::zeros(&[])];
        adam_update(&mut s, p.iter_mut(), &g, &[], &AdamHyper::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Array::vector(vec![0.0, 0.0, 0.0])];
        let mut s = AdamState::new(p.iter());
        let g = vec![Array::vector(vec![0.3, -7.0, 1e3])];
        let h = AdamHyper::default();
        adam_update(&mut s, p.iter_mut(), &g, &[], &h).unwrap();
        for (w, gi) in p[0].data().iter().zip(g[0].data()) {
            assert!((w + h.lr * gi.signum()).abs() < 1e-10, "{w}");
        }
    }

    #[test]
    fn nan_gradient_names_the_block() {
        let mut p = vec![Array::vector(vec![0.0]), Array::vector(vec![0.0])];
        let mut s = AdamState::new(p.iter());
        let g = vec![Array::vector(vec![0.0]), Array::vector(vec![f64::NAN])];
        let names = vec!["g.w0".to_string(), "g.b0".to_string()];
        match adam_update(&mut s, p.iter_mut(), &g, &names, &AdamHyper::default()) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("g.b0")),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.t, 0);
    }

    fn small_cfg(kind: GanKind) -> TrainConfig {
        let mut cfg = TrainConfig::new(kind);
        cfg.arch.hidden = vec![16, 16];
        cfg.batch_size = 32;
        cfg.iterations = 20;
        cfg.log_every = 5;
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn critic_loss_gradients_match_finite_differences() {
        let model = GanModel::with_hidden(GanKind::Wasserstein, 2, 2, &[6, 5], 9).unwrap();
        let mut rng = seeded(3);
        let real = Array::from_parts(vec![4, 2], normal_vec(&mut rng, 8));
        let fake = Array::from_parts(vec![4, 2], normal_vec(&mut rng, 8));
        let xhat = interpolate(&real, &fake, &mut rng);
        let masks = model.discriminator.slope_masks(&xhat).unwrap();
        for gp in [None, Some((10.0, masks.as_slice()))] {
            let l = DiscriminatorLoss::build(&model, 4, gp).unwrap();
            let mut inputs = Inputs::new().with("real", &real).with("fake", &fake);
            model.discriminator.bind(&l.leaves, &mut inputs);
            for name in &l.leaves.names {
                let r = crate::tensor::finite_difference_check(&l.tape, &inputs, name, 1e-6, 1e-5).unwrap();
                assert!(r.pass, "{name} gp={}: {r:?}", gp.is_some());
            }
        }
    }

    #[test]
    fn generator_loss_gradients_match_finite_differences() {
        for kind in [GanKind::Wasserstein, GanKind::Vanilla] {
            let model = GanModel::with_hidden(kind, 2, 2, &[6, 5], 4).unwrap();
            let z = Array::from_parts(vec![4, 2], normal_vec(&mut seeded(8), 8));
            let (tape, gl, dl) = generator_loss(&model, 4).unwrap();
            let mut inputs = Inputs::new().with("z", &z);
            model.generator.bind(&gl, &mut inputs);
            model.discriminator.bind(&dl, &mut inputs);
            for name in &gl.names {
                let r = crate::tensor::finite_difference_check(&tape, &inputs, name, 1e-6, 1e-5).unwrap();
                assert!(r.pass, "{name} {kind:?}: {r:?}");
            }
        }
    }

    #[test]
    fn critic_steps_separate_real_from_fake() {
        // Fixed, well separated point clouds: a few hundred critic updates
        // must rank real above fake.
        let real_pts: Vec<[f64; 2]> = (0..256).map(|i| [1.0 + 0.01 * (i % 7) as f64, 1.0]).collect();
        let mut model = GanModel::with_hidden(GanKind::Wasserstein, 2, 2, &[16, 16], 1).unwrap();
        let mut cfg = small_cfg(GanKind::Wasserstein);
        cfg.iterations = 300;
        cfg.adam.lr = 1e-3;
        fit_discriminator(&mut model, &real_pts, |_, b| Array::from_parts(vec![b, 2], vec![-1.0; 2 * b]), &cfg).unwrap();
        let dr = model.raw_scores(&Array::vector(vec![1.0, 1.0])).unwrap()[0];
        let df = model.raw_scores(&Array::vector(vec![-1.0, -1.0])).unwrap()[0];
        assert!(dr > df + 1.0, "real {dr} fake {df}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = sample_grid_mixture(5, 1.0, 0.1, 2000, 1).unwrap();
        for kind in [GanKind::Wasserstein, GanKind::Vanilla] {
            let a = train(&data, &small_cfg(kind)).unwrap();
            let b = train(&data, &small_cfg(kind)).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.curve.last().unwrap().step, 19);
        }
    }

    #[test]
    fn checkpoints_follow_the_schedule() {
        let data = sample_grid_mixture(5, 1.0, 0.1, 2000, 1).unwrap();
        for kind in [GanKind::Wasserstein, GanKind::Vanilla] {
            let mut cfg = small_cfg(kind);
            cfg.checkpoint_every = Some(8);
            let out = train(&data, &cfg).unwrap();
            let steps: Vec<usize> = out.checkpoints.iter().map(|c| c.0).collect();
            assert_eq!(steps, vec![8, 16]);
            assert!(out.checkpoints.iter().all(|c| c.1.calibration.is_some() == (kind == GanKind::Vanilla)));
            let plain = train(&data, &small_cfg(kind)).unwrap();
            assert_eq!(plain.model.generator, out.model.generator);
        }
    }

    #[test]
    fn vanilla_training_attaches_a_calibration() {
        let data = sample_grid_mixture(5, 1.0, 0.1, 2000, 1).unwrap();
        let out = train(&data, &small_cfg(GanKind::Vanilla)).unwrap();
        assert!(out.model.calibration.is_some());
    }

    #[test]
    fn equal_densities_drive_discriminator_to_one_half() {
        let data = sample_grid_mixture(5, 1.0, 0.1, 20_000, 2).unwrap();
        let mut cfg = small_cfg(GanKind::Vanilla);
        cfg.iterations = 1500;
        cfg.batch_size = 256;
        cfg.adam.lr = 1e-3;
        let mut model = GanModel::with_hidden(GanKind::Vanilla, 2, 2, &[16, 16], 3).unwrap();
        let pts = data.points.clone();
        let loss = fit_discriminator(&mut model, &data.points, |rng, b| {
            let mut v = Vec::with_capacity(2 * b);
            for _ in 0..b {
                v.extend_from_slice(&pts[rng.random_range(0..pts.len())]);
            }
            Array::from_parts(vec![b, 2], v)
        }, &cfg)
        .unwrap();
        assert!((loss - 2.0 * 2f64.ln()).abs() < 0.05, "{loss}");
        for p in data.points.iter().take(200) {
            let d = model.discriminator_score(p).unwrap();
            assert!((d - 0.5).abs() < 0.1, "{d}");
        }
    }

    fn linear_critic(v: [f64; 2]) -> GanModel {
        let cfg = NetConfig {
            layer_widths: vec![2, 2, 1],
            slope: 1.0,
            head: Head::Identity,
            init_seed: 0,
        };
        let d = Mlp::from_layers(
            cfg,
            vec![
                Dense {
                    weight: Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
                    bias: Array::zeros(&[2]),
                },
                Dense {
                    weight: Array::from_rows(&[vec![v[0]], vec![v[1]]]),
                    bias: Array::zeros(&[1]),
                },
            ],
        )
        .unwrap();
        let g = Mlp::new(NetConfig::new(vec![2, 4, 2], Head::Identity, 1)).unwrap();
        GanModel::new(GanKind::Wasserstein, g, d).unwrap()
    }

    #[test]
    fn unit_norm_linear_critic_has_zero_penalty() {
        let model = linear_critic([0.6, 0.8]);
        let real = Array::matrix(3, 2, vec![0.1, 0.2, 0.3, -0.4, 2.0, 1.0]).unwrap();
        let fake = Array::matrix(3, 2, vec![-1.0, 0.0, 0.5, 0.5, 0.0, 3.0]).unwrap();
        let xhat = interpolate(&real, &fake, &mut seeded(0));
        let masks = model.discriminator.slope_masks(&xhat).unwrap();
        let with_gp = DiscriminatorLoss::build(&model, 3, Some((10.0, &masks))).unwrap();
        let without = DiscriminatorLoss::build(&model, 3, None).unwrap();
        let (a, _) = with_gp.value_and_grads(&model.discriminator, &real, &fake).unwrap();
        let (b, _) = without.value_and_grads(&model.discriminator, &real, &fake).unwrap();
        assert!((a - b).abs() < 1e-14, "{a} {b}");
    }

    #[test]
    fn zero_lambda_critic_loss_is_mean_difference() {
        let model = GanModel::with_hidden(GanKind::Wasserstein, 2, 2, &[8], 4).unwrap();
        let real = Array::matrix(4, 2, vec![0.1, 0.2, 0.3, -0.4, 2.0, 1.0, 0.0, 0.0]).unwrap();
        let fake = Array::matrix(4, 2, vec![-1.0, 0.0, 0.5, 0.5, 0.0, 3.0, 1.0, 1.0]).unwrap();
        let xhat = interpolate(&real, &fake, &mut seeded(0));
        let masks = model.discriminator.slope_masks(&xhat).unwrap();
        let l = DiscriminatorLoss::build(&model, 4, Some((0.0, &masks))).unwrap();
        let (loss, _) = l.value_and_grads(&model.discriminator, &real, &fake).unwrap();
        let mean = |x: &Array| model.raw_scores(x).unwrap().iter().sum::<f64>() / 4.0;
        assert!((loss - (mean(&fake) - mean(&real))).abs() < 1e-14);
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let mut cfg = TrainConfig::new(GanKind::Wasserstein);
        cfg.adam.lr = 0.0;
        cfg.adam.beta2 = 1.0;
        cfg.gp_lambda = -1.0;
        match cfg.validate() {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }
}
