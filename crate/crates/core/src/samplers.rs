//! Latent-space MCMC for GAN generators.
//!
//! Every sampler here runs two coupled chains: a latent chain `z_k` and its
//! image `x_k = G(z_k)`. Proposals are made in latent space and pushed through
//! the generator; the acceptance test only needs the prior, the latent
//! proposal density and the discriminator, because the generator volume
//! terms of the pushed-forward proposal and of the generator density cancel.
//! No function in this module evaluates a generator Jacobian.
//!
//! All acceptance rules are expressed through a log density-ratio estimate
//! `r(x) ~ log p_data(x) / p_g(x)`:
//!
//! * vanilla GAN: `r = logit D(x) = -log(1/D - 1)` (calibrated when a
//!   calibration is attached to the model);
//! * Wasserstein GAN: `r = D(x)`, the critic value.
//!
//! With this convention the Langevin drift is `(tau / 2) (grad_z r - z)` for
//! both kinds, and the Metropolis-Hastings log-ratio is
//! `log p0(z') + log q(z_k | z') - log p0(z_k) - log q(z' | z_k) + r(x') - r(x_k)`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{GanKind, GanModel};
use crate::rng::{normal_vec, seeded};
use crate::tensor::{Array, Inputs, LeafKind, Tape};

/// Discriminator output at one sample together with the log-ratio it implies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// `D(x)`: a probability for vanilla models, a critic value otherwise.
    pub d: f64,
    pub log_ratio: f64,
}

impl Score {
    pub fn from_logit(logit: f64) -> Self {
        Self {
            d: crate::tensor::sigmoid(logit),
            log_ratio: logit,
        }
    }

    /// Vanilla score from a probability strictly inside (0, 1).
    pub fn from_probability(d: f64) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::DegenerateScore(d));
        }
        Ok(Self {
            d,
            log_ratio: d.ln() - (-d).ln_1p(),
        })
    }

    pub fn critic(v: f64) -> Self {
        Self { d: v, log_ratio: v }
    }

    pub fn for_kind(kind: GanKind, d: f64) -> Result<Self> {
        match kind {
            GanKind::Vanilla => Self::from_probability(d),
            GanKind::Wasserstein if d.is_finite() => Ok(Self::critic(d)),
            GanKind::Wasserstein => Err(Error::NonFinite("critic value".into())),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_ratio.is_finite() && self.d.is_finite()
    }
}

/// Generator images and scores for a batch of latents, plus optionally the
/// gradient of each row's log-ratio with respect to its latent.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x: Array,
    pub scores: Vec<Score>,
    pub grad: Option<Array>,
}

/// What a sampler needs from a generator/discriminator pair. Implemented by
/// trained [`GanModel`]s and by the analytic oracles.
pub trait LatentModel: Sync {
    fn gan_kind(&self) -> GanKind;
    fn latent_dim(&self) -> usize;
    fn sample_dim(&self) -> usize;
    /// Images and scores of the rows of `z` (`[b, n]`). With `with_grad` the
    /// result carries `grad_z r` with the same shape as `z`.
    fn evaluate(&self, z: &Array, with_grad: bool) -> Result<Evaluation>;
    /// Scores of sample-space points (`[b, m]`).
    fn score_samples(&self, x: &Array) -> Result<Vec<Score>>;
}

impl LatentModel for GanModel {
    fn gan_kind(&self) -> GanKind {
        self.kind
    }

    fn latent_dim(&self) -> usize {
        GanModel::latent_dim(self)
    }

    fn sample_dim(&self) -> usize {
        GanModel::sample_dim(self)
    }

    fn evaluate(&self, z: &Array, with_grad: bool) -> Result<Evaluation> {
        let z = z.as_batch();
        check_latent_batch(self, &z)?;
        if !with_grad {
            let x = self.generator.forward(&z)?;
            let scores = self.score_samples(&x)?;
            return Ok(Evaluation { x, scores, grad: None });
        }
        let mut tape = Tape::new();
        let zl = tape.leaf("z", z.shape(), LeafKind::Differentiable)?;
        let gl = self.generator.declare(&mut tape, "g", LeafKind::Constant)?;
        let dl = self.discriminator.declare(&mut tape, "d", LeafKind::Constant)?;
        let (x, _) = self.generator.apply(&mut tape, &gl, zl)?;
        let (raw, _) = self.discriminator.apply(&mut tape, &dl, x)?;
        let total = tape.sum(raw);
        tape.set_output(total);
        let mut inputs = Inputs::new().with("z", &z);
        self.generator.bind(&gl, &mut inputs);
        self.discriminator.bind(&dl, &mut inputs);
        let (vals, mut grads) = tape.backward(&inputs, &["z"])?;
        let mut grad = grads.remove(0);
        let x = vals.get(x).clone();
        let raw = vals.get(raw).data().to_vec();
        let scores = raw.iter().map(|&r| self.score_from_raw(r)).collect();
        // d r / d raw is the calibration slope for vanilla models, 1 otherwise.
        if let (GanKind::Vanilla, Some(c)) = (self.kind, &self.calibration) {
            grad.data_mut().iter_mut().for_each(|g| *g *= c.a);
        }
        Ok(Evaluation {
            x,
            scores,
            grad: Some(grad),
        })
    }

    fn score_samples(&self, x: &Array) -> Result<Vec<Score>> {
        Ok(self.raw_scores(x)?.into_iter().map(|r| self.score_from_raw(r)).collect())
    }
}

impl GanModel {
    fn score_from_raw(&self, raw: f64) -> Score {
        let l = self.effective_logit(raw);
        match self.kind {
            GanKind::Vanilla => Score::from_logit(l),
            GanKind::Wasserstein => Score::critic(l),
        }
    }
}

fn check_latent_batch<M: LatentModel + ?Sized>(model: &M, z: &Array) -> Result<()> {
    if z.cols() != model.latent_dim() {
        return Err(Error::Dimension {
            expected: model.latent_dim(),
            got: z.cols(),
        });
    }
    Ok(())
}

/// One point of the paired chains: a latent, its image and the cached score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedState {
    z: Vec<f64>,
    x: Vec<f64>,
    score: Score,
    step: usize,
}

impl PairedState {
    /// Evaluates the model at `z`, so `x` and the score are always consistent.
    pub fn new<M: LatentModel + ?Sized>(model: &M, z: Vec<f64>, step: usize) -> Result<Self> {
        if z.len() != model.latent_dim() {
            return Err(Error::Dimension {
                expected: model.latent_dim(),
                got: z.len(),
            });
        }
        let ev = model.evaluate(&Array::from_parts(vec![1, z.len()], z.clone()), false)?;
        Ok(Self {
            x: ev.x.into_data(),
            score: ev.scores[0],
            z,
            step,
        })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }
    pub fn x(&self) -> &[f64] {
        &self.x
    }
    pub fn d_score(&self) -> f64 {
        self.score.d
    }
    pub fn score(&self) -> Score {
        self.score
    }
    pub fn step(&self) -> usize {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// Fresh draws from the prior, ignoring the current state.
    Independent,
    /// One Langevin step on the latent with drift `(tau / 2)(grad r - z)`.
    LatentLangevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub proposal: ProposalKind,
    pub tau: f64,
    /// Chain length including the initial state.
    pub steps: usize,
    pub mh_correction: bool,
    pub gan_kind: GanKind,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn rep(gan_kind: GanKind, tau: f64, steps: usize, seed: u64) -> Self {
        Self {
            proposal: ProposalKind::LatentLangevin,
            tau,
            steps,
            mh_correction: true,
            gan_kind,
            seed,
        }
    }

    pub fn ddls(gan_kind: GanKind, tau: f64, steps: usize, seed: u64) -> Self {
        Self {
            mh_correction: false,
            ..Self::rep(gan_kind, tau, steps, seed)
        }
    }

    pub fn mh_gan(gan_kind: GanKind, steps: usize, seed: u64) -> Self {
        Self {
            proposal: ProposalKind::Independent,
            tau: 1.0,
            steps,
            mh_correction: true,
            gan_kind,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("steps must be ≥ 1".to_string());
        }
        if self.proposal == ProposalKind::LatentLangevin && !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau must be > 0, got {}", self.tau));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub z_prop: Vec<f64>,
    pub alpha: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRecord {
    /// `steps` states; `states[0]` is the initial generator sample.
    pub states: Vec<PairedState>,
    /// `steps - 1` transitions; transition `k` produced `states[k + 1]`.
    pub transitions: Vec<Transition>,
    pub seed: u64,
}

impl ChainRecord {
    pub fn last(&self) -> &PairedState {
        self.states.last().expect("chains hold at least one state")
    }
}

/// `log N(z; 0, I)`.
pub fn log_p0(z: &[f64]) -> f64 {
    -0.5 * z.len() as f64 * (2.0 * PI).ln() - 0.5 * sq_norm(z)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn langevin_drift(grad_r: &[f64], z: &[f64], tau: f64) -> Vec<f64> {
    grad_r.iter().zip(z).map(|(g, zi)| 0.5 * tau * (g - zi)).collect()
}

/// Gaussian log density of `to` under a Langevin step from `from` with
/// the given drift.
fn log_q_given_drift(from: &[f64], to: &[f64], drift: &[f64], tau: f64) -> f64 {
    let n = from.len() as f64;
    let r2: f64 = to
        .iter()
        .zip(from)
        .zip(drift)
        .map(|((t, f), d)| (t - f - d).powi(2))
        .sum();
    -0.5 * n * (2.0 * PI * tau).ln() - r2 / (2.0 * tau)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")))
    }
}

/// Latent Langevin drift at `z`: `(tau / 2)(grad_z r(G(z)) - z)`.
pub fn drift<M: LatentModel + ?Sized>(model: &M, z: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let ev = model.evaluate(&Array::from_parts(vec![1, z.len()], z.to_vec()), true)?;
    if !ev.scores[0].is_finite() {
        return Err(Error::DegenerateScore(ev.scores[0].d));
    }
    let g = ev.grad.expect("requested gradient");
    if !g.is_finite() {
        return Err(Error::NonFinite("latent gradient of the log-ratio".into()));
    }
    Ok(langevin_drift(g.data(), z, tau))
}

/// Draws `z' = z_k + drift(z_k) + sqrt(tau) eps` and returns it with the drift.
pub fn l2mc_propose<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z_k: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if z_k.len() != model.latent_dim() {
        return Err(Error::Dimension {
            expected: model.latent_dim(),
            got: z_k.len(),
        });
    }
    if z_k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent state".into()));
    }
    let d = drift(model, z_k, tau)?;
    let eps = normal_vec(rng, z_k.len());
    let s = tau.sqrt();
    let z = z_k.iter().zip(&d).zip(&eps).map(|((z, d), e)| z + d + s * e).collect();
    Ok((z, d))
}

/// `log q(z_to | z_from)` for the latent Langevin proposal; the drift is
/// evaluated at `z_from`.
pub fn langevin_log_q<M: LatentModel + ?Sized>(
    model: &M,
    z_from: &[f64],
    z_to: &[f64],
    tau: f64,
) -> Result<f64> {
    if z_to.len() != z_from.len() {
        return Err(Error::Dimension {
            expected: z_from.len(),
            got: z_to.len(),
        });
    }
    let d = drift(model, z_from, tau)?;
    Ok(log_q_given_drift(z_from, z_to, &d, tau))
}

/// `log alpha` before clipping, from log-ratio scores.
pub fn log_acceptance(
    p0_log_k: f64,
    p0_log_prime: f64,
    logq_fwd: f64,
    logq_rev: f64,
    r_k: f64,
    r_prime: f64,
) -> f64 {
    (p0_log_prime + logq_rev) - (p0_log_k + logq_fwd) + (r_prime - r_k)
}

fn alpha_from_log(log_alpha: f64) -> f64 {
    if log_alpha.is_nan() {
        0.0
    } else if log_alpha >= 0.0 {
        1.0
    } else {
        log_alpha.exp()
    }
}

fn bernoulli<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < alpha
}

/// REP acceptance from latent densities and discriminator values. For
/// vanilla models `d_k`, `d_prime` are probabilities in (0, 1); for
/// Wasserstein models they are critic values.
#[allow(clippy::too_many_arguments)]
pub fn accept_rep<R: Rng + ?Sized>(
    p0_log_k: f64,
    p0_log_prime: f64,
    logq_fwd: f64,
    logq_rev: f64,
    d_k: f64,
    d_prime: f64,
    gan_kind: GanKind,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let alpha = rep_alpha(p0_log_k, p0_log_prime, logq_fwd, logq_rev, d_k, d_prime, gan_kind)?;
    Ok((alpha, bernoulli(alpha, rng)))
}

/// The deterministic part of [`accept_rep`].
pub fn rep_alpha(
    p0_log_k: f64,
    p0_log_prime: f64,
    logq_fwd: f64,
    logq_rev: f64,
    d_k: f64,
    d_prime: f64,
    gan_kind: GanKind,
) -> Result<f64> {
    let sk = Score::for_kind(gan_kind, d_k)?;
    let sp = Score::for_kind(gan_kind, d_prime)?;
    for v in [p0_log_k, p0_log_prime, logq_fwd, logq_rev] {
        if !v.is_finite() {
            return Err(Error::NonFinite("log density in acceptance ratio".into()));
        }
    }
    Ok(alpha_from_log(log_acceptance(
        p0_log_k,
        p0_log_prime,
        logq_fwd,
        logq_rev,
        sk.log_ratio,
        sp.log_ratio,
    )))
}

/// `min(1, (1/d_k - 1) / (1/d_prime - 1))`.
pub fn mh_alpha(d_k: f64, d_prime: f64) -> Result<f64> {
    for d in [d_k, d_prime] {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::DegenerateScore(d));
        }
    }
    Ok(((1.0 / d_k - 1.0) / (1.0 / d_prime - 1.0)).min(1.0))
}

pub fn accept_independent_mh<R: Rng + ?Sized>(d_k: f64, d_prime: f64, rng: &mut R) -> Result<(f64, bool)> {
    let alpha = mh_alpha(d_k, d_prime)?;
    Ok((alpha, bernoulli(alpha, rng)))
}

/// Chains abort after this many consecutive non-finite proposals.
pub const MAX_CONSECUTIVE_NONFINITE: usize = 50;

/// Chains per lockstep batch. Fixed so results do not depend on the
/// number of worker threads.
pub const CHAIN_BATCH: usize = 50;

/// Runs one chain of `cfg.steps` states; randomness comes from `rng`.
pub fn run_chain<M, R>(model: &M, cfg: &SamplerConfig, rng: &mut R) -> Result<ChainRecord>
where
    M: LatentModel + ?Sized,
    R: Rng,
{
    let mut recs = run_batch(model, cfg, &mut [rng], &[cfg.seed], 0)?;
    Ok(recs.remove(0))
}

/// Runs `n_chains` chains; chain `i` draws from a generator seeded with
/// `cfg.seed + i`. With `parallel` the fixed-size batches of chains are
/// spread over the rayon pool; the output is identical either way.
pub fn run_chains<M: LatentModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    n_chains: usize,
    parallel: bool,
) -> Result<Vec<ChainRecord>> {
    cfg.validate()?;
    let starts: Vec<usize> = (0..n_chains).step_by(CHAIN_BATCH).collect();
    let work = |&start: &usize| -> Result<Vec<ChainRecord>> {
        let end = (start + CHAIN_BATCH).min(n_chains);
        let seeds: Vec<u64> = (start..end).map(|i| cfg.seed.wrapping_add(i as u64)).collect();
        let mut rngs: Vec<_> = seeds.iter().map(|&s| seeded(s)).collect();
        let mut refs: Vec<_> = rngs.iter_mut().collect();
        run_batch(model, cfg, &mut refs, &seeds, start)
    };
    let batches: Vec<Result<Vec<ChainRecord>>> = if parallel {
        starts.par_iter().map(work).collect()
    } else {
        starts.iter().map(work).collect()
    };
    let mut out = Vec::with_capacity(n_chains);
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

/// Per-chain mutable state of a lockstep batch.
struct Live {
    z: Vec<f64>,
    x: Vec<f64>,
    score: Score,
    grad: Option<Vec<f64>>,
    nonfinite_run: usize,
}

fn run_batch<M, R>(
    model: &M,
    cfg: &SamplerConfig,
    rngs: &mut [&mut R],
    seeds: &[u64],
    first_chain: usize,
) -> Result<Vec<ChainRecord>>
where
    M: LatentModel + ?Sized,
    R: Rng,
{
    cfg.validate()?;
    if cfg.gan_kind != model.gan_kind() {
        return Err(Error::InvalidArgument(format!(
            "sampler configured for {:?} but model is {:?}",
            cfg.gan_kind,
            model.gan_kind()
        )));
    }
    let n = model.latent_dim();
    let b = rngs.len();
    let langevin = cfg.proposal == ProposalKind::LatentLangevin;
    let sqrt_tau = cfg.tau.sqrt();

    let z0: Vec<f64> = rngs.iter_mut().flat_map(|r| normal_vec(&mut **r, n)).collect();
    let z0 = Array::from_parts(vec![b, n], z0);
    let ev = model.evaluate(&z0, langevin)?;
    let m = ev.x.cols();
    let mut live: Vec<Live> = (0..b)
        .map(|i| Live {
            z: z0.row(i).to_vec(),
            x: ev.x.row(i).to_vec(),
            score: ev.scores[i],
            grad: ev.grad.as_ref().map(|g| g.row(i).to_vec()),
            nonfinite_run: 0,
        })
        .collect();
    for (i, l) in live.iter().enumerate() {
        if !l.score.is_finite() || l.grad.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::ChainDiverged {
                chain: first_chain + i,
                step: 0,
                consecutive: 0,
            });
        }
    }

    let mut records: Vec<ChainRecord> = live
        .iter()
        .zip(seeds)
        .map(|(l, &seed)| ChainRecord {
            states: vec![PairedState {
                z: l.z.clone(),
                x: l.x.clone(),
                score: l.score,
                step: 0,
            }],
            transitions: Vec::with_capacity(cfg.steps.saturating_sub(1)),
            seed,
        })
        .collect();

    for step in 1..cfg.steps {
        // Proposals.
        let mut zp = Vec::with_capacity(b * n);
        let mut fwd_drift: Vec<Vec<f64>> = Vec::with_capacity(b);
        for (l, rng) in live.iter().zip(rngs.iter_mut()) {
            let eps = normal_vec(&mut **rng, n);
            if langevin {
                let d = langevin_drift(l.grad.as_ref().expect("langevin keeps gradients"), &l.z, cfg.tau);
                zp.extend(l.z.iter().zip(&d).zip(&eps).map(|((z, d), e)| z + d + sqrt_tau * e));
                fwd_drift.push(d);
            } else {
                zp.extend(eps);
            }
        }
        let zp = Array::from_parts(vec![b, n], zp);
        let ev = if zp.is_finite() {
            model.evaluate(&zp, langevin)?
        } else {
            Evaluation {
                x: Array::filled(&[b, m], f64::NAN),
                scores: vec![Score { d: f64::NAN, log_ratio: f64::NAN }; b],
                grad: langevin.then(|| Array::filled(&[b, n], f64::NAN)),
            }
        };

        for i in 0..b {
            let l = &mut live[i];
            let rng = &mut *rngs[i];
            let z_new = zp.row(i);
            let s_new = ev.scores[i];
            let g_new = ev.grad.as_ref().map(|g| g.row(i));
            let finite = z_new.iter().all(|v| v.is_finite())
                && ev.x.row(i).iter().all(|v| v.is_finite())
                && s_new.is_finite()
                && g_new.is_none_or(|g| g.iter().all(|v| v.is_finite()));
            let (alpha, accepted) = if !finite {
                l.nonfinite_run += 1;
                if l.nonfinite_run >= MAX_CONSECUTIVE_NONFINITE {
                    return Err(Error::ChainDiverged {
                        chain: first_chain + i,
                        step,
                        consecutive: l.nonfinite_run,
                    });
                }
                (0.0, false)
            } else {
                l.nonfinite_run = 0;
                if cfg.mh_correction {
                    let (lq_fwd, lq_rev) = if langevin {
                        let rev_drift = langevin_drift(g_new.expect("gradient"), z_new, cfg.tau);
                        (
                            log_q_given_drift(&l.z, z_new, &fwd_drift[i], cfg.tau),
                            log_q_given_drift(z_new, &l.z, &rev_drift, cfg.tau),
                        )
                    } else {
                        (log_p0(z_new), log_p0(&l.z))
                    };
                    let la = log_acceptance(
                        log_p0(&l.z),
                        log_p0(z_new),
                        lq_fwd,
                        lq_rev,
                        l.score.log_ratio,
                        s_new.log_ratio,
                    );
                    let alpha = alpha_from_log(la);
                    (alpha, bernoulli(alpha, rng))
                } else {
                    (1.0, true)
                }
            };
            if accepted {
                l.z = z_new.to_vec();
                l.x = ev.x.row(i).to_vec();
                l.score = s_new;
                l.grad = g_new.map(<[f64]>::to_vec);
            }
            let rec = &mut records[i];
            rec.transitions.push(Transition {
                z_prop: z_new.to_vec(),
                alpha,
                accepted,
            });
            rec.states.push(PairedState {
                z: l.z.clone(),
                x: l.x.clone(),
                score: l.score,
                step,
            });
        }
    }
    Ok(records)
}

/// How the DRS shift `gamma` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum GammaRule {
    /// `gamma` is this quantile (in [0, 1]) of `r - log M` over the burn-in set.
    Percentile(f64),
    Fixed(f64),
}

impl Default for GammaRule {
    fn default() -> Self {
        GammaRule::Percentile(0.8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrsOutcome {
    /// Indices of accepted candidates, in stream order.
    pub accepted: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub log_m: f64,
    pub gamma: f64,
    /// Every burn-in score was identical, so `log M` carries no information.
    pub degenerate: bool,
}

/// Linear-interpolation quantile of a sorted, nonempty slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Discriminator rejection sampling, reconstructed in its sigmoid-shift form:
/// `log M` is the largest log-ratio seen on `burn_in`, and a candidate with
/// log-ratio `r` is kept with probability `sigmoid(r - log M - gamma)`.
pub fn drs_filter<M, R>(
    model: &M,
    candidates: &Array,
    burn_in: &Array,
    rule: GammaRule,
    rng: &mut R,
) -> Result<DrsOutcome>
where
    M: LatentModel + ?Sized,
    R: Rng + ?Sized,
{
    let burn = model.score_samples(&burn_in.as_batch())?;
    if burn.is_empty() {
        return Err(Error::InvalidArgument("DRS needs at least one burn-in sample".into()));
    }
    let cand = model.score_samples(&candidates.as_batch())?;
    drs_filter_scores(&cand, &burn, rule, rng)
}

/// [`drs_filter`] on precomputed scores.
pub fn drs_filter_scores<R: Rng + ?Sized>(
    candidates: &[Score],
    burn_in: &[Score],
    rule: GammaRule,
    rng: &mut R,
) -> Result<DrsOutcome> {
    if burn_in.is_empty() {
        return Err(Error::InvalidArgument("DRS needs at least one burn-in sample".into()));
    }
    if burn_in.iter().chain(candidates).any(|s| !s.log_ratio.is_finite()) {
        return Err(Error::NonFinite("DRS score".into()));
    }
    let log_m = burn_in.iter().map(|s| s.log_ratio).fold(f64::NEG_INFINITY, f64::max);
    let degenerate = burn_in.iter().all(|s| s.log_ratio == burn_in[0].log_ratio);
    if degenerate {
        log::warn!("DRS: all burn-in scores are identical; acceptance is sigmoid(-gamma) for every candidate");
    }
    let gamma = match rule {
        GammaRule::Fixed(g) => g,
        GammaRule::Percentile(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("DRS percentile must lie in [0, 1], got {p}")));
            }
            let mut f: Vec<f64> = burn_in.iter().map(|s| s.log_ratio - log_m).collect();
            f.sort_by(f64::total_cmp);
            quantile(&f, p)
        }
    };
    let probabilities: Vec<f64> = candidates
        .iter()
        .map(|s| crate::tensor::sigmoid(s.log_ratio - log_m - gamma))
        .collect();
    let accepted = probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| rng.random::<f64>() < p)
        .map(|(i, _)| i)
        .collect();
    Ok(DrsOutcome {
        accepted,
        probabilities,
        log_m,
        gamma,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrsSamples {
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub scores: Vec<Score>,
    pub candidates_drawn: usize,
    pub log_m: f64,
    pub gamma: f64,
    pub degenerate: bool,
}

/// Draws generator samples in batches and keeps DRS-accepted ones until
/// `n_samples` are collected or `max_candidates` have been examined.
pub fn drs_sample<M: LatentModel + ?Sized>(
    model: &M,
    n_samples: usize,
    burn_in: usize,
    rule: GammaRule,
    seed: u64,
    max_candidates: usize,
) -> Result<DrsSamples> {
    if burn_in == 0 {
        return Err(Error::InvalidArgument("DRS burn_in must be ≥ 1".into()));
    }
    const BATCH: usize = 1000;
    let n = model.latent_dim();
    let mut rng = seeded(seed);
    let zb = Array::from_parts(vec![burn_in, n], normal_vec(&mut rng, burn_in * n));
    let burn_scores = model.evaluate(&zb, false)?.scores;
    let mut out = DrsSamples {
        z: Vec::new(),
        x: Vec::new(),
        scores: Vec::new(),
        candidates_drawn: 0,
        log_m: f64::NAN,
        gamma: f64::NAN,
        degenerate: false,
    };
    while out.x.len() < n_samples && out.candidates_drawn < max_candidates {
        let b = BATCH.min(max_candidates - out.candidates_drawn);
        let z = Array::from_parts(vec![b, n], normal_vec(&mut rng, b * n));
        let ev = model.evaluate(&z, false)?;
        let res = drs_filter_scores(&ev.scores, &burn_scores, rule, &mut rng)?;
        out.log_m = res.log_m;
        out.gamma = res.gamma;
        out.degenerate = res.degenerate;
        out.candidates_drawn += b;
        for i in res.accepted {
            if out.x.len() == n_samples {
                break;
            }
            out.z.push(z.row(i).to_vec());
            out.x.push(ev.x.row(i).to_vec());
            out.scores.push(ev.scores[i]);
        }
    }
    if out.x.len() < n_samples {
        log::warn!(
            "DRS kept {} of {} requested samples after {} candidates",
            out.x.len(),
            n_samples,
            out.candidates_drawn
        );
    }
    Ok(out)
}
