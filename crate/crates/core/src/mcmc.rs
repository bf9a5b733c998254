//! Metropolis–Hastings machinery.
//!
//! States are opaque to the engine. A [`ProposalKernel`] returns a candidate
//! together with `ln q(candidate | current)` and `ln q(current | candidate)`;
//! the engine evaluates the [`TargetDensity`] and applies
//! `min(1, exp(ln pi' + ln q_rev - ln pi - ln q_fwd))`.
//!
//! After burn-in, every `thinning`-th state is passed to an integrand and the
//! estimate `ln mean_j exp(l_j)` is accumulated with a streaming log-sum-exp,
//! so chains of any length run in constant memory.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Stream;

/// Log of an unnormalized target density. `-inf` marks states outside the support.
pub trait TargetDensity<S> {
    fn log_density(&self, state: &S) -> Result<f64>;
}

impl<S, F> TargetDensity<S> for F
where
    F: Fn(&S) -> Result<f64>,
{
    fn log_density(&self, state: &S) -> Result<f64> {
        self(state)
    }
}

#[derive(Clone, Debug)]
pub struct Proposal<S> {
    pub candidate: S,
    pub log_q_fwd: f64,
    pub log_q_rev: f64,
}

pub trait ProposalKernel<S> {
    fn propose(&self, state: &S, rng: &mut Stream) -> Result<Proposal<S>>;
}

impl<S, F> ProposalKernel<S> for F
where
    F: Fn(&S, &mut Stream) -> Result<Proposal<S>>,
{
    fn propose(&self, state: &S, rng: &mut Stream) -> Result<Proposal<S>> {
        self(state, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Random-walk proposal standard deviation per latent coordinate.
    pub rwmh_step: f64,
    /// Langevin step; `None` selects the random walk for latent chains.
    pub mala_step: Option<f64>,
    /// Keep a per-iteration trace in the result.
    pub record_trace: bool,
    /// Annealed warm-up run before the chain proper; part of initialization.
    pub warmup: WarmupConfig,
}

/// Tempered warm-up: stages at increasing likelihood exponent `beta`, with the
/// proposal step rescaled after each stage toward `target_acceptance`. The
/// final stages run at `beta = 1`. Nothing from the warm-up enters the
/// estimate; its end state and tuned step start the chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupConfig {
    /// Total warm-up iterations; 0 disables it.
    pub iterations: usize,
    pub stages: usize,
    pub initial_beta: f64,
    pub target_acceptance: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig {
            iterations: 0,
            stages: 40,
            initial_beta: 1e-3,
            target_acceptance: 0.3,
        }
    }
}

/// One warm-up stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupStage {
    pub beta: f64,
    pub iterations: usize,
}

impl WarmupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Ok(());
        }
        if self.stages == 0 || self.stages > self.iterations {
            return Err(Error::InvalidParameter("warm-up needs 1 <= stages <= iterations".into()));
        }
        if !(self.initial_beta > 0.0 && self.initial_beta <= 1.0) {
            return Err(Error::InvalidParameter("warm-up initial_beta must lie in (0, 1]".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidParameter("warm-up target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Geometric ladder from `initial_beta` to 1 over the first three
    /// quarters of the stages, then `beta = 1`.
    pub fn schedule(&self) -> Vec<WarmupStage> {
        if self.iterations == 0 {
            return Vec::new();
        }
        let n = self.stages;
        let ramp = (3 * n / 4).max(1);
        (0..n)
            .map(|k| {
                let frac = if ramp > 1 { (k as f64 / (ramp - 1) as f64).min(1.0) } else { 1.0 };
                let lo = k * self.iterations / n;
                let hi = (k + 1) * self.iterations / n;
                WarmupStage {
                    beta: self.initial_beta.powf(1.0 - frac),
                    iterations: hi - lo,
                }
            })
            .collect()
    }

    /// Multiplicative step update after a stage with the given acceptance.
    pub fn adapt(&self, step: f64, acceptance: f64) -> f64 {
        step * (3.0 * (acceptance - self.target_acceptance)).exp()
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 100_000,
            burn_in: 1_000,
            thinning: 1,
            rwmh_step: 0.1,
            mala_step: None,
            record_trace: false,
            warmup: WarmupConfig::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidParameter("thinning must be at least 1".into()));
        }
        if !(self.rwmh_step > 0.0) || self.mala_step.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("proposal steps must be positive".into()));
        }
        self.warmup.validate()
    }

    pub fn n_kept(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thinning)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub accepted: bool,
    pub log_target: f64,
    /// `NaN` for iterations not passed to the integrand.
    pub log_integrand: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// `ln((1/J) sum_j exp(l_j))` over kept samples.
    pub log_lr_estimate: f64,
    pub acceptance_rate: f64,
    pub n_accepted: usize,
    pub n_proposed: usize,
    pub n_kept: usize,
    /// Batch-means standard error of `log_lr_estimate` (delta method).
    pub std_err: f64,
    /// Proposal step used by the chain, after any warm-up tuning.
    pub proposal_step: Option<f64>,
    pub trace: Option<Vec<TraceRow>>,
}

impl ChainResult {
    /// Writes the trace as CSV with header `iteration,accepted,log_target,log_integrand`.
    pub fn trace_csv(&self) -> Option<String> {
        self.trace.as_ref().map(|rows| {
            let mut out = String::from("iteration,accepted,log_target,log_integrand\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.iteration, r.accepted as u8, r.log_target, r.log_integrand
                ));
            }
            out
        })
    }
}

/// MH acceptance probability from log quantities.
pub fn accept_log_ratio(log_target_cand: f64, log_target_cur: f64, log_q_rev: f64, log_q_fwd: f64) -> Result<f64> {
    if !log_target_cur.is_finite() {
        return Err(Error::ChainStartOutsideSupport);
    }
    if log_target_cand == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let log_ratio = (log_target_cand + log_q_rev) - (log_target_cur + log_q_fwd);
    if log_ratio.is_nan() {
        return Err(Error::NonFinite("acceptance log ratio".into()));
    }
    Ok(if log_ratio >= 0.0 { 1.0 } else { log_ratio.exp() })
}

/// Streaming `ln sum exp(x_i)`.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    scaled_sum: f64,
    count: usize,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            scaled_sum: 0.0,
            count: 0,
        }
    }
}

impl LogSumExp {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.scaled_sum = self.scaled_sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled_sum += (x - self.max).exp();
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn log_sum(&self) -> f64 {
        if self.scaled_sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled_sum.ln()
        }
    }

    pub fn log_mean(&self) -> f64 {
        self.log_sum() - (self.count as f64).ln()
    }
}

/// Log-mean-exp accumulator with batch means for the standard error.
#[derive(Clone, Debug)]
pub struct LogMeanExpAccumulator {
    total: LogSumExp,
    batch_size: usize,
    n_batches: usize,
    batches: Vec<LogSumExp>,
    current: LogSumExp,
}

pub const DEFAULT_BATCHES: usize = 100;

impl LogMeanExpAccumulator {
    /// `expected` is the number of samples that will be pushed; the last batch
    /// absorbs any remainder.
    pub fn new(expected: usize, n_batches: usize) -> Self {
        LogMeanExpAccumulator {
            total: LogSumExp::default(),
            batch_size: (expected / n_batches.max(1)).max(1),
            n_batches: n_batches.max(1),
            batches: Vec::with_capacity(n_batches),
            current: LogSumExp::default(),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.total.push(x);
        self.current.push(x);
        if self.current.count() == self.batch_size && self.batches.len() + 1 < self.n_batches {
            self.batches.push(std::mem::take(&mut self.current));
        }
    }

    pub fn count(&self) -> usize {
        self.total.count()
    }

    pub fn log_mean(&self) -> f64 {
        self.total.log_mean()
    }

    /// Standard error of `log_mean` from the spread of the batch means.
    pub fn std_err(&self) -> f64 {
        let mut batches: Vec<&LogSumExp> = self.batches.iter().collect();
        if self.current.count() > 0 {
            batches.push(&self.current);
        }
        let b = batches.len();
        if b < 2 {
            return f64::NAN;
        }
        let logs: Vec<f64> = batches.iter().map(|l| l.log_mean()).collect();
        let weights: Vec<f64> = batches.iter().map(|l| l.count() as f64).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return f64::NAN;
        }
        let vals: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let mean = vals.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        let var = vals
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * (v - mean) * (v - mean))
            .sum::<f64>()
            / wsum
            * b as f64
            / (b as f64 - 1.0);
        (var / b as f64).sqrt() / mean
    }
}

/// Runs one Metropolis–Hastings chain.
///
/// `integrand` is called on the current state at every kept iteration and
/// returns `l_j`; the result carries `ln mean_j exp(l_j)`.
pub fn run_chain<S, T, K, F>(
    init: S,
    target: &T,
    kernel: &K,
    cfg: &ChainConfig,
    mut integrand: F,
    rng: &mut Stream,
) -> Result<ChainResult>
where
    S: Clone,
    T: TargetDensity<S> + ?Sized,
    K: ProposalKernel<S> + ?Sized,
    F: FnMut(&S) -> Result<f64>,
{
    cfg.validate()?;
    let mut current = init;
    let mut log_target = target.log_density(&current)?;
    if !log_target.is_finite() {
        return Err(Error::ChainStartOutsideSupport);
    }

    let n_kept = cfg.n_kept();
    let mut acc = LogMeanExpAccumulator::new(n_kept, DEFAULT_BATCHES);
    let mut n_accepted = 0usize;
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.n_iter));
    let wrap = |iteration: usize| move |e: Error| Error::ChainIteration {
        iteration,
        source: Box::new(e),
    };

    for it in 0..cfg.n_iter {
        let prop = kernel.propose(&current, rng).map_err(wrap(it))?;
        let cand_log_target = target.log_density(&prop.candidate).map_err(wrap(it))?;
        if cand_log_target.is_nan() || cand_log_target == f64::INFINITY {
            return Err(wrap(it)(Error::NonFinite("target density".into())));
        }
        let p = accept_log_ratio(cand_log_target, log_target, prop.log_q_rev, prop.log_q_fwd).map_err(wrap(it))?;
        let u: f64 = rng.random();
        let accepted = u < p;
        if accepted {
            current = prop.candidate;
            log_target = cand_log_target;
            n_accepted += 1;
        }

        let mut ell = f64::NAN;
        if it >= cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thinning) {
            ell = integrand(&current).map_err(wrap(it))?;
            if ell.is_nan() || ell == f64::INFINITY {
                return Err(wrap(it)(Error::NonFinite("log integrand".into())));
            }
            acc.push(ell);
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iteration: it,
                accepted,
                log_target,
                log_integrand: ell,
            });
        }
    }

    Ok(ChainResult {
        log_lr_estimate: acc.log_mean(),
        acceptance_rate: n_accepted as f64 / cfg.n_iter as f64,
        n_accepted,
        n_proposed: cfg.n_iter,
        n_kept: acc.count(),
        std_err: acc.std_err(),
        proposal_step: None,
        trace,
    })
}

/// Plain Metropolis-Hastings for `n_iter` steps with no estimator; returns the
/// final state and the number of accepted proposals.
pub fn run_segment<S, T, K>(init: S, target: &T, kernel: &K, n_iter: usize, rng: &mut Stream) -> Result<(S, usize)>
where
    T: TargetDensity<S> + ?Sized,
    K: ProposalKernel<S> + ?Sized,
{
    let mut current = init;
    let mut log_target = target.log_density(&current)?;
    if !log_target.is_finite() {
        return Err(Error::ChainStartOutsideSupport);
    }
    let mut n_accepted = 0;
    for it in 0..n_iter {
        let wrap = |e: Error| Error::ChainIteration {
            iteration: it,
            source: Box::new(e),
        };
        let prop = kernel.propose(&current, rng).map_err(wrap)?;
        let cand = target.log_density(&prop.candidate).map_err(wrap)?;
        if cand.is_nan() || cand == f64::INFINITY {
            return Err(wrap(Error::NonFinite("target density".into())));
        }
        let p = accept_log_ratio(cand, log_target, prop.log_q_rev, prop.log_q_fwd).map_err(wrap)?;
        if rng.random::<f64>() < p {
            current = prop.candidate;
            log_target = cand;
            n_accepted += 1;
        }
    }
    Ok((current, n_accepted))
}

/// States that live in `R^d`.
pub trait VectorState {
    fn position(&self) -> &[f64];
}

impl VectorState for Vec<f64> {
    fn position(&self) -> &[f64] {
        self
    }
}

fn gaussian_log_density(diff_sq: f64, dim: usize, step: f64) -> f64 {
    -diff_sq / (2.0 * step * step) - 0.5 * dim as f64 * (2.0 * PI * step * step).ln()
}

/// Random-walk Metropolis: `z' = z + step * N(0, I)`. `build` turns a
/// coordinate vector into a chain state (e.g. attaching a generator output).
pub struct RandomWalk<B> {
    pub step: f64,
    pub dim: usize,
    build: B,
}

impl<B> RandomWalk<B> {
    pub fn new(step: f64, dim: usize, build: B) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("random-walk step must be positive, got {step}")));
        }
        Ok(RandomWalk { step, dim, build })
    }
}

/// State builder for kernels acting on plain vectors.
pub type VecBuild = fn(Vec<f64>) -> Result<Vec<f64>>;

fn vec_identity(v: Vec<f64>) -> Result<Vec<f64>> {
    Ok(v)
}

pub fn rwmh_kernel(step: f64, dim: usize) -> Result<RandomWalk<VecBuild>> {
    RandomWalk::new(step, dim, vec_identity as VecBuild)
}

impl<S, B> ProposalKernel<S> for RandomWalk<B>
where
    S: VectorState,
    B: Fn(Vec<f64>) -> Result<S>,
{
    fn propose(&self, state: &S, rng: &mut Stream) -> Result<Proposal<S>> {
        let z = state.position();
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        let mut diff_sq = 0.0;
        let cand: Vec<f64> = z
            .iter()
            .map(|&v| {
                let e: f64 = rng.sample(StandardNormal);
                diff_sq += self.step * self.step * e * e;
                v + self.step * e
            })
            .collect();
        let lq = gaussian_log_density(diff_sq, self.dim, self.step);
        Ok(Proposal {
            candidate: (self.build)(cand)?,
            log_q_fwd: lq,
            log_q_rev: lq,
        })
    }
}

/// Metropolis-adjusted Langevin: `z' = z + (step^2 / 2) grad ln pi(z) + step * N(0, I)`,
/// with the exact asymmetric proposal densities.
pub struct Langevin<B, G> {
    pub step: f64,
    pub dim: usize,
    build: B,
    grad: G,
}

impl<B, G> Langevin<B, G> {
    pub fn new(step: f64, dim: usize, build: B, grad: G) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("Langevin step must be positive, got {step}")));
        }
        Ok(Langevin { step, dim, build, grad })
    }

    fn drift(&self, z: &[f64], g: &[f64]) -> Result<Vec<f64>>
    where
        G: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        drift(z, g, self.step, self.dim)
    }
}

fn drift(z: &[f64], g: &[f64], step: f64, dim: usize) -> Result<Vec<f64>> {
    if g.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target gradient".into()));
    }
    let half = 0.5 * step * step;
    Ok(z.iter().zip(g).map(|(zi, gi)| zi + half * gi).collect())
}

/// MALA over plain vectors; the gradient is recomputed on demand.
pub fn mala_kernel<G>(step: f64, dim: usize, grad: G) -> Result<Langevin<VecBuild, G>>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    Langevin::new(step, dim, vec_identity as VecBuild, grad)
}

impl<S, B, G> ProposalKernel<S> for Langevin<B, G>
where
    S: VectorState,
    B: Fn(Vec<f64>) -> Result<S>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn propose(&self, state: &S, rng: &mut Stream) -> Result<Proposal<S>> {
        let z = state.position();
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        let mean_fwd = self.drift(z, &(self.grad)(z)?)?;
        let cand: Vec<f64> = mean_fwd
            .iter()
            .map(|&m| {
                let e: f64 = rng.sample(StandardNormal);
                m + self.step * e
            })
            .collect();
        let fwd_sq: f64 = cand.iter().zip(&mean_fwd).map(|(a, b)| (a - b) * (a - b)).sum();
        let mean_rev = self.drift(&cand, &(self.grad)(&cand)?)?;
        let rev_sq: f64 = z.iter().zip(&mean_rev).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(Proposal {
            candidate: (self.build)(cand)?,
            log_q_fwd: gaussian_log_density(fwd_sq, self.dim, self.step),
            log_q_rev: gaussian_log_density(rev_sq, self.dim, self.step),
        })
    }
}

/// MALA for states that carry their own gradient of the log target, so the
/// candidate's gradient is computed once, inside `build`.
pub struct CachedLangevin<B, G> {
    pub step: f64,
    pub dim: usize,
    build: B,
    grad_of: G,
}

impl<B, G> CachedLangevin<B, G> {
    pub fn new(step: f64, dim: usize, build: B, grad_of: G) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("Langevin step must be positive, got {step}")));
        }
        Ok(CachedLangevin {
            step,
            dim,
            build,
            grad_of,
        })
    }
}

impl<S, B, G> ProposalKernel<S> for CachedLangevin<B, G>
where
    S: VectorState,
    B: Fn(Vec<f64>) -> Result<S>,
    G: Fn(&S) -> Result<&[f64]>,
{
    fn propose(&self, state: &S, rng: &mut Stream) -> Result<Proposal<S>> {
        let z = state.position();
        let mean_fwd = drift(z, (self.grad_of)(state)?, self.step, self.dim)?;
        let cand: Vec<f64> = mean_fwd
            .iter()
            .map(|&m| {
                let e: f64 = rng.sample(StandardNormal);
                m + self.step * e
            })
            .collect();
        let fwd_sq: f64 = cand.iter().zip(&mean_fwd).map(|(a, b)| (a - b) * (a - b)).sum();
        let candidate = (self.build)(cand)?;
        let mean_rev = drift(candidate.position(), (self.grad_of)(&candidate)?, self.step, self.dim)?;
        let rev_sq: f64 = z.iter().zip(&mean_rev).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(Proposal {
            candidate,
            log_q_fwd: gaussian_log_density(fwd_sq, self.dim, self.step),
            log_q_rev: gaussian_log_density(rev_sq, self.dim, self.step),
        })
    }
}
