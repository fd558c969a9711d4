//! Schedule policy: a one-hidden-layer network mapping a constant state to
//! the means and deviations of a Gaussian mixture over session time, and
//! the entropy-regularised REINFORCE loop that trains it.
//!
//! ```text
//! h      = ReLU(W_s x + b_s)
//! mu_k   = (tanh(W_k^mu h + b_k^mu) + 1) / 2
//! sigma_k = max(sigma_min, (tanh(W_k^sigma h + b_k^sigma) + 1) / 2)
//! ```
//!
//! The per-schedule objective is `log pi(a_m) * r_m + beta * H`, where
//! `log pi` is the mean per-child log density under the generating mode and
//! `H` the mean per-mode Gaussian entropy. Gradients are written out by hand.
//!
//! Draws that fall outside the session are resampled, so each mode really
//! samples a Gaussian truncated to its admissible region. The log density
//! can optionally include the matching normaliser `-log Z`; without it the
//! score function is biased whenever a mode has noticeable mass outside the
//! session.

use std::f64::consts::{E, PI};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::execution::{admissible_intervals, sample_schedule, ExecutionSchedule, MetaOrder, Mode, ScheduleDistribution};
use crate::rng::{derive_seed, stream_rng};
use crate::session::SessionTemplate;
use crate::slippage::{BaselinePool, Objective};
use crate::Error;

pub const DEFAULT_HIDDEN: usize = 16;
pub const SIGMA_MIN: f64 = 1e-3;
/// The constant dummy state.
pub const STATE: [f64; 1] = [1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub modes: usize,
    pub hidden: usize,
    pub input: usize,
    /// Row-major `hidden x input`.
    pub w_s: Vec<f64>,
    pub b_s: Vec<f64>,
    /// Row-major `modes x hidden`.
    pub w_mu: Vec<f64>,
    pub b_mu: Vec<f64>,
    pub w_sigma: Vec<f64>,
    pub b_sigma: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(modes: usize, hidden: usize, input: usize) -> Self {
        PolicyParams {
            modes,
            hidden,
            input,
            w_s: vec![0.0; hidden * input],
            b_s: vec![0.0; hidden],
            w_mu: vec![0.0; modes * hidden],
            b_mu: vec![0.0; modes],
            w_sigma: vec![0.0; modes * hidden],
            b_sigma: vec![0.0; modes],
        }
    }

    /// Every weight and bias uniform in `[-0.1, 0.1]`.
    pub fn init<R: Rng + ?Sized>(modes: usize, hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(modes, hidden, input);
        for x in p.flat_mut() {
            *x = rng.random_range(-0.1..=0.1);
        }
        p
    }

    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.modes >= 1
            && self.hidden >= 1
            && self.input >= 1
            && self.w_s.len() == self.hidden * self.input
            && self.b_s.len() == self.hidden
            && self.w_mu.len() == self.modes * self.hidden
            && self.w_sigma.len() == self.modes * self.hidden
            && self.b_mu.len() == self.modes
            && self.b_sigma.len() == self.modes;
        if !ok {
            return Err(Error::Config("policy parameter shapes are inconsistent".into()));
        }
        if self.parts().iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        Ok(())
    }

    fn parts(&self) -> [&Vec<f64>; 6] {
        [&self.w_s, &self.b_s, &self.w_mu, &self.b_mu, &self.w_sigma, &self.b_sigma]
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|v| v.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_s
            .iter_mut()
            .chain(self.b_s.iter_mut())
            .chain(self.w_mu.iter_mut())
            .chain(self.b_mu.iter_mut())
            .chain(self.w_sigma.iter_mut())
            .chain(self.b_sigma.iter_mut())
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        for (x, v) in self.flat_mut().zip(values) {
            *x = *v;
        }
    }
}

struct Forward {
    pre: Vec<f64>,
    h: Vec<f64>,
    tanh_mu: Vec<f64>,
    tanh_sigma: Vec<f64>,
    modes: Vec<Mode>,
}

fn forward_full(p: &PolicyParams, x: &[f64]) -> Forward {
    assert_eq!(x.len(), p.input, "state length must match the policy input");
    let pre: Vec<f64> = (0..p.hidden)
        .map(|i| p.b_s[i] + (0..p.input).map(|j| p.w_s[i * p.input + j] * x[j]).sum::<f64>())
        .collect();
    let h: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
    let head = |w: &[f64], b: &[f64], k: usize| (b[k] + (0..p.hidden).map(|i| w[k * p.hidden + i] * h[i]).sum::<f64>()).tanh();
    let tanh_mu: Vec<f64> = (0..p.modes).map(|k| head(&p.w_mu, &p.b_mu, k)).collect();
    let tanh_sigma: Vec<f64> = (0..p.modes).map(|k| head(&p.w_sigma, &p.b_sigma, k)).collect();
    let modes = tanh_mu
        .iter()
        .zip(&tanh_sigma)
        .map(|(&a, &b)| Mode {
            mu: (a + 1.0) / 2.0,
            sigma: ((b + 1.0) / 2.0).max(SIGMA_MIN),
        })
        .collect();
    Forward {
        pre,
        h,
        tanh_mu,
        tanh_sigma,
        modes,
    }
}

pub fn policy_forward(params: &PolicyParams, x: &[f64]) -> Vec<Mode> {
    forward_full(params, x).modes
}

/// Mean log density of each sampled child under its generating mode.
/// Children without a mode are ignored; the result is `NaN` if none remain.
pub fn log_prob(modes: &[Mode], schedule: &ExecutionSchedule) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in &schedule.children {
        if let Some(k) = c.mode {
            let m = modes[k];
            let z = (c.draw - m.mu) / m.sigma;
            sum += -0.5 * z * z - m.sigma.ln() - 0.5 * (2.0 * PI).ln();
            n += 1;
        }
    }
    sum / n as f64
}

/// Admissible region of each mode in normalised time.
pub type Support = Vec<Vec<(f64, f64)>>;

pub fn support(session: &SessionTemplate, bounded: bool, modes: usize) -> Support {
    (0..modes)
        .map(|k| {
            admissible_intervals(session, bounded, k)
                .into_iter()
                .map(|(a, b)| (session.wall_to_normalized(a), session.wall_to_normalized(b)))
                .collect()
        })
        .collect()
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `P(X <= b) - P(X <= a)` for a standard normal, using the tail on the
/// side that avoids cancellation.
fn std_normal_mass(a: f64, b: f64) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    if a > 0.0 {
        0.5 * (libm::erfc(a / sqrt2) - libm::erfc(b / sqrt2))
    } else {
        0.5 * (libm::erfc(-b / sqrt2) - libm::erfc(-a / sqrt2))
    }
}

/// `log Z` of a mode over its region with derivatives in `mu` and `sigma`.
fn log_mass(m: Mode, region: &[(f64, f64)]) -> (f64, f64, f64) {
    let mut z = 0.0;
    let mut dz_mu = 0.0;
    let mut dz_sigma = 0.0;
    for &(a, b) in region {
        let al = (a - m.mu) / m.sigma;
        let be = (b - m.mu) / m.sigma;
        let (pa, pb) = (std_normal_pdf(al), std_normal_pdf(be));
        z += std_normal_mass(al, be);
        dz_mu += (pa - pb) / m.sigma;
        dz_sigma += (al * pa - be * pb) / m.sigma;
    }
    let z = z.max(f64::MIN_POSITIVE);
    (z.ln(), dz_mu / z, dz_sigma / z)
}

/// [`log_prob`] for the truncated densities the sampler actually draws from.
pub fn log_prob_truncated(modes: &[Mode], schedule: &ExecutionSchedule, support: &Support) -> f64 {
    let log_z: Vec<f64> = modes.iter().zip(support).map(|(&m, r)| log_mass(m, r).0).collect();
    let mut correction = 0.0;
    let mut n = 0usize;
    for c in &schedule.children {
        if let Some(k) = c.mode {
            correction += log_z[k];
            n += 1;
        }
    }
    log_prob(modes, schedule) - correction / n as f64
}

pub fn entropy(modes: &[Mode]) -> f64 {
    modes.iter().map(|m| 0.5 * (2.0 * PI * E * m.sigma * m.sigma).ln()).sum::<f64>() / modes.len() as f64
}

/// One sampled schedule with its (baselined) reward.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub schedule: &'a ExecutionSchedule,
    pub reward: f64,
}

/// `sum_m [log pi(a_m) r_m + beta H]`, the quantity the gradient ascends.
/// With a support the log density is the truncated one.
pub fn surrogate_objective(params: &PolicyParams, x: &[f64], batch: &[BatchItem<'_>], beta: f64, support: Option<&Support>) -> f64 {
    let modes = policy_forward(params, x);
    let h = entropy(&modes);
    batch
        .iter()
        .map(|b| {
            let lp = match support {
                Some(s) => log_prob_truncated(&modes, b.schedule, s),
                None => log_prob(&modes, b.schedule),
            };
            lp * b.reward + beta * h
        })
        .sum()
}

/// Exact gradient of [`surrogate_objective`] with respect to every parameter.
pub fn policy_gradient(
    params: &PolicyParams,
    x: &[f64],
    batch: &[BatchItem<'_>],
    beta: f64,
    support: Option<&Support>,
) -> PolicyParams {
    let f = forward_full(params, x);
    let k = params.modes;
    let mut d_mu = vec![0.0; k];
    let mut d_sigma = vec![0.0; k];
    let mass: Option<Vec<(f64, f64, f64)>> = support.map(|s| f.modes.iter().zip(s).map(|(&m, r)| log_mass(m, r)).collect());
    for item in batch {
        let n = item.schedule.children.iter().filter(|c| c.mode.is_some()).count();
        if n == 0 || item.reward == 0.0 {
            continue;
        }
        let scale = item.reward / n as f64;
        for c in &item.schedule.children {
            let Some(j) = c.mode else { continue };
            let m = f.modes[j];
            let r = c.draw - m.mu;
            let s2 = m.sigma * m.sigma;
            d_mu[j] += scale * r / s2;
            d_sigma[j] += scale * (r * r / (s2 * m.sigma) - 1.0 / m.sigma);
            if let Some(mass) = &mass {
                d_mu[j] -= scale * mass[j].1;
                d_sigma[j] -= scale * mass[j].2;
            }
        }
    }
    let batch_beta = beta * batch.len() as f64;
    for j in 0..k {
        d_sigma[j] += batch_beta / (k as f64 * f.modes[j].sigma);
    }

    let mut g = PolicyParams::zeros(k, params.hidden, params.input);
    let mut d_h = vec![0.0; params.hidden];
    for j in 0..k {
        let g_mu = d_mu[j] * 0.5 * (1.0 - f.tanh_mu[j] * f.tanh_mu[j]);
        let floored = (f.tanh_sigma[j] + 1.0) / 2.0 < SIGMA_MIN;
        let g_sigma = if floored {
            0.0
        } else {
            d_sigma[j] * 0.5 * (1.0 - f.tanh_sigma[j] * f.tanh_sigma[j])
        };
        g.b_mu[j] = g_mu;
        g.b_sigma[j] = g_sigma;
        for i in 0..params.hidden {
            g.w_mu[j * params.hidden + i] = g_mu * f.h[i];
            g.w_sigma[j * params.hidden + i] = g_sigma * f.h[i];
            d_h[i] += g_mu * params.w_mu[j * params.hidden + i] + g_sigma * params.w_sigma[j * params.hidden + i];
        }
    }
    for i in 0..params.hidden {
        let d_pre = if f.pre[i] > 0.0 { d_h[i] } else { 0.0 };
        g.b_s[i] = d_pre;
        for (jx, &xv) in x.iter().enumerate() {
            g.w_s[i * params.input + jx] = d_pre * xv;
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Gradient-ascent optimiser state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        Optimizer {
            kind,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// Forgets the moment estimates.
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn ascend(&mut self, params: &mut PolicyParams, grad: &PolicyParams, lr: f64) {
        let g = grad.flat();
        let mut theta = params.flat();
        match self.kind {
            OptimizerKind::Sgd => {
                for (x, d) in theta.iter_mut().zip(&g) {
                    *x += lr * d;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..g.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                    theta[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
        params.set_flat(&theta);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub entropy_beta: f64,
    /// Episode from which the entropy weight is zero; `None` keeps it.
    pub entropy_decay_episode: Option<usize>,
    pub early_stop_patience: usize,
    pub max_episodes: usize,
    pub objective: Objective,
    pub modes: usize,
    pub bounded: bool,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    /// Use the truncated log density in the score function.
    pub truncation_correction: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 10,
            mc_samples: 50,
            entropy_beta: 2.0,
            entropy_decay_episode: Some(10),
            early_stop_patience: 15,
            max_episodes: 100,
            objective: Objective::Slippage,
            modes: 1,
            bounded: false,
            hidden: DEFAULT_HIDDEN,
            optimizer: OptimizerKind::Adam,
            truncation_correction: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.modes == 0 || self.hidden == 0 || self.max_episodes == 0 {
            return Err(Error::Config("batch size, MC samples, modes, hidden width and episodes must be positive".into()));
        }
        if !(self.entropy_beta >= 0.0) {
            return Err(Error::Config("entropy weight must be non-negative".into()));
        }
        Ok(())
    }

    pub fn beta_at(&self, episode: usize) -> f64 {
        match self.entropy_decay_episode {
            Some(e) if episode >= e => 0.0,
            _ => self.entropy_beta,
        }
    }
}

/// Scores a batch of schedules. Lower is better; a schedule that could not
/// be scored is reported as `NaN`.
pub trait Environment {
    fn evaluate(&self, schedules: &[ExecutionSchedule]) -> Result<Vec<f64>, Error>;
}

/// Analytic test bed: the loss of a schedule is the mean squared distance
/// of mode-0 draws from `target`.
#[derive(Clone, Copy, Debug)]
pub struct StubEnvironment {
    pub target: f64,
}

impl Default for StubEnvironment {
    fn default() -> Self {
        StubEnvironment { target: 0.3 }
    }
}

impl Environment for StubEnvironment {
    fn evaluate(&self, schedules: &[ExecutionSchedule]) -> Result<Vec<f64>, Error> {
        Ok(schedules
            .iter()
            .map(|s| {
                let d: Vec<f64> = s.children.iter().filter(|c| c.mode == Some(0)).map(|c| c.draw).collect();
                d.iter().map(|u| (u - self.target).powi(2)).sum::<f64>() / d.len() as f64
            })
            .collect())
    }
}

/// Mean loss over a fixed pool of paired runs. Reusing the same seeds for
/// every schedule makes comparisons within a batch use common random numbers.
pub struct SimEnvironment {
    pub pool: BaselinePool,
    pub objective: Objective,
}

impl Environment for SimEnvironment {
    fn evaluate(&self, schedules: &[ExecutionSchedule]) -> Result<Vec<f64>, Error> {
        let results = self.pool.evaluate_all(schedules);
        let mut out = Vec::with_capacity(schedules.len());
        for per_seed in results {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in per_seed {
                match r {
                    Ok(d) => {
                        sum += self.objective.loss(&d);
                        n += 1;
                    }
                    Err(Error::NoExecutedVolume) => {}
                    Err(e) => return Err(e),
                }
            }
            out.push(if n == 0 { f64::NAN } else { sum / n as f64 });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Baselined reward of each schedule in the batch.
    pub rewards: Vec<f64>,
    pub mean_loss: f64,
    pub reward: f64,
    pub entropy: f64,
    pub beta: f64,
    /// Policy outputs the batch was sampled from.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters that produced the lowest mean batch loss.
    pub best: PolicyParams,
    pub best_episode: usize,
    /// Parameters after the last update.
    pub last: PolicyParams,
    pub episodes: Vec<EpisodeRecord>,
    /// Episode at which the patience rule fired, if it did.
    pub early_stopped_at: Option<usize>,
}

pub fn distribution(params: &PolicyParams, bounded: bool) -> ScheduleDistribution {
    ScheduleDistribution {
        modes: policy_forward(params, &STATE),
        bounded,
    }
}

pub fn train<E: Environment + ?Sized>(
    config: &TrainConfig,
    env: &E,
    session: &SessionTemplate,
    meta: &MetaOrder,
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    meta.validate()?;
    let mut init_rng = stream_rng(config.seed, 0);
    let mut params = PolicyParams::init(config.modes, config.hidden, STATE.len(), &mut init_rng);
    let mut opt = Optimizer::new(config.optimizer, params.num_params());
    let mut episodes = Vec::new();
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_episode = 0;
    let mut stale = 0;
    let mut early_stopped_at = None;
    let region = config.truncation_correction.then(|| support(session, config.bounded, config.modes));
    for episode in 0..config.max_episodes {
        let dist = distribution(&params, config.bounded);
        let schedules = (0..config.batch_size)
            .map(|m| {
                let mut rng = stream_rng(derive_seed(config.seed, 1 + episode as u64), m as u64);
                sample_schedule(meta, &dist, session, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let losses = env.evaluate(&schedules)?;
        let finite: Vec<f64> = losses.iter().copied().filter(|l| l.is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::DegenerateBatch(format!("no schedule in episode {episode} produced a fill")));
        }
        let mean_loss = finite.iter().sum::<f64>() / finite.len() as f64;
        let rewards: Vec<f64> = losses
            .iter()
            .map(|&l| if l.is_finite() { mean_loss - l } else { 0.0 })
            .collect();
        let beta = config.beta_at(episode);
        if episode > 0 && beta != config.beta_at(episode - 1) {
            // The objective changes with the entropy weight. Adam's moments
            // are dominated by the large entropy gradients and would keep
            // both the drift and the step normalisation of the old objective.
            opt.reset();
        }
        let batch: Vec<BatchItem> = schedules
            .iter()
            .zip(&rewards)
            .map(|(schedule, &reward)| BatchItem { schedule, reward })
            .collect();
        let grad = policy_gradient(&params, &STATE, &batch, beta, region.as_ref());
        let grad_norm = grad.flat().iter().map(|g| g * g).sum::<f64>().sqrt();
        episodes.push(EpisodeRecord {
            episode,
            rewards,
            mean_loss,
            reward: -mean_loss,
            entropy: entropy(&dist.modes),
            beta,
            mu: dist.modes.iter().map(|m| m.mu).collect(),
            sigma: dist.modes.iter().map(|m| m.sigma).collect(),
            grad_norm,
        });
        if mean_loss < best_loss {
            best_loss = mean_loss;
            best = params.clone();
            best_episode = episode;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                early_stopped_at = Some(episode);
                break;
            }
        }
        opt.ascend(&mut params, &grad, config.learning_rate);
    }
    Ok(TrainOutcome {
        best,
        best_episode,
        last: params,
        episodes,
        early_stopped_at,
    })
}

pub fn write_episodes_csv<W: Write>(mut w: W, episodes: &[EpisodeRecord]) -> std::io::Result<()> {
    let k = episodes.first().map_or(0, |e| e.mu.len());
    let mut header = String::from("episode,mean_loss,reward,entropy,beta");
    for i in 1..=k {
        header += &format!(",mu_{i}");
    }
    for i in 1..=k {
        header += &format!(",sigma_{i}");
    }
    writeln!(w, "{header}")?;
    for e in episodes {
        write!(w, "{},{},{},{},{}", e.episode, e.mean_loss, e.reward, e.entropy, e.beta)?;
        for v in e.mu.iter().chain(&e.sigma) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Saved policy: weights, the distribution they produce, and the training
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub config: TrainConfig,
    pub params: PolicyParams,
    pub modes: Vec<Mode>,
    pub bounded: bool,
}

impl PolicyFile {
    pub fn new(config: TrainConfig, params: PolicyParams) -> Self {
        let modes = policy_forward(&params, &STATE);
        PolicyFile {
            bounded: config.bounded,
            config,
            params,
            modes,
        }
    }

    pub fn distribution(&self) -> ScheduleDistribution {
        ScheduleDistribution {
            modes: self.modes.clone(),
            bounded: self.bounded,
        }
    }
}
