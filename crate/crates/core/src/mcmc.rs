//! No-U-turn Hamiltonian Monte Carlo with windowed adaptation, plus the
//! convergence diagnostics and posterior summaries built on its output.
//!
//! The sampler is the multinomial variant: trajectories double in a random
//! direction until the generalised no-U-turn criterion fires (checked across
//! every subtree and its merge boundaries), and the next state is drawn from
//! the whole trajectory in proportion to `exp(-H)`. Warm-up adapts a step size
//! by dual averaging and a diagonal inverse metric over doubling windows.
//!
//! Chain `c` draws all of its randomness from `ChaCha8Rng::seed_from_u64(seed ^ c)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{exp, ln, log_sum_exp, ndtri, sqrt};

/// Divergence threshold on the energy error of a single leapfrog step.
const MAX_DELTA_H: f64 = 1000.0;
const MAX_INIT_ATTEMPTS: usize = 100;

/// A differentiable log density on `R^dim`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `q` and writes its gradient into `grad`.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// A candidate starting point.
    fn initial_point(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    /// Maps a sampler state to the coordinates stored in [`ChainResult::draws`].
    fn constrain(&self, q: &[f64], out: &mut [f64]) {
        out.copy_from_slice(q);
    }
}

/// Named scalar functions of a state, aggregated by [`summarize`].
pub trait Quantities {
    fn quantity_names(&self) -> Vec<String>;
    fn quantities_into(&self, q: &[f64], out: &mut Vec<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_draws: usize,
    pub retained_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup_draws: 1000,
            retained_draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidParameter("chains must be at least 1"));
        }
        if self.retained_draws == 0 {
            return Err(Error::InvalidParameter("retained_draws must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter("target_accept must lie in (0, 1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidParameter("max_tree_depth must be at least 1"));
        }
        Ok(())
    }
}

/// Retained output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub chain: usize,
    pub dim: usize,
    /// Row-major `retained_draws x dim`, unconstrained.
    pub draws: Vec<f64>,
    pub log_density: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u8>,
    /// Mean acceptance statistic over retained transitions.
    pub accept_rate: f64,
    pub divergence_count: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub leapfrog_steps: u64,
}

impl ChainResult {
    pub fn num_draws(&self) -> usize {
        self.log_density.len()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    pub fn draws_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim)
    }

    /// Column `j` across retained draws.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws_iter().map(|d| d[j]).collect()
    }
}

/// Runs `cfg.chains` independent chains. With the `parallel` feature the
/// chains execute on the rayon pool; results are identical either way.
pub fn run_chains<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<Vec<ChainResult>> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..cfg.chains)
            .into_par_iter()
            .map(|c| run_chain(target, cfg, c))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..cfg.chains).map(|c| run_chain(target, cfg, c)).collect()
    }
}

/// One chain, seeded with `cfg.seed ^ chain`.
pub fn run_chain<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<ChainResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ chain as u64);
    let dim = target.dim();
    let start = initial_state(target, &mut rng)?;
    let mut sampler = Nuts {
        target,
        dim,
        inv_metric: vec![1.0; dim],
        step_size: 1.0,
        max_depth: cfg.max_tree_depth,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut z = start;
    sampler.init_step_size(&mut z, &mut rng);

    let mut step = DualAveraging::new(cfg.target_accept, sampler.step_size);
    let mut windows = WindowSchedule::new(cfg.warmup_draws);
    let mut var = Welford::new(dim);
    let mut total_leapfrog = 0u64;
    for _ in 0..cfg.warmup_draws {
        let t = sampler.transition(&mut z, &mut rng);
        total_leapfrog += t.n_leapfrog as u64;
        sampler.step_size = step.learn(t.accept_stat);
        if windows.in_window() {
            var.add(&z.q);
        }
        if windows.at_window_end() {
            let n = var.count as f64;
            for (m, v) in sampler.inv_metric.iter_mut().zip(var.variance()) {
                *m = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
            }
            var = Welford::new(dim);
            windows.advance();
            sampler.init_step_size(&mut z, &mut rng);
            step = DualAveraging::new(cfg.target_accept, sampler.step_size);
        }
        windows.tick();
    }
    if cfg.warmup_draws > 0 {
        sampler.step_size = step.final_step_size();
    }

    let n = cfg.retained_draws;
    let mut out = ChainResult {
        chain,
        dim,
        draws: Vec::with_capacity(n * dim),
        log_density: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        tree_depth: Vec::with_capacity(n),
        accept_rate: 0.0,
        divergence_count: 0,
        step_size: sampler.step_size,
        inv_metric: sampler.inv_metric.clone(),
        leapfrog_steps: 0,
    };
    let mut accept_sum = 0.0;
    let mut stored = vec![0.0; target.dim()];
    for _ in 0..n {
        let t = sampler.transition(&mut z, &mut rng);
        total_leapfrog += t.n_leapfrog as u64;
        accept_sum += t.accept_stat;
        target.constrain(&z.q, &mut stored);
        out.draws.extend_from_slice(&stored);
        out.log_density.push(z.lp);
        out.divergent.push(t.divergent);
        out.tree_depth.push(t.depth as u8);
        out.divergence_count += t.divergent as usize;
    }
    out.accept_rate = accept_sum / n as f64;
    out.leapfrog_steps = total_leapfrog;
    if 2 * out.divergence_count > n {
        return Err(Error::AllDivergent {
            chain,
            divergent: out.divergence_count,
            draws: n,
        });
    }
    Ok(out)
}

fn initial_state<T: Target + ?Sized>(target: &T, rng: &mut ChaCha8Rng) -> Result<State> {
    let dim = target.dim();
    for _ in 0..MAX_INIT_ATTEMPTS {
        let Ok(q) = target.initial_point(rng) else { continue };
        if q.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: q.len() });
        }
        let mut g = vec![0.0; dim];
        if let Ok(lp) = target.log_density_grad(&q, &mut g) {
            if lp.is_finite() {
                return Ok(State { q, p: vec![0.0; dim], g, lp });
            }
        }
    }
    Err(Error::GradientFailure("no finite starting point in 100 draws"))
}

/// Phase-space point.
#[derive(Debug, Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    lp: f64,
}

struct Transition {
    accept_stat: f64,
    n_leapfrog: usize,
    depth: usize,
    divergent: bool,
}

struct Nuts<'a, T: ?Sized> {
    target: &'a T,
    dim: usize,
    inv_metric: Vec<f64>,
    step_size: f64,
    max_depth: usize,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn sum(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

impl<'a, T: Target + ?Sized> Nuts<'a, T> {
    fn hamiltonian(&self, z: &State) -> f64 {
        let kinetic: f64 = z
            .p
            .iter()
            .zip(&self.inv_metric)
            .map(|(p, m)| p * p * m)
            .sum();
        let h = -z.lp + 0.5 * kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &State) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&self, z: &mut State, rng: &mut ChaCha8Rng) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / sqrt(*m);
        }
    }

    fn leapfrog(&self, z: &mut State, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        match self.target.log_density_grad(&z.q, &mut z.g) {
            Ok(lp) => {
                z.lp = lp;
                for (p, g) in z.p.iter_mut().zip(&z.g) {
                    *p += 0.5 * eps * g;
                }
            }
            Err(_) => {
                z.lp = f64::NEG_INFINITY;
                z.g.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Step-size heuristic: double or halve until a single leapfrog step
    /// crosses an acceptance probability of 0.8.
    fn init_step_size(&mut self, z: &mut State, rng: &mut ChaCha8Rng) {
        let init = z.clone();
        let threshold = ln(0.8);
        let mut direction = 0i32;
        for _ in 0..100 {
            let mut trial = init.clone();
            self.sample_momentum(&mut trial, rng);
            let h0 = self.hamiltonian(&trial);
            self.leapfrog(&mut trial, self.step_size);
            let delta_h = h0 - self.hamiltonian(&trial);
            let here = if delta_h > threshold { 1 } else { -1 };
            if direction == 0 {
                direction = here;
            } else if here != direction {
                break;
            }
            let next = if direction == 1 { 2.0 * self.step_size } else { 0.5 * self.step_size };
            if !(next > 1e-12 && next < 1e7) {
                break;
            }
            self.step_size = next;
        }
        *z = init;
    }

    fn transition(&mut self, z: &mut State, rng: &mut ChaCha8Rng) -> Transition {
        self.sample_momentum(z, rng);
        self.n_leapfrog = 0;
        self.sum_metro_prob = 0.0;
        self.divergent = false;
        let h0 = self.hamiltonian(z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        // Momenta and velocities at the two extremes of the trajectory.
        let mut p_fwd = z.p.clone();
        let mut p_sharp_fwd = self.p_sharp(z);
        let mut p_bck = z.p.clone();
        let mut p_sharp_bck = p_sharp_fwd.clone();

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_new = vec![0.0; self.dim];
            let mut p_near = vec![0.0; self.dim];
            let mut p_sharp_near = vec![0.0; self.dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let forward = uniform(rng) > 0.5;
            // The old trajectory's extreme adjacent to the new subtree.
            let (p_old, p_sharp_old) = if forward {
                (p_fwd.clone(), p_sharp_fwd.clone())
            } else {
                (p_bck.clone(), p_sharp_bck.clone())
            };
            let valid = if forward {
                self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut p_sharp_near,
                    &mut p_sharp_fwd,
                    &mut rho_new,
                    &mut p_near,
                    &mut p_fwd,
                    h0,
                    1.0,
                    &mut log_sum_weight_subtree,
                    rng,
                )
            } else {
                self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut p_sharp_near,
                    &mut p_sharp_bck,
                    &mut rho_new,
                    &mut p_near,
                    &mut p_bck,
                    h0,
                    -1.0,
                    &mut log_sum_weight_subtree,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight
                || uniform(rng) < exp(log_sum_weight_subtree - log_sum_weight)
            {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            // Whole trajectory, then each half extended by the neighbouring
            // point of the other half.
            let old_ext = sum(&rho, &p_near);
            let new_ext = sum(&rho_new, &p_old);
            add_into(&mut rho, &rho_new);
            let mut persist = no_u_turn(&p_sharp_bck, &p_sharp_fwd, &rho);
            if forward {
                persist &= no_u_turn(&p_sharp_bck, &p_sharp_near, &old_ext);
                persist &= no_u_turn(&p_sharp_old, &p_sharp_fwd, &new_ext);
            } else {
                persist &= no_u_turn(&p_sharp_near, &p_sharp_fwd, &old_ext);
                persist &= no_u_turn(&p_sharp_bck, &p_sharp_old, &new_ext);
            }
            if !persist {
                break;
            }
        }

        let accept_stat = if self.n_leapfrog > 0 {
            self.sum_metro_prob / self.n_leapfrog as f64
        } else {
            0.0
        };
        *z = z_sample;
        Transition {
            accept_stat,
            n_leapfrog: self.n_leapfrog,
            depth,
            divergent: self.divergent,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut State,
        z_propose: &mut State,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            self.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            self.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { exp(h0 - h) };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(z);
            p_sharp_end.clone_from(p_sharp_beg);
            add_into(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }

        let mut p_sharp_init_end = vec![0.0; self.dim];
        let mut p_init_end = vec![0.0; self.dim];
        let mut rho_init = vec![0.0; self.dim];
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut log_sum_weight_init,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut p_sharp_final_beg = vec![0.0; self.dim];
        let mut p_final_beg = vec![0.0; self.dim];
        let mut rho_final = vec![0.0; self.dim];
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut log_sum_weight_final,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree
            || uniform(rng) < exp(log_sum_weight_final - log_sum_weight_subtree)
        {
            *z_propose = z_propose_final;
        }

        let rho_subtree = sum(&rho_init, &rho_final);
        add_into(rho, &rho_subtree);
        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext = sum(&rho_init, &p_final_beg);
        persist &= no_u_turn(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext = sum(&rho_final, &p_init_end);
        persist &= no_u_turn(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(target: f64, step_size: f64) -> Self {
        Self {
            target,
            mu: ln(10.0 * step_size),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let w = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - w) * self.s_bar + w * (self.target - a);
        let x = self.mu - self.s_bar * sqrt(self.counter) / Self::GAMMA;
        let x_eta = libm::pow(self.counter, -Self::KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        exp(x)
    }

    fn final_step_size(&self) -> f64 {
        exp(self.x_bar)
    }
}

/// Warm-up layout: a fast initial buffer, metric windows that double in
/// length, and a fast terminal buffer.
struct WindowSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowSchedule {
    fn new(num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if num_warmup < 20 {
            return Self {
                num_warmup,
                init_buffer: num_warmup,
                term_buffer: 0,
                window_size: 0,
                next_window: usize::MAX,
                counter: 0,
            };
        }
        if init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = num_warmup * 15 / 100;
            term_buffer = num_warmup / 10;
            base_window = num_warmup - (init_buffer + term_buffer);
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn advance(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    fn tick(&mut self) {
        self.counter += 1;
    }
}

struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.count.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }
}

// ---------------------------------------------------------------------------
// Diagnostics

fn check_chains(chains: &[&[f64]]) -> Result<usize> {
    let n = chains.first().map_or(0, |c| c.len());
    if n < 4 || chains.iter().any(|c| c.len() != n) || chains.iter().flat_map(|c| c.iter()).any(|x| !x.is_finite()) {
        return Err(Error::InsufficientDraws);
    }
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&x| x == first)) {
        return Err(Error::ZeroVariance);
    }
    Ok(n)
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let half = chains[0].len() / 2;
    let len = chains[0].len();
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[len - half..]])
        .collect()
}

/// Normal scores of pooled average ranks, `ndtri((r - 3/8) / (S + 1/4))`.
fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().enumerate().map(move |(i, &x)| (x, ci, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = ndtri((rank - 0.375) / (s + 0.25));
        for &(_, ci, k) in &idx[i..=j] {
            out[ci][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn median_of(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn rhat_basic(seqs: &[Vec<f64>]) -> Result<f64> {
    let n = seqs[0].len() as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let vars: Vec<f64> = seqs.iter().map(|s| sample_var(s)).collect();
    let w = mean(&vars);
    if !(w > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let b = n * means.iter().map(|x| { let d = x - mean(&means); d * d }).sum::<f64>() / (m - 1.0);
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok(sqrt(var_plus / w))
}

/// Split R-hat: the largest of the rank-normalised bulk, rank-normalised
/// folded and raw-scale versions. Each chain is split in half, so one chain
/// suffices.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split_halves(chains);
    let bulk = rhat_basic(&rank_normalize(&halves))?;
    let all: Vec<f64> = halves.iter().flat_map(|c| c.iter().copied()).collect();
    let med = median_of(&all);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let folded_refs: Vec<&[f64]> = folded.iter().map(|c| c.as_slice()).collect();
    let tail = rhat_basic(&rank_normalize(&folded_refs))?;
    let raw: Vec<Vec<f64>> = halves.iter().map(|c| c.to_vec()).collect();
    let raw = rhat_basic(&raw)?;
    Ok(bulk.max(tail).max(raw))
}

/// Geyer initial-monotone ESS of the given sequences, without splitting or
/// rank normalisation.
pub fn ess_basic(chains: &[&[f64]]) -> Result<f64> {
    let n = check_chains(chains)?;
    let seqs: Vec<Vec<f64>> = chains.iter().map(|c| c.to_vec()).collect();
    ess_core(&seqs, n)
}

fn ess_core(seqs: &[Vec<f64>], n: usize) -> Result<f64> {
    let m = seqs.len();
    let nf = n as f64;
    let centred: Vec<Vec<f64>> = seqs
        .iter()
        .map(|s| {
            let mu = mean(s);
            s.iter().map(|x| x - mu).collect()
        })
        .collect();
    let autocov = |lag: usize| -> f64 {
        centred
            .iter()
            .map(|c| dot(&c[..n - lag], &c[lag..]) / nf)
            .sum::<f64>()
            / m as f64
    };
    let chain_means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let mean_var = autocov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&chain_means);
    }
    if !(var_plus > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - autocov(lag)) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 3 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t - 2;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau_hat = -1.0 + 2.0 * rho[..=max_t].iter().sum::<f64>() + rho[max_t + 1];
    let tau_hat = tau_hat.max(1.0 / libm::log10(total));
    Ok(total / tau_hat)
}

/// Bulk effective sample size: Geyer initial-monotone estimator on split,
/// rank-normalised chains.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    check_chains(chains)?;
    let halves = split_halves(chains);
    let n = halves[0].len();
    ess_core(&rank_normalize(&halves), n)
}

/// Shortest window holding `ceil(0.95 N)` of the sorted draws.
pub fn hdi_95(sorted: &[f64]) -> Result<(f64, f64)> {
    hdi(sorted, 0.95)
}

pub fn hdi(sorted: &[f64], mass: f64) -> Result<(f64, f64)> {
    let n = sorted.len();
    if n < 100 {
        return Err(Error::InsufficientDraws);
    }
    let keep = libm::ceil(mass * n as f64) as usize;
    let keep = keep.clamp(1, n);
    let mut best = 0;
    let mut width = f64::INFINITY;
    for i in 0..=n - keep {
        let w = sorted[i + keep - 1] - sorted[i];
        if w < width {
            width = w;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + keep - 1]))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantitySummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub hdi_low: f64,
    pub hdi_high: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorSummary {
    pub quantities: Vec<QuantitySummary>,
    pub num_chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
    pub accept_rates: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&QuantitySummary> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn total_draws(&self) -> usize {
        self.num_chains * self.draws_per_chain
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.quantities.iter().filter_map(|q| q.rhat).reduce(f64::max)
    }

    pub fn min_ess(&self) -> Option<f64> {
        self.quantities.iter().filter_map(|q| q.ess).reduce(f64::min)
    }
}

/// Decodes every retained draw through `model` and aggregates each named
/// quantity. Diagnostics that cannot be computed become warnings.
pub fn summarize<Q: Quantities + ?Sized>(chains: &[ChainResult], model: &Q) -> Result<PosteriorSummary> {
    let n = chains.first().map_or(0, |c| c.num_draws());
    if n < 100 || chains.iter().any(|c| c.num_draws() != n) {
        return Err(Error::InsufficientDraws);
    }
    let mut ordered: Vec<&ChainResult> = chains.iter().collect();
    ordered.sort_by(|a, b| {
        a.draws
            .iter()
            .zip(&b.draws)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let names = model.quantity_names();
    let nq = names.len();
    // values[q][chain][draw]
    let mut values = vec![vec![Vec::with_capacity(n); ordered.len()]; nq];
    let mut buf = Vec::with_capacity(nq);
    for (ci, c) in ordered.iter().enumerate() {
        for d in c.draws_iter() {
            model.quantities_into(d, &mut buf);
            for (qi, v) in buf.iter().enumerate() {
                values[qi][ci].push(*v);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut quantities = Vec::with_capacity(nq);
    for (name, per_chain) in names.into_iter().zip(values) {
        let refs: Vec<&[f64]> = per_chain.iter().map(|c| c.as_slice()).collect();
        let mut sorted: Vec<f64> = per_chain.iter().flatten().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len() as f64;
        let mu = sorted.iter().sum::<f64>() / total;
        let sd = sqrt(sorted.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (total - 1.0));
        let (hdi_low, hdi_high) = hdi_95(&sorted)?;
        let eti = quantile_sorted(&sorted, 0.975) - quantile_sorted(&sorted, 0.025);
        if hdi_high > hdi_low && eti / (hdi_high - hdi_low) > 1.5 {
            warnings.push(format!("{name}: equal-tailed interval is more than 1.5x the HDI width; margin may be multimodal"));
        }
        let rhat = match split_rhat(&refs) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("{name}: R-hat unavailable ({e})"));
                None
            }
        };
        let ess = match effective_sample_size(&refs) {
            Ok(e) => Some(e),
            Err(e) => {
                warnings.push(format!("{name}: ESS unavailable ({e})"));
                None
            }
        };
        quantities.push(QuantitySummary {
            name,
            mean: mu,
            sd,
            median: quantile_sorted(&sorted, 0.5),
            hdi_low,
            hdi_high,
            rhat,
            ess,
        });
    }
    let divergences = ordered.iter().map(|c| c.divergence_count).sum();
    if divergences > 0 {
        warnings.push(format!("{divergences} divergent transitions after warm-up"));
    }
    Ok(PosteriorSummary {
        quantities,
        num_chains: ordered.len(),
        draws_per_chain: n,
        divergences,
        step_sizes: ordered.iter().map(|c| c.step_size).collect(),
        accept_rates: ordered.iter().map(|c| c.accept_rate).collect(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::Kernel;

    /// Independent normals with the given scales.
    struct DiagNormal(Vec<f64>);

    impl Target for DiagNormal {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn log_density_grad(&self, q: &[f64], g: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for ((x, s), gi) in q.iter().zip(&self.0).zip(g.iter_mut()) {
                lp -= 0.5 * (x / s) * (x / s);
                *gi = -x / (s * s);
            }
            Ok(lp)
        }
        fn initial_point(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
            Ok((0..self.0.len()).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect())
        }
    }

    impl Quantities for DiagNormal {
        fn quantity_names(&self) -> Vec<String> {
            (0..self.0.len()).map(|i| format!("x{i}")).collect()
        }
        fn quantities_into(&self, q: &[f64], out: &mut Vec<f64>) {
            out.clear();
            out.extend_from_slice(q);
        }
    }

    /// Bivariate normal, unit variances, correlation `r`.
    struct Correlated(f64);

    impl Target for Correlated {
        fn dim(&self) -> usize {
            2
        }
        fn log_density_grad(&self, q: &[f64], g: &mut [f64]) -> Result<f64> {
            let r = self.0;
            let c = 1.0 / (1.0 - r * r);
            g[0] = -c * (q[0] - r * q[1]);
            g[1] = -c * (q[1] - r * q[0]);
            Ok(-0.5 * c * (q[0] * q[0] - 2.0 * r * q[0] * q[1] + q[1] * q[1]))
        }
        fn initial_point(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
            Ok(vec![4.0 * rng.random::<f64>() - 2.0, 4.0 * rng.random::<f64>() - 2.0])
        }
    }

    fn pooled(chains: &[ChainResult], j: usize) -> Vec<f64> {
        chains.iter().flat_map(|c| c.coordinate(j)).collect()
    }

    #[test]
    fn standard_normal_moments() {
        let target = DiagNormal(vec![1.0; 5]);
        let cfg = SamplerConfig { seed: 11, ..Default::default() };
        let chains = run_chains(&target, &cfg).unwrap();
        for j in 0..5 {
            let x = pooled(&chains, j);
            let m = mean(&x);
            let s = sqrt(sample_var(&x));
            assert!(m.abs() < 0.05, "coordinate {j}: mean {m}");
            assert!((s - 1.0).abs() < 0.05, "coordinate {j}: sd {s}");
        }
        for c in &chains {
            assert_eq!(c.divergence_count, 0);
            assert!(c.draws.iter().all(|x| x.is_finite()));
            assert!(c.step_size > 0.0);
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let target = DiagNormal(vec![1.0, 3.0, 0.1]);
        let cfg = SamplerConfig { chains: 2, warmup_draws: 200, retained_draws: 200, seed: 5, ..Default::default() };
        let a = run_chains(&target, &cfg).unwrap();
        let b = run_chains(&target, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].draws, a[1].draws);
    }

    #[test]
    fn adaptation_learns_scales() {
        let target = DiagNormal(vec![0.01, 1.0, 100.0]);
        let cfg = SamplerConfig { chains: 1, seed: 3, ..Default::default() };
        let c = run_chain(&target, &cfg, 0).unwrap();
        let ratio = c.inv_metric[2] / c.inv_metric[0];
        assert!(ratio > 1e7 && ratio < 1e9, "{ratio}");
        let s = sqrt(sample_var(&c.coordinate(2)));
        assert!((s / 100.0 - 1.0).abs() < 0.15, "{s}");
    }

    /// Five independent 4 x 2000 runs, pooled: at 0.03 a single run's
    /// quantile error is about one Monte Carlo standard deviation.
    #[test]
    fn correlated_normal_quantiles() {
        let target = Correlated(0.9);
        let mut x = [Vec::new(), Vec::new()];
        for run in 0..5u64 {
            let cfg = SamplerConfig { retained_draws: 2000, seed: run << 32, ..Default::default() };
            let chains = run_chains(&target, &cfg).unwrap();
            for (j, xs) in x.iter_mut().enumerate() {
                xs.extend(pooled(&chains, j));
            }
        }
        for xs in &mut x {
            xs.sort_by(f64::total_cmp);
            for k in 1..10 {
                let p = k as f64 / 10.0;
                let got = quantile_sorted(xs, p);
                let want = ndtri(p);
                assert!((got - want).abs() < 0.03, "p={p}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn energy_is_conserved_at_small_steps() {
        let target = Correlated(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z = initial_state(&target, &mut rng).unwrap();
        let nuts = Nuts {
            target: &target,
            dim: 2,
            inv_metric: vec![1.0; 2],
            step_size: 1e-3,
            max_depth: 10,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        nuts.sample_momentum(&mut z, &mut rng);
        let h0 = nuts.hamiltonian(&z);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            nuts.leapfrog(&mut z, 1e-3);
            worst = worst.max((nuts.hamiltonian(&z) - h0).abs());
        }
        assert!(worst <= 1e-4, "{worst}");
    }

    #[test]
    fn unreachable_target_reports_gradient_failure() {
        struct Nowhere;
        impl Target for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
                Err(Error::NonFiniteDensity)
            }
            fn initial_point(&self, _: &mut dyn RngCore) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let cfg = SamplerConfig::default();
        assert!(matches!(run_chain(&Nowhere, &cfg, 0), Err(Error::GradientFailure(_))));
    }

    fn white_noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn rhat_examples() {
        let x = white_noise(1000, 1);
        let r = split_rhat(&[&x, &x, &x, &x]).unwrap();
        assert!(r < 1.01, "{r}");
        let shifted: Vec<f64> = x.iter().map(|v| v + 10.0).collect();
        let r = split_rhat(&[&x, &shifted]).unwrap();
        assert!(r > 2.0, "{r}");
        let c = vec![3.0; 500];
        assert!(split_rhat(&[&c, &c]).is_err());
        assert_eq!(split_rhat(&[&x[..3]]), Err(Error::InsufficientDraws));
    }

    #[test]
    fn ess_examples() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| white_noise(1000, 10 + s)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let e = effective_sample_size(&refs).unwrap();
        assert!((3200.0..=4800.0).contains(&e), "{e}");

        let n = 20_000;
        let rho = 0.9;
        let noise = white_noise(n, 99);
        let mut ar = vec![0.0; n];
        for i in 1..n {
            ar[i] = rho * ar[i - 1] + sqrt(1.0 - rho * rho) * noise[i];
        }
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        for e in [effective_sample_size(&[&ar]).unwrap(), ess_basic(&[&ar]).unwrap()] {
            assert!(e > expected / 1.5 && e < expected * 1.5, "{e} vs {expected}");
        }
        let c = vec![1.0; 1000];
        assert!(effective_sample_size(&[&c]).is_err());
    }

    #[test]
    fn hdi_examples() {
        let grid: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
        let (lo, hi) = hdi_95(&grid).unwrap();
        assert!((hi - lo - 0.95).abs() <= 2.0 / 1000.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Kernel::normal(0.0, 1.0).unwrap();
        let mut x: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        x.sort_by(f64::total_cmp);
        let (lo, hi) = hdi_95(&x).unwrap();
        assert!((lo + 1.96).abs() < 0.03 && (hi - 1.96).abs() < 0.03, "{lo} {hi}");

        let mut e: Vec<f64> = (0..100_000).map(|_| -ln(rng.random::<f64>())).collect();
        e.sort_by(f64::total_cmp);
        let (lo, hi) = hdi_95(&e).unwrap();
        assert!(lo < 0.01, "{lo}");
        assert!((hi - 2.995_732).abs() < 0.05, "{hi}");

        assert_eq!(hdi_95(&grid[..99]), Err(Error::InsufficientDraws));
    }

    #[test]
    fn summary_is_independent_of_chain_order() {
        let target = DiagNormal(vec![1.0, 2.0]);
        let cfg = SamplerConfig { warmup_draws: 300, retained_draws: 300, seed: 8, ..Default::default() };
        let chains = run_chains(&target, &cfg).unwrap();
        let a = summarize(&chains, &target).unwrap();
        let mut rev = chains.clone();
        rev.reverse();
        let b = summarize(&rev, &target).unwrap();
        assert_eq!(a, b);
        let q = a.get("x1").unwrap();
        assert!(q.hdi_low < q.hdi_high);
        assert!(q.rhat.unwrap() < 1.05);
        assert_eq!(a.divergences, 0);
    }

    #[test]
    fn summary_rejects_short_runs() {
        let target = DiagNormal(vec![1.0]);
        let cfg = SamplerConfig { chains: 1, warmup_draws: 50, retained_draws: 50, ..Default::default() };
        let chains = run_chains(&target, &cfg).unwrap();
        assert_eq!(summarize(&chains, &target), Err(Error::InsufficientDraws));
    }
}
