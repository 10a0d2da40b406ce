//! Reference solvers: WMMSE, Riemannian conjugate gradient on the phases,
//! their alternating composition, random phases, and the restart upper bound.

mod rcg;
mod wmmse;

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use rcg::{rcg_theta, RcgOptions, RcgOutcome, RcgState};
pub use wmmse::{mrt_init, wmmse, wmmse_run, WmmseOutcome, WmmseState};

use crate::chanmodel::{ChannelPair, SystemConfig};
use crate::harness::derive_seed;
use crate::sysmetrics::{cascaded, spectral_efficiency, PhaseVector, Precoder};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoOptions {
    pub outer_tol: f64,
    pub max_outer: usize,
    pub wmmse_tol: f64,
    pub wmmse_max_iter: usize,
    pub rcg: RcgOptions,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            outer_tol: 1e-4,
            max_outer: 30,
            wmmse_tol: 1e-6,
            wmmse_max_iter: 200,
            rcg: RcgOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    pub w: Precoder,
    pub theta: PhaseVector,
    /// SE after each outer loop (WMMSE then RCG).
    pub trace: Vec<f64>,
    /// SE after the WMMSE half of each outer loop.
    pub wmmse_trace: Vec<f64>,
}

impl AoOutcome {
    pub fn se(&self) -> f64 {
        self.trace.last().copied().unwrap_or(0.0)
    }

    pub fn outer_loops(&self) -> usize {
        self.trace.len()
    }
}

/// Alternates WMMSE at fixed phases and RCG at fixed precoder. WMMSE is
/// warm-started from the previous precoder, so the per-loop SE never drops.
/// With `w_init`, the first loop's gain is measured against that point.
pub fn ao(
    channel: &ChannelPair,
    cfg: &SystemConfig,
    theta_init: &PhaseVector,
    w_init: Option<&Precoder>,
    opts: &AoOptions,
) -> Result<AoOutcome> {
    cfg.validate()?;
    channel.check_dims(cfg)?;
    if opts.max_outer == 0 {
        return Err(Error::Config("max_outer must be at least 1".into()));
    }
    let mut theta = theta_init.clone();
    let mut w = w_init.cloned();
    let mut reference = match &w {
        Some(w) => Some(spectral_efficiency(w, &theta, channel, cfg)?),
        None => None,
    };
    let mut trace = Vec::new();
    let mut wmmse_trace = Vec::new();
    for _ in 0..opts.max_outer {
        let hc = cascaded(&channel.h, &theta, &channel.g)?;
        let wm = wmmse_run(&hc, cfg, opts.wmmse_tol, opts.wmmse_max_iter, w.as_ref())?;
        let wm_se = wm.se();
        wmmse_trace.push(wm_se);
        let w_new = wm.state.w;
        let r = rcg_theta(&w_new, &theta, channel, cfg, &opts.rcg)?;
        let moved = r.theta != theta;
        let se = if moved { r.se() } else { wm_se };
        theta = r.theta;
        w = Some(w_new);
        trace.push(se);
        let done = match reference {
            Some(prev) => se - prev <= opts.outer_tol * prev.abs(),
            None => false,
        };
        reference = Some(se);
        if done || !moved {
            break;
        }
    }
    Ok(AoOutcome {
        w: w.expect("at least one outer loop"),
        theta,
        trace,
        wmmse_trace,
    })
}

/// Phases drawn i.i.d. uniform on [0, 2 pi).
pub fn random_phase<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<PhaseVector> {
    if cfg.n == 0 {
        return Err(Error::Config("RIS element count must be at least 1".into()));
    }
    PhaseVector::new((0..cfg.n).map(|_| rng.random_range(0.0..2.0 * PI)).collect())
}

/// Random phases followed by WMMSE at those phases.
pub fn random_phase_solution<R: Rng + ?Sized>(
    channel: &ChannelPair,
    cfg: &SystemConfig,
    rng: &mut R,
    opts: &AoOptions,
) -> Result<(Precoder, PhaseVector, f64)> {
    channel.check_dims(cfg)?;
    let theta = random_phase(cfg, rng)?;
    let hc = cascaded(&channel.h, &theta, &channel.g)?;
    let out = wmmse_run(&hc, cfg, opts.wmmse_tol, opts.wmmse_max_iter, None)?;
    let se = out.se();
    Ok((out.state.w, theta, se))
}

/// SE of each of `restarts` AO runs from independent random phases. Restart
/// r always uses the same stream, so larger restart sets contain smaller ones.
pub fn ao_restarts(channel: &ChannelPair, cfg: &SystemConfig, restarts: usize, seed: u64, opts: &AoOptions) -> Result<Vec<f64>> {
    if restarts == 0 {
        return Err(Error::Config("need at least one restart".into()));
    }
    (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed, r as u64));
            let theta = random_phase(cfg, &mut rng)?;
            Ok(ao(channel, cfg, &theta, None, opts)?.se())
        })
        .collect()
}

/// Best SE over independent AO restarts.
pub fn upper_bound_proxy(channel: &ChannelPair, cfg: &SystemConfig, restarts: usize, seed: u64, opts: &AoOptions) -> Result<f64> {
    Ok(ao_restarts(channel, cfg, restarts, seed, opts)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Per-iteration solver trace as `iteration,SE` CSV.
pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,SE\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{v:.8e}");
    }
    s
}
