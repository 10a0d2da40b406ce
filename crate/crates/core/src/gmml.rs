//! The meta-learning optimizer: epoch / outer / inner loops, the maximum-SE
//! recorder, and the GML / ML ablations.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{gaussian_matrix, ChannelPair, SystemConfig};
use crate::neural::trajectory::{backprop, precoder_pass, theta_pass, unroll, Episode};
use crate::neural::{AdamState, MlpParams, RegulatorSpec};
use crate::sysmetrics::{
    cascaded, grad_w_cascaded, grad_x_cascaded, normalize_power, normalize_precoder, spectral_efficiency,
    CompressedPrecoder, PhaseVector, Precoder,
};
use crate::{CMat, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Compressed precoder X, gradient inputs.
    Gmml,
    /// Full precoder W, gradient inputs.
    Gml,
    /// Full precoder W, iterate inputs.
    Ml,
}

/// Internal units the networks work in. Rescaling P and sigma^2 together by
/// 1/c^2 (and the precoder by 1/c) leaves every SINR unchanged, so the choice
/// only affects the magnitude of the network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gauge {
    /// Physical watts.
    Physical,
    /// c chosen so the first precoding-network input has unit RMS entry; the
    /// theta network sees dR/dtheta rescaled to unit RMS at every step.
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmlHyper {
    pub n_epochs: usize,
    pub n_outer: usize,
    pub n_inner: usize,
    pub alpha_x: f64,
    pub alpha_theta: f64,
    /// Regulator amplification.
    pub lambda: f64,
    /// Theta-network update interval in epochs.
    pub n0: usize,
    pub mode: Mode,
    /// Hidden layer widths shared by both networks.
    pub hidden: Vec<usize>,
    pub gauge: Gauge,
}

impl Default for GmmlHyper {
    fn default() -> Self {
        Self {
            n_epochs: 500,
            n_outer: 1,
            n_inner: 1,
            alpha_x: 1e-3,
            alpha_theta: 1.5e-3,
            lambda: 2.0 * PI,
            n0: 5,
            mode: Mode::Gmml,
            hidden: vec![200],
            gauge: Gauge::Unit,
        }
    }
}

impl GmmlHyper {
    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 || self.n_outer == 0 || self.n_inner == 0 || self.n0 == 0 {
            return Err(Error::Config("iteration counts and n0 must be at least 1".into()));
        }
        if !(self.alpha_x > 0.0 && self.alpha_theta > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        RegulatorSpec::new(self.lambda)?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("need at least one hidden layer of nonzero width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// SE of the epoch's (W*, Theta*) on the design channel.
    pub design_se: f64,
    /// Same solution on the evaluation channel.
    pub eval_se: f64,
    /// Running maximum of `design_se`.
    pub best_se: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimings {
    pub setup_ms: f64,
    pub forward_ms: f64,
    pub backward_ms: f64,
    pub update_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Largest |Tr(W^H W) / P - 1| over every inner iterate.
    pub max_power_rel_err: f64,
    /// Largest ||Theta_nn| - 1| over every inner iterate.
    pub max_unit_modulus_err: f64,
    pub regulator_min: f64,
    pub regulator_max: f64,
    /// Precoder scale c: physical = c * internal.
    pub gauge_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub mode: Mode,
    pub epochs: Vec<EpochRecord>,
    /// MAX recorder on the design channel.
    pub best_se: f64,
    /// (W_opt, Theta_opt) evaluated on the evaluation channel.
    pub best_eval_se: f64,
    pub w_opt: Precoder,
    pub theta_opt: PhaseVector,
    pub timings: PhaseTimings,
    pub diagnostics: Diagnostics,
}

impl RunTrace {
    /// One row per epoch: epoch, design_SE, eval_SE, best_SE, elapsed_ms.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,design_SE,eval_SE,best_SE,elapsed_ms\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.8e},{:.8e},{:.8e},{:.3}",
                r.epoch, r.design_se, r.eval_se, r.best_se, r.elapsed_ms
            );
        }
        s
    }
}

/// State visible to an observer after every outer iteration.
#[derive(Debug)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct OuterView<'a> {
    pub epoch: usize,
    pub theta_start: &'a PhaseVector,
    pub var_start: &'a CMat,
    pub pn: &'a MlpParams,
    pub tn: &'a MlpParams,
}

/// Theta network's inner loop with the inherited precoder held fixed.
pub fn tn_inner(
    theta_start: &PhaseVector,
    w_star: &Precoder,
    channel: &ChannelPair,
    cfg: &SystemConfig,
    params_tn: &MlpParams,
    spec: RegulatorSpec,
    n_inner: usize,
) -> Result<PhaseVector> {
    let hyper = GmmlHyper {
        n_inner,
        lambda: spec.lambda,
        ..GmmlHyper::default()
    };
    let pass = theta_pass(channel, cfg, theta_start, &w_star.0, false, params_tn, &hyper, None)?;
    Ok(pass.theta_steps.last().expect("n_inner >= 1").clone())
}

/// Precoding network's inner loop on the compressed precoder at fixed phases.
pub fn pn_inner(
    x_start: &CompressedPrecoder,
    theta_star: &PhaseVector,
    channel: &ChannelPair,
    cfg: &SystemConfig,
    params_pn: &MlpParams,
    n_inner: usize,
) -> Result<(CompressedPrecoder, Precoder)> {
    let hyper = GmmlHyper {
        n_inner,
        ..GmmlHyper::default()
    };
    let pass = precoder_pass(channel, cfg, theta_star, &x_start.0, params_pn, &hyper, None)?;
    Ok((
        CompressedPrecoder(pass.var_steps.last().expect("n_inner >= 1").clone()),
        Precoder(pass.w_steps.last().expect("n_inner >= 1").clone()),
    ))
}

fn rms(m: &CMat) -> f64 {
    (m.iter().map(|z| z.norm_sqr()).sum::<f64>() / m.len() as f64).sqrt()
}

/// Draws the networks and initial point (in that order) and returns them in
/// physical units together with W^{(0,1)}.
struct Init {
    pn: MlpParams,
    tn: MlpParams,
    var0: CMat,
    w0: CMat,
    theta0: PhaseVector,
}

fn initialize<R: Rng + ?Sized>(
    channel: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    theta_start: Option<&PhaseVector>,
    rng: &mut R,
) -> Result<Init> {
    let (k, n, m) = (channel.k(), channel.n(), channel.m());
    let rows = if hyper.mode == Mode::Gmml { k } else { m };
    let pn = MlpParams::init(2 * rows, &hyper.hidden, 2 * rows, rng);
    let tn = MlpParams::init(n, &hyper.hidden, n, rng);
    let raw = gaussian_matrix(rows, k, rng);
    let theta0 = match theta_start {
        Some(t) if t.len() != n => return Err(Error::dim("initial phases", n, t.len())),
        Some(t) => t.clone(),
        None => PhaseVector::new((0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect())?,
    };
    let hc0 = cascaded(&channel.h, &theta0, &channel.g)?;
    let (var0, w0) = if hyper.mode == Mode::Gmml {
        let x0 = normalize_power(&CompressedPrecoder(raw), &hc0, cfg.power)?;
        let w0 = hc0.0.adjoint() * &x0.0;
        (x0.0, w0)
    } else {
        let w0 = normalize_precoder(&Precoder(raw), cfg.power)?.0;
        (w0.clone(), w0)
    };
    Ok(Init {
        pn,
        tn,
        var0,
        w0,
        theta0,
    })
}

fn gauge_scale(channel: &ChannelPair, cfg: &SystemConfig, hyper: &GmmlHyper, init: &Init) -> Result<f64> {
    if hyper.gauge == Gauge::Physical {
        return Ok(1.0);
    }
    let hc0 = cascaded(&channel.h, &init.theta0, &channel.g)?;
    let r = match hyper.mode {
        Mode::Gmml => 1.0 / rms(&grad_x_cascaded(&hc0, &CompressedPrecoder(init.var0.clone()), cfg)?.0),
        Mode::Gml => 1.0 / rms(&grad_w_cascaded(&hc0, &Precoder(init.var0.clone()), cfg)?.0),
        Mode::Ml => rms(&init.var0),
    };
    Ok(if r.is_finite() && r > 0.0 { r } else { 1.0 })
}

/// Runs the optimizer on `channel_design` and reports every epoch's solution
/// on `channel_eval` as well.
pub fn run<R: Rng + ?Sized>(
    channel_design: &ChannelPair,
    channel_eval: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    rng: &mut R,
) -> Result<RunTrace> {
    run_observed(channel_design, channel_eval, cfg, hyper, None, rng, None, &mut |_| {})
}

/// [`run`] from given initial phases instead of drawn ones; the networks and
/// the initial precoder still come from `rng`.
pub fn run_from<R: Rng + ?Sized>(
    channel_design: &ChannelPair,
    channel_eval: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    theta_start: &PhaseVector,
    rng: &mut R,
) -> Result<RunTrace> {
    run_observed(channel_design, channel_eval, cfg, hyper, Some(theta_start), rng, None, &mut |_| {})
}

/// [`run`] with the mode overridden.
pub fn run_variant<R: Rng + ?Sized>(
    mode: Mode,
    channel_design: &ChannelPair,
    channel_eval: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    rng: &mut R,
) -> Result<RunTrace> {
    let h = GmmlHyper {
        mode,
        ..hyper.clone()
    };
    run(channel_design, channel_eval, cfg, &h, rng)
}

pub(crate) fn run_observed<R: Rng + ?Sized>(
    design: &ChannelPair,
    eval: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    theta_start: Option<&PhaseVector>,
    rng: &mut R,
    nets: Option<(MlpParams, MlpParams)>,
    observer: &mut dyn FnMut(&OuterView<'_>),
) -> Result<RunTrace> {
    let start = Instant::now();
    hyper.validate()?;
    cfg.validate()?;
    design.check_dims(cfg)?;
    eval.check_dims(cfg)?;

    let init = initialize(design, cfg, hyper, theta_start, rng)?;
    let c = gauge_scale(design, cfg, hyper, &init)?;
    let normalize_theta_input = hyper.gauge == Gauge::Unit;
    let inv_c = C64::new(1.0 / c, 0.0);
    let mut icfg = cfg.clone();
    icfg.power = cfg.power / (c * c);
    icfg.noise_power = cfg.noise_power / (c * c);
    let var0 = &init.var0 * inv_c;
    let theta0 = init.theta0.clone();
    let mut w_inh = &init.w0 * inv_c;
    let (mut pn, mut tn) = nets.unwrap_or((init.pn, init.tn));
    let mut pn_adam = AdamState::new(&pn);
    let mut tn_adam = AdamState::new(&tn);

    let mut timings = PhaseTimings {
        setup_ms: start.elapsed().as_secs_f64() * 1e3,
        ..PhaseTimings::default()
    };
    let mut diag = Diagnostics {
        max_power_rel_err: 0.0,
        max_unit_modulus_err: 0.0,
        regulator_min: f64::INFINITY,
        regulator_max: f64::NEG_INFINITY,
        gauge_scale: c,
    };
    let scale = C64::new(c, 0.0);
    let mut best = 0.0;
    let mut w_opt = Precoder(init.w0.clone());
    let mut theta_opt = theta0.clone();
    let mut epochs = Vec::with_capacity(hyper.n_epochs);

    for epoch in 1..=hyper.n_epochs {
        let ctx = format!("epoch {epoch}");
        let mut g_pn = pn.zeros_like();
        let mut g_tn = tn.zeros_like();
        let mut last = (0.0, 0.0);
        for _ in 0..hyper.n_outer {
            observer(&OuterView {
                epoch,
                theta_start: &theta0,
                var_start: &var0,
                pn: &pn,
                tn: &tn,
            });
            let ep = Episode {
                channel: design,
                cfg: &icfg,
                theta_init: &theta0,
                var_init: &var0,
                w_inherited: &w_inh,
                normalize_theta_input,
            };
            let t0 = Instant::now();
            let fwd = unroll(&ep, &pn, &tn, hyper, None).map_err(|e| e.in_context(&ctx))?;
            let t1 = Instant::now();
            let grads = backprop(&ep, &fwd, &pn, &tn, hyper).map_err(|e| e.in_context(&ctx))?;
            timings.forward_ms += (t1 - t0).as_secs_f64() * 1e3;
            timings.backward_ms += t1.elapsed().as_secs_f64() * 1e3;
            g_pn.add_assign(&grads.pn);
            g_tn.add_assign(&grads.tn);

            for w in &fwd.precoder.w_steps {
                let p: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>() * c * c;
                diag.max_power_rel_err = diag.max_power_rel_err.max((p / cfg.power - 1.0).abs());
            }
            for th in &fwd.theta.theta_steps {
                for z in th.unit_diag() {
                    diag.max_unit_modulus_err = diag.max_unit_modulus_err.max((z.norm() - 1.0).abs());
                }
            }
            for inc in &fwd.theta.increments {
                for v in inc {
                    diag.regulator_min = diag.regulator_min.min(*v);
                    diag.regulator_max = diag.regulator_max.max(*v);
                }
            }

            let w_phys = Precoder(fwd.w_star() * scale);
            let theta_star = fwd.theta_star().clone();
            let design_se = spectral_efficiency(&w_phys, &theta_star, design, cfg)?;
            let eval_se = if std::ptr::eq(design, eval) {
                design_se
            } else {
                spectral_efficiency(&w_phys, &theta_star, eval, cfg)?
            };
            if design_se > best {
                best = design_se;
                w_opt = w_phys;
                theta_opt = theta_star;
            }
            last = (design_se, eval_se);
            w_inh = fwd.w_star().clone();
        }

        let t2 = Instant::now();
        if hyper.n_outer > 1 {
            let inv = 1.0 / hyper.n_outer as f64;
            g_pn.values_mut().for_each(|v| *v *= inv);
            g_tn.values_mut().for_each(|v| *v *= inv);
        }
        pn_adam.step(&mut pn, &g_pn, hyper.alpha_x)?;
        if epoch % hyper.n0 == 0 {
            tn_adam.step(&mut tn, &g_tn, hyper.alpha_theta)?;
        }
        if !pn.is_finite() || !tn.is_finite() {
            return Err(Error::numeric(format!("{ctx}/adam"), "non-finite parameters"));
        }
        timings.update_ms += t2.elapsed().as_secs_f64() * 1e3;

        epochs.push(EpochRecord {
            epoch,
            design_se: last.0,
            eval_se: last.1,
            best_se: best,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let best_eval_se = if std::ptr::eq(design, eval) {
        best
    } else {
        spectral_efficiency(&w_opt, &theta_opt, eval, cfg)?
    };
    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(RunTrace {
        mode: hyper.mode,
        epochs,
        best_se: best,
        best_eval_se,
        w_opt,
        theta_opt,
        timings,
        diagnostics: diag,
    })
}
