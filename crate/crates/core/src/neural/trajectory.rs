//! One outer iteration of the meta optimizer, unrolled: the theta network's
//! inner steps, then the precoding network's inner steps at the resulting
//! phases, then the loss L = -R(W*, Theta*). The backward pass treats every
//! network input (gradients or iterates) as a constant.

use super::mlp::{backward_batch, forward_batch, ForwardCache, MlpParams};
use super::regulator::{regulator, regulator_derivative, RegulatorSpec};
use crate::chanmodel::{ChannelPair, SystemConfig};
use crate::gmml::{GmmlHyper, Mode};
use crate::sysmetrics::{
    cascaded, frob2, grad_theta, grad_w_cascaded, grad_x_cascaded, theta_grad_from_cascade_sens, CascadedChannel,
    CompressedPrecoder, PhaseVector, Precoder, SinrTerms,
};
use crate::{CMat, Error, RMat, Result, C64};

/// Fixed inputs of one outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub channel: &'a ChannelPair,
    pub cfg: &'a SystemConfig,
    /// Theta^{(0,1)}.
    pub theta_init: &'a PhaseVector,
    /// X^{(0,1)} (K x K) in the compressed mode, W^{(0,1)} (M x K) otherwise.
    pub var_init: &'a CMat,
    /// W* carried over from the previous outer iteration, used by the theta network.
    pub w_inherited: &'a CMat,
    /// Feed the theta network dR/dtheta divided by its own RMS.
    pub normalize_theta_input: bool,
}

/// Network inputs recorded during a forward pass; replaying them turns the
/// unrolled map into a plain function of the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenInputs {
    pub tn: Vec<Vec<f64>>,
    pub pn: Vec<RMat>,
}

/// Record of the theta network's inner steps.
#[derive(Debug, Clone)]
pub struct ThetaPass {
    pub theta_steps: Vec<PhaseVector>,
    /// Regulated increments (each entry in (0, lambda)).
    pub increments: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    caches: Vec<ForwardCache>,
}

/// Record of the precoding network's inner steps.
#[derive(Debug, Clone)]
pub struct PrecoderPass {
    pub hc: CascadedChannel,
    /// X or W after each step.
    pub var_steps: Vec<CMat>,
    /// Recovered precoder after each step.
    pub w_steps: Vec<CMat>,
    inputs: Vec<RMat>,
    caches: Vec<ForwardCache>,
    /// Pre-normalization iterate Y, its power p and scale s per step.
    ys: Vec<CMat>,
    ps: Vec<f64>,
    ss: Vec<f64>,
}

/// Everything the forward pass produced, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub theta: ThetaPass,
    pub precoder: PrecoderPass,
    pub se: f64,
}

impl Unrolled {
    pub fn theta_star(&self) -> &PhaseVector {
        self.theta.theta_steps.last().expect("at least one inner step")
    }

    pub fn var_star(&self) -> &CMat {
        self.precoder.var_steps.last().expect("at least one inner step")
    }

    pub fn w_star(&self) -> &CMat {
        self.precoder.w_steps.last().expect("at least one inner step")
    }

    pub fn frozen_inputs(&self) -> FrozenInputs {
        FrozenInputs {
            tn: self.theta.inputs.clone(),
            pn: self.precoder.inputs.clone(),
        }
    }

    pub fn loss(&self) -> f64 {
        -self.se
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrads {
    pub pn: MlpParams,
    pub tn: MlpParams,
    pub loss: f64,
}

/// Stacks a complex matrix as [Re; Im], column by column.
pub(crate) fn stack(m: &CMat) -> RMat {
    let r = m.nrows();
    RMat::from_fn(2 * r, m.ncols(), |i, j| if i < r { m[(i, j)].re } else { m[(i - r, j)].im })
}

pub(crate) fn unstack(m: &RMat) -> CMat {
    let r = m.nrows() / 2;
    CMat::from_fn(r, m.ncols(), |i, j| C64::new(m[(i, j)], m[(i + r, j)]))
}

fn ensure_finite<'a>(stage: &str, mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(stage, "non-finite value"))
    }
}

fn ensure_finite_c(stage: &str, m: &CMat) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(stage, "non-finite value"))
    }
}

/// Re <a, b> = Re sum conj(a) b.
fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn check_inner(hyper: &GmmlHyper) -> Result<()> {
    if hyper.n_inner == 0 {
        return Err(Error::Config("inner iteration count must be at least 1".into()));
    }
    Ok(())
}

/// The theta network's inner loop: N_i steps of
/// theta <- (theta + lambda sigmoid(TN(input))) mod 2 pi, where the input is
/// dR/dtheta at the inherited precoder (or theta itself in the ML variant).
/// The phase gradient is invariant to the power gauge, so its raw entries sit
/// at the physical SE scale; `normalize_input` rescales it to unit RMS.
pub fn theta_pass(
    channel: &ChannelPair,
    cfg: &SystemConfig,
    theta_init: &PhaseVector,
    w_inherited: &CMat,
    normalize_input: bool,
    tn: &MlpParams,
    hyper: &GmmlHyper,
    frozen: Option<&[Vec<f64>]>,
) -> Result<ThetaPass> {
    check_inner(hyper)?;
    let n = channel.n();
    if theta_init.len() != n {
        return Err(Error::dim("initial phases", n, theta_init.len()));
    }
    if tn.input_dim() != n || tn.output_dim() != n {
        return Err(Error::dim("theta network", n, tn.input_dim()));
    }
    if w_inherited.shape() != (channel.m(), channel.k()) {
        return Err(Error::dim(
            "inherited precoder",
            format!("{} x {}", channel.m(), channel.k()),
            format!("{:?}", w_inherited.shape()),
        ));
    }
    let spec = RegulatorSpec { lambda: hyper.lambda };
    let n_inner = hyper.n_inner;
    let mut pass = ThetaPass {
        theta_steps: Vec::with_capacity(n_inner),
        increments: Vec::with_capacity(n_inner),
        inputs: Vec::with_capacity(n_inner),
        raw: Vec::with_capacity(n_inner),
        caches: Vec::with_capacity(n_inner),
    };
    let mut theta = theta_init.clone();
    let w_inh = Precoder(w_inherited.clone());
    for i in 0..n_inner {
        let input = match frozen {
            Some(f) => f[i].clone(),
            None => match hyper.mode {
                Mode::Ml => theta.angles().to_vec(),
                _ => {
                    let g = grad_theta(&w_inh, &theta, channel, cfg)?;
                    let rms = (g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64).sqrt();
                    if normalize_input && rms > 0.0 {
                        g.into_iter().map(|v| v / rms).collect()
                    } else {
                        g
                    }
                }
            },
        };
        ensure_finite("theta gradient", input.iter())?;
        let (out, cache) = forward_batch(tn, &RMat::from_column_slice(input.len(), 1, &input))?;
        ensure_finite("theta network", out.iter())?;
        let raw = out.as_slice().to_vec();
        let inc = regulator(&raw, spec);
        theta = theta.rotated(&inc)?;
        pass.inputs.push(input);
        pass.raw.push(raw);
        pass.caches.push(cache);
        pass.increments.push(inc);
        pass.theta_steps.push(theta.clone());
    }
    Ok(pass)
}

/// The precoding network's inner loop at fixed phases: N_i steps of
/// V <- normalize(V + PN(input)) column by column, with V = X (recovered as
/// W = Hc^H X) in the compressed mode and V = W otherwise.
pub fn precoder_pass(
    channel: &ChannelPair,
    cfg: &SystemConfig,
    theta_star: &PhaseVector,
    var_init: &CMat,
    pn: &MlpParams,
    hyper: &GmmlHyper,
    frozen: Option<&[RMat]>,
) -> Result<PrecoderPass> {
    check_inner(hyper)?;
    let k = channel.k();
    let rows = if hyper.mode == Mode::Gmml { k } else { channel.m() };
    if var_init.shape() != (rows, k) {
        return Err(Error::dim("initial iterate", format!("{rows} x {k}"), format!("{:?}", var_init.shape())));
    }
    if pn.input_dim() != 2 * rows || pn.output_dim() != 2 * rows {
        return Err(Error::dim("precoding network", 2 * rows, pn.input_dim()));
    }
    let n_inner = hyper.n_inner;
    let power = cfg.power;
    let hc = cascaded(&channel.h, theta_star, &channel.g)?;
    let mut pass = PrecoderPass {
        hc,
        var_steps: Vec::with_capacity(n_inner),
        w_steps: Vec::with_capacity(n_inner),
        inputs: Vec::with_capacity(n_inner),
        caches: Vec::with_capacity(n_inner),
        ys: Vec::with_capacity(n_inner),
        ps: Vec::with_capacity(n_inner),
        ss: Vec::with_capacity(n_inner),
    };
    let hc = &pass.hc;
    let mut var = var_init.clone();
    for i in 0..n_inner {
        let input = match frozen {
            Some(f) => f[i].clone(),
            None => stack(&match hyper.mode {
                Mode::Gmml => grad_x_cascaded(hc, &CompressedPrecoder(var.clone()), cfg)?.0,
                Mode::Gml => grad_w_cascaded(hc, &Precoder(var.clone()), cfg)?.0,
                Mode::Ml => var.clone(),
            }),
        };
        ensure_finite("precoder gradient", input.iter())?;
        let (out, cache) = forward_batch(pn, &input)?;
        ensure_finite("precoding network", out.iter())?;
        let y = &var + unstack(&out);
        let w_pre = match hyper.mode {
            Mode::Gmml => hc.0.adjoint() * &y,
            _ => y.clone(),
        };
        let p = frob2(&w_pre);
        if !(p > 0.0) {
            return Err(Error::Degenerate(format!("precoder power before normalization is {p}")));
        }
        if !p.is_finite() {
            return Err(Error::numeric("power normalization", format!("power {p}")));
        }
        let s = (power / p).sqrt();
        var = &y * C64::new(s, 0.0);
        let w = match hyper.mode {
            Mode::Gmml => hc.0.adjoint() * &var,
            _ => var.clone(),
        };
        pass.inputs.push(input);
        pass.caches.push(cache);
        pass.ys.push(y);
        pass.ps.push(p);
        pass.ss.push(s);
        pass.var_steps.push(var.clone());
        pass.w_steps.push(w);
    }
    Ok(pass)
}

/// Forward pass of one outer iteration. With `frozen`, the recorded network
/// inputs are replayed instead of being recomputed from the iterates.
pub fn unroll(
    ep: &Episode<'_>,
    pn: &MlpParams,
    tn: &MlpParams,
    hyper: &GmmlHyper,
    frozen: Option<&FrozenInputs>,
) -> Result<Unrolled> {
    let theta = theta_pass(
        ep.channel,
        ep.cfg,
        ep.theta_init,
        ep.w_inherited,
        ep.normalize_theta_input,
        tn,
        hyper,
        frozen.map(|f| f.tn.as_slice()),
    )?;
    let theta_star = theta.theta_steps.last().expect("n_inner >= 1");
    let precoder = precoder_pass(
        ep.channel,
        ep.cfg,
        theta_star,
        ep.var_init,
        pn,
        hyper,
        frozen.map(|f| f.pn.as_slice()),
    )?;
    let a = &precoder.hc.0 * precoder.w_steps.last().expect("n_inner >= 1");
    let se = SinrTerms::new(&a, &ep.cfg.weights, ep.cfg.noise_power).se;
    if !se.is_finite() {
        return Err(Error::numeric("spectral efficiency", format!("{se}")));
    }
    Ok(Unrolled { theta, precoder, se })
}

/// Reverse pass for a forward record produced by [`unroll`] with the same
/// parameters. Returns gradients of L = -R.
pub fn backprop(
    ep: &Episode<'_>,
    fwd: &Unrolled,
    pn: &MlpParams,
    tn: &MlpParams,
    hyper: &GmmlHyper,
) -> Result<TrajectoryGrads> {
    let hc = &fwd.precoder.hc.0;
    let w = fwd.w_star();
    let a = hc * w;
    let ga = SinrTerms::new(&a, &ep.cfg.weights, ep.cfg.noise_power).grad_products(&a);

    let mut pn_grad = pn.zeros_like();
    let z = match hyper.mode {
        Mode::Gmml => {
            // a = Q X with Q = Hc Hc^H; sq collects dR/dQ.
            let q = hc * hc.adjoint();
            let mut g = &q * &ga;
            let mut sq = &ga * fwd.var_star().adjoint();
            for i in (0..fwd.precoder.ys.len()).rev() {
                let (y, p, s) = (&fwd.precoder.ys[i], fwd.precoder.ps[i], fwd.precoder.ss[i]);
                let beta = re_inner(&g, y);
                let qy = &q * y;
                let gy = &g * C64::new(s, 0.0) - qy * C64::new(beta * s / p, 0.0);
                sq -= (y * y.adjoint()) * C64::new(beta * s / (2.0 * p), 0.0);
                let (pg, _) = backward_batch(pn, &fwd.precoder.caches[i], &(-stack(&gy)))?;
                pn_grad.add_assign(&pg);
                g = gy;
            }
            (&sq + sq.adjoint()) * hc
        }
        Mode::Gml | Mode::Ml => {
            let mut g = hc.adjoint() * &ga;
            for i in (0..fwd.precoder.ys.len()).rev() {
                let (y, p, s) = (&fwd.precoder.ys[i], fwd.precoder.ps[i], fwd.precoder.ss[i]);
                let beta = re_inner(&g, y);
                let gy = &g * C64::new(s, 0.0) - y * C64::new(beta * s / p, 0.0);
                let (pg, _) = backward_batch(pn, &fwd.precoder.caches[i], &(-stack(&gy)))?;
                pn_grad.add_assign(&pg);
                g = gy;
            }
            &ga * w.adjoint()
        }
    };
    ensure_finite_c("cascade sensitivity", &z)?;
    let dtheta = theta_grad_from_cascade_sens(&ep.channel.h, &ep.channel.g, fwd.theta_star(), &z);
    ensure_finite("phase gradient", dtheta.iter())?;

    let spec = RegulatorSpec { lambda: hyper.lambda };
    let mut tn_grad = tn.zeros_like();
    for (raw, cache) in fwd.theta.raw.iter().zip(&fwd.theta.caches) {
        let der = regulator_derivative(raw, spec);
        let up = RMat::from_iterator(raw.len(), 1, dtheta.iter().zip(&der).map(|(d, r)| -d * r));
        let (tg, _) = backward_batch(tn, cache, &up)?;
        tn_grad.add_assign(&tg);
    }
    if !pn_grad.is_finite() || !tn_grad.is_finite() {
        return Err(Error::numeric("parameter gradients", "non-finite value"));
    }
    Ok(TrajectoryGrads {
        pn: pn_grad,
        tn: tn_grad,
        loss: fwd.loss(),
    })
}

/// Loss of one outer iteration and its gradients with respect to both
/// networks' parameters.
pub fn trajectory_grads(
    ep: &Episode<'_>,
    pn: &MlpParams,
    tn: &MlpParams,
    hyper: &GmmlHyper,
) -> Result<TrajectoryGrads> {
    let fwd = unroll(ep, pn, tn, hyper, None)?;
    backprop(ep, &fwd, pn, tn, hyper)
}
