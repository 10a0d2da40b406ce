//! Shared instance builders and finite-difference oracles.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ris_gmml::chanmodel::{ChannelPair, SystemConfig};
use ris_gmml::gmml::{GmmlHyper, Mode};
use ris_gmml::neural::trajectory::{backprop, unroll, Episode};
use ris_gmml::neural::{mlp_backward, mlp_forward, MlpParams};
use ris_gmml::sysmetrics::{
    cascaded, grad_theta, grad_x, se_compressed, spectral_efficiency, CompressedPrecoder, PhaseVector, Precoder,
};

pub type CMat = DMatrix<C64>;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Unit-scale Gaussian instance at K=2, M=8, N=16.
pub struct Instance {
    pub cfg: SystemConfig,
    pub channel: ChannelPair,
    pub theta: PhaseVector,
    pub rng: ChaCha8Rng,
}

pub fn instance(seed: u64) -> Instance {
    let (m, n, k) = (8, 16, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = SystemConfig::reference().with_dims(m, n, k);
    cfg.power = 1.0;
    cfg.noise_power = 0.5;
    cfg.weights = vec![1.0, 0.7];
    let h = gaussian(k, n, &mut rng);
    let g = gaussian(n, m, &mut rng) * C64::new(0.3, 0.0);
    let channel = ChannelPair::new(h, g).unwrap();
    let theta = PhaseVector::new((0..n).map(|_| rng.random_range(0.0..6.28)).collect()).unwrap();
    Instance { cfg, channel, theta, rng }
}

/// Largest |fd - analytic| relative to max(|analytic|, 1e-3 max|analytic|).
/// The floor keeps entries far below the gradient's scale from comparing
/// rounding noise against a near-zero denominator.
pub fn worst_rel(pairs: &[(f64, f64)]) -> f64 {
    let scale = pairs.iter().map(|(_, a)| a.abs()).fold(0.0, f64::max);
    pairs
        .iter()
        .map(|(fd, a)| (fd - a).abs() / a.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn central(f: impl Fn(f64) -> f64, eps: f64) -> f64 {
    (f(eps) - f(-eps)) / (2.0 * eps)
}

const EPS: f64 = 1e-6;

/// grad_x against central differences on Re and Im of every entry of X.
pub fn grad_x_error(seed: u64) -> f64 {
    let mut c = instance(seed);
    let x = gaussian(2, 2, &mut c.rng);
    let g = grad_x(&CompressedPrecoder(x.clone()), &c.theta, &c.channel, &c.cfg).unwrap().0;
    let se = |x: &CMat| se_compressed(&CompressedPrecoder(x.clone()), &c.theta, &c.channel, &c.cfg).unwrap();
    let mut pairs = Vec::new();
    for idx in 0..x.len() {
        for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
            let fd = central(
                |e| {
                    let mut p = x.clone();
                    p[idx] += dir * e;
                    se(&p)
                },
                EPS,
            );
            let an = if dir.re == 1.0 { g[idx].re } else { g[idx].im };
            pairs.push((fd, an));
        }
    }
    worst_rel(&pairs)
}

/// grad_theta at fixed W against central differences on every angle.
pub fn grad_theta_error(seed: u64) -> f64 {
    let mut c = instance(seed);
    let w = Precoder(gaussian(8, 2, &mut c.rng));
    let g = grad_theta(&w, &c.theta, &c.channel, &c.cfg).unwrap();
    let angles = c.theta.angles().to_vec();
    let se = |a: &[f64]| spectral_efficiency(&w, &PhaseVector::new(a.to_vec()).unwrap(), &c.channel, &c.cfg).unwrap();
    let pairs: Vec<(f64, f64)> = (0..angles.len())
        .map(|n| {
            let fd = central(
                |e| {
                    let mut a = angles.clone();
                    a[n] += e;
                    se(&a)
                },
                EPS,
            );
            (fd, g[n])
        })
        .collect();
    worst_rel(&pairs)
}

/// mlp_backward for the loss u . f(x): every parameter and every input.
pub fn mlp_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = MlpParams::init(6, &[9, 7], 4, &mut rng);
    let input: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (pg, ig) = mlp_backward(&params, &input, &up).unwrap();
    let loss = |p: &MlpParams, x: &[f64]| -> f64 { mlp_forward(p, x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
    let mut pairs = Vec::new();
    for (idx, an) in pg.values().enumerate() {
        let fd = central(
            |e| {
                let mut p = params.clone();
                *p.values_mut().nth(idx).unwrap() += e;
                loss(&p, &input)
            },
            EPS,
        );
        pairs.push((fd, *an));
    }
    for (i, an) in ig.iter().enumerate() {
        let fd = central(
            |e| {
                let mut x = input.clone();
                x[i] += e;
                loss(&params, &x)
            },
            EPS,
        );
        pairs.push((fd, *an));
    }
    worst_rel(&pairs)
}

/// Parameter gradients of one unrolled outer iteration against central
/// differences of the same map with the recorded network inputs replayed.
pub fn trajectory_error(seed: u64, mode: Mode) -> f64 {
    let mut c = instance(seed);
    let rows = if mode == Mode::Gmml { 2 } else { 8 };
    let var = gaussian(rows, 2, &mut c.rng) * C64::new(0.2, 0.0);
    let w_inh = gaussian(8, 2, &mut c.rng) * C64::new(0.3, 0.0);
    let pn = MlpParams::init(2 * rows, &[6], 2 * rows, &mut c.rng);
    let tn = MlpParams::init(16, &[5], 16, &mut c.rng);
    let hyper = GmmlHyper {
        mode,
        n_inner: 1,
        ..GmmlHyper::default()
    };
    let ep = Episode {
        channel: &c.channel,
        cfg: &c.cfg,
        theta_init: &c.theta,
        var_init: &var,
        w_inherited: &w_inh,
        normalize_theta_input: false,
    };
    let fwd = unroll(&ep, &pn, &tn, &hyper, None).unwrap();
    let g = backprop(&ep, &fwd, &pn, &tn, &hyper).unwrap();
    let frozen = fwd.frozen_inputs();
    let loss = |p: &MlpParams, t: &MlpParams| unroll(&ep, p, t, &hyper, Some(&frozen)).unwrap().loss();
    let mut pairs = Vec::new();
    for (idx, an) in g.pn.values().enumerate() {
        let fd = central(
            |e| {
                let mut p = pn.clone();
                *p.values_mut().nth(idx).unwrap() += e;
                loss(&p, &tn)
            },
            EPS,
        );
        pairs.push((fd, *an));
    }
    for (idx, an) in g.tn.values().enumerate() {
        let fd = central(
            |e| {
                let mut t = tn.clone();
                *t.values_mut().nth(idx).unwrap() += e;
                loss(&pn, &t)
            },
            EPS,
        );
        pairs.push((fd, *an));
    }
    worst_rel(&pairs)
}

/// Orthogonal-projection residual of each column of W off range(Hc^H),
/// relative to the column norm, using a QR basis of Hc^H.
pub fn range_residual(hc: &CMat, w: &CMat) -> f64 {
    let q = hc.adjoint().qr().q();
    (0..w.ncols())
        .map(|k| {
            let col = w.column(k).into_owned();
            let proj = &q * (q.adjoint() * &col);
            (&col - proj).norm() / col.norm()
        })
        .fold(0.0, f64::max)
}

pub fn cascaded_of(channel: &ChannelPair, theta: &PhaseVector) -> CMat {
    cascaded(&channel.h, theta, &channel.g).unwrap().0
}
