use crate::chanmodel::{ChannelPair, SystemConfig};
use crate::sysmetrics::{PhaseVector, Precoder, SinrTerms};
use crate::{CMat, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgOptions {
    pub iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self {
            iters: 50,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 30,
        }
    }
}

/// Iterate on the product of unit circles, v_n = e^{j theta_n}.
#[derive(Debug, Clone, PartialEq)]
pub struct RcgState {
    pub theta_complex: Vec<C64>,
    /// Tangent search direction at `theta_complex`.
    pub direction: Vec<C64>,
    /// Riemannian gradient at `theta_complex`.
    pub prev_grad: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcgOutcome {
    pub theta: PhaseVector,
    /// SE at the start and after every accepted step.
    pub trace: Vec<f64>,
    /// The line search gave up before the iteration budget ran out.
    pub stalled: bool,
    pub state: RcgState,
}

impl RcgOutcome {
    pub fn se(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting point")
    }
}

/// SE as a function of v for a fixed precoder: a_ki = sum_n B[(k, i), n] v_n
/// with B[(k, i), n] = H[k, n] (G w_i)[n].
pub(crate) struct PhaseObjective<'a> {
    b: CMat,
    k: usize,
    cfg: &'a SystemConfig,
}

impl<'a> PhaseObjective<'a> {
    pub fn new(w: &Precoder, channel: &ChannelPair, cfg: &'a SystemConfig) -> Result<Self> {
        let (k, n, m) = (channel.k(), channel.n(), channel.m());
        if w.0.shape() != (m, k) || cfg.weights.len() != k {
            return Err(Error::dim("rcg precoder", format!("{m} x {k}"), format!("{:?}", w.0.shape())));
        }
        let gw = &channel.g * &w.0;
        let b = CMat::from_fn(k * k, n, |r, col| channel.h[(r / k, col)] * gw[(col, r % k)]);
        Ok(Self { b, k, cfg })
    }

    fn products(&self, v: &[C64]) -> CMat {
        let a = &self.b * nalgebra::DVector::from_column_slice(v);
        CMat::from_fn(self.k, self.k, |r, c| a[r * self.k + c])
    }

    pub fn value(&self, v: &[C64]) -> f64 {
        SinrTerms::new(&self.products(v), &self.cfg.weights, self.cfg.noise_power).se
    }

    /// Value and Euclidean gradient dR/dRe v + j dR/dIm v.
    pub fn value_grad(&self, v: &[C64]) -> (f64, Vec<C64>) {
        let a = self.products(v);
        let terms = SinrTerms::new(&a, &self.cfg.weights, self.cfg.noise_power);
        let ga = terms.grad_products(&a);
        let flat = nalgebra::DVector::from_fn(self.k * self.k, |r, _| ga[(r / self.k, r % self.k)]);
        let g = self.b.adjoint() * flat;
        (terms.se, g.iter().cloned().collect())
    }
}

/// x - Re(x conj(v)) v: projection onto the tangent space at v.
/// x - Re(x v*) v, written as j Im(x v*) v so the result stays tangent even
/// when x is nearly normal to the circle.
pub(crate) fn project(x: &[C64], v: &[C64]) -> Vec<C64> {
    x.iter().zip(v).map(|(x, v)| v * C64::new(0.0, (x * v.conj()).im)).collect()
}

fn re_dot(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn retract(v: &[C64], d: &[C64], t: f64) -> Vec<C64> {
    v.iter()
        .zip(d)
        .map(|(v, d)| {
            let z = v + d * t;
            let r = z.norm();
            if r > 0.0 {
                z / r
            } else {
                *v
            }
        })
        .collect()
}

/// Riemannian conjugate-gradient ascent on the RIS phases at fixed W, from `theta`.
pub fn rcg_theta(
    w: &Precoder,
    theta: &PhaseVector,
    channel: &ChannelPair,
    cfg: &SystemConfig,
    opts: &RcgOptions,
) -> Result<RcgOutcome> {
    if theta.len() != channel.n() {
        return Err(Error::dim("rcg phases", channel.n(), theta.len()));
    }
    let obj = PhaseObjective::new(w, channel, cfg)?;
    let mut v = theta.unit_diag();
    let (mut f, eg) = obj.value_grad(&v);
    let mut rg = project(&eg, &v);
    let mut eg_norm2 = re_dot(&eg, &eg);
    let mut d = rg.clone();
    let mut trace = vec![f];
    let mut stalled = false;
    let mut moved = false;
    for it in 0..opts.iters {
        let gnorm2 = re_dot(&rg, &rg);
        // A gradient normal to the circle up to rounding means a stationary point.
        if !(gnorm2 > 1e-24 * eg_norm2) {
            break;
        }
        let mut slope = re_dot(&rg, &d);
        if it > 0 && slope <= 0.0 {
            d = rg.clone();
            slope = gnorm2;
        }
        let dmax = d.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut t = 1.0 / dmax;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let cand = retract(&v, &d, t);
            let fc = obj.value(&cand);
            if fc >= f + opts.armijo_c * t * slope && fc > f {
                accepted = Some((cand, fc));
                break;
            }
            t *= opts.shrink;
        }
        let Some((v_new, f_new)) = accepted else {
            stalled = true;
            break;
        };
        let (_, eg_new) = obj.value_grad(&v_new);
        let rg_new = project(&eg_new, &v_new);
        eg_norm2 = re_dot(&eg_new, &eg_new);
        let rg_old_t = project(&rg, &v_new);
        let d_old_t = project(&d, &v_new);
        let diff: Vec<C64> = rg_new.iter().zip(&rg_old_t).map(|(a, b)| a - b).collect();
        let eta = (re_dot(&rg_new, &diff) / gnorm2).max(0.0);
        d = rg_new.iter().zip(&d_old_t).map(|(g, dd)| g + dd * eta).collect();
        v = v_new;
        f = f_new;
        rg = rg_new;
        trace.push(f);
        moved = true;
    }
    let theta_out = if moved {
        PhaseVector::new(v.iter().map(|z| z.arg()).collect())?
    } else {
        theta.clone()
    };
    Ok(RcgOutcome {
        theta: theta_out,
        trace,
        stalled,
        state: RcgState {
            theta_complex: v,
            direction: d,
            prev_grad: rg,
        },
    })
}
