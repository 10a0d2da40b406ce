//! SINR / spectral efficiency, cascaded channel, power regulation, precoder
//! recovery and closed-form gradients.
//!
//! Gradients of the real objective R with respect to a complex array z use
//! the convention `G = dR/dRe(z) + j dR/dIm(z)` (that is, `2 dR/dz*`), so
//! `Re(G)` and `Im(G)` are directly comparable with finite differences on the
//! real and imaginary parts.

use std::f64::consts::{LN_2, PI};

use crate::chanmodel::{ChannelPair, SystemConfig};
use crate::{CMat, Error, Result, C64};

const TWO_PI: f64 = 2.0 * PI;

/// RIS phase angles, each reduced into [0, 2 pi).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    theta: Vec<f64>,
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

impl PhaseVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("phase angles must be finite".into()));
        }
        Ok(Self {
            theta: theta.into_iter().map(wrap_angle).collect(),
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self { theta: vec![0.0; n] }
    }

    pub fn angles(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Diagonal of Theta: e^{j theta_n}.
    pub fn unit_diag(&self) -> Vec<C64> {
        self.theta.iter().map(|t| C64::from_polar(1.0, *t)).collect()
    }

    /// theta + delta, re-wrapped. This is the multiplicative update
    /// Theta <- Theta * diag(e^{j delta}) expressed on the angles.
    pub fn rotated(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.theta.len() {
            return Err(Error::dim("PhaseVector::rotated", self.theta.len(), delta.len()));
        }
        Self::new(self.theta.iter().zip(delta).map(|(a, d)| a + d).collect())
    }
}

/// Full precoder W (M x K), column k is w_k.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder(pub CMat);

impl Precoder {
    pub fn power(&self) -> f64 {
        frob2(&self.0)
    }
}

/// Compressed precoder X (K x K); the full precoder is H_c^H X.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPrecoder(pub CMat);

/// H_c = H diag(e^{j theta}) G, K x M; row k is h_k^H Theta G.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadedChannel(pub CMat);

/// Gradient in the `dR/dRe + j dR/dIm` convention, shaped like its primal.
#[derive(Debug, Clone, PartialEq)]
pub struct WirtingerGrad(pub CMat);

pub(crate) fn frob2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn cascaded(h: &CMat, theta: &PhaseVector, g: &CMat) -> Result<CascadedChannel> {
    if h.ncols() != theta.len() || g.nrows() != theta.len() {
        return Err(Error::dim(
            "cascaded",
            format!("H cols = G rows = N = {}", theta.len()),
            format!("H {:?}, G {:?}", h.shape(), g.shape()),
        ));
    }
    let diag = theta.unit_diag();
    let mut scaled = h.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= diag[j];
    }
    Ok(CascadedChannel(scaled * g))
}

/// Per-user quantities derived from the products a[k, i] = h_{c,k} w_i.
#[derive(Debug, Clone)]
pub(crate) struct SinrTerms {
    /// sigma^2 + sum_i |a_ki|^2
    pub total: Vec<f64>,
    /// sigma^2 + sum_{i != k} |a_ki|^2
    pub interference: Vec<f64>,
    /// |a_kk|^2
    pub signal: Vec<f64>,
    pub se: f64,
    /// c[k][i] = w_k (1/T_k - [i != k] / I_k); dR/d|a_ki|^2 = c_ki / ln 2.
    pub coeff: Vec<Vec<f64>>,
}

impl SinrTerms {
    pub fn new(a: &CMat, weights: &[f64], noise: f64) -> Self {
        let k = a.nrows();
        let mut interference = vec![noise; k];
        let mut diag = vec![0.0; k];
        for u in 0..k {
            for i in 0..a.ncols() {
                let p = a[(u, i)].norm_sqr();
                if i == u {
                    diag[u] = p;
                } else {
                    interference[u] += p;
                }
            }
        }
        let total: Vec<f64> = (0..k).map(|u| interference[u] + diag[u]).collect();
        let se = (0..k)
            .map(|u| weights[u] * (diag[u] / interference[u]).ln_1p() / LN_2)
            .sum();
        let coeff = (0..k)
            .map(|u| {
                (0..a.ncols())
                    .map(|i| {
                        let inv_t = 1.0 / total[u];
                        if i == u {
                            weights[u] * inv_t
                        } else {
                            weights[u] * (inv_t - 1.0 / interference[u])
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            total,
            interference,
            signal: diag,
            se,
            coeff,
        }
    }

    /// Gradient of R with respect to the products a (same convention as
    /// [`WirtingerGrad`]): (2 / ln 2) c_ki a_ki.
    pub fn grad_products(&self, a: &CMat) -> CMat {
        CMat::from_fn(a.nrows(), a.ncols(), |k, i| a[(k, i)] * (2.0 * self.coeff[k][i] / LN_2))
    }

    pub fn sinr(&self) -> Vec<f64> {
        self.signal
            .iter()
            .zip(&self.interference)
            .map(|(s, i)| s / i)
            .collect()
    }
}

fn check_precoder(hc: &CascadedChannel, w: &CMat, cfg: &SystemConfig) -> Result<()> {
    if w.nrows() != hc.0.ncols() || w.ncols() != hc.0.nrows() || cfg.weights.len() != hc.0.nrows() {
        return Err(Error::dim(
            "precoder",
            format!("W {} x {}, {} weights", hc.0.ncols(), hc.0.nrows(), hc.0.nrows()),
            format!("W {} x {}, {} weights", w.nrows(), w.ncols(), cfg.weights.len()),
        ));
    }
    Ok(())
}

/// Weighted sum rate for a precoder on an already-formed cascaded channel.
pub fn se_cascaded(hc: &CascadedChannel, w: &Precoder, cfg: &SystemConfig) -> Result<f64> {
    check_precoder(hc, &w.0, cfg)?;
    Ok(SinrTerms::new(&(&hc.0 * &w.0), &cfg.weights, cfg.noise_power).se)
}

/// Per-user SINR gamma_k.
pub fn sinr(hc: &CascadedChannel, w: &Precoder, cfg: &SystemConfig) -> Result<Vec<f64>> {
    check_precoder(hc, &w.0, cfg)?;
    Ok(SinrTerms::new(&(&hc.0 * &w.0), &cfg.weights, cfg.noise_power).sinr())
}

/// R(W, Theta; H, G) = sum_k w_k log2(1 + gamma_k).
pub fn spectral_efficiency(
    w: &Precoder,
    theta: &PhaseVector,
    channel: &ChannelPair,
    cfg: &SystemConfig,
) -> Result<f64> {
    let hc = cascaded(&channel.h, theta, &channel.g)?;
    se_cascaded(&hc, w, cfg)
}

/// W = H_c^H X.
pub fn recover_w(hc: &CascadedChannel, x: &CompressedPrecoder) -> Result<Precoder> {
    if x.0.nrows() != hc.0.nrows() {
        return Err(Error::dim("recover_w", format!("X with {} rows", hc.0.nrows()), x.0.nrows()));
    }
    Ok(Precoder(hc.0.adjoint() * &x.0))
}

/// SE of the compressed precoder; shares the recovery path with
/// [`spectral_efficiency`].
pub fn se_compressed(
    x: &CompressedPrecoder,
    theta: &PhaseVector,
    channel: &ChannelPair,
    cfg: &SystemConfig,
) -> Result<f64> {
    let hc = cascaded(&channel.h, theta, &channel.g)?;
    let w = recover_w(&hc, x)?;
    se_cascaded(&hc, &w, cfg)
}

/// Scales X so that the recovered precoder has Tr(W^H W) = P.
pub fn normalize_power(x: &CompressedPrecoder, hc: &CascadedChannel, power: f64) -> Result<CompressedPrecoder> {
    let w = recover_w(hc, x)?;
    let p = w.power();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Degenerate(format!("recovered precoder power is {p}")));
    }
    Ok(CompressedPrecoder(&x.0 * C64::new((power / p).sqrt(), 0.0)))
}

/// Scales W itself to Tr(W^H W) = P.
pub fn normalize_precoder(w: &Precoder, power: f64) -> Result<Precoder> {
    let p = w.power();
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::Degenerate(format!("precoder power is {p}")));
    }
    Ok(Precoder(&w.0 * C64::new((power / p).sqrt(), 0.0)))
}

/// Gradient with respect to W at fixed Theta. Column k is
/// sum_i w_i grad_{w_k} R_i = (2/ln2) sum_i w_i h_{c,i}^H z_ik with
/// z_ik = a_ik (1/T_i - [i != k]/I_i).
pub fn grad_w_cascaded(hc: &CascadedChannel, w: &Precoder, cfg: &SystemConfig) -> Result<WirtingerGrad> {
    check_precoder(hc, &w.0, cfg)?;
    let a = &hc.0 * &w.0;
    let terms = SinrTerms::new(&a, &cfg.weights, cfg.noise_power);
    Ok(WirtingerGrad(hc.0.adjoint() * terms.grad_products(&a)))
}

pub fn grad_w(w: &Precoder, theta: &PhaseVector, channel: &ChannelPair, cfg: &SystemConfig) -> Result<WirtingerGrad> {
    let hc = cascaded(&channel.h, theta, &channel.g)?;
    grad_w_cascaded(&hc, w, cfg)
}

/// Gradient of `se_compressed` with respect to X: H_c times the W-gradient.
pub fn grad_x(
    x: &CompressedPrecoder,
    theta: &PhaseVector,
    channel: &ChannelPair,
    cfg: &SystemConfig,
) -> Result<WirtingerGrad> {
    let hc = cascaded(&channel.h, theta, &channel.g)?;
    grad_x_cascaded(&hc, x, cfg)
}

pub fn grad_x_cascaded(hc: &CascadedChannel, x: &CompressedPrecoder, cfg: &SystemConfig) -> Result<WirtingerGrad> {
    let w = recover_w(hc, x)?;
    let gw = grad_w_cascaded(hc, &w, cfg)?;
    Ok(WirtingerGrad(&hc.0 * gw.0))
}

/// Chain rule from a sensitivity Z (K x M) of R with respect to H_c, in the
/// sense dR = Re sum conj(Z_km) dHc_km, down to the real angles:
/// dR/dtheta_n = -Im(e^{j theta_n} sum_k H_kn (G Z^H)_nk).
pub(crate) fn theta_grad_from_cascade_sens(h: &CMat, g: &CMat, theta: &PhaseVector, z: &CMat) -> Vec<f64> {
    let gz = g * z.adjoint();
    let diag = theta.unit_diag();
    (0..theta.len())
        .map(|n| {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..h.nrows() {
                s += h[(k, n)] * gz[(n, k)];
            }
            -(diag[n] * s).im
        })
        .collect()
}

/// dR/dtheta_n at fixed W, through Theta_nn = e^{j theta_n}.
pub fn grad_theta(w: &Precoder, theta: &PhaseVector, channel: &ChannelPair, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let hc = cascaded(&channel.h, theta, &channel.g)?;
    check_precoder(&hc, &w.0, cfg)?;
    let a = &hc.0 * &w.0;
    let ga = SinrTerms::new(&a, &cfg.weights, cfg.noise_power).grad_products(&a);
    let z = ga * w.0.adjoint();
    Ok(theta_grad_from_cascade_sens(&channel.h, &channel.g, theta, &z))
}

/// Loss of one outer iteration: L = -R.
pub fn loss(se: f64) -> f64 {
    -se
}

/// Mean of the per-outer-iteration losses.
pub fn loss_and_avg(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Domain("need at least one loss value".into()));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Residual of the stationarity condition sum_i w_i grad_{w_k} R_i = lambda w_k
/// for each user, relative to ||lambda w_k||. `lambda` is the multiplier of the
/// power constraint in the gradient convention used here.
pub fn kkt_residuals(hc: &CascadedChannel, w: &Precoder, lambda: f64, cfg: &SystemConfig) -> Result<Vec<f64>> {
    let g = grad_w_cascaded(hc, w, cfg)?.0;
    Ok((0..w.0.ncols())
        .map(|k| {
            let target = w.0.column(k) * C64::new(lambda, 0.0);
            (g.column(k) - &target).norm() / target.norm()
        })
        .collect())
}
