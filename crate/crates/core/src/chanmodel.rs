//! Geometry-based Rician mmWave channels and imperfect-CSI corruption.
//!
//! The scene is two-dimensional. The BS is a ULA whose axis is the y-axis
//! (broadside along +x, towards the RIS); the RIS is a ULA whose axis is the
//! x-axis (it lies along the wall y = 0 and faces +y, towards the users).
//! A LoS direction enters a steering vector through `sin(angle)`, the
//! projection of the unit propagation direction onto the array axis.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{textfmt, CMat, Error, Result, C64};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// System and scene parameters. Powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// RIS elements.
    pub n: usize,
    /// Single-antenna users.
    pub k: usize,
    /// Total transmit power P (W).
    pub power: f64,
    /// Receiver noise power sigma^2 (W).
    pub noise_power: f64,
    /// Per-user rate weights.
    pub weights: Vec<f64>,
    pub carrier_freq: f64,
    pub bs_pos: [f64; 2],
    pub ris_pos: [f64; 2],
    pub user_center: [f64; 2],
    pub user_radius: f64,
    pub rician_h: f64,
    pub rician_g: f64,
    /// Element spacing of both arrays, in wavelengths.
    pub antenna_spacing: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SystemConfig {
    /// The reference scenario: M=64, N=100, K=4, P=10 dBm, sigma^2=-80 dBm,
    /// BS at the origin, RIS at (100, 0), users in a 5 m disk around (100, 15),
    /// Rician factors 10, half-wavelength spacing at 28 GHz.
    pub fn reference() -> Self {
        Self {
            m: 64,
            n: 100,
            k: 4,
            power: dbm_to_watts(10.0),
            noise_power: dbm_to_watts(-80.0),
            weights: vec![1.0; 4],
            carrier_freq: 28e9,
            bs_pos: [0.0, 0.0],
            ris_pos: [100.0, 0.0],
            user_center: [100.0, 15.0],
            user_radius: 5.0,
            rician_h: 10.0,
            rician_g: 10.0,
            antenna_spacing: 0.5,
        }
    }

    /// Copy with new dimensions; weights are reset to 1 if `k` changes.
    pub fn with_dims(&self, m: usize, n: usize, k: usize) -> Self {
        let mut c = self.clone();
        c.m = m;
        c.n = n;
        if k != c.k {
            c.weights = vec![1.0; k];
        }
        c.k = k;
        c
    }

    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.power = dbm_to_watts(dbm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k < 1 || self.m < self.k {
            return fail(format!("need M >= K >= 1, got M={} K={}", self.m, self.k));
        }
        if self.n < 1 {
            return fail("need N >= 1".into());
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return fail(format!("transmit power must be positive, got {}", self.power));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return fail(format!("noise power must be positive, got {}", self.noise_power));
        }
        if self.weights.len() != self.k {
            return fail(format!("{} weights for {} users", self.weights.len(), self.k));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return fail("user weights must be positive".into());
        }
        if !(self.user_radius >= 0.0) || !(self.antenna_spacing > 0.0) {
            return fail("user radius must be >= 0 and antenna spacing > 0".into());
        }
        if !(self.rician_h >= 0.0) || !(self.rician_g >= 0.0) {
            return fail("Rician factors must be >= 0".into());
        }
        Ok(())
    }
}

/// User channel H (K x N, row k is h_k^H) and BS-RIS channel G (N x M).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    pub h: CMat,
    pub g: CMat,
}

impl ChannelPair {
    pub fn new(h: CMat, g: CMat) -> Result<Self> {
        if h.ncols() != g.nrows() {
            return Err(Error::dim("ChannelPair", format!("H cols = G rows = {}", g.nrows()), h.ncols()));
        }
        if h.iter().chain(g.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("channel has non-finite entries".into()));
        }
        Ok(Self { h, g })
    }

    pub fn k(&self) -> usize {
        self.h.nrows()
    }
    pub fn n(&self) -> usize {
        self.h.ncols()
    }
    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        if (self.k(), self.n(), self.m()) != (cfg.k, cfg.n, cfg.m) {
            return Err(Error::dim(
                "channel vs config",
                format!("K={} N={} M={}", cfg.k, cfg.n, cfg.m),
                format!("K={} N={} M={}", self.k(), self.n(), self.m()),
            ));
        }
        Ok(())
    }

    /// Serializes to the shared text matrix format (blocks `H` and `G`).
    pub fn to_text(&self) -> String {
        let mut s = String::from("# channel realization: H is K x N, G is N x M\n");
        textfmt::write_matrix(&mut s, "H", &self.h);
        textfmt::write_matrix(&mut s, "G", &self.g);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut blocks = textfmt::read_matrices(text)?;
        let h = textfmt::take_block(&mut blocks, "H")?;
        let g = textfmt::take_block(&mut blocks, "G")?;
        Self::new(h, g)
    }
}

/// Target channel-estimation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    cee_db: f64,
    /// When set (the default) the error is rescaled so every realization hits
    /// the target ratio exactly; otherwise only its expectation does.
    pub per_sample_exact: bool,
}

impl CorruptionSpec {
    pub fn new(cee_db: f64) -> Result<Self> {
        if !cee_db.is_finite() {
            return Err(Error::Domain(format!("CEE must be finite, got {cee_db}")));
        }
        Ok(Self {
            cee_db,
            per_sample_exact: true,
        })
    }

    pub fn in_expectation(mut self) -> Self {
        self.per_sample_exact = false;
        self
    }

    pub fn cee_db(&self) -> f64 {
        self.cee_db
    }
}

/// Uniform draws over the disk of radius `user_radius` around `user_center`.
pub fn place_users<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Vec<[f64; 2]> {
    (0..cfg.k)
        .map(|_| {
            let r = cfg.user_radius * rng.random::<f64>().sqrt();
            let phi = 2.0 * PI * rng.random::<f64>();
            [cfg.user_center[0] + r * phi.cos(), cfg.user_center[1] + r * phi.sin()]
        })
        .collect()
}

/// Path loss in dB: 56.9 + 22.0 lg d (LoS) or 60.3 + 36.7 lg d (NLoS).
pub fn pathloss_db(distance: f64, is_los: bool) -> Result<f64> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {distance}")));
    }
    let lg = distance.log10();
    Ok(if is_los { 56.9 + 22.0 * lg } else { 60.3 + 36.7 * lg })
}

fn amplitude_gain(distance: f64, is_los: bool) -> Result<f64> {
    Ok(10f64.powf(-pathloss_db(distance, is_los)? / 20.0))
}

/// ULA response: entry n is exp(j 2 pi spacing n sin(angle)).
pub fn steering_vector(num_elements: usize, spacing_wavelengths: f64, angle: f64) -> Vec<C64> {
    let step = 2.0 * PI * spacing_wavelengths * angle.sin();
    (0..num_elements)
        .map(|n| C64::from_polar(1.0, step * n as f64))
        .collect()
}

pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    // Column-major fill order keeps draws stable regardless of how nalgebra
    // iterates internally.
    let mut m = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_gaussian(rng);
        }
    }
    m
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Angle whose sine is the projection of the unit vector from `from` to `to`
/// onto an array axis.
fn axis_angle(from: [f64; 2], to: [f64; 2], axis: [f64; 2]) -> f64 {
    let d = distance(from, to);
    let proj = ((to[0] - from[0]) * axis[0] + (to[1] - from[1]) * axis[1]) / d;
    proj.clamp(-1.0, 1.0).asin()
}

const BS_AXIS: [f64; 2] = [0.0, 1.0];
const RIS_AXIS: [f64; 2] = [1.0, 0.0];

/// Draws one Rician channel realization for the given user positions.
pub fn gen_channel<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    positions: &[[f64; 2]],
    rng: &mut R,
) -> Result<ChannelPair> {
    cfg.validate()?;
    if positions.len() != cfg.k {
        return Err(Error::dim("gen_channel positions", cfg.k, positions.len()));
    }
    let (m, n) = (cfg.m, cfg.n);

    let d_br = distance(cfg.bs_pos, cfg.ris_pos);
    if d_br <= 0.0 {
        return Err(Error::Domain("BS and RIS coincide".into()));
    }
    let los_share = |kappa: f64| {
        if kappa.is_infinite() {
            (1.0, 0.0)
        } else {
            ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
        }
    };

    // G = L_los sqrt(k/(1+k)) a_ris(arrival) a_bs(departure)^H + L_nlos sqrt(1/(1+k)) G_nlos
    let (g_los_w, g_nlos_w) = los_share(cfg.rician_g);
    let g_los_amp = amplitude_gain(d_br, true)? * g_los_w;
    let g_nlos_amp = amplitude_gain(d_br, false)? * g_nlos_w;
    let a_bs = steering_vector(m, cfg.antenna_spacing, axis_angle(cfg.bs_pos, cfg.ris_pos, BS_AXIS));
    let a_ris_in = steering_vector(n, cfg.antenna_spacing, axis_angle(cfg.ris_pos, cfg.bs_pos, RIS_AXIS));
    let g_nlos = gaussian_matrix(n, m, rng);
    let g = CMat::from_fn(n, m, |r, c| {
        a_ris_in[r] * a_bs[c].conj() * g_los_amp + g_nlos[(r, c)] * g_nlos_amp
    });

    let (h_los_w, h_nlos_w) = los_share(cfg.rician_h);
    let mut h = CMat::zeros(cfg.k, n);
    for (k, pos) in positions.iter().enumerate() {
        let d = distance(cfg.ris_pos, *pos);
        if d <= 0.0 {
            return Err(Error::Domain(format!("user {k} coincides with the RIS")));
        }
        let los_amp = amplitude_gain(d, true)? * h_los_w;
        let nlos_amp = amplitude_gain(d, false)? * h_nlos_w;
        let a = steering_vector(n, cfg.antenna_spacing, axis_angle(cfg.ris_pos, *pos, RIS_AXIS));
        for j in 0..n {
            let hk = a[j] * los_amp + complex_gaussian(rng) * nlos_amp;
            // Row k stores h_k^H.
            h[(k, j)] = hk.conj();
        }
    }
    ChannelPair::new(h, g)
}

/// Convenience: place users and draw a channel from one stream.
pub fn draw_scenario<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelPair> {
    let pos = place_users(cfg, rng);
    gen_channel(cfg, &pos, rng)
}

fn frob2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

fn corrupt_matrix<R: Rng + ?Sized>(h: &CMat, spec: &CorruptionSpec, rng: &mut R) -> Result<CMat> {
    let hn = frob2(h);
    if hn == 0.0 {
        return Err(Error::Domain("cannot corrupt an all-zero channel".into()));
    }
    let ratio = 10f64.powf(spec.cee_db / 10.0);
    let z = gaussian_matrix(h.nrows(), h.ncols(), rng);
    let scale = if spec.per_sample_exact {
        (ratio * hn / frob2(&z)).sqrt()
    } else {
        (ratio * hn / (h.len() as f64)).sqrt()
    };
    Ok(h + z * C64::new(scale, 0.0))
}

/// Imperfect-CSI copy: H and G each receive independent circular Gaussian
/// errors sized to the target CEE.
pub fn corrupt_csi<R: Rng + ?Sized>(
    channel: &ChannelPair,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<ChannelPair> {
    let h = corrupt_matrix(&channel.h, spec, rng)?;
    let g = corrupt_matrix(&channel.g, spec, rng)?;
    ChannelPair::new(h, g)
}

/// Single-realization CEE in dB. Returns `f64::NEG_INFINITY` when the
/// estimate is exact.
pub fn measured_cee(truth: &CMat, estimate: &CMat) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::dim("measured_cee", format!("{:?}", truth.shape()), format!("{:?}", estimate.shape())));
    }
    let hn = frob2(truth);
    if hn == 0.0 {
        return Err(Error::Domain("CEE undefined for a zero channel".into()));
    }
    let en = frob2(&(truth - estimate));
    if en == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (en / hn).log10())
}
