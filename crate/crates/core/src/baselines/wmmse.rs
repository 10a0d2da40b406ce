use nalgebra::SymmetricEigen;

use crate::chanmodel::SystemConfig;
use crate::sysmetrics::{frob2, CascadedChannel, Precoder, SinrTerms};
use crate::{CMat, Error, Result, C64};

/// Receiver scalars, MSE weights, power dual and the precoder of the last
/// WMMSE update.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub u: Vec<C64>,
    pub omega: Vec<f64>,
    /// Multiplier of the power constraint in the MSE problem.
    pub dual: f64,
    pub w: Precoder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOutcome {
    pub state: WmmseState,
    /// SE of the starting point followed by the SE after every update.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// |Tr(W^H W) / P - 1| at the dual returned by the last bisection, before
    /// the final exact rescale.
    pub bisection_rel_err: f64,
}

impl WmmseOutcome {
    pub fn se(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting point")
    }

    /// The dual expressed as the multiplier of the stationarity condition
    /// sum_i grad_{w_k} R_i = lambda w_k in the gradient convention of
    /// [`crate::sysmetrics::grad_w_cascaded`].
    pub fn kkt_multiplier(&self) -> f64 {
        2.0 / std::f64::consts::LN_2 * self.state.dual
    }
}

/// Matched-filter start: W proportional to Hc^H at full power.
pub fn mrt_init(hc: &CascadedChannel, power: f64) -> Result<Precoder> {
    let w = hc.0.adjoint();
    let p = frob2(&w);
    if !(p > 0.0) {
        return Err(Error::Degenerate("cascaded channel is all zero".into()));
    }
    Ok(Precoder(w * C64::new((power / p).sqrt(), 0.0)))
}

/// Eigen-split of the WMMSE normal matrix A = Hc^H D Hc; the precoder power
/// at any dual lambda follows from one decomposition, which makes the
/// bisection cheap.
struct DualSolver {
    a: CMat,
    b: CMat,
    vecs: CMat,
    vals: Vec<f64>,
    /// U^H B restricted to the kept eigenvectors.
    proj: CMat,
}

impl DualSolver {
    fn new(a: CMat, b: CMat) -> Result<Self> {
        let eig = SymmetricEigen::new(a.clone());
        let dmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if !(dmax > 0.0) || !dmax.is_finite() {
            return Err(Error::numeric("wmmse", format!("normal matrix has largest eigenvalue {dmax}")));
        }
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] > 1e-12 * dmax)
            .collect();
        let vecs = eig.eigenvectors.select_columns(&keep);
        let vals = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
        let proj = vecs.adjoint() * &b;
        Ok(Self { a, b, vecs, vals, proj })
    }

    fn power(&self, lambda: f64) -> f64 {
        let mut p = 0.0;
        for (m, d) in self.vals.iter().enumerate() {
            let row: f64 = self.proj.row(m).iter().map(|z| z.norm_sqr()).sum();
            p += row / ((d + lambda) * (d + lambda));
        }
        p
    }

    /// (A + lambda I)^{-1} B. For lambda > 0 this is a direct Cholesky solve:
    /// eigenvectors of eigenvalues near the rounding floor of A are not
    /// accurate enough to apply, even though they barely affect the power.
    fn solve(&self, lambda: f64) -> CMat {
        if lambda > 0.0 {
            let m = self.a.nrows();
            let shifted = &self.a + CMat::identity(m, m) * C64::new(lambda, 0.0);
            if let Some(ch) = shifted.cholesky() {
                return ch.solve(&self.b);
            }
        }
        let mut scaled = self.proj.clone();
        for (m, d) in self.vals.iter().enumerate() {
            let f = C64::new(1.0 / (d + lambda), 0.0);
            scaled.row_mut(m).iter_mut().for_each(|z| *z *= f);
        }
        &self.vecs * scaled
    }

    /// Smallest dual with power <= P, to relative precision.
    fn dual_for(&self, power: f64) -> Result<f64> {
        if self.power(0.0) <= power {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.power(hi) > power {
            hi *= 2.0;
            doublings += 1;
            if doublings > 2000 || !hi.is_finite() {
                return Err(Error::numeric("wmmse bisection", "could not bracket the power constraint"));
            }
        }
        let mut lo = 0.0;
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.power(mid) > power {
                lo = mid;
            } else {
                hi = mid;
            }
            if (self.power(hi) / power - 1.0).abs() < 1e-12 {
                break;
            }
        }
        Ok(hi)
    }
}

/// WMMSE from the matched-filter start; returns the final precoder.
pub fn wmmse(hc: &CascadedChannel, cfg: &SystemConfig, tol: f64, max_iter: usize) -> Result<Precoder> {
    Ok(wmmse_run(hc, cfg, tol, max_iter, None)?.state.w)
}

/// WMMSE iterations u -> Omega -> (dual, W) until the relative SE change
/// drops below `tol` or `max_iter` updates have run.
pub fn wmmse_run(
    hc: &CascadedChannel,
    cfg: &SystemConfig,
    tol: f64,
    max_iter: usize,
    init: Option<&Precoder>,
) -> Result<WmmseOutcome> {
    let (k, m) = (hc.0.nrows(), hc.0.ncols());
    if cfg.weights.len() != k {
        return Err(Error::dim("wmmse weights", k, cfg.weights.len()));
    }
    if !(cfg.power > 0.0) {
        return Err(Error::Config("transmit power must be positive".into()));
    }
    let mut w = match init {
        Some(w) => {
            if w.0.shape() != (m, k) {
                return Err(Error::dim("wmmse init", format!("{m} x {k}"), format!("{:?}", w.0.shape())));
            }
            w.clone()
        }
        None => mrt_init(hc, cfg.power)?,
    };
    if frob2(&hc.0) == 0.0 {
        return Err(Error::Degenerate("cascaded channel is all zero".into()));
    }
    let hc_adj = hc.0.adjoint();
    let mut terms = SinrTerms::new(&(&hc.0 * &w.0), &cfg.weights, cfg.noise_power);
    let mut trace = vec![terms.se];
    let mut state = WmmseState {
        u: vec![C64::new(0.0, 0.0); k],
        omega: vec![1.0; k],
        dual: 0.0,
        w: w.clone(),
    };
    let mut converged = false;
    let mut bisection_rel_err = 0.0;
    for _ in 0..max_iter {
        let a = &hc.0 * &w.0;
        let u: Vec<C64> = (0..k).map(|i| a[(i, i)] / terms.total[i]).collect();
        let omega: Vec<f64> = (0..k).map(|i| terms.total[i] / terms.interference[i]).collect();
        // A = Hc^H diag(w_i Omega_i |u_i|^2) Hc, B_k = w_k Omega_k u_k h_{c,k}^H.
        let mut dh = hc.0.clone();
        let mut b = hc_adj.clone();
        for i in 0..k {
            let d = cfg.weights[i] * omega[i] * u[i].norm_sqr();
            dh.row_mut(i).iter_mut().for_each(|z| *z *= d);
            let c = u[i] * (cfg.weights[i] * omega[i]);
            b.column_mut(i).iter_mut().for_each(|z| *z *= c);
        }
        let mut big_a = &hc_adj * dh;
        big_a = (&big_a + big_a.adjoint()) * C64::new(0.5, 0.0);
        let solver = DualSolver::new(big_a, b)?;
        let dual = solver.dual_for(cfg.power)?;
        let raw = solver.solve(dual);
        let p = frob2(&raw);
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::numeric("wmmse update", format!("precoder power {p}")));
        }
        bisection_rel_err = (p / cfg.power - 1.0).abs();
        w = Precoder(raw * C64::new((cfg.power / p).sqrt(), 0.0));
        let prev = terms.se;
        terms = SinrTerms::new(&(&hc.0 * &w.0), &cfg.weights, cfg.noise_power);
        trace.push(terms.se);
        state = WmmseState {
            u,
            omega,
            dual,
            w: w.clone(),
        };
        if (terms.se - prev).abs() <= tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(WmmseOutcome {
        state,
        trace,
        converged,
        bisection_rel_err,
    })
}
