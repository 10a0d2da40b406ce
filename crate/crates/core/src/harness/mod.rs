//! Experiment driver: paired-seed sweeps, timing profiles and table output.

mod config;
mod table;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentFile, ExperimentSection, SystemSection};
pub use table::{emit, round9, Format, ResultRow, ResultTable, CSV_HEADER, SCHEMA_VERSION};

use crate::baselines::{ao, random_phase, random_phase_solution, upper_bound_proxy, AoOptions};
use crate::chanmodel::{corrupt_csi, draw_scenario, ChannelPair, CorruptionSpec, SystemConfig};
use crate::gmml::{self, GmmlHyper, Mode};
use crate::sysmetrics::{spectral_efficiency, PhaseVector, Precoder};
use crate::{Error, Result};

const INIT_TAG: u64 = 0x1417;
const CORRUPT_TAG: u64 = 0xcee;

/// Stable 64-bit mix of (master, key, index).
pub fn derive_seed(master: u64, key: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ key) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gmml,
    Gml,
    Ml,
    Ao,
    RandomPhase,
    UpperBound,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Gmml,
        Method::Gml,
        Method::Ml,
        Method::Ao,
        Method::RandomPhase,
        Method::UpperBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gmml => "gmml",
            Method::Gml => "gml",
            Method::Ml => "ml",
            Method::Ao => "ao",
            Method::RandomPhase => "random_phase",
            Method::UpperBound => "upper_bound",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Method::Gmml => 1,
            Method::Gml => 2,
            Method::Ml => 3,
            Method::Ao => 4,
            Method::RandomPhase => 5,
            Method::UpperBound => 6,
        }
    }

    fn learned_mode(self) -> Option<Mode> {
        match self {
            Method::Gmml => Some(Mode::Gmml),
            Method::Gml => Some(Mode::Gml),
            Method::Ml => Some(Mode::Ml),
            _ => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Transmit power in dBm.
    Power,
    /// RIS element count N.
    RisElements,
    /// BS antenna count M.
    Antennas,
    /// Channel estimation error in dB (design on the corrupted copy).
    Cee,
    /// Epoch checkpoints of one long run.
    Convergence,
    /// BS antenna count M; wall-clock per solve.
    Timing,
    /// Hidden-layer width.
    Width,
    /// Number of hidden layers.
    Depth,
}

impl SweepKind {
    pub const ALL: [SweepKind; 8] = [
        SweepKind::Power,
        SweepKind::RisElements,
        SweepKind::Antennas,
        SweepKind::Cee,
        SweepKind::Convergence,
        SweepKind::Timing,
        SweepKind::Width,
        SweepKind::Depth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Power => "power",
            SweepKind::RisElements => "ris_elements",
            SweepKind::Antennas => "antennas",
            SweepKind::Cee => "cee",
            SweepKind::Convergence => "convergence",
            SweepKind::Timing => "timing",
            SweepKind::Width => "width",
            SweepKind::Depth => "depth",
        }
    }

    /// Sweeps that change the channel dimensions draw a fresh channel per
    /// sweep value; the others reuse one channel per sample across values.
    fn changes_dimensions(self) -> bool {
        matches!(self, SweepKind::RisElements | SweepKind::Antennas | SweepKind::Timing)
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SweepKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: SweepKind,
    pub values: Vec<f64>,
    pub samples: usize,
    pub methods: Vec<Method>,
    pub base: SystemConfig,
    pub hyper: GmmlHyper,
    pub seed: u64,
    pub upper_bound_restarts: usize,
    pub ao: AoOptions,
    /// Timing repetitions after the warm-up run.
    pub timing_reps: usize,
}

impl ExperimentSpec {
    pub fn new(kind: SweepKind, values: Vec<f64>) -> Self {
        Self {
            kind,
            values,
            samples: 20,
            methods: Method::ALL.to_vec(),
            base: SystemConfig::reference(),
            hyper: GmmlHyper::default(),
            seed: 1,
            upper_bound_restarts: 20,
            ao: AoOptions::default(),
            timing_reps: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("need at least one sweep value".into()));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite and strictly increasing".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("need at least one method".into()));
        }
        if self.kind == SweepKind::Timing && self.methods.iter().any(|m| !matches!(m, Method::Gmml | Method::Ao)) {
            return Err(Error::Config("timing supports only gmml and ao".into()));
        }
        if self.kind == SweepKind::Timing && self.timing_reps < 3 {
            return Err(Error::Config("timing needs at least 3 repetitions".into()));
        }
        if self.upper_bound_restarts == 0 {
            return Err(Error::Config("upper bound needs at least one restart".into()));
        }
        let integral = matches!(
            self.kind,
            SweepKind::RisElements | SweepKind::Antennas | SweepKind::Timing | SweepKind::Width | SweepKind::Depth | SweepKind::Convergence
        );
        if integral && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::Config(format!("{} sweep values must be positive integers", self.kind.name())));
        }
        self.base.validate()?;
        self.hyper.validate()
    }

    /// System config and hyper-parameters at one sweep value.
    pub fn point(&self, value: f64) -> Result<(SystemConfig, GmmlHyper)> {
        let mut cfg = self.base.clone();
        let mut hyper = self.hyper.clone();
        let v = value as usize;
        match self.kind {
            SweepKind::Power => cfg = cfg.with_power_dbm(value),
            SweepKind::RisElements => cfg = cfg.with_dims(cfg.m, v, cfg.k),
            SweepKind::Antennas | SweepKind::Timing => cfg = cfg.with_dims(v, cfg.n, cfg.k),
            SweepKind::Width => hyper.hidden = vec![v],
            SweepKind::Depth => {
                let w = self.hyper.hidden.first().copied().unwrap_or(200);
                hyper.hidden = vec![w; v];
            }
            SweepKind::Convergence => hyper.n_epochs = v,
            SweepKind::Cee => {}
        }
        cfg.validate()?;
        Ok((cfg, hyper))
    }

    fn channel_key(&self, value: f64) -> u64 {
        if self.kind.changes_dimensions() {
            value.to_bits()
        } else {
            0
        }
    }

    /// Channel realization for one (sweep value, sample); the same bytes are
    /// handed to every method.
    pub fn channel(&self, value: f64, sample: usize) -> Result<(SystemConfig, GmmlHyper, ChannelPair, ChannelPair)> {
        let (cfg, hyper) = self.point(value)?;
        let chan_seed = derive_seed(self.seed, self.channel_key(value), sample as u64);
        let truth = draw_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(chan_seed))?;
        let design = if self.kind == SweepKind::Cee {
            let spec = CorruptionSpec::new(value)?;
            corrupt_csi(&truth, &spec, &mut ChaCha8Rng::seed_from_u64(derive_seed(chan_seed, CORRUPT_TAG, 2)))?
        } else {
            truth.clone()
        };
        Ok((cfg, hyper, design, truth))
    }

    pub fn seeds(&self, value: f64, sample: usize, method: Method) -> Seeds {
        let chan_seed = derive_seed(self.seed, self.channel_key(value), sample as u64);
        Seeds {
            init: derive_seed(chan_seed, INIT_TAG, 3),
            method: derive_seed(chan_seed, method.tag(), 1),
        }
    }
}

/// Outcome of one method on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// SE on the evaluation (true) channel.
    pub se: f64,
    pub seconds: f64,
    /// For learned methods, best design SE at each epoch.
    pub best_by_epoch: Vec<f64>,
}

/// Random streams of one method on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    /// Initial RIS phases; shared by every method on the channel.
    pub init: u64,
    /// Everything else the method draws (network weights, initial precoder,
    /// restart streams).
    pub method: u64,
}

/// Runs one method on a design/eval channel pair. Methods that start from
/// random phases all start from the phases drawn from `seeds.init`.
pub fn run_method(
    method: Method,
    design: &ChannelPair,
    eval: &ChannelPair,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    ao_opts: &AoOptions,
    restarts: usize,
    seeds: Seeds,
) -> Result<SampleResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.method);
    let start = Instant::now();
    let theta_start = random_phase(cfg, &mut ChaCha8Rng::seed_from_u64(seeds.init))?;
    let evaluate = |w: &Precoder, th: &PhaseVector| spectral_efficiency(w, th, eval, cfg);
    let (se, best_by_epoch) = match method.learned_mode() {
        Some(mode) => {
            let h = GmmlHyper {
                mode,
                ..hyper.clone()
            };
            let t = gmml::run_from(design, eval, cfg, &h, &theta_start, &mut rng)?;
            (t.best_eval_se, t.epochs.iter().map(|e| e.best_se).collect())
        }
        None => match method {
            Method::Ao => {
                let out = ao(design, cfg, &theta_start, None, ao_opts)?;
                (evaluate(&out.w, &out.theta)?, vec![])
            }
            Method::RandomPhase => {
                let init = &mut ChaCha8Rng::seed_from_u64(seeds.init);
                let (w, th, _) = random_phase_solution(design, cfg, init, ao_opts)?;
                (evaluate(&w, &th)?, vec![])
            }
            Method::UpperBound => {
                // The restart bound reports the design-channel optimum.
                (upper_bound_proxy(design, cfg, restarts, seeds.method, ao_opts)?, vec![])
            }
            _ => unreachable!("learned methods handled above"),
        },
    };
    Ok(SampleResult {
        se,
        seconds: start.elapsed().as_secs_f64(),
        best_by_epoch,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Per-sample outcomes of every (value, sample, method) triple, in spec order.
pub fn run_samples(spec: &ExperimentSpec) -> Result<Vec<(f64, usize, Method, Result<SampleResult>)>> {
    spec.validate()?;
    let convergence_max = spec.values.last().copied().unwrap_or(1.0);
    let jobs: Vec<(f64, usize)> = if spec.kind == SweepKind::Convergence {
        (0..spec.samples).map(|s| (convergence_max, s)).collect()
    } else {
        spec.values
            .iter()
            .flat_map(|v| (0..spec.samples).map(move |s| (*v, s)))
            .collect()
    };
    let out: Vec<Vec<(f64, usize, Method, Result<SampleResult>)>> = jobs
        .par_iter()
        .map(|&(value, sample)| {
            let point = spec.channel(value, sample);
            spec.methods
                .iter()
                .map(|&m| {
                    let r = point.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|(cfg, hyper, design, truth)| {
                        run_method(m, design, truth, cfg, hyper, &spec.ao, spec.upper_bound_restarts, spec.seeds(value, sample, m))
                    });
                    (value, sample, m, r)
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Runs every requested method on identical channels and aggregates per
/// (sweep value, method). Failures are counted per row.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    if spec.kind == SweepKind::Timing {
        return timing_profile(spec);
    }
    let samples = run_samples(spec)?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        for &method in &spec.methods {
            let mut se = Vec::new();
            let mut secs = Vec::new();
            let mut failures = 0;
            for (v, _, m, r) in &samples {
                if *m != method {
                    continue;
                }
                if spec.kind != SweepKind::Convergence && *v != value {
                    continue;
                }
                match r {
                    Ok(s) => {
                        let val = if spec.kind == SweepKind::Convergence && !s.best_by_epoch.is_empty() {
                            s.best_by_epoch[value as usize - 1]
                        } else {
                            s.se
                        };
                        se.push(val);
                        secs.push(s.seconds);
                    }
                    Err(_) => failures += 1,
                }
            }
            let (mean_se, std_se) = mean_std(&se);
            let (mean_time_s, _) = mean_std(&secs);
            rows.push(ResultRow {
                sweep_value: value,
                method,
                mean_se,
                std_se,
                mean_time_s,
                samples: se.len(),
                failures,
            });
        }
    }
    Ok(ResultTable { kind: spec.kind, rows })
}

/// Median wall-clock seconds of `reps` timed solves after one untimed
/// warm-up, on the calling thread.
pub fn time_solve(
    method: Method,
    cfg: &SystemConfig,
    hyper: &GmmlHyper,
    ao_opts: &AoOptions,
    channel: &ChannelPair,
    reps: usize,
    seeds: Seeds,
) -> Result<(f64, f64)> {
    if !matches!(method, Method::Gmml | Method::Ao) {
        return Err(Error::Config("timing supports only gmml and ao".into()));
    }
    let mut times = Vec::with_capacity(reps);
    let mut se = 0.0;
    for rep in 0..=reps {
        let r = run_method(method, channel, channel, cfg, hyper, ao_opts, 1, seeds)?;
        if rep > 0 {
            times.push(r.seconds);
            se = r.se;
        }
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], se))
}

/// Timing table: one row per (M, method) with the median solve time in
/// `mean_time_s` and the SE of the last timed run. Runs single-threaded.
pub fn timing_profile(spec: &ExperimentSpec) -> Result<ResultTable> {
    let spec = ExperimentSpec {
        kind: SweepKind::Timing,
        ..spec.clone()
    };
    spec.validate()?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        for &method in &spec.methods {
            let mut times = Vec::new();
            let mut ses = Vec::new();
            let mut failures = 0;
            for sample in 0..spec.samples {
                let r = spec.channel(value, sample).and_then(|(cfg, hyper, design, _)| {
                    time_solve(method, &cfg, &hyper, &spec.ao, &design, spec.timing_reps, spec.seeds(value, sample, method))
                });
                match r {
                    Ok((t, se)) => {
                        times.push(t);
                        ses.push(se);
                    }
                    Err(_) => failures += 1,
                }
            }
            let (mean_se, std_se) = mean_std(&ses);
            let (mean_time_s, _) = mean_std(&times);
            rows.push(ResultRow {
                sweep_value: value,
                method,
                mean_se,
                std_se,
                mean_time_s,
                samples: ses.len(),
                failures,
            });
        }
    }
    Ok(ResultTable {
        kind: SweepKind::Timing,
        rows,
    })
}

/// Least-squares slope of log(time) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: SweepKind, values: Vec<f64>, methods: Vec<Method>) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(kind, values);
        s.base = SystemConfig::reference().with_dims(6, 12, 2);
        s.hyper.n_epochs = 10;
        s.hyper.hidden = vec![16];
        s.samples = 2;
        s.methods = methods;
        s.upper_bound_restarts = 2;
        s
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
        assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
    }

    #[test]
    fn methods_share_start_but_not_streams() {
        let s = tiny(SweepKind::Power, vec![10.0], Method::ALL.to_vec());
        let a = s.seeds(10.0, 0, Method::Gmml);
        let b = s.seeds(10.0, 0, Method::Ao);
        assert_eq!(a.init, b.init);
        assert_ne!(a.method, b.method);
        assert_ne!(a.init, s.seeds(10.0, 1, Method::Gmml).init);
    }

    #[test]
    fn names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        for k in SweepKind::ALL {
            assert_eq!(k.name().parse::<SweepKind>().unwrap(), k);
        }
        assert!("dnn".parse::<Method>().is_err());
    }

    #[test]
    fn validation() {
        let ok = tiny(SweepKind::Power, vec![0.0, 5.0], vec![Method::Ao]);
        assert!(ok.validate().is_ok());
        assert!(ExperimentSpec { samples: 0, ..ok.clone() }.validate().is_err());
        assert!(ExperimentSpec { values: vec![5.0, 0.0], ..ok.clone() }.validate().is_err());
        assert!(ExperimentSpec { methods: vec![], ..ok.clone() }.validate().is_err());
        let t = tiny(SweepKind::Timing, vec![8.0], vec![Method::Gml]);
        assert!(t.validate().is_err());
        assert!(tiny(SweepKind::Antennas, vec![6.5], vec![Method::Ao]).validate().is_err());
    }

    #[test]
    fn single_row_table() {
        let s = ExperimentSpec {
            samples: 1,
            ..tiny(SweepKind::Power, vec![10.0], vec![Method::RandomPhase])
        };
        let t = run_experiment(&s).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].samples, 1);
        assert!(t.rows[0].mean_se > 0.0);
    }

    #[test]
    fn methods_share_channel_bytes_and_values_share_samples() {
        let s = tiny(SweepKind::Power, vec![0.0, 10.0], vec![Method::Ao, Method::Gmml]);
        let (_, _, a, _) = s.channel(0.0, 1).unwrap();
        let (_, _, b, _) = s.channel(10.0, 1).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let r = tiny(SweepKind::Antennas, vec![6.0, 8.0], vec![Method::Ao]);
        let (_, _, c, _) = r.channel(6.0, 0).unwrap();
        let (_, _, c2, _) = r.channel(6.0, 0).unwrap();
        assert_eq!(c.to_text(), c2.to_text());
        // Adding a sweep point leaves existing samples untouched.
        let wider = tiny(SweepKind::Antennas, vec![6.0, 7.0, 8.0], vec![Method::Ao]);
        assert_eq!(wider.channel(8.0, 1).unwrap().2.to_text(), r.channel(8.0, 1).unwrap().2.to_text());
    }

    #[test]
    fn reproducible_tables() {
        let s = tiny(SweepKind::Power, vec![0.0, 10.0], vec![Method::Gmml, Method::Ao, Method::RandomPhase]);
        let a = run_experiment(&s).unwrap();
        let b = run_experiment(&s).unwrap();
        assert_eq!(a.to_csv_without_timing(), b.to_csv_without_timing());
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.total_failures(), 0);
    }

    #[test]
    fn cee_sweep_designs_on_corrupted_copy() {
        let s = tiny(SweepKind::Cee, vec![-10.0], vec![Method::RandomPhase]);
        let (_, _, design, truth) = s.channel(-10.0, 0).unwrap();
        let cee = crate::chanmodel::measured_cee(&truth.h, &design.h).unwrap();
        assert!((cee + 10.0).abs() < 1e-9);
    }

    #[test]
    fn convergence_rows_follow_checkpoints() {
        let s = tiny(SweepKind::Convergence, vec![1.0, 5.0, 10.0], vec![Method::Gmml]);
        let t = run_experiment(&s).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.windows(2).all(|w| w[1].mean_se >= w[0].mean_se));
    }

    #[test]
    fn timing_rows_are_positive() {
        let mut s = tiny(SweepKind::Timing, vec![6.0], vec![Method::Gmml]);
        s.samples = 1;
        let t = timing_profile(&s).unwrap();
        assert!(t.rows[0].mean_time_s > 0.0 && t.rows[0].mean_time_s.is_finite());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [32.0, 64.0, 128.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.7).abs() < 1e-12);
    }
}
