//! Ensemble statistics of integer work values.
//!
//! Every statistic reported here is a function of the work histogram alone,
//! so bootstrap replicates are drawn as multinomial resamples of the
//! histogram: identical in distribution to resampling records with
//! replacement, at a cost proportional to the number of occupied bins.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::CompensatedSum;
use crate::work::WorkRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no records to summarize")]
    Empty,
    #[error("at least 100 bootstrap replicates are required, got {0}")]
    TooFewReplicates(usize),
}

/// Counts of W/ħω₀ values.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkHistogram {
    counts: BTreeMap<i64, u64>,
    total: u64,
}

impl WorkHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: &[WorkRecord]) -> Self {
        records.iter().map(|r| r.work_quanta).collect()
    }

    pub fn add(&mut self, w: i64) {
        self.add_count(w, 1);
    }

    pub fn add_count(&mut self, w: i64, count: u64) {
        if count > 0 {
            *self.counts.entry(w).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn merge(&mut self, other: &WorkHistogram) {
        for (&w, &c) in &other.counts {
            self.add_count(w, c);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, w: i64) -> u64 {
        self.counts.get(&w).copied().unwrap_or(0)
    }

    /// Occupied bins in increasing W.
    pub fn bins(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts.iter().map(|(&w, &c)| (w, c))
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.len()
    }

    /// Exact probability count/N.
    pub fn probability(&self, w: i64) -> Ratio<u64> {
        Ratio::new(self.count(w), self.total.max(1))
    }

    pub fn probabilities(&self) -> Vec<(i64, Ratio<u64>)> {
        self.bins().map(|(w, c)| (w, Ratio::new(c, self.total))).collect()
    }

    /// Probability of |W| > `bound` quanta.
    pub fn mass_beyond(&self, bound: i64) -> Ratio<u64> {
        let c: u64 = self.bins().filter(|(w, _)| w.abs() > bound).map(|(_, c)| c).sum();
        Ratio::new(c, self.total.max(1))
    }

    fn moments(&self, beta: f64) -> Moments {
        let (mut s1, mut s2, mut sj) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
        for (w, c) in self.bins() {
            let (wf, cf) = (w as f64, c as f64);
            s1.add(cf * wf);
            s2.add(cf * wf * wf);
            sj.add(cf * boltzmann_weight(beta, w));
        }
        let n = self.total as f64;
        Moments { mean_w: s1.value() / n, mean_w2: s2.value() / n, jarzynski: sj.value() / n }
    }
}

impl FromIterator<i64> for WorkHistogram {
    fn from_iter<I: IntoIterator<Item = i64>>(iter: I) -> Self {
        let mut h = WorkHistogram::new();
        for w in iter {
            h.add(w);
        }
        h
    }
}

/// e^{−βW}, with W = 0 mapping to exactly 1 for every β.
fn boltzmann_weight(beta: f64, w: i64) -> f64 {
    if w == 0 {
        1.0
    } else {
        (-beta * w as f64).exp()
    }
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_w: f64,
    mean_w2: f64,
    jarzynski: f64,
}

impl Moments {
    fn ratio(&self) -> f64 {
        self.mean_w2 / self.mean_w
    }
}

/// Plug-in estimate with bootstrap standard error and 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    /// |value − target| in units of the standard error.
    pub fn sigmas_from(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.std_error
    }

    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }

    pub fn interval_covers(&self, target: f64) -> bool {
        self.ci_low <= target && target <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n: u64,
    pub beta_hbar_omega0: f64,
    pub mean_w: Estimate,
    pub mean_w2: Estimate,
    /// ⟨W²⟩/(ħω₀⟨W⟩)
    pub ratio: Estimate,
    /// False when |⟨W⟩| < 3 SE(⟨W⟩): the ratio is then not meaningful.
    pub ratio_defined: bool,
    /// ⟨e^{−βW}⟩
    pub jarzynski_mean: Estimate,
    pub n_bootstrap: usize,
}

pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Draw a multinomial resample of `hist`.
pub fn resample<R: Rng + ?Sized>(hist: &WorkHistogram, rng: &mut R) -> WorkHistogram {
    let mut out = WorkHistogram::new();
    let mut remaining_n = hist.total;
    let mut remaining_mass = hist.total;
    for (w, c) in hist.bins() {
        if remaining_n == 0 {
            break;
        }
        let k = if c >= remaining_mass {
            remaining_n
        } else {
            let p = c as f64 / remaining_mass as f64;
            Binomial::new(remaining_n, p).expect("valid binomial").sample(rng)
        };
        out.add_count(w, k);
        remaining_n -= k;
        remaining_mass -= c;
    }
    out
}

fn estimate(value: f64, mut replicates: Vec<f64>) -> Estimate {
    replicates.retain(|x| x.is_finite());
    if replicates.len() < 2 {
        return Estimate { value, std_error: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN };
    }
    let n = replicates.len() as f64;
    let mean = replicates.iter().copied().collect::<CompensatedSum>().value() / n;
    let var = replicates.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value() / (n - 1.0);
    replicates.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        let idx = (q * (replicates.len() - 1) as f64).round() as usize;
        replicates[idx]
    };
    Estimate { value, std_error: var.sqrt(), ci_low: pick(0.025), ci_high: pick(0.975) }
}

/// Summarize a histogram with `n_bootstrap` resamples.
pub fn summarize_histogram<R: Rng + ?Sized>(
    hist: &WorkHistogram,
    beta_hbar_omega0: f64,
    n_bootstrap: usize,
    rng: &mut R,
) -> Result<EnsembleSummary, StatsError> {
    if hist.total() == 0 {
        return Err(StatsError::Empty);
    }
    if n_bootstrap < 100 {
        return Err(StatsError::TooFewReplicates(n_bootstrap));
    }
    let plug_in = hist.moments(beta_hbar_omega0);
    let mut reps = [Vec::with_capacity(n_bootstrap), Vec::new(), Vec::new(), Vec::new()];
    for r in &mut reps {
        r.reserve(n_bootstrap);
    }
    for _ in 0..n_bootstrap {
        let m = resample(hist, rng).moments(beta_hbar_omega0);
        reps[0].push(m.mean_w);
        reps[1].push(m.mean_w2);
        reps[2].push(m.ratio());
        reps[3].push(m.jarzynski);
    }
    let [r_w, r_w2, r_ratio, r_j] = reps;
    let mean_w = estimate(plug_in.mean_w, r_w);
    let ratio_defined = plug_in.mean_w != 0.0 && plug_in.mean_w.abs() >= 3.0 * mean_w.std_error;
    Ok(EnsembleSummary {
        n: hist.total(),
        beta_hbar_omega0,
        mean_w,
        mean_w2: estimate(plug_in.mean_w2, r_w2),
        ratio: estimate(plug_in.ratio(), r_ratio),
        ratio_defined,
        jarzynski_mean: estimate(plug_in.jarzynski, r_j),
        n_bootstrap,
    })
}

/// Summarize work records: plug-in estimators and percentile bootstrap.
pub fn summarize<R: Rng + ?Sized>(
    records: &[WorkRecord],
    beta_hbar_omega0: f64,
    n_bootstrap: usize,
    rng: &mut R,
) -> Result<EnsembleSummary, StatsError> {
    summarize_histogram(&WorkHistogram::from_records(records), beta_hbar_omega0, n_bootstrap, rng)
}

/// Per-photon-number conditional statistics of a Monte Carlo ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonClass {
    pub n_photons: u32,
    pub count: u64,
    /// Fraction of the ensemble in this class.
    pub probability: f64,
    pub mean_w: f64,
    /// Standard error of the conditional mean.
    pub std_error_w: f64,
    pub mean_w2: f64,
    /// Class-weighted ⟨e^{−βW}⟩_n P_n
    pub jarzynski_term: f64,
}

pub fn photon_class(records: &[WorkRecord], n_photons: u32, beta_hbar_omega0: f64) -> PhotonClass {
    let (mut s1, mut s2, mut sj) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    let mut count = 0u64;
    for r in records.iter().filter(|r| r.n_jumps_during_drive() == n_photons) {
        let w = r.work_quanta as f64;
        s1.add(w);
        s2.add(w * w);
        sj.add(boltzmann_weight(beta_hbar_omega0, r.work_quanta));
        count += 1;
    }
    let n = records.len().max(1) as f64;
    let c = count.max(1) as f64;
    let mean_w = s1.value() / c;
    let mean_w2 = s2.value() / c;
    let var = (mean_w2 - mean_w * mean_w).max(0.0) * c / (c - 1.0).max(1.0);
    PhotonClass {
        n_photons,
        count,
        probability: count as f64 / n,
        mean_w,
        std_error_w: (var / c).sqrt(),
        mean_w2,
        jarzynski_term: sj.value() / n,
    }
}
