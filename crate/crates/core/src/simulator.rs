//! Synthetic expert-model scores for checking coverage without trained
//! models.
//!
//! Each domain `d` has a symmetric Dirichlet with concentration `c_d`. A
//! sample from domain `d` draws a ground-truth class distribution
//! `pi ~ Dir(c_d)` and a label `y ~ pi`. There is one simulated expert per
//! domain; expert `m` emits `f * pi + (1 - f) * eta` with fresh noise
//! `eta ~ Dir(noise_concentration)`, where `f` is its home fidelity on
//! domain `m` and the cross-domain fidelity elsewhere.
//!
//! Trials are seeded with `seed + trial_index` so parallel and sequential
//! runs agree bit for bit.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::conformal::{conformal_quantile, coverage_bounds, set_contains, true_class_scores};
use crate::ensemble::fuse_rows;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use crate::types::{normalize_row, LabeledScores, ScoreMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub num_classes: usize,
    pub num_domains: usize,
    /// Dirichlet concentration of the class distribution, per domain.
    pub per_domain_concentration: Vec<f64>,
    /// Fidelity of each domain's own expert on that domain.
    pub per_domain_fidelity: Vec<f64>,
    /// Fidelity of every expert outside its home domain.
    #[serde(default)]
    pub cross_domain_fidelity: f64,
    #[serde(default = "default_noise")]
    pub noise_concentration: f64,
    pub samples_per_domain: Vec<usize>,
    pub seed: u64,
}

fn default_noise() -> f64 {
    1.0
}

impl Default for SimulatorConfig {
    /// Seven classes over three domains of differing difficulty; each expert
    /// tracks its home domain well and the others poorly.
    fn default() -> Self {
        Self {
            num_classes: 7,
            num_domains: 3,
            per_domain_concentration: vec![0.3, 0.5, 0.8],
            per_domain_fidelity: vec![0.9, 0.85, 0.8],
            cross_domain_fidelity: 0.15,
            noise_concentration: 1.0,
            samples_per_domain: vec![1000, 1000, 1000],
            seed: 20_240_917,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes = {} (need >= 2)", self.num_classes));
        }
        if self.num_domains < 1 {
            return bad("num_domains must be >= 1".into());
        }
        for (name, len) in [
            ("per_domain_concentration", self.per_domain_concentration.len()),
            ("per_domain_fidelity", self.per_domain_fidelity.len()),
            ("samples_per_domain", self.samples_per_domain.len()),
        ] {
            if len != self.num_domains {
                return bad(format!("{name} has {len} entries for {} domains", self.num_domains));
            }
        }
        if let Some(c) = self.per_domain_concentration.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return bad(format!("concentration {c} must be positive"));
        }
        let fidelities = self.per_domain_fidelity.iter().chain([&self.cross_domain_fidelity]);
        if let Some(f) = fidelities.into_iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return bad(format!("fidelity {f} outside [0, 1]"));
        }
        if !(self.noise_concentration.is_finite() && self.noise_concentration > 0.0) {
            return bad(format!("noise_concentration {} must be positive", self.noise_concentration));
        }
        Ok(())
    }

    pub fn num_experts(&self) -> usize {
        self.num_domains
    }

    fn fidelity(&self, expert: usize, domain: usize) -> f64 {
        if expert == domain {
            self.per_domain_fidelity[domain]
        } else {
            self.cross_domain_fidelity
        }
    }
}

/// Per-domain Dirichlet samplers, built once per config.
struct Sampler<'a> {
    config: &'a SimulatorConfig,
    class_gamma: Vec<Gamma<f64>>,
    noise_gamma: Gamma<f64>,
}

impl<'a> Sampler<'a> {
    fn new(config: &'a SimulatorConfig) -> Result<Self> {
        config.validate()?;
        let gamma = |shape: f64| Gamma::new(shape, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()));
        Ok(Self {
            config,
            class_gamma: config.per_domain_concentration.iter().map(|&c| gamma(c)).collect::<Result<_>>()?,
            noise_gamma: gamma(config.noise_concentration)?,
        })
    }

    fn dirichlet(gamma: &Gamma<f64>, rng: &mut Rng, out: &mut [f64]) {
        loop {
            for x in out.iter_mut() {
                *x = gamma.sample(rng);
            }
            let sum: f64 = out.iter().sum();
            // all-zero draws only happen through underflow at tiny shapes
            if sum > 0.0 && sum.is_finite() {
                out.iter_mut().for_each(|x| *x /= sum);
                return;
            }
        }
    }

    fn categorical(rng: &mut Rng, probs: &[f64]) -> usize {
        let u = rng::unit(rng);
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = j;
                if u < acc {
                    return j;
                }
            }
        }
        last
    }

    /// One sample from `domain`: appends each expert's row to `experts[m]`
    /// and returns the label.
    fn draw(&self, rng: &mut Rng, domain: usize, pi: &mut [f64], experts: &mut [Vec<f64>]) -> usize {
        let k = self.config.num_classes;
        Self::dirichlet(&self.class_gamma[domain], rng, pi);
        let label = Self::categorical(rng, pi);
        let mut noise = vec![0.0; k];
        for (m, rows) in experts.iter_mut().enumerate() {
            Self::dirichlet(&self.noise_gamma, rng, &mut noise);
            let f = self.config.fidelity(m, domain);
            let start = rows.len();
            rows.extend(pi.iter().zip(&noise).map(|(&p, &e)| f * p + (1.0 - f) * e));
            normalize_row(&mut rows[start..]);
        }
        label
    }
}

/// Draws `samples_per_domain[d]` samples from every domain, domain by domain.
/// Returns one collection per expert; ids are `d<domain>-<index>`.
pub fn simulate(config: &SimulatorConfig) -> Result<Vec<LabeledScores>> {
    let sampler = Sampler::new(config)?;
    let mut rng = rng::seeded(config.seed);
    let total: usize = config.samples_per_domain.iter().sum();
    let k = config.num_classes;
    let mut experts = vec![Vec::with_capacity(total * k); config.num_experts()];
    let mut ids = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut pi = vec![0.0; k];
    for (d, &n) in config.samples_per_domain.iter().enumerate() {
        for i in 0..n {
            labels.push(Some(sampler.draw(&mut rng, d, &mut pi, &mut experts)));
            ids.push(format!("d{d}-{i:06}"));
        }
    }
    experts
        .into_iter()
        .map(|values| LabeledScores::new(ids.clone(), labels.clone(), ScoreMatrix::from_internal(k, values)?))
        .collect()
}

/// Which scores a trial calibrates and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    Expert(usize),
    /// Uniform average of all experts.
    Ensemble,
}

/// Raw simulated block: labels plus one flat score buffer per expert.
struct Block {
    labels: Vec<usize>,
    domains: Vec<usize>,
    experts: Vec<Vec<f64>>,
}

impl Block {
    fn draw(sampler: &Sampler, rng: &mut Rng, domains: impl Iterator<Item = usize>, n: usize) -> Block {
        let k = sampler.config.num_classes;
        let mut block = Block {
            labels: Vec::with_capacity(n),
            domains: Vec::with_capacity(n),
            experts: vec![Vec::with_capacity(n * k); sampler.config.num_experts()],
        };
        let mut pi = vec![0.0; k];
        for d in domains.take(n) {
            block.labels.push(sampler.draw(rng, d, &mut pi, &mut block.experts));
            block.domains.push(d);
        }
        block
    }

    fn scores(&self, k: usize, source: ScoreSource) -> Vec<f64> {
        match source {
            ScoreSource::Expert(m) => self.experts[m].clone(),
            ScoreSource::Ensemble => {
                let m = self.experts.len();
                if m == 1 {
                    return self.experts[0].clone();
                }
                let weights = vec![1.0 / m as f64; m];
                let mut out = vec![0.0; self.labels.len() * k];
                for (i, row) in out.chunks_exact_mut(k).enumerate() {
                    fuse_rows(self.experts.iter().map(|e| &e[i * k..(i + 1) * k]), &weights, row);
                }
                out
            }
        }
    }

    /// Indices whose domain is `d`.
    fn in_domain(&self, d: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.domains[i] == d).collect()
    }
}

/// Domain of each mixture sample, with probability proportional to
/// `samples_per_domain` (uniform when all counts are zero).
fn mixture_domains<'r>(config: &SimulatorConfig, rng: &'r mut Rng) -> impl Iterator<Item = usize> + 'r {
    let mut weights = config.samples_per_domain.clone();
    if weights.iter().all(|&w| w == 0) {
        weights = vec![1; weights.len()];
    }
    let total: usize = weights.iter().sum();
    std::iter::repeat_with(move || {
        let mut u = rng::below(rng, total);
        weights
            .iter()
            .position(|&w| {
                if u < w {
                    true
                } else {
                    u -= w;
                    false
                }
            })
            .unwrap_or(0)
    })
}

fn source_ok(config: &SimulatorConfig, source: ScoreSource) -> Result<()> {
    match source {
        ScoreSource::Expert(m) if m >= config.num_experts() => {
            Err(Error::InvalidConfig(format!("expert {m} does not exist ({} experts)", config.num_experts())))
        }
        _ => Ok(()),
    }
}

fn threshold(scores: &[f64], labels: &[usize], k: usize, alpha: f64) -> Result<f64> {
    let m = ScoreMatrix::from_flat(k, scores.to_vec(), f64::INFINITY)?;
    conformal_quantile(&true_class_scores(&m, labels), alpha)
}

fn empirical_coverage(scores: &[f64], labels: &[usize], k: usize, q_hat: f64) -> f64 {
    let hits = scores.chunks_exact(k).zip(labels).filter(|(row, &y)| set_contains(row, y, q_hat, true)).count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTrialResult {
    pub mean_coverage: f64,
    pub per_trial: Vec<f64>,
    /// Theoretical `(lower, upper)` coverage interval for `n_calib`.
    pub bounds: (f64, f64),
}

/// Repeated split-conformal runs on fresh exchangeable data.
///
/// Every trial draws `n_calib + n_test` samples from the domain mixture,
/// calibrates on the first `n_calib` and measures coverage on the rest.
pub fn coverage_trial(
    config: &SimulatorConfig,
    alpha: f64,
    n_calib: usize,
    n_test: usize,
    trials: usize,
    source: ScoreSource,
) -> Result<CoverageTrialResult> {
    coverage_trial_with(config, alpha, n_calib, n_test, trials, source, Execution::default())
}

pub fn coverage_trial_with(
    config: &SimulatorConfig,
    alpha: f64,
    n_calib: usize,
    n_test: usize,
    trials: usize,
    source: ScoreSource,
    exec: Execution,
) -> Result<CoverageTrialResult> {
    let bounds = coverage_bounds(alpha, n_calib)?;
    let sampler = Sampler::new(config)?;
    source_ok(config, source)?;
    if n_test == 0 || trials == 0 {
        return Err(Error::InvalidConfig("n_test and trials must be positive".into()));
    }
    let k = config.num_classes;
    let per_trial = par::try_map_indexed(trials, exec, |t| {
        let mut rng = rng::seeded(rng::trial_seed(config.seed, t));
        let mut domain_rng = rng::seeded(rng::trial_seed(config.seed, t) ^ 0x9e37_79b9_7f4a_7c15);
        let calib = Block::draw(&sampler, &mut rng, mixture_domains(config, &mut domain_rng), n_calib);
        let test = Block::draw(&sampler, &mut rng, mixture_domains(config, &mut domain_rng), n_test);
        let q_hat = threshold(&calib.scores(k, source), &calib.labels, k, alpha)?;
        Ok(empirical_coverage(&test.scores(k, source), &test.labels, k, q_hat))
    })?;
    let mean_coverage = per_trial.iter().sum::<f64>() / trials as f64;
    Ok(CoverageTrialResult { mean_coverage, per_trial, bounds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftResult {
    /// Mean merged-test coverage of each expert calibrated on its home domain.
    pub expert_coverage: Vec<f64>,
    /// Mean merged-test coverage of the ensemble calibrated on merged data.
    pub ensemble_coverage: f64,
    pub expert_per_trial: Vec<Vec<f64>>,
    pub ensemble_per_trial: Vec<f64>,
}

/// Compares single experts against the ensemble under domain shift.
///
/// Per trial, every domain contributes `n_calib_per_domain` calibration and
/// `n_test_per_domain` test samples. Expert `m` is calibrated only on domain
/// `m`'s calibration samples; the ensemble is calibrated on all of them.
/// Everything is evaluated on the merged test samples.
pub fn domain_shift_trial(
    config: &SimulatorConfig,
    alpha: f64,
    n_calib_per_domain: usize,
    n_test_per_domain: usize,
    trials: usize,
    exec: Execution,
) -> Result<DomainShiftResult> {
    coverage_bounds(alpha, n_calib_per_domain)?;
    let sampler = Sampler::new(config)?;
    if n_test_per_domain == 0 || trials == 0 {
        return Err(Error::InvalidConfig("n_test_per_domain and trials must be positive".into()));
    }
    let k = config.num_classes;
    let d = config.num_domains;
    let domains = |n: usize| (0..d).flat_map(move |dom| std::iter::repeat_n(dom, n));

    let rows = par::try_map_indexed(trials, exec, |t| {
        let mut rng = rng::seeded(rng::trial_seed(config.seed, t));
        let calib = Block::draw(&sampler, &mut rng, domains(n_calib_per_domain), d * n_calib_per_domain);
        let test = Block::draw(&sampler, &mut rng, domains(n_test_per_domain), d * n_test_per_domain);
        let mut experts = Vec::with_capacity(d);
        for m in 0..d {
            let home = calib.in_domain(m);
            let all = &calib.experts[m];
            let scores: Vec<f64> = home.iter().flat_map(|&i| &all[i * k..(i + 1) * k]).copied().collect();
            let labels: Vec<usize> = home.iter().map(|&i| calib.labels[i]).collect();
            let q_hat = threshold(&scores, &labels, k, alpha)?;
            experts.push(empirical_coverage(&test.experts[m], &test.labels, k, q_hat));
        }
        let q_hat = threshold(&calib.scores(k, ScoreSource::Ensemble), &calib.labels, k, alpha)?;
        let ensemble = empirical_coverage(&test.scores(k, ScoreSource::Ensemble), &test.labels, k, q_hat);
        Ok::<_, Error>((experts, ensemble))
    })?;

    let n = trials as f64;
    let expert_per_trial: Vec<Vec<f64>> = (0..d).map(|m| rows.iter().map(|r| r.0[m]).collect()).collect();
    let ensemble_per_trial: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(DomainShiftResult {
        expert_coverage: expert_per_trial.iter().map(|v| v.iter().sum::<f64>() / n).collect(),
        ensemble_coverage: ensemble_per_trial.iter().sum::<f64>() / n,
        expert_per_trial,
        ensemble_per_trial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::classification_metrics;

    fn small(fidelity: f64, n: usize) -> SimulatorConfig {
        SimulatorConfig {
            num_classes: 4,
            num_domains: 2,
            per_domain_concentration: vec![0.5, 1.0],
            per_domain_fidelity: vec![fidelity, fidelity],
            cross_domain_fidelity: fidelity,
            noise_concentration: 1.0,
            samples_per_domain: vec![n, n],
            seed: 3,
        }
    }

    #[test]
    fn rows_are_valid_and_deterministic() {
        let cfg = SimulatorConfig::default();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].len(), 3000);
        assert_eq!(a[0].ids()[1000], "d1-000000");
        for m in &a {
            for r in m.scores().rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_experts_agree_with_the_truth() {
        let cfg = small(1.0, 5000);
        let out = simulate(&cfg).unwrap();
        assert_eq!(out[0].scores(), out[1].scores());
        // with rows equal to pi, P(y = argmax) = E[max pi]
        let acc = classification_metrics(out[0].scores(), out[0].labels()).unwrap().accuracy;
        let rows = out[0].scores();
        let bayes: f64 =
            rows.rows().map(|r| r.iter().copied().fold(0.0, f64::max)).sum::<f64>() / rows.num_samples() as f64;
        assert!((acc - bayes).abs() < 0.02, "{acc} vs {bayes}");
    }

    #[test]
    fn pure_noise_is_at_chance() {
        let cfg = small(0.0, 10_000);
        let out = simulate(&cfg).unwrap();
        let acc = classification_metrics(out[0].scores(), out[0].labels()).unwrap().accuracy;
        assert!((acc - 0.25).abs() < 0.02, "{acc}");
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(0.5, 10);
        c.per_domain_fidelity.push(0.1);
        assert!(matches!(simulate(&c), Err(Error::InvalidConfig(_))));
        let mut c = small(0.5, 10);
        c.per_domain_concentration[0] = 0.0;
        assert!(matches!(simulate(&c), Err(Error::InvalidConfig(_))));
        let mut c = small(0.5, 10);
        c.cross_domain_fidelity = 1.5;
        assert!(matches!(simulate(&c), Err(Error::InvalidConfig(_))));
        let c = small(0.5, 10);
        assert!(matches!(coverage_trial(&c, 0.1, 10, 10, 2, ScoreSource::Expert(5)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn tiny_calibration_gives_full_sets() {
        let c = small(0.5, 10);
        let r = coverage_trial(&c, 0.1, 5, 50, 20, ScoreSource::Ensemble).unwrap();
        assert!(r.per_trial.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let c = small(0.6, 10);
        let a = coverage_trial_with(&c, 0.2, 100, 100, 16, ScoreSource::Ensemble, Execution::Sequential).unwrap();
        let b = coverage_trial_with(&c, 0.2, 100, 100, 16, ScoreSource::Ensemble, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let a = domain_shift_trial(&c, 0.2, 50, 50, 8, Execution::Sequential).unwrap();
        let b = domain_shift_trial(&c, 0.2, 50, 50, 8, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_alpha_covers_at_least_half() {
        let c = small(0.6, 10);
        let r = coverage_trial(&c, 0.5, 200, 200, 200, ScoreSource::Expert(0)).unwrap();
        assert!(r.mean_coverage >= 0.5 - 0.01, "{}", r.mean_coverage);
    }

    #[test]
    fn config_json_defaults() {
        let text = r#"{"num_classes":3,"num_domains":1,"per_domain_concentration":[1.0],
            "per_domain_fidelity":[0.5],"samples_per_domain":[10],"seed":1}"#;
        let c: SimulatorConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.noise_concentration, 1.0);
        assert_eq!(c.cross_domain_fidelity, 0.0);
        assert!(serde_json::from_str::<SimulatorConfig>(&text.replace("\"seed\":1", "\"seed\":1,\"x\":2")).is_err());
    }
}
