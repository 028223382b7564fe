//! Synthetic multi-year trials with treatment turnover.
//!
//! Systems are laid out as bridge systems (tested in every year), retired
//! systems (pre-change years only) and new systems (post-change years only).
//! Each replicate draws its noise from its own ChaCha stream selected by the
//! replicate index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formula::parse_formula;
use crate::inference::{adjusted_means, mean_sed, sed_matrix};
use crate::solver::fit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_systems_old: usize,
    pub n_systems_new: usize,
    /// Old systems continued after the change; the first `n_bridge` old systems.
    pub n_bridge: usize,
    pub n_years_pre: usize,
    pub n_years_post: usize,
    pub grand_mean: f64,
    /// One effect per system: old systems first, then new.
    pub true_system_effects: Vec<f64>,
    /// One effect per year: pre-change years first.
    pub true_year_effects: Vec<f64>,
    pub sigma_e: f64,
    /// Random year deviations added to the fixed year effects each replicate.
    pub sigma_year: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Zero effects with the given layout.
    pub fn layout(old: usize, new: usize, bridge: usize, pre: usize, post: usize) -> Self {
        SimConfig {
            n_systems_old: old,
            n_systems_new: new,
            n_bridge: bridge,
            n_years_pre: pre,
            n_years_post: post,
            grand_mean: 0.0,
            true_system_effects: vec![0.0; old + new],
            true_year_effects: vec![0.0; pre + post],
            sigma_e: 1.0,
            sigma_year: None,
            replicates: 1,
            seed: 0,
        }
    }

    pub fn n_systems(&self) -> usize {
        self.n_systems_old + self.n_systems_new
    }

    pub fn n_years(&self) -> usize {
        self.n_years_pre + self.n_years_post
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.n_systems_old == 0 || self.n_systems_new == 0 || self.n_bridge == 0 {
            return bad("system counts must be at least 1");
        }
        if self.n_years_pre == 0 || self.n_years_post == 0 || self.replicates == 0 {
            return bad("year and replicate counts must be at least 1");
        }
        if self.n_bridge > self.n_systems_old {
            return bad("bridge systems cannot outnumber old systems");
        }
        if self.true_system_effects.len() != self.n_systems() {
            return bad("true_system_effects needs one entry per system");
        }
        if self.true_year_effects.len() != self.n_years() {
            return bad("true_year_effects needs one entry per year");
        }
        if !(self.sigma_e >= 0.0) || self.sigma_year.is_some_and(|s| !(s >= 0.0)) {
            return bad("standard deviations must be non-negative");
        }
        Ok(())
    }

    pub fn system_label(&self, s: usize) -> String {
        (s + 1).to_string()
    }

    pub fn year_label(&self, y: usize) -> String {
        (y + 1).to_string()
    }

    fn tested(&self, s: usize, y: usize) -> bool {
        if s < self.n_bridge {
            true
        } else if s < self.n_systems_old {
            y < self.n_years_pre
        } else {
            y >= self.n_years_pre
        }
    }

    /// Retired (old, non-bridge) systems.
    pub fn retired(&self) -> std::ops::Range<usize> {
        self.n_bridge..self.n_systems_old
    }

    pub fn new_systems(&self) -> std::ops::Range<usize> {
        self.n_systems_old..self.n_systems()
    }
}

fn generate(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let noise = Normal::new(0.0, cfg.sigma_e).map_err(|e| Error::Invalid(e.to_string()))?;
    let years: Vec<f64> = match cfg.sigma_year {
        Some(sd) if sd > 0.0 => {
            let d = Normal::new(0.0, sd).map_err(|e| Error::Invalid(e.to_string()))?;
            cfg.true_year_effects.iter().map(|e| e + d.sample(rng)).collect()
        }
        _ => cfg.true_year_effects.clone(),
    };
    let mut rows = Vec::new();
    for s in 0..cfg.n_systems() {
        for (y, year_eff) in years.iter().enumerate() {
            if !cfg.tested(s, y) {
                continue;
            }
            for _ in 0..cfg.replicates {
                let e = if cfg.sigma_e > 0.0 { noise.sample(rng) } else { 0.0 };
                let v = cfg.grand_mean + cfg.true_system_effects[s] + year_eff + e;
                rows.push((vec![cfg.system_label(s), cfg.year_label(y)], v));
            }
        }
    }
    Dataset::from_rows(&["S".to_string(), "Y".to_string()], &rows, "value")
}

fn stream(cfg: &SimConfig, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replicate);
    rng
}

/// One synthetic trial; identical for identical configurations.
pub fn simulate_trial(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    generate(cfg, &mut stream(cfg, 0))
}

/// Trial for replicate `r` of a study.
pub fn simulate_replicate(cfg: &SimConfig, r: u64) -> Result<Dataset> {
    cfg.validate()?;
    generate(cfg, &mut stream(cfg, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    /// System only.
    Model1,
    /// System fixed, year random.
    Model2,
    /// System and year fixed.
    Model3,
}

impl SimModel {
    pub fn formula(self) -> &'static str {
        match self {
            SimModel::Model1 => "S",
            SimModel::Model2 => "S : Y",
            SimModel::Model3 => "S + Y",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimModel::Model1 => "model1",
            SimModel::Model2 => "model2",
            SimModel::Model3 => "model3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBias {
    pub a: String,
    pub b: String,
    pub mean_estimate: f64,
    pub true_difference: f64,
    pub bias: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBias {
    pub model: SimModel,
    pub formula: String,
    pub fitted: usize,
    pub failures: usize,
    /// Empty when no replicate could be fitted.
    pub pairs: Vec<PairBias>,
    /// Mean over retired-vs-new pairs, aggregated per replicate; absent
    /// without retired systems or successful fits.
    pub old_vs_new: Option<PairBias>,
    pub mean_sed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub replicates: usize,
    pub models: Vec<ModelBias>,
}

impl BiasReport {
    pub fn model(&self, m: SimModel) -> Option<&ModelBias> {
        self.models.iter().find(|b| b.model == m)
    }
}

/// Neumaier-compensated sum.
fn ksum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

fn summarize(a: String, b: String, truth: f64, vals: &[f64]) -> PairBias {
    let n = vals.len() as f64;
    let mean = ksum(vals.iter().copied()) / n;
    let var = if vals.len() > 1 { ksum(vals.iter().map(|v| (v - mean).powi(2))) / (n - 1.0) } else { 0.0 };
    PairBias { a, b, mean_estimate: mean, true_difference: truth, bias: mean - truth, mc_se: (var / n).sqrt() }
}

struct RepResult {
    diffs: Vec<f64>,
    old_new: f64,
    mean_sed: f64,
}

fn fit_replicate(ds: &Dataset, model: SimModel, cfg: &SimConfig) -> Result<RepResult> {
    let spec = parse_formula(model.formula(), &ds.factor_names())?;
    let fm = fit(ds, &spec)?;
    let means = adjusted_means(&fm, "S", Some("Y"))?.estimates();
    let k = cfg.n_systems();
    let mut diffs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            diffs.push(means[i] - means[j]);
        }
    }
    let on: Vec<f64> =
        cfg.retired().flat_map(|i| cfg.new_systems().map(move |j| (i, j))).map(|(i, j)| means[i] - means[j]).collect();
    let old_new = if on.is_empty() { f64::NAN } else { ksum(on.iter().copied()) / on.len() as f64 };
    let sed = mean_sed(&sed_matrix(&fm, "S", Some("Y"), 0.05, &[])?, None)?;
    Ok(RepResult { diffs, old_new, mean_sed: sed })
}

/// Monte Carlo bias of system differences under Models 1 and 3 (and 2 when
/// `sigma_year > 0`). `threads = 0` uses the global pool.
pub fn bias_study(cfg: &SimConfig, n_reps: usize, threads: usize) -> Result<BiasReport> {
    cfg.validate()?;
    if n_reps < 100 {
        return Err(Error::Invalid(format!("bias study needs at least 100 replicates, got {n_reps}")));
    }
    let mut models = vec![SimModel::Model1, SimModel::Model3];
    if cfg.sigma_year.is_some_and(|s| s > 0.0) {
        models.insert(1, SimModel::Model2);
    }
    let run = || -> Vec<Vec<Option<RepResult>>> {
        (0..n_reps as u64)
            .into_par_iter()
            .map(|r| {
                let ds = simulate_replicate(cfg, r).ok();
                models.iter().map(|&m| ds.as_ref().and_then(|d| fit_replicate(d, m, cfg).ok())).collect()
            })
            .collect()
    };
    let results = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?
            .install(run)
    } else {
        run()
    };

    let k = cfg.n_systems();
    let eff = &cfg.true_system_effects;
    let mut out = Vec::new();
    for (mi, &model) in models.iter().enumerate() {
        let ok: Vec<&RepResult> = results.iter().filter_map(|r| r[mi].as_ref()).collect();
        let failures = n_reps - ok.len();
        let mut pairs = Vec::new();
        let mut p = 0;
        for i in (0..k).filter(|_| !ok.is_empty()) {
            for j in i + 1..k {
                let vals: Vec<f64> = ok.iter().map(|r| r.diffs[p]).collect();
                pairs.push(summarize(cfg.system_label(i), cfg.system_label(j), eff[i] - eff[j], &vals));
                p += 1;
            }
        }
        let on_truth: Vec<f64> = cfg.retired().flat_map(|i| cfg.new_systems().map(move |j| eff[i] - eff[j])).collect();
        let on_truth = ksum(on_truth.iter().copied()) / on_truth.len().max(1) as f64;
        let on_vals: Vec<f64> = ok.iter().map(|r| r.old_new).collect();
        let old_vs_new = (!ok.is_empty() && !cfg.retired().is_empty())
            .then(|| summarize("retired".into(), "new".into(), on_truth, &on_vals));
        let mean_sed = (!ok.is_empty()).then(|| ksum(ok.iter().map(|r| r.mean_sed)) / ok.len() as f64);
        out.push(ModelBias {
            model,
            formula: model.formula().to_string(),
            fitted: ok.len(),
            failures,
            pairs,
            old_vs_new,
            mean_sed,
        });
    }
    Ok(BiasReport { replicates: n_reps, models: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::inference::predicted_cells;
    use crate::solver::fit_ols;

    /// Toy layout with the least-squares toy estimates as truth:
    /// systems 1,2 = bridges (toy 2,3), 3,4 = retired (toy 1,4), 5,6 = new.
    fn toy_like() -> SimConfig {
        let mut c = SimConfig::layout(4, 2, 2, 4, 1);
        c.grand_mean = 63.0;
        c.true_system_effects = vec![35.1, -0.1, -4.125, -0.875, 4.0, 0.0];
        c.true_year_effects = vec![-6.75, -9.5, -8.0, -9.25, 0.0];
        c.sigma_e = 0.0;
        c
    }

    #[test]
    fn noiseless_toy_reproduces_predicted_cells() {
        let ds = simulate_trial(&toy_like()).unwrap();
        assert_eq!(ds.n_rows(), 20);
        let toy = Dataset::builtin_toy();
        let fm = fit_ols(&toy, &parse_formula("S + Y", &toy.factor_names()).unwrap()).unwrap();
        let cells = predicted_cells(&fm, "S", Some("Y")).unwrap();
        let toy_of = ["2", "3", "1", "4", "5", "6"];
        let years = ["2020", "2021", "2022", "2023", "2024"];
        for r in 0..ds.n_rows() {
            let o = ds.observation(r);
            let s: usize = o.levels["S"].parse().unwrap();
            let y: usize = o.levels["Y"].parse().unwrap();
            let want = cells.get(toy_of[s - 1], years[y - 1]).unwrap();
            assert!((o.response - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_effects_give_grand_mean() {
        let mut c = SimConfig::layout(3, 2, 1, 3, 2);
        c.grand_mean = 42.0;
        c.sigma_e = 0.0;
        let ds = simulate_trial(&c).unwrap();
        assert!(ds.response().iter().all(|&v| v == 42.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut c = toy_like();
        c.sigma_e = 2.0;
        c.seed = 99;
        assert_eq!(simulate_trial(&c).unwrap(), simulate_trial(&c).unwrap());
        c.seed = 100;
        let other = simulate_trial(&c).unwrap();
        c.seed = 99;
        assert_ne!(simulate_trial(&c).unwrap(), other);
    }

    #[test]
    fn invalid_configs() {
        let mut c = SimConfig::layout(2, 1, 3, 2, 1);
        assert!(simulate_trial(&c).is_err());
        c.n_bridge = 1;
        c.sigma_e = -1.0;
        assert!(simulate_trial(&c).is_err());
        c.sigma_e = 1.0;
        c.true_year_effects.pop();
        assert!(simulate_trial(&c).is_err());
        assert!(bias_study(&SimConfig::layout(2, 1, 1, 2, 1), 10, 1).is_err());
    }

    #[test]
    fn model_three_recovers_truth_without_noise() {
        let c = toy_like();
        let ds = simulate_trial(&c).unwrap();
        let fm = fit_ols(&ds, &parse_formula("S + Y", &ds.factor_names()).unwrap()).unwrap();
        let truth = [63.0, 35.1, -0.1, -4.125, -0.875, 4.0, -6.75, -9.5, -8.0, -9.25];
        for (b, t) in fm.beta.iter().zip(truth) {
            assert!((b - t).abs() < 1e-9, "{b} vs {t}");
        }
    }

    #[test]
    fn replicate_order_independent() {
        let mut c = toy_like();
        c.sigma_e = 1.0;
        c.seed = 5;
        let a = bias_study(&c, 120, 1).unwrap();
        let b = bias_study(&c, 120, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(simulate_replicate(&c, 17).unwrap(), simulate_replicate(&c, 17).unwrap());
    }

    #[test]
    fn no_confounding_without_year_effects() {
        let mut c = SimConfig::layout(4, 2, 2, 4, 1);
        c.sigma_e = 1.0;
        c.seed = 11;
        let rep = bias_study(&c, 300, 0).unwrap();
        for m in &rep.models {
            assert_eq!(m.failures, 0);
            for p in m.pairs.iter().chain(m.old_vs_new.as_ref()) {
                assert!(p.bias.abs() <= 3.0 * p.mc_se, "{:?} {p:?}", m.model);
            }
        }
    }

    #[test]
    fn more_years_favour_random_year_effects() {
        let sed = |pre: usize| {
            let mut c = SimConfig::layout(4, 2, 2, pre, 1);
            c.sigma_e = 2.0;
            c.sigma_year = Some(10.0);
            c.seed = 3;
            let rep = bias_study(&c, 100, 0).unwrap();
            let get = |m| rep.model(m).unwrap().mean_sed.unwrap();
            (get(SimModel::Model2), get(SimModel::Model3))
        };
        let (r2, f2) = sed(2);
        assert!(r2 > f2, "{r2} vs {f2}");
        let (r12, f12) = sed(12);
        assert!(r12 < f12, "{r12} vs {f12}");
    }
}
