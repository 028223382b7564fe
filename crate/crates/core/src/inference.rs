//! Adjusted means, predicted cells, SEDs and comparisons built on a fit.
//!
//! A cell is an assignment of levels to the treatment and margin factors.
//! Its prediction is the intercept plus every fixed effect the assignment
//! determines; fixed-term factors outside the cell are taken from a factor
//! that determines them in the data (e.g. G from S in `G/S`) or else
//! averaged with equal weights. Random effects contribute zero. An adjusted
//! mean is the equal-weight average of the cells over the margin levels
//! compatible with the treatment level.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Dataset, TransformKind};
use crate::design::{combo_label, CellStatus};
use crate::error::{Error, Result};
use crate::formula::{ModelSpec, Term};
use crate::letters::{letter_display, LetterDisplay, SignificanceMatrix};
use crate::solver::{fit, FittedModel};

/// Scale of a means table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "transform", rename_all = "kebab-case")]
pub enum Scale {
    Analysis(TransformKind),
    BackTransformed(TransformKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub level: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub letters: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansTable {
    pub treatment: String,
    pub margin_over: Option<String>,
    pub scale: Scale,
    pub rows: Vec<MeanRow>,
}

impl MeansTable {
    pub fn estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.level.clone()).collect()
    }

    pub fn get(&self, level: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.level == level).map(|r| r.estimate)
    }
}

/// One predicted cell with its additive decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub treatment: String,
    pub margin: Option<String>,
    pub prediction: f64,
    pub components: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    pub treatment: String,
    pub margin: Option<String>,
    pub cells: Vec<Cell>,
    /// Equal-weight row means, one per treatment level.
    pub row_means: Vec<(String, f64)>,
}

impl CellTable {
    pub fn get(&self, treatment: &str, margin: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.treatment == treatment && c.margin.as_deref() == Some(margin))
            .map(|c| c.prediction)
    }
}

/// Pairwise comparison between two adjusted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedPair {
    pub a: String,
    pub b: String,
    pub diff: f64,
    pub sed: f64,
    pub t: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedMatrix {
    pub treatment: String,
    pub levels: Vec<String>,
    pub estimates: Vec<f64>,
    pub df: usize,
    pub alpha: f64,
    pub t_critical: f64,
    /// Pairs (i, j) with i < j in level order.
    pub pairs: Vec<SedPair>,
}

impl SedMatrix {
    fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let k = self.levels.len();
        i * k - i * (i + 1) / 2 + (j - i - 1)
    }

    /// SED between levels `i` and `j`, symmetric.
    pub fn sed(&self, i: usize, j: usize) -> f64 {
        self.pairs[self.pair_index(i, j)].sed
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&SedPair> {
        let i = self.levels.iter().position(|l| l == a)?;
        let j = self.levels.iter().position(|l| l == b)?;
        (i != j).then(|| &self.pairs[self.pair_index(i, j)])
    }

    pub fn significance(&self) -> SignificanceMatrix {
        let k = self.levels.len();
        let mut sig = vec![vec![false; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let s = self.pairs[self.pair_index(i, j)].significant;
                sig[i][j] = s;
                sig[j][i] = s;
            }
        }
        SignificanceMatrix::new(self.levels.clone(), sig).expect("square and symmetric by construction")
    }
}

struct Contrasts {
    labels: Vec<String>,
    l: DMatrix<f64>,
}

fn resolve_term(ds: &Dataset, text: &str) -> Result<Term> {
    let parts: Vec<&str> = text.split('.').map(str::trim).collect();
    let names = ds.factor_names();
    let declared: Vec<&str> = names.iter().map(String::as_str).collect();
    Term::new(&parts, &declared)
}

fn term_levels(ds: &Dataset, idx: &[usize]) -> Vec<Vec<usize>> {
    if idx.len() == 1 {
        return (0..ds.factors()[idx[0]].n_levels()).map(|l| vec![l]).collect();
    }
    let mut v: Vec<Vec<usize>> = (0..ds.n_rows()).map(|r| idx.iter().map(|&k| ds.codes(k)[r]).collect()).collect();
    v.sort();
    v.dedup();
    v
}

/// Coefficient vector of a cell prediction plus per-term decomposition weights.
fn cell_function(fm: &FittedModel, assign: &[(usize, usize)]) -> Result<(Vec<f64>, Vec<(String, Vec<(usize, f64)>)>)> {
    let ds = &fm.dataset;
    let p = fm.design.p();
    let mut l = vec![0.0; p];
    l[0] = 1.0;
    let mut parts = vec![("Intercept".to_string(), vec![(0usize, 1.0)])];
    for tc in &fm.design.fixed {
        let mut known: Vec<Option<usize>> = tc
            .factor_idx
            .iter()
            .map(|&f| {
                assign
                    .iter()
                    .find(|(k, _)| *k == f)
                    .map(|&(_, lv)| lv)
                    .or_else(|| assign.iter().find_map(|&(k, lv)| ds.functional_map(k, f).map(|m| m[lv])))
            })
            .collect();
        let combos: Vec<Vec<usize>> = if known.iter().all(Option::is_some) {
            vec![known.iter_mut().map(|k| k.unwrap()).collect()]
        } else {
            tc.observed
                .iter()
                .filter(|c| c.iter().zip(&known).all(|(a, k)| k.is_none_or(|k| k == *a)))
                .cloned()
                .collect()
        };
        if combos.is_empty() {
            return Err(Error::Inestimable(format!("no observed level of '{}' is compatible with the cell", tc.term)));
        }
        let w = 1.0 / combos.len() as f64;
        let mut weights = Vec::new();
        for combo in &combos {
            match tc.status(combo) {
                CellStatus::Column(c) => {
                    l[c] += w;
                    weights.push((c, w));
                }
                CellStatus::Reference => {}
                CellStatus::Missing => {
                    return Err(Error::Inestimable(format!(
                        "combination {} of '{}' has no data",
                        combo_label(ds, &tc.factor_idx, combo),
                        tc.term
                    )))
                }
            }
        }
        let label = if combos.len() == 1 {
            format!("{}: {}", tc.term, combo_label(ds, &tc.factor_idx, &combos[0]))
        } else {
            format!("{}: (average)", tc.term)
        };
        parts.push((label, weights));
    }
    Ok((l, parts))
}

struct Layout {
    treatment: Term,
    t_idx: Vec<usize>,
    margin: Option<(Term, Vec<usize>)>,
    /// Treatment level combos kept after filtering.
    levels: Vec<Vec<usize>>,
}

fn layout(fm: &FittedModel, treatment: &str, margin: Option<&str>, within: &[(String, String)]) -> Result<Layout> {
    let ds = &fm.dataset;
    let treatment = resolve_term(ds, treatment)?;
    let t_idx: Vec<usize> = treatment.factors().iter().map(|f| ds.factor_index(f)).collect::<Result<_>>()?;
    let margin = match margin {
        None => None,
        Some(m) => {
            let term = resolve_term(ds, m)?;
            let idx: Vec<usize> = term.factors().iter().map(|f| ds.factor_index(f)).collect::<Result<_>>()?;
            Some((term, idx))
        }
    };
    let mut levels = term_levels(ds, &t_idx);
    for (factor, level) in within {
        let fi = ds.factor_index(factor)?;
        let lv = ds.level(factor, level)?;
        let mut keep = Vec::new();
        for combo in levels {
            let val = match t_idx.iter().position(|&k| k == fi) {
                Some(pos) => combo[pos],
                None => {
                    t_idx.iter().zip(&combo).find_map(|(&k, &c)| ds.functional_map(k, fi).map(|m| m[c])).ok_or_else(
                        || Error::Invalid(format!("factor '{factor}' does not stratify treatment '{treatment}'")),
                    )?
                }
            };
            if val == lv {
                keep.push(combo);
            }
        }
        levels = keep;
    }
    if levels.is_empty() {
        return Err(Error::Invalid("no treatment levels left after filtering".into()));
    }
    Ok(Layout { treatment, t_idx, margin, levels })
}

/// Margin combinations compatible with a treatment combination on shared factors.
fn margin_cells(ds: &Dataset, lay: &Layout, t_combo: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let base: Vec<(usize, usize)> = lay.t_idx.iter().copied().zip(t_combo.iter().copied()).collect();
    let Some((_, m_idx)) = &lay.margin else {
        return vec![base];
    };
    term_levels(ds, m_idx)
        .into_iter()
        .filter(|mc| m_idx.iter().zip(mc).all(|(k, v)| base.iter().all(|(bk, bv)| bk != k || bv == v)))
        .map(|mc| {
            let mut a = base.clone();
            for (&k, &v) in m_idx.iter().zip(&mc) {
                if !a.iter().any(|(bk, _)| *bk == k) {
                    a.push((k, v));
                }
            }
            a
        })
        .collect()
}

fn contrasts(fm: &FittedModel, lay: &Layout) -> Result<Contrasts> {
    let ds = &fm.dataset;
    let p = fm.design.p();
    let mut l = DMatrix::zeros(lay.levels.len(), p);
    let mut labels = Vec::new();
    for (r, combo) in lay.levels.iter().enumerate() {
        let label = combo_label(ds, &lay.t_idx, combo);
        let cells = margin_cells(ds, lay, combo);
        if cells.is_empty() {
            return Err(Error::Inestimable(format!("no margin level compatible with '{label}'")));
        }
        let w = 1.0 / cells.len() as f64;
        for cell in &cells {
            let (cf, _) = cell_function(fm, cell)?;
            for (j, v) in cf.into_iter().enumerate() {
                l[(r, j)] += w * v;
            }
        }
        let row: Vec<f64> = l.row(r).iter().copied().collect();
        if !fm.design.is_estimable(&row) {
            return Err(Error::Inestimable(format!(
                "mean of '{label}' is not estimable (treatments not connected through shared environments?)"
            )));
        }
        labels.push(label);
    }
    Ok(Contrasts { labels, l })
}

fn analysis_scale(fm: &FittedModel) -> Scale {
    Scale::Analysis(fm.dataset.scale())
}

/// Predictions for every treatment × margin cell, empty cells included.
pub fn predicted_cells(fm: &FittedModel, treatment: &str, margin: Option<&str>) -> Result<CellTable> {
    let lay = layout(fm, treatment, margin, &[])?;
    let ds = &fm.dataset;
    let beta = &fm.beta;
    let mut cells = Vec::new();
    let mut row_means = Vec::new();
    for combo in &lay.levels {
        let t_label = combo_label(ds, &lay.t_idx, combo);
        let mcells = margin_cells(ds, &lay, combo);
        let mut sum = 0.0;
        for cell in &mcells {
            let (cf, parts) = cell_function(fm, cell)?;
            if !fm.design.is_estimable(&cf) {
                return Err(Error::Inestimable(format!("cell for '{t_label}' is not estimable")));
            }
            let prediction: f64 = cf.iter().zip(beta).map(|(a, b)| a * b).sum();
            sum += prediction;
            let margin_label = lay.margin.as_ref().map(|(_, m_idx)| {
                let mc: Vec<usize> = m_idx.iter().map(|k| cell.iter().find(|(ck, _)| ck == k).unwrap().1).collect();
                combo_label(ds, m_idx, &mc)
            });
            let components =
                parts.into_iter().map(|(lab, ws)| (lab, ws.iter().map(|&(c, w)| w * beta[c]).sum())).collect();
            cells.push(Cell { treatment: t_label.clone(), margin: margin_label, prediction, components });
        }
        row_means.push((t_label, sum / mcells.len() as f64));
    }
    Ok(CellTable {
        treatment: lay.treatment.to_string(),
        margin: lay.margin.as_ref().map(|(t, _)| t.to_string()),
        cells,
        row_means,
    })
}

fn means_from(fm: &FittedModel, lay: &Layout, c: &Contrasts) -> MeansTable {
    let beta = DVector::from_column_slice(&fm.beta);
    let est = &c.l * &beta;
    let var = &c.l * &fm.vcov_beta * c.l.transpose();
    MeansTable {
        treatment: lay.treatment.to_string(),
        margin_over: lay.margin.as_ref().map(|(t, _)| t.to_string()),
        scale: analysis_scale(fm),
        rows: c
            .labels
            .iter()
            .enumerate()
            .map(|(i, lab)| MeanRow {
                level: lab.clone(),
                estimate: est[i],
                se: Some(var[(i, i)].max(0.0).sqrt()),
                letters: None,
            })
            .collect(),
    }
}

/// Equal-weight averages of predicted cells over the margin levels.
pub fn adjusted_means(fm: &FittedModel, treatment: &str, margin: Option<&str>) -> Result<MeansTable> {
    adjusted_means_within(fm, treatment, margin, &[])
}

/// As [`adjusted_means`], keeping only treatment levels that satisfy every
/// `FACTOR = LEVEL` filter.
pub fn adjusted_means_within(
    fm: &FittedModel,
    treatment: &str,
    margin: Option<&str>,
    within: &[(String, String)],
) -> Result<MeansTable> {
    let lay = layout(fm, treatment, margin, within)?;
    let c = contrasts(fm, &lay)?;
    Ok(means_from(fm, &lay, &c))
}

pub(crate) fn t_critical(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(t.inverse_cdf(1.0 - alpha / 2.0))
}

/// All pairwise SEDs with two-sided t-tests on the containment df.
pub fn sed_matrix(
    fm: &FittedModel,
    treatment: &str,
    margin: Option<&str>,
    alpha: f64,
    within: &[(String, String)],
) -> Result<SedMatrix> {
    let tcrit = t_critical(alpha, fm.df)?;
    let dist = StudentsT::new(0.0, 1.0, fm.df as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    let lay = layout(fm, treatment, margin, within)?;
    let c = contrasts(fm, &lay)?;
    let beta = DVector::from_column_slice(&fm.beta);
    let est = &c.l * &beta;
    let k = c.labels.len();
    let mut pairs = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let d = (c.l.row(i) - c.l.row(j)).transpose();
            let var = (d.transpose() * &fm.vcov_beta * &d)[(0, 0)];
            let sed = var.max(0.0).sqrt();
            let diff = est[i] - est[j];
            let t = diff / sed;
            let p = 2.0 * (1.0 - dist.cdf(t.abs()));
            pairs.push(SedPair {
                a: c.labels[i].clone(),
                b: c.labels[j].clone(),
                diff,
                sed,
                t,
                p,
                significant: t.abs() > tcrit,
            });
        }
    }
    Ok(SedMatrix {
        treatment: lay.treatment.to_string(),
        levels: c.labels,
        estimates: est.iter().copied().collect(),
        df: fm.df,
        alpha,
        t_critical: tcrit,
        pairs,
    })
}

/// Average SED over all unordered pairs within `subset` (all levels if `None`).
pub fn mean_sed(sm: &SedMatrix, subset: Option<&[String]>) -> Result<f64> {
    let idx: Vec<usize> = match subset {
        None => (0..sm.levels.len()).collect(),
        Some(s) => s
            .iter()
            .map(|l| {
                sm.levels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::Invalid(format!("level '{l}' not in SED matrix")))
            })
            .collect::<Result<_>>()?,
    };
    if idx.len() < 2 {
        return Err(Error::Invalid("mean SED needs at least two levels".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            total += sm.sed(i, j);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Adjusted means with a letter display and the mean SED of the compared levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetteredMeans {
    pub stratum: Option<String>,
    pub means: MeansTable,
    pub mean_sed: f64,
    pub display: LetterDisplay,
}

/// Means, SEDs and letters for one set of compared levels.
pub fn lettered_means(
    fm: &FittedModel,
    treatment: &str,
    margin: Option<&str>,
    alpha: f64,
    within: &[(String, String)],
) -> Result<LetteredMeans> {
    let mut means = adjusted_means_within(fm, treatment, margin, within)?;
    let sm = sed_matrix(fm, treatment, margin, alpha, within)?;
    let display = letter_display(&sm.significance(), Some(&sm.estimates));
    for (row, letters) in means.rows.iter_mut().zip(display.letters_per_level()) {
        row.letters = Some(letters);
    }
    let mean_sed = if sm.levels.len() >= 2 { mean_sed(&sm, None)? } else { 0.0 };
    Ok(LetteredMeans { stratum: None, means, mean_sed, display })
}

/// Letter displays computed separately within each level of `group`.
pub fn stratified_letters(
    fm: &FittedModel,
    treatment: &str,
    margin: Option<&str>,
    alpha: f64,
    group: &str,
) -> Result<Vec<LetteredMeans>> {
    let levels = fm.dataset.factor(group)?.levels.clone();
    levels
        .into_iter()
        .map(|g| {
            let mut lm = lettered_means(fm, treatment, margin, alpha, &[(group.to_string(), g.clone())])?;
            lm.stratum = Some(format!("{group}={g}"));
            Ok(lm)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YearStatus {
    Fixed,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearStatusRecommendation {
    pub mean_sed_fixed: f64,
    pub mean_sed_random: f64,
    pub gamma: f64,
    pub recommended: YearStatus,
}

/// Fits both environment models and prefers the one with the smaller mean SED.
pub fn select_year_status(
    ds: &Dataset,
    spec_fixed: &ModelSpec,
    spec_random: &ModelSpec,
    treatment: &str,
    margin: Option<&str>,
) -> Result<YearStatusRecommendation> {
    let ff = fit(ds, spec_fixed)?;
    let fr = fit(ds, spec_random)?;
    let sf = mean_sed(&sed_matrix(&ff, treatment, margin, 0.05, &[])?, None)?;
    let sr = mean_sed(&sed_matrix(&fr, treatment, margin, 0.05, &[])?, None)?;
    let recommended = if sr < sf - 1e-6 { YearStatus::Random } else { YearStatus::Fixed };
    Ok(YearStatusRecommendation { mean_sed_fixed: sf, mean_sed_random: sr, gamma: fr.vc.gamma, recommended })
}

/// Arithmetic means per (pooled) treatment set within environment ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMeans {
    pub treatment: String,
    pub environment: String,
    pub row_labels: Vec<String>,
    pub range_labels: Vec<String>,
    /// `cells[row][range]`, `None` where the set has no data in the range.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl RangeMeans {
    pub fn get(&self, row: &str, range: &str) -> Option<f64> {
        let r = self.row_labels.iter().position(|l| l == row)?;
        let c = self.range_labels.iter().position(|l| l == range)?;
        self.cells[r][c]
    }
}

fn range_label(ds: &Dataset, env: usize, levels: &[usize]) -> String {
    let f = &ds.factors()[env];
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    let contiguous = sorted.windows(2).all(|w| w[1] == w[0] + 1);
    if sorted.len() > 1 && contiguous {
        format!("{}-{}", f.levels[sorted[0]], f.levels[*sorted.last().unwrap()])
    } else {
        sorted.iter().map(|&l| f.levels[l].as_str()).collect::<Vec<_>>().join(",")
    }
}

fn level_set(ds: &Dataset, factor: &str, labels: &[String]) -> Result<Vec<usize>> {
    labels.iter().map(|l| ds.level(factor, l)).collect()
}

/// Plain means of observations for each treatment set in each environment range.
pub fn range_means(
    ds: &Dataset,
    treatment: &str,
    environment: &str,
    treatment_sets: &[Vec<String>],
    ranges: &[Vec<String>],
) -> Result<RangeMeans> {
    let (ti, ei) = (ds.factor_index(treatment)?, ds.factor_index(environment)?);
    let mut range_idx = Vec::new();
    for r in ranges {
        if r.is_empty() {
            return Err(Error::Invalid("empty environment range".into()));
        }
        range_idx.push(level_set(ds, environment, r)?);
    }
    let mut cells = Vec::new();
    let mut row_labels = Vec::new();
    for set in treatment_sets {
        if set.is_empty() {
            return Err(Error::Invalid("empty treatment set".into()));
        }
        let tset = level_set(ds, treatment, set)?;
        row_labels.push(set.join(" & "));
        cells.push(
            range_idx
                .iter()
                .map(|envs| {
                    let vals: Vec<f64> = (0..ds.n_rows())
                        .filter(|&r| tset.contains(&ds.codes(ti)[r]) && envs.contains(&ds.codes(ei)[r]))
                        .map(|r| ds.response()[r])
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect(),
        );
    }
    Ok(RangeMeans {
        treatment: treatment.into(),
        environment: environment.into(),
        row_labels,
        range_labels: range_idx.iter().map(|r| range_label(ds, ei, r)).collect(),
        cells,
    })
}

fn observed_pairs(ds: &Dataset, ti: usize, ei: usize) -> Vec<Vec<bool>> {
    let mut seen = vec![vec![false; ds.factors()[ei].n_levels()]; ds.factors()[ti].n_levels()];
    for (&t, &e) in ds.codes(ti).iter().zip(ds.codes(ei)) {
        seen[t][e] = true;
    }
    seen
}

fn pooled_mean(ds: &Dataset, ti: usize, ei: usize, tset: &[usize], envs: &[usize]) -> f64 {
    let vals: Vec<f64> = (0..ds.n_rows())
        .filter(|&r| tset.contains(&ds.codes(ti)[r]) && envs.contains(&ds.codes(ei)[r]))
        .map(|r| ds.response()[r])
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Difference of pooled arithmetic means of two treatment sets within shared environments.
pub fn direct_difference(
    ds: &Dataset,
    treatment: &str,
    environment: &str,
    a: &[String],
    b: &[String],
    environments: &[String],
) -> Result<f64> {
    let (ti, ei) = (ds.factor_index(treatment)?, ds.factor_index(environment)?);
    let (sa, sb) = (level_set(ds, treatment, a)?, level_set(ds, treatment, b)?);
    let envs = level_set(ds, environment, environments)?;
    if sa.is_empty() || sb.is_empty() || envs.is_empty() {
        return Err(Error::Invalid("treatment sets and environments must be non-empty".into()));
    }
    let seen = observed_pairs(ds, ti, ei);
    for &t in sa.iter().chain(&sb) {
        for &e in &envs {
            if !seen[t][e] {
                return Err(Error::Invalid(format!(
                    "treatment '{}' is not observed in environment '{}'",
                    ds.factors()[ti].levels[t],
                    ds.factors()[ei].levels[e]
                )));
            }
        }
    }
    Ok(pooled_mean(ds, ti, ei, &sa, &envs) - pooled_mean(ds, ti, ei, &sb, &envs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectComparison {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub reference: Vec<String>,
    pub environments_a: Vec<String>,
    pub environments_b: Vec<String>,
    /// a minus reference within environments_a.
    pub direct_a: f64,
    /// b minus reference within environments_b.
    pub direct_b: f64,
    pub estimate: f64,
}

/// Indirect difference of `a` and `b` through a common reference set.
pub fn indirect_difference(
    ds: &Dataset,
    treatment: &str,
    environment: &str,
    a: &[String],
    b: &[String],
    reference: &[String],
) -> Result<IndirectComparison> {
    let (ti, ei) = (ds.factor_index(treatment)?, ds.factor_index(environment)?);
    let seen = observed_pairs(ds, ti, ei);
    let rset = level_set(ds, treatment, reference)?;
    let shared = |set: &[String]| -> Result<Vec<String>> {
        let s = level_set(ds, treatment, set)?;
        let envs: Vec<String> = (0..ds.factors()[ei].n_levels())
            .filter(|&e| s.iter().chain(&rset).all(|&t| seen[t][e]))
            .map(|e| ds.factors()[ei].levels[e].clone())
            .collect();
        if envs.is_empty() {
            return Err(Error::Invalid(format!(
                "'{}' shares no environment with the reference '{}'",
                set.join(" & "),
                reference.join(" & ")
            )));
        }
        Ok(envs)
    };
    let (ea, eb) = (shared(a)?, shared(b)?);
    let direct_a = direct_difference(ds, treatment, environment, a, reference, &ea)?;
    let direct_b = direct_difference(ds, treatment, environment, b, reference, &eb)?;
    Ok(IndirectComparison {
        a: a.to_vec(),
        b: b.to_vec(),
        reference: reference.to_vec(),
        environments_a: ea,
        environments_b: eb,
        direct_a,
        direct_b,
        estimate: direct_a - direct_b,
    })
}

/// Applies a response transformation; see [`Dataset::transform_response`].
pub fn transform_response(ds: &Dataset, kind: TransformKind) -> Result<Dataset> {
    ds.transform_response(kind)
}

/// Maps analysis-scale means back to the response scale.
///
/// Square-root means are squared and read as medians. SEs are dropped;
/// letters are kept because they come from analysis-scale tests.
pub fn back_transform(mt: &MeansTable, kind: TransformKind) -> Result<MeansTable> {
    if kind == TransformKind::None {
        return Ok(mt.clone());
    }
    if mt.scale != Scale::Analysis(kind) {
        return Err(Error::ScaleMismatch(format!("table is {:?}, cannot back-transform from {kind}", mt.scale)));
    }
    let mut out = mt.clone();
    out.scale = Scale::BackTransformed(kind);
    for r in &mut out.rows {
        r.estimate = r.estimate * r.estimate;
        r.se = None;
    }
    Ok(out)
}

/// Parses `FACTOR=LEVEL`.
pub fn parse_filter(s: &str) -> Result<(String, String)> {
    let (f, l) = s.split_once('=').ok_or_else(|| Error::Invalid(format!("expected FACTOR=LEVEL, got '{s}'")))?;
    let (f, l) = (f.trim(), l.trim());
    if f.is_empty() || l.is_empty() {
        return Err(Error::Invalid(format!("expected FACTOR=LEVEL, got '{s}'")));
    }
    Ok((f.to_string(), l.to_string()))
}

/// Letters of a display, one string per level in level order.
pub fn letters_map(ld: &LetterDisplay) -> BTreeMap<String, String> {
    ld.levels.iter().cloned().zip(ld.letters_per_level()).collect()
}
