//! Fixed-effect and variance-component estimation.
//!
//! Fixed-only models are fitted by least squares through a pivoted QR of X.
//! Models with one fittable random term use `V = σ²(I + γ ZZ')`; σ² is
//! profiled out in closed form and the REML log-likelihood is maximised over
//! `log γ` by a coarse grid followed by golden-section refinement, with the
//! boundary `γ = 0` considered explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::design::{build_design, CellStatus, Coding, DesignMatrices};
use crate::error::{Error, Result};
use crate::formula::ModelSpec;
use crate::linalg::PivotedQr;

const LOG_GAMMA_MIN: f64 = -18.420680743952367; // ln 1e-8
const LOG_GAMMA_MAX: f64 = 18.420680743952367; // ln 1e8
const GRID_POINTS: usize = 41;
const MAX_ITER: usize = 200;
const LOGLIK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_residual: f64,
    pub sigma2_random: f64,
    /// sigma2_random / sigma2_residual.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Reml,
}

/// How `vcov_beta` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    /// `(X'V⁻¹X)⁻` at the estimated variance components.
    Model,
    /// Kenward-Roger small-sample adjustment using the observed REML information.
    KenwardRoger,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub dataset: Dataset,
    pub design: DesignMatrices,
    pub method: Method,
    pub beta: Vec<f64>,
    /// Covariance of `beta` used for inference.
    pub vcov_beta: DMatrix<f64>,
    /// `(X'V⁻¹X)⁻` without small-sample adjustment.
    pub vcov_beta_unadjusted: DMatrix<f64>,
    pub covariance: Covariance,
    pub vc: VarianceComponents,
    /// Containment degrees of freedom, n − rank([X Z]).
    pub df: usize,
    pub reml_loglik: Option<f64>,
    pub converged: bool,
    /// The random variance sits on the boundary γ = 0.
    pub boundary: bool,
}

/// One row of the effect table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub effect: String,
    pub estimate: f64,
    pub status: EffectStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectStatus {
    Estimated,
    Reference,
    Aliased,
}

impl FittedModel {
    /// Effect estimates in declaration order, reference levels shown as zero.
    pub fn effects(&self) -> Vec<EffectRow> {
        let ds = &self.dataset;
        let aliased = |c: usize| self.design.aliased.contains(&self.design.x_labels[c]);
        let mut out = vec![EffectRow {
            effect: "Intercept".into(),
            estimate: self.beta[0],
            status: if aliased(0) { EffectStatus::Aliased } else { EffectStatus::Estimated },
        }];
        for tc in &self.design.fixed {
            let combos: Vec<Vec<usize>> = if tc.coding == Coding::Hierarchical && tc.factor_idx.len() == 1 {
                (0..ds.factors()[tc.factor_idx[0]].n_levels()).map(|l| vec![l]).collect()
            } else {
                tc.observed.clone()
            };
            for combo in combos {
                let label = format!("{}: {}", tc.term, crate::design::combo_label(ds, &tc.factor_idx, &combo));
                match tc.status(&combo) {
                    CellStatus::Column(c) => out.push(EffectRow {
                        effect: label,
                        estimate: self.beta[c],
                        status: if aliased(c) { EffectStatus::Aliased } else { EffectStatus::Estimated },
                    }),
                    CellStatus::Reference => {
                        out.push(EffectRow { effect: label, estimate: 0.0, status: EffectStatus::Reference })
                    }
                    CellStatus::Missing => {}
                }
            }
        }
        out
    }

    pub fn residuals(&self) -> DVector<f64> {
        let y = DVector::from_column_slice(self.dataset.response());
        let b = DVector::from_column_slice(&self.beta);
        y - &self.design.x * b
    }
}

fn check_factors(ds: &Dataset, spec: &ModelSpec) -> Result<()> {
    for f in spec.factors() {
        ds.factor_index(&f)?;
    }
    Ok(())
}

fn containment_df(design: &DesignMatrices) -> Result<usize> {
    let n = design.n();
    let rank = if design.z.ncols() == 0 {
        design.rank
    } else {
        let mut xz = DMatrix::zeros(n, design.p() + design.z.ncols());
        xz.columns_mut(0, design.p()).copy_from(&design.x);
        xz.columns_mut(design.p(), design.z.ncols()).copy_from(&design.z);
        PivotedQr::new(&xz).rank()
    };
    if n <= rank {
        return Err(Error::Model(format!("no residual degrees of freedom (n = {n}, rank = {rank})")));
    }
    Ok(n - rank)
}

/// Fits a model with no fittable random term by least squares.
pub fn fit_ols(ds: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    check_factors(ds, spec)?;
    let design = build_design(ds, spec)?;
    if let Some(r) = design.fittable_random() {
        return Err(Error::Model(format!("random term '{}' requires REML fitting", r.term)));
    }
    let n = design.n();
    if n <= design.rank {
        return Err(Error::Model(format!("n = {n} does not exceed rank(X) = {}", design.rank)));
    }
    let qr = PivotedQr::new(&design.x);
    let y = DVector::from_column_slice(ds.response());
    let beta = qr.solve(&y);
    let resid = &y - &design.x * &beta;
    let df = n - qr.rank();
    let s2 = resid.norm_squared() / df as f64;
    let vcov_beta = qr.gram_ginv() * s2;
    Ok(FittedModel {
        spec: spec.clone(),
        dataset: ds.clone(),
        df: containment_df(&design)?,
        design,
        method: Method::Ols,
        beta: beta.iter().copied().collect(),
        vcov_beta_unadjusted: vcov_beta.clone(),
        vcov_beta,
        covariance: Covariance::Model,
        vc: VarianceComponents { sigma2_residual: s2, sigma2_random: 0.0, gamma: 0.0 },
        reml_loglik: None,
        converged: true,
        boundary: false,
    })
}

struct GlsEval {
    loglik: f64,
    /// Derivative of `loglik` with respect to `ln γ`.
    score: f64,
    beta: DVector<f64>,
    ginv: DMatrix<f64>,
    s2: f64,
}

/// The mixed-model problem rotated by the eigenvectors of `ZZ' = UDU'`, so
/// that `H = I + γZZ'` becomes `diag(1 + γd)` for every `γ`.
struct Spectral {
    x: DMatrix<f64>,
    y: DVector<f64>,
    d: Vec<f64>,
    rank: usize,
}

impl Spectral {
    fn new(design: &DesignMatrices, y: &DVector<f64>) -> Self {
        let eig = (&design.z * design.z.transpose()).symmetric_eigen();
        let ut = eig.eigenvectors.transpose();
        Spectral {
            x: &ut * &design.x,
            y: &ut * y,
            d: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            rank: design.rank,
        }
    }

    fn eval(&self, gamma: f64) -> Result<GlsEval> {
        let n = self.y.len();
        let w: Vec<f64> = self.d.iter().map(|d| 1.0 / (1.0 + gamma * d)).collect();
        let log_det_h: f64 = w.iter().map(|w| -w.ln()).sum();
        if !log_det_h.is_finite() {
            return Err(Error::SingularV);
        }
        let mut xw = self.x.clone();
        let mut yw = self.y.clone();
        for (i, wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            xw.row_mut(i).scale_mut(s);
            yw[i] *= s;
        }
        let qr = PivotedQr::new(&xw);
        let r = qr.rank();
        if r != self.rank {
            return Err(Error::SingularV);
        }
        let beta = qr.solve(&yw);
        let resid = &yw - &xw * &beta;
        let rss = resid.norm_squared();
        let dfr = (n - r) as f64;
        let s2 = rss / dfr;
        let loglik =
            -0.5 * (dfr * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0) + log_det_h + 2.0 * qr.log_abs_det_r());
        // dℓ/dγ = -½[tr(P̃D) - (n-r) y'P̃DP̃y / y'P̃y] with leverages h_ii of the whitened X
        let ginv = qr.gram_ginv();
        let (mut trace, mut quad) = (0.0, 0.0);
        for i in 0..n {
            let row = xw.row(i);
            let h = (row * &ginv * row.transpose())[(0, 0)];
            trace += w[i] * self.d[i] * (1.0 - h);
            quad += w[i] * self.d[i] * resid[i] * resid[i];
        }
        let score = -0.5 * gamma * (trace - dfr * quad / rss);
        Ok(GlsEval { loglik, score, beta, ginv, s2 })
    }
}

fn gls_at(design: &DesignMatrices, y: &DVector<f64>, gamma: f64) -> Result<GlsEval> {
    Spectral::new(design, y).eval(gamma)
}

fn mixed_design(ds: &Dataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    check_factors(ds, spec)?;
    let design = build_design(ds, spec)?;
    if design.fittable_random().is_none() {
        return Err(Error::Model("model has no fittable random term; use least squares".into()));
    }
    if design.n() <= design.rank {
        return Err(Error::Model(format!("n = {} does not exceed rank(X) = {}", design.n(), design.rank)));
    }
    Ok(design)
}

/// Profiled REML log-likelihood at a fixed variance ratio `gamma`.
pub fn loglik_reml(ds: &Dataset, spec: &ModelSpec, gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Invalid(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let design = mixed_design(ds, spec)?;
    let y = DVector::from_column_slice(ds.response());
    Ok(gls_at(&design, &y, gamma)?.loglik)
}

/// Maximises `f` over `[lo, hi]` by golden-section search.
fn golden_max<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut best = fc.max(fd);
    for _ in 0..MAX_ITER {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
        }
        let new_best = fc.max(fd);
        let change = (new_best - best).abs();
        best = best.max(new_best);
        if change < LOGLIK_TOL && (fc - fd).abs() < LOGLIK_TOL && hi - lo < 1e-6 {
            return Ok(if fc >= fd { (c, fc) } else { (d, fd) });
        }
    }
    Err(Error::NoConvergence(MAX_ITER))
}

/// Bisects the score near a golden-section optimum; keeps the input when the
/// score does not change sign there or the likelihood does not improve.
fn polish(sp: &Spectral, t: f64, ll: f64) -> Result<(f64, f64)> {
    let score = |t: f64| sp.eval(t.exp()).map(|e| e.score);
    let (mut lo, mut hi) = (t - 1e-4, t + 1e-4);
    if !(score(lo)? > 0.0 && score(hi)? < 0.0) {
        return Ok((t, ll));
    }
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if score(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let tm = 0.5 * (lo + hi);
    let lm = sp.eval(tm.exp())?.loglik;
    Ok(if lm >= ll - 1e-9 { (tm, lm) } else { (t, ll) })
}

/// Fits a model with one fittable random term by REML and GLS.
pub fn fit_reml(ds: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    let design = mixed_design(ds, spec)?;
    let y = DVector::from_column_slice(ds.response());
    let sp = Spectral::new(&design, &y);
    let ll = |t: f64| sp.eval(t.exp()).map(|e| e.loglik);

    let step = (LOG_GAMMA_MAX - LOG_GAMMA_MIN) / (GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..GRID_POINTS)
        .map(|i| {
            let t = LOG_GAMMA_MIN + step * i as f64;
            ll(t).map(|v| (t, v))
        })
        .collect::<Result<_>>()?;
    let k = grid.iter().enumerate().fold(0, |best, (i, g)| if g.1 > grid[best].1 { i } else { best });
    let lo = grid[k.saturating_sub(1)].0;
    let hi = grid[(k + 1).min(GRID_POINTS - 1)].0;
    let (t_opt, ll_opt) = golden_max(ll, lo, hi)?;
    let (t_opt, ll_opt) = if grid[k].1 > ll_opt { grid[k] } else { (t_opt, ll_opt) };
    let (t_opt, ll_opt) = polish(&sp, t_opt, ll_opt)?;

    let at_zero = sp.eval(0.0)?;
    let (gamma, eval, boundary) = if at_zero.loglik >= ll_opt {
        (0.0, at_zero, true)
    } else {
        let g = t_opt.exp();
        (g, sp.eval(g)?, false)
    };
    let vc = VarianceComponents { sigma2_residual: eval.s2, sigma2_random: gamma * eval.s2, gamma };
    let phi = eval.ginv * eval.s2;
    // at the boundary only the residual variance is free and the adjustment vanishes
    let adjusted = if boundary { None } else { kenward_roger(&design, &y, &vc, &phi) };
    let (vcov_beta, covariance) = match adjusted {
        Some(a) => (a, Covariance::KenwardRoger),
        None => (phi.clone(), Covariance::Model),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        dataset: ds.clone(),
        df: containment_df(&design)?,
        design,
        method: Method::Reml,
        beta: eval.beta.iter().copied().collect(),
        vcov_beta,
        vcov_beta_unadjusted: phi,
        covariance,
        vc,
        reml_loglik: Some(eval.loglik),
        converged: true,
        boundary,
    })
}

/// Kenward-Roger adjusted covariance `Φ + 2Φ[Σ w_ij (Q_ij − P_i Φ P_j)]Φ` for
/// `V = σ²_r ZZ' + σ²_e I`, with `w` the inverse observed REML information
/// (expected information if the observed one is not positive definite).
fn kenward_roger(
    design: &DesignMatrices,
    y: &DVector<f64>,
    vc: &VarianceComponents,
    phi: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = design.n();
    let zzt = &design.z * design.z.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let v = &zzt * vc.sigma2_random + &eye * vc.sigma2_residual;
    let vi = v.cholesky()?.inverse();
    let vix = &vi * &design.x;
    let proj = &vi - &vix * phi * vix.transpose();
    let derivs = [zzt, eye];
    let pv: Vec<DMatrix<f64>> = derivs.iter().map(|d| &proj * d).collect();
    let py = &proj * y;
    let mut expected = DMatrix::zeros(2, 2);
    let mut observed = DMatrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let tr = 0.5 * (&pv[i] * &pv[j]).trace();
            expected[(i, j)] = tr;
            observed[(i, j)] = (py.transpose() * &derivs[i] * &pv[j] * &py)[(0, 0)] - tr;
        }
    }
    let w = observed.cholesky().or_else(|| expected.cholesky())?.inverse();
    let pi: Vec<DMatrix<f64>> = derivs.iter().map(|d| vix.transpose() * d * &vix).collect();
    let mut s = DMatrix::zeros(phi.nrows(), phi.ncols());
    for i in 0..2 {
        for j in 0..2 {
            let q = vix.transpose() * &derivs[i] * &vi * &derivs[j] * &vix;
            s += (q - &pi[i] * phi * &pi[j]) * w[(i, j)];
        }
    }
    let adj = phi + phi * s * phi * 2.0;
    adj.iter().all(|x| x.is_finite()).then_some(adj)
}

/// Fits by least squares or REML depending on the random structure.
pub fn fit(ds: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    check_factors(ds, spec)?;
    let design = build_design(ds, spec)?;
    if design.fittable_random().is_some() {
        fit_reml(ds, spec)
    } else {
        fit_ols(ds, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn toy_fit(f: &str) -> FittedModel {
        let ds = Dataset::builtin_toy();
        fit(&ds, &parse_formula(f, &ds.factor_names()).unwrap()).unwrap()
    }

    #[test]
    fn model_three_effects() {
        let fm = toy_fit("S + Y : S.Y");
        let want = [63.0, -4.125, 35.1, -0.1, -0.875, 4.0, -6.75, -9.5, -8.0, -9.25];
        for (b, w) in fm.beta.iter().zip(want) {
            assert!((b - w).abs() < 1e-9, "{b} vs {w}");
        }
        assert_eq!(fm.df, 10);
        assert_eq!(fm.method, Method::Ols);
        let eff = fm.effects();
        assert_eq!(eff.len(), 12);
        assert_eq!(eff[6].effect, "S: 6");
        assert_eq!(eff[6].status, EffectStatus::Reference);
    }

    #[test]
    fn model_one_is_cell_means() {
        let fm = toy_fit("S : S.Y");
        let means = [50.5, 91.4, 56.2, 53.75, 67.0, 63.0];
        for (s, m) in means.iter().enumerate() {
            let est = fm.beta[0] + if s < 5 { fm.beta[s + 1] } else { 0.0 };
            assert!((est - m).abs() < 1e-9);
        }
        assert_eq!(fm.df, 14);
        // pooled residual variance: SS within systems / 14
        assert!((fm.vc.sigma2_residual - 169.75 / 14.0).abs() < 1e-10);
    }

    #[test]
    fn intercept_only_is_grand_mean() {
        let fm = toy_fit("1");
        let mean = Dataset::builtin_toy().response().iter().sum::<f64>() / 20.0;
        assert!((fm.beta[0] - mean).abs() < 1e-10);
    }

    #[test]
    fn residuals_orthogonal() {
        for f in ["S + Y", "S", "S : Y"] {
            let fm = toy_fit(f);
            if fm.method == Method::Ols {
                let r = fm.residuals();
                let yn = DVector::from_column_slice(fm.dataset.response()).norm();
                assert!((fm.design.x.transpose() * r).amax() < 1e-8 * yn);
            }
        }
    }

    #[test]
    fn ols_rejects_random_and_reml_rejects_fixed() {
        let ds = Dataset::builtin_toy();
        let m2 = parse_formula("S : Y", &ds.factor_names()).unwrap();
        assert!(matches!(fit_ols(&ds, &m2), Err(Error::Model(_))));
        let m3 = parse_formula("S + Y", &ds.factor_names()).unwrap();
        assert!(matches!(fit_reml(&ds, &m3), Err(Error::Model(_))));
    }

    #[test]
    fn saturated_model_rejected() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S + Y + S.Y", &ds.factor_names()).unwrap();
        assert!(matches!(fit_ols(&ds, &spec), Err(Error::Model(_))));
    }

    #[test]
    fn reml_model_two() {
        let fm = toy_fit("S : Y + S.Y");
        assert_eq!(fm.method, Method::Reml);
        assert!(!fm.boundary);
        assert_eq!(fm.df, 10);
        let vc = fm.vc;
        assert!(((vc.sigma2_random / vc.sigma2_residual) - vc.gamma).abs() <= 1e-12 * vc.gamma);
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S : Y + S.Y", &ds.factor_names()).unwrap();
        let at = loglik_reml(&ds, &spec, vc.gamma).unwrap();
        assert!((at - fm.reml_loglik.unwrap()).abs() < 1e-12);
        assert!(at >= loglik_reml(&ds, &spec, 0.5 * vc.gamma).unwrap());
        assert!(at >= loglik_reml(&ds, &spec, 2.0 * vc.gamma).unwrap());
        let sym = (&fm.vcov_beta - fm.vcov_beta.transpose()).amax();
        assert!(sym < 1e-12);
        assert!(fm.vcov_beta.clone().cholesky().is_some());
    }

    #[test]
    fn score_matches_finite_difference() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S : Y", &ds.factor_names()).unwrap();
        let design = build_design(&ds, &spec).unwrap();
        let y = DVector::from_column_slice(ds.response());
        for g in [0.1, 1.0, 3.0, 20.0] {
            let h = 1e-5;
            let up = gls_at(&design, &y, g * f64::exp(h)).unwrap().loglik;
            let down = gls_at(&design, &y, g * f64::exp(-h)).unwrap().loglik;
            let fd = (up - down) / (2.0 * h);
            let sc = gls_at(&design, &y, g).unwrap().score;
            assert!((sc - fd).abs() < 1e-6 * fd.abs().max(1.0), "{g}: {sc} vs {fd}");
        }
        let fm = fit_reml(&ds, &spec).unwrap();
        assert!(gls_at(&design, &y, fm.vc.gamma).unwrap().score.abs() < 1e-9);
    }

    #[test]
    fn gls_at_zero_equals_ols() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S : Y", &ds.factor_names()).unwrap();
        let design = build_design(&ds, &spec).unwrap();
        let y = DVector::from_column_slice(ds.response());
        let g = gls_at(&design, &y, 0.0).unwrap();
        let ols = fit_ols(&ds, &parse_formula("S", &ds.factor_names()).unwrap()).unwrap();
        for (a, b) in g.beta.iter().zip(&ols.beta) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        let v = g.ginv * g.s2;
        assert!((&v - &ols.vcov_beta).amax() <= 1e-10 * ols.vcov_beta.amax());
    }

    #[test]
    fn loglik_at_zero_matches_ols_restricted_likelihood() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S : Y", &ds.factor_names()).unwrap();
        let ols = fit_ols(&ds, &parse_formula("S", &ds.factor_names()).unwrap()).unwrap();
        let x = &ols.design.x;
        let rss = ols.residuals().norm_squared();
        let (n, p) = (20.0, 6.0);
        let s2 = rss / (n - p);
        let xtx = x.transpose() * x;
        let expected = -0.5 * ((n - p) * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0) + xtx.determinant().ln());
        let got = loglik_reml(&ds, &spec, 0.0).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!(loglik_reml(&ds, &spec, -1.0).is_err());
    }

    #[test]
    fn zero_between_year_spread_hits_boundary() {
        // balanced, year totals identical after removing system effects
        let vals = [[10.0, 12.0, 11.0], [22.0, 20.0, 21.0], [31.0, 31.0, 31.0]];
        let mut rows = Vec::new();
        for (s, r) in vals.iter().enumerate() {
            for (y, v) in r.iter().enumerate() {
                rows.push((vec![format!("s{s}"), format!("y{y}")], *v));
            }
        }
        let ds = Dataset::from_rows(&["S", "Y"], &rows, "v").unwrap();
        let fm = fit_reml(&ds, &parse_formula("S : Y", &ds.factor_names()).unwrap()).unwrap();
        assert!(fm.boundary);
        assert_eq!(fm.vc.sigma2_random, 0.0);
    }
}
