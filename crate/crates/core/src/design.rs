//! Design matrices under corner-point (last level = reference) coding.
//!
//! Fixed terms are coded one of two ways:
//!
//! * hierarchical, when every lower-order term made from the term's factors
//!   is also fixed (e.g. `S.Y` in `S + Y + S.Y`): columns for observed
//!   combinations with no reference level in any factor;
//! * composite, otherwise (e.g. `S.P.C.V`, or `G.S` from `G/S`): the term is
//!   treated as one factor whose levels are the observed combinations, the
//!   last observed combination being the reference.
//!
//! Any remaining aliasing is found by pivoted QR and reported; estimability
//! of linear functions is checked against the null space of X.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::formula::{ModelSpec, Term};
use crate::linalg::PivotedQr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Hierarchical,
    Composite,
}

/// How a level combination of a fixed term enters the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Column(usize),
    /// Effect constrained to zero.
    Reference,
    /// No column exists for an unobserved combination.
    Missing,
}

#[derive(Debug, Clone)]
pub struct TermCoding {
    pub term: Term,
    /// Dataset factor indices, in term order.
    pub factor_idx: Vec<usize>,
    pub coding: Coding,
    /// Observed level combinations, lexicographic.
    pub observed: Vec<Vec<usize>>,
    columns: BTreeMap<Vec<usize>, usize>,
    reference: Option<Vec<usize>>,
    ref_levels: Vec<usize>,
}

impl TermCoding {
    pub fn status(&self, combo: &[usize]) -> CellStatus {
        if let Some(&c) = self.columns.get(combo) {
            return CellStatus::Column(c);
        }
        match self.coding {
            Coding::Hierarchical => {
                if combo.iter().zip(&self.ref_levels).any(|(a, r)| a == r) {
                    CellStatus::Reference
                } else {
                    CellStatus::Missing
                }
            }
            Coding::Composite => {
                if self.reference.as_deref() == Some(combo) {
                    CellStatus::Reference
                } else {
                    CellStatus::Missing
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomTermInfo {
    pub term: Term,
    pub factor_idx: Vec<usize>,
    /// Levels index observations one-to-one; the term is the residual.
    pub residual_alias: bool,
    /// Z column range for non-aliased terms.
    pub columns: std::ops::Range<usize>,
}

#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub x_labels: Vec<String>,
    pub z_labels: Vec<String>,
    pub fixed: Vec<TermCoding>,
    pub random: Vec<RandomTermInfo>,
    pub rank: usize,
    /// Labels of X columns aliased with earlier ones.
    pub aliased: Vec<String>,
    /// Null-space basis of X (p × (p − rank)); empty when X has full rank.
    pub null_space: DMatrix<f64>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn fittable_random(&self) -> Option<&RandomTermInfo> {
        self.random.iter().find(|r| !r.residual_alias)
    }

    /// True when `l'β` is estimable, i.e. `l` is orthogonal to the null space of X.
    pub fn is_estimable(&self, l: &[f64]) -> bool {
        if self.null_space.ncols() == 0 {
            return true;
        }
        let norm = l.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        (0..self.null_space.ncols()).all(|j| {
            let d: f64 = l.iter().enumerate().map(|(i, v)| v * self.null_space[(i, j)]).sum();
            d.abs() <= 1e-8 * norm
        })
    }

    /// Writes X then Z with column labels as comma-separated text.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = self
            .x_labels
            .iter()
            .map(|l| format!("X[{l}]"))
            .chain(self.z_labels.iter().map(|l| format!("Z[{l}]")))
            .collect();
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.n() {
            let rec: Vec<String> = self.x.row(i).iter().chain(self.z.row(i).iter()).map(|v| format!("{v}")).collect();
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn combo_of(ds: &Dataset, idx: &[usize], row: usize) -> Vec<usize> {
    idx.iter().map(|&k| ds.codes(k)[row]).collect()
}

pub(crate) fn combo_label(ds: &Dataset, idx: &[usize], combo: &[usize]) -> String {
    idx.iter().zip(combo).map(|(&k, &l)| ds.factors()[k].levels[l].as_str()).collect::<Vec<_>>().join(".")
}

fn term_indices(ds: &Dataset, term: &Term) -> Result<Vec<usize>> {
    term.factors().iter().map(|f| ds.factor_index(f)).collect()
}

/// True when every proper non-empty sub-product of `term` is a fixed term.
fn is_hierarchical(spec: &ModelSpec, term: &Term) -> bool {
    let k = term.len();
    if k == 1 {
        return true;
    }
    (1..(1u32 << k) - 1).all(|mask| {
        let sub: Vec<String> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| term.factors()[i].clone()).collect();
        spec.fixed.iter().any(|t| t.len() == sub.len() && sub.iter().all(|f| t.contains(f)))
    })
}

/// Builds X and Z for `spec` on `ds`.
pub fn build_design(ds: &Dataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    for f in spec.factors() {
        ds.factor_index(&f)?;
    }
    let n = ds.n_rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut x_labels = vec!["Intercept".to_string()];
    let mut fixed = Vec::new();

    for term in &spec.fixed {
        let idx = term_indices(ds, term)?;
        let mut observed: Vec<Vec<usize>> = (0..n).map(|r| combo_of(ds, &idx, r)).collect();
        observed.sort();
        observed.dedup();
        let ref_levels: Vec<usize> = idx.iter().map(|&k| ds.factors()[k].n_levels() - 1).collect();
        let coding = if is_hierarchical(spec, term) { Coding::Hierarchical } else { Coding::Composite };
        let (coded, reference): (Vec<Vec<usize>>, Option<Vec<usize>>) = match coding {
            Coding::Hierarchical if term.len() == 1 => {
                // all declared levels but the last, observed or not
                ((0..ref_levels[0]).map(|l| vec![l]).collect(), Some(vec![ref_levels[0]]))
            }
            Coding::Hierarchical => {
                (observed.iter().filter(|c| c.iter().zip(&ref_levels).all(|(a, r)| a != r)).cloned().collect(), None)
            }
            Coding::Composite => {
                let mut v = observed.clone();
                let last = v.pop();
                (v, last)
            }
        };
        let mut columns = BTreeMap::new();
        for combo in coded {
            let c = cols.len();
            let col: Vec<f64> = (0..n).map(|r| if combo_of(ds, &idx, r) == combo { 1.0 } else { 0.0 }).collect();
            cols.push(col);
            x_labels.push(format!("{term}: {}", combo_label(ds, &idx, &combo)));
            columns.insert(combo, c);
        }
        fixed.push(TermCoding {
            term: term.clone(),
            factor_idx: idx,
            coding,
            observed,
            columns,
            reference,
            ref_levels,
        });
    }

    let mut zcols: Vec<Vec<f64>> = Vec::new();
    let mut z_labels = Vec::new();
    let mut random = Vec::new();
    for term in &spec.random {
        let idx = term_indices(ds, term)?;
        let per_row: Vec<Vec<usize>> = (0..n).map(|r| combo_of(ds, &idx, r)).collect();
        let mut levels = per_row.clone();
        levels.sort();
        levels.dedup();
        let residual_alias = levels.len() == n;
        let start = zcols.len();
        if !residual_alias {
            for combo in &levels {
                zcols.push(per_row.iter().map(|c| if c == combo { 1.0 } else { 0.0 }).collect());
                z_labels.push(format!("{term}: {}", combo_label(ds, &idx, combo)));
            }
        }
        random.push(RandomTermInfo {
            term: term.clone(),
            factor_idx: idx,
            residual_alias,
            columns: start..zcols.len(),
        });
    }
    let fittable: Vec<String> = random.iter().filter(|r| !r.residual_alias).map(|r| r.term.to_string()).collect();
    if fittable.len() > 1 {
        return Err(Error::UnsupportedRandom(format!(
            "at most one non-residual random term can be fitted, got {}",
            fittable.join(", ")
        )));
    }

    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let z = DMatrix::from_fn(n, zcols.len(), |i, j| zcols[j][i]);
    let qr = PivotedQr::new(&x);
    let aliased = qr.aliased_columns().into_iter().map(|j| x_labels[j].clone()).collect();
    Ok(DesignMatrices {
        rank: qr.rank(),
        null_space: qr.null_space(),
        x,
        z,
        x_labels,
        z_labels,
        fixed,
        random,
        aliased,
    })
}

/// Partition of treatment levels into groups linked through shared environments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub treatment: String,
    pub environment: String,
    pub components: Vec<Vec<String>>,
}

impl ConnectivityReport {
    pub fn is_connected(&self) -> bool {
        self.components.len() == 1
    }
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Union-find over the bipartite treatment–environment incidence.
pub fn connectivity(ds: &Dataset, treatment: &str, environment: &str) -> Result<ConnectivityReport> {
    let (ti, ei) = (ds.factor_index(treatment)?, ds.factor_index(environment)?);
    let nt = ds.factors()[ti].n_levels();
    let ne = ds.factors()[ei].n_levels();
    let mut parent: Vec<usize> = (0..nt + ne).collect();
    for (&t, &e) in ds.codes(ti).iter().zip(ds.codes(ei)) {
        let (a, b) = (find(&mut parent, t), find(&mut parent, nt + e));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for t in 0..nt {
        let root = find(&mut parent, t);
        groups.entry(root).or_default().push(ds.factors()[ti].levels[t].clone());
    }
    let mut components: Vec<Vec<String>> = groups.into_values().collect();
    components.sort_by_key(|c| ds.factors()[ti].level_index(&c[0]));
    Ok(ConnectivityReport { treatment: treatment.into(), environment: environment.into(), components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn toy_design(f: &str) -> DesignMatrices {
        let ds = Dataset::builtin_toy();
        build_design(&ds, &parse_formula(f, &ds.factor_names()).unwrap()).unwrap()
    }

    #[test]
    fn model_three_columns() {
        let d = toy_design("S + Y : S.Y");
        assert_eq!(d.p(), 10);
        assert_eq!(d.rank, 10);
        assert!(d.aliased.is_empty());
        assert_eq!(d.z.ncols(), 0);
        assert!(d.random[0].residual_alias);
        assert_eq!(d.x_labels[1], "S: 1");
        assert_eq!(d.x_labels[9], "Y: 2023");
        for i in 0..d.n() {
            assert_eq!(d.x[(i, 0)], 1.0);
            let s: f64 = (1..6).map(|j| d.x[(i, j)]).sum();
            assert!(s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn model_one_residual_alias() {
        let d = toy_design("S : S.Y");
        assert_eq!(d.z.ncols(), 0);
        assert!(d.random[0].residual_alias);
        assert!(d.fittable_random().is_none());
    }

    #[test]
    fn model_two_year_block() {
        let d = toy_design("S : Y + S.Y");
        assert_eq!(d.z.ncols(), 5);
        assert_eq!(d.p(), 6);
        assert_eq!(d.fittable_random().unwrap().term.to_string(), "Y");
        for i in 0..d.n() {
            assert_eq!(d.z.row(i).sum(), 1.0);
        }
    }

    #[test]
    fn nested_group_is_aliased_once() {
        let ds = Dataset::builtin_toy();
        let map =
            [("1", "ended"), ("2", "current"), ("3", "current"), ("4", "ended"), ("5", "current"), ("6", "current")]
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect();
        let ds = ds.derive_factor("G", "S", &map).unwrap();
        let spec = parse_formula("G/S + Y", &ds.factor_names()).unwrap();
        let d = build_design(&ds, &spec).unwrap();
        assert_eq!(d.fixed[1].coding, Coding::Composite);
        assert_eq!(d.p(), 11);
        assert_eq!(d.rank, 10);
        assert_eq!(d.aliased.len(), 1);
    }

    #[test]
    fn interaction_coding_hierarchical() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S + Y + S.Y", &ds.factor_names()).unwrap();
        let d = build_design(&ds, &spec).unwrap();
        assert_eq!(d.fixed[2].coding, Coding::Hierarchical);
        // observed non-reference combinations: systems 1-4 in 2020-2023
        assert_eq!(d.p(), 1 + 5 + 4 + 16);
        assert_eq!(d.fixed[2].status(&[0, 4]), CellStatus::Reference);
        assert_eq!(d.fixed[2].status(&[4, 0]), CellStatus::Missing);
        assert_eq!(d.rank, 20);
    }

    #[test]
    fn two_random_terms_rejected() {
        let rows: Vec<(Vec<&str>, f64)> =
            (0..8).map(|i| (vec![["a", "b"][i % 2], ["x", "y"][(i / 2) % 2]], i as f64)).collect();
        let ds = Dataset::from_rows(&["A", "B"], &rows, "v").unwrap();
        let spec = parse_formula("1 : A + B", &ds.factor_names()).unwrap();
        assert!(matches!(build_design(&ds, &spec), Err(Error::UnsupportedRandom(_))));
    }

    #[test]
    fn unknown_factor() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S + Q", &["S", "Q"]).unwrap();
        assert!(matches!(build_design(&ds, &spec), Err(Error::UnknownFactor(_))));
    }

    #[test]
    fn connectivity_toy() {
        let ds = Dataset::builtin_toy();
        let c = connectivity(&ds, "S", "Y").unwrap();
        assert!(c.is_connected());
        assert_eq!(c.components[0].len(), 6);

        let s = ds.factor_index("S").unwrap();
        let reduced = ds.filter_rows(|r| !matches!(ds.codes(s)[r], 1 | 2)).unwrap();
        let c = connectivity(&reduced, "S", "Y").unwrap();
        assert_eq!(c.components, vec![vec!["1".to_string(), "4".into()], vec!["5".into(), "6".into()]]);

        let one = Dataset::from_rows(&["T", "E"], &[(vec!["t", "e"], 1.0)], "v").unwrap();
        assert_eq!(connectivity(&one, "T", "E").unwrap().components, vec![vec!["t".to_string()]]);
    }

    #[test]
    fn row_permutation_permutes_x() {
        let ds = Dataset::builtin_toy();
        let spec = parse_formula("S + Y", &ds.factor_names()).unwrap();
        let d = build_design(&ds, &spec).unwrap();
        let order: Vec<usize> = (0..ds.n_rows()).rev().collect();
        let rows: Vec<(Vec<String>, f64)> = order
            .iter()
            .map(|&r| {
                let o = ds.observation(r);
                (vec![o.levels["S"].clone(), o.levels["Y"].clone()], o.response)
            })
            .collect();
        let names = ds.factor_names();
        let permuted = Dataset::from_rows(&names, &rows, "value").unwrap();
        // reversing rows reverses first-appearance order; restore the original level order
        let permuted = permuted
            .reorder_levels("S", &ds.factor("S").unwrap().levels)
            .unwrap()
            .reorder_levels("Y", &ds.factor("Y").unwrap().levels)
            .unwrap();
        let dp = build_design(&permuted, &spec).unwrap();
        assert_eq!(dp.x_labels, d.x_labels);
        for (i, &r) in order.iter().enumerate() {
            assert_eq!(dp.x.row(i), d.x.row(r));
        }
    }
}
