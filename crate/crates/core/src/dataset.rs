//! Factor-labelled observation store.
//!
//! Rows are kept column-wise: one level-index vector per factor plus the
//! response vector. Level order is the order of first appearance, so the
//! last-seen level of each factor acts as the reference level unless a
//! factor is explicitly relevelled.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
}

impl Factor {
    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Response transformation applied before analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    None,
    Sqrt,
}

impl std::str::FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TransformKind::None),
            "sqrt" => Ok(TransformKind::Sqrt),
            other => Err(Error::Invalid(format!("unknown transform '{other}'"))),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::None => "none",
            TransformKind::Sqrt => "sqrt",
        })
    }
}

/// One observation as a label map; built on demand from the columnar store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub levels: BTreeMap<String, String>,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    factors: Vec<Factor>,
    codes: Vec<Vec<usize>>,
    response: Vec<f64>,
    response_name: String,
    scale: TransformKind,
}

/// Result of reading a delimited file.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Rows skipped because the response field was empty.
    pub skipped_empty: usize,
}

impl Dataset {
    /// Builds a dataset from label rows. Level order is first appearance.
    pub fn from_rows<F: AsRef<str>, L: AsRef<str>>(
        factor_names: &[F],
        rows: &[(Vec<L>, f64)],
        response_name: &str,
    ) -> Result<Self> {
        let mut factors: Vec<Factor> = Vec::new();
        for name in factor_names {
            let name = name.as_ref();
            if name.is_empty() {
                return Err(Error::Data("empty factor name".into()));
            }
            if factors.iter().any(|f| f.name == name) {
                return Err(Error::Data(format!("duplicate factor name '{name}'")));
            }
            factors.push(Factor { name: name.to_string(), levels: Vec::new() });
        }
        let mut codes = vec![Vec::with_capacity(rows.len()); factors.len()];
        let mut response = Vec::with_capacity(rows.len());
        for (i, (labels, y)) in rows.iter().enumerate() {
            if labels.len() != factors.len() {
                return Err(Error::Row {
                    row: i + 1,
                    msg: format!("expected {} levels, got {}", factors.len(), labels.len()),
                });
            }
            if !y.is_finite() {
                return Err(Error::Row { row: i + 1, msg: format!("non-finite response {y}") });
            }
            for (k, label) in labels.iter().enumerate() {
                let label = label.as_ref();
                if label.is_empty() {
                    return Err(Error::Row {
                        row: i + 1,
                        msg: format!("empty level for factor '{}'", factors[k].name),
                    });
                }
                let idx = match factors[k].level_index(label) {
                    Some(j) => j,
                    None => {
                        factors[k].levels.push(label.to_string());
                        factors[k].levels.len() - 1
                    }
                };
                codes[k].push(idx);
            }
            response.push(*y);
        }
        if response.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        Ok(Dataset { factors, codes, response, response_name: response_name.to_string(), scale: TransformKind::None })
    }

    /// Reads comma-separated text with a header row. Every column other than
    /// `response_column` becomes a factor.
    pub fn load_table<R: Read>(source: R, response_column: &str) -> Result<Loaded> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(source);
        let header = rdr.headers().map_err(|e| Error::Data(format!("cannot read header: {e}")))?.clone();
        if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
            return Err(Error::Data("missing header".into()));
        }
        let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        let resp_col = names
            .iter()
            .position(|h| h == response_column)
            .ok_or_else(|| Error::Data(format!("response column '{response_column}' not in header")))?;
        if names.iter().filter(|h| *h == response_column).count() > 1 {
            return Err(Error::Data(format!("response column '{response_column}' appears twice")));
        }
        let factor_names: Vec<String> =
            names.iter().enumerate().filter(|&(i, _)| i != resp_col).map(|(_, n)| n.clone()).collect();
        let mut rows: Vec<(Vec<String>, f64)> = Vec::new();
        let mut skipped = 0;
        for (i, rec) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Row { row: line, msg: format!("malformed record: {e}") })?;
            let raw = rec[resp_col].trim();
            if raw.is_empty() {
                skipped += 1;
                continue;
            }
            let y: f64 =
                raw.parse().map_err(|_| Error::Row { row: line, msg: format!("non-numeric response '{raw}'") })?;
            if !y.is_finite() {
                return Err(Error::Row { row: line, msg: format!("non-finite response '{raw}'") });
            }
            let labels = rec
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != resp_col)
                .map(|(_, v)| v.trim().to_string())
                .collect::<Vec<_>>();
            if let Some(k) = labels.iter().position(String::is_empty) {
                return Err(Error::Row { row: line, msg: format!("empty level for factor '{}'", factor_names[k]) });
            }
            rows.push((labels, y));
        }
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let dataset = Dataset::from_rows(&factor_names, &rows, response_column)?;
        Ok(Loaded { dataset, skipped_empty: skipped })
    }

    /// The six-system, five-year toy trial with systems 1 and 4 retired and
    /// systems 5 and 6 introduced in the final year.
    ///
    /// Labels 1 to 6 correspond to Oeko, K-II, NOcsPS I, NOcsPS II, Oeko+ and
    /// NOcsPS+ of the Dahnsdorf layout.
    pub fn builtin_toy() -> Dataset {
        const YEARS: [&str; 5] = ["2020", "2021", "2022", "2023", "2024"];
        let table: [(&str, [Option<f64>; 5]); 6] = [
            ("1", [Some(51.0), Some(49.0), Some(50.0), Some(52.0), None]),
            ("2", [Some(93.0), Some(91.0), Some(88.0), Some(87.0), Some(98.0)]),
            ("3", [Some(57.0), Some(53.0), Some(56.0), Some(52.0), Some(63.0)]),
            ("4", [Some(54.0), Some(51.0), Some(56.0), Some(54.0), None]),
            ("5", [None, None, None, None, Some(67.0)]),
            ("6", [None, None, None, None, Some(63.0)]),
        ];
        let mut rows = Vec::new();
        for (sys, cells) in table {
            for (year, cell) in YEARS.iter().zip(cells) {
                if let Some(y) = cell {
                    rows.push((vec![sys, *year], y));
                }
            }
        }
        Dataset::from_rows(&["S", "Y"], &rows, "value").expect("toy data is valid")
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    pub fn factor_index(&self, name: &str) -> Result<usize> {
        self.factors.iter().position(|f| f.name == name).ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }

    pub fn factor(&self, name: &str) -> Result<&Factor> {
        Ok(&self.factors[self.factor_index(name)?])
    }

    /// Level indices of factor `k`, one per row.
    pub fn codes(&self, k: usize) -> &[usize] {
        &self.codes[k]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn scale(&self) -> TransformKind {
        self.scale
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn observation(&self, row: usize) -> Observation {
        let levels =
            self.factors.iter().zip(&self.codes).map(|(f, c)| (f.name.clone(), f.levels[c[row]].clone())).collect();
        Observation { levels, response: self.response[row] }
    }

    /// Resolves a level label of a factor to its index.
    pub fn level(&self, factor: &str, label: &str) -> Result<usize> {
        self.factor(factor)?
            .level_index(label)
            .ok_or_else(|| Error::UnknownLevel { factor: factor.to_string(), level: label.to_string() })
    }

    /// Counts observations per (row-factor level, column-factor level).
    pub fn incidence(&self, row: &str, col: &str) -> Result<IncidenceTable> {
        let (ri, ci) = (self.factor_index(row)?, self.factor_index(col)?);
        let (rf, cf) = (&self.factors[ri], &self.factors[ci]);
        let mut counts = vec![vec![0usize; cf.n_levels()]; rf.n_levels()];
        for (&r, &c) in self.codes[ri].iter().zip(&self.codes[ci]) {
            counts[r][c] += 1;
        }
        Ok(IncidenceTable {
            row_factor: rf.name.clone(),
            col_factor: cf.name.clone(),
            row_levels: rf.levels.clone(),
            col_levels: cf.levels.clone(),
            counts,
        })
    }

    /// Adds factor `name` whose level for each row is `mapping[source level]`.
    pub fn derive_factor(&self, name: &str, source: &str, mapping: &BTreeMap<String, String>) -> Result<Dataset> {
        if self.factor_index(name).is_ok() {
            return Err(Error::Data(format!("factor '{name}' already exists")));
        }
        let si = self.factor_index(source)?;
        let src = &self.factors[si];
        for lvl in &src.levels {
            match mapping.get(lvl) {
                None => {
                    return Err(Error::Data(format!("mapping for '{name}' does not cover level '{lvl}' of '{source}'")))
                }
                Some(v) if v.is_empty() => {
                    return Err(Error::Data(format!("mapping for '{name}' assigns an empty label to '{lvl}'")))
                }
                _ => {}
            }
        }
        let mut f = Factor { name: name.to_string(), levels: Vec::new() };
        let mut codes = Vec::with_capacity(self.n_rows());
        for &c in &self.codes[si] {
            let label = &mapping[&src.levels[c]];
            let idx = match f.level_index(label) {
                Some(j) => j,
                None => {
                    f.levels.push(label.clone());
                    f.levels.len() - 1
                }
            };
            codes.push(idx);
        }
        let mut out = self.clone();
        out.factors.push(f);
        out.codes.push(codes);
        Ok(out)
    }

    /// Moves `level` to the last position of `factor`, making it the reference.
    pub fn relevel(&self, factor: &str, level: &str) -> Result<Dataset> {
        let order: Vec<String> = {
            let f = self.factor(factor)?;
            let j = self.level(factor, level)?;
            let mut order: Vec<String> =
                f.levels.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, l)| l.clone()).collect();
            order.push(f.levels[j].clone());
            order
        };
        self.reorder_levels(factor, &order)
    }

    /// Replaces the level order of `factor` with `order`, a permutation of its levels.
    pub fn reorder_levels(&self, factor: &str, order: &[String]) -> Result<Dataset> {
        let k = self.factor_index(factor)?;
        let f = &self.factors[k];
        if order.len() != f.n_levels() || !f.levels.iter().all(|l| order.contains(l)) {
            return Err(Error::Invalid(format!("level order for '{factor}' is not a permutation of its levels")));
        }
        let remap: Vec<usize> = f.levels.iter().map(|l| order.iter().position(|o| o == l).unwrap()).collect();
        let mut out = self.clone();
        out.factors[k].levels = order.to_vec();
        out.codes[k] = self.codes[k].iter().map(|&c| remap[c]).collect();
        Ok(out)
    }

    /// Keeps rows satisfying `keep`; unused levels are dropped, order preserved.
    pub fn filter_rows<F: Fn(usize) -> bool>(&self, keep: F) -> Result<Dataset> {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| keep(r)).collect();
        if rows.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let mut out = self.clone();
        out.response = rows.iter().map(|&r| self.response[r]).collect();
        for k in 0..self.factors.len() {
            let used: Vec<usize> = {
                let mut seen = vec![false; self.factors[k].n_levels()];
                rows.iter().for_each(|&r| seen[self.codes[k][r]] = true);
                (0..seen.len()).filter(|&j| seen[j]).collect()
            };
            let remap: BTreeMap<usize, usize> = used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
            out.factors[k].levels = used.iter().map(|&j| self.factors[k].levels[j].clone()).collect();
            out.codes[k] = rows.iter().map(|&r| remap[&self.codes[k][r]]).collect();
        }
        Ok(out)
    }

    /// Applies a response transformation. The scale is recorded on the result.
    pub fn transform_response(&self, kind: TransformKind) -> Result<Dataset> {
        match kind {
            TransformKind::None => Ok(self.clone()),
            TransformKind::Sqrt => {
                if self.scale != TransformKind::None {
                    return Err(Error::ScaleMismatch(format!("response already on {} scale", self.scale)));
                }
                if let Some(r) = self.response.iter().position(|&y| y < 0.0) {
                    return Err(Error::Row {
                        row: r + 1,
                        msg: format!("negative response {} under sqrt", self.response[r]),
                    });
                }
                let mut out = self.clone();
                out.response = self.response.iter().map(|y| y.sqrt()).collect();
                out.scale = TransformKind::Sqrt;
                Ok(out)
            }
        }
    }

    /// Returns a copy with the responses replaced.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Dataset> {
        if response.len() != self.n_rows() {
            return Err(Error::Invalid("response length does not match row count".into()));
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(Error::Invalid("non-finite response".into()));
        }
        let mut out = self.clone();
        out.response = response;
        Ok(out)
    }

    /// If every row with a given level of `from` carries one level of `to`,
    /// returns that map (indexed by `from` level).
    pub fn functional_map(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut map: Vec<Option<usize>> = vec![None; self.factors[from].n_levels()];
        for (&a, &b) in self.codes[from].iter().zip(&self.codes[to]) {
            match map[a] {
                None => map[a] = Some(b),
                Some(x) if x != b => return None,
                _ => {}
            }
        }
        map.into_iter().collect()
    }

    /// Writes the dataset as comma-separated text.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.factors.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.response_name);
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> =
                self.factors.iter().zip(&self.codes).map(|(f, c)| f.levels[c[r]].clone()).collect();
            rec.push(format!("{}", self.response[r]));
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Observation counts per level pair of two factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceTable {
    pub row_factor: String,
    pub col_factor: String,
    pub row_levels: Vec<String>,
    pub col_levels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl IncidenceTable {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<usize> {
        (0..self.col_levels.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Presence grid: `×` for tested combinations, blank otherwise.
    pub fn render(&self) -> String {
        let w0 = self
            .row_levels
            .iter()
            .map(|l| l.chars().count())
            .chain([self.row_factor.chars().count()])
            .max()
            .unwrap_or(1);
        let widths: Vec<usize> = self.col_levels.iter().map(|l| l.chars().count().max(1)).collect();
        let mut s = format!("{:<w0$}", self.row_factor);
        for (l, w) in self.col_levels.iter().zip(&widths) {
            s.push_str(&format!("  {l:>w$}"));
        }
        s.push('\n');
        for (lab, row) in self.row_levels.iter().zip(&self.counts) {
            let mut line = format!("{lab:<w0$}");
            for (&c, w) in row.iter().zip(&widths) {
                line.push_str(&format!("  {:>w$}", if c > 0 { "×" } else { "" }));
            }
            s.push_str(line.trim_end());
            s.push('\n');
        }
        s
    }
}
