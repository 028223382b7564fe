//! Compact letter displays by insert-and-absorb.
//!
//! Starting from one group holding every level, each significant pair
//! (i, j) splits every group containing both into a copy without i and a
//! copy without j; groups contained in another group are then absorbed.
//! The surviving groups are the maximal sets of mutually non-significant
//! levels, so two levels share a letter exactly when their difference is
//! not significant. A final sweep drops groups whose pairs and members are
//! all covered by other groups.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub levels: Vec<String>,
    sig: Vec<Vec<bool>>,
}

impl SignificanceMatrix {
    pub fn new(levels: Vec<String>, sig: Vec<Vec<bool>>) -> Result<Self> {
        let k = levels.len();
        if sig.len() != k || sig.iter().any(|r| r.len() != k) {
            return Err(Error::Invalid("significance matrix must be square over the levels".into()));
        }
        for i in 0..k {
            if sig[i][i] {
                return Err(Error::Invalid(format!("level '{}' marked significant against itself", levels[i])));
            }
            for j in 0..i {
                if sig[i][j] != sig[j][i] {
                    return Err(Error::Invalid("significance matrix must be symmetric".into()));
                }
            }
        }
        Ok(SignificanceMatrix { levels, sig })
    }

    /// Builds a matrix from the list of significant pairs.
    pub fn from_pairs(levels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let k = levels.len();
        let mut sig = vec![vec![false; k]; k];
        for &(i, j) in pairs {
            if i >= k || j >= k {
                return Err(Error::Invalid(format!("pair ({i}, {j}) out of range")));
            }
            sig[i][j] = true;
            sig[j][i] = true;
        }
        Self::new(levels, sig)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn is_significant(&self, i: usize, j: usize) -> bool {
        self.sig[i][j]
    }
}

/// Letter groups over a set of levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterDisplay {
    pub levels: Vec<String>,
    /// Level indices of each letter group; group k carries letter `letter(k)`.
    pub groups: Vec<BTreeSet<usize>>,
}

/// Letter for group index `k`: a..z, then aa, ab, ...
pub fn letter(k: usize) -> String {
    let mut k = k;
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (k % 26) as u8);
        if k < 26 {
            break;
        }
        k = k / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

impl LetterDisplay {
    pub fn from_groups(levels: Vec<String>, groups: Vec<BTreeSet<usize>>) -> Self {
        LetterDisplay { levels, groups }
    }

    /// Concatenated letters for each level, in level order.
    pub fn letters_per_level(&self) -> Vec<String> {
        (0..self.levels.len())
            .map(|i| {
                self.groups
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.contains(&i))
                    .map(|(k, _)| letter(k))
                    .collect::<String>()
            })
            .collect()
    }

    fn shares_letter(&self, i: usize, j: usize) -> bool {
        self.groups.iter().any(|g| g.contains(&i) && g.contains(&j))
    }
}

fn absorb(groups: &mut Vec<BTreeSet<usize>>) {
    groups.sort();
    groups.dedup();
    let snapshot = groups.clone();
    groups.retain(|g| !snapshot.iter().any(|h| h != g && g.is_subset(h)));
}

/// Removes groups that carry no pair or level not covered by another group.
fn sweep(groups: &mut Vec<BTreeSet<usize>>) {
    let mut g = 0;
    while g < groups.len() {
        let covered =
            |a: usize, b: usize| groups.iter().enumerate().any(|(h, o)| h != g && o.contains(&a) && o.contains(&b));
        let members: Vec<usize> = groups[g].iter().copied().collect();
        let redundant = members.iter().all(|&a| covered(a, a))
            && members.iter().enumerate().all(|(x, &a)| members[x + 1..].iter().all(|&b| covered(a, b)));
        if redundant {
            groups.remove(g);
        } else {
            g += 1;
        }
    }
}

/// Truthful, irredundant letter display for `sm`.
///
/// When `estimates` is given, letters are assigned in order of the first
/// member of each group after sorting levels by descending estimate (ties by
/// level order); otherwise level order is used.
pub fn letter_display(sm: &SignificanceMatrix, estimates: Option<&[f64]>) -> LetterDisplay {
    let k = sm.len();
    let mut groups: Vec<BTreeSet<usize>> = if k == 0 { Vec::new() } else { vec![(0..k).collect()] };
    for i in 0..k {
        for j in i + 1..k {
            if !sm.is_significant(i, j) {
                continue;
            }
            let mut next = Vec::with_capacity(groups.len() + 1);
            for g in groups {
                if g.contains(&i) && g.contains(&j) {
                    let mut gi = g.clone();
                    gi.remove(&i);
                    let mut gj = g;
                    gj.remove(&j);
                    next.push(gi);
                    next.push(gj);
                } else {
                    next.push(g);
                }
            }
            next.retain(|g| !g.is_empty());
            absorb(&mut next);
            groups = next;
        }
    }

    sweep(&mut groups);

    let mut order: Vec<usize> = (0..k).collect();
    if let Some(est) = estimates {
        order.sort_by(|&a, &b| est[b].total_cmp(&est[a]).then(a.cmp(&b)));
    }
    let mut rank = vec![0; k];
    for (pos, &lvl) in order.iter().enumerate() {
        rank[lvl] = pos;
    }
    groups.sort_by_key(|g| {
        let mut r: Vec<usize> = g.iter().map(|&l| rank[l]).collect();
        r.sort_unstable();
        r
    });
    LetterDisplay { levels: sm.levels.clone(), groups }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// A significant pair shares a letter.
    SignificantShared { a: String, b: String },
    /// A non-significant pair has no letter in common.
    NonSignificantSeparated { a: String, b: String },
    /// Group `sub` is contained in group `sup`.
    Redundant { sub: String, sup: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exhaustive truthfulness and irredundancy check of `ld` against `sm`.
pub fn verify_display(sm: &SignificanceMatrix, ld: &LetterDisplay) -> Result<VerifyReport> {
    if sm.levels != ld.levels {
        return Err(Error::Invalid("display and matrix have different levels".into()));
    }
    let mut violations = Vec::new();
    let k = sm.len();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (sm.levels[i].clone(), sm.levels[j].clone());
            match (sm.is_significant(i, j), ld.shares_letter(i, j)) {
                (true, true) => violations.push(Violation::SignificantShared { a, b }),
                (false, false) => violations.push(Violation::NonSignificantSeparated { a, b }),
                _ => {}
            }
        }
    }
    for (x, g) in ld.groups.iter().enumerate() {
        for (y, h) in ld.groups.iter().enumerate() {
            if x != y && g.is_subset(h) && (g != h || x > y) {
                violations.push(Violation::Redundant { sub: letter(x), sup: letter(y) });
            }
        }
    }
    Ok(VerifyReport { violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn labels(k: usize) -> Vec<String> {
        (1..=k).map(|i| i.to_string()).collect()
    }

    /// Significance pattern of the toy Model 3 comparisons at the 5% level.
    fn toy_matrix() -> SignificanceMatrix {
        let pairs = [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (1, 3), (1, 4), (1, 5)];
        SignificanceMatrix::from_pairs(labels(6), &pairs).unwrap()
    }

    const TOY_MEANS: [f64; 6] = [52.175, 91.4, 56.2, 55.425, 60.3, 56.3];

    #[test]
    fn toy_display() {
        let sm = toy_matrix();
        let ld = letter_display(&sm, Some(&TOY_MEANS));
        assert_eq!(ld.letters_per_level(), ["c", "a", "b", "b", "b", "bc"]);
        assert!(verify_display(&sm, &ld).unwrap().is_ok());
    }

    #[test]
    fn toy_subset_display() {
        let sm = SignificanceMatrix::from_pairs(labels(4), &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let ld = letter_display(&sm, Some(&[91.4, 56.2, 60.3, 56.3]));
        assert_eq!(ld.letters_per_level(), ["a", "b", "b", "b"]);
    }

    #[test]
    fn trivial_extremes() {
        let none = SignificanceMatrix::from_pairs(labels(5), &[]).unwrap();
        assert_eq!(letter_display(&none, None).letters_per_level(), vec!["a"; 5]);
        let all: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
        let sm = SignificanceMatrix::from_pairs(labels(5), &all).unwrap();
        let ld = letter_display(&sm, None);
        assert_eq!(ld.letters_per_level(), ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn lines_style_merge_is_caught() {
        let sm = toy_matrix();
        let groups = vec![BTreeSet::from([1]), BTreeSet::from([2, 3, 4, 5]), BTreeSet::from([0, 2, 3, 5])];
        let ld = LetterDisplay::from_groups(labels(6), groups);
        let rep = verify_display(&sm, &ld).unwrap();
        let shared: Vec<(String, String)> = rep
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::SignificantShared { a, b } => Some((a.clone(), b.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(shared, [("1".to_string(), "3".to_string()), ("1".into(), "4".into())]);
    }

    #[test]
    fn redundant_group_flagged() {
        let sm = SignificanceMatrix::from_pairs(labels(3), &[]).unwrap();
        let ld = LetterDisplay::from_groups(labels(3), vec![BTreeSet::from([0, 1, 2]), BTreeSet::from([0, 1])]);
        let rep = verify_display(&sm, &ld).unwrap();
        assert_eq!(rep.violations, [Violation::Redundant { sub: "b".into(), sup: "a".into() }]);
    }

    #[test]
    fn invalid_matrices() {
        assert!(SignificanceMatrix::new(labels(2), vec![vec![true, false], vec![false, false]]).is_err());
        assert!(SignificanceMatrix::new(labels(2), vec![vec![false, true], vec![false, false]]).is_err());
        assert!(SignificanceMatrix::new(labels(2), vec![vec![false]]).is_err());
    }

    #[test]
    fn sweep_drops_covered_groups() {
        // non-significance graph K(2,2,2): eight maximal triangles, four suffice
        let sm = SignificanceMatrix::from_pairs(labels(6), &[(0, 1), (2, 3), (4, 5)]).unwrap();
        let ld = letter_display(&sm, None);
        assert!(verify_display(&sm, &ld).unwrap().is_ok());
        assert!(ld.groups.len() < 8, "{}", ld.groups.len());
    }

    #[test]
    fn letter_names() {
        assert_eq!(letter(0), "a");
        assert_eq!(letter(25), "z");
        assert_eq!(letter(26), "aa");
        assert_eq!(letter(27), "ab");
    }

    #[test]
    fn random_matrices_truthful_and_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let k = rng.random_range(1..=8);
            let p: f64 = rng.random();
            let pairs: Vec<(usize, usize)> =
                (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).filter(|_| rng.random::<f64>() < p).collect();
            let sm = SignificanceMatrix::from_pairs(labels(k), &pairs).unwrap();
            let ld = letter_display(&sm, None);
            assert!(verify_display(&sm, &ld).unwrap().is_ok());
            let nonsig = k * (k - 1) / 2 - pairs.len();
            let isolated = (0..k).filter(|&i| (0..k).all(|j| j == i || sm.is_significant(i, j))).count();
            assert!(ld.groups.len() <= nonsig + isolated);
            assert_eq!(letter_display(&sm, None), ld);
        }
    }
}
