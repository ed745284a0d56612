//! Partition of all unordered index pairs of `m` individuals into `m - 1`
//! perfect matchings (a 1-factorization of the complete graph).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `m - 1` groups of `m / 2` one-based index pairs `(j, j')`, `j < j'`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGrouping {
    pub m: usize,
    pub groups: Vec<Vec<(usize, usize)>>,
}

/// Builds the grouping from the cyclic Latin-square construction.
///
/// Rows of the `(m-1) x (m-1)` block are cyclic shifts of `1..m-1`; each
/// diagonal entry is moved to the last row/column and replaced by zero. The
/// pair `(j, j')` then belongs to group `G[j][j']`.
pub fn round_robin_grouping(m: usize) -> Result<PairGrouping> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(invalid(format!(
            "pair grouping needs an even number of individuals >= 2, got {m}"
        )));
    }
    let c = m - 1;
    let mut table = vec![vec![0usize; m]; m];
    for i in 0..c {
        for j in 0..c {
            table[i][j] = (i + j) % c + 1;
        }
    }
    for i in 0..c {
        table[i][m - 1] = table[i][i];
        table[m - 1][i] = table[i][i];
        table[i][i] = 0;
    }
    let mut groups = vec![Vec::with_capacity(m / 2); c];
    for j in 0..m {
        for jp in j + 1..m {
            groups[table[j][jp] - 1].push((j + 1, jp + 1));
        }
    }
    Ok(PairGrouping { m, groups })
}

impl PairGrouping {
    /// Checks disjointness, full coverage and the no-repeat rule.
    pub fn is_valid(&self) -> bool {
        let m = self.m;
        if m < 2 || !m.is_multiple_of(2) || self.groups.len() != m - 1 {
            return false;
        }
        let mut seen = vec![vec![false; m + 1]; m + 1];
        for g in &self.groups {
            if g.len() != m / 2 {
                return false;
            }
            let mut used = vec![false; m + 1];
            for &(a, b) in g {
                if !(1 <= a && a < b && b <= m) || used[a] || used[b] || seen[a][b] {
                    return false;
                }
                used[a] = true;
                used[b] = true;
                seen[a][b] = true;
            }
        }
        (1..=m).all(|a| (a + 1..=m).all(|b| seen[a][b]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_individuals_match_worked_example() {
        let g = round_robin_grouping(4).unwrap();
        assert_eq!(
            g.groups,
            vec![vec![(1, 4), (2, 3)], vec![(1, 2), (3, 4)], vec![(1, 3), (2, 4)]]
        );
    }

    #[test]
    fn two_individuals() {
        assert_eq!(round_robin_grouping(2).unwrap().groups, vec![vec![(1, 2)]]);
    }

    #[test]
    fn odd_and_zero_rejected() {
        assert!(round_robin_grouping(0).is_err());
        assert!(round_robin_grouping(5).is_err());
    }

    #[test]
    fn ten_individuals_valid() {
        let g = round_robin_grouping(10).unwrap();
        assert_eq!(g.groups.len(), 9);
        assert!(g.groups.iter().all(|x| x.len() == 5));
        assert!(g.is_valid());
    }
}
