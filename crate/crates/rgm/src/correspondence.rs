//! Binary correspondence between two point clouds.
//!
//! A [`BinaryCorrespondence`] is a sparse 0/1 matrix of shape `n x m` where
//! every row and column holds at most one mark. It serves both as ground
//! truth for generated pairs and as the hard assignment recovered from a
//! soft matching.

use crate::scalar::Real;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCorrespondence {
    n: usize,
    m: usize,
    /// Matched (row, col) pairs, sorted by row.
    pairs: Vec<(usize, usize)>,
}

impl BinaryCorrespondence {
    /// Builds from explicit pairs, enforcing bounds and at-most-one marks
    /// per row and per column. Pairs are stored sorted by row index.
    pub fn new(n: usize, m: usize, mut pairs: Vec<(usize, usize)>) -> Result<Self> {
        pairs.sort_unstable();
        let mut cols_seen = vec![false; m];
        let mut last_row = usize::MAX;
        for &(i, j) in &pairs {
            if i >= n || j >= m {
                return Err(Error::Parameter(format!(
                    "pair ({i}, {j}) out of bounds for {n} x {m} correspondence"
                )));
            }
            if i == last_row {
                return Err(Error::Parameter(format!("row {i} matched more than once")));
            }
            if cols_seen[j] {
                return Err(Error::Parameter(format!(
                    "column {j} matched more than once"
                )));
            }
            cols_seen[j] = true;
            last_row = i;
        }
        Ok(BinaryCorrespondence { n, m, pairs })
    }

    pub fn empty(n: usize, m: usize) -> Self {
        BinaryCorrespondence {
            n,
            m,
            pairs: Vec::new(),
        }
    }

    /// Full identity matching of a cloud with itself.
    pub fn identity(n: usize) -> Self {
        BinaryCorrespondence {
            n,
            m: n,
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    /// Square matching where row `i` pairs with column `perm[i]`.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        Self::new(n, n, perm.iter().enumerate().map(|(i, &j)| (i, j)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of matched pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn col_for_row(&self, i: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&i, |&(r, _)| r)
            .ok()
            .map(|k| self.pairs[k].1)
    }

    pub fn row_for_col(&self, j: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, c)| c == j).map(|&(r, _)| r)
    }

    /// True when the matching is a full permutation (square, all rows used).
    pub fn is_permutation(&self) -> bool {
        self.n == self.m && self.pairs.len() == self.n
    }

    /// Dense row-major 0/1 matrix of shape `n x m`.
    pub fn dense<T: Real>(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n * self.m];
        for &(i, j) in &self.pairs {
            out[i * self.m + j] = T::one();
        }
        out
    }

    /// Rewrites column indices through `new_index_of` (old column -> new
    /// column), for use after the target cloud is reordered.
    pub fn relabel_cols(&self, new_index_of: &[usize]) -> Result<Self> {
        if new_index_of.len() != self.m {
            return Err(Error::Parameter(format!(
                "relabel map has {} entries, correspondence has {} columns",
                new_index_of.len(),
                self.m
            )));
        }
        Self::new(
            self.n,
            self.m,
            self.pairs
                .iter()
                .map(|&(i, j)| (i, new_index_of[j]))
                .collect(),
        )
    }

    /// CSV with an `i,j` header and one matched pair per line, row-sorted.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j\n");
        for &(i, j) in &self.pairs {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }

    /// Parses [`BinaryCorrespondence::to_csv`] output; the matrix shape is
    /// supplied by the caller since all-zero rows and columns leave no trace
    /// in the pair list.
    pub fn from_csv(text: &str, n: usize, m: usize) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "i,j" => {}
            _ => return Err(Error::Format("correspondence csv: missing i,j header".into())),
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim().split(',');
            let parse = |f: Option<&str>| -> Result<usize> {
                f.and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                    Error::Format(format!(
                        "correspondence csv: line {}: expected `i,j` integers",
                        lineno + 2
                    ))
                })
            };
            let i = parse(fields.next())?;
            let j = parse(fields.next())?;
            if fields.next().is_some() {
                return Err(Error::Format(format!(
                    "correspondence csv: line {}: too many fields",
                    lineno + 2
                )));
            }
            pairs.push((i, j));
        }
        Self::new(n, m, pairs)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, n: usize, m: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, n, m)
    }
}
