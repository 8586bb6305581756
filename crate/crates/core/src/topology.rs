//! Communication graphs and their mixing matrices.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Symmetric doubly-stochastic weights over the communication graph.
///
/// Rows and columns are agents; `w[i][j] > 0` means agents i and j exchange
/// parameters. Constructors produce valid matrices; arbitrary candidate
/// matrices (e.g. loaded from a file) are checked with [`MixingMatrix::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    weights: Vec<f64>, // row-major n*n
    neighbors: Vec<Vec<usize>>,
}

/// One invariant violation found by [`MixingMatrix::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Asymmetry { i: usize, j: usize },
    RowSum { i: usize, sum: f64 },
    ColSum { j: usize, sum: f64 },
    NegativeEntry { i: usize, j: usize },
    MissingSelfLoop { i: usize },
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Asymmetry { i, j } => write!(f, "asymmetry at ({i},{j})"),
            Violation::RowSum { i, sum } => write!(f, "row {i} sums to {sum}"),
            Violation::ColSum { j, sum } => write!(f, "column {j} sums to {sum}"),
            Violation::NegativeEntry { i, j } => write!(f, "negative entry at ({i},{j})"),
            Violation::MissingSelfLoop { i } => write!(f, "missing self-loop at {i}"),
            Violation::Disconnected => write!(f, "graph is disconnected"),
        }
    }
}

/// Outcome of validating a candidate mixing matrix.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            write!(f, "{}", msgs.join("; "))
        }
    }
}

impl MixingMatrix {
    /// Undirected ring where every agent averages with itself and both ring
    /// neighbors at weight 1/3. Degenerate sizes: n=1 is a lone self-loop,
    /// n=2 uses weight 1/2 for self and the single peer.
    pub fn ring(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("ring: agent count must be positive"));
        }
        let mut weights = vec![0.0; n * n];
        match n {
            1 => weights[0] = 1.0,
            2 => weights.copy_from_slice(&[0.5, 0.5, 0.5, 0.5]),
            _ => {
                let w = 1.0 / 3.0;
                for i in 0..n {
                    let left = (i + n - 1) % n;
                    let right = (i + 1) % n;
                    weights[i * n + left] = w;
                    weights[i * n + i] = w;
                    weights[i * n + right] = w;
                }
            }
        }
        Ok(Self::from_flat(n, weights).expect("ring construction is square"))
    }

    /// Complete graph with uniform weights 1/n; one gossip step with this
    /// matrix is exact global averaging.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("complete: agent count must be positive"));
        }
        let w = 1.0 / n as f64;
        Ok(Self::from_flat(n, vec![w; n * n]).expect("complete construction is square"))
    }

    /// Wrap a row-major candidate matrix. Only squareness is enforced here;
    /// run [`validate`](Self::validate) to check the gossip invariants.
    pub fn from_flat(n: usize, weights: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mixing matrix: agent count must be positive"));
        }
        if weights.len() != n * n {
            return Err(Error::invalid(format!(
                "mixing matrix: expected {} entries for n={}, got {}",
                n * n,
                n,
                weights.len()
            )));
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| weights[i * n + j] > 0.0)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(MixingMatrix {
            n,
            weights,
            neighbors,
        })
    }

    /// Load a matrix from plain text: first line n, then n rows of n
    /// space-separated decimals.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::invalid("matrix file: empty"))?
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("matrix file: bad size line: {e}")))?;
        if n == 0 {
            return Err(Error::invalid("matrix file: n must be positive"));
        }
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::invalid(format!("matrix file: missing row {i}")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::invalid(format!("matrix file: row {i}: {e}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "matrix file: row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            weights.extend(row);
        }
        Self::from_flat(n, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// Indices j with `w[i][j] > 0`, ascending, self included when present.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Report every violated invariant: asymmetry, row/column sums drifting
    /// more than 1e-12 from one, negative entries, missing self-loops, and
    /// disconnection (breadth-first search over positive-weight edges).
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.weight(i, j) != self.weight(j, i) {
                    violations.push(Violation::Asymmetry { i, j });
                }
            }
        }
        for i in 0..n {
            let sum: f64 = self.row(i).iter().sum();
            if (sum - 1.0).abs() > SUM_TOL {
                violations.push(Violation::RowSum { i, sum });
            }
        }
        for j in 0..n {
            let sum: f64 = (0..n).map(|i| self.weight(i, j)).sum();
            if (sum - 1.0).abs() > SUM_TOL {
                violations.push(Violation::ColSum { j, sum });
            }
        }
        for i in 0..n {
            for j in 0..n {
                if self.weight(i, j) < 0.0 {
                    violations.push(Violation::NegativeEntry { i, j });
                }
            }
        }
        for i in 0..n {
            if self.weight(i, i) <= 0.0 {
                violations.push(Violation::MissingSelfLoop { i });
            }
        }
        if !self.is_connected() {
            violations.push(Violation::Disconnected);
        }
        ValidationReport { violations }
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }
}
