use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DescriptorError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    Sum,
}

/// Pooled tokens: row `t` of `tokens` aggregates the nodes in `grouping[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    pub tokens: DMatrix<f64>,
    pub grouping: Vec<Vec<usize>>,
}

impl TokenSet {
    pub fn n_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }

    /// Tokens concatenated in window order into one row vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tokens.len());
        for r in 0..self.tokens.nrows() {
            out.extend(self.tokens.row(r).iter());
        }
        out
    }
}

/// A single window covering nodes `0..n`.
pub fn whole_graph(n: usize) -> Vec<Vec<usize>> {
    vec![(0..n).collect()]
}

/// One window per residue holding every atom whose residue lies within
/// `half_width` positions of it in sequence. `residue_of_atom[i]` is the
/// residue index of atom `i`; residue indices must cover `0..max+1`.
pub fn residue_windows(residue_of_atom: &[usize], half_width: usize) -> Result<Vec<Vec<usize>>> {
    let Some(&max) = residue_of_atom.iter().max() else {
        return Err(DescriptorError::InvalidGrouping("no atoms".into()));
    };
    let n_res = max + 1;
    let mut present = vec![false; n_res];
    for &r in residue_of_atom {
        present[r] = true;
    }
    if let Some(r) = present.iter().position(|p| !p) {
        return Err(DescriptorError::InvalidGrouping(format!("residue {r} has no atoms")));
    }
    Ok((0..n_res)
        .map(|r| {
            let lo = r.saturating_sub(half_width);
            let hi = r + half_width;
            residue_of_atom
                .iter()
                .enumerate()
                .filter(|(_, &ra)| ra >= lo && ra <= hi)
                .map(|(i, _)| i)
                .collect()
        })
        .collect())
}

pub fn pool(node_embeddings: &DMatrix<f64>, grouping: &[Vec<usize>], mode: PoolMode) -> Result<TokenSet> {
    if grouping.is_empty() {
        return Err(DescriptorError::InvalidGrouping("no windows".into()));
    }
    let n = node_embeddings.nrows();
    let w = node_embeddings.ncols();
    let mut tokens = DMatrix::zeros(grouping.len(), w);
    for (t, window) in grouping.iter().enumerate() {
        if window.is_empty() {
            return Err(DescriptorError::InvalidGrouping(format!("window {t} is empty")));
        }
        for &i in window {
            if i >= n {
                return Err(DescriptorError::InvalidGrouping(format!(
                    "window {t} references node {i}, graph has {n}"
                )));
            }
            match mode {
                PoolMode::Sum => {
                    let mut row = tokens.row_mut(t);
                    row += node_embeddings.row(i);
                }
            }
        }
    }
    Ok(TokenSet {
        tokens,
        grouping: grouping.to_vec(),
    })
}
