//! Joint inference over hypotheses sharing a premise: pairwise same-label
//! judgements, the agreement matrix and rectification of a group's
//! entailment probabilities.
//!
//! Rectification of a group of `n` predictions `p̃^j` with agreement `I`:
//!
//! ```text
//! p̂^i = 1/n Σ_j ( I_ij p̃^j + (1 - I_ij) (1 - p̃^j) )
//! ```
//!
//! applied component-wise. For a normalised pair `1 - (a, b) = (b, a)`, so the
//! outputs stay normalised.

mod network;
mod pairgen;

use serde::{Deserialize, Serialize};

use crate::corpus::PremiseView;
use crate::error::{Error, Result};

pub use network::{ConsistencyConfig, ConsistencyModel, PairTrainReport};
pub use pairgen::{
    generate_pair_training_data, pair_premise, IdentityParaphraser, PairDataset, PairExample, PairGeneration, PairLabel,
    Paraphraser, SynonymParaphraser,
};

/// Anything that can judge whether two hypotheses over one premise share a
/// label. Returns `c_1`, the same-label probability.
pub trait PairJudge: Sync {
    fn same_label(&self, first: &str, second: &str, premise: &PremiseView) -> Result<f64>;
}

/// Binary agreement over a hypothesis group; `I_ii = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    n: usize,
    entries: Vec<u8>,
}

impl AgreementMatrix {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0u8; n * n];
        for i in 0..n {
            entries[i * n + i] = 1;
        }
        Self { n, entries }
    }

    /// From explicit rows. Diagonal entries must be 1 and all entries 0/1.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Argument(format!("agreement row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 || (i == j && v != 1) {
                    return Err(Error::Argument(format!("invalid agreement entry ({i}, {j}) = {v}")));
                }
            }
            entries.extend_from_slice(row);
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.entries[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Agreement from ordered same-label scores: `I_ij = 1` iff
    /// `(c(i, j) + c(j, i)) / 2 > 0.5` for `i != j`.
    pub fn from_scores(n: usize, mut c1: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        let mut m = Self::identity(n);
        for i in 0..n {
            for j in i + 1..n {
                let mean = (c1(i, j)? + c1(j, i)?) / 2.0;
                let v = u8::from(mean > 0.5);
                m.entries[i * n + j] = v;
                m.entries[j * n + i] = v;
            }
        }
        Ok(m)
    }
}

/// Agreement matrix for the hypotheses of one group.
pub fn build_agreement_matrix(hypotheses: &[&str], premise: &PremiseView, judge: &dyn PairJudge) -> Result<AgreementMatrix> {
    if hypotheses.is_empty() {
        return Err(Error::Argument("empty hypothesis group".into()));
    }
    AgreementMatrix::from_scores(hypotheses.len(), |i, j| judge.same_label(hypotheses[i], hypotheses[j], premise))
}

/// Corrects a group's entailment probabilities with its agreement matrix.
pub fn rectify(predictions: &[[f64; 2]], agreement: &AgreementMatrix) -> Result<Vec<[f64; 2]>> {
    let n = predictions.len();
    if n != agreement.n() {
        return Err(Error::Argument(format!("{n} predictions for an agreement matrix of size {}", agreement.n())));
    }
    if n == 0 {
        return Err(Error::Argument("empty hypothesis group".into()));
    }
    Ok((0..n)
        .map(|i| {
            let mut acc = [0.0; 2];
            for (j, p) in predictions.iter().enumerate() {
                let agree = agreement.get(i, j) == 1;
                for c in 0..2 {
                    acc[c] += if agree { p[c] } else { 1.0 - p[c] };
                }
            }
            acc.map(|v| v / n as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_is_identity() {
        let p = [[0.3, 0.7]];
        assert_eq!(rectify(&p, &AgreementMatrix::identity(1)).unwrap(), p.to_vec());
    }

    #[test]
    fn disagreeing_pair_example() {
        let i = AgreementMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        let out = rectify(&[[0.2, 0.8], [0.3, 0.7]], &i).unwrap();
        let want = [[0.45, 0.55], [0.55, 0.45]];
        for (o, w) in out.iter().zip(want) {
            assert!((o[0] - w[0]).abs() < 1e-12 && (o[1] - w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn agreeing_pair_averages() {
        let i = AgreementMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap();
        let out = rectify(&[[0.2, 0.8], [0.4, 0.6]], &i).unwrap();
        for o in out {
            assert!((o[0] - 0.3).abs() < 1e-12 && (o[1] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(matches!(rectify(&[[0.5, 0.5]], &AgreementMatrix::identity(2)), Err(Error::Argument(_))));
        assert!(AgreementMatrix::from_rows(&[vec![0]]).is_err());
    }

    #[test]
    fn threshold_and_symmetrisation() {
        let m = AgreementMatrix::from_scores(2, |_, _| Ok(0.3)).unwrap();
        assert_eq!(m, AgreementMatrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap());
        // asymmetric scores averaging to exactly 0.5 stay below the cut
        let m = AgreementMatrix::from_scores(2, |i, _| Ok(if i == 0 { 0.9 } else { 0.1 })).unwrap();
        assert_eq!(m.get(0, 1), 0);
        assert!(m.is_symmetric());
        let m = AgreementMatrix::from_scores(3, |i, j| Ok(if (i + j) % 2 == 0 { 0.8 } else { 0.2 })).unwrap();
        assert!(m.is_symmetric());
        assert_eq!((m.get(0, 2), m.get(0, 1)), (1, 0));
    }
}
