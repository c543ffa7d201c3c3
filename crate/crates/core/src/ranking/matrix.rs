use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ranking::RankingError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Aggressiveness,
    Resistance,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixKind::Aggressiveness => "aggressiveness",
            MatrixKind::Resistance => "resistance",
        })
    }
}

/// Square matrix of pairwise comparison ratios, rows and columns labeled by
/// model id. Diagonal entries are 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix<T> {
    model_ids: Vec<String>,
    values: Vec<T>,
    kind: MatrixKind,
}

impl<T: Scalar> PairMatrix<T> {
    pub fn identity(model_ids: Vec<String>, kind: MatrixKind) -> Self {
        let j = model_ids.len();
        let mut values = vec![T::zero(); j * j];
        for i in 0..j {
            values[i * j + i] = T::one();
        }
        PairMatrix {
            model_ids,
            values,
            kind,
        }
    }

    /// Builds a matrix from row-major values, checking the diagonal and signs.
    pub fn from_rows(model_ids: Vec<String>, values: Vec<T>, kind: MatrixKind) -> Result<Self, RankingError> {
        let j = model_ids.len();
        if values.len() != j * j {
            return Err(RankingError::Shape(format!("{} values for {j} models", values.len())));
        }
        let m = PairMatrix {
            model_ids,
            values,
            kind,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), RankingError> {
        let j = self.len();
        for r in 0..j {
            for c in 0..j {
                let v = self.get(r, c);
                if !v.is_finite() || v < T::zero() {
                    return Err(RankingError::InvalidEntry {
                        row: self.model_ids[r].clone(),
                        col: self.model_ids[c].clone(),
                        value: v.as_f64(),
                    });
                }
                if r == c && v != T::one() {
                    return Err(RankingError::Shape(format!(
                        "diagonal entry for `{}` is {v}, expected 1",
                        self.model_ids[r]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == model_id)
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.len() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let j = self.len();
        self.values[row * j + col] = value;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Reorders rows and columns so that new index `k` holds old index `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let j = self.len();
        assert_eq!(perm.len(), j);
        let mut out = PairMatrix::identity(perm.iter().map(|&p| self.model_ids[p].clone()).collect(), self.kind);
        for r in 0..j {
            for c in 0..j {
                out.values[r * j + c] = self.get(perm[r], perm[c]);
            }
        }
        out
    }

    /// Embeds this matrix in the top-left block of a larger identity matrix.
    pub fn expanded(&self, extra: &[String]) -> Self {
        let mut ids = self.model_ids.clone();
        ids.extend(extra.iter().cloned());
        let mut out = PairMatrix::identity(ids, self.kind);
        for r in 0..self.len() {
            for c in 0..self.len() {
                out.set(r, c, self.get(r, c));
            }
        }
        out
    }

    /// CSV with a header row and a header column of model ids. Extra
    /// `# key=value` lines may precede the table.
    pub fn write_csv<W: Write>(&self, comments: &[String], mut out: W) -> Result<(), RankingError> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.kind.to_string()];
        header.extend(self.model_ids.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut row = vec![self.model_ids[r].clone()];
            row.extend((0..self.len()).map(|c| self.get(r, c).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(kind: MatrixKind, input: R) -> Result<Self, RankingError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(input);
        let ids: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::with_capacity(ids.len() * ids.len());
        for (r, row) in rdr.records().enumerate() {
            let row = row?;
            if r >= ids.len() || row.len() != ids.len() + 1 || row[0] != ids[r] {
                return Err(RankingError::Shape(format!(
                    "matrix row {} does not match header",
                    r + 1
                )));
            }
            for cell in row.iter().skip(1) {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|e| RankingError::Shape(format!("bad entry `{cell}`: {e}")))?;
                values.push(T::lit(v));
            }
        }
        PairMatrix::from_rows(ids, values, kind)
    }
}
