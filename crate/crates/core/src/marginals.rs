//! Dense one- and two-way contingency tables.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Counts over one or two attributes, row-major over `shape`.
///
/// Exact tables hold nonnegative integers; noisy tables may hold any real.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub attrs: Vec<usize>,
    pub shape: Vec<usize>,
    pub cells: Vec<f64>,
}

/// A [`CountTable`] normalized to sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbTable {
    pub attrs: Vec<usize>,
    pub shape: Vec<usize>,
    pub cells: Vec<f64>,
}

impl CountTable {
    pub fn new(attrs: Vec<usize>, shape: Vec<usize>, cells: Vec<f64>) -> Result<Self> {
        if attrs.len() != shape.len() || attrs.is_empty() || attrs.len() > 2 {
            return Err(Error::argument("a count table spans one or two attributes"));
        }
        if shape.iter().product::<usize>() != cells.len() {
            return Err(Error::argument(format!(
                "shape {shape:?} does not match {} cells",
                cells.len()
            )));
        }
        Ok(CountTable { attrs, shape, cells })
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn get2(&self, u: usize, v: usize) -> f64 {
        self.cells[u * self.shape[1] + v]
    }

    /// Sums a two-way table over `axis`, returning the table of the other attribute.
    pub fn marginalize(&self, axis: usize) -> CountTable {
        assert_eq!(self.attrs.len(), 2, "marginalize needs a two-way table");
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let keep = 1 - axis;
        let mut out = vec![0.0; self.shape[keep]];
        for u in 0..rows {
            for v in 0..cols {
                let idx = if keep == 0 { u } else { v };
                out[idx] += self.cells[u * cols + v];
            }
        }
        CountTable {
            attrs: vec![self.attrs[keep]],
            shape: vec![self.shape[keep]],
            cells: out,
        }
    }

    pub fn transpose(&self) -> CountTable {
        assert_eq!(self.attrs.len(), 2, "transpose needs a two-way table");
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; self.cells.len()];
        for u in 0..rows {
            for v in 0..cols {
                out[v * rows + u] = self.cells[u * cols + v];
            }
        }
        CountTable {
            attrs: vec![self.attrs[1], self.attrs[0]],
            shape: vec![cols, rows],
            cells: out,
        }
    }

    /// Negative cells set to zero.
    pub fn clipped(&self) -> CountTable {
        CountTable {
            attrs: self.attrs.clone(),
            shape: self.shape.clone(),
            cells: self.cells.iter().map(|c| c.max(0.0)).collect(),
        }
    }
}

impl ProbTable {
    pub fn new(attrs: Vec<usize>, shape: Vec<usize>, cells: Vec<f64>) -> Result<Self> {
        let t = CountTable::new(attrs, shape, cells)?;
        Ok(ProbTable {
            attrs: t.attrs,
            shape: t.shape,
            cells: t.cells,
        })
    }

    /// Probability vector without attribute bookkeeping, for tests and metrics.
    pub fn from_vec(cells: Vec<f64>) -> Self {
        ProbTable {
            attrs: vec![0],
            shape: vec![cells.len()],
            cells,
        }
    }

    pub fn get2(&self, u: usize, v: usize) -> f64 {
        self.cells[u * self.shape[1] + v]
    }
}

pub fn one_way_counts(d: &Dataset, i: usize) -> Result<CountTable> {
    d.schema().check_index(i)?;
    let k = d.schema().domain_size(i);
    let mut cells = vec![0.0; k];
    for &c in d.column(i) {
        cells[c as usize] += 1.0;
    }
    Ok(CountTable {
        attrs: vec![i],
        shape: vec![k],
        cells,
    })
}

pub fn two_way_counts(d: &Dataset, i: usize, j: usize) -> Result<CountTable> {
    d.schema().check_index(i)?;
    d.schema().check_index(j)?;
    if i == j {
        return Err(Error::argument(format!(
            "two-way marginal needs distinct attributes, got ({i}, {i})"
        )));
    }
    let (ki, kj) = (d.schema().domain_size(i), d.schema().domain_size(j));
    let mut cells = vec![0.0; ki * kj];
    for (&u, &v) in d.column(i).iter().zip(d.column(j)) {
        cells[u as usize * kj + v as usize] += 1.0;
    }
    Ok(CountTable {
        attrs: vec![i, j],
        shape: vec![ki, kj],
        cells,
    })
}

/// Divides by the total. An all-zero table becomes uniform.
pub fn normalize(t: &CountTable) -> ProbTable {
    let total = t.total();
    let cells = if total > 0.0 {
        t.cells.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / t.cells.len() as f64; t.cells.len()]
    };
    ProbTable {
        attrs: t.attrs.clone(),
        shape: t.shape.clone(),
        cells,
    }
}
