//! The growing ternary code matrix.
//!
//! Labels are grouped into cycles of `rho`. The labels of cycle `j` own the
//! column block `[(j-1)k, jk)`: their codeword is a `k`-bit core drawn from
//! the codebook at that offset, and inactive everywhere else. When a new
//! label arrives and the current cycle is full, `k` inactive columns are
//! appended to every row and a new cycle begins.
//!
//! Rows store only the core and the cycle index; full-width codewords are
//! materialized on lookup.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use crate::bitcode::{PackedCode, TernaryCodeword};
use crate::codebook::Codebook;
use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EcocRow {
    pub label: Label,
    /// 1-based cycle in which the label was first observed.
    pub cycle: usize,
    pub core: PackedCode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub codeword: TernaryCodeword,
    pub cycle: usize,
    pub new_cycle_started: bool,
    pub is_new_label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcocMatrix {
    k: usize,
    rho: usize,
    /// Number of cycles so far (starts at 1).
    m: usize,
    /// Labels assigned in the current cycle (0 ..= rho).
    n: usize,
    rows: Vec<EcocRow>,
    lookup: HashMap<Label, usize>,
}

impl EcocMatrix {
    pub fn new(k: usize, rho: usize) -> Result<Self> {
        if k == 0 || rho == 0 {
            return Err(Error::InvalidConfig(format!(
                "k and rho must both be >= 1 (got k = {k}, rho = {rho})"
            )));
        }
        Ok(EcocMatrix {
            k,
            rho,
            m: 1,
            n: 0,
            rows: Vec::new(),
            lookup: HashMap::new(),
        })
    }

    /// Restores a matrix from its rows, checking the cycle layout.
    pub fn from_parts(
        k: usize,
        rho: usize,
        m: usize,
        n: usize,
        rows: Vec<EcocRow>,
    ) -> Result<Self> {
        let mut mat = EcocMatrix::new(k, rho)?;
        if m == 0 || n > rho {
            return Err(Error::InvalidInput(format!(
                "bad cycle counters m = {m}, n = {n}"
            )));
        }
        let mut per_cycle = vec![0usize; m];
        for (i, row) in rows.iter().enumerate() {
            if row.core.len() != k {
                return Err(Error::dim(k, row.core.len()));
            }
            if row.cycle == 0 || row.cycle > m {
                return Err(Error::Range {
                    what: "row cycle",
                    value: row.cycle,
                    lo: 1,
                    hi: m,
                });
            }
            per_cycle[row.cycle - 1] += 1;
            if mat.lookup.insert(row.label.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "label `{}` appears twice",
                    row.label
                )));
            }
        }
        let full = per_cycle[..m - 1].iter().all(|&c| c == rho);
        if !full || per_cycle[m - 1] != n {
            return Err(Error::InvalidInput(format!(
                "rows per cycle {per_cycle:?} do not match rho = {rho}, n = {n}"
            )));
        }
        mat.m = m;
        mat.n = n;
        mat.rows = rows;
        Ok(mat)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn cycles(&self) -> usize {
        self.m
    }

    /// Labels assigned in the current cycle.
    pub fn labels_in_current_cycle(&self) -> usize {
        self.n
    }

    /// Current number of columns, `m * k`.
    pub fn width(&self) -> usize {
        self.m * self.k
    }

    pub fn label_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in the order their labels were first observed.
    pub fn rows(&self) -> &[EcocRow] {
        &self.rows
    }

    pub fn contains(&self, y: &Label) -> bool {
        self.lookup.contains_key(y)
    }

    pub fn cycle_of(&self, y: &Label) -> Option<usize> {
        self.lookup.get(y).map(|&i| self.rows[i].cycle)
    }

    /// Returns the codeword of `y`, assigning one if `y` is new.
    pub fn observe_label<R: Rng + ?Sized>(
        &mut self,
        codebook: &mut Codebook,
        rng: &mut R,
        y: &Label,
    ) -> Result<Observation> {
        if let Some(&i) = self.lookup.get(y) {
            let row = &self.rows[i];
            return Ok(Observation {
                codeword: self.materialize(row),
                cycle: row.cycle,
                new_cycle_started: false,
                is_new_label: false,
            });
        }
        if codebook.k() != self.k {
            return Err(Error::Consistency(format!(
                "codebook has k = {}, matrix has k = {}",
                codebook.k(),
                self.k
            )));
        }
        // Draw before touching the counters so exhaustion leaves the matrix as it was.
        let core = codebook.draw(rng)?;
        let new_cycle_started = self.n == self.rho;
        if new_cycle_started {
            self.m += 1;
            self.n = 0;
        }
        self.n += 1;
        let row = EcocRow {
            label: y.clone(),
            cycle: self.m,
            core,
        };
        let codeword = self.materialize(&row);
        self.lookup.insert(y.clone(), self.rows.len());
        self.rows.push(row);
        Ok(Observation {
            codeword,
            cycle: self.m,
            new_cycle_started,
            is_new_label: true,
        })
    }

    /// The codeword of a known label, padded to the current width.
    pub fn find(&self, y: &Label) -> Result<TernaryCodeword> {
        self.lookup
            .get(y)
            .map(|&i| self.materialize(&self.rows[i]))
            .ok_or_else(|| Error::NotFound {
                what: "label",
                key: y.to_string(),
            })
    }

    /// Columns owned by cycle `j` (1-based).
    pub fn cycle_columns(&self, j: usize) -> Result<Range<usize>> {
        if j == 0 || j > self.m {
            return Err(Error::Range {
                what: "cycle",
                value: j,
                lo: 1,
                hi: self.m,
            });
        }
        Ok((j - 1) * self.k..j * self.k)
    }

    /// Full-width codewords of all labels, in row order.
    pub fn codewords(&self) -> Vec<(Label, TernaryCodeword)> {
        self.rows
            .iter()
            .map(|r| (r.label.clone(), self.materialize(r)))
            .collect()
    }

    fn materialize(&self, row: &EcocRow) -> TernaryCodeword {
        TernaryCodeword::with_core(&row.core, (row.cycle - 1) * self.k, self.width())
            .expect("row cycle is within the current width")
    }
}
