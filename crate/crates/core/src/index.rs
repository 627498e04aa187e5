//! The hash table over binary and ternary codes.
//!
//! Entries are stored either under the codeword of their label (codeword
//! mode), which never changes once written, or under `phi(x)` (Φ mode), which
//! must follow the hash functions as they are trained. A training step only
//! changes the functions of one cycle block, so a Φ-mode refresh recomputes
//! just those columns from the retained feature vector. Every recomputed and
//! stored bit is counted in the [`UpdateLedger`], whether or not it flips.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::bitcode::{hamming_masked, hamming_masked_padded, TernaryCodeword};
use crate::data::Label;
use crate::ecoc::EcocMatrix;
use crate::error::{Error, Result};
use crate::learner::{HashModel, StepReport};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Codeword,
    Phi,
}

impl FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codeword" => Ok(IndexMode::Codeword),
            "phi" => Ok(IndexMode::Phi),
            other => Err(Error::InvalidConfig(format!(
                "unknown index mode `{other}` (expected codeword or phi)"
            ))),
        }
    }
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexMode::Codeword => "codeword",
            IndexMode::Phi => "phi",
        })
    }
}

/// When Φ-mode entries are brought up to date after model updates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RefreshPolicy {
    /// After every step.
    #[default]
    Eager,
    /// Every `every` steps; each cycle block touched since the last refresh
    /// is recomputed once.
    Batched { every: u64 },
}

impl FromStr for RefreshPolicy {
    type Err = Error;

    /// `eager` or `batched:<steps>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "eager" {
            return Ok(RefreshPolicy::Eager);
        }
        if let Some(n) = s.strip_prefix("batched:") {
            let every: u64 = n
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad refresh interval `{n}`")))?;
            if every == 0 {
                return Err(Error::InvalidConfig("refresh interval must be >= 1".into()));
            }
            return Ok(RefreshPolicy::Batched { every });
        }
        Err(Error::InvalidConfig(format!(
            "unknown refresh policy `{s}` (expected eager or batched:<steps>)"
        )))
    }
}

impl fmt::Display for RefreshPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefreshPolicy::Eager => f.write_str("eager"),
            RefreshPolicy::Batched { every } => write!(f, "batched:{every}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub mode: IndexMode,
    /// Codeword mode: the label's codeword at insertion time. Φ mode: the
    /// code of `features`, all positions active.
    pub code: TernaryCodeword,
    pub label: Option<Label>,
    /// Retained for Φ-mode refreshes.
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateLedger {
    pub bit_updates_total: u64,
    pub entries_touched_total: u64,
    /// Recomputed bits whose stored value changed.
    pub bits_flipped_total: u64,
    /// `(iteration, bits recomputed)` per refresh.
    pub per_iteration: Vec<(u64, u64)>,
}

impl UpdateLedger {
    fn record(&mut self, iteration: u64, bits: u64, entries: u64, flipped: u64) {
        self.bit_updates_total += bits;
        self.entries_touched_total += entries;
        self.bits_flipped_total += flipped;
        self.per_iteration.push((iteration, bits));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub id: u64,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelHit {
    pub label: Label,
    pub distance: u32,
    /// Codeword-mode entries of the label, in insertion order.
    pub ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    width: usize,
    policy: RefreshPolicy,
    entries: Vec<IndexEntry>,
    ids: HashSet<u64>,
    ledger: UpdateLedger,
    /// Column blocks changed since the last refresh, keyed by start.
    dirty: BTreeMap<usize, usize>,
    steps_since_refresh: u64,
}

impl HashIndex {
    /// An empty index for codes of `width` bits.
    pub fn new(width: usize, policy: RefreshPolicy) -> Self {
        HashIndex {
            width,
            policy,
            entries: Vec::new(),
            ids: HashSet::new(),
            ledger: UpdateLedger::default(),
            dirty: BTreeMap::new(),
            steps_since_refresh: 0,
        }
    }

    pub fn from_parts(
        width: usize,
        policy: RefreshPolicy,
        entries: Vec<IndexEntry>,
        ledger: UpdateLedger,
    ) -> Result<Self> {
        let mut idx = HashIndex::new(width, policy);
        for e in entries {
            idx.check_entry(&e)?;
            idx.push(e)?;
        }
        idx.ledger = ledger;
        Ok(idx)
    }

    fn check_entry(&self, e: &IndexEntry) -> Result<()> {
        match e.mode {
            IndexMode::Codeword if e.code.len() > self.width => {
                Err(Error::dim(self.width, e.code.len()))
            }
            IndexMode::Phi if e.code.len() != self.width => {
                Err(Error::dim(self.width, e.code.len()))
            }
            IndexMode::Phi if e.features.is_none() => Err(Error::InvalidInput(format!(
                "phi-mode entry {} has no retained features",
                e.id
            ))),
            _ => Ok(()),
        }
    }

    fn push(&mut self, e: IndexEntry) -> Result<()> {
        if !self.ids.insert(e.id) {
            return Err(Error::Duplicate(e.id));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn policy(&self) -> RefreshPolicy {
        self.policy
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ledger(&self) -> &UpdateLedger {
        &self.ledger
    }

    pub fn phi_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.mode == IndexMode::Phi)
            .count()
    }

    /// True when no model update is waiting to be applied to Φ-mode codes.
    pub fn is_fresh(&self) -> bool {
        self.dirty.is_empty()
    }

    /// Stores `id` under the codeword of its label.
    pub fn insert_labeled(&mut self, id: u64, y: &Label, ecoc: &EcocMatrix) -> Result<()> {
        if self.ids.contains(&id) {
            return Err(Error::Duplicate(id));
        }
        let code = ecoc.find(y)?;
        if code.len() > self.width {
            return Err(Error::Consistency(format!(
                "code matrix width {} exceeds index width {}",
                code.len(),
                self.width
            )));
        }
        self.push(IndexEntry {
            id,
            mode: IndexMode::Codeword,
            code,
            label: Some(y.clone()),
            features: None,
        })
    }

    /// Stores `id` under `phi(x)`.
    pub fn insert_unlabeled(&mut self, id: u64, x: &[f64], model: &HashModel) -> Result<()> {
        self.insert_phi(id, x, None, model)
    }

    /// Φ-mode insert that also keeps the label (used for evaluation only).
    pub fn insert_phi(
        &mut self,
        id: u64,
        x: &[f64],
        label: Option<Label>,
        model: &HashModel,
    ) -> Result<()> {
        if model.width() == 0 {
            return Err(Error::InvalidConfig(
                "cannot index with a zero-width model".into(),
            ));
        }
        if model.width() != self.width {
            return Err(Error::Consistency(format!(
                "model width {} differs from index width {}",
                model.width(),
                self.width
            )));
        }
        if self.ids.contains(&id) {
            return Err(Error::Duplicate(id));
        }
        let code = TernaryCodeword::all_active(model.phi(x)?);
        self.push(IndexEntry {
            id,
            mode: IndexMode::Phi,
            code,
            label,
            features: Some(x.to_vec()),
        })
    }

    /// Registers a training step. Under the eager policy the touched block
    /// is recomputed for every Φ-mode entry right away; under the batched
    /// policy this happens every `every` steps. Returns the number of bits
    /// recomputed by this call.
    pub fn apply_model_update(&mut self, report: &StepReport, model: &HashModel) -> Result<u64> {
        if report.width != model.width() {
            return Err(Error::Consistency(format!(
                "step report width {} differs from model width {}",
                report.width,
                model.width()
            )));
        }
        let grown = if report.new_cycle_started {
            report.touched_columns.len()
        } else {
            0
        };
        if self.width + grown != model.width() || report.touched_columns.end > model.width() {
            return Err(Error::Consistency(format!(
                "stale step report: index width {} + {grown} new columns != model width {}",
                self.width,
                model.width()
            )));
        }
        self.width = model.width();
        self.mark_dirty(report.touched_columns.clone());
        self.steps_since_refresh += 1;
        let due = match self.policy {
            RefreshPolicy::Eager => true,
            RefreshPolicy::Batched { every } => self.steps_since_refresh >= every,
        };
        if due {
            self.flush(model, report.iteration)
        } else {
            Ok(0)
        }
    }

    /// Applies any pending updates now. Returns the bits recomputed.
    pub fn refresh(&mut self, model: &HashModel) -> Result<u64> {
        self.flush(model, model.iteration())
    }

    fn mark_dirty(&mut self, cols: Range<usize>) {
        let end = self.dirty.entry(cols.start).or_insert(cols.end);
        *end = (*end).max(cols.end);
    }

    fn flush(&mut self, model: &HashModel, iteration: u64) -> Result<u64> {
        self.steps_since_refresh = 0;
        if self.dirty.is_empty() {
            return Ok(0);
        }
        if model.width() != self.width {
            return Err(Error::Consistency(format!(
                "model width {} differs from index width {}",
                model.width(),
                self.width
            )));
        }
        let blocks: Vec<Range<usize>> = self.dirty.iter().map(|(&s, &e)| s..e).collect();
        let width = self.width;
        let flips = par::map_mut(&mut self.entries, |e| -> Result<Option<u64>> {
            if e.mode != IndexMode::Phi {
                return Ok(None);
            }
            let x = e.features.as_deref().expect("phi entries retain features");
            let old = e.code.values().clone();
            let mut values = old.clone();
            values.resize(width);
            let mut flipped = 0u64;
            for block in &blocks {
                for (t, bit) in block.clone().zip(model.bits(block.clone(), x)?) {
                    if t < old.len() && old.get(t) != bit {
                        flipped += 1;
                    }
                    values.set(t, bit);
                }
            }
            e.code = TernaryCodeword::all_active(values);
            Ok(Some(flipped))
        });
        let mut touched = 0u64;
        let mut flipped = 0u64;
        for f in flips {
            if let Some(n) = f? {
                touched += 1;
                flipped += n;
            }
        }
        let per_entry: u64 = blocks.iter().map(|b| b.len() as u64).sum();
        let bits = touched * per_entry;
        self.ledger.record(iteration, bits, touched, flipped);
        self.dirty.clear();
        Ok(bits)
    }

    fn check_query(&self, model: &HashModel) -> Result<()> {
        if !self.is_fresh() {
            return Err(Error::Consistency(
                "index has pending model updates; refresh it before querying".into(),
            ));
        }
        if model.width() != self.width {
            return Err(Error::Consistency(format!(
                "model width {} differs from index width {}",
                model.width(),
                self.width
            )));
        }
        Ok(())
    }

    /// The `top_n` entries nearest to `phi(x_q)` by masked Hamming distance,
    /// ties broken by insertion order.
    pub fn query(&self, model: &HashModel, x_q: &[f64], top_n: usize) -> Result<Vec<Hit>> {
        self.check_query(model)?;
        let q = model.phi(x_q)?;
        let dists = par::map(&self.entries, |e| hamming_masked_padded(&q, &e.code));
        let mut hits = self
            .entries
            .iter()
            .zip(dists)
            .map(|(e, d)| d.map(|distance| Hit { id: e.id, distance }))
            .collect::<Result<Vec<_>>>()?;
        // stable: equal distances keep insertion order
        hits.sort_by_key(|h| h.distance);
        hits.truncate(top_n);
        Ok(hits)
    }

    /// Ranks the label codewords by masked distance to `phi(x_q)` and lists
    /// the codeword-mode entries of each label. Ties keep label order.
    pub fn query_by_codeword(
        &self,
        ecoc: &EcocMatrix,
        model: &HashModel,
        x_q: &[f64],
    ) -> Result<Vec<LabelHit>> {
        if ecoc.width() != model.width() {
            return Err(Error::Consistency(format!(
                "code matrix width {} differs from model width {}",
                ecoc.width(),
                model.width()
            )));
        }
        let q = model.phi(x_q)?;
        let mut members: HashMap<&Label, Vec<u64>> = HashMap::new();
        for e in &self.entries {
            if let (IndexMode::Codeword, Some(l)) = (e.mode, &e.label) {
                members.entry(l).or_default().push(e.id);
            }
        }
        let mut hits = ecoc
            .codewords()
            .into_iter()
            .map(|(label, cw)| {
                let distance = hamming_masked(&q, &cw)?;
                let ids = members.get(&label).cloned().unwrap_or_default();
                Ok(LabelHit {
                    label,
                    distance,
                    ids,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        hits.sort_by_key(|h| h.distance);
        Ok(hits)
    }
}
