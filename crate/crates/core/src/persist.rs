//! Model and index files.
//!
//! Both formats are little-endian, start with a 4-byte magic and a `u32`
//! version, and have exactly one encoding per value, so loading and saving
//! again reproduces the input byte for byte. Unknown versions are rejected.
//!
//! Model file (`ECHM`): trainer config, the position of the codeword-draw
//! stream, the unused codebook pool, the code matrix rows (label, cycle,
//! `k`-bit core), the hash functions as `f64`, and the feature normalizer.
//!
//! Index file (`ECHI`): width, refresh policy, entries (id, mode, label,
//! ternary code, retained features) and the update ledger.

use std::fs;
use std::path::Path;

use crate::bitcode::{PackedCode, TernaryCodeword};
use crate::codebook::Codebook;
use crate::data::{Label, Normalizer};
use crate::ecoc::{EcocMatrix, EcocRow};
use crate::error::{Error, Result};
use crate::index::{HashIndex, IndexEntry, IndexMode, RefreshPolicy, UpdateLedger};
use crate::learner::{HashModel, LossKind, Trainer, TrainerConfig};

pub const MODEL_MAGIC: [u8; 4] = *b"ECHM";
pub const INDEX_MAGIC: [u8; 4] = *b"ECHI";
pub const MODEL_VERSION: u32 = 1;
pub const INDEX_VERSION: u32 = 1;

#[derive(Default)]
struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits the u32 file field");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    /// Words only; the bit length is implied by the context.
    fn words(&mut self, c: &PackedCode) {
        for &w in c.words() {
            self.u64(w);
        }
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len());
        for &x in v {
            self.f64(x);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Dec { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "file truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string field is not UTF-8".into()))
    }
    fn code(&mut self, len: usize) -> Result<PackedCode> {
        let words = (0..len.div_ceil(64))
            .map(|_| self.u64())
            .collect::<Result<Vec<_>>>()?;
        let padding_clear = words
            .last()
            .map(|w| len.is_multiple_of(64) || w >> (len % 64) == 0)
            .unwrap_or(true);
        if !padding_clear {
            return Err(Error::Format("code has bits set beyond its length".into()));
        }
        PackedCode::from_words(len, words)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("bad flag byte {v}"))),
        }
    }
    fn header(&mut self, magic: [u8; 4], version: u32, what: &str) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("not a {what} file (bad magic)")));
        }
        let v = self.u32()? as u32;
        if v != version {
            return Err(Error::Format(format!(
                "{what} file version {v} is not supported (expected {version})"
            )));
        }
        Ok(())
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// A trained model together with the feature preprocessing it expects.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub trainer: Trainer,
    pub normalizer: Normalizer,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tr = &self.trainer;
        let cfg = tr.config();
        let mut e = Enc::default();
        e.buf.extend_from_slice(&MODEL_MAGIC);
        e.u32(MODEL_VERSION as usize);

        e.u32(cfg.k);
        e.u32(cfg.rho);
        e.f64(cfg.eta);
        e.u64(cfg.seed);
        e.u64(cfg.codebook_capacity as u64);
        e.u8(match cfg.loss {
            LossKind::Hinge => 0,
            LossKind::Logistic => 1,
        });
        e.u128(tr.draw_word_pos());

        let cb = tr.codebook();
        e.u64(cb.seed());
        e.u64(cb.drawn() as u64);
        e.u32(cb.remaining());
        for c in cb.pool() {
            e.words(c);
        }

        let ecoc = tr.ecoc();
        e.u32(ecoc.cycles());
        e.u32(ecoc.labels_in_current_cycle());
        e.u32(ecoc.label_count());
        for row in ecoc.rows() {
            e.str(row.label.as_str());
            e.u32(row.cycle);
            e.words(&row.core);
        }

        let m = tr.model();
        e.u32(m.dim());
        e.u64(m.iteration());
        e.f64s(m.raw_weights());

        e.u8(self.normalizer.unit_norm() as u8);
        e.f64s(self.normalizer.mean());
        e.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Dec::new(bytes);
        d.header(MODEL_MAGIC, MODEL_VERSION, "model")?;

        let k = d.u32()?;
        let rho = d.u32()?;
        let eta = d.f64()?;
        let seed = d.u64()?;
        let capacity = d.u64()? as usize;
        let loss = match d.u8()? {
            0 => LossKind::Hinge,
            1 => LossKind::Logistic,
            v => return Err(Error::Format(format!("unknown loss tag {v}"))),
        };
        let cfg = TrainerConfig {
            k,
            rho,
            eta,
            seed,
            codebook_capacity: capacity,
            loss,
        };
        let word_pos = d.u128()?;

        let cb_seed = d.u64()?;
        let drawn = d.u64()? as usize;
        let pool_len = d.u32()?;
        let pool = (0..pool_len)
            .map(|_| d.code(k))
            .collect::<Result<Vec<_>>>()?;
        let codebook = Codebook::from_parts(k, cb_seed, pool, drawn)?;

        let m = d.u32()?;
        let n = d.u32()?;
        let n_rows = d.u32()?;
        let rows = (0..n_rows)
            .map(|_| {
                Ok(EcocRow {
                    label: Label::new(d.str()?),
                    cycle: d.u32()?,
                    core: d.code(k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ecoc = EcocMatrix::from_parts(k, rho, m, n, rows)?;

        let dim = d.u32()?;
        let iteration = d.u64()?;
        let weights = d.f64s()?;
        let model = HashModel::from_parts(dim, weights, iteration)?;

        let unit_norm = d.flag()?;
        let mean = d.f64s()?;
        if mean.len() != dim {
            return Err(Error::dim(dim, mean.len()));
        }
        d.finish()?;
        Ok(ModelFile {
            trainer: Trainer::from_parts(cfg, model, ecoc, codebook, word_pos)?,
            normalizer: Normalizer::from_parts(mean, unit_norm),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelFile::from_bytes(&fs::read(path)?)
    }
}

pub fn index_to_bytes(index: &HashIndex) -> Result<Vec<u8>> {
    if !index.is_fresh() {
        return Err(Error::Consistency(
            "index has pending model updates; refresh it before saving".into(),
        ));
    }
    let mut e = Enc::default();
    e.buf.extend_from_slice(&INDEX_MAGIC);
    e.u32(INDEX_VERSION as usize);
    e.u32(index.width());
    match index.policy() {
        RefreshPolicy::Eager => {
            e.u8(0);
            e.u64(0);
        }
        RefreshPolicy::Batched { every } => {
            e.u8(1);
            e.u64(every);
        }
    }
    e.u32(index.len());
    for entry in index.entries() {
        e.u64(entry.id);
        e.u8(match entry.mode {
            IndexMode::Codeword => 0,
            IndexMode::Phi => 1,
        });
        match &entry.label {
            Some(l) => {
                e.u8(1);
                e.str(l.as_str());
            }
            None => e.u8(0),
        }
        e.u32(entry.code.len());
        e.words(entry.code.values());
        e.words(entry.code.mask());
        match &entry.features {
            Some(x) => {
                e.u8(1);
                e.f64s(x);
            }
            None => e.u8(0),
        }
    }
    let l = index.ledger();
    e.u64(l.bit_updates_total);
    e.u64(l.entries_touched_total);
    e.u64(l.bits_flipped_total);
    e.u64(l.per_iteration.len() as u64);
    for &(it, bits) in &l.per_iteration {
        e.u64(it);
        e.u64(bits);
    }
    Ok(e.buf)
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<HashIndex> {
    let mut d = Dec::new(bytes);
    d.header(INDEX_MAGIC, INDEX_VERSION, "index")?;
    let width = d.u32()?;
    let policy = match (d.u8()?, d.u64()?) {
        (0, 0) => RefreshPolicy::Eager,
        (1, every) if every > 0 => RefreshPolicy::Batched { every },
        (t, v) => return Err(Error::Format(format!("bad refresh policy ({t}, {v})"))),
    };
    let n = d.u32()?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let id = d.u64()?;
        let mode = match d.u8()? {
            0 => IndexMode::Codeword,
            1 => IndexMode::Phi,
            v => return Err(Error::Format(format!("unknown index mode tag {v}"))),
        };
        let label = if d.flag()? {
            Some(Label::new(d.str()?))
        } else {
            None
        };
        let len = d.u32()?;
        let values = d.code(len)?;
        let mask = d.code(len)?;
        if values
            .words()
            .iter()
            .zip(mask.words())
            .any(|(v, m)| v & !m != 0)
        {
            return Err(Error::Format(format!(
                "entry {id} has value bits at inactive positions"
            )));
        }
        let code = TernaryCodeword::new(values, mask)?;
        let features = if d.flag()? { Some(d.f64s()?) } else { None };
        entries.push(IndexEntry {
            id,
            mode,
            code,
            label,
            features,
        });
    }
    let mut ledger = UpdateLedger {
        bit_updates_total: d.u64()?,
        entries_touched_total: d.u64()?,
        bits_flipped_total: d.u64()?,
        per_iteration: Vec::new(),
    };
    let n_it = d.u64()?;
    for _ in 0..n_it {
        ledger.per_iteration.push((d.u64()?, d.u64()?));
    }
    if ledger.per_iteration.iter().map(|p| p.1).sum::<u64>() != ledger.bit_updates_total {
        return Err(Error::Format(
            "ledger total disagrees with its per-iteration counts".into(),
        ));
    }
    d.finish()?;
    HashIndex::from_parts(width, policy, entries, ledger)
}

pub fn save_index(index: &HashIndex, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, index_to_bytes(index)?)?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<HashIndex> {
    index_from_bytes(&fs::read(path)?)
}
