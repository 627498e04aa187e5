//! Labeled feature sets, feature preprocessing and the two feature file encodings.
//!
//! Text files are CSV with a header `id,label,f0,...,f{d-1}`; an empty label
//! field marks an unlabeled row. Binary files are little-endian: a `u32`
//! magic, a `u32` dimensionality, then records of `u64` id, `i32` label (-1
//! for unlabeled) and `d` `f32` values until end of file. Values are stored
//! as `f32` in both encodings, so the same data read from either one is
//! bit-identical in memory.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic number of the binary feature format (`"ECFB"` read as little-endian).
pub const FEATURE_MAGIC: u32 = u32::from_le_bytes(*b"ECFB");

/// An opaque class label. Integer labels from binary files are kept in their
/// decimal string form so both encodings name classes the same way.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The label as a binary-format integer, if it is one.
    pub fn as_i32(&self) -> Option<i32> {
        self.0.parse().ok().filter(|v: &i32| *v >= 0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_owned())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

impl From<i32> for Label {
    fn from(v: i32) -> Self {
        Label(v.to_string())
    }
}

impl From<usize> for Label {
    fn from(v: usize) -> Self {
        Label(v.to_string())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: Option<Label>,
    pub features: Vec<f64>,
}

/// Rows sharing one dimensionality, with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    samples: Vec<Sample>,
    ids: HashSet<u64>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        FeatureSet {
            dim,
            samples: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn from_samples(dim: usize, samples: impl IntoIterator<Item = Sample>) -> Result<Self> {
        let mut set = FeatureSet::new(dim);
        for s in samples {
            set.push(s)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.features.len() != self.dim {
            return Err(Error::dim(self.dim, sample.features.len()));
        }
        if !self.ids.insert(sample.id) {
            return Err(Error::Duplicate(sample.id));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_some()).count()
    }

    /// Same rows with every feature vector passed through `norm`.
    pub fn normalized(&self, norm: &Normalizer) -> Result<FeatureSet> {
        if norm.dim() != self.dim {
            return Err(Error::dim(norm.dim(), self.dim));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                id: s.id,
                label: s.label.clone(),
                features: norm.apply(&s.features),
            })
            .collect();
        Ok(FeatureSet {
            dim: self.dim,
            samples,
            ids: self.ids.clone(),
        })
    }
}

/// Mean-centering followed by scaling to unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    unit_norm: bool,
}

impl Normalizer {
    /// Fits the mean on a calibration set.
    pub fn fit(set: &FeatureSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InsufficientData(
                "cannot fit a normalizer on an empty set".into(),
            ));
        }
        let mut mean = vec![0.0; set.dim()];
        for s in set.samples() {
            for (m, v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        let n = set.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Normalizer {
            mean,
            unit_norm: true,
        })
    }

    /// Leaves features untouched.
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            unit_norm: false,
        }
    }

    pub fn from_parts(mean: Vec<f64>, unit_norm: bool) -> Self {
        Normalizer { mean, unit_norm }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn unit_norm(&self) -> bool {
        self.unit_norm
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        if self.unit_norm {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.iter_mut().for_each(|v| *v /= norm);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureEncoding {
    Csv,
    Binary,
}

/// Reads a feature file, detecting the encoding from the magic number.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    if bytes.len() >= 4 && u32::from_le_bytes(bytes[..4].try_into().unwrap()) == FEATURE_MAGIC {
        read_binary(&bytes[..])
    } else {
        read_csv(&bytes[..])
    }
}

pub fn write_features(
    path: impl AsRef<Path>,
    set: &FeatureSet,
    encoding: FeatureEncoding,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match encoding {
        FeatureEncoding::Csv => write_csv(&mut w, set)?,
        FeatureEncoding::Binary => write_binary(&mut w, set)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Format(
            "CSV header must start with `id,label`".into(),
        ));
    }
    let dim = headers.len() - 2;
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::Format(format!(
                "CSV header column {} is `{h}`, expected `f{j}`",
                j + 2
            )));
        }
    }
    let mut set = FeatureSet::new(dim);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = line + 2;
        if rec.len() != dim + 2 {
            return Err(Error::Format(format!(
                "row {row}: expected {} fields, found {}",
                dim + 2,
                rec.len()
            )));
        }
        let id: u64 = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: id `{}` is not a u64", &rec[0])))?;
        let label = match &rec[1] {
            "" => None,
            s => Some(Label::from(s)),
        };
        let features = rec
            .iter()
            .skip(2)
            .map(|v| {
                v.parse::<f32>()
                    .map(f64::from)
                    .map_err(|_| Error::Format(format!("row {row}: `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        set.push(Sample {
            id,
            label,
            features,
        })?;
    }
    Ok(set)
}

pub fn write_csv<W: Write>(writer: W, set: &FeatureSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..set.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in set.samples() {
        let mut rec = vec![
            s.id.to_string(),
            s.label.as_ref().map(|l| l.to_string()).unwrap_or_default(),
        ];
        rec.extend(s.features.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<FeatureSet> {
    let mut head = [0u8; 8];
    reader
        .read_exact(&mut head)
        .map_err(|_| Error::Format("binary feature file shorter than its header".into()))?;
    let magic = u32::from_le_bytes(head[..4].try_into().unwrap());
    if magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad feature file magic {magic:#010x}"
        )));
    }
    let dim = u32::from_le_bytes(head[4..].try_into().unwrap()) as usize;
    let rec_len = 12 + 4 * dim;
    let mut rest = Vec::new();
    BufReader::new(reader).read_to_end(&mut rest)?;
    if rest.len() % rec_len != 0 {
        return Err(Error::Format(format!(
            "binary feature payload of {} bytes is not a whole number of {rec_len}-byte records",
            rest.len()
        )));
    }
    let mut set = FeatureSet::new(dim);
    for rec in rest.chunks_exact(rec_len) {
        let id = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let raw_label = i32::from_le_bytes(rec[8..12].try_into().unwrap());
        let label = match raw_label {
            -1 => None,
            v if v >= 0 => Some(Label::from(v)),
            v => {
                return Err(Error::Format(format!(
                    "record {id}: label {v} is negative and not the unlabeled marker"
                )))
            }
        };
        let features = rec[12..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        set.push(Sample {
            id,
            label,
            features,
        })?;
    }
    Ok(set)
}

pub fn write_binary<W: Write>(mut w: W, set: &FeatureSet) -> Result<()> {
    w.write_all(&FEATURE_MAGIC.to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    for s in set.samples() {
        let label = match &s.label {
            None => -1,
            Some(l) => l.as_i32().ok_or_else(|| {
                Error::Format(format!(
                    "label `{l}` cannot be stored in the binary format (non-negative i32 only)"
                ))
            })?,
        };
        w.write_all(&s.id.to_le_bytes())?;
        w.write_all(&label.to_le_bytes())?;
        for &v in &s.features {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64, label: Option<&str>, f: &[f64]) -> Sample {
        Sample {
            id,
            label: label.map(Label::from),
            features: f.to_vec(),
        }
    }

    #[test]
    fn csv_parse_with_unlabeled_rows() {
        let text = "id,label,f0,f1\n1,cat,0.5,-1\n2,,1.25,2\n";
        let set = read_csv(text.as_bytes()).unwrap();
        assert_eq!(set.dim(), 2);
        assert_eq!(set.len(), 2);
        assert_eq!(set.samples()[0].label, Some(Label::from("cat")));
        assert_eq!(set.samples()[1].label, None);
        assert_eq!(set.samples()[1].features, vec![1.25, 2.0]);
        assert_eq!(set.labeled_count(), 1);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            read_csv("x,label,f0\n".as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(read_csv("id,label,f1\n".as_bytes()).is_err());
        assert!(read_csv("id,label,f0\n1,a,zz\n".as_bytes()).is_err());
        assert!(matches!(
            read_csv("id,label,f0\n1,a,1\n1,b,2\n".as_bytes()),
            Err(Error::Duplicate(1))
        ));
    }

    #[test]
    fn binary_and_csv_agree() {
        let set = FeatureSet::from_samples(
            3,
            vec![
                sample(10, Some("3"), &[0.1, -2.5, 1e-3]),
                sample(11, None, &[7.0, 0.0, -0.333]),
            ],
        )
        .unwrap();
        let mut bin = Vec::new();
        write_binary(&mut bin, &set).unwrap();
        let mut text = Vec::new();
        write_csv(&mut text, &set).unwrap();
        let a = read_binary(&bin[..]).unwrap();
        let b = read_csv(&text[..]).unwrap();
        assert_eq!(a, b);
        assert_eq!(bin.len(), 8 + 2 * (12 + 12));
    }

    #[test]
    fn binary_rejects_string_labels_and_truncation() {
        let set = FeatureSet::from_samples(1, vec![sample(1, Some("dog"), &[1.0])]).unwrap();
        assert!(write_binary(Vec::new(), &set).is_err());
        let ok = FeatureSet::from_samples(1, vec![sample(1, Some("4"), &[1.0])]).unwrap();
        let mut bin = Vec::new();
        write_binary(&mut bin, &ok).unwrap();
        bin.pop();
        assert!(matches!(read_binary(&bin[..]), Err(Error::Format(_))));
    }

    #[test]
    fn push_checks_dimension() {
        let mut set = FeatureSet::new(2);
        assert!(matches!(
            set.push(sample(1, None, &[1.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn normalizer_centers_and_scales() {
        let set = FeatureSet::from_samples(
            2,
            vec![sample(1, None, &[1.0, 2.0]), sample(2, None, &[3.0, 6.0])],
        )
        .unwrap();
        let n = Normalizer::fit(&set).unwrap();
        assert_eq!(n.mean(), &[2.0, 4.0]);
        let y = n.apply(&[5.0, 8.0]);
        assert!((y[0] - 0.6).abs() < 1e-12 && (y[1] - 0.8).abs() < 1e-12);
        assert_eq!(n.apply(&[2.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(Normalizer::identity(2).apply(&[3.0, 4.0]), vec![3.0, 4.0]);
    }
}
