//! Retrieval quality and index maintenance cost.
//!
//! Relevance is label equality. Queries with no relevant item in the index
//! are skipped, and AP is computed over the full ranking.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::codebook::default_capacity;
use crate::data::{FeatureSet, Label, Normalizer, Sample};
use crate::error::{Error, Result};
use crate::index::{HashIndex, IndexMode, RefreshPolicy};
use crate::learner::{default_rho, HashModel, LossKind, Trainer, TrainerConfig};
use crate::par;

/// Average precision of one ranked relevance list: the mean of precision@i
/// over the relevant positions `i`.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::UndefinedAp);
    }
    Ok(sum / hits as f64)
}

/// Mean AP over the queries that have at least one relevant item.
pub fn mean_average_precision(queries: &[Vec<bool>]) -> Result<f64> {
    let aps: Vec<f64> = queries
        .iter()
        .filter_map(|q| average_precision(q).ok())
        .collect();
    if aps.is_empty() {
        return Err(Error::InsufficientData(
            "no query has a relevant item in the index".into(),
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// mAP of the labeled rows of `queries` against `index`, where an entry is
/// relevant when it carries the query's label.
pub fn evaluate_map(index: &HashIndex, model: &HashModel, queries: &FeatureSet) -> Result<f64> {
    let labeled: Vec<&Sample> = queries
        .samples()
        .iter()
        .filter(|s| s.label.is_some())
        .collect();
    if labeled.is_empty() {
        return Err(Error::InsufficientData("no labeled query rows".into()));
    }
    let entry_labels: std::collections::HashMap<u64, Option<&Label>> = index
        .entries()
        .iter()
        .map(|e| (e.id, e.label.as_ref()))
        .collect();
    let rankings = par::map(&labeled, |q| -> Result<Vec<bool>> {
        let hits = index.query(model, &q.features, usize::MAX)?;
        Ok(hits
            .iter()
            .map(|h| entry_labels[&h.id] == q.label.as_ref())
            .collect())
    });
    let rankings = rankings.into_iter().collect::<Result<Vec<_>>>()?;
    mean_average_precision(&rankings)
}

/// Isotropic Gaussian clusters around random centers, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusters {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Norm of every class center.
    pub separation: f64,
    /// Per-coordinate standard deviation around the center.
    pub spread: f64,
    pub seed: u64,
}

impl GaussianClusters {
    /// Rows are interleaved by class (`id % classes` is the class) and values
    /// are rounded to `f32` so they survive both feature file encodings.
    pub fn generate(&self) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let centers: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v
                    .iter()
                    .map(|a| a * a)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                v.iter().map(|a| a / n * self.separation).collect()
            })
            .collect();
        let mut set = FeatureSet::new(self.dim);
        for i in 0..self.classes * self.per_class {
            let c = i % self.classes;
            let features = centers[c]
                .iter()
                .map(|m| {
                    let z: f64 = rng.sample(StandardNormal);
                    ((m + self.spread * z) as f32) as f64
                })
                .collect();
            set.push(Sample {
                id: i as u64,
                label: Some(Label::from(c)),
                features,
            })
            .expect("generated ids are unique");
        }
        set
    }
}

/// Train, index and test partitions of one dataset.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: FeatureSet,
    pub index: FeatureSet,
    pub test: FeatureSet,
}

impl ExperimentData {
    pub fn new(train: FeatureSet, index: FeatureSet, test: FeatureSet) -> Result<Self> {
        if train.is_empty() || test.is_empty() || index.is_empty() {
            return Err(Error::InsufficientData(
                "train, index and test splits must all be non-empty".into(),
            ));
        }
        if index.dim() != train.dim() {
            return Err(Error::dim(train.dim(), index.dim()));
        }
        if test.dim() != train.dim() {
            return Err(Error::dim(train.dim(), test.dim()));
        }
        Ok(ExperimentData { train, index, test })
    }

    /// Takes `train_per_class` and `test_per_class` labeled rows of every
    /// class for training and testing; everything else goes to the index.
    pub fn balanced_split(
        set: &FeatureSet,
        train_per_class: usize,
        test_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut taken: std::collections::HashMap<&Label, (usize, usize)> = Default::default();
        let (mut train, mut index, mut test) = (
            FeatureSet::new(set.dim()),
            FeatureSet::new(set.dim()),
            FeatureSet::new(set.dim()),
        );
        // keep the original row order inside each split
        let mut dest = vec![2u8; set.len()];
        for &i in &order {
            if let Some(l) = &set.samples()[i].label {
                let t = taken.entry(l).or_default();
                if t.0 < train_per_class {
                    t.0 += 1;
                    dest[i] = 0;
                } else if t.1 < test_per_class {
                    t.1 += 1;
                    dest[i] = 1;
                }
            }
        }
        for (s, d) in set.samples().iter().zip(dest) {
            match d {
                0 => train.push(s.clone())?,
                1 => test.push(s.clone())?,
                _ => index.push(s.clone())?,
            }
        }
        ExperimentData::new(train, index, test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub k: usize,
    pub rho: usize,
    pub eta: f64,
    /// One training-stream ordering per seed.
    pub seeds: Vec<u64>,
    pub index_mode: IndexMode,
    pub refresh: RefreshPolicy,
    pub loss: LossKind,
    /// Evaluation points along each stream (the last is the end of training).
    pub checkpoints: usize,
    /// Mean-center and unit-normalize, fitting the mean on the training split.
    pub normalize: bool,
    pub codebook_capacity: Option<usize>,
}

impl ExperimentConfig {
    /// Five orderings, default `rho`, unit step, codeword indexing.
    pub fn new(k: usize) -> Self {
        ExperimentConfig {
            k,
            rho: default_rho(k),
            eta: 1.0,
            seeds: (0..5).collect(),
            index_mode: IndexMode::Codeword,
            refresh: RefreshPolicy::Eager,
            loss: LossKind::Hinge,
            checkpoints: 10,
            normalize: true,
            codebook_capacity: None,
        }
    }

    pub fn orderings(&self) -> usize {
        self.seeds.len()
    }

    fn trainer_config(&self, seed: u64, anticipated_labels: usize) -> TrainerConfig {
        let capacity = self
            .codebook_capacity
            .unwrap_or_else(|| default_capacity(self.k, Some(anticipated_labels)));
        TrainerConfig::new(self.k)
            .rho(self.rho)
            .eta(self.eta)
            .seed(seed)
            .capacity(capacity)
            .loss(self.loss)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one ordering is required".into(),
            ));
        }
        if self.checkpoints == 0 {
            return Err(Error::InvalidConfig(
                "at least one checkpoint is required".into(),
            ));
        }
        self.trainer_config(0, 1).validate()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.trainer_config(0, 1).warnings()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub ordering: usize,
    pub seed: u64,
    pub iteration: u64,
    pub bit_updates_per_point: f64,
    pub map: f64,
    /// Training time up to this checkpoint, evaluation excluded.
    pub wall_time_s: f64,
}

/// Final state and scores of one ordering.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub map: f64,
    pub bit_updates_per_point: f64,
    pub training_wall_time_s: f64,
    pub curve: Vec<CurvePoint>,
    pub normalizer: Normalizer,
    pub trainer: Trainer,
    pub index: HashIndex,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub map_mean: f64,
    pub map_per_run: Vec<f64>,
    pub bit_updates_per_indexed_point: f64,
    pub training_wall_time: f64,
    pub curve: Vec<CurvePoint>,
    pub runs: Vec<RunOutcome>,
}

/// Runs the full streaming protocol once per seed in `cfg.seeds` (orderings
/// in parallel under the `parallel` feature) and averages the results.
pub fn run_stream_experiment(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let orderings: Vec<(usize, u64)> = cfg.seeds.iter().copied().enumerate().collect();
    let runs = par::map(&orderings, |&(i, seed)| run_ordering(cfg, data, i, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let map_per_run: Vec<f64> = runs.iter().map(|r| r.map).collect();
    Ok(ExperimentResult {
        map_mean: map_per_run.iter().sum::<f64>() / n,
        bit_updates_per_indexed_point: runs.iter().map(|r| r.bit_updates_per_point).sum::<f64>()
            / n,
        training_wall_time: runs.iter().map(|r| r.training_wall_time_s).sum::<f64>() / n,
        curve: runs.iter().flat_map(|r| r.curve.iter().cloned()).collect(),
        map_per_run,
        runs,
    })
}

fn checkpoint_iterations(total: usize, count: usize) -> Vec<u64> {
    let mut its: Vec<u64> = (1..=count)
        .map(|i| ((total * i) as f64 / count as f64).round() as u64)
        .filter(|&t| t > 0)
        .collect();
    its.dedup();
    its
}

/// One ordering of the streaming protocol.
pub fn run_ordering(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    ordering: usize,
    seed: u64,
) -> Result<RunOutcome> {
    let norm = if cfg.normalize {
        Normalizer::fit(&data.train)?
    } else {
        Normalizer::identity(data.train.dim())
    };
    let train = data.train.normalized(&norm)?;
    let index_set = data.index.normalized(&norm)?;
    let test = data.test.normalized(&norm)?;

    let labels: std::collections::HashSet<&Label> = train
        .samples()
        .iter()
        .filter_map(|s| s.label.as_ref())
        .collect();
    let mut trainer = Trainer::new(train.dim(), cfg.trainer_config(seed, labels.len()))?;

    let mut order: Vec<usize> = (0..train.len())
        .filter(|&i| train.samples()[i].label.is_some())
        .collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(7);
    order.shuffle(&mut shuffle);
    if order.is_empty() {
        return Err(Error::InsufficientData(
            "training split has no labeled rows".into(),
        ));
    }

    let mut index = HashIndex::new(trainer.model().width(), cfg.refresh);
    // codeword-mode rows wait until their label has a codeword
    let mut pending: Vec<&Sample> = Vec::new();
    match cfg.index_mode {
        IndexMode::Phi => {
            for s in index_set.samples() {
                index.insert_phi(s.id, &s.features, s.label.clone(), trainer.model())?;
            }
        }
        IndexMode::Codeword => {
            pending.extend(index_set.samples().iter().filter(|s| s.label.is_some()))
        }
    }
    let n_indexed = index_set.len() as f64;

    let checkpoints = checkpoint_iterations(order.len(), cfg.checkpoints);
    let mut next_cp = 0;
    let mut curve = Vec::with_capacity(checkpoints.len());
    let mut train_time = 0.0f64;
    let mut last_map = None;

    for &i in &order {
        let s = &train.samples()[i];
        let start = Instant::now();
        let report = trainer.step(&s.features, s.label.as_ref().expect("filtered"))?;
        match cfg.index_mode {
            IndexMode::Phi => {
                index.apply_model_update(&report, trainer.model())?;
            }
            IndexMode::Codeword => {
                if report.new_cycle_started {
                    // widen the (label-addressed) index alongside the model
                    index.apply_model_update(&report, trainer.model())?;
                }
            }
        }
        train_time += start.elapsed().as_secs_f64();

        if next_cp < checkpoints.len() && report.iteration == checkpoints[next_cp] {
            next_cp += 1;
            let start = Instant::now();
            index.refresh(trainer.model())?;
            train_time += start.elapsed().as_secs_f64();
            if cfg.index_mode == IndexMode::Codeword {
                pending.retain(|s| {
                    let y = s.label.as_ref().expect("pending rows are labeled");
                    if trainer.ecoc().contains(y) {
                        index
                            .insert_labeled(s.id, y, trainer.ecoc())
                            .expect("label is known and id is unique");
                        false
                    } else {
                        true
                    }
                });
            }
            match evaluate_map(&index, trainer.model(), &test) {
                Ok(map) => {
                    last_map = Some(map);
                    curve.push(CurvePoint {
                        ordering,
                        seed,
                        iteration: report.iteration,
                        bit_updates_per_point: index.ledger().bit_updates_total as f64 / n_indexed,
                        map,
                        wall_time_s: train_time,
                    });
                }
                // early checkpoints may have no query with an indexed relevant item
                Err(Error::InsufficientData(_)) => last_map = None,
                Err(e) => return Err(e),
            }
        }
    }
    let map = last_map.ok_or_else(|| {
        Error::InsufficientData("no test query has a relevant item in the final index".into())
    })?;
    Ok(RunOutcome {
        seed,
        map,
        bit_updates_per_point: index.ledger().bit_updates_total as f64 / n_indexed,
        training_wall_time_s: train_time,
        curve,
        normalizer: norm,
        trainer,
        index,
    })
}

/// One row per (ordering, checkpoint). Wall-clock times are written only
/// when `timings` is set so that the file is reproducible by default.
pub fn write_curve_csv<W: Write>(mut w: W, curve: &[CurvePoint], timings: bool) -> Result<()> {
    writeln!(
        w,
        "ordering,seed,iteration,bit_updates_per_point,map,wall_time_s"
    )?;
    for p in curve {
        let t = if timings {
            format!("{:.6}", p.wall_time_s)
        } else {
            String::new()
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.ordering, p.seed, p.iteration, p.bit_updates_per_point, p.map, t
        )?;
    }
    Ok(())
}

/// Per-ordering mAP and bit-update rows followed by a `mean` row.
pub fn write_summary_csv<W: Write>(mut w: W, result: &ExperimentResult) -> Result<()> {
    writeln!(w, "run,seed,map,bit_updates_per_point")?;
    for (i, r) in result.runs.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i, r.seed, r.map, r.bit_updates_per_point)?;
    }
    writeln!(
        w,
        "mean,,{},{}",
        result.map_mean, result.bit_updates_per_indexed_point
    )?;
    Ok(())
}
