use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::time::Instant;

use ecochash::codebook::{default_capacity, max_capacity, unique_bipartition_probability};
use ecochash::data::read_features;
use ecochash::eval::{
    evaluate_map, run_stream_experiment, write_curve_csv, write_summary_csv, ExperimentConfig,
    ExperimentData,
};
use ecochash::learner::default_rho;
use ecochash::persist::{load_index, save_index};
use ecochash::{
    Codebook, Error, FeatureSet, HashIndex, IndexMode, Label, ModelFile, Normalizer, Result,
    Trainer, TrainerConfig,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{CodebookStatsArgs, EvalArgs, IndexArgs, QueryArgs, TrainArgs};

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn warn_all(warnings: Vec<String>) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn check_dim(expected: usize, set: &FeatureSet) -> Result<()> {
    if set.dim() != expected {
        return Err(Error::Dimension {
            expected,
            found: set.dim(),
        });
    }
    Ok(())
}

pub fn codebook_stats(a: &CodebookStatsArgs, seed: u64) -> Result<()> {
    let capacity = a.capacity.unwrap_or_else(|| default_capacity(a.k, None));
    let rho = a.rho.unwrap_or_else(|| default_rho(a.k));
    let cb = Codebook::generate(a.k, capacity, seed)?;
    let sep = cb.separation_stats()?;
    let p = unique_bipartition_probability(rho as u32, a.k);
    let mut out = stdout();
    writeln!(
        out,
        "k,capacity,max_capacity,seed,min_distance,mean_distance,rho,unique_bipartition_probability"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        a.k,
        capacity,
        max_capacity(a.k),
        seed,
        sep.min,
        sep.mean,
        rho,
        p
    )?;
    out.flush()?;
    Ok(())
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let set = read_features(&a.input)?;
    let normalizer = if a.no_normalize {
        Normalizer::identity(set.dim())
    } else if let Some(path) = &a.calibration {
        let cal = read_features(path)?;
        check_dim(set.dim(), &cal)?;
        Normalizer::fit(&cal)?
    } else {
        Normalizer::fit(&set)?
    };

    let mut order: Vec<usize> = (0..set.len())
        .filter(|&i| set.samples()[i].label.is_some())
        .collect();
    let skipped = set.len() - order.len();
    if order.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} has no labeled rows to train on",
            a.input.display()
        )));
    }
    if let Some(s) = a.shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let labels: HashSet<&Label> = set
        .samples()
        .iter()
        .filter_map(|s| s.label.as_ref())
        .collect();
    let cfg = TrainerConfig::new(a.k)
        .rho(a.rho.unwrap_or_else(|| default_rho(a.k)))
        .eta(a.eta)
        .loss(a.loss)
        .seed(seed)
        .capacity(
            a.capacity
                .unwrap_or_else(|| default_capacity(a.k, Some(labels.len()))),
        );
    warn_all(cfg.warnings());

    let start = Instant::now();
    let mut trainer = Trainer::new(set.dim(), cfg)?;
    let mut losses = Vec::with_capacity(order.len());
    for &i in &order {
        let s = &set.samples()[i];
        let x = normalizer.apply(&s.features);
        let report = trainer.step(&x, s.label.as_ref().expect("filtered to labeled rows"))?;
        losses.push(report.surrogate_loss_before);
    }
    let wall = start.elapsed().as_secs_f64();

    let ecoc = trainer.ecoc();
    let summary = (
        ecoc.label_count(),
        ecoc.cycles(),
        ecoc.width(),
        losses.len(),
    );
    ModelFile {
        trainer,
        normalizer,
    }
    .save(&a.output_model)?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let decile = losses.len().div_ceil(10);
    let mut out = stdout();
    writeln!(
        out,
        "labels_seen,cycles,width,steps,skipped_unlabeled,mean_surrogate_loss,first_decile_loss,last_decile_loss,wall_time_s"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{:.6}",
        summary.0,
        summary.1,
        summary.2,
        summary.3,
        skipped,
        mean(&losses),
        mean(&losses[..decile]),
        mean(&losses[losses.len() - decile..]),
        wall
    )?;
    out.flush()?;
    Ok(())
}

pub fn index(a: &IndexArgs) -> Result<()> {
    let mf = ModelFile::load(&a.model)?;
    let model = mf.trainer.model();
    let set = read_features(&a.input)?;
    check_dim(model.dim(), &set)?;
    let mut idx = HashIndex::new(model.width(), a.refresh);
    let mut skipped = 0usize;
    for s in set.samples() {
        match a.mode {
            IndexMode::Codeword => match &s.label {
                Some(y) => idx.insert_labeled(s.id, y, mf.trainer.ecoc())?,
                None if a.skip_unlabeled => skipped += 1,
                None => {
                    return Err(Error::InvalidInput(format!(
                        "row {} has no label; codeword mode needs one (pass --skip-unlabeled to skip such rows)",
                        s.id
                    )))
                }
            },
            IndexMode::Phi => {
                let x = mf.normalizer.apply(&s.features);
                idx.insert_phi(s.id, &x, s.label.clone(), model)?;
            }
        }
    }
    save_index(&idx, &a.output_index)?;
    let mut out = stdout();
    writeln!(out, "entries,skipped,mode,width")?;
    writeln!(out, "{},{},{},{}", idx.len(), skipped, a.mode, idx.width())?;
    out.flush()?;
    Ok(())
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let mf = ModelFile::load(&a.model)?;
    let idx = load_index(&a.index)?;
    let model = mf.trainer.model();
    let queries = read_features(&a.queries)?;
    check_dim(model.dim(), &queries)?;
    let mut out = stdout();
    writeln!(out, "query_id,rank,id,distance")?;
    for q in queries.samples() {
        let hits = idx.query(model, &mf.normalizer.apply(&q.features), a.top)?;
        for (rank, h) in hits.iter().enumerate() {
            writeln!(out, "{},{},{},{}", q.id, rank + 1, h.id, h.distance)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<()> {
    if a.full_experiment {
        full_experiment(a, seed)
    } else {
        single_eval(a)
    }
}

fn single_eval(a: &EvalArgs) -> Result<()> {
    let (Some(model_path), Some(index_path)) = (&a.model, &a.index) else {
        return Err(Error::InvalidConfig(
            "eval needs --model and --index (or --full-experiment with --train and --index-input)"
                .into(),
        ));
    };
    let mf = ModelFile::load(model_path)?;
    let idx = load_index(index_path)?;
    let model = mf.trainer.model();
    let test = read_features(&a.test)?;
    check_dim(model.dim(), &test)?;
    let labeled = test.labeled_count();
    let map = evaluate_map(&idx, model, &test.normalized(&mf.normalizer)?)?;
    let mut out = stdout();
    writeln!(out, "labeled_queries,map")?;
    writeln!(out, "{labeled},{map}")?;
    out.flush()?;
    Ok(())
}

fn full_experiment(a: &EvalArgs, seed: u64) -> Result<()> {
    let (Some(train), Some(index)) = (&a.train, &a.index_input) else {
        return Err(Error::InvalidConfig(
            "--full-experiment needs --train and --index-input".into(),
        ));
    };
    let data = ExperimentData::new(
        read_features(train)?,
        read_features(index)?,
        read_features(&a.test)?,
    )?;
    let mut cfg = ExperimentConfig::new(a.k);
    cfg.rho = a.rho.unwrap_or(cfg.rho);
    cfg.eta = a.eta;
    cfg.loss = a.loss;
    cfg.codebook_capacity = a.capacity;
    cfg.seeds = (0..a.orderings as u64)
        .map(|i| seed.wrapping_add(i))
        .collect();
    cfg.index_mode = a.mode;
    cfg.refresh = a.refresh;
    cfg.checkpoints = a.checkpoints;
    cfg.normalize = !a.no_normalize;
    warn_all(cfg.warnings());

    let result = run_stream_experiment(&cfg, &data)?;
    if let Some(path) = &a.curve_out {
        let mut w = BufWriter::new(File::create(path)?);
        write_curve_csv(&mut w, &result.curve, a.timings)?;
        w.flush()?;
    }
    if let Some(dir) = &a.artifacts_dir {
        fs::create_dir_all(dir)?;
        for (i, run) in result.runs.iter().enumerate() {
            ModelFile {
                trainer: run.trainer.clone(),
                normalizer: run.normalizer.clone(),
            }
            .save(dir.join(format!("model-{i}.bin")))?;
            save_index(&run.index, dir.join(format!("index-{i}.bin")))?;
        }
    }
    let mut out = stdout();
    write_summary_csv(&mut out, &result)?;
    out.flush()?;
    Ok(())
}
