//! Ranking metrics and the train/validate/test experiment driver.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::ctdg::{Event, EventStream};
use crate::data::{negative_sampler, SplitSpec};
use crate::error::{Error, Result};
use crate::tgn::StreamModel;

/// How a positive ties with equal negative scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TieRule {
    Optimistic,
    Pessimistic,
    #[default]
    Average,
}

impl std::str::FromStr for TieRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimistic" => Ok(Self::Optimistic),
            "pessimistic" => Ok(Self::Pessimistic),
            "average" => Ok(Self::Average),
            other => Err(Error::Config(format!("unknown tie rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for TieRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Optimistic => "optimistic",
            Self::Pessimistic => "pessimistic",
            Self::Average => "average",
        })
    }
}

/// `1 + #{neg > pos}` plus the tie share given by `rule`.
pub fn rank(positive: f64, negatives: &[f64], rule: TieRule) -> f64 {
    let above = negatives.iter().filter(|&&n| n > positive).count() as f64;
    let ties = negatives.iter().filter(|&&n| n == positive).count() as f64;
    1.0 + above
        + match rule {
            TieRule::Optimistic => 0.0,
            TieRule::Pessimistic => ties,
            TieRule::Average => ties / 2.0,
        }
}

pub fn mrr(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    Ok(ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64)
}

/// Scores of one link query: the true destination and its negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub event: Event,
    pub positive_score: f64,
    pub negative_scores: Vec<f64>,
}

impl RankedQuery {
    pub fn rank(&self, rule: TieRule) -> f64 {
        rank(self.positive_score, &self.negative_scores, rule)
    }
}

/// Driver settings that are independent of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 runs a
    /// single epoch.
    pub patience: usize,
    /// Negatives per evaluation query.
    pub eval_negatives: usize,
    pub split: SplitSpec,
    pub seed: u64,
    pub tie_rule: TieRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            max_epochs: 50,
            patience: 5,
            eval_negatives: 20,
            split: SplitSpec::default(),
            seed: 0,
            tie_rule: TieRule::Average,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One JSON-lines metric record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub mrr: Option<f64>,
    pub wallclock: f64,
}

impl EpochRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    /// Resolved configuration, echoed for provenance.
    pub config: Vec<(String, String)>,
    pub seed: u64,
    /// Fingerprint of the event stream the run consumed.
    pub dataset: String,
    pub train_loss: Vec<f64>,
    pub val_mrr: Vec<f64>,
    /// 1-based epoch whose validation MRR selected the test state.
    pub best_epoch: usize,
    pub test_mrr: f64,
    pub test_loss: f64,
    pub test_queries: usize,
    pub eval_negatives: usize,
    pub wallclock: f64,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

impl ExperimentReport {
    /// Flat `key=value` lines; `wallclock` is left out when not requested
    /// so that reruns can be compared byte for byte.
    pub fn to_kv(&self, with_wallclock: bool) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "dataset={}", self.dataset);
        let _ = writeln!(out, "epochs={}", self.val_mrr.len());
        let _ = writeln!(out, "train_loss={}", join(&self.train_loss));
        let _ = writeln!(out, "val_mrr={}", join(&self.val_mrr));
        let _ = writeln!(out, "best_epoch={}", self.best_epoch);
        let _ = writeln!(out, "test_mrr={}", self.test_mrr);
        let _ = writeln!(out, "test_loss={}", self.test_loss);
        let _ = writeln!(out, "test_queries={}", self.test_queries);
        let _ = writeln!(out, "eval_negatives={}", self.eval_negatives);
        if with_wallclock {
            let _ = writeln!(out, "wallclock={}", self.wallclock);
        }
        out
    }

    /// Parses the output of [`ExperimentReport::to_kv`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut r = ExperimentReport {
            config: Vec::new(),
            seed: 0,
            dataset: String::new(),
            train_loss: Vec::new(),
            val_mrr: Vec::new(),
            best_epoch: 0,
            test_mrr: f64::NAN,
            test_loss: f64::NAN,
            test_queries: 0,
            eval_negatives: 0,
            wallclock: f64::NAN,
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse(format!("bad value `{v}` for `{k}`")))
        }
        fn list(k: &str, v: &str) -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| num(k, x)).collect()
        }
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, found `{line}`")))?;
            match k {
                "seed" => r.seed = num(k, v)?,
                "dataset" => r.dataset = v.to_string(),
                "epochs" => {}
                "train_loss" => r.train_loss = list(k, v)?,
                "val_mrr" => r.val_mrr = list(k, v)?,
                "best_epoch" => r.best_epoch = num(k, v)?,
                "test_mrr" => r.test_mrr = num(k, v)?,
                "test_loss" => r.test_loss = num(k, v)?,
                "test_queries" => r.test_queries = num(k, v)?,
                "eval_negatives" => r.eval_negatives = num(k, v)?,
                "wallclock" => r.wallclock = num(k, v)?,
                _ => match k.strip_prefix("config.") {
                    Some(key) => r.config.push((key.to_string(), v.to_string())),
                    None => return Err(Error::Parse(format!("unknown report key `{k}`"))),
                },
            }
        }
        Ok(r)
    }
}

/// Test MRR of `a` minus that of `b`, in percentage points. Both reports
/// must come from the same data and seed.
pub fn compare_arms(a: &ExperimentReport, b: &ExperimentReport) -> Result<f64> {
    if a.seed != b.seed {
        return Err(Error::Mismatch(format!("seeds {} and {}", a.seed, b.seed)));
    }
    if a.dataset != b.dataset {
        return Err(Error::Mismatch(format!("datasets `{}` and `{}`", a.dataset, b.dataset)));
    }
    if a.eval_negatives != b.eval_negatives {
        return Err(Error::Mismatch(format!(
            "{} and {} negatives per query",
            a.eval_negatives, b.eval_negatives
        )));
    }
    Ok(100.0 * (a.test_mrr - b.test_mrr))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Order-sensitive FNV-1a digest of the events.
pub fn stream_fingerprint(stream: &EventStream) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(stream.num_nodes() as u64);
    for e in stream.events() {
        eat(e.src as u64);
        eat(e.dst as u64);
        eat(e.t.to_bits());
        for f in &e.feat {
            eat(f.to_bits());
        }
    }
    format!("{}:{h:016x}", stream.len())
}

/// Per-batch training losses and per-query test scores of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub train_losses: Vec<f64>,
    pub test_scores: Vec<Vec<f64>>,
}

pub struct ExperimentOutcome<M> {
    pub report: ExperimentReport,
    pub trace: RunTrace,
    /// Model at the best validation epoch, after consuming the test split.
    pub model: M,
}

const TRAIN_NEG_STREAM: u64 = 0x7472_6169_6e00;
const EVAL_NEG_STREAM: u64 = 0x6576_616c_0000;

fn distinct_destinations(events: &[Event]) -> Vec<usize> {
    events.iter().map(|e| e.dst).collect::<BTreeSet<_>>().into_iter().collect()
}

struct EvalPass {
    loss: f64,
    queries: Vec<RankedQuery>,
}

fn evaluate<M: StreamModel>(
    model: &mut M,
    events: &[Event],
    offset: usize,
    pool: &[usize],
    cfg: &ExperimentConfig,
) -> Result<EvalPass> {
    let mut loss_sum = 0.0;
    let mut weight = 0usize;
    let mut queries = Vec::with_capacity(events.len());
    for (b, batch) in events.chunks(cfg.batch_size).enumerate() {
        let mut candidates = Vec::with_capacity(batch.len());
        for (i, e) in batch.iter().enumerate() {
            let q = (offset + b * cfg.batch_size + i) as u64;
            let available = pool.iter().filter(|&&c| c != e.src && c != e.dst).count();
            let k = cfg.eval_negatives.min(available);
            let mut c = vec![e.dst];
            c.extend(negative_sampler(e.src, e.dst, q, pool, k, cfg.seed ^ EVAL_NEG_STREAM)?);
            candidates.push(c);
        }
        let out = model.eval_batch(batch, &candidates)?;
        let n: usize = candidates.iter().map(Vec::len).sum();
        loss_sum += out.loss * n as f64;
        weight += n;
        for (e, s) in batch.iter().zip(out.scores) {
            queries.push(RankedQuery {
                event: e.clone(),
                positive_score: s[0],
                negative_scores: s[1..].to_vec(),
            });
        }
    }
    Ok(EvalPass {
        loss: if weight == 0 { 0.0 } else { loss_sum / weight as f64 },
        queries,
    })
}

fn queries_mrr(queries: &[RankedQuery], rule: TieRule) -> Result<f64> {
    let ranks: Vec<f64> = queries.iter().map(|q| q.rank(rule)).collect();
    mrr(&ranks)
}

/// Trains with early stopping on validation MRR and tests the best state.
///
/// Every epoch resets stream state, trains on the training split with one
/// fresh negative per positive, then continues through validation. The
/// state after the best validation epoch carries on into the test split.
/// `on_record` receives one record per split and epoch.
pub fn run_experiment<M: StreamModel>(
    model: M,
    stream: &EventStream,
    cfg: &ExperimentConfig,
    config_echo: Vec<(String, String)>,
    on_record: &mut dyn FnMut(&EpochRecord),
) -> Result<ExperimentOutcome<M>> {
    if cfg.batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    if cfg.max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    if cfg.eval_negatives == 0 {
        return Err(Error::Config("eval_negatives must be at least 1".into()));
    }
    let start = Instant::now();
    let [tr, va, te] = cfg.split.ranges(stream.len())?;
    let events = stream.events();
    let (train, val, test) = (&events[tr.clone()], &events[va.clone()], &events[te.clone()]);
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let train_pool = distinct_destinations(train);
    let eval_pool = distinct_destinations(events);

    let mut model = model;
    let mut trace = RunTrace::default();
    let mut train_loss = Vec::new();
    let mut val_mrr = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        model.reset_state();
        let neg_seed = cfg.seed ^ TRAIN_NEG_STREAM ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, batch) in train.chunks(cfg.batch_size).enumerate() {
            let negatives = batch
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let q = (b * cfg.batch_size + i) as u64;
                    negative_sampler(e.src, e.dst, q, &train_pool, 1, neg_seed).map(|v| v[0])
                })
                .collect::<Result<Vec<usize>>>()?;
            let loss = model.train_batch(batch, &negatives)?;
            trace.train_losses.push(loss);
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let epoch_loss = if count == 0 { 0.0 } else { sum / count as f64 };
        train_loss.push(epoch_loss);
        on_record(&EpochRecord {
            epoch,
            split: Split::Train,
            loss: epoch_loss,
            mrr: None,
            wallclock: start.elapsed().as_secs_f64(),
        });

        let pass = evaluate(&mut model, val, va.start, &eval_pool, cfg)?;
        let score = if pass.queries.is_empty() {
            None
        } else {
            Some(queries_mrr(&pass.queries, cfg.tie_rule)?)
        };
        val_mrr.push(score.unwrap_or(f64::NAN));
        on_record(&EpochRecord {
            epoch,
            split: Split::Val,
            loss: pass.loss,
            mrr: score,
            wallclock: start.elapsed().as_secs_f64(),
        });
        let improved = match (&best, score) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((b, _, _)), Some(s)) => s > *b,
        };
        if improved {
            best = Some((score.unwrap_or(f64::NEG_INFINITY), epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience || (improved && cfg.patience == 0) {
            break;
        }
    }

    let (_, best_epoch, mut best_model) = best.expect("at least one epoch ran");
    let pass = evaluate(&mut best_model, test, te.start, &eval_pool, cfg)?;
    let test_mrr = queries_mrr(&pass.queries, cfg.tie_rule)?;
    trace.test_scores = pass
        .queries
        .iter()
        .map(|q| std::iter::once(q.positive_score).chain(q.negative_scores.iter().copied()).collect())
        .collect();
    on_record(&EpochRecord {
        epoch: best_epoch,
        split: Split::Test,
        loss: pass.loss,
        mrr: Some(test_mrr),
        wallclock: start.elapsed().as_secs_f64(),
    });
    let report = ExperimentReport {
        config: config_echo,
        seed: cfg.seed,
        dataset: stream_fingerprint(stream),
        train_loss,
        val_mrr,
        best_epoch,
        test_mrr,
        test_loss: pass.loss,
        test_queries: pass.queries.len(),
        eval_negatives: cfg.eval_negatives,
        wallclock: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutcome {
        report,
        trace,
        model: best_model,
    })
}

/// Result of scoring a frozen model on the test split.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenEval {
    pub mrr: f64,
    pub loss: f64,
    pub queries: usize,
}

/// Resets stream state, replays train and val without learning, then
/// scores the test split with the same negatives as [`run_experiment`].
pub fn evaluate_frozen<M: StreamModel>(model: &mut M, stream: &EventStream, cfg: &ExperimentConfig) -> Result<FrozenEval> {
    if cfg.batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    let [_, va, te] = cfg.split.ranges(stream.len())?;
    let events = stream.events();
    if te.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    model.reset_state();
    for batch in events[..va.end].chunks(cfg.batch_size) {
        let only_true: Vec<Vec<usize>> = batch.iter().map(|e| vec![e.dst]).collect();
        model.eval_batch(batch, &only_true)?;
    }
    let pool = distinct_destinations(events);
    let pass = evaluate(model, &events[te.clone()], te.start, &pool, cfg)?;
    Ok(FrozenEval {
        mrr: queries_mrr(&pass.queries, cfg.tie_rule)?,
        loss: pass.loss,
        queries: pass.queries.len(),
    })
}

/// `epoch,split,loss,mrr` rows for external plotting.
pub fn plot_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,split,loss,mrr\n");
    for r in records {
        let split = match r.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        let mrr = r.mrr.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{split},{},{mrr}", r.epoch, r.loss);
    }
    out
}
