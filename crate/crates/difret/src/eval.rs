//! Retrieval evaluation, step-budget sweeps and strategy ablations.

use std::collections::BTreeMap;
use std::time::Instant;

use difret_core::metrics::{mrr_at_k, recall_at_k, Qrels, RankedResults};
use difret_core::sampler::{BeamConfig, DenoisingStrategy, Retriever, SamplerConfig, Scoring};
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuery {
    pub query_id: String,
    pub words: Vec<String>,
}

/// What a run was configured with, recorded alongside its metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSnapshot {
    pub steps: usize,
    pub docid_len: usize,
    pub strategy: &'static str,
    pub seed: u64,
    pub beam_mode: &'static str,
    pub k: usize,
    pub n_variants: usize,
    pub scoring: &'static str,
    pub queries: usize,
}

impl RunSnapshot {
    fn new(sampler: &SamplerConfig, beam: &BeamConfig, queries: usize) -> Self {
        Self {
            steps: sampler.steps,
            docid_len: sampler.docid_len,
            strategy: sampler.strategy.name(),
            seed: sampler.seed,
            beam_mode: beam.mode.name(),
            k: beam.k,
            n_variants: beam.n_variants,
            scoring: match beam.scoring {
                Scoring::Trajectory => "trajectory",
                Scoring::PseudoLikelihood => "pseudo_likelihood",
            },
            queries,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub ranked: RankedResults,
    pub scores: BTreeMap<String, Vec<f64>>,
    /// Generation wall-clock per query, in milliseconds.
    pub latency_ms: BTreeMap<String, f64>,
    pub config: RunSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricTable {
    #[serde(rename = "recall@1")]
    pub recall_at_1: f64,
    #[serde(rename = "recall@5")]
    pub recall_at_5: f64,
    #[serde(rename = "recall@10")]
    pub recall_at_10: f64,
    #[serde(rename = "mrr@10")]
    pub mrr_at_10: f64,
    pub mean_latency_ms: f64,
    pub throughput_qps: f64,
}

impl MetricTable {
    /// The deterministic part of the table: everything except timings.
    pub fn quality(&self) -> [f64; 4] {
        [self.recall_at_1, self.recall_at_5, self.recall_at_10, self.mrr_at_10]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub config: RunSnapshot,
    #[serde(flatten)]
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub steps: usize,
    #[serde(flatten)]
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: &'static str,
    #[serde(flatten)]
    pub metrics: MetricTable,
}

/// Runs the pseudo beam for every query and scores the rankings.
///
/// Latency covers candidate generation only. Throughput is queries per
/// second of wall-clock over the whole loop.
pub fn evaluate(
    retriever: &Retriever<'_>,
    queries: &[EvalQuery],
    qrels: &Qrels,
    sampler: &SamplerConfig,
    beam: &BeamConfig,
) -> Result<(RunResult, MetricTable)> {
    sampler.validate()?;
    let mut ranked = RankedResults::new();
    let mut scores = BTreeMap::new();
    let mut latency_ms = BTreeMap::new();
    let start = Instant::now();
    for q in queries {
        let t0 = Instant::now();
        let pool = retriever.candidate_pool(&q.words, sampler, beam)?;
        latency_ms.insert(q.query_id.clone(), t0.elapsed().as_secs_f64() * 1e3);
        let list = retriever.rank(&q.words, pool, beam)?;
        ranked.insert(q.query_id.clone(), list.iter().map(|(d, _)| d.clone()).collect());
        scores.insert(q.query_id.clone(), list.into_iter().map(|(_, s)| s).collect());
    }
    let total = start.elapsed().as_secs_f64();
    let n = queries.len();
    let table = MetricTable {
        recall_at_1: recall_at_k(&ranked, qrels, 1)?,
        recall_at_5: recall_at_k(&ranked, qrels, 5)?,
        recall_at_10: recall_at_k(&ranked, qrels, 10)?,
        mrr_at_10: mrr_at_k(&ranked, qrels, 10)?,
        mean_latency_ms: if n == 0 { 0.0 } else { latency_ms.values().sum::<f64>() / n as f64 },
        throughput_qps: if total > 0.0 { n as f64 / total } else { 0.0 },
    };
    let run = RunResult { ranked, scores, latency_ms, config: RunSnapshot::new(sampler, beam, n) };
    Ok((run, table))
}

pub fn report(run: &RunResult, metrics: &MetricTable) -> MetricReport {
    MetricReport { config: run.config.clone(), metrics: *metrics }
}

/// One evaluation per step budget, otherwise identical settings.
pub fn tradeoff_sweep(
    retriever: &Retriever<'_>,
    queries: &[EvalQuery],
    qrels: &Qrels,
    steps_list: &[usize],
    sampler: &SamplerConfig,
    beam: &BeamConfig,
) -> Result<Vec<SweepPoint>> {
    if steps_list.is_empty() {
        return Err(difret_core::Error::InvalidArgument("empty step list".into()).into());
    }
    steps_list
        .iter()
        .map(|&steps| {
            let cfg = SamplerConfig { steps, ..*sampler };
            let (_, metrics) = evaluate(retriever, queries, qrels, &cfg, beam)?;
            Ok(SweepPoint { steps, metrics })
        })
        .collect()
}

/// One evaluation per denoising strategy, otherwise identical settings.
pub fn strategy_ablation(
    retriever: &Retriever<'_>,
    queries: &[EvalQuery],
    qrels: &Qrels,
    sampler: &SamplerConfig,
    beam: &BeamConfig,
) -> Result<Vec<AblationRow>> {
    DenoisingStrategy::ALL
        .iter()
        .map(|&strategy| {
            let cfg = SamplerConfig { strategy, ..*sampler };
            let (_, metrics) = evaluate(retriever, queries, qrels, &cfg, beam)?;
            Ok(AblationRow { strategy: strategy.name(), metrics })
        })
        .collect()
}
