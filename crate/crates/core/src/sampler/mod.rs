//! Collapsed MCMC over concept membership, word sets, token assignments and
//! prevalences, plus chain orchestration and trace recording.

mod chain;
pub mod conditionals;
mod init;

pub use chain::{BirthDeath, Chain, ChainRng, PiUpdate};
pub use conditionals::{
    birth_log_acceptance, death_log_acceptance, eta_birth_prob, f_prior_prob, ibp_shared_prior_prob,
};
pub use init::{initial_state, kmeans_clusters, kmeans_init, state_from_clusters, InitStrategy};

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, SemanticFeatures};
use crate::likelihood::{LikelihoodMode, ModelData};
use crate::model::{ActiveRecord, Hyperparameters, LatentState, StateSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub init: InitStrategy,
    pub record_every: usize,
    #[serde(default)]
    pub pi_update: PiUpdate,
    #[serde(default)]
    pub mode: LikelihoodMode,
}

impl SamplerConfig {
    /// Defaults: burn-in 20% of the sweeps, two chains, k-means with k = 10,
    /// every post-burn-in sweep recorded.
    pub fn new(iterations: usize, seed: u64) -> Self {
        SamplerConfig {
            iterations,
            burn_in: iterations / 5,
            seed,
            chains: 2,
            init: InitStrategy::default(),
            record_every: 1,
            pi_update: PiUpdate::default(),
            mode: LikelihoodMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidArgument(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.chains == 0 {
            return Err(Error::InvalidArgument("need at least one chain".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be positive".into()));
        }
        Ok(())
    }

    pub fn expected_records(&self) -> usize {
        (self.iterations - self.burn_in) / self.record_every
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDoc {
    pub id: String,
    pub concepts: Vec<ActiveRecord>,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub joint_log_prob: f64,
    pub n_concepts: usize,
    pub docs: Vec<TraceDoc>,
}

impl TraceRecord {
    pub fn capture(iter: usize, state: &LatentState, corpus: &Corpus) -> Self {
        let docs = state
            .docs()
            .iter()
            .zip(&corpus.documents)
            .map(|(doc, cd)| TraceDoc {
                id: cd.id.clone(),
                concepts: doc
                    .concepts
                    .iter()
                    .map(|c| ActiveRecord {
                        cid: c.id,
                        pi: c.pi,
                        words: c.words.iter().collect(),
                    })
                    .collect(),
            })
            .collect();
        TraceRecord {
            iter,
            joint_log_prob: state.joint_log_prob,
            n_concepts: state.num_concepts(),
            docs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleTrace {
    pub records: Vec<TraceRecord>,
}

impl SampleTrace {
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(SampleTrace { records })
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub trace: SampleTrace,
    /// Highest-joint recorded state of this chain, with its sweep number.
    pub best: Option<(usize, StateSnapshot)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<SampleTrace>,
    pub map: StateSnapshot,
    pub map_chain: usize,
    pub map_iter: usize,
}

/// Runs one chain; `chain_index` offsets the seed.
pub fn run_chain(
    corpus: &Corpus,
    data: &ModelData,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
    chain_index: usize,
) -> Result<ChainOutput> {
    let mut rngs = ChainRng::new(config.seed.wrapping_add(chain_index as u64), data.num_docs());
    let state = initial_state(data, hyper, config.init, &mut rngs.chain)?;
    let mut chain = Chain::new(data, state, config.mode, config.pi_update)?;
    let mut trace = SampleTrace::default();
    let mut best: Option<(usize, StateSnapshot)> = None;
    for it in 1..=config.iterations {
        chain.gibbs_sweep(&mut rngs)?;
        if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.record_every) {
            let state = chain.state();
            trace.records.push(TraceRecord::capture(it, state, corpus));
            if best.as_ref().is_none_or(|(_, b)| state.joint_log_prob > b.joint_log_prob) {
                best = Some((it, state.snapshot(corpus)));
            }
        }
        if it % 100 == 0 {
            log::debug!(
                "chain {chain_index} sweep {it}: {} concepts, joint {:.3}",
                chain.state().num_concepts(),
                chain.state().joint_log_prob
            );
        }
    }
    Ok(ChainOutput { trace, best })
}

/// Runs `config.chains` independent chains in parallel, seeded with
/// `config.seed + chain index`, and selects the recorded state with the
/// highest joint log-probability across all of them (earliest on ties).
pub fn run_chains(
    corpus: &Corpus,
    features: &SemanticFeatures,
    hyper: &Hyperparameters,
    config: &SamplerConfig,
) -> Result<RunOutput> {
    config.validate()?;
    hyper.validate(corpus.num_words())?;
    let data = ModelData::new(corpus, features.clone())?;
    let outputs: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains)
            .map(|c| {
                let data = &data;
                scope.spawn(move || run_chain(corpus, data, hyper, config, c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });
    let mut traces = Vec::with_capacity(outputs.len());
    let mut map: Option<(usize, usize, StateSnapshot)> = None;
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        if let Some((it, snap)) = out.best {
            if map.as_ref().is_none_or(|(_, _, m)| snap.joint_log_prob > m.joint_log_prob) {
                map = Some((c, it, snap));
            }
        }
        traces.push(out.trace);
    }
    let (map_chain, map_iter, map) = map.ok_or_else(|| Error::State("no samples were recorded".into()))?;
    Ok(RunOutput {
        traces,
        map,
        map_chain,
        map_iter,
    })
}
