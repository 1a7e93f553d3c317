//! Per-batch adaptation loop, evaluation metrics and run artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::adapter::{refine_loss, AdapterConfig, AdapterState, ParamSet, StepOutcome};
use crate::error::{Error, Result};
use crate::gda_head::{argmax_rows, discriminant_scores, fuse_and_predict, sketch, DEFAULT_ALPHA};
use crate::gmm::{GmmConfig, GmmState};
use crate::homogeneity::{select_covariance_mode, CovarianceMode, ModeSelection, DEFAULT_KAPPA, DEFAULT_PCA_DIM};
use crate::stats::{normalize_rows, softmax_rows};
use crate::stream::{ClassPrototypes, EmbeddingBatch, DEFAULT_TEMPERATURE};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const RUN_LOG_FILE: &str = "run.log";
pub const ACCURACY_TABLE_FILE: &str = "accuracy.dat";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModeOverride {
    #[default]
    Auto,
    Lda,
    Qda,
}

impl FromStr for ModeOverride {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(ModeOverride::Auto),
            "lda" => Ok(ModeOverride::Lda),
            "qda" => Ok(ModeOverride::Qda),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected lda, qda or auto)"))),
        }
    }
}

/// Pipeline components that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    HypothesisTest,
    Em,
    Fusion,
    SelfPaced,
    /// Disabling continual carry resets mixture and adapter before every batch.
    ContinualReset,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::HypothesisTest,
        Component::Em,
        Component::Fusion,
        Component::SelfPaced,
        Component::ContinualReset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::HypothesisTest => "hypothesis-test",
            Component::Em => "em",
            Component::Fusion => "fusion",
            Component::SelfPaced => "self-paced",
            Component::ContinualReset => "continual-reset",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown component {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub adapter: AdapterConfig,
    pub gmm: GmmConfig,
    pub temperature: f64,
    pub kappa: f64,
    pub pca_dim: usize,
    pub rounds: usize,
    pub mode: ModeOverride,
    pub disabled: BTreeSet<Component>,
    /// Recorded in the run log; the pipeline itself draws no random numbers.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: DEFAULT_ALPHA,
            adapter: AdapterConfig::default(),
            gmm: GmmConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            kappa: DEFAULT_KAPPA,
            pca_dim: DEFAULT_PCA_DIM,
            rounds: 1,
            mode: ModeOverride::Auto,
            disabled: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn without(mut self, component: Component) -> Self {
        self.disabled.insert(component);
        self
    }

    pub fn enabled(&self, component: Component) -> bool {
        !self.disabled.contains(&component)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.temperature)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if self.pca_dim == 0 {
            return Err(Error::Config("pca dim must be positive".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.adapter.validate()?;
        self.gmm.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let disabled: Vec<&str> = self.disabled.iter().map(|c| c.as_str()).collect();
        writeln!(f, "alpha={}", self.alpha)?;
        writeln!(f, "lr={}", self.adapter.lr)?;
        writeln!(f, "ema={}", self.adapter.ema_decay)?;
        writeln!(f, "eps={}", self.gmm.reg_strength)?;
        writeln!(f, "prior_var={}", self.gmm.prior_variance)?;
        writeln!(f, "tau={}", self.temperature)?;
        writeln!(f, "kappa={}", self.kappa)?;
        writeln!(f, "pca_dim={}", self.pca_dim)?;
        writeln!(f, "rounds={}", self.rounds)?;
        writeln!(f, "mode={:?}", self.mode)?;
        writeln!(f, "disabled={}", disabled.join(","))?;
        writeln!(f, "seed={}", self.seed)
    }
}

/// What the pipeline produced for one batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub step: u32,
    pub domain: u32,
    pub predictions: Vec<usize>,
    pub refine_loss: Option<f64>,
    pub adapter_step: Option<StepOutcome>,
}

/// Streaming adaptation state. `process` sees features only.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    prototypes: ClassPrototypes,
    state: Option<GmmState>,
    adapter: AdapterState,
    selection: Option<ModeSelection>,
    batches_seen: u64,
}

impl Pipeline {
    pub fn new(prototypes: &ClassPrototypes, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let prototypes = prototypes.clone().with_temperature(config.temperature)?;
        let adapter = AdapterState::new(prototypes.dim(), config.adapter)?;
        Ok(Pipeline {
            config,
            prototypes,
            state: None,
            adapter,
            selection: None,
            batches_seen: 0,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&GmmState> {
        self.state.as_ref()
    }

    pub fn adapter(&self) -> &AdapterState {
        &self.adapter
    }

    pub fn mode_selection(&self) -> Option<&ModeSelection> {
        self.selection.as_ref()
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    fn choose_mode(&self, z: &DMatrix<f64>, sketch_probs: &DMatrix<f64>) -> Result<ModeSelection> {
        Ok(match self.config.mode {
            ModeOverride::Lda => ModeSelection::fixed(CovarianceMode::Homogeneous, "forced lda"),
            ModeOverride::Qda => ModeSelection::fixed(CovarianceMode::Heterogeneous, "forced qda"),
            ModeOverride::Auto if !self.config.enabled(Component::HypothesisTest) => {
                ModeSelection::fixed(CovarianceMode::Homogeneous, "hypothesis test disabled")
            }
            ModeOverride::Auto => select_covariance_mode(z, sketch_probs, self.config.pca_dim, self.config.kappa)?,
        })
    }

    fn fresh_state(&self, mode: CovarianceMode) -> Result<GmmState> {
        GmmState::init(&self.prototypes, mode, self.config.gmm)
    }

    pub fn process_batch(&mut self, batch: &EmbeddingBatch) -> Result<BatchOutput> {
        self.process(batch.step_index(), batch.domain_id(), batch.features())
    }

    pub fn process(&mut self, step: u32, domain: u32, features: &DMatrix<f32>) -> Result<BatchOutput> {
        let raw = features.map(f64::from);
        if self.batches_seen > 0 && !self.config.enabled(Component::ContinualReset) {
            self.adapter = AdapterState::new(self.prototypes.dim(), self.config.adapter)?;
            if let Some(s) = &self.state {
                self.state = Some(self.fresh_state(s.mode())?);
            }
        }

        let z = self.adapter.forward(&raw, ParamSet::Ema)?;
        let sk = sketch(&z, &self.prototypes)?;

        if self.state.is_none() {
            let selection = self.choose_mode(&z, &sk.probs)?;
            self.state = Some(self.fresh_state(selection.mode)?);
            self.selection = Some(selection);
        }
        let state = self.state.as_mut().expect("state initialized above");
        if self.config.enabled(Component::Em) {
            state.update(&z)?;
        }
        let scores = discriminant_scores(state, &z)?;
        let alpha = if self.config.enabled(Component::Fusion) {
            self.config.alpha
        } else {
            0.0
        };
        let fused = fuse_and_predict(&sk.logits, &scores, alpha)?;

        let (mut loss, mut outcome) = (None, None);
        if self.config.enabled(Component::SelfPaced) {
            loss = Some(refine_loss(&sk.logits, &fused.adapted_logits, self.prototypes.temperature())?);
            let target = softmax_rows(&fused.adapted_logits, 1.0);
            outcome = Some(self.adapter.backward_and_step(&raw, &self.prototypes, &target)?);
        }
        self.batches_seen += 1;
        Ok(BatchOutput {
            step,
            domain,
            predictions: fused.predictions,
            refine_loss: loss,
            adapter_step: outcome,
        })
    }

    /// Mixture state followed by the adapter block.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("nothing to checkpoint before the first batch".into()))?;
        let mut w = BufWriter::new(File::create(path)?);
        state.write_checkpoint(&mut w)?;
        self.adapter.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn resume(prototypes: &ClassPrototypes, config: PipelineConfig, path: &Path) -> Result<Self> {
        let mut p = Pipeline::new(prototypes, config)?;
        let mut r = BufReader::new(File::open(path)?);
        let state = GmmState::read_checkpoint(&mut r, p.config.gmm)?;
        if state.num_classes() != p.prototypes.num_classes() || state.dim() != p.prototypes.dim() {
            return Err(Error::ManifestMismatch(format!(
                "checkpoint has K={} D={}, prototypes have K={} D={}",
                state.num_classes(),
                state.dim(),
                p.prototypes.num_classes(),
                p.prototypes.dim()
            )));
        }
        p.adapter = AdapterState::read_checkpoint(&mut r, state.dim(), p.config.adapter)?;
        p.selection = Some(ModeSelection::fixed(state.mode(), "resumed from checkpoint"));
        p.batches_seen = state.step();
        p.state = Some(state);
        Ok(p)
    }
}

/// One row of the prediction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionRecord {
    pub round: u32,
    pub step: u32,
    pub domain: u32,
    pub prediction: u32,
    pub label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainAccuracy {
    pub domain_id: u32,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub per_domain: Vec<DomainAccuracy>,
    /// `Σ acc_d · n_d / Σ n_d`.
    pub weighted_accuracy: f64,
    pub per_round: Vec<f64>,
    pub selection: Option<ModeSelection>,
    pub runtime: Duration,
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(sel) = &self.selection {
            writeln!(f, "{sel}")?;
        }
        for d in &self.per_domain {
            writeln!(f, "domain {}: accuracy={:.4} ({}/{})", d.domain_id, d.accuracy, d.correct, d.samples)?;
        }
        for (r, acc) in self.per_round.iter().enumerate() {
            writeln!(f, "round {}: accuracy={acc:.4}", r + 1)?;
        }
        writeln!(f, "weighted_accuracy={:.4}", self.weighted_accuracy)?;
        writeln!(f, "runtime_ms={}", self.runtime.as_millis())
    }
}

fn weighted(per_domain: &[DomainAccuracy]) -> f64 {
    let n: usize = per_domain.iter().map(|d| d.samples).sum();
    per_domain.iter().map(|d| d.accuracy * d.samples as f64).sum::<f64>() / n as f64
}

/// Per-domain top-1 accuracy and the sample-weighted mean over every record,
/// plus one weighted mean per round.
pub fn summarize(records: &[PredictionRecord]) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut domains: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut rounds: BTreeMap<u32, BTreeMap<u32, (usize, usize)>> = BTreeMap::new();
    for r in records {
        let label = r.label.ok_or(Error::MissingLabels { step: r.step as u64 })?;
        let hit = usize::from(label == r.prediction);
        for tally in [
            domains.entry(r.domain).or_default(),
            rounds.entry(r.round).or_default().entry(r.domain).or_default(),
        ] {
            tally.0 += hit;
            tally.1 += 1;
        }
    }
    let table = |m: &BTreeMap<u32, (usize, usize)>| -> Vec<DomainAccuracy> {
        m.iter()
            .map(|(&domain_id, &(correct, samples))| DomainAccuracy {
                domain_id,
                samples,
                correct,
                accuracy: correct as f64 / samples as f64,
            })
            .collect()
    };
    let per_domain = table(&domains);
    Ok(EvalSummary {
        weighted_accuracy: weighted(&per_domain),
        per_round: rounds.values().map(|m| weighted(&table(m))).collect(),
        per_domain,
        selection: None,
        runtime: Duration::ZERO,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: EvalSummary,
    pub log: Vec<PredictionRecord>,
    pub pipeline: Pipeline,
}

impl RunOutput {
    /// Round-by-round weighted accuracies.
    pub fn round_accuracies(&self) -> &[f64] {
        &self.summary.per_round
    }
}

fn records<'a>(round: u32, out: &'a BatchOutput, labels: Option<&'a [u32]>) -> impl Iterator<Item = PredictionRecord> + 'a {
    out.predictions.iter().enumerate().map(move |(i, &p)| PredictionRecord {
        round,
        step: out.step,
        domain: out.domain,
        prediction: p as u32,
        label: labels.map(|l| l[i]),
    })
}

fn drive<I>(pipeline: &mut Pipeline, round: u32, batches: I, log: &mut Vec<PredictionRecord>) -> Result<()>
where
    I: IntoIterator<Item = Result<EmbeddingBatch>>,
{
    for (index, batch) in batches.into_iter().enumerate() {
        let batch = batch?;
        let step = batch.step_index() as u64;
        let out = pipeline.process_batch(&batch).map_err(|e| e.in_batch(index, step))?;
        log.extend(records(round, &out, batch.labels()));
    }
    Ok(())
}

fn finish(pipeline: Pipeline, log: Vec<PredictionRecord>, started: Instant) -> Result<RunOutput> {
    if log.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut summary = summarize(&log)?;
    summary.selection = pipeline.mode_selection().cloned();
    summary.runtime = started.elapsed();
    Ok(RunOutput { summary, log, pipeline })
}

/// Single pass over a labelled stream.
pub fn run_stream<I>(batches: I, prototypes: &ClassPrototypes, config: &PipelineConfig) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<EmbeddingBatch>>,
{
    continue_stream(Pipeline::new(prototypes, config.clone())?, batches)
}

/// Single pass continuing from an existing pipeline, e.g. one resumed from a checkpoint.
pub fn continue_stream<I>(mut pipeline: Pipeline, batches: I) -> Result<RunOutput>
where
    I: IntoIterator<Item = Result<EmbeddingBatch>>,
{
    let started = Instant::now();
    let mut log = Vec::new();
    drive(&mut pipeline, 1, batches, &mut log)?;
    finish(pipeline, log, started)
}

/// Replay the stream `config.rounds` times, carrying state across rounds.
pub fn run_longterm(batches: &[EmbeddingBatch], prototypes: &ClassPrototypes, config: &PipelineConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let mut pipeline = Pipeline::new(prototypes, config.clone())?;
    let mut log = Vec::new();
    for round in 1..=config.rounds as u32 {
        drive(&mut pipeline, round, batches.iter().cloned().map(Ok), &mut log)?;
    }
    finish(pipeline, log, started)
}

/// Frozen zero-shot baseline: cosine argmax on normalized raw features.
pub fn zero_shot_predictions(batch: &EmbeddingBatch, prototypes: &ClassPrototypes) -> Result<Vec<usize>> {
    let z = normalize_rows(&batch.features_f64())?;
    Ok(argmax_rows(&sketch(&z, prototypes)?.logits))
}

pub fn run_zero_shot(batches: &[EmbeddingBatch], prototypes: &ClassPrototypes) -> Result<EvalSummary> {
    let started = Instant::now();
    let mut log = Vec::new();
    for b in batches {
        let out = BatchOutput {
            step: b.step_index(),
            domain: b.domain_id(),
            predictions: zero_shot_predictions(b, prototypes)?,
            refine_loss: None,
            adapter_step: None,
        };
        log.extend(records(1, &out, b.labels()));
    }
    let mut summary = summarize(&log)?;
    summary.runtime = started.elapsed();
    Ok(summary)
}

pub fn write_prediction_log<W: Write>(w: &mut W, log: &[PredictionRecord]) -> std::io::Result<()> {
    writeln!(w, "round,step,domain,prediction,label")?;
    for r in log {
        match r.label {
            Some(l) => writeln!(w, "{},{},{},{},{}", r.round, r.step, r.domain, r.prediction, l)?,
            None => writeln!(w, "{},{},{},{},", r.round, r.step, r.domain, r.prediction)?,
        }
    }
    Ok(())
}

/// gnuplot-readable `domain accuracy samples` columns.
pub fn write_accuracy_table<W: Write>(w: &mut W, summary: &EvalSummary) -> std::io::Result<()> {
    writeln!(w, "# domain accuracy samples")?;
    for d in &summary.per_domain {
        writeln!(w, "{} {:.6} {}", d.domain_id, d.accuracy, d.samples)?;
    }
    Ok(())
}

/// Write predictions, run log, accuracy table and final checkpoint into `dir`.
pub fn write_run_artifacts(dir: &Path, config: &PipelineConfig, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(PREDICTIONS_FILE))?);
    write_prediction_log(&mut w, &run.log)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(ACCURACY_TABLE_FILE))?);
    write_accuracy_table(&mut w, &run.summary)?;
    w.flush()?;
    fs::write(dir.join(RUN_LOG_FILE), format!("{config}{}", run.summary))?;
    run.pipeline.save_checkpoint(&dir.join(CHECKPOINT_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift_sim::{generate, DriftSpec, Trajectory};
    use approx::assert_relative_eq;

    fn record(domain: u32, prediction: u32, label: u32) -> PredictionRecord {
        PredictionRecord {
            round: 1,
            step: domain + 1,
            domain,
            prediction,
            label: Some(label),
        }
    }

    fn small_stream(seed: u64) -> crate::drift_sim::GeneratedStream {
        generate(&DriftSpec {
            classes: 4,
            dim: 8,
            domains: 3,
            batches_per_domain: 2,
            batch_size: 64,
            trajectory: Trajectory::Rotation {
                plane: (0, 1),
                total_angle_deg: 20.0,
            },
            ..DriftSpec::default().with_seed(seed)
        })
        .unwrap()
    }

    #[test]
    fn weighted_average_arithmetic() {
        let mut log: Vec<_> = (0..10).map(|_| record(0, 1, 1)).collect();
        log.extend((0..30).map(|i| record(1, 0, (i % 2) as u32)));
        let s = summarize(&log).unwrap();
        assert_relative_eq!(s.weighted_accuracy, 0.625, epsilon = 1e-12);
        assert_eq!(s.per_domain[1].accuracy, 0.5);

        let single = summarize(&log[10..]).unwrap();
        assert_eq!(single.weighted_accuracy, single.per_domain[0].accuracy);

        let mut shuffled = log.clone();
        shuffled.reverse();
        shuffled.swap(3, 27);
        let t = summarize(&shuffled).unwrap();
        assert_eq!(t.per_domain, s.per_domain);
        assert_eq!(t.weighted_accuracy, s.weighted_accuracy);
    }

    #[test]
    fn missing_labels_are_reported() {
        let mut r = record(0, 0, 0);
        r.label = None;
        assert!(matches!(summarize(&[r]), Err(Error::MissingLabels { step: 1 })));
    }

    #[test]
    fn all_components_off_is_zero_shot() {
        let g = small_stream(1);
        let config = PipelineConfig::default()
            .without(Component::Em)
            .without(Component::Fusion)
            .without(Component::SelfPaced);
        let run = run_stream(g.batches.iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
        let zs: Vec<u32> = g
            .batches
            .iter()
            .flat_map(|b| zero_shot_predictions(b, &g.prototypes).unwrap())
            .map(|p| p as u32)
            .collect();
        let got: Vec<u32> = run.log.iter().map(|r| r.prediction).collect();
        assert_eq!(got, zs);
    }

    #[test]
    fn alpha_zero_with_frozen_adapter_is_zero_shot() {
        let g = small_stream(2);
        let config = PipelineConfig {
            alpha: 0.0,
            ..PipelineConfig::default()
        }
        .without(Component::SelfPaced);
        let run = run_stream(g.batches.iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
        let zs = run_zero_shot(&g.batches, &g.prototypes).unwrap();
        assert_eq!(run.summary.per_domain, zs.per_domain);
    }

    #[test]
    fn single_round_longterm_matches_stream() {
        let g = small_stream(3);
        let config = PipelineConfig::default();
        let a = run_stream(g.batches.iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
        let b = run_longterm(&g.batches, &g.prototypes, &config).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn reset_rounds_are_identical() {
        let g = small_stream(4);
        let config = PipelineConfig {
            rounds: 3,
            ..PipelineConfig::default()
        }
        .without(Component::ContinualReset);
        let run = run_longterm(&g.batches, &g.prototypes, &config).unwrap();
        let r = run.round_accuracies();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0], r[1]);
        assert_eq!(r[1], r[2]);
    }

    #[test]
    fn forced_modes() {
        let g = small_stream(5);
        for (m, expect) in [
            (ModeOverride::Lda, CovarianceMode::Homogeneous),
            (ModeOverride::Qda, CovarianceMode::Heterogeneous),
        ] {
            let config = PipelineConfig {
                mode: m,
                ..PipelineConfig::default()
            };
            let run = run_stream(g.batches.iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
            assert_eq!(run.pipeline.state().unwrap().mode(), expect);
        }
    }

    #[test]
    fn checkpoint_resume_continues_identically() {
        let g = small_stream(6);
        let config = PipelineConfig::default();
        let full = run_stream(g.batches.iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
        let head = run_stream(g.batches[..3].iter().cloned().map(Ok), &g.prototypes, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(CHECKPOINT_FILE);
        head.pipeline.save_checkpoint(&path).unwrap();
        let mut resumed = Pipeline::resume(&g.prototypes, config, &path).unwrap();
        let tail: Vec<u32> = g.batches[3..]
            .iter()
            .flat_map(|b| resumed.process_batch(b).unwrap().predictions)
            .map(|p| p as u32)
            .collect();
        let expected: Vec<u32> = full.log[3 * 64..].iter().map(|r| r.prediction).collect();
        assert_eq!(tail, expected);
    }

    #[test]
    fn batch_errors_carry_context() {
        let g = small_stream(7);
        let protos = ClassPrototypes::unnamed(DMatrix::from_element(4, 5, 1.0f32), 0.01).unwrap();
        let err = run_stream(g.batches.iter().cloned().map(Ok), &protos, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Batch { index: 0, step: 1, .. }), "{err}");
    }

    #[test]
    fn config_parsing() {
        assert_eq!("self-paced".parse::<Component>().unwrap(), Component::SelfPaced);
        assert!("nope".parse::<Component>().is_err());
        assert_eq!("qda".parse::<ModeOverride>().unwrap(), ModeOverride::Qda);
        let bad = PipelineConfig {
            kappa: 1.5,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_config_error());
    }
}
