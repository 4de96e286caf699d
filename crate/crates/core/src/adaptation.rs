//! Segmentation training, pseudo-labelling and the staged UDA / UFDA / ADA pipelines.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DomainPair, FORMAT_VERSION};
use crate::discriminator::{train_discriminator, DiscHistory, DiscTrainConfig, Discriminator};
use crate::encoders::{PreparedFrame, SegModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvaluationReport, FrameCounts, SelectionRecord, StageEval, StageTiming};
use crate::model::{Model, ModelConfig, TrainedScorers};
use crate::numerics::{adam_step, poly_lr, softmax_rows, Matrix, OptimizerState, ParamStore, Tape};
use crate::sampling::{sample_source, sample_target, score_frames, select_top, Budget, ScoringInputs, ScoringStrategy, SelectionResult};
use crate::seed::stage_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub poly_power: f64,
    pub iterations: usize,
    /// Points subsampled per frame per step; 0 keeps all.
    pub points_per_frame: usize,
    pub weight_2d: f64,
    pub weight_3d: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            poly_power: 0.9,
            iterations: 2000,
            points_per_frame: 256,
            weight_2d: 1.0,
            weight_3d: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || self.iterations == 0 {
            return Err(Error::Config("training needs batch ≥ 1, lr > 0 and iterations ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub loss_2d: Vec<f64>,
    pub loss_3d: Vec<f64>,
}

/// Mean cross-entropy over non-ignored points.
pub fn seg_loss(logits: &Matrix, labels: &[Option<usize>]) -> Result<f64> {
    let mut tape = Tape::inference();
    let l = tape.constant(logits.clone());
    let ce = tape.cross_entropy(l, labels)?;
    Ok(tape.scalar(ce))
}

/// Average of the two branch softmaxes.
pub fn fuse_predictions(logits2d: &Matrix, logits3d: &Matrix) -> Result<Matrix> {
    if logits2d.shape() != logits3d.shape() {
        return Err(Error::shape(format!("fuse: {:?} vs {:?}", logits2d.shape(), logits3d.shape())));
    }
    let mut p = softmax_rows(logits2d, 1.0)?;
    p.add_assign(&softmax_rows(logits3d, 1.0)?);
    p.scale_in_place(0.5);
    Ok(p)
}

fn subsample_rows(rng: &mut impl Rng, n: usize, k: usize) -> Vec<usize> {
    if k == 0 || k >= n {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Minimises the sum over groups of each group's mean per-frame segmentation loss.
pub fn fit(
    store: &mut ParamStore,
    seg: &SegModel,
    groups: &[&[&PreparedFrame]],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::arg("every training set must contain at least one frame"));
    }
    let groups: Vec<Vec<&PreparedFrame>> = groups
        .iter()
        .map(|g| g.iter().copied().filter(|f| f.labels.iter().any(Option::is_some)).collect())
        .collect();
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::NoValidPoints);
    }
    let ids = seg.param_ids();
    let mut opt = OptimizerState::with_betas(store, &ids, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hist = TrainHistory::default();
    for it in 0..cfg.iterations {
        store.zero_grads(&ids);
        let (mut total, mut t2, mut t3) = (0.0, 0.0, 0.0);
        let mut stepped = false;
        for group in &groups {
            let mut batch = Vec::with_capacity(cfg.batch);
            for _ in 0..cfg.batch {
                let f = group[rng.random_range(0..group.len())];
                let sub = f.subset(&subsample_rows(&mut rng, f.len(), cfg.points_per_frame));
                if sub.labels.iter().any(Option::is_some) {
                    batch.push(sub);
                }
            }
            let w = 1.0 / batch.len().max(1) as f64;
            for sub in &batch {
                let mut tape = Tape::with_trainable(&ids);
                let feats = seg.encode(&mut tape, store, sub)?;
                let (l2, l3) = seg.logits(&mut tape, store, feats)?;
                let c2 = tape.cross_entropy(l2, &sub.labels)?;
                let c3 = tape.cross_entropy(l3, &sub.labels)?;
                let a = tape.scale(c2, cfg.weight_2d * w);
                let b = tape.scale(c3, cfg.weight_3d * w);
                let loss = tape.add(a, b)?;
                let grads = tape.backward(loss)?;
                tape.accumulate_into(&grads, store)?;
                total += tape.scalar(loss);
                t2 += tape.scalar(c2) * w;
                t3 += tape.scalar(c3) * w;
                stepped = true;
            }
        }
        if stepped {
            adam_step(store, &mut opt, poly_lr(it, cfg.iterations, cfg.lr, cfg.poly_power)?)?;
        }
        hist.loss.push(total);
        hist.loss_2d.push(t2);
        hist.loss_3d.push(t3);
    }
    Ok(hist)
}

pub fn train_source(
    store: &mut ParamStore,
    seg: &SegModel,
    source: &[&PreparedFrame],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    if source.is_empty() {
        return Err(Error::arg("no labelled source frames"));
    }
    fit(store, seg, &[source], cfg, seed)
}

/// Equal-weight joint objective over a source subset and a (pseudo-)labelled target subset.
pub fn self_train(
    store: &mut ParamStore,
    seg: &SegModel,
    source: &[&PreparedFrame],
    target: &[&PreparedFrame],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainHistory> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::arg("self-training needs both a source and a target subset"));
    }
    fit(store, seg, &[source, target], cfg, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelPolicy {
    /// Per-class confidence quantile below which points are ignored.
    pub quantile: f64,
    /// Confidence from fused probabilities, else from the 3D branch alone.
    pub fused: bool,
}

impl Default for PseudoLabelPolicy {
    fn default() -> Self {
        PseudoLabelPolicy { quantile: 0.2, fused: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledFrame {
    pub id: u64,
    pub labels: Vec<Option<usize>>,
    pub confidence: Vec<f64>,
    /// No point survived the confidence filter.
    pub warning: bool,
}

/// Keeps the top `⌊(1 − q)·n⌋` most confident points of each predicted class.
pub fn pseudo_label_probs(probs: &Matrix, quantile: f64) -> Result<(Vec<Option<usize>>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::arg(format!("quantile {quantile} outside [0, 1]")));
    }
    let pred = probs.argmax_rows();
    let conf: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, pred[r])).collect();
    let mut labels = vec![None; probs.rows()];
    for class in 0..probs.cols() {
        let mut members: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == class).collect();
        members.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
        let keep = ((1.0 - quantile) * members.len() as f64 + 1e-9).floor() as usize;
        for &i in &members[..keep.min(members.len())] {
            labels[i] = Some(class);
        }
    }
    Ok((labels, conf))
}

pub fn pseudo_label(
    store: &ParamStore,
    seg: &SegModel,
    frames: &[&PreparedFrame],
    policy: &PseudoLabelPolicy,
) -> Result<Vec<PseudoLabeledFrame>> {
    frames
        .iter()
        .map(|f| {
            let (l2, l3) = seg.predict(store, f)?;
            let probs = if policy.fused { fuse_predictions(&l2, &l3)? } else { softmax_rows(&l3, 1.0)? };
            let (labels, confidence) = pseudo_label_probs(&probs, policy.quantile)?;
            let warning = labels.iter().all(Option::is_none);
            if warning {
                log::warn!("frame {} kept no pseudo-labelled points", f.id);
            }
            Ok(PseudoLabeledFrame { id: f.id, labels, confidence, warning })
        })
        .collect()
}

/// Pseudo-labels only the selected frames, in selection order.
pub fn apl(
    store: &ParamStore,
    seg: &SegModel,
    frames: &[&PreparedFrame],
    selection: &SelectionResult,
    policy: &PseudoLabelPolicy,
) -> Result<Vec<PseudoLabeledFrame>> {
    let chosen = selection
        .ids
        .iter()
        .map(|id| {
            frames
                .iter()
                .copied()
                .find(|f| f.id == *id)
                .ok_or_else(|| Error::arg(format!("selected frame {id} is not available")))
        })
        .collect::<Result<Vec<_>>>()?;
    pseudo_label(store, seg, &chosen, policy)
}

/// Copy of `frame` carrying the given labels.
pub fn relabel(frame: &PreparedFrame, labels: &[Option<usize>]) -> PreparedFrame {
    PreparedFrame { labels: labels.to_vec(), ..frame.clone() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Uda,
    Ufda,
    #[default]
    Ada,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfTraining {
    #[default]
    None,
    Pl,
    Apl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub task: TaskKind,
    /// Share of unlabelled target frames available (UFDA).
    pub target_fraction: f64,
    pub source_budget: Budget,
    pub target_budget: Budget,
    /// Frames pseudo-labelled by APL.
    pub apl_budget: Budget,
    pub strategy: ScoringStrategy,
    /// Scoring used for the target selection when it differs from `strategy`.
    pub target_strategy: Option<ScoringStrategy>,
    pub self_training: SelfTraining,
    /// Pseudo-label confidence from fused probabilities.
    pub fusion: bool,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            task: TaskKind::Ada,
            target_fraction: 1.0,
            source_budget: Budget::Fraction(0.3),
            target_budget: Budget::Fraction(0.05),
            apl_budget: Budget::Fraction(0.5),
            strategy: ScoringStrategy::CrossModal,
            target_strategy: None,
            self_training: SelfTraining::None,
            fusion: true,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        match self.task {
            TaskKind::Ufda if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) => {
                bad("UFDA target fraction must lie in (0, 1]")
            }
            TaskKind::Uda | TaskKind::Ada if self.target_fraction != 1.0 => {
                bad("target fraction only applies to UFDA")
            }
            TaskKind::Ada if self.self_training == SelfTraining::Pl => {
                bad("ADA supports APL on the remaining frames, not plain PL")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub source: TrainConfig,
    pub fine_tune: TrainConfig,
    pub self_train: TrainConfig,
    pub discriminator: DiscTrainConfig,
    pub pseudo: PseudoLabelPolicy,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.source.validate()?;
        self.fine_tune.validate()?;
        self.self_train.validate()?;
        if self.discriminator.batch == 0 || self.discriminator.iterations == 0 || !(self.discriminator.lr > 0.0) {
            return Err(Error::Config("discriminator needs batch, iterations and lr > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.pseudo.quantile) {
            return Err(Error::Config("pseudo-label quantile must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn hash(&self, spec: &TaskSpec) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(&(self, spec)).expect("config serialises")))
    }
}

/// Prepared frames of one domain pair, split as the learner sees them.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub source: Vec<PreparedFrame>,
    pub target_train: Vec<PreparedFrame>,
    pub target_test: Vec<PreparedFrame>,
}

impl TaskData {
    pub fn from_pair(pair: &DomainPair) -> Result<Self> {
        let prep = |fs: Vec<&crate::frame::Frame>| fs.into_iter().map(PreparedFrame::from_frame).collect::<Result<Vec<_>>>();
        let data = TaskData {
            source: prep(pair.source.train())?,
            target_train: prep(pair.target.train())?,
            target_test: prep(pair.target.test())?,
        };
        if data.source.is_empty() || data.target_train.is_empty() || data.target_test.is_empty() {
            return Err(Error::arg("source, target train and target test splits must be non-empty"));
        }
        Ok(data)
    }
}

fn input_for(x: &ScoringInputs, which: usize) -> &Matrix {
    match which {
        0 => &x.cross,
        1 => &x.f2d,
        _ => &x.f3d,
    }
}

fn disc_for(model: &Model, which: usize) -> &Discriminator {
    match which {
        0 => &model.disc_cross,
        1 => &model.disc_2d,
        _ => &model.disc_3d,
    }
}

/// Trains every discriminator in `needs` that is not trained yet; returns their histories.
pub fn train_scorers(
    model: &mut Model,
    needs: TrainedScorers,
    source: &[ScoringInputs],
    target: &[ScoringInputs],
    cfg: &DiscTrainConfig,
    seed: u64,
) -> Result<Vec<(String, DiscHistory)>> {
    let mut out = Vec::new();
    let plan = [
        (needs.cross && !model.trained.cross, 0, "cross_modal"),
        (needs.two_d && !model.trained.two_d, 1, "two_d"),
        (needs.three_d && !model.trained.three_d, 2, "three_d"),
    ];
    for (wanted, which, name) in plan {
        if !wanted {
            continue;
        }
        let s: Vec<&Matrix> = source.iter().map(|x| input_for(x, which)).collect();
        let t: Vec<&Matrix> = target.iter().map(|x| input_for(x, which)).collect();
        let disc = disc_for(model, which).clone();
        let hist = train_discriminator(&mut model.store, &disc, &s, &t, cfg, stage_seed(seed, name))?;
        match which {
            0 => model.trained.cross = true,
            1 => model.trained.two_d = true,
            _ => model.trained.three_d = true,
        }
        out.push((name.to_string(), hist));
    }
    Ok(out)
}

/// Output of a pipeline run.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub model: Model,
    pub report: EvaluationReport,
}

/// Pipeline state after source training, discriminator training and source sampling.
#[derive(Clone, Debug)]
pub struct SourceStages {
    pub model: Model,
    pub source_inputs: Vec<ScoringInputs>,
    /// Scoring inputs of the target frames the task may use.
    pub target_inputs: Vec<ScoringInputs>,
    /// Indices into `TaskData::target_train` matching `target_inputs`.
    pub available: Vec<usize>,
    pub report: EvaluationReport,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.push(StageTiming { stage: stage.to_string(), seconds: start.elapsed().as_secs_f64() });
    Ok(out)
}

fn evaluate(model: &Model, data: &TaskData) -> Result<crate::eval::Evaluation> {
    let test: Vec<&PreparedFrame> = data.target_test.iter().collect();
    evaluate_model(&model.store, &model.seg, &test)
}

fn merge(a: TrainedScorers, b: TrainedScorers) -> TrainedScorers {
    TrainedScorers { cross: a.cross || b.cross, two_d: a.two_d || b.two_d, three_d: a.three_d || b.three_d }
}

/// Frames by id from a prepared list.
fn by_ids<'a>(frames: &'a [PreparedFrame], ids: &[u64]) -> Result<Vec<&'a PreparedFrame>> {
    ids.iter()
        .map(|id| {
            frames
                .iter()
                .find(|f| f.id == *id)
                .ok_or_else(|| Error::arg(format!("frame {id} is not in the dataset")))
        })
        .collect()
}

/// Indices of the target-train frames a task may use.
pub fn target_subset(spec: &TaskSpec, n: usize) -> Result<Vec<usize>> {
    match spec.task {
        TaskKind::Ufda => {
            let k = Budget::Fraction(spec.target_fraction).resolve(n)?;
            let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.seed, "ufda.subset"));
            let mut idx = sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        TaskKind::Uda | TaskKind::Ada => Ok((0..n).collect()),
    }
}

/// Scoring inputs of every source frame and of the available target frames.
pub fn stage_features(model: &Model, data: &TaskData, available: &[usize]) -> Result<(Vec<ScoringInputs>, Vec<ScoringInputs>)> {
    let s = data.source.iter().map(|f| model.scoring_inputs(f)).collect::<Result<Vec<_>>>()?;
    let t = available
        .iter()
        .map(|&i| model.scoring_inputs(&data.target_train[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok((s, t))
}

/// Discriminators the task's strategies rely on.
pub fn task_needs(spec: &TaskSpec) -> TrainedScorers {
    let needs = Model::needs(spec.strategy);
    match spec.target_strategy.filter(|_| spec.task == TaskKind::Ada) {
        Some(ts) => merge(needs, Model::needs(ts)),
        None => needs,
    }
}

/// Stage 1: a fresh model trained on all labelled source frames.
pub fn train_source_stage(spec: &TaskSpec, data: &TaskData, cfg: &PipelineConfig) -> Result<Model> {
    spec.validate()?;
    cfg.validate()?;
    let mut model = Model::init(&cfg.model, spec.seed)?;
    let source: Vec<&PreparedFrame> = data.source.iter().collect();
    train_source(&mut model.store, &model.seg, &source, &cfg.source, stage_seed(spec.seed, "train.source"))?;
    Ok(model)
}

/// Stages 1–4: source training, discriminator training, source sampling, fine-tuning.
pub fn run_source_stages(spec: &TaskSpec, data: &TaskData, cfg: &PipelineConfig) -> Result<SourceStages> {
    let mut timings = Vec::new();
    let model = timed(&mut timings, "train_source", || train_source_stage(spec, data, cfg))?;
    continue_source_stages(model, spec, data, cfg, timings)
}

/// Stages 2–4 from a source-trained model; discriminators it already holds are kept.
pub fn continue_source_stages(
    mut model: Model,
    spec: &TaskSpec,
    data: &TaskData,
    cfg: &PipelineConfig,
    mut timings: Vec<StageTiming>,
) -> Result<SourceStages> {
    spec.validate()?;
    cfg.validate()?;
    let seed = spec.seed;
    let source_only = evaluate(&model, data)?;
    let n = data.target_train.len();
    let available = target_subset(spec, n)?;
    let (source_inputs, target_inputs) = timed(&mut timings, "features", || stage_features(&model, data, &available))?;
    let needs = task_needs(spec);
    let histories = timed(&mut timings, "train_discriminator", || {
        train_scorers(&mut model, needs, &source_inputs, &target_inputs, &cfg.discriminator, stage_seed(seed, "disc"))
    })?;

    let source_sel = sample_source(
        &source_inputs,
        &model.scorers(),
        &model.store,
        spec.source_budget,
        spec.strategy,
        stage_seed(seed, "score.source"),
    )?;
    let selected = by_ids(&data.source, &source_sel.ids)?;
    timed(&mut timings, "fine_tune", || {
        fit(&mut model.store, &model.seg, &[&selected], &cfg.fine_tune, stage_seed(seed, "train.fine_tune"))
    })?;
    let source_sampling = evaluate(&model, data)?;

    let report = EvaluationReport {
        version: FORMAT_VERSION,
        config_hash: cfg.hash(spec),
        seed,
        task: spec.clone(),
        config: cfg.clone(),
        counts: FrameCounts {
            source: data.source.len(),
            source_selected: source_sel.ids.len(),
            target_train: n,
            target_available: available.len(),
            target_oracle: 0,
            target_pseudo: 0,
            target_test: data.target_test.len(),
        },
        stages: vec![
            StageEval { stage: "source_only".into(), eval: source_only },
            StageEval { stage: "source_sampling".into(), eval: source_sampling },
        ],
        selections: vec![SelectionRecord { role: "source".into(), selection: source_sel }],
        oracle_ids: vec![],
        pseudo_warnings: vec![],
        discriminators: histories
            .into_iter()
            .map(|(name, h)| crate::eval::DiscSummary {
                name,
                iterations: h.loss.len(),
                final_loss: h.loss.last().copied().unwrap_or(f64::NAN),
                final_accuracy: h.accuracy.last().copied().unwrap_or(f64::NAN),
            })
            .collect(),
        timings,
    };
    Ok(SourceStages { model, source_inputs, target_inputs, available, report })
}

/// Stage 5: target selection / pseudo-labelling and self-training, then the final evaluation.
pub fn run_target_stages(base: SourceStages, spec: &TaskSpec, data: &TaskData, cfg: &PipelineConfig) -> Result<TaskOutcome> {
    let SourceStages { mut model, target_inputs, available, mut report, .. } = base;
    let seed = spec.seed;
    let policy = PseudoLabelPolicy { fused: spec.fusion, ..cfg.pseudo.clone() };
    let available_frames: Vec<&PreparedFrame> = available.iter().map(|&i| &data.target_train[i]).collect();
    let source_ids = report.selection("source").expect("source selection recorded").ids.clone();
    let source_sel = by_ids(&data.source, &source_ids)?;
    let scorers = model.scorers();

    let mut target_set: Vec<PreparedFrame> = Vec::new();
    let pseudo_from = |frames: Vec<&PreparedFrame>, report: &mut EvaluationReport| -> Result<Vec<PreparedFrame>> {
        let labelled = pseudo_label(&model.store, &model.seg, &frames, &policy)?;
        report.counts.target_pseudo += labelled.len();
        report.pseudo_warnings.extend(labelled.iter().filter(|p| p.warning).map(|p| p.id));
        Ok(frames.iter().zip(&labelled).map(|(f, p)| relabel(f, &p.labels)).collect())
    };
    let stage = match spec.task {
        TaskKind::Uda | TaskKind::Ufda => match spec.self_training {
            SelfTraining::None => None,
            SelfTraining::Pl => {
                target_set = pseudo_from(available_frames.clone(), &mut report)?;
                Some("self_training")
            }
            SelfTraining::Apl => {
                let scores = score_frames(&target_inputs, &scorers, &model.store, spec.strategy, stage_seed(seed, "score.apl"))?;
                let sel = select_top(&scores, spec.apl_budget, spec.strategy)?;
                target_set = pseudo_from(by_ids(&data.target_train, &sel.ids)?, &mut report)?;
                report.selections.push(SelectionRecord { role: "apl".into(), selection: sel });
                Some("self_training")
            }
        },
        TaskKind::Ada => {
            let ts = spec.target_strategy.unwrap_or(spec.strategy);
            let sel = sample_target(
                &target_inputs,
                &scorers,
                &model.store,
                spec.target_budget,
                ts,
                stage_seed(seed, "score.target"),
            )?;
            report.oracle_ids = sel.ids.clone();
            report.counts.target_oracle = sel.ids.len();
            target_set.extend(by_ids(&data.target_train, &sel.ids)?.into_iter().cloned());
            if spec.self_training == SelfTraining::Apl {
                let rest: Vec<ScoringInputs> =
                    target_inputs.iter().filter(|x| !sel.ids.contains(&x.id)).cloned().collect();
                if !rest.is_empty() {
                    let scores = score_frames(&rest, &scorers, &model.store, spec.strategy, stage_seed(seed, "score.apl"))?;
                    let apl_sel = select_top(&scores, spec.apl_budget, spec.strategy)?;
                    let pseudo = pseudo_from(by_ids(&data.target_train, &apl_sel.ids)?, &mut report)?;
                    target_set.extend(pseudo);
                    report.selections.push(SelectionRecord { role: "apl".into(), selection: apl_sel });
                }
            }
            report.selections.insert(1, SelectionRecord { role: "target".into(), selection: sel });
            Some("ada")
        }
    };
    if let Some(name) = stage {
        let target_refs: Vec<&PreparedFrame> = target_set.iter().collect();
        timed(&mut report.timings, "self_train", || {
            self_train(&mut model.store, &model.seg, &source_sel, &target_refs, &cfg.self_train, stage_seed(seed, "train.self"))
        })?;
        let eval = evaluate(&model, data)?;
        report.stages.push(StageEval { stage: name.into(), eval });
    }
    Ok(TaskOutcome { model, report })
}

/// Runs the full staged recipe for one task specification.
pub fn run_task(spec: &TaskSpec, data: &TaskData, cfg: &PipelineConfig) -> Result<TaskOutcome> {
    let base = run_source_stages(spec, data, cfg)?;
    run_target_stages(base, spec, data, cfg)
}

/// Shares stages 1–4 across several target budgets.
pub fn budget_sweep(
    spec: &TaskSpec,
    data: &TaskData,
    cfg: &PipelineConfig,
    budgets: &[Budget],
) -> Result<Vec<TaskOutcome>> {
    let base = run_source_stages(spec, data, cfg)?;
    budgets
        .iter()
        .map(|&b| {
            let s = TaskSpec { target_budget: b, ..spec.clone() };
            let mut out = run_target_stages(base.clone(), &s, data, cfg)?;
            out.report.config_hash = cfg.hash(&s);
            out.report.task = s;
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_frame, DomainSpec};
    use crate::frame::Domain;
    use proptest::prelude::*;

    fn tiny_frame(seed: u64, points: usize) -> PreparedFrame {
        let frame = generate_frame(&DomainSpec::source(), seed, seed, Domain::Source).unwrap().frame;
        let p = PreparedFrame::from_frame(&frame).unwrap();
        let rows: Vec<usize> = (0..p.len()).step_by((p.len() / points).max(1)).take(points).collect();
        p.subset(&rows)
    }

    fn tiny_model(seed: u64) -> Model {
        Model::init(&ModelConfig { features: 8, ..Default::default() }, seed).unwrap()
    }

    #[test]
    fn seg_loss_examples() {
        let uniform = Matrix::zeros(3, 4);
        let l = seg_loss(&uniform, &[Some(0), Some(3), Some(1)]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let two = Matrix::from_rows(&[&[5.0, -1.0], &[0.0, 0.0]]);
        assert!((seg_loss(&two, &[None, Some(1)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let peaked = Matrix::from_rows(&[&[40.0, -40.0]]);
        assert!(seg_loss(&peaked, &[Some(0)]).unwrap() < 1e-12);
        assert!(matches!(seg_loss(&two, &[None, None]), Err(Error::NoValidPoints)));
    }

    #[test]
    fn fusion_examples() {
        let l2 = Matrix::from_rows(&[&[60.0, -60.0]]);
        let l3 = Matrix::zeros(1, 2);
        let p = fuse_predictions(&l2, &l3).unwrap();
        assert!((p.get(0, 0) - 0.75).abs() < 1e-12 && (p.get(0, 1) - 0.25).abs() < 1e-12);
        let same = Matrix::from_rows(&[&[0.3, -1.0, 2.0]]);
        let p = fuse_predictions(&same, &same).unwrap();
        assert!(p.max_abs_diff(&softmax_rows(&same, 1.0).unwrap()) < 1e-15);
        assert!(matches!(fuse_predictions(&l2, &Matrix::zeros(2, 2)), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn fused_rows_sum_to_one(v in proptest::collection::vec(-30.0f64..30.0, 24)) {
            let l2 = Matrix::from_vec(4, 3, v[..12].to_vec()).unwrap();
            let l3 = Matrix::from_vec(4, 3, v[12..].to_vec()).unwrap();
            let p = fuse_predictions(&l2, &l3).unwrap();
            let (a2, a3, af) = (l2.argmax_rows(), l3.argmax_rows(), p.argmax_rows());
            for r in 0..4 {
                prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                if a2[r] == a3[r] {
                    prop_assert_eq!(af[r], a2[r]);
                }
            }
        }

        #[test]
        fn seg_loss_permutation_invariant(v in proptest::collection::vec(-5.0f64..5.0, 15), shift in 1usize..5) {
            let labels: Vec<Option<usize>> = (0..5).map(|i| if i == 2 { None } else { Some(i % 3) }).collect();
            let m = Matrix::from_vec(5, 3, v).unwrap();
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let lp: Vec<Option<usize>> = perm.iter().map(|&i| labels[i]).collect();
            let a = seg_loss(&m, &labels).unwrap();
            let b = seg_loss(&m.select_rows(&perm), &lp).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn pseudo_keep_fraction(v in proptest::collection::vec(0.01f64..1.0, 30), q in 0.0f64..=1.0) {
            let probs = Matrix::from_vec(10, 3, v).unwrap();
            let (labels, conf) = pseudo_label_probs(&probs, q).unwrap();
            let pred = probs.argmax_rows();
            for class in 0..3 {
                let members = pred.iter().filter(|&&p| p == class).count();
                let kept = labels.iter().filter(|l| **l == Some(class)).count();
                prop_assert!((kept as f64 - (1.0 - q) * members as f64).abs() <= 1.0);
            }
            for (i, l) in labels.iter().enumerate() {
                if let Some(c) = l {
                    prop_assert_eq!(*c, pred[i]);
                    prop_assert_eq!(conf[i], probs.get(i, pred[i]));
                }
            }
        }
    }

    #[test]
    fn pseudo_label_quantile_examples() {
        let probs = Matrix::from_rows(&[&[0.9, 0.1], &[0.8, 0.2], &[0.6, 0.4], &[0.5, 0.5]]);
        let (labels, _) = pseudo_label_probs(&probs, 0.5).unwrap();
        assert_eq!(labels, vec![Some(0), Some(0), None, None]);
        assert!(pseudo_label_probs(&probs, 1.0).unwrap().0.iter().all(Option::is_none));
        let (all, _) = pseudo_label_probs(&probs, 0.0).unwrap();
        assert_eq!(all, vec![Some(0); 4]);
        assert!(pseudo_label_probs(&probs, 1.5).is_err());
    }

    #[test]
    fn pseudo_label_warns_on_empty_keep_set() {
        let m = tiny_model(1);
        let f = tiny_frame(2, 20);
        let out = pseudo_label(&m.store, &m.seg, &[&f], &PseudoLabelPolicy { quantile: 1.0, fused: true }).unwrap();
        assert!(out[0].warning && out[0].labels.iter().all(Option::is_none));
        let out = pseudo_label(&m.store, &m.seg, &[&f], &PseudoLabelPolicy { quantile: 0.0, fused: false }).unwrap();
        let (_, l3) = m.seg.predict(&m.store, &f).unwrap();
        let expect: Vec<Option<usize>> = l3.argmax_rows().into_iter().map(Some).collect();
        assert_eq!(out[0].labels, expect);
        assert!(!out[0].warning);
    }

    #[test]
    fn apl_covers_exactly_the_selection() {
        let m = tiny_model(1);
        let frames: Vec<PreparedFrame> = (0..10).map(|s| tiny_frame(s, 12)).collect();
        let refs: Vec<&PreparedFrame> = frames.iter().collect();
        let sel = SelectionResult { ids: vec![7, 2, 5], scores: vec![0.9, 0.8, 0.7], budget: 3, strategy: ScoringStrategy::CrossModal };
        let out = apl(&m.store, &m.seg, &refs, &sel, &PseudoLabelPolicy::default()).unwrap();
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), sel.ids);
        let all = SelectionResult { ids: (0..10).collect(), scores: vec![0.5; 10], budget: 10, ..sel.clone() };
        let a = apl(&m.store, &m.seg, &refs, &all, &PseudoLabelPolicy::default()).unwrap();
        let b = pseudo_label(&m.store, &m.seg, &refs, &PseudoLabelPolicy::default()).unwrap();
        assert_eq!(a, b);
        let missing = SelectionResult { ids: vec![42], scores: vec![0.1], budget: 1, ..sel };
        assert!(matches!(apl(&m.store, &m.seg, &refs, &missing, &PseudoLabelPolicy::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn one_frame_is_memorised() {
        let mut m = tiny_model(4);
        let f = tiny_frame(5, 24);
        let cfg = TrainConfig { iterations: 600, lr: 1e-2, points_per_frame: 0, ..Default::default() };
        let hist = train_source(&mut m.store, &m.seg, &[&f], &cfg, 1).unwrap();
        let (l2, l3) = m.seg.predict(&m.store, &f).unwrap();
        let (a, b) = (seg_loss(&l2, &f.labels).unwrap(), seg_loss(&l3, &f.labels).unwrap());
        assert!(a < 0.1 && b < 0.1, "branch losses {a} {b}");
        let head: f64 = hist.loss[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = hist.loss[hist.loss.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < head);
    }

    #[test]
    fn training_is_seeded() {
        let frames: Vec<PreparedFrame> = (0..3).map(|s| tiny_frame(s, 40)).collect();
        let refs: Vec<&PreparedFrame> = frames.iter().collect();
        let cfg = TrainConfig { iterations: 20, points_per_frame: 16, batch: 2, ..Default::default() };
        let run = |seed| {
            let mut m = tiny_model(0);
            self_train(&mut m.store, &m.seg, &refs[..2], &refs[2..], &cfg, seed).unwrap();
            m.store
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        let mut m = tiny_model(0);
        assert!(matches!(self_train(&mut m.store, &m.seg, &refs, &[], &cfg, 0), Err(Error::Argument(_))));
        assert!(matches!(train_source(&mut m.store, &m.seg, &[], &cfg, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn task_spec_combinations() {
        let ok = TaskSpec::default();
        assert!(ok.validate().is_ok());
        let cases = [
            TaskSpec { task: TaskKind::Ufda, target_fraction: 0.0, ..ok.clone() },
            TaskSpec { task: TaskKind::Ufda, target_fraction: 1.5, ..ok.clone() },
            TaskSpec { task: TaskKind::Uda, target_fraction: 0.5, ..ok.clone() },
            TaskSpec { task: TaskKind::Ada, self_training: SelfTraining::Pl, ..ok.clone() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        assert!(TaskSpec { task: TaskKind::Ufda, target_fraction: 0.05, ..ok }.validate().is_ok());
    }

    #[test]
    fn ufda_subset_is_seeded_and_sized() {
        let spec = TaskSpec { task: TaskKind::Ufda, target_fraction: 0.05, seed: 2, ..Default::default() };
        let a = target_subset(&spec, 40).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, target_subset(&spec, 40).unwrap());
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(target_subset(&TaskSpec::default(), 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }
}
