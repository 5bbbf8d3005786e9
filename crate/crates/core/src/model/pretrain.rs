use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::graphs::classifier::ordered_pairs;
use crate::graphs::{crossing_labels, GraphStrategy, HeuristicConfig, InteractionClassifier, InteractionLabel};
use crate::neural::{weighted_cross_entropy_tape, Tape};
use crate::scene::{ObservedScene, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub enc_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    /// Scenes per update.
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, reached by cosine decay.
    pub lr_final_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub heuristic: HeuristicConfig,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            enc_dim: crate::graphs::PAIR_ENC_DIM,
            embed_dim: crate::graphs::EMBED_DIM,
            epochs: 30,
            batch_size: 32,
            lr: 3e-3,
            lr_final_fraction: 0.05,
            grad_clip: 5.0,
            seed: 0,
            heuristic: HeuristicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub strategy: GraphStrategy,
    /// Held-out accuracy over both orderings of every pair.
    pub accuracy: f64,
    /// `None` for classes absent from the held-out set.
    pub per_class_recall: [Option<f64>; 3],
    /// Rows are true classes, columns predictions.
    pub confusion: [[usize; 3]; 3],
    pub class_counts: [usize; 3],
    pub class_weights: [f64; 3],
    /// The training labels contain a single class.
    pub degenerate: bool,
    /// Mean weighted cross-entropy per training pair, one entry per epoch.
    pub curve: Vec<f64>,
}

impl ClassifierReport {
    /// Confusion matrix as aligned text.
    pub fn confusion_table(&self) -> String {
        let names = ["none", "m->n", "n->m"];
        let mut out = format!("{:>10}{:>10}{:>10}{:>10}\n", "true\\pred", names[0], names[1], names[2]);
        for (k, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{:>10}{:>10}{:>10}{:>10}\n", names[k], row[0], row[1], row[2]));
        }
        out
    }
}

struct Labeled {
    scene: ObservedScene,
    targets: Vec<usize>,
}

fn label_scene(scene: &Scene, flags: (bool, bool), heuristic: &HeuristicConfig) -> Result<Labeled, ModelError> {
    let labels = crossing_labels(scene, flags.0, flags.1, heuristic)?;
    let targets = labels
        .iter()
        .flat_map(|l| [l.class.index(), l.class.flipped().index()])
        .collect();
    Ok(Labeled {
        scene: scene.observed(),
        targets,
    })
}

/// All agents of several scenes in one view, with pair indices shifted accordingly.
fn merge(items: &[&Labeled]) -> (ObservedScene, Vec<(usize, usize)>, Vec<usize>) {
    let mut agents = Vec::new();
    let mut pairs = Vec::new();
    let mut targets = Vec::new();
    for it in items {
        let base = agents.len();
        pairs.extend(ordered_pairs(it.scene.n_agents()).into_iter().map(|(i, j)| (base + i, base + j)));
        targets.extend_from_slice(&it.targets);
        agents.extend(it.scene.agents.iter().cloned());
    }
    let s = &items[0].scene;
    let merged = ObservedScene {
        scene_id: String::from("batch"),
        dt: s.dt,
        horizon: s.horizon,
        agents,
    };
    (merged, pairs, targets)
}

/// Learning rate for `epoch` of `total` under cosine decay from `lr` to `lr * final_fraction`.
pub(crate) fn cosine_lr(lr: f64, final_fraction: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr;
    }
    let t = epoch as f64 / (total - 1) as f64;
    let f = final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    lr * f
}

/// Inverse-frequency weights normalized to mean 1 over the classes present.
fn class_weights(counts: &[usize; 3]) -> [f64; 3] {
    let mut w = [0.0; 3];
    for k in 0..3 {
        if counts[k] > 0 {
            w[k] = 1.0 / counts[k] as f64;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|x| *x *= present / sum);
    }
    w
}

fn evaluate(clf: &InteractionClassifier, data: &[Labeled]) -> ([[usize; 3]; 3], f64, [Option<f64>; 3]) {
    let mut confusion = [[0usize; 3]; 3];
    for chunk in data.chunks(64) {
        let items: Vec<&Labeled> = chunk.iter().filter(|l| !l.targets.is_empty()).collect();
        if items.is_empty() {
            continue;
        }
        let (merged, pairs, targets) = merge(&items);
        let mut tape = Tape::new();
        let p = clf.net.pair_probs(&mut tape, &clf.store, &merged, &pairs);
        let t = tape.value(p);
        for (r, &truth) in targets.iter().enumerate() {
            let pred = InteractionLabel::from_probs([t.get(r, 0), t.get(r, 1), t.get(r, 2)]).class;
            confusion[truth][pred.index()] += 1;
        }
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let recall = std::array::from_fn(|k| {
        let n: usize = confusion[k].iter().sum();
        (n > 0).then(|| confusion[k][k] as f64 / n as f64)
    });
    (confusion, accuracy, recall)
}

/// Trains the pair classifier on crossing-heuristic labels with weighted cross-entropy.
///
/// Every unordered pair contributes both orderings. A training set with a
/// single label class is trained anyway and flagged in the report.
pub fn pretrain_classifier(
    train: &[Scene],
    heldout: &[Scene],
    strategy: GraphStrategy,
    config: &ClassifierTrainConfig,
) -> Result<(InteractionClassifier, ClassifierReport), ModelError> {
    let flags = strategy
        .crossing_flags()
        .ok_or_else(|| ModelError::Config(format!("classifier pretraining needs a crossing strategy, got {strategy}")))?;
    if train.is_empty() {
        return Err(ModelError::EmptyData("classifier training set"));
    }
    if config.batch_size == 0 || config.enc_dim == 0 || config.embed_dim == 0 || !(config.lr > 0.0) {
        return Err(ModelError::Config("classifier sizes and lr must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.lr_final_fraction) {
        return Err(ModelError::Config("lr_final_fraction must lie in [0, 1]".into()));
    }
    let train_data: Vec<Labeled> = train.iter().map(|s| label_scene(s, flags, &config.heuristic)).collect::<Result<_, _>>()?;
    let held_data: Vec<Labeled> = heldout.iter().map(|s| label_scene(s, flags, &config.heuristic)).collect::<Result<_, _>>()?;
    let mut counts = [0usize; 3];
    for t in train_data.iter().flat_map(|l| &l.targets) {
        counts[*t] += 1;
    }
    let degenerate = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if degenerate {
        log::warn!("classifier training labels contain a single class {counts:?}; training proceeds on degenerate data");
    }
    let weights = class_weights(&counts);

    let mut clf = InteractionClassifier::new(config.enc_dim, config.embed_dim, config.seed);
    let observed: Vec<ObservedScene> = train_data.iter().map(|l| l.scene.clone()).collect();
    clf.net.fit_standardization(&mut clf.store, &observed);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc1a5);
    let mut order: Vec<usize> = (0..train_data.len()).filter(|&i| !train_data[i].targets.is_empty()).collect();
    let n_pairs: usize = counts.iter().sum();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut last_good = clf.store.clone();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(config.lr, config.lr_final_fraction, epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let items: Vec<&Labeled> = chunk.iter().map(|&i| &train_data[i]).collect();
            let (merged, pairs, targets) = merge(&items);
            let mut tape = Tape::new();
            let p = clf.net.pair_probs(&mut tape, &clf.store, &merged, &pairs);
            let loss = weighted_cross_entropy_tape(&mut tape, p, &targets, &weights);
            let value = tape.scalar(loss);
            let diverged = |store: crate::neural::ParamStore| ModelError::Divergence {
                stage: "classifier pretraining",
                epoch,
                step,
                checkpoint: Some(Box::new(store)),
            };
            if !value.is_finite() {
                return Err(diverged(last_good));
            }
            epoch_loss += value;
            let loss = tape.scale(loss, 1.0 / targets.len() as f64);
            tape.backward(loss);
            clf.store.accumulate(&tape);
            clf.store.clip_grad_norm(config.grad_clip);
            if clf.store.adam_like_step(lr, (0.9, 0.999), 1e-8).is_err() {
                return Err(diverged(last_good));
            }
        }
        last_good = clf.store.clone();
        let mean = if n_pairs == 0 { 0.0 } else { epoch_loss / n_pairs as f64 };
        log::debug!("classifier epoch {epoch}: weighted CE {mean:.5}");
        curve.push(mean);
    }
    let eval = if held_data.is_empty() { &train_data } else { &held_data };
    let (confusion, accuracy, per_class_recall) = evaluate(&clf, eval);
    log::info!("classifier held-out accuracy {accuracy:.4}");
    Ok((
        clf,
        ClassifierReport {
            strategy,
            accuracy,
            per_class_recall,
            confusion,
            class_counts: counts,
            class_weights: weights,
            degenerate,
            curve,
        },
    ))
}
