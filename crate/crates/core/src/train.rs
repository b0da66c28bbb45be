//! The training loop: paired views, joint loss, Adam updates, and
//! evaluation on raw inputs.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AblationMode, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::loss::{self, pair_similarity_stats, ClusterLossConfig, InstanceLossConfig};
use crate::matrix::Matrix;
use crate::metrics::MetricBundle;
use crate::model::{init_params, ModelParams};
use crate::par::Execution;
use crate::seed::derive_seed;
use crate::tape::{Tape, Var};

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const KMEANS_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, beta) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::invalid(
                    field,
                    format!("must lie in [0, 1), got {beta}"),
                ));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("adam.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates for a fixed list of parameter tensors. No weight
/// decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new<'a>(
        params: impl IntoIterator<Item = &'a Matrix>,
        learning_rate: f64,
        config: AdamConfig,
    ) -> Self {
        let first: Vec<Matrix> = params
            .into_iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            learning_rate,
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != self.first[i].shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let values = p.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                let mk = &mut m.as_mut_slice()[k];
                let vk = &mut v.as_mut_slice()[k];
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Which loss terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub instance: InstanceLossConfig,
    pub cluster: ClusterLossConfig,
    pub use_instance: bool,
    pub use_cluster: bool,
}

impl LossSettings {
    pub fn for_experiment(config: &ExperimentConfig) -> Self {
        Self {
            instance: config.instance_loss,
            cluster: config.cluster_loss,
            use_instance: config.ablation.uses_instance_loss(),
            use_cluster: config.ablation.uses_cluster_loss(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub instance: Option<Var>,
    pub cluster: Option<Var>,
    pub total: Var,
}

/// Joint objective: the unweighted sum of the active loss terms. A term is
/// only recorded when active; with both switched off the total is 0.
pub fn total_loss(
    tape: &mut Tape,
    za: Var,
    zb: Var,
    ya: Var,
    yb: Var,
    settings: &LossSettings,
) -> Result<LossTerms> {
    let instance = settings
        .use_instance
        .then(|| loss::instance_loss(tape, za, zb, &settings.instance))
        .transpose()?;
    let cluster = settings
        .use_cluster
        .then(|| loss::cluster_loss(tape, ya, yb, &settings.cluster))
        .transpose()?;
    let total = match (instance, cluster) {
        (Some(i), Some(c)) => tape.add(i, c)?,
        (Some(t), None) | (None, Some(t)) => t,
        (None, None) => tape.leaf(Matrix::zeros(1, 1)),
    };
    Ok(LossTerms {
        instance,
        cluster,
        total,
    })
}

/// Per-epoch training summary. Loss and similarity values are averages
/// over the epoch's mini-batches; metrics are measured on raw inputs after
/// the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ins: f64,
    pub l_clu: f64,
    pub l_total: f64,
    pub metrics: Option<MetricBundle>,
    pub pos_sim_inst: f64,
    pub neg_sim_inst: f64,
    pub pos_sim_clu: f64,
    pub neg_sim_clu: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

pub const REPORT_HEADER: &str =
    "epoch,l_ins,l_clu,l_total,nmi,acc,ari,pos_sim_inst,neg_sim_inst,pos_sim_clu,neg_sim_clu";

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One CSV row per epoch; metric cells are empty when the dataset is
    /// unlabelled.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for e in &self.epochs {
            let (nmi, acc, ari) = match e.metrics {
                Some(m) => (m.nmi.to_string(), m.acc.to_string(), m.ari.to_string()),
                None => Default::default(),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.l_ins,
                e.l_clu,
                e.l_total,
                nmi,
                acc,
                ari,
                e.pos_sim_inst,
                e.neg_sim_inst,
                e.pos_sim_clu,
                e.neg_sim_clu
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The resolved configuration the run used.
    pub config: ExperimentConfig,
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Cluster assignments for raw inputs: the cluster head's argmax, or k-means
/// on the normalized instance projections when the cluster head is
/// ablated.
pub fn assign_clusters(
    params: &ModelParams,
    x: &Matrix,
    ablation: AblationMode,
    seed: u64,
    exec: Execution,
) -> Result<Vec<usize>> {
    if ablation == AblationMode::IchOnly {
        let z = params.instance_features(x, exec)?.row_l2_normalize()?;
        let fit = kmeans(
            &z,
            params.config.cluster_count,
            derive_seed(seed, &[KMEANS_STREAM]),
            &KMeansConfig::default(),
            exec,
        )?;
        Ok(fit.assignments)
    } else {
        params.predict_assignments_with(x, exec)
    }
}

/// Metrics of the model's assignments on the raw, un-augmented dataset.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    ablation: AblationMode,
    seed: u64,
    exec: Execution,
) -> Result<MetricBundle> {
    let truth = dataset
        .labels
        .as_deref()
        .ok_or_else(|| Error::contract("evaluation needs a labelled dataset"))?;
    let pred = assign_clusters(params, &dataset.samples, ablation, seed, exec)?;
    MetricBundle::compute(&pred, truth)
}

pub fn train(config: &ExperimentConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, Execution::default(), |_| {})
}

/// Runs the full schedule. `on_epoch` sees each record as it is produced.
/// Results are identical for every `exec`.
pub fn train_with(
    config: &ExperimentConfig,
    dataset: &Dataset,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let config = config.resolve(dataset)?;
    let pipeline = config.augmentation.clone().expect("resolved");
    let mut params = init_params(&config.model_config(dataset.dim())?)?;
    let mut optimizer = OptimizerState::new(params.tensors(), config.learning_rate, config.adam);
    let settings = LossSettings::for_experiment(&config);
    let pair_mode = config.ablation.pair_mode();
    let n = dataset.len();
    let batches = n / config.batch_size;
    let mut report = TrainReport::default();

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[SHUFFLE_STREAM, epoch as u64],
        )));
        let mut sums = [0.0f64; 7];
        for b in 0..batches {
            let idx = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let wrap = |e: Error| Error::Training {
                epoch,
                batch: b,
                source: Box::new(e),
            };
            let x = dataset.samples.select_rows(idx);
            let keys: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(config.seed, &[AUGMENT_STREAM, epoch as u64, i as u64]))
                .collect();
            let (xa, xb) = pipeline
                .augment_batch(&x, dataset.geometry, pair_mode, &keys, exec)
                .map_err(wrap)?;
            let step = train_step(&mut params, &mut optimizer, &settings, xa, xb).map_err(wrap)?;
            for (s, v) in sums.iter_mut().zip(step) {
                *s += v;
            }
        }
        let k = batches as f64;
        let metrics = match dataset.labels {
            Some(_) => Some(evaluate(
                &params,
                dataset,
                config.ablation,
                config.seed,
                exec,
            )?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            l_ins: sums[0] / k,
            l_clu: sums[1] / k,
            l_total: sums[2] / k,
            metrics,
            pos_sim_inst: sums[3] / k,
            neg_sim_inst: sums[4] / k,
            pos_sim_clu: sums[5] / k,
            neg_sim_clu: sums[6] / k,
        };
        on_epoch(&record);
        report.epochs.push(record);
    }
    Ok(TrainOutcome {
        config,
        params,
        report,
    })
}

/// Forward both views, backpropagate the joint loss and apply one Adam
/// update. Returns `[l_ins, l_clu, l_total, pos_inst, neg_inst, pos_clu,
/// neg_clu]` for the batch. Inactive loss terms are still evaluated for the
/// report but carry no gradient.
fn train_step(
    params: &mut ModelParams,
    optimizer: &mut OptimizerState,
    settings: &LossSettings,
    xa: Matrix,
    xb: Matrix,
) -> Result<[f64; 7]> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let va = tape.leaf(xa);
    let vb = tape.leaf(xb);
    let fa = params.forward_on_tape(&mut tape, &bound, va)?;
    let fb = params.forward_on_tape(&mut tape, &bound, vb)?;
    let terms = total_loss(&mut tape, fa.z, fb.z, fa.y, fb.y, settings)?;
    let l_total = tape.scalar(terms.total);
    if !l_total.is_finite() {
        return Err(Error::DegenerateBatch(format!("loss is {l_total}")));
    }
    let mut grads = tape.backward(terms.total)?;
    let grads: Vec<Matrix> = bound.vars.iter().map(|&v| grads.take(v)).collect();

    let (za, zb) = (tape.value(fa.z), tape.value(fb.z));
    let (ya, yb) = (tape.value(fa.y), tape.value(fb.y));
    let l_ins = match terms.instance {
        Some(v) => tape.scalar(v),
        None => loss::instance_loss_value(za, zb, &settings.instance)?,
    };
    let l_clu = match terms.cluster {
        Some(v) => tape.scalar(v),
        None => loss::cluster_loss_value(ya, yb, &settings.cluster)?,
    };
    let inst = pair_similarity_stats(za, zb)?;
    let clu = pair_similarity_stats(&ya.transpose(), &yb.transpose())?;

    optimizer.step(&mut params.tensors_mut(), &grads)?;
    Ok([
        l_ins,
        l_clu,
        l_total,
        inst.positive,
        inst.negative,
        clu.positive,
        clu.negative,
    ])
}
