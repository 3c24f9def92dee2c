//! Client-side local training and prototype averaging.
//!
//! A local iteration draws a batch, computes each sample's prototype `C`, the
//! prediction from `C`, and the pooled prototype `P = softpool(C)`. The loss is
//!
//! ```text
//! mean_i CE_i + lambda * sum_j mean_{i in batch, y_i = j} ||P_i - G_j||_2
//! ```
//!
//! where `G_j` is the global prototype of class `j` from the previous round.
//! Classes without a global prototype contribute nothing.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::numeric::{
    accumulate_gradient, cross_entropy, forward, forward_representation, l2_distance, sgd_step_in_place,
    FeatureMap, ModelParams,
};
use crate::prototype::PrototypeSet;
use crate::softpool::{softpool, softpool_backward, KernelSpec};

/// Local optimisation hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub eta: f64,
    pub lambda: f64,
    /// Local iterations per round.
    pub local_iters: usize,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { eta: 0.01, lambda: 1.0, local_iters: 5, batch_size: 32 }
    }
}

impl TrainingConfig {
    /// `eta == 0` is accepted so that a frozen model can be probed.
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be finite and non-negative, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if self.local_iters == 0 {
            return Err(Error::Config("local iterations E must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub shard: ClientShard,
    pub params: ModelParams,
    pub honest: bool,
}

/// Losses observed during one call to [`ClientState::local_round`], one entry
/// per iteration, measured before that iteration's update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalReport {
    pub losses: Vec<f64>,
    pub classification: Vec<f64>,
    pub prototype: Vec<f64>,
}

/// Per-sample data a batch step needs.
struct SampleForward {
    act: crate::numeric::Activations,
    pooled: FeatureMap,
}

/// Full-shard loss terms of a client under a given global prototype set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveTerms {
    /// Sum over training samples of the cross-entropy.
    pub classification_sum: f64,
    /// Class -> mean over that class's training samples of `||P_i - G_j||`.
    pub prototype_distance: BTreeMap<usize, f64>,
}

impl ClientState {
    pub fn new(shard: ClientShard, params: ModelParams, honest: bool) -> Self {
        Self { client_id: shard.client_id, shard, params, honest }
    }

    fn sample_forward(&self, x: &[f64], spec: KernelSpec) -> Result<SampleForward> {
        let act = forward(&self.params, x)?;
        let pooled = softpool(&act.proto, spec)?;
        Ok(SampleForward { act, pooled })
    }

    /// Runs `cfg.local_iters` SGD iterations on random batches.
    ///
    /// With an empty `global`, the prototype term is skipped.
    pub fn local_round<R: Rng + ?Sized>(
        &mut self,
        global: &PrototypeSet,
        cfg: &TrainingConfig,
        spec: KernelSpec,
        rng: &mut R,
    ) -> Result<LocalReport> {
        cfg.validate()?;
        if self.shard.train.is_empty() {
            return Err(Error::Config(format!("client {} has no training samples", self.client_id)));
        }
        let n = self.shard.train.len();
        let batch_len = cfg.batch_size.min(n);
        let use_protos = cfg.lambda != 0.0 && !global.is_empty();
        let mut report = LocalReport::default();

        for _ in 0..cfg.local_iters {
            let mut batch = index::sample(rng, n, batch_len).into_vec();
            batch.sort_unstable();

            let fwd: Vec<SampleForward> = batch
                .iter()
                .map(|&i| self.sample_forward(&self.shard.train[i].features, spec))
                .collect::<Result<_>>()?;

            let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
            for &i in &batch {
                *per_class.entry(self.shard.train[i].label).or_insert(0) += 1;
            }

            let mut grads = self.params.zero_gradient();
            let ce_weight = 1.0 / batch_len as f64;
            let mut ce_total = 0.0;
            let mut proto_total = 0.0;
            for (&i, f) in batch.iter().zip(&fwd) {
                let sample = &self.shard.train[i];
                ce_total += cross_entropy(&f.act.probs, sample.label)?;

                let proto_grad = match global.get(sample.label).filter(|_| use_protos) {
                    Some(target) => {
                        if target.values.len() != f.pooled.len() {
                            return Err(Error::Shape(format!(
                                "global prototype for class {} has {} values, pooled prototype has {}",
                                sample.label,
                                target.values.len(),
                                f.pooled.len()
                            )));
                        }
                        let class_n = per_class[&sample.label] as f64;
                        let dist = l2_distance(&f.pooled.values, &target.values);
                        proto_total += dist / class_n;
                        if dist > 0.0 {
                            let upstream = FeatureMap {
                                rows: f.pooled.rows,
                                cols: f.pooled.cols,
                                values: f
                                    .pooled
                                    .values
                                    .iter()
                                    .zip(&target.values)
                                    .map(|(p, g)| (p - g) / (dist * class_n))
                                    .collect(),
                            };
                            Some(softpool_backward(&f.act.proto, spec, &upstream)?)
                        } else {
                            None
                        }
                    }
                    None => None,
                };
                accumulate_gradient(
                    &self.params,
                    &sample.features,
                    &f.act,
                    sample.label,
                    ce_weight,
                    proto_grad.as_ref(),
                    cfg.lambda,
                    &mut grads,
                )?;
            }
            let ce_mean = ce_total / batch_len as f64;
            report.classification.push(ce_mean);
            report.prototype.push(proto_total);
            report.losses.push(ce_mean + cfg.lambda * proto_total);

            sgd_step_in_place(&mut self.params, &grads, cfg.eta)?;
        }
        Ok(report)
    }

    /// Pooled prototype of every training sample, in ascending sample index
    /// order, grouped by class.
    fn pooled_by_class(&self, spec: KernelSpec) -> Result<BTreeMap<usize, Vec<(usize, FeatureMap)>>> {
        let mut groups: BTreeMap<usize, Vec<(usize, FeatureMap)>> = BTreeMap::new();
        for s in &self.shard.train {
            let c = forward_representation(&self.params, &s.features)?;
            groups.entry(s.label).or_default().push((s.index, softpool(&c, spec)?));
        }
        for g in groups.values_mut() {
            g.sort_by_key(|(idx, _)| *idx);
        }
        Ok(groups)
    }

    /// Mean pooled prototype per class over the training split.
    pub fn prototype_average(&self, spec: KernelSpec) -> Result<PrototypeSet> {
        let mut set = PrototypeSet::new();
        for (class, members) in self.pooled_by_class(spec)? {
            let len = members[0].1.len();
            let mut sum = vec![0.0; len];
            for (_, p) in &members {
                sum.iter_mut().zip(&p.values).for_each(|(s, v)| *s += v);
            }
            let count = members.len();
            sum.iter_mut().for_each(|s| *s /= count as f64);
            set.insert(class, sum, count);
        }
        Ok(set)
    }

    /// Predicted class: argmax of the decision layer, ties toward the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let probs = forward(&self.params, x)?.probs;
        Ok(argmax(&probs))
    }

    /// Fraction of test samples predicted correctly.
    pub fn evaluate(&self) -> Result<f64> {
        if self.shard.test.is_empty() {
            return Err(Error::Evaluation(format!("client {} has no test samples", self.client_id)));
        }
        let mut correct = 0usize;
        for s in &self.shard.test {
            if self.predict(&s.features)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.shard.test.len() as f64)
    }

    /// Loss terms over the whole training split against `global`.
    pub fn objective_terms(&self, global: &PrototypeSet, spec: KernelSpec) -> Result<ObjectiveTerms> {
        let mut terms = ObjectiveTerms::default();
        let mut dist_sum: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for s in &self.shard.train {
            let f = self.sample_forward(&s.features, spec)?;
            terms.classification_sum += cross_entropy(&f.act.probs, s.label)?;
            if let Some(target) = global.get(s.label) {
                if target.values.len() == f.pooled.len() {
                    let e = dist_sum.entry(s.label).or_insert((0.0, 0));
                    e.0 += l2_distance(&f.pooled.values, &target.values);
                    e.1 += 1;
                }
            }
        }
        terms.prototype_distance = dist_sum.into_iter().map(|(j, (d, n))| (j, d / n as f64)).collect();
        Ok(terms)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, partition_non_iid, PartitionSpec, Sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn client(seed: u64) -> ClientState {
        let ds = generate_synthetic(4, 6, 60, 1.0, 4.0, seed).unwrap();
        let spec = PartitionSpec { avg: 3, std: 0, samples_per_class: 20, replacement: true };
        let shard = partition_non_iid(&ds, 1, &spec, seed).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClientState::new(shard, ModelParams::random(6, 4, 4, 4, &mut rng), true)
    }

    fn sample(index: usize, label: usize, features: Vec<f64>) -> Sample {
        Sample { index, features, label }
    }

    #[test]
    fn lambda_zero_ignores_global_prototypes() {
        let cfg = TrainingConfig { eta: 0.05, lambda: 0.0, local_iters: 3, batch_size: 8 };
        let mut global = PrototypeSet::new();
        for j in 0..4 {
            global.insert(j, vec![5.0; 4], 1);
        }
        let mut a = client(1);
        let mut b = a.clone();
        a.local_round(&global, &cfg, KernelSpec::square(2), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        b.local_round(&PrototypeSet::new(), &cfg, KernelSpec::square(2), &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cfg = TrainingConfig { eta: 0.0, lambda: 1.0, local_iters: 1, batch_size: 4 };
        let mut c = client(2);
        let before = c.params.clone();
        let report = c
            .local_round(&PrototypeSet::new(), &cfg, KernelSpec::square(2), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(c.params, before);
        assert_eq!(report.losses.len(), 1);
        assert!(report.losses[0].is_finite() && report.losses[0] > 0.0);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = TrainingConfig { local_iters: 0, ..TrainingConfig::default() };
        let mut c = client(3);
        let err = c.local_round(&PrototypeSet::new(), &cfg, KernelSpec::square(2), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_shard_is_config_error() {
        let mut c = client(3);
        c.shard.train.clear();
        let err = c.local_round(
            &PrototypeSet::new(),
            &TrainingConfig::default(),
            KernelSpec::square(2),
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn local_round_is_deterministic() {
        let cfg = TrainingConfig::default();
        let mut global = PrototypeSet::new();
        for j in 0..4 {
            global.insert(j, vec![0.3; 4], 1);
        }
        let run = || {
            let mut c = client(4);
            c.local_round(&global, &cfg, KernelSpec::square(2), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            c.params
        };
        let (a, b) = (run(), run());
        let bits = |p: &ModelParams| p.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn average_of_one_and_two_samples() {
        // identity repr on positive inputs: pooled prototype with a 1x1 kernel is x
        let mut params = ModelParams::zeros(2, 1, 2, 2);
        params.repr.weights = crate::numeric::Matrix::identity(2);
        let shard = ClientShard {
            client_id: 0,
            classes: vec![0, 1],
            train: vec![sample(3, 0, vec![3.0, 4.0]), sample(1, 0, vec![1.0, 2.0]), sample(2, 1, vec![7.0, 8.0])],
            test: vec![],
        };
        let c = ClientState::new(shard, params, true);
        let set = c.prototype_average(KernelSpec::identity()).unwrap();
        assert_eq!(set.get(0).unwrap().values, vec![2.0, 3.0]);
        assert_eq!(set.get(0).unwrap().count, 2);
        assert_eq!(set.get(1).unwrap().values, vec![7.0, 8.0]);
    }

    #[test]
    fn average_matches_brute_force() {
        let c = client(5);
        let spec = KernelSpec::square(2);
        let set = c.prototype_average(spec).unwrap();
        for (&j, proto) in &set.classes {
            let members: Vec<_> = c.shard.train.iter().filter(|s| s.label == j).collect();
            let mut total = vec![0.0; proto.values.len()];
            for s in &members {
                let pooled = softpool(&forward_representation(&c.params, &s.features).unwrap(), spec).unwrap();
                total.iter_mut().zip(&pooled.values).for_each(|(t, v)| *t += v);
            }
            assert_eq!(proto.count, members.len());
            for (t, v) in total.iter().zip(&proto.values) {
                assert!((t / members.len() as f64 - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn average_is_order_invariant() {
        let c = client(6);
        let mut shuffled = c.clone();
        shuffled.shard.train.reverse();
        let spec = KernelSpec::square(2);
        assert_eq!(c.prototype_average(spec).unwrap(), shuffled.prototype_average(spec).unwrap());
    }

    #[test]
    fn constant_prediction_accuracy() {
        let mut params = ModelParams::zeros(2, 1, 1, 3);
        params.decision.bias = vec![1.0, 0.0, 0.0];
        let shard = ClientShard {
            client_id: 0,
            classes: vec![0],
            train: vec![],
            test: vec![sample(0, 0, vec![1.0, 2.0]), sample(1, 0, vec![-1.0, 0.5])],
        };
        let c = ClientState::new(shard, params, true);
        assert_eq!(c.evaluate().unwrap(), 1.0);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn empty_test_set_is_evaluation_error() {
        let mut c = client(7);
        c.shard.test.clear();
        assert!(matches!(c.evaluate(), Err(Error::Evaluation(_))));
    }
}
