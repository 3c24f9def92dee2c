//! Synthetic Gaussian-blob datasets and the non-IID partitioner.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::l2_distance;
use crate::seeding::{substream, STREAM_DATA, STREAM_PARTITION};

/// One labelled sample. `index` is its position in the source dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Generating mean of each class.
    pub means: Vec<Vec<f64>>,
    pub num_classes: usize,
    pub dim: usize,
}

impl Dataset {
    /// Sample indices grouped by label.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.num_classes];
        for (i, s) in self.samples.iter().enumerate() {
            pools[s.label].push(i);
        }
        pools
    }
}

/// Gaussian blobs with noise `spread`, one per class. Class means are
/// standard normal draws rescaled so the closest pair sits exactly
/// `separation * spread` apart.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 2 {
        return Err(Error::Config("need at least 2 classes and 2 feature dimensions".into()));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be positive".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be finite and non-negative, got {spread}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be finite and positive, got {separation}")));
    }
    let mut rng = substream(seed, &[STREAM_DATA]);

    let mut means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..num_classes {
        for b in a + 1..num_classes {
            min_dist = min_dist.min(l2_distance(&means[a], &means[b]));
        }
    }
    let scale = if min_dist > 0.0 && spread > 0.0 { separation * spread / min_dist } else { 1.0 };
    means.iter_mut().flatten().for_each(|m| *m *= scale);

    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let features = mean
                .iter()
                .map(|m| m + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            samples.push(Sample { index: samples.len(), features, label });
        }
    }
    Ok(Dataset { samples, means, num_classes, dim })
}

/// Per-client class-count distribution and shard size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    /// Mean number of classes per client.
    pub avg: usize,
    /// Standard deviation of the number of classes per client.
    pub std: usize,
    /// Samples each client receives for each of its classes.
    pub samples_per_class: usize,
    /// Draw with replacement once a class pool is exhausted.
    pub replacement: bool,
}

impl PartitionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.avg == 0 || self.avg > num_classes {
            return Err(Error::Config(format!(
                "avg classes per client must be in [1, {num_classes}], got {}",
                self.avg
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    /// Sorted class ids held by this client.
    pub classes: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ClientShard {
    pub fn train_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.train {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }
}

/// Number of training samples per class out of `n`: 80% rounded, keeping at
/// least one sample on each side whenever `n >= 2`.
pub fn train_share(n: usize) -> usize {
    if n <= 1 {
        return n;
    }
    ((0.8 * n as f64).round() as usize).clamp(1, n - 1)
}

/// Draws `n_k ~ round(Normal(avg, std))` clamped to `[1, J]`.
pub fn sample_class_count<R: Rng + ?Sized>(spec: &PartitionSpec, num_classes: usize, rng: &mut R) -> usize {
    let draw = if spec.std == 0 {
        spec.avg as f64
    } else {
        let normal = Normal::new(spec.avg as f64, spec.std as f64).expect("finite std");
        normal.sample(rng)
    };
    (draw.round().max(1.0) as usize).min(num_classes)
}

/// Splits `ds` over `num_clients` clients with a random number of classes each.
pub fn partition_non_iid(
    ds: &Dataset,
    num_clients: usize,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    spec.validate(ds.num_classes)?;
    if num_clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    let mut rng = substream(seed, &[STREAM_PARTITION]);
    let mut pools = ds.class_pools();
    if let Some(j) = pools.iter().position(|p| p.is_empty()) {
        return Err(Error::Config(format!("class {j} has no samples")));
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursors = vec![0usize; ds.num_classes];

    let n_train = train_share(spec.samples_per_class);
    let mut shards = Vec::with_capacity(num_clients);
    for client_id in 0..num_clients {
        let n_k = sample_class_count(spec, ds.num_classes, &mut rng);
        let mut classes = index::sample(&mut rng, ds.num_classes, n_k).into_vec();
        classes.sort_unstable();

        let mut train = Vec::new();
        let mut test = Vec::new();
        for &j in &classes {
            let pool = &pools[j];
            let mut picked = Vec::with_capacity(spec.samples_per_class);
            for _ in 0..spec.samples_per_class {
                if cursors[j] < pool.len() {
                    picked.push(pool[cursors[j]]);
                    cursors[j] += 1;
                } else if spec.replacement {
                    picked.push(pool[rng.random_range(0..pool.len())]);
                } else {
                    return Err(Error::Capacity(format!(
                        "class {j} pool of {} samples exhausted at client {client_id}",
                        pool.len()
                    )));
                }
            }
            for (pos, idx) in picked.into_iter().enumerate() {
                let sample = ds.samples[idx].clone();
                if pos < n_train {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        shards.push(ClientShard { client_id, classes, train, test });
    }
    Ok(shards)
}

/// Class coverage and counts over the training splits of a set of shards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardStats {
    pub class_count_mean: f64,
    /// Sample standard deviation (zero for a single client).
    pub class_count_std: f64,
    /// `S^(j)`: ids of clients holding class `j`, ascending.
    pub coverage: BTreeMap<usize, Vec<usize>>,
    /// `|D^(j)|`: training samples of class `j` over all clients.
    pub class_totals: BTreeMap<usize, usize>,
    /// `|D_k^(j)|` per client.
    pub per_client: BTreeMap<usize, BTreeMap<usize, usize>>,
    pub total_samples: usize,
}

impl ShardStats {
    /// Builds statistics from per-client class counts.
    pub fn from_counts<I>(counts: I) -> Self
    where
        I: IntoIterator<Item = (usize, BTreeMap<usize, usize>)>,
    {
        let per_client: BTreeMap<usize, BTreeMap<usize, usize>> = counts.into_iter().collect();
        let mut coverage: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut class_totals: BTreeMap<usize, usize> = BTreeMap::new();
        for (&client, classes) in &per_client {
            for (&j, &n) in classes {
                coverage.entry(j).or_default().push(client);
                *class_totals.entry(j).or_insert(0) += n;
            }
        }
        let class_counts: Vec<f64> = per_client.values().map(|c| c.len() as f64).collect();
        let (class_count_mean, class_count_std) = mean_and_sample_std(&class_counts);
        let total_samples = class_totals.values().sum();
        Self { class_count_mean, class_count_std, coverage, class_totals, per_client, total_samples }
    }
}

pub(crate) fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summary of a partition; counts refer to training samples, the data that
/// prototypes are averaged over.
pub fn shard_stats(shards: &[ClientShard]) -> Result<ShardStats> {
    if shards.is_empty() {
        return Err(Error::Config("shard_stats needs at least one shard".into()));
    }
    Ok(ShardStats::from_counts(shards.iter().map(|s| {
        let mut counts = s.train_counts();
        for &j in &s.classes {
            counts.entry(j).or_insert(0);
        }
        counts.retain(|_, n| *n > 0);
        (s.client_id, counts)
    })))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes shards as CSV: `client_id,split,label,f0,f1,...`.
pub fn write_shards_csv<W: Write>(writer: W, shards: &[ClientShard]) -> Result<()> {
    let dim = shards
        .iter()
        .flat_map(|s| s.train.iter().chain(&s.test))
        .map(|s| s.features.len())
        .next()
        .unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["client_id".to_string(), "split".into(), "label".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for shard in shards {
        for (split, samples) in [("train", &shard.train), ("test", &shard.test)] {
            for s in samples {
                let mut rec = vec![shard.client_id.to_string(), split.to_string(), s.label.to_string()];
                rec.extend(s.features.iter().map(|&f| fmt_f64(f)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads shards written by [`write_shards_csv`]. Sample indices are
/// reassigned in file order; class lists are rebuilt from the labels.
pub fn read_shards_csv<R: Read>(reader: R) -> Result<Vec<ClientShard>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut shards: BTreeMap<usize, ClientShard> = BTreeMap::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Parse(format!("row {row}: expected at least 3 fields")));
        }
        let parse_usize = |i: usize| {
            rec[i].parse::<usize>().map_err(|e| Error::Parse(format!("row {row} field {i}: {e}")))
        };
        let client_id = parse_usize(0)?;
        let label = parse_usize(2)?;
        let features = (3..rec.len())
            .map(|i| rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("row {row} field {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let shard = shards.entry(client_id).or_insert_with(|| ClientShard {
            client_id,
            classes: Vec::new(),
            train: Vec::new(),
            test: Vec::new(),
        });
        let sample = Sample { index: row, features, label };
        match &rec[1] {
            "train" => shard.train.push(sample),
            "test" => shard.test.push(sample),
            other => return Err(Error::Parse(format!("row {row}: unknown split {other:?}"))),
        }
        if let Err(pos) = shard.classes.binary_search(&label) {
            shard.classes.insert(pos, label);
        }
    }
    Ok(shards.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(avg: usize, std: usize, spc: usize) -> PartitionSpec {
        PartitionSpec { avg, std, samples_per_class: spc, replacement: true }
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let ds = generate_synthetic(3, 4, 5, 0.0, 4.0, 1).unwrap();
        for j in 0..3 {
            let class: Vec<_> = ds.samples.iter().filter(|s| s.label == j).collect();
            assert!(class.windows(2).all(|w| w[0].features == w[1].features));
        }
    }

    #[test]
    fn counts_per_label() {
        let ds = generate_synthetic(2, 3, 50, 1.0, 4.0, 2).unwrap();
        assert_eq!(ds.samples.len(), 100);
        assert_eq!(ds.samples.iter().filter(|s| s.label == 0).count(), 50);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_synthetic(4, 6, 10, 0.5, 4.0, 9).unwrap(), generate_synthetic(4, 6, 10, 0.5, 4.0, 9).unwrap());
    }

    #[test]
    fn class_means_are_separated() {
        for (spread, sep) in [(0.5, 4.0), (2.0, 1.5), (10.0, 8.0)] {
            let ds = generate_synthetic(6, 5, 1, spread, sep, 3).unwrap();
            let mut min = f64::INFINITY;
            for a in 0..6 {
                for b in a + 1..6 {
                    min = min.min(l2_distance(&ds.means[a], &ds.means[b]));
                }
            }
            assert!((min - sep * spread).abs() <= 1e-9 * sep * spread);
        }
        assert!(generate_synthetic(3, 3, 1, 1.0, 0.0, 3).is_err());
    }

    #[test]
    fn full_avg_zero_std_gives_every_class() {
        let ds = generate_synthetic(5, 3, 40, 1.0, 4.0, 4).unwrap();
        let shards = partition_non_iid(&ds, 6, &spec(5, 0, 5), 11).unwrap();
        for s in &shards {
            assert_eq!(s.classes, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn single_client_holds_its_classes() {
        let ds = generate_synthetic(5, 3, 40, 1.0, 4.0, 4).unwrap();
        let shards = partition_non_iid(&ds, 1, &spec(3, 1, 5), 12).unwrap();
        assert_eq!(shards.len(), 1);
        let s = &shards[0];
        assert_eq!(s.len(), s.classes.len() * 5);
        assert!(s.train.iter().chain(&s.test).all(|x| s.classes.contains(&x.label)));
    }

    #[test]
    fn equal_samples_per_class_within_shard() {
        let ds = generate_synthetic(10, 3, 100, 1.0, 4.0, 5).unwrap();
        let shards = partition_non_iid(&ds, 20, &spec(3, 2, 10), 13).unwrap();
        for s in &shards {
            let counts = s.train_counts();
            assert_eq!(counts.len(), s.classes.len());
            assert!(counts.values().all(|&n| n == 8));
            assert_eq!(s.test.len(), 2 * s.classes.len());
        }
    }

    #[test]
    fn without_replacement_no_sample_is_shared() {
        let ds = generate_synthetic(10, 3, 200, 1.0, 4.0, 5).unwrap();
        let shards = partition_non_iid(&ds, 20, &spec(3, 2, 10), 14).unwrap();
        let mut seen = std::collections::HashSet::new();
        for s in &shards {
            for x in s.train.iter().chain(&s.test) {
                assert!(seen.insert(x.index), "sample {} in two shards", x.index);
            }
        }
    }

    #[test]
    fn capacity_error_without_replacement() {
        let ds = generate_synthetic(2, 3, 5, 1.0, 4.0, 5).unwrap();
        let mut sp = spec(2, 0, 10);
        sp.replacement = false;
        assert!(matches!(partition_non_iid(&ds, 1, &sp, 1), Err(Error::Capacity(_))));
        sp.replacement = true;
        let shards = partition_non_iid(&ds, 1, &sp, 1).unwrap();
        assert_eq!(shards[0].len(), 20);
    }

    #[test]
    fn stats_coverage_and_totals() {
        let mk = |id, classes: &[(usize, usize)]| (id, classes.iter().copied().collect::<BTreeMap<_, _>>());
        let st = ShardStats::from_counts([mk(0, &[(0, 4), (1, 4)])]);
        assert_eq!(st.coverage[&0], vec![0]);
        assert_eq!(st.coverage[&1], vec![0]);

        let st = ShardStats::from_counts([mk(0, &[(3, 10)]), mk(1, &[(3, 10), (4, 2)])]);
        assert_eq!(st.class_totals[&3], 20);
        assert_eq!(st.coverage[&3], vec![0, 1]);
        assert_eq!(st.total_samples, 22);
    }

    #[test]
    fn stats_totals_match_partition() {
        let ds = generate_synthetic(10, 3, 60, 1.0, 4.0, 6).unwrap();
        let shards = partition_non_iid(&ds, 20, &spec(4, 2, 6), 15).unwrap();
        let st = shard_stats(&shards).unwrap();
        let train_total: usize = shards.iter().map(|s| s.train.len()).sum();
        assert_eq!(st.class_totals.values().sum::<usize>(), train_total);
        assert_eq!(st.total_samples, train_total);
        assert!(shard_stats(&[]).is_err());
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = generate_synthetic(10, 3, 60, 1.0, 4.0, 6).unwrap();
        let a = partition_non_iid(&ds, 8, &spec(3, 2, 6), 21).unwrap();
        let b = partition_non_iid(&ds, 8, &spec(3, 2, 6), 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_bit_faithful() {
        let ds = generate_synthetic(4, 3, 20, 1.3, 4.0, 7).unwrap();
        let shards = partition_non_iid(&ds, 3, &spec(2, 1, 5), 22).unwrap();
        let mut buf = Vec::new();
        write_shards_csv(&mut buf, &shards).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("client_id,split,label,f0,f1,f2\n"));
        let back = read_shards_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), shards.len());
        for (a, b) in shards.iter().zip(&back) {
            assert_eq!(a.classes, b.classes);
            for (x, y) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
                assert_eq!(x.label, y.label);
                let xb: Vec<u64> = x.features.iter().map(|f| f.to_bits()).collect();
                let yb: Vec<u64> = y.features.iter().map(|f| f.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
    }
}
