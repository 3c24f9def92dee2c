//! Experiment configuration, the round loop, and result files.
//!
//! Each round, every client trains locally against the current global
//! prototypes and uploads its per-class averages. Poisoning clients perturb
//! their uploads, then the server cluster filters and confirms a new global
//! set. A round whose consensus aborts keeps the previous global set.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::adversary::{format_fault_plan, parse_fault_plan, poison, AttackConfig, FaultPlan};
use crate::aggregation::AggregationMode;
use crate::analysis::{security_probability, SecurityQuery};
use crate::client::{ClientState, TrainingConfig};
use crate::consensus::{consensus_round, max_faulty, ConsensusConfig, TraceEntry};
use crate::data::{fmt_f64, generate_synthetic, mean_and_sample_std, partition_non_iid, shard_stats, ClientShard, PartitionSpec, ShardStats};
use crate::error::{Error, Result};
use crate::numeric::{l2_distance, ModelParams};
use crate::prototype::{PrototypeSet, Submission};
use crate::seeding::{mix, substream, STREAM_ATTACKERS, STREAM_CONSENSUS, STREAM_INIT, STREAM_POISON, STREAM_TRAIN};
use crate::softpool::KernelSpec;

/// Every knob of a run. `Default` gives the documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of clients `K`.
    pub clients: usize,
    /// Number of classes `J`.
    pub classes: usize,
    pub input_dim: usize,
    pub proto_rows: usize,
    pub proto_cols: usize,
    pub k_hat: usize,
    pub stride: usize,
    pub rounds: usize,
    /// Local iterations `E` per round.
    pub local_iters: usize,
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    /// Mean and standard deviation of the number of classes per client.
    pub avg: usize,
    pub std: usize,
    /// Samples a client receives for each class it holds (train and test).
    pub samples_per_class: usize,
    /// Size of each synthetic class pool.
    pub dataset_per_class: usize,
    /// Within-class noise of the synthetic data.
    pub spread: f64,
    /// Closest pair of class means, in units of `spread`.
    pub separation: f64,
    /// Number of servers `N`.
    pub servers: usize,
    /// Declared fault bound; `None` means `floor((N-1)/3)`.
    pub f: Option<usize>,
    pub psi: usize,
    pub zeta: usize,
    /// Poisoning radius as a multiple of the honest prototype spread.
    pub attack_eps_multiplier: f64,
    pub byz_server_plan: FaultPlan,
    pub aggregation_mode: AggregationMode,
    pub amnesia_trusts_quorum: bool,
    pub write_trace: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            clients: 20,
            classes: 10,
            input_dim: 16,
            proto_rows: 4,
            proto_cols: 4,
            k_hat: 2,
            stride: 2,
            rounds: 30,
            local_iters: 5,
            eta: 0.01,
            lambda: 1.0,
            batch_size: 32,
            avg: 3,
            std: 2,
            samples_per_class: 20,
            dataset_per_class: 200,
            spread: 1.0,
            separation: 4.0,
            servers: 4,
            f: None,
            psi: 0,
            zeta: 0,
            attack_eps_multiplier: 10.0,
            byz_server_plan: FaultPlan::new(),
            aggregation_mode: AggregationMode::Normalized,
            amnesia_trusts_quorum: false,
            write_trace: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "clients",
    "classes",
    "input_dim",
    "proto_rows",
    "proto_cols",
    "k_hat",
    "stride",
    "rounds",
    "local_iters",
    "eta",
    "lambda",
    "batch_size",
    "avg",
    "std",
    "samples_per_class",
    "dataset_per_class",
    "spread",
    "separation",
    "servers",
    "f",
    "psi",
    "zeta",
    "attack_eps_multiplier",
    "byz_server_plan",
    "aggregation_mode",
    "amnesia_trusts_quorum",
    "write_trace",
    "output_dir",
];

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "clients" => self.clients = parse_value(key, v)?,
            "classes" => self.classes = parse_value(key, v)?,
            "input_dim" => self.input_dim = parse_value(key, v)?,
            "proto_rows" => self.proto_rows = parse_value(key, v)?,
            "proto_cols" => self.proto_cols = parse_value(key, v)?,
            "k_hat" => self.k_hat = parse_value(key, v)?,
            "stride" => self.stride = parse_value(key, v)?,
            "rounds" => self.rounds = parse_value(key, v)?,
            "local_iters" => self.local_iters = parse_value(key, v)?,
            "eta" => self.eta = parse_value(key, v)?,
            "lambda" => self.lambda = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "avg" => self.avg = parse_value(key, v)?,
            "std" => self.std = parse_value(key, v)?,
            "samples_per_class" => self.samples_per_class = parse_value(key, v)?,
            "dataset_per_class" => self.dataset_per_class = parse_value(key, v)?,
            "spread" => self.spread = parse_value(key, v)?,
            "separation" => self.separation = parse_value(key, v)?,
            "servers" => self.servers = parse_value(key, v)?,
            "f" => self.f = if v == "auto" { None } else { Some(parse_value(key, v)?) },
            "psi" => self.psi = parse_value(key, v)?,
            "zeta" => self.zeta = parse_value(key, v)?,
            "attack_eps_multiplier" => self.attack_eps_multiplier = parse_value(key, v)?,
            "byz_server_plan" => self.byz_server_plan = parse_fault_plan(v)?,
            "aggregation_mode" => self.aggregation_mode = v.parse()?,
            "amnesia_trusts_quorum" => self.amnesia_trusts_quorum = parse_value(key, v)?,
            "write_trace" => self.write_trace = parse_value(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "clients" => self.clients.to_string(),
            "classes" => self.classes.to_string(),
            "input_dim" => self.input_dim.to_string(),
            "proto_rows" => self.proto_rows.to_string(),
            "proto_cols" => self.proto_cols.to_string(),
            "k_hat" => self.k_hat.to_string(),
            "stride" => self.stride.to_string(),
            "rounds" => self.rounds.to_string(),
            "local_iters" => self.local_iters.to_string(),
            "eta" => self.eta.to_string(),
            "lambda" => self.lambda.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "avg" => self.avg.to_string(),
            "std" => self.std.to_string(),
            "samples_per_class" => self.samples_per_class.to_string(),
            "dataset_per_class" => self.dataset_per_class.to_string(),
            "spread" => self.spread.to_string(),
            "separation" => self.separation.to_string(),
            "servers" => self.servers.to_string(),
            "f" => self.f.map_or_else(|| "auto".to_string(), |f| f.to_string()),
            "psi" => self.psi.to_string(),
            "zeta" => self.zeta.to_string(),
            "attack_eps_multiplier" => self.attack_eps_multiplier.to_string(),
            "byz_server_plan" => format_fault_plan(&self.byz_server_plan),
            "aggregation_mode" => self.aggregation_mode.to_string(),
            "amnesia_trusts_quorum" => self.amnesia_trusts_quorum.to_string(),
            "write_trace" => self.write_trace.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every field as a `key = value` line; parses back to an equal config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec { k_hat: self.k_hat, stride: self.stride }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig { eta: self.eta, lambda: self.lambda, local_iters: self.local_iters, batch_size: self.batch_size }
    }

    pub fn partition(&self) -> PartitionSpec {
        PartitionSpec { avg: self.avg, std: self.std, samples_per_class: self.samples_per_class, replacement: true }
    }

    pub fn consensus(&self) -> ConsensusConfig {
        ConsensusConfig {
            servers: self.servers,
            psi: self.psi,
            f: self.f.unwrap_or_else(|| max_faulty(self.servers)),
            mode: self.aggregation_mode,
            amnesia_trusts_quorum: self.amnesia_trusts_quorum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("classes", self.classes),
            ("input_dim", self.input_dim),
            ("proto_rows", self.proto_rows),
            ("proto_cols", self.proto_cols),
            ("samples_per_class", self.samples_per_class),
            ("dataset_per_class", self.dataset_per_class),
            ("servers", self.servers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("samples_per_class must be at least 2 to leave a test sample".into()));
        }
        if self.psi >= self.clients {
            return Err(Error::Config(format!("psi = {} must be below the client count {}", self.psi, self.clients)));
        }
        if !(self.attack_eps_multiplier >= 0.0 && self.attack_eps_multiplier.is_finite()) {
            return Err(Error::Config("attack_eps_multiplier must be finite and non-negative".into()));
        }
        self.kernel().output_dims(self.proto_rows, self.proto_cols)?;
        self.training().validate()?;
        self.partition().validate(self.classes)?;
        self.consensus().validate()?;
        AttackConfig { zeta: self.zeta, attack_eps: 0.0, byz_servers: self.byz_server_plan.clone() }
            .validate(self.clients, self.servers)?;
        Ok(())
    }
}

/// Metrics of one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Sample-weighted mean over clients of the full local objective.
    pub global_objective: f64,
    /// The prototype-distance part of `global_objective`, before weighting by lambda.
    pub prototype_loss: f64,
    pub filtered: Vec<usize>,
    pub view_changes: usize,
    pub confirmed: bool,
    /// Poisoning radius used this round.
    pub attack_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    #[serde(flatten)]
    pub entry: TraceEntry,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    /// Uploads of the last round, after poisoning.
    pub final_submissions: Vec<Submission>,
    pub final_global: PrototypeSet,
    pub attackers: Vec<usize>,
    pub final_accuracies: Vec<f64>,
    pub trace: Vec<RoundTrace>,
}

impl ExperimentResult {
    pub fn all_aborted(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| !r.confirmed)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_accuracy)
    }
}

/// Dataset and shards a config describes.
pub fn build_shards(cfg: &ExperimentConfig) -> Result<Vec<ClientShard>> {
    let ds = generate_synthetic(cfg.classes, cfg.input_dim, cfg.dataset_per_class, cfg.spread, cfg.separation, cfg.seed)?;
    partition_non_iid(&ds, cfg.clients, &cfg.partition(), cfg.seed)
}

pub fn partition_stats(cfg: &ExperimentConfig) -> Result<ShardStats> {
    cfg.validate()?;
    shard_stats(&build_shards(cfg)?)
}

/// Mean over classes of the mean distance from each upload to the class average.
pub fn prototype_spread(submissions: &[&Submission]) -> f64 {
    let mut by_class: std::collections::BTreeMap<usize, Vec<&[f64]>> = Default::default();
    for s in submissions {
        for (&j, p) in &s.protos.classes {
            by_class.entry(j).or_default().push(&p.values);
        }
    }
    let mut per_class = Vec::new();
    for members in by_class.values().filter(|m| m.len() > 1) {
        let dim = members[0].len();
        let mut centre = vec![0.0; dim];
        for m in members {
            centre.iter_mut().zip(m.iter()).for_each(|(c, v)| *c += v);
        }
        centre.iter_mut().for_each(|c| *c /= members.len() as f64);
        let d = members.iter().map(|m| l2_distance(m, &centre)).sum::<f64>() / members.len() as f64;
        per_class.push(d);
    }
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let spec = cfg.kernel();
    let train = cfg.training();
    let ccfg = cfg.consensus();

    let shards = build_shards(cfg)?;
    let init = ModelParams::random(
        cfg.input_dim,
        cfg.proto_rows,
        cfg.proto_cols,
        cfg.classes,
        &mut substream(cfg.seed, &[STREAM_INIT]),
    );
    let mut attackers = index::sample(&mut substream(cfg.seed, &[STREAM_ATTACKERS]), cfg.clients, cfg.zeta).into_vec();
    attackers.sort_unstable();
    let mut clients: Vec<ClientState> = shards
        .into_iter()
        .map(|s| {
            let honest = attackers.binary_search(&s.client_id).is_err();
            ClientState::new(s, init.clone(), honest)
        })
        .collect();

    let mut global = PrototypeSet::new();
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut trace = Vec::new();
    let mut final_submissions = Vec::new();
    let mut final_accuracies = Vec::new();

    for round in 0..cfg.rounds {
        let t = round as u64;
        clients
            .par_iter_mut()
            .map(|c| {
                let mut rng = substream(cfg.seed, &[STREAM_TRAIN, t, c.client_id as u64]);
                c.local_round(&global, &train, spec, &mut rng).map(|_| ())
            })
            .collect::<Result<Vec<()>>>()?;

        let honest_uploads: Vec<Submission> = clients
            .par_iter()
            .map(|c| Ok(Submission { client_id: c.client_id, protos: c.prototype_average(spec)? }))
            .collect::<Result<_>>()?;
        let honest_refs: Vec<&Submission> =
            honest_uploads.iter().filter(|s| clients[s.client_id].honest).collect();
        let attack_eps = cfg.attack_eps_multiplier * prototype_spread(&honest_refs);

        let submissions: Vec<Submission> = honest_uploads
            .iter()
            .map(|s| {
                if clients[s.client_id].honest {
                    s.clone()
                } else {
                    let mut rng = substream(cfg.seed, &[STREAM_POISON, t, s.client_id as u64]);
                    Submission { client_id: s.client_id, protos: poison(&s.protos, attack_eps, &mut rng) }
                }
            })
            .collect();

        let outcome = consensus_round(&submissions, &ccfg, &cfg.byz_server_plan, mix(cfg.seed, &[STREAM_CONSENSUS, t]))?;
        if cfg.write_trace {
            trace.extend(outcome.trace.iter().cloned().map(|entry| RoundTrace { round, entry }));
        }
        let (confirmed, filtered) = match outcome.confirmed {
            Some(p) => {
                global = p.global;
                (true, p.filtered)
            }
            None => (false, Vec::new()),
        };

        let evals: Vec<(f64, f64, f64, usize)> = clients
            .par_iter()
            .map(|c| {
                let acc = c.evaluate()?;
                let terms = c.objective_terms(&global, spec)?;
                let n = c.shard.train.len();
                let proto: f64 = terms.prototype_distance.values().sum();
                Ok((acc, terms.classification_sum / n as f64, proto, n))
            })
            .collect::<Result<_>>()?;
        let accs: Vec<f64> = evals.iter().map(|e| e.0).collect();
        let (mean_accuracy, std_accuracy) = mean_and_sample_std(&accs);
        let total: usize = evals.iter().map(|e| e.3).sum();
        let mut global_objective = 0.0;
        let mut prototype_loss = 0.0;
        for &(_, ce, proto, n) in &evals {
            let w = n as f64 / total as f64;
            global_objective += w * (ce + cfg.lambda * proto);
            prototype_loss += w * proto;
        }

        records.push(RoundRecord {
            round,
            mean_accuracy,
            std_accuracy,
            global_objective,
            prototype_loss,
            filtered,
            view_changes: outcome.view_changes,
            confirmed,
            attack_eps,
        });
        final_submissions = submissions;
        final_accuracies = accs;
    }

    Ok(ExperimentResult { records, final_submissions, final_global: global, attackers, final_accuracies, trace })
}

pub const ROUNDS_HEADER: &str = "round,mean_acc,std_acc,global_obj,proto_loss,filtered,view_changes,confirmed";

/// `filtered` ids are joined with `;`.
pub fn write_rounds_csv<W: Write>(w: W, records: &[RoundRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ROUNDS_HEADER.split(','))?;
    for r in records {
        let filtered = r.filtered.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(";");
        out.write_record([
            r.round.to_string(),
            fmt_f64(r.mean_accuracy),
            fmt_f64(r.std_accuracy),
            fmt_f64(r.global_objective),
            fmt_f64(r.prototype_loss),
            filtered,
            r.view_changes.to_string(),
            r.confirmed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `client_id,class,v0,v1,...`.
pub fn write_prototypes_csv<W: Write>(w: W, submissions: &[Submission]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let dim = submissions
        .iter()
        .flat_map(|s| s.protos.classes.values())
        .map(|p| p.values.len())
        .max()
        .unwrap_or(0);
    let mut header = vec!["client_id".to_string(), "class".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    out.write_record(&header)?;
    for s in submissions {
        for (j, p) in &s.protos.classes {
            let mut row = vec![s.client_id.to_string(), j.to_string()];
            row.extend(p.values.iter().map(|v| fmt_f64(*v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `config.echo.txt`, `rounds.csv`, `prototypes_final.csv` and, if
/// enabled, `trace.jsonl` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.echo.txt"), cfg.echo())?;
    write_rounds_csv(BufWriter::new(File::create(dir.join("rounds.csv"))?), &result.records)?;
    write_prototypes_csv(BufWriter::new(File::create(dir.join("prototypes_final.csv"))?), &result.final_submissions)?;
    if cfg.write_trace {
        let mut w = BufWriter::new(File::create(dir.join("trace.jsonl"))?);
        for t in &result.trace {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecurityRow {
    pub n: usize,
    pub p_m: f64,
    pub probability: f64,
}

/// One row per `(N, p_m)` with `N` in `n_min..=n_max`.
pub fn sweep_security(n_min: usize, n_max: usize, p_ms: &[f64]) -> Result<Vec<SecurityRow>> {
    if n_min == 0 || n_min > n_max || p_ms.is_empty() {
        return Err(Error::Config(format!("empty sweep: N in [{n_min}, {n_max}], {} p_m values", p_ms.len())));
    }
    let mut rows = Vec::with_capacity((n_max - n_min + 1) * p_ms.len());
    for n in n_min..=n_max {
        for &p_m in p_ms {
            rows.push(SecurityRow { n, p_m, probability: security_probability(SecurityQuery { servers: n, p_m })? });
        }
    }
    Ok(rows)
}

pub fn write_security_csv<W: Write>(w: W, rows: &[SecurityRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "p_m", "probability"])?;
    for r in rows {
        out.write_record([r.n.to_string(), r.p_m.to_string(), fmt_f64(r.probability)])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { clients: 6, rounds: 3, dataset_per_class: 60, ..Default::default() }
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = small();
        cfg.f = Some(1);
        cfg.byz_server_plan = parse_fault_plan("0:crash@1,2:tamper*2").unwrap();
        cfg.aggregation_mode = AggregationMode::DividedBySharers;
        let echo = cfg.echo();
        assert_eq!(echo.lines().count(), KEYS.len());
        assert_eq!(ExperimentConfig::parse(&echo).unwrap(), cfg);
    }

    #[test]
    fn parse_rejects_unknown_and_malformed() {
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("clients 3").is_err());
        assert!(ExperimentConfig::parse("eta = fast").is_err());
        let cfg = ExperimentConfig::parse("# comment\n\nclients = 7 # trailing\n").unwrap();
        assert_eq!(cfg.clients, 7);
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig { psi: 20, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { f: Some(2), ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { proto_rows: 1, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_rounds() {
        let r = run_experiment(&ExperimentConfig { rounds: 0, ..small() }).unwrap();
        assert!(r.records.is_empty());
        assert!(!r.all_aborted());
    }

    #[test]
    fn small_run_records_every_round() {
        let r = run_experiment(&small()).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.records.iter().all(|x| x.confirmed && (0.0..=1.0).contains(&x.mean_accuracy)));
        let mut buf = Vec::new();
        write_rounds_csv(&mut buf, &r.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), ROUNDS_HEADER);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn security_sweep_shape() {
        let rows = sweep_security(4, 6, &[0.0, 0.1]).unwrap();
        assert_eq!(rows.len(), 6);
        assert!((rows[1].probability - 0.9477).abs() < 1e-12);
        assert!(rows.iter().filter(|r| r.p_m == 0.0).all(|r| r.probability == 1.0));
        assert!(sweep_security(5, 4, &[0.1]).is_err());
    }
}
