//! Simulated server cluster that filters and confirms global prototypes.
//!
//! One round runs over a deterministic in-process message bus:
//!
//! 1. The leader of view `v` (server `v mod N`) runs quality detection and
//!    the global calculation, then broadcasts a proposal.
//! 2. Every server recomputes both from its own copy of the client
//!    submissions and sends a `prepare` vote only if the proposal matches
//!    within [`VERIFY_TOLERANCE`].
//! 3. `2f+1` matching prepares trigger a `commit`; `2f+1` commits confirm.
//! 4. If no honest server confirms once the bus drains, the logical timer
//!    fires, servers broadcast `view-change`, and the next leader takes over.
//!
//! Messages carry a keyed MAC standing in for signatures. Delivery order is
//! shuffled by a seeded generator, so runs are reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{apply_server_behavior, Effect, FaultPlan, ProtocolStep, Recipients, ServerBehavior};
use crate::aggregation::{global_calculate, quality_detect, stats_of, AggregationMode, QualityReport};
use crate::error::{Error, Result};
use crate::prototype::{PrototypeSet, Submission};
use crate::seeding::{mix, substream, STREAM_CONSENSUS, STREAM_KEYS};

type HmacSha256 = Hmac<Sha256>;

/// Elementwise tolerance when a server checks a proposal against its own result.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

/// Largest fault count `N` servers tolerate: `floor((N-1)/3)`.
pub fn max_faulty(servers: usize) -> usize {
    servers.saturating_sub(1) / 3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub servers: usize,
    /// Security level: how many client submissions are filtered.
    pub psi: usize,
    /// Declared fault bound; quorums are `2f+1`.
    pub f: usize,
    pub mode: AggregationMode,
    /// Let a server that lost its data commit once it sees a prepare quorum.
    pub amnesia_trusts_quorum: bool,
}

impl ConsensusConfig {
    pub fn new(servers: usize, psi: usize) -> Self {
        Self { servers, psi, f: max_faulty(servers), mode: AggregationMode::Normalized, amnesia_trusts_quorum: false }
    }

    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    pub fn leader(&self, view: u64) -> usize {
        (view % self.servers as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 {
            return Err(Error::Config("need at least one server".into()));
        }
        if self.f > max_faulty(self.servers) {
            return Err(Error::Config(format!(
                "declared f = {} exceeds floor((N-1)/3) = {} for N = {}",
                self.f,
                max_faulty(self.servers),
                self.servers
            )));
        }
        Ok(())
    }
}

/// What the leader proposes: the filtered global prototypes and who was filtered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub global: PrototypeSet,
    pub filtered: Vec<usize>,
}

impl Proposal {
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.global.canonical_bytes());
        h.update((self.filtered.len() as u64).to_le_bytes());
        for id in &self.filtered {
            h.update((*id as u64).to_le_bytes());
        }
        h.finalize().into()
    }

    fn matches(&self, other: &Proposal) -> bool {
        self.filtered == other.filtered && self.global.approx_eq(&other.global, VERIFY_TOLERANCE)
    }
}

/// Runs quality detection and the global calculation over `submissions`.
pub fn compute_proposal(submissions: &[Submission], psi: usize, mode: AggregationMode) -> Result<(Proposal, QualityReport)> {
    let stats = stats_of(submissions);
    let report = quality_detect(submissions, &stats, psi, mode)?;
    let global = global_calculate(submissions, &report, &stats, mode)?;
    Ok((Proposal { global, filtered: report.filtered.clone() }, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    Proposal,
    Prepare,
    Commit,
    ViewChange,
}

impl MessageKind {
    fn tag(self) -> u8 {
        match self {
            MessageKind::Proposal => 0,
            MessageKind::Prepare => 1,
            MessageKind::Commit => 2,
            MessageKind::ViewChange => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMessage {
    pub kind: MessageKind,
    pub view: u64,
    pub payload_digest: [u8; 32],
    pub sender: usize,
    pub auth_tag: [u8; 32],
    /// Present on proposals only.
    pub payload: Option<Arc<Proposal>>,
}

impl ConsensusMessage {
    /// Bytes covered by the authentication tag.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + 8 + 8 + 32);
        out.push(self.kind.tag());
        out.extend_from_slice(&self.view.to_le_bytes());
        out.extend_from_slice(&(self.sender as u64).to_le_bytes());
        out.extend_from_slice(&self.payload_digest);
        out
    }
}

/// Per-server MAC keys.
#[derive(Debug, Clone)]
pub struct Keyring {
    keys: Vec<[u8; 32]>,
}

impl Keyring {
    pub fn derive(servers: usize, seed: u64) -> Self {
        let keys = (0..servers)
            .map(|id| {
                let mut rng = substream(seed, &[STREAM_KEYS, id as u64]);
                let mut k = [0u8; 32];
                rng.fill(&mut k);
                k
            })
            .collect();
        Self { keys }
    }

    pub fn key(&self, server: usize) -> Option<&[u8; 32]> {
        self.keys.get(server)
    }

    pub fn sign(&self, kind: MessageKind, view: u64, digest: [u8; 32], sender: usize, payload: Option<Arc<Proposal>>) -> ConsensusMessage {
        let mut msg = ConsensusMessage { kind, view, payload_digest: digest, sender, auth_tag: [0; 32], payload };
        let key = self.key(sender).expect("sender has a key");
        msg.auth_tag = mac(key, &msg.signing_bytes());
        msg
    }
}

fn mac(key: &[u8; 32], bytes: &[u8]) -> [u8; 32] {
    let mut m = <HmacSha256 as KeyInit>::new_from_slice(key).expect("any key length works");
    m.update(bytes);
    m.finalize().into_bytes().into()
}

/// True iff the tag matches the message under its sender's key.
pub fn verify_auth(msg: &ConsensusMessage, keys: &Keyring) -> bool {
    let Some(key) = keys.key(msg.sender) else {
        return false;
    };
    let mut m = <HmacSha256 as KeyInit>::new_from_slice(key).expect("any key length works");
    m.update(&msg.signing_bytes());
    m.verify_slice(&msg.auth_tag).is_ok()
}

/// Why a server refused a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    BadAuth,
    WrongView,
    NotLeader,
    DigestMismatch,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub server_id: usize,
    pub view: u64,
    /// Client submissions this server holds; `None` once lost.
    pub store: Option<Vec<Submission>>,
    pub behavior: ServerBehavior,
    /// Every accepted message, append-only.
    pub vote_log: Vec<ConsensusMessage>,
    accepted: Option<([u8; 32], Arc<Proposal>)>,
    candidate: Option<Arc<Proposal>>,
    prepares: BTreeMap<[u8; 32], BTreeSet<usize>>,
    commits: BTreeMap<[u8; 32], BTreeSet<usize>>,
    sent_commit: bool,
    view_changes: BTreeMap<u64, BTreeSet<usize>>,
    pub confirmed: Option<(u64, Arc<Proposal>)>,
}

impl ServerState {
    pub fn new(server_id: usize, behavior: ServerBehavior) -> Self {
        Self {
            server_id,
            view: 0,
            store: None,
            behavior,
            vote_log: Vec::new(),
            accepted: None,
            candidate: None,
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            sent_commit: false,
            view_changes: BTreeMap::new(),
            confirmed: None,
        }
    }

    fn enter_view(&mut self, view: u64) {
        self.view = view;
        self.accepted = None;
        self.candidate = None;
        self.prepares.clear();
        self.commits.clear();
        self.sent_commit = false;
    }

    /// Authentication and view checks applied before a message is processed.
    pub fn admit(&self, msg: &ConsensusMessage, keys: &Keyring, cfg: &ConsensusConfig) -> std::result::Result<(), Rejection> {
        if !verify_auth(msg, keys) {
            return Err(Rejection::BadAuth);
        }
        match msg.kind {
            MessageKind::ViewChange => {
                if msg.view <= self.view {
                    return Err(Rejection::WrongView);
                }
            }
            _ => {
                if msg.view != self.view {
                    return Err(Rejection::WrongView);
                }
            }
        }
        if msg.kind == MessageKind::Proposal {
            if msg.sender != cfg.leader(msg.view) {
                return Err(Rejection::NotLeader);
            }
            match &msg.payload {
                Some(p) if p.digest() == msg.payload_digest => {}
                _ => return Err(Rejection::DigestMismatch),
            }
        }
        Ok(())
    }
}

/// One delivered message, as written to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub kind: MessageKind,
    pub view: u64,
    pub sender: usize,
    pub receiver: usize,
    pub digest: String,
    pub delivered_at: u64,
}

/// Writes the trace as JSON lines.
pub fn write_trace_jsonl<W: Write>(mut w: W, trace: &[TraceEntry]) -> Result<()> {
    for e in trace {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerDecision {
    pub server_id: usize,
    pub behavior: ServerBehavior,
    /// View and confirmed proposal, if this server confirmed.
    pub confirmed: Option<(u64, Proposal)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    /// Proposal confirmed by the honest servers.
    pub confirmed: Option<Proposal>,
    pub confirmed_view: Option<u64>,
    pub view_changes: usize,
    pub decisions: Vec<ServerDecision>,
    pub aborted: bool,
    /// Set when more servers are faulty than the quorum arithmetic tolerates.
    pub safety_risk: bool,
    pub trace: Vec<TraceEntry>,
}

impl ConsensusOutcome {
    /// True when every honest server that confirmed holds a bitwise-identical proposal.
    pub fn honest_agreement(&self) -> bool {
        let mut digests = self
            .decisions
            .iter()
            .filter(|d| d.behavior.is_honest())
            .filter_map(|d| d.confirmed.as_ref().map(|(_, p)| p.global.canonical_bytes()));
        match digests.next() {
            None => true,
            Some(first) => digests.all(|d| d == first),
        }
    }
}

struct Bus {
    pending: Vec<(ConsensusMessage, usize)>,
    tick: u64,
    trace: Vec<TraceEntry>,
}

impl Bus {
    fn send(&mut self, msg: ConsensusMessage, to: Recipients, n: usize) {
        for r in (0..n).filter(|&r| to.contains(r, n)) {
            self.pending.push((msg.clone(), r));
        }
    }
}

/// Runs one confirmation round over `submissions` with the given faults.
pub fn consensus_round(
    submissions: &[Submission],
    cfg: &ConsensusConfig,
    plan: &FaultPlan,
    seed: u64,
) -> Result<ConsensusOutcome> {
    cfg.validate()?;
    let n = cfg.servers;
    if let Some(id) = plan.keys().find(|&&id| id >= n) {
        return Err(Error::Config(format!("fault plan names server {id}, only {n} exist")));
    }
    let faulty = plan.values().filter(|b| !b.is_honest()).count();
    let mut servers: Vec<ServerState> =
        (0..n).map(|id| ServerState::new(id, plan.get(&id).copied().unwrap_or_default())).collect();

    if faulty > max_faulty(n) || faulty > cfg.f {
        return Ok(ConsensusOutcome {
            confirmed: None,
            confirmed_view: None,
            view_changes: 0,
            decisions: decisions(&servers),
            aborted: true,
            safety_risk: true,
            trace: Vec::new(),
        });
    }

    let keys = Keyring::derive(n, mix(seed, &[STREAM_KEYS]));
    let mut rng = substream(seed, &[STREAM_CONSENSUS]);
    let mut bus = Bus { pending: Vec::new(), tick: 0, trace: Vec::new() };

    for s in servers.iter_mut() {
        s.store = Some(submissions.to_vec());
        if !s.behavior.is_honest() && apply_server_behavior(s, ProtocolStep::Store)? == Effect::EraseStore {
            s.store = None;
        }
    }

    let mut view: u64 = 0;
    let mut view_changes = 0usize;
    loop {
        start_view(&mut servers, view, cfg, &keys, &mut bus)?;
        drain(&mut servers, cfg, &keys, &mut bus, &mut rng)?;

        if servers.iter().any(|s| s.behavior.is_honest() && s.confirmed.is_some()) {
            break;
        }
        if view_changes >= n {
            return Ok(finish(servers, view_changes, true, bus.trace));
        }

        // Logical timeout: everyone still alive asks for the next view.
        let next = view + 1;
        for s in servers.iter() {
            if is_silent(s, next)? {
                continue;
            }
            let msg = keys.sign(MessageKind::ViewChange, next, [0; 32], s.server_id, None);
            bus.send(msg, Recipients::All, n);
        }
        drain(&mut servers, cfg, &keys, &mut bus, &mut rng)?;
        let moved = servers
            .iter()
            .any(|s| s.behavior.is_honest() && s.view_changes.get(&next).map_or(0, |v| v.len()) >= cfg.quorum());
        if !moved {
            return Ok(finish(servers, view_changes, true, bus.trace));
        }
        view = next;
        view_changes += 1;
    }
    Ok(finish(servers, view_changes, false, bus.trace))
}

fn decisions(servers: &[ServerState]) -> Vec<ServerDecision> {
    servers
        .iter()
        .map(|s| ServerDecision {
            server_id: s.server_id,
            behavior: s.behavior,
            confirmed: s.confirmed.as_ref().map(|(v, p)| (*v, (**p).clone())),
        })
        .collect()
}

fn finish(servers: Vec<ServerState>, view_changes: usize, aborted: bool, trace: Vec<TraceEntry>) -> ConsensusOutcome {
    let first = servers.iter().find(|s| s.behavior.is_honest() && s.confirmed.is_some());
    let (confirmed, confirmed_view) = match first.and_then(|s| s.confirmed.as_ref()) {
        Some((v, p)) => (Some((**p).clone()), Some(*v)),
        None => (None, None),
    };
    ConsensusOutcome {
        aborted: aborted && confirmed.is_none(),
        confirmed,
        confirmed_view,
        view_changes,
        decisions: decisions(&servers),
        safety_risk: false,
        trace,
    }
}

fn is_silent(s: &ServerState, view: u64) -> Result<bool> {
    if s.behavior.is_honest() {
        return Ok(false);
    }
    Ok(apply_server_behavior(s, ProtocolStep::Receive { view })? == Effect::Silent)
}

fn start_view(
    servers: &mut [ServerState],
    view: u64,
    cfg: &ConsensusConfig,
    keys: &Keyring,
    bus: &mut Bus,
) -> Result<()> {
    let n = cfg.servers;
    for s in servers.iter_mut() {
        s.enter_view(view);
    }
    let leader = &servers[cfg.leader(view)];
    if is_silent(leader, view)? {
        return Ok(());
    }
    let Some(store) = &leader.store else {
        return Ok(());
    };
    let (honest, _) = compute_proposal(store, cfg.psi, cfg.mode)?;
    let proposals = if leader.behavior.is_honest() {
        vec![(honest, Recipients::All)]
    } else {
        match apply_server_behavior(leader, ProtocolStep::Propose { view, honest: &honest })? {
            Effect::Propose(p) => p,
            Effect::Silent => Vec::new(),
            _ => vec![(honest, Recipients::All)],
        }
    };
    let byzantine_leader = !leader.behavior.is_honest();
    let leader_id = leader.server_id;
    for (p, to) in proposals {
        let digest = p.digest();
        let payload = Arc::new(p);
        bus.send(keys.sign(MessageKind::Proposal, view, digest, leader_id, Some(payload)), to, n);
        // A faulty leader backs each variant with its own votes.
        if byzantine_leader {
            bus.send(keys.sign(MessageKind::Prepare, view, digest, leader_id, None), to, n);
            bus.send(keys.sign(MessageKind::Commit, view, digest, leader_id, None), to, n);
        }
    }
    Ok(())
}

fn drain<R: Rng>(
    servers: &mut [ServerState],
    cfg: &ConsensusConfig,
    keys: &Keyring,
    bus: &mut Bus,
    rng: &mut R,
) -> Result<()> {
    while !bus.pending.is_empty() {
        let i = rng.random_range(0..bus.pending.len());
        let (msg, to) = bus.pending.swap_remove(i);
        bus.tick += 1;
        bus.trace.push(TraceEntry {
            kind: msg.kind,
            view: msg.view,
            sender: msg.sender,
            receiver: to,
            digest: hex::encode(msg.payload_digest),
            delivered_at: bus.tick,
        });
        let out = handle(&mut servers[to], msg, cfg, keys)?;
        for (m, r) in out {
            bus.send(m, r, cfg.servers);
        }
    }
    Ok(())
}

type Outgoing = Vec<(ConsensusMessage, Recipients)>;

fn handle(s: &mut ServerState, msg: ConsensusMessage, cfg: &ConsensusConfig, keys: &Keyring) -> Result<Outgoing> {
    if is_silent(s, s.view.max(msg.view))? {
        return Ok(Vec::new());
    }
    if s.admit(&msg, keys, cfg).is_err() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    match msg.kind {
        MessageKind::ViewChange => {
            s.view_changes.entry(msg.view).or_default().insert(msg.sender);
        }
        MessageKind::Prepare => {
            s.prepares.entry(msg.payload_digest).or_default().insert(msg.sender);
        }
        MessageKind::Commit => {
            s.commits.entry(msg.payload_digest).or_default().insert(msg.sender);
        }
        MessageKind::Proposal => {
            let proposal = msg.payload.clone().expect("admitted proposals carry a payload");
            on_proposal(s, msg.view, proposal, cfg, keys, &mut out)?;
        }
    }
    s.vote_log.push(msg);
    progress(s, cfg, keys, &mut out);
    Ok(out)
}

fn on_proposal(
    s: &mut ServerState,
    view: u64,
    proposal: Arc<Proposal>,
    cfg: &ConsensusConfig,
    keys: &Keyring,
    out: &mut Outgoing,
) -> Result<()> {
    if s.accepted.is_some() || s.candidate.is_some() {
        return Ok(());
    }
    if !s.behavior.is_honest() {
        if let Effect::Votes(votes) = apply_server_behavior(s, ProtocolStep::Vote { view, proposal: &proposal })? {
            for (digest, to) in votes {
                out.push((keys.sign(MessageKind::Prepare, view, digest, s.server_id, None), to));
                out.push((keys.sign(MessageKind::Commit, view, digest, s.server_id, None), to));
            }
            s.candidate = Some(proposal);
            return Ok(());
        }
    }
    match &s.store {
        Some(store) => {
            let (own, _) = compute_proposal(store, cfg.psi, cfg.mode)?;
            if own.matches(&proposal) {
                let digest = proposal.digest();
                s.accepted = Some((digest, proposal));
                out.push((keys.sign(MessageKind::Prepare, view, digest, s.server_id, None), Recipients::All));
            }
        }
        None => {
            if cfg.amnesia_trusts_quorum {
                s.candidate = Some(proposal);
            }
        }
    }
    Ok(())
}

fn progress(s: &mut ServerState, cfg: &ConsensusConfig, keys: &Keyring, out: &mut Outgoing) {
    let q = cfg.quorum();
    let count = |m: &BTreeMap<[u8; 32], BTreeSet<usize>>, d: &[u8; 32]| m.get(d).map_or(0, |v| v.len());

    // A server without its own data can adopt a proposal a quorum prepared.
    if s.accepted.is_none() && s.store.is_none() && cfg.amnesia_trusts_quorum {
        if let Some(c) = &s.candidate {
            let d = c.digest();
            if count(&s.prepares, &d) >= q {
                s.accepted = Some((d, c.clone()));
            }
        }
    }
    let Some((digest, proposal)) = s.accepted.clone() else {
        return;
    };
    if !s.sent_commit && count(&s.prepares, &digest) >= q {
        s.sent_commit = true;
        out.push((keys.sign(MessageKind::Commit, s.view, digest, s.server_id, None), Recipients::All));
    }
    if s.confirmed.is_none() && s.sent_commit && count(&s.commits, &digest) >= q {
        s.confirmed = Some((s.view, proposal));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn submissions() -> Vec<Submission> {
        (0..6)
            .map(|id| {
                let mut protos = PrototypeSet::new();
                protos.insert(id % 3, vec![id as f64 * 0.1, 1.0 - id as f64 * 0.05], 4);
                protos.insert(3, vec![0.5 + id as f64 * 0.01, 0.25], 4);
                Submission { client_id: id, protos }
            })
            .collect()
    }

    fn run(n: usize, plan: &[(usize, ServerBehavior)]) -> ConsensusOutcome {
        let plan: FaultPlan = plan.iter().copied().collect();
        consensus_round(&submissions(), &ConsensusConfig::new(n, 1), &plan, 42).unwrap()
    }

    fn expected() -> Proposal {
        compute_proposal(&submissions(), 1, AggregationMode::Normalized).unwrap().0
    }

    #[test]
    fn fault_free_confirms_in_view_zero() {
        let out = run(4, &[]);
        assert!(!out.aborted);
        assert_eq!(out.view_changes, 0);
        assert_eq!(out.confirmed_view, Some(0));
        assert_eq!(out.confirmed.unwrap(), expected());
        assert!(out.decisions.iter().all(|d| d.confirmed.is_some()));
    }

    #[test]
    fn crashed_leader_costs_one_view() {
        let out = run(4, &[(0, ServerBehavior::Crash { from_view: 0 })]);
        assert_eq!(out.view_changes, 1);
        assert_eq!(out.confirmed_view, Some(1));
        assert_eq!(out.confirmed.unwrap(), expected());
    }

    #[test]
    fn tampering_leader_is_rejected() {
        let out = run(4, &[(0, ServerBehavior::Tamper { factor: 1.5 })]);
        assert_eq!(out.view_changes, 1);
        assert_eq!(out.confirmed.as_ref().unwrap(), &expected());
        assert!(out.honest_agreement());
        // nobody prepared the tampered value in view 0
        assert!(out.decisions.iter().all(|d| d.confirmed.as_ref().map_or(true, |(v, _)| *v == 1)));
    }

    #[test]
    fn tampering_voter_changes_nothing() {
        let out = run(4, &[(2, ServerBehavior::Tamper { factor: 1.5 })]);
        assert_eq!(out.view_changes, 0);
        assert_eq!(out.confirmed.unwrap(), expected());
    }

    #[test]
    fn amnesia_server_abstains_by_default() {
        let out = run(4, &[(3, ServerBehavior::Amnesia)]);
        assert_eq!(out.view_changes, 0);
        assert!(out.decisions[3].confirmed.is_none());
        assert_eq!(out.confirmed.unwrap(), expected());

        let plan: FaultPlan = [(3, ServerBehavior::Amnesia)].into_iter().collect();
        let mut cfg = ConsensusConfig::new(4, 1);
        cfg.amnesia_trusts_quorum = true;
        let out = consensus_round(&submissions(), &cfg, &plan, 42).unwrap();
        assert!(out.decisions[3].confirmed.is_some());
    }

    #[test]
    fn amnesia_leader_forces_view_change() {
        let out = run(4, &[(0, ServerBehavior::Amnesia)]);
        assert_eq!(out.view_changes, 1);
        assert_eq!(out.confirmed.unwrap(), expected());
    }

    #[test]
    fn too_many_faults_abort_with_risk_flag() {
        let out = run(4, &[(0, ServerBehavior::Amnesia), (1, ServerBehavior::Amnesia)]);
        assert!(out.aborted);
        assert!(out.safety_risk);
        assert!(out.confirmed.is_none());
    }

    #[test]
    fn auth_checks() {
        let keys = Keyring::derive(4, 7);
        let msg = keys.sign(MessageKind::Prepare, 3, [9; 32], 2, None);
        assert!(verify_auth(&msg, &keys));
        let mut flipped = msg.clone();
        flipped.payload_digest[5] ^= 0x10;
        assert!(!verify_auth(&flipped, &keys));
        let mut stranger = msg.clone();
        stranger.sender = 11;
        assert!(!verify_auth(&stranger, &keys));
    }

    #[test]
    fn stale_view_is_rejected_separately_from_auth() {
        let keys = Keyring::derive(4, 7);
        let cfg = ConsensusConfig::new(4, 0);
        let mut s = ServerState::new(1, ServerBehavior::Honest);
        s.enter_view(2);
        let replay = keys.sign(MessageKind::Prepare, 1, [1; 32], 0, None);
        assert!(verify_auth(&replay, &keys));
        assert_eq!(s.admit(&replay, &keys, &cfg), Err(Rejection::WrongView));
        let mut forged = keys.sign(MessageKind::Prepare, 2, [1; 32], 0, None);
        forged.auth_tag[0] ^= 1;
        assert_eq!(s.admit(&forged, &keys, &cfg), Err(Rejection::BadAuth));
    }

    #[test]
    fn proposal_from_non_leader_is_rejected() {
        let keys = Keyring::derive(4, 7);
        let cfg = ConsensusConfig::new(4, 0);
        let s = ServerState::new(1, ServerBehavior::Honest);
        let p = Arc::new(expected());
        let msg = keys.sign(MessageKind::Proposal, 0, p.digest(), 2, Some(p.clone()));
        assert_eq!(s.admit(&msg, &keys, &cfg), Err(Rejection::NotLeader));
        let bad = keys.sign(MessageKind::Proposal, 0, [0; 32], 0, Some(p));
        assert_eq!(s.admit(&bad, &keys, &cfg), Err(Rejection::DigestMismatch));
    }

    #[test]
    fn same_seed_same_trace() {
        let plan: FaultPlan = [(0, ServerBehavior::Equivocate { factor: 1.5 })].into_iter().collect();
        let a = consensus_round(&submissions(), &ConsensusConfig::new(7, 1), &plan, 5).unwrap();
        let b = consensus_round(&submissions(), &ConsensusConfig::new(7, 1), &plan, 5).unwrap();
        assert_eq!(a.trace, b.trace);
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &a.trace).unwrap();
        let first = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        for key in ["kind", "view", "sender", "digest", "delivered_at"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn declared_f_bounded() {
        let mut cfg = ConsensusConfig::new(4, 0);
        cfg.f = 2;
        assert!(cfg.validate().is_err());
        assert_eq!(max_faulty(4), 1);
        assert_eq!(max_faulty(7), 2);
        assert_eq!(max_faulty(10), 3);
        assert_eq!(max_faulty(1), 0);
    }
}
