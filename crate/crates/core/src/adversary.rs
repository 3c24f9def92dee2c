//! Client poisoning and server misbehaviour.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consensus::{Proposal, ServerState};
use crate::error::{Error, Result};
use crate::numeric::l2_norm;
use crate::prototype::PrototypeSet;

pub const DEFAULT_TAMPER_FACTOR: f64 = 1.5;

/// How a server deviates from the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum ServerBehavior {
    #[default]
    Honest,
    /// Stops responding from `from_view` onward.
    Crash { from_view: u64 },
    /// Loses the client prototype sets it stored and cannot verify.
    Amnesia,
    /// As leader, scales the proposed global prototypes by `factor`; as a
    /// voter, votes for a forged digest.
    Tamper { factor: f64 },
    /// As leader, sends the honest proposal to the first half of the servers
    /// and a tampered one to the second half; as a voter, splits its votes.
    Equivocate { factor: f64 },
}

impl ServerBehavior {
    pub fn is_honest(&self) -> bool {
        matches!(self, ServerBehavior::Honest)
    }
}

impl fmt::Display for ServerBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServerBehavior::Honest => write!(f, "honest"),
            ServerBehavior::Crash { from_view } => write!(f, "crash@{from_view}"),
            ServerBehavior::Amnesia => write!(f, "amnesia"),
            ServerBehavior::Tamper { factor } => write!(f, "tamper*{factor}"),
            ServerBehavior::Equivocate { factor } => write!(f, "equivocate*{factor}"),
        }
    }
}

impl FromStr for ServerBehavior {
    type Err = Error;

    /// `honest`, `crash[@view]`, `amnesia`, `tamper[*factor]`, `equivocate[*factor]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_factor = |rest: &str| -> Result<f64> {
            if rest.is_empty() {
                return Ok(DEFAULT_TAMPER_FACTOR);
            }
            let v = rest
                .strip_prefix('*')
                .ok_or_else(|| Error::Config(format!("bad behaviour suffix {rest:?}")))?;
            v.parse().map_err(|_| Error::Config(format!("bad tamper factor {v:?}")))
        };
        if s == "honest" {
            Ok(ServerBehavior::Honest)
        } else if s == "amnesia" {
            Ok(ServerBehavior::Amnesia)
        } else if let Some(rest) = s.strip_prefix("crash") {
            let from_view = match rest.strip_prefix('@') {
                Some(v) => v.parse().map_err(|_| Error::Config(format!("bad crash view {v:?}")))?,
                None if rest.is_empty() => 0,
                None => return Err(Error::Config(format!("bad crash spec {s:?}"))),
            };
            Ok(ServerBehavior::Crash { from_view })
        } else if let Some(rest) = s.strip_prefix("tamper") {
            Ok(ServerBehavior::Tamper { factor: parse_factor(rest)? })
        } else if let Some(rest) = s.strip_prefix("equivocate") {
            Ok(ServerBehavior::Equivocate { factor: parse_factor(rest)? })
        } else {
            Err(Error::Config(format!("unknown server behaviour {s:?}")))
        }
    }
}

/// Server id -> declared behaviour. Servers not listed are honest.
pub type FaultPlan = BTreeMap<usize, ServerBehavior>;

/// Parses `id:behaviour` pairs separated by commas; `none` or an empty
/// string is the empty plan.
pub fn parse_fault_plan(s: &str) -> Result<FaultPlan> {
    let s = s.trim();
    let mut plan = FaultPlan::new();
    if s.is_empty() || s == "none" {
        return Ok(plan);
    }
    for part in s.split(',') {
        let (id, behavior) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("fault plan entry {part:?} is not id:behaviour")))?;
        let id: usize = id.trim().parse().map_err(|_| Error::Config(format!("bad server id {id:?}")))?;
        if plan.insert(id, behavior.parse()?).is_some() {
            return Err(Error::Config(format!("server {id} listed twice in fault plan")));
        }
    }
    Ok(plan)
}

pub fn format_fault_plan(plan: &FaultPlan) -> String {
    if plan.is_empty() {
        return "none".into();
    }
    plan.iter().map(|(id, b)| format!("{id}:{b}")).collect::<Vec<_>>().join(",")
}

/// Poisoning and server-fault settings of an experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackConfig {
    /// Number of poisoning clients.
    pub zeta: usize,
    /// Per-class L2 norm of the poisoning perturbation.
    pub attack_eps: f64,
    pub byz_servers: FaultPlan,
}

impl AttackConfig {
    pub fn validate(&self, num_clients: usize, num_servers: usize) -> Result<()> {
        if self.zeta > num_clients {
            return Err(Error::Config(format!("zeta = {} exceeds client count {num_clients}", self.zeta)));
        }
        if !(self.attack_eps >= 0.0 && self.attack_eps.is_finite()) {
            return Err(Error::Config(format!("attack_eps must be finite and non-negative, got {}", self.attack_eps)));
        }
        if let Some(id) = self.byz_servers.keys().find(|&&id| id >= num_servers) {
            return Err(Error::Config(format!("fault plan names server {id}, only {num_servers} exist")));
        }
        Ok(())
    }
}

/// Adds to every class prototype a perturbation drawn uniformly from the
/// sphere of radius `attack_eps`.
pub fn poison<R: Rng + ?Sized>(protos: &PrototypeSet, attack_eps: f64, rng: &mut R) -> PrototypeSet {
    let mut out = protos.clone();
    if attack_eps == 0.0 {
        return out;
    }
    for p in out.classes.values_mut() {
        let dir = loop {
            let g: Vec<f64> = (0..p.values.len()).map(|_| rng.sample(StandardNormal)).collect();
            let norm = l2_norm(&g);
            if norm > 1e-12 {
                break g.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
            }
        };
        p.values.iter_mut().zip(dir).for_each(|(v, d)| *v += attack_eps * d);
    }
    out
}

/// Which servers a message goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipients {
    All,
    /// Servers `0 .. ceil(N/2)`.
    FirstHalf,
    /// Servers `ceil(N/2) .. N`.
    SecondHalf,
}

impl Recipients {
    pub fn contains(&self, server: usize, n: usize) -> bool {
        let half = n.div_ceil(2);
        match self {
            Recipients::All => true,
            Recipients::FirstHalf => server < half,
            Recipients::SecondHalf => server >= half,
        }
    }
}

/// A point in the protocol where a faulty server may deviate.
#[derive(Debug, Clone, Copy)]
pub enum ProtocolStep<'a> {
    /// Client prototype sets arrive.
    Store,
    /// The server leads `view` and `honest` is the proposal an honest leader
    /// would send.
    Propose { view: u64, honest: &'a Proposal },
    /// The server received `proposal` in `view` and is about to vote.
    Vote { view: u64, proposal: &'a Proposal },
    /// Any other message in `view`.
    Receive { view: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// Follow the protocol for this step.
    Proceed,
    /// Send nothing and ignore input.
    Silent,
    /// Drop stored client prototype sets.
    EraseStore,
    /// Send these proposals instead of the honest one.
    Propose(Vec<(Proposal, Recipients)>),
    /// Cast prepare and commit votes for these digests.
    Votes(Vec<([u8; 32], Recipients)>),
}

fn tampered(p: &Proposal, factor: f64) -> Proposal {
    let mut global = p.global.clone();
    for c in global.classes.values_mut() {
        c.values.iter_mut().for_each(|v| *v *= factor);
    }
    Proposal { global, filtered: p.filtered.clone() }
}

/// What a faulty server does at `step`. Errors for honest servers, which
/// have no declared behaviour.
pub fn apply_server_behavior(server: &ServerState, step: ProtocolStep<'_>) -> Result<Effect> {
    let view_of = |step: &ProtocolStep<'_>| match *step {
        ProtocolStep::Store => None,
        ProtocolStep::Propose { view, .. } | ProtocolStep::Vote { view, .. } | ProtocolStep::Receive { view } => {
            Some(view)
        }
    };
    match server.behavior {
        ServerBehavior::Honest => Err(Error::Config(format!(
            "server {} has no declared faulty behaviour",
            server.server_id
        ))),
        ServerBehavior::Crash { from_view } => Ok(match view_of(&step) {
            Some(v) if v >= from_view => Effect::Silent,
            _ => Effect::Proceed,
        }),
        ServerBehavior::Amnesia => Ok(match step {
            ProtocolStep::Store => Effect::EraseStore,
            _ => Effect::Proceed,
        }),
        ServerBehavior::Tamper { factor } => Ok(match step {
            ProtocolStep::Propose { honest, .. } => Effect::Propose(vec![(tampered(honest, factor), Recipients::All)]),
            ProtocolStep::Vote { proposal, .. } => {
                Effect::Votes(vec![(tampered(proposal, factor).digest(), Recipients::All)])
            }
            _ => Effect::Proceed,
        }),
        ServerBehavior::Equivocate { factor } => Ok(match step {
            ProtocolStep::Propose { honest, .. } => Effect::Propose(vec![
                (honest.clone(), Recipients::FirstHalf),
                (tampered(honest, factor), Recipients::SecondHalf),
            ]),
            ProtocolStep::Vote { proposal, .. } => Effect::Votes(vec![
                (proposal.digest(), Recipients::FirstHalf),
                (tampered(proposal, factor).digest(), Recipients::SecondHalf),
            ]),
            _ => Effect::Proceed,
        }),
    }
}
