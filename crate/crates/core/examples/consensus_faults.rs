//! Server-side agreement on the global prototypes under different faulty
//! leaders, with the message trace written as JSON lines.

use protofed::adversary::{parse_fault_plan, FaultPlan};
use protofed::consensus::{consensus_round, write_trace_jsonl, ConsensusConfig};
use protofed::{PrototypeSet, Submission};

fn main() -> protofed::Result<()> {
    let subs: Vec<Submission> = (0..6)
        .map(|id| {
            let mut protos = PrototypeSet::new();
            protos.insert(id % 3, vec![id as f64 * 0.1, 1.0], 5 + id);
            Submission { client_id: id, protos }
        })
        .collect();

    let cfg = ConsensusConfig::new(7, 1);
    for plan in ["", "0:crash", "0:tamper*3", "0:equivocate", "0:crash,1:amnesia"] {
        let faults: FaultPlan = if plan.is_empty() { FaultPlan::new() } else { parse_fault_plan(plan)? };
        let out = consensus_round(&subs, &cfg, &faults, 42)?;
        println!(
            "{:<18} confirmed in view {:?} after {} view changes, honest agree: {}, {} messages",
            if plan.is_empty() { "no faults" } else { plan },
            out.confirmed_view,
            out.view_changes,
            out.honest_agreement(),
            out.trace.len()
        );
    }

    let out = consensus_round(&subs, &ConsensusConfig::new(4, 1), &FaultPlan::new(), 1)?;
    let mut buf = Vec::new();
    write_trace_jsonl(&mut buf, &out.trace[..3])?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
