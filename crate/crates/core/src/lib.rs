//! Deterministic simulator for federated learning with pooled class
//! prototypes and a Byzantine-fault-tolerant server cluster that filters
//! suspicious client uploads before aggregating them.
//!
//! The pieces compose bottom-up:
//!
//! * [`numeric`] and [`softpool`]: the two-layer model, its gradients, and
//!   exponentially weighted pooling.
//! * [`data`]: synthetic Gaussian classes and non-IID client shards.
//! * [`client`]: local SGD with the prototype loss, and prototype averaging.
//! * [`aggregation`] and [`consensus`]: quality detection, global
//!   prototype calculation, and prepare/commit confirmation.
//! * [`adversary`]: prototype poisoning and server faults.
//! * [`analysis`]: security probability, silhouette, upload accounting.
//! * [`experiment`]: configuration, the round loop, and output files.

pub mod adversary;
pub mod aggregation;
pub mod analysis;
pub mod client;
pub mod consensus;
pub mod data;
pub mod error;
pub mod experiment;
pub mod numeric;
pub mod prototype;
pub mod seeding;
pub mod softpool;

pub use error::{Error, Result};
pub use prototype::{ClassPrototype, PrototypeSet, Submission};
