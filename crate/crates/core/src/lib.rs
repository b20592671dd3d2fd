//! A deterministic simulator of a Paxos-replicated state machine whose
//! learner flags replicas that disagree.
//!
//! Every acceptor runs the same application and a small threshold state
//! machine over its outputs. The proposer orders client requests with
//! prepare/accept rounds, each replica reports `[N, output, new state]` to a
//! single learner, and the learner either confirms consensus or reports an
//! anomaly naming the dissenting replicas. Crashes, compromised replicas,
//! message loss and leader elections are injected through scenario files
//! and run on a seeded discrete-event network, so every run is exactly
//! reproducible from its scenario and seed.
//!
//! ```
//! use paxsim::{harness, scenario::Scenario};
//!
//! let scenario = Scenario::parse(r#"
//!     name = "hello"
//!     acceptors = 3
//!     [machine]
//!     states = ["Idle"]
//!     start = "Idle"
//!     [app]
//!     default_output = "OK"
//!     [[requests]]
//!     at = 1
//!     payload = "ping"
//! "#).unwrap();
//! let outcome = harness::run(scenario);
//! assert_eq!(outcome.report.counts.consensus, 1);
//! ```

pub mod acceptor;
pub mod audit;
pub mod eventlog;
pub mod harness;
pub mod learner;
pub mod membership;
pub mod messages;
pub mod proposer;
pub mod replay;
pub mod scenario;
pub mod sim;
pub mod simnet;
pub mod statemachine;

pub use harness::{run, Report, RunOutcome, Status};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::Simulation;
