//! Crash the leader mid-run and watch the group elect its successor.

use std::path::PathBuf;

use paxsim::{load_scenario, Report, Simulation};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/election.scenario");
    let mut sim = Simulation::new(load_scenario(&path).expect("bundled fixture"));

    // sample the membership view every ten ticks until the work is done
    let mut t = 0;
    while !sim.is_finished() && !sim.is_idle() {
        t += 10;
        sim.run_until(t);
        let view = sim.view();
        println!(
            "t={:>3} epoch {} leader {} alive {:?} decided {}",
            sim.now(),
            view.epoch,
            view.leader,
            view.alive,
            sim.verdicts().len()
        );
    }
    sim.run();
    sim.finish();
    println!("{}", Report::from_simulation(&sim));
}
