//! Learning-rate schedules and how momentum composes with an aggregated
//! update.

use cgrad::optim::lr_at;
use cgrad::Schedule;

fn main() {
    let schedules = [
        ("constant", Schedule::Constant),
        ("step 30 ×0.1", Schedule::StepDecay { period_epochs: 30, factor: 0.1 }),
        ("cosine 90", Schedule::Cosine { total_epochs: 90 }),
    ];
    print!("{:>6}", "epoch");
    for (name, _) in &schedules {
        print!(" {name:>14}");
    }
    println!();
    for epoch in [0, 15, 29, 30, 45, 60, 75, 89] {
        print!("{epoch:>6}");
        for (_, s) in &schedules {
            print!(" {:>14.6}", lr_at(s, epoch, 0.1));
        }
        println!();
    }

    // v ← μv + u, then p ← p − lr·v.
    let (mu, u) = (0.9, 1.0);
    let v1 = u;
    let v2 = mu * v1 + u;
    println!("momentum 0.9, two unit updates: steps of {v1} lr then {v2} lr");
}
