// Temporary tuning probe (not part of the deliverable test suite).
use std::path::Path;
use std::time::Instant;

use mrta::allocator::ExecutionMode;
use mrta::scenario::Scenario;
use mrta::simulator::{
    collect_training_data, detect_reallocations, first_task_handoff, fit_models, run, HullSource,
};

fn main() {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "exp1".into());
    let path = format!("scenarios/{arg}.toml");
    let mut scenario = Scenario::load(Path::new(&path)).unwrap();

    let t0 = Instant::now();
    let datasets = collect_training_data(&scenario);
    println!(
        "collect: {:?}, samples: {:?}",
        t0.elapsed(),
        datasets.iter().map(|d| d.len()).collect::<Vec<_>>()
    );
    let t0 = Instant::now();
    let models = fit_models(&scenario, &datasets).unwrap();
    println!("fit: {:?}", t0.elapsed());

    // inspect GP quality at a few in-region states for robot 0
    let m0 = &models[0];
    let model0 = scenario.robots[0].model;
    for x in [
        nalgebra::DVector::from_row_slice(&[0.0, -0.75, 3.14159]),
        nalgebra::DVector::from_row_slice(&[-0.5, 0.25, 3.14159]),
        nalgebra::DVector::from_row_slice(&[1.2, 0.0, 3.14159]),
    ] {
        let (mean, std) = mrta::gp::predict(m0, &mrta::gp::regression_input(&model0, &x));
        println!(
            "gp @ ({:5.2},{:5.2},{:4.2}): mean {:?} std {:?}",
            x[0],
            x[1],
            x[2],
            mean.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>(),
            std.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        );
    }

    for mode in [ExecutionMode::Nominal, ExecutionMode::Robust] {
        scenario.team.mode = mode;
        let t0 = Instant::now();
        let log = match run(&scenario, &HullSource::Learned(models.clone())) {
            Ok(l) => l,
            Err(f) => {
                println!("{mode:?} FAILED: {f}");
                f.partial
            }
        };
        let events = detect_reallocations(&log);
        println!(
            "{mode:?}: {:?} energy {:.4} -> {:.4} (ratio {:.4}) realloc {} first {:?} handoff(0) {:?}",
            t0.elapsed(),
            log.initial_energy(),
            log.final_energy(),
            log.final_energy() / log.initial_energy(),
            events.len(),
            events.first().map(|e| e.step),
            first_task_handoff(&log, 0).map(|e| (e.step, e.previous_task, e.new_task)),
        );
        if let Some(last) = log.records.last() {
            let specs: Vec<String> = (0..last.assignment.len())
                .map(|i| format!("{:.3}", last.specializations[(i, last.assignment[i])]))
                .collect();
            println!(
                "  final assignment {:?} final assigned specs {:?}",
                last.assignment, specs
            );
            if std::env::args().nth(2).as_deref() == Some("trace") {
                for r in log.records.iter().step_by(20).take(60) {
                    let a = r.assignment[0];
                    println!(
                        "    k {:4} r0 ({:+.2},{:+.2},{:+.2}) a {} d(0,a) {:+.5} s_r0 {:?}",
                        r.step, r.states[0][0], r.states[0][1], r.states[0][2], a,
                        r.deltas[(0, a)],
                        (0..r.specializations.ncols())
                            .map(|j| format!("{:.2}", r.specializations[(0, j)]))
                            .collect::<Vec<_>>()
                    );
                }
            }
            // trajectory snapshots every 500 steps for robot 0
            for r in log.records.iter().step_by(500) {
                println!(
                    "  step {:4}: r0 pos ({:+.2},{:+.2},{:+.2}) assign {:?} energy {:8.4} s_r0 {:?}",
                    r.step,
                    r.states[0][0],
                    r.states[0][1],
                    if r.states[0].len() > 2 { r.states[0][2] } else { 0.0 },
                    r.assignment,
                    r.energy,
                    (0..r.specializations.ncols())
                        .map(|j| format!("{:.2}", r.specializations[(0, j)]))
                        .collect::<Vec<_>>()
                );
            }
        }
    }
}
