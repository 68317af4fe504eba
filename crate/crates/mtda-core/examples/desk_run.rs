//! Small end-to-end run on synthetic digits: trains the source-only lower
//! bound and the alternating multi-teacher method on three shifted targets,
//! then prints per-target accuracies.
//!
//!   cargo run --release -p mtda-core --example desk_run [mode] [epochs] [seed]

use std::time::Instant;

use mtda_core::data::{
    generate_shifted_domain, synthesize_digits, train_eval_split, DomainDataset, DomainShiftSpec,
    TransformKind,
};
use mtda_core::losses::LossWeights;
use mtda_core::metrics::equal_weight_accuracy;
use mtda_core::trainer::{Mode, NullSink, TrainConfig, TrainJob};

type S = f32;

fn build_data(
    seed: u64,
) -> (
    DomainDataset<S>,
    DomainDataset<S>,
    Vec<DomainDataset<S>>,
    Vec<DomainDataset<S>>,
) {
    let n: usize = std::env::var("NPC").map(|s| s.parse().unwrap()).unwrap_or(44);
    let source = synthesize_digits::<S>(n, 16, seed).unwrap();
    let (source_train, source_eval) = train_eval_split(&source, 0.1, seed ^ 1).unwrap();

    let target_base = synthesize_digits::<S>(n, 16, seed ^ 2).unwrap();
    let shifts = [
        (TransformKind::Blur, 1.0),
        (TransformKind::NoiseBackground, 0.8),
        (TransformKind::ColorRemap, 0.9),
    ];
    let mut train_targets = Vec::new();
    let mut eval_targets = Vec::new();
    for (i, (kind, strength)) in shifts.iter().enumerate() {
        let spec = DomainShiftSpec::new(*kind, *strength, seed ^ (10 + i as u64)).unwrap();
        let shifted = generate_shifted_domain(&target_base, &spec).unwrap();
        let (t, e) = train_eval_split(&shifted, 0.2, seed ^ (20 + i as u64)).unwrap();
        train_targets.push(t);
        eval_targets.push(e);
    }
    (source_train, source_eval, train_targets, eval_targets)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("mt_mtda");
    let epochs: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let (source_train, source_eval, train_targets, eval_targets) = build_data(7);

    let config = TrainConfig {
        mode: Mode::parse(mode).unwrap(),
        epochs,
        batch_size: 32,
        weights: LossWeights { gamma: std::env::var("GAMMA").map(|s| s.parse::<f64>().unwrap()).unwrap_or(0.5), alpha: std::env::var("ALPHA").map(|s| s.parse::<f64>().unwrap()).unwrap_or(0.5), tau: std::env::var("TAU").map(|s| s.parse::<f64>().unwrap()).unwrap_or(4.0) },
        schedule_start: 0.1,
        schedule_final: 0.8,
        uda_learning_rate: f64::from_bits(std::env::var("UDA_LR").map(|s| s.parse::<f64>().unwrap()).unwrap_or(0.005).to_bits()),
        kd_learning_rate: std::env::var("KD_LR").map(|s| s.parse::<f64>().unwrap()).unwrap_or(0.02),
        weight_decay: 5e-4,
        momentum: std::env::var("MOM").map(|s| s.parse::<f64>().unwrap()).unwrap_or(0.9),
        seed,
        k_splits: if mode == "mt_mtda_mixed" { Some(3) } else { None },
        ..Default::default()
    };

    let job = TrainJob::new(
        config,
        &source_train,
        &train_targets,
        &eval_targets,
        Some(&source_eval),
    )
    .unwrap();

    let t0 = Instant::now();
    let state = job.train(&mut NullSink).unwrap();
    let wall = t0.elapsed().as_secs_f64();

    let last = state.history.last().unwrap();
    println!(
        "mode={mode} epochs={epochs} seed={seed} wall={wall:.1}s source_acc={:?}",
        last.source_acc
    );
    for (ds, acc) in eval_targets.iter().zip(&last.student_target_acc) {
        println!("  student on {:<28} {:>6.1}", ds.domain_id(), acc);
    }
    if let Some(teach) = &last.teacher_acc {
        for (ds, acc) in eval_targets.iter().zip(teach) {
            println!("  teacher on {:<28} {:>6.1}", ds.domain_id(), acc);
        }
    }
    println!(
        "  equal-weight student acc: {:.2}",
        equal_weight_accuracy(&last.student_target_acc).unwrap()
    );
}
