use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gripforge_bench::{hold_fixture, HOLD_FRAME};

fn step(c: &mut Criterion) {
    let f = hold_fixture(0);
    c.bench_function("frame_step_in_contact", |b| {
        b.iter_batched(
            || f.state.clone(),
            |mut state| f.sim.step(&mut state, &f.control, HOLD_FRAME).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let controls = f.scenario.trajectory.controls();
    let window = &controls[HOLD_FRAME..HOLD_FRAME + 15];
    let dt = f.scenario.trajectory.frame_dt();
    c.bench_function("window_rollout_15_frames", |b| {
        b.iter(|| f.sim.rollout(&f.state, window, dt, HOLD_FRAME).unwrap())
    });
}

criterion_group!(benches, step);
criterion_main!(benches);
