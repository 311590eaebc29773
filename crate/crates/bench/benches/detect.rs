use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use onset_bench::{reference_setup, with_hypotheses, with_levels};
use onset_core::detector::Detector;
use onset_core::StreamState;

fn detection_loop(c: &mut Criterion) {
    let (model, ds) = reference_setup(1);
    let stream = ds.streams.last().unwrap();
    let mut group = c.benchmark_group("score_all_frames");
    group.sample_size(10);
    for (levels, hyps) in [(5, 3), (10, 3), (5, 6)] {
        let m = with_hypotheses(&with_levels(&model, levels), hyps);
        let state = StreamState::for_model(&m, stream).unwrap();
        group.bench_with_input(BenchmarkId::new("levels_hypotheses", format!("{levels}x{hyps}")), &state, |b, state| {
            let mut det = Detector::new(&m).unwrap();
            b.iter(|| {
                for t in 0..state.len() {
                    std::hint::black_box(det.score_all(state, t));
                }
            })
        });
    }
    group.finish();
}

fn preparation(c: &mut Criterion) {
    let (model, ds) = reference_setup(1);
    let stream = ds.streams.last().unwrap();
    c.bench_function("prepare_stream_state", |b| {
        b.iter(|| StreamState::for_model(&model, std::hint::black_box(stream)).unwrap())
    });
}

criterion_group!(benches, detection_loop, preparation);
criterion_main!(benches);
