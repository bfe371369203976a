use criterion::{criterion_group, criterion_main, Criterion};
use ldhf_core::crp::{generate_dataset, LcgParams, MeasurementConfig};
use ldhf_core::nn::{
    backward, build_architecture, build_training_set, AttackMode, InputEncoding, Parameters,
};
use ldhf_core::puf::PufDescriptor;
use ldhf_core::SimRng;

fn batch_step(c: &mut Criterion) {
    let puf = PufDescriptor::xor(64, 4, 0.05, 1);
    let cfg = MeasurementConfig::new(1, 10, 1000).unwrap();
    let d = generate_dataset(&puf, &cfg, 1, LcgParams::default()).unwrap();
    for mode in [
        AttackMode::Response,
        AttackMode::Alsca,
        AttackMode::Ldhf { k: 5 },
    ] {
        let spec = build_architecture(mode, 65, 10).unwrap();
        let set = build_training_set(&d, &spec, mode, InputEncoding::Parity).unwrap();
        let params = Parameters::init(&spec, &mut SimRng::new(2));
        c.bench_function(&format!("forward+backward batch 1000, {mode}"), |b| {
            b.iter(|| backward(&spec, &params, &set.inputs, &set.targets).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = batch_step
}
criterion_main!(benches);
