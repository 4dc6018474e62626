use svsoftmax_core::{
    make_synthetic, train, EmbeddingNet, LossSpec, LossVariant, SyntheticData, SyntheticSpec, TrainConfig,
};

fn smoke() -> SyntheticData {
    make_synthetic(&SyntheticSpec {
        num_classes: 4,
        samples_per_class: 40,
        ambient_dim: 8,
        embed_dim: 3,
        noise_sigma: 0.1,
        seed: 11,
    })
    .unwrap()
}

fn config(spec: LossSpec) -> TrainConfig {
    let mut cfg = TrainConfig::new(spec, 5);
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.lr_drop_epochs = vec![15, 25];
    cfg
}

#[test]
fn every_variant_reduces_its_loss() {
    let data = smoke();
    for variant in LossVariant::ALL {
        let net = EmbeddingNet::new(&[8, 16, 3], 4, 5).unwrap();
        let h = train(&config(LossSpec::with_defaults(variant)), net, &data.train).unwrap();
        let (first, last) = (h.records.first().unwrap(), h.records.last().unwrap());
        assert!(last.mean_loss < first.mean_loss, "{variant:?}: {first:?} -> {last:?}");
    }
}

#[test]
fn support_vector_rate_does_not_grow() {
    let data = smoke();
    for spec in [LossSpec::sv(30.0, 1.2), LossSpec::with_defaults(LossVariant::SvxSoftmax)] {
        let net = EmbeddingNet::new(&[8, 16, 3], 4, 5).unwrap();
        let h = train(&config(spec), net, &data.train).unwrap();
        let (first, last) = (h.records.first().unwrap(), h.records.last().unwrap());
        assert!(last.sv_rate <= first.sv_rate, "{spec:?}: {} -> {}", first.sv_rate, last.sv_rate);
    }
}
