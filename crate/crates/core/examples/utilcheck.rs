use hidesim::corpus::{gen_synthetic, SyntheticSpec, Vocab};
use hidesim::fedsim::*;
use hidesim::model::ModelDims;
use hidesim::numerics::seeded_stream;

fn main() {
    let spec = SyntheticSpec {
        num_classes: 2,
        per_class: 500,
        vocab_size: 200,
        signal_tokens_per_class: 5,
        length_range: (5, 12),
    };
    let train = gen_synthetic(spec, &mut seeded_stream(42, &["corpus", "train"])).unwrap();
    let test_spec = SyntheticSpec { per_class: 250, ..spec };
    let test = gen_synthetic(test_spec, &mut seeded_stream(42, &["corpus", "test"])).unwrap();
    let vocab = Vocab::build(&train);
    let dims = ModelDims {
        vocab_size: vocab.len(),
        embed_dim: 32,
        rep_dim: 64,
        classifier_hidden: vec![64, 64, 64],
        num_classes: 2,
    };
    let data = TrainData { train: &train, test: Some(&test), public: None, vocab: &vocab };

    for (name, enc) in [
        ("baseline(0,1)", EncryptionMode::TextHide { m: MaskPoolSize::Finite(0), k: 1, variant: HideVariant::Intra, schedule: ScheduleKind::PerEpoch }),
        ("texthide(16,2)", EncryptionMode::TextHide { m: MaskPoolSize::Finite(16), k: 2, variant: HideVariant::Intra, schedule: ScheduleKind::PerEpoch }),
    ] {
        let settings = TrainSettings {
            seed: 42,
            clients: 2,
            rounds: 500,
            batch_size: 32,
            learning_rate: 2e-3,
            optimizer: OptimizerMode::Adam,
            encryption: enc,
            eval_every: 100,
        };
        let t0 = std::time::Instant::now();
        let out = run_training(&settings, &dims, &data, None, None).unwrap();
        let acc = evaluate(&out.params, &test, &vocab).unwrap();
        let first_loss = out.logs.first().unwrap().mean_loss;
        let last_loss = out.logs.last().unwrap().mean_loss;
        println!(
            "{name}: acc={acc:.4} loss {first_loss:.4} -> {last_loss:.4} ({:?})",
            t0.elapsed()
        );
    }
}
