use hidesim::attacks::{reprecon_train, ReconConfig};
use hidesim::corpus::{gen_synthetic, SyntheticSpec, Vocab};
use hidesim::fedsim::*;
use hidesim::model::{encode, ModelDims};
use hidesim::numerics::{seeded_stream, DenseVec};

fn main() {
    let spec = SyntheticSpec { num_classes: 2, per_class: 500, vocab_size: 200, signal_tokens_per_class: 5, length_range: (5, 12) };
    let train = gen_synthetic(spec, &mut seeded_stream(42, &["corpus", "train"])).unwrap();
    let vocab = Vocab::build(&train);
    let dims = ModelDims { vocab_size: vocab.len(), embed_dim: 32, rep_dim: 64, classifier_hidden: vec![64, 64, 64], num_classes: 2 };
    let data = TrainData { train: &train, test: None, public: None, vocab: &vocab };
    let settings = TrainSettings {
        seed: 42, clients: 2, rounds: 300, batch_size: 32, learning_rate: 2e-3,
        optimizer: OptimizerMode::Adam,
        encryption: EncryptionMode::TextHide { m: MaskPoolSize::Finite(0), k: 1, variant: HideVariant::Intra, schedule: ScheduleKind::PerEpoch },
        eval_every: 0,
    };
    let out = run_training(&settings, &dims, &data, None, None).unwrap();
    let reps: Vec<DenseVec> = train.sentences.iter()
        .map(|s| encode(&out.params.enc, &vocab.encode_tokens(s)).unwrap())
        .collect();
    let scale: f64 = reps.iter().map(|r| r.0.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / (reps.len() * 64) as f64;
    println!("mean squared coord of reps: {scale:.5}");
    let pairs: Vec<(DenseVec, DenseVec)> = reps.iter().map(|r| (r.clone(), r.clone())).collect();
    for lr in [1e-3, 3e-3, 1e-2] {
        let cfg = ReconConfig { hidden: 128, epochs: 20, batch_size: 32, learning_rate: lr };
        let (net, losses) = reprecon_train(&pairs, &cfg, &mut seeded_stream(72, &["t"])).unwrap();
        // dev-ish check: reconstruction error on the same distribution
        let err: f64 = reps.iter().take(100).map(|r| {
            let y = net.apply(r);
            r.0.iter().zip(&y.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 64.0
        }).sum::<f64>() / 100.0;
        println!("lr={lr}: first={:.6} last={:.8} recon_err={:.8}", losses[0], losses.last().unwrap(), err);
    }
}
