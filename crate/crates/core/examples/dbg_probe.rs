use lma_core::dataset::*;
use lma_core::encoder::*;
use lma_core::eval::*;
use lma_core::rng::RngStream;
use lma_core::train::*;

fn main() {
    let ds = make_synthetic_manifold(20, 200, &[NuisanceFactor::Rotation, NuisanceFactor::Hue], 24, 7)
        .unwrap().with_holdout(0.2, 7).unwrap();

    // 1. oracle-linear random projection of pixels
    let enc = Encoder::oracle_linear(24, 128, 0, true);
    let (_, rep) = train_linear_probe(&enc, &ds, &LinearProbeConfig::desk_defaults()).unwrap();
    println!("oracle-linear d=128: top1 {:.2} top5 {:.2}", rep.top1, rep.top5);

    // 2. untrained tiny-conv backbone
    let mut cfg = TrainConfig::desk_defaults(SslMethod::Simsiam);
    cfg.backbone_channels = (16, 32, 64);
    cfg.representation_dim = 128;
    let mut rng = RngStream::new("model-init", 1);
    let model = SiameseModel::new(&cfg, 24, &mut rng);
    let (_, rep) = train_linear_probe(&model.backbone, &ds, &LinearProbeConfig::desk_defaults()).unwrap();
    println!("untrained tiny-conv: top1 {:.2} top5 {:.2}", rep.top1, rep.top5);

    // 3. probe with more epochs on oracle-linear
    let cfg2 = LinearProbeConfig { epochs: 100, batch_size: 256, ..LinearProbeConfig::desk_defaults() };
    let (_, rep) = train_linear_probe(&enc, &ds, &cfg2).unwrap();
    println!("oracle-linear, probe 100 epochs: top1 {:.2} top5 {:.2}", rep.top1, rep.top5);
}
