use std::time::Instant;

use myelin::config::{ExperimentConfig, Profile};
use myelin::data::{
    balance_classes, generate, stratified_split, DatasetManifest, Loader, SplitSpec,
    SyntheticSpec,
};
use myelin::nn::ConvEncoder;
use myelin::rng::{derive_seed, rng_from_seed};
use myelin::train::{
    evaluate_classifier, fine_tune, linear_probe, pretrain_ssl, ClassifierModel, FitConfig,
    PretrainConfig, SslHyper, SslMethod, SslModel,
};

fn main() {
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = ExperimentConfig::defaults(Profile::Tiny);
    let mut spec = SyntheticSpec::rings(4, 175, 32, 0);
    spec.frequency_ratio = 1.5;
    spec.noise_std = 0.30;
    spec.brightness_jitter = (0.4, 1.0);
    let taxonomy = generate(dir.path(), &spec).unwrap();
    let manifest = DatasetManifest::scan(dir.path(), &taxonomy).unwrap();
    let balanced = balance_classes(&manifest, 175, 0).unwrap();
    let split = SplitSpec { train_frac: 0.714, val_frac: 0.143, test_frac: 0.143, seed: 0 };
    let (train, val, test) = stratified_split(&balanced, &split).unwrap();
    let train_l = Loader::new(&train, cfg.augment.clone(), cfg.normalize_spec(), 32, 1).unwrap();
    let val_l = Loader::new(&val, cfg.augment.clone(), cfg.normalize_spec(), 32, 1).unwrap();
    let test_l = Loader::new(&test, cfg.augment.clone(), cfg.normalize_spec(), 32, 1).unwrap();

    let mut enc_rng = rng_from_seed(derive_seed(0, "encoder", 0));
    let rand_enc = ConvEncoder::new(cfg.encoder_spec(), &mut enc_rng).unwrap();
    let probe_cfg = FitConfig { epochs: 50, ..FitConfig::probe_defaults(SslMethod::SimClr) };
    let (rand_head, _) = linear_probe(&rand_enc, &train_l, &val_l, &probe_cfg).unwrap();
    let rand_model = ClassifierModel { encoder: rand_enc, head: rand_head };
    let rand_acc = evaluate_classifier(&rand_model, &test_l, 32).unwrap().accuracy;
    println!("random probe acc {:.4}", rand_acc);

    for method in SslMethod::ALL {
        let t = Instant::now();
        let mut model = SslModel::new(cfg.encoder_spec(), method, 0).unwrap();
        let hyper = SslHyper {
            epochs: 30,
            batch_size: 32,
            patience: 30,
            ..SslHyper::for_method(method)
        };
        let mut view_cfg = cfg.view_augmentation();
        view_cfg.gaussian_blur = Some((0.1, 0.5));
        let pcfg = PretrainConfig { hyper, view_cfg, seed: 0 };
        let out = pretrain_ssl(&mut model, &train_l, &val_l, &pcfg).unwrap();
        let fit = FitConfig { epochs: 50, ..FitConfig::probe_defaults(method) };
        let (head, _) = linear_probe(&model.encoder, &train_l, &val_l, &fit).unwrap();
        let probe_model = ClassifierModel { encoder: model.encoder.clone(), head };
        let acc = evaluate_classifier(&probe_model, &test_l, 32).unwrap().accuracy;
        println!(
            "{}: ran {} pretrain epochs, probe acc {:.4} (gap {:+.1} pts) [{:.0?}]",
            method.as_str(), out.curve.len(), acc, (acc - rand_acc) * 100.0, t.elapsed()
        );
        if method == SslMethod::SimClr {
            let t2 = Instant::now();
            let ft_fit = FitConfig { epochs: 50, ..FitConfig::finetune_defaults(method) };
            let mut clf = ClassifierModel::from_pretrained(model.encoder.clone(), 4, 0);
            let ft_out = fine_tune(&mut clf, &train_l, &val_l, &ft_fit).unwrap();
            let ft_acc = evaluate_classifier(&clf, &test_l, 32).unwrap().accuracy;
            println!(
                "  simclr finetune acc {:.4} ran {} stopped {} [{:.0?}]",
                ft_acc, ft_out.curve.len(), ft_out.stopped_early, t2.elapsed()
            );
        }
    }
}
