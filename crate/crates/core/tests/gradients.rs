use capsnet_core::gradcheck::{layer_suite, model_check, ModelCheckOptions};
use capsnet_core::models::{Architecture, ModelConfig};

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_layer_passes_twenty_random_checks() {
    let reports = layer_suite(20, 2024).unwrap();
    for r in &reports {
        println!("{:<24} trials {:>3}  max rel error {:.3e}", r.layer, r.trials, r.max_rel_error);
    }
    for r in &reports {
        assert!(r.max_rel_error < TOLERANCE, "{}: {:.3e}", r.layer, r.max_rel_error);
    }
}

#[test]
fn reduced_capsnet_end_to_end() {
    let config = ModelConfig::new(Architecture::CapsNet, 10).reduced();
    let reports = model_check(config, &ModelCheckOptions::default()).unwrap();
    for r in &reports {
        println!("{:<24} coords {:>3}  kinks {:>2}  max rel error {:.3e} {:?}", r.layer, r.trials, r.kinks, r.max_rel_error, r.worst);
        assert!(r.max_rel_error < TOLERANCE, "{}: {:.3e}", r.layer, r.max_rel_error);
    }
}

#[test]
fn reduced_convolutional_models_end_to_end() {
    for arch in [Architecture::LeNet, Architecture::Baseline] {
        let config = ModelConfig::new(arch, 10).reduced();
        let opts = ModelCheckOptions {
            coordinates: 8,
            batch: 2,
            ..ModelCheckOptions::default()
        };
        for r in model_check(config, &opts).unwrap() {
            println!("{arch} {:<16} kinks {:>2}  max rel error {:.3e} {:?}", r.layer, r.kinks, r.max_rel_error, r.worst);
            assert!(r.max_rel_error < TOLERANCE, "{arch} {}: {:.3e}", r.layer, r.max_rel_error);
        }
    }
}
