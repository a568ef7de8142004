use darsa_core::darsa::{fit, pretrain, DarsaConfig, DarsaModel, TargetWeightMode};
use darsa_core::synthdata::make_figure1_task;

fn figure1_config(epochs: usize) -> DarsaConfig {
    DarsaConfig {
        epochs,
        batch_size: 64,
        bound_samples: 0,
        ..DarsaConfig::default()
    }
}

#[test]
fn figure1_task_adapts() {
    let (source, target) = make_figure1_task(0.05, 400, 3).unwrap();
    let labels = target.require_labels().unwrap().to_vec();
    let (_, metrics) = fit(&source, &target.without_labels(), &figure1_config(50), Some(&labels)).unwrap();
    let acc = metrics.final_target_accuracy().unwrap();
    assert!(acc >= 0.95, "target accuracy {acc}");
    assert_eq!(metrics.epochs.len(), 50);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (source, target) = make_figure1_task(0.05, 200, 9).unwrap();
    let labels = target.require_labels().unwrap().to_vec();
    let config = DarsaConfig {
        bound_samples: 50,
        ..figure1_config(3)
    };
    let (m1, r1) = fit(&source, &target, &config, Some(&labels)).unwrap();
    let (m2, r2) = fit(&source, &target, &config, Some(&labels)).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );

    let other = DarsaConfig { seed: 1, ..config };
    let (m3, _) = fit(&source, &target, &other, Some(&labels)).unwrap();
    assert_ne!(m1, m3);
}

/// With every alignment weight at zero, nothing reaches the target encoder.
#[test]
fn target_encoder_is_untouched_without_alignment_terms() {
    let (source, target) = make_figure1_task(0.05, 200, 4).unwrap();
    let config = DarsaConfig {
        lambda_d: 0.0,
        lambda_c: 0.0,
        lambda_a: 0.0,
        target_weights: TargetWeightMode::Estimated,
        ..figure1_config(4)
    };
    let mut reference = DarsaModel::init(source.dim(), source.k(), &config).unwrap();
    pretrain(&mut reference, &source, &config).unwrap();
    let (model, _) = fit(&source, &target.without_labels(), &config, None).unwrap();
    assert_eq!(model.encoder_t, reference.encoder_t);
    assert_ne!(model.encoder_s, reference.encoder_s);
}
