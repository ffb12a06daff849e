use mmpareto::data::{generate, SyntheticSpec};
use mmpareto::diag::gradient_check;
use mmpareto::model::{ModelDims, MultimodalModel};
use mmpareto::train::init_model;
use mmpareto::RngStream;

fn spec(seed: u64, dims: Vec<usize>, n_classes: usize) -> SyntheticSpec {
    let n = dims.len();
    SyntheticSpec {
        n_classes,
        dim_per_modality: dims,
        n_train: 24,
        n_test: 6,
        modality_noise: vec![0.7; n],
        informative_frac: vec![1.0; n],
        seed,
    }
}

#[test]
fn hidden_layer_models_match_finite_differences() {
    for seed in 0..6 {
        let d = generate(&spec(seed, vec![3, 4], 3)).unwrap();
        let dims = ModelDims {
            modality_dims: vec![3, 4],
            hidden_dim: Some(5),
            output_dim: 3,
            n_classes: 3,
        };
        let m = init_model(dims, seed).unwrap();
        let check = gradient_check(&m, &d.train.samples, 1e-5).unwrap();
        assert_eq!(check.max_rel_error.len(), 3);
        assert!(check.worst() < 1e-6, "seed {seed}: {check:?}");
    }
}

#[test]
fn affine_encoders_and_three_modalities() {
    let d = generate(&spec(7, vec![2, 3, 2], 4)).unwrap();
    let dims = ModelDims {
        modality_dims: vec![2, 3, 2],
        hidden_dim: None,
        output_dim: 2,
        n_classes: 4,
    };
    let m = init_model(dims, 7).unwrap();
    let check = gradient_check(&m, &d.train.samples, 1e-5).unwrap();
    assert_eq!(check.max_rel_error.len(), 4);
    assert!(check.worst() < 1e-6, "{check:?}");
}

#[test]
fn large_random_weights_still_match() {
    // saturated tanh units and peaked softmax
    let d = generate(&spec(3, vec![4, 2], 3)).unwrap();
    let mut m = init_model(ModelDims::for_modalities(vec![4, 2], 3), 3).unwrap();
    let mut rng = RngStream::new(99, 0);
    let theta: Vec<f64> = m.flat_params().iter().map(|x| x * 3.0 + 0.1 * rng.standard_normal()).collect();
    m.set_flat_params(&theta).unwrap();
    let check = gradient_check(&m, &d.train.samples, 1e-6).unwrap();
    assert!(check.worst() < 1e-6, "{check:?}");
}

#[test]
fn zero_model_has_zero_encoder_gradients() {
    let d = generate(&spec(1, vec![3, 3], 3)).unwrap();
    let m = MultimodalModel::zeros(ModelDims::for_modalities(vec![3, 3], 3)).unwrap();
    let g = m.backward_per_loss(&d.train.samples).unwrap();
    for k in 0..2 {
        assert!(g.per_encoder_multimodal[k].iter().all(|x| *x == 0.0));
        assert!(g.per_encoder_unimodal[k].iter().all(|x| *x == 0.0));
    }
    assert!((g.loss_values.multimodal - 3f64.ln()).abs() < 1e-12);
}
