//! Finite-difference gradient checking shared by the test targets.
#![allow(dead_code)]

use coprime_doa::nn::{Activation, LayerSpec, Mode, Model, Noise, Tensor};
use coprime_doa::rng::rng_from_seed;
use rand::Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

pub struct Case {
    pub name: &'static str,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
    pub batch: usize,
    pub mode: Mode,
    pub kl_weight: f64,
    pub seed: u64,
}

fn head(units: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units,
            activation: Activation::Sigmoid,
        },
    ]
}

pub fn conv(filters: usize, kernel_size: usize, stride: usize, activation: Activation, variational: bool) -> LayerSpec {
    let spec = LayerSpec::Conv1d {
        filters,
        kernel_size,
        stride,
        activation,
    };
    if variational {
        spec.to_variational()
    } else {
        spec
    }
}

fn with_head(mut body: Vec<LayerSpec>, units: usize) -> Vec<LayerSpec> {
    body.extend(head(units));
    body
}

pub fn cases() -> Vec<Case> {
    use Activation::*;
    let mut out = Vec::new();
    let mut push = |name, input_len, layers, batch, mode, kl_weight, seed| {
        out.push(Case {
            name,
            input_len,
            layers,
            batch,
            mode,
            kl_weight,
            seed,
        })
    };
    push("dense_sigmoid", 6, with_head(vec![], 4), 3, Mode::Train, 0.0, 1);
    push(
        "dense_tanh_dense",
        7,
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 5,
                activation: Tanh,
            },
            LayerSpec::Dense {
                units: 3,
                activation: Sigmoid,
            },
        ],
        2,
        Mode::Train,
        0.0,
        2,
    );
    push(
        "dense_linear_dense",
        5,
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 4,
                activation: Linear,
            },
            LayerSpec::Dense {
                units: 4,
                activation: Sigmoid,
            },
        ],
        4,
        Mode::Infer,
        0.0,
        3,
    );
    push(
        "conv_relu",
        9,
        with_head(vec![conv(3, 3, 1, Relu, false)], 4),
        3,
        Mode::Train,
        0.0,
        4,
    );
    push(
        "conv_tanh_stride2",
        11,
        with_head(vec![conv(2, 3, 2, Tanh, false)], 3),
        2,
        Mode::Train,
        0.0,
        5,
    );
    push(
        "conv_linear_k1",
        6,
        with_head(vec![conv(4, 1, 1, Linear, false)], 2),
        2,
        Mode::Infer,
        0.0,
        6,
    );
    push(
        "conv_conv",
        12,
        with_head(vec![conv(3, 3, 1, Tanh, false), conv(2, 2, 1, Sigmoid, false)], 3),
        2,
        Mode::Train,
        0.0,
        7,
    );
    push(
        "batchnorm_train",
        8,
        with_head(vec![conv(3, 3, 1, Tanh, false), LayerSpec::BatchNorm], 3),
        5,
        Mode::Train,
        0.0,
        8,
    );
    push(
        "batchnorm_infer",
        8,
        with_head(vec![conv(3, 3, 1, Tanh, false), LayerSpec::BatchNorm], 3),
        3,
        Mode::Infer,
        0.0,
        9,
    );
    push(
        "batchnorm_flat",
        6,
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 4,
                activation: Tanh,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Dense {
                units: 3,
                activation: Sigmoid,
            },
        ],
        4,
        Mode::Train,
        0.0,
        10,
    );
    push(
        "avgpool",
        10,
        with_head(
            vec![conv(2, 3, 1, Tanh, false), LayerSpec::AvgPool1d { pool_size: 2 }],
            3,
        ),
        2,
        Mode::Train,
        0.0,
        11,
    );
    push(
        "avgpool_remainder",
        11,
        with_head(
            vec![conv(2, 2, 1, Linear, false), LayerSpec::AvgPool1d { pool_size: 3 }],
            2,
        ),
        3,
        Mode::Infer,
        0.0,
        12,
    );
    push(
        "dropout_train",
        8,
        with_head(
            vec![
                conv(3, 3, 1, Tanh, false),
                LayerSpec::Flatten,
                LayerSpec::Dropout { rate: 0.3 },
            ],
            3,
        ),
        3,
        Mode::Train,
        0.0,
        13,
    );
    push(
        "dense_variational",
        6,
        vec![
            LayerSpec::Flatten,
            LayerSpec::DenseVariational {
                units: 4,
                activation: Sigmoid,
            },
        ],
        3,
        Mode::Train,
        0.05,
        14,
    );
    push(
        "dense_variational_tanh",
        5,
        vec![
            LayerSpec::Flatten,
            LayerSpec::DenseVariational {
                units: 4,
                activation: Tanh,
            },
            LayerSpec::DenseVariational {
                units: 3,
                activation: Sigmoid,
            },
        ],
        2,
        Mode::Sample,
        0.2,
        15,
    );
    push(
        "conv_reparam",
        9,
        with_head(vec![conv(3, 3, 1, Tanh, true)], 3),
        2,
        Mode::Train,
        0.1,
        16,
    );
    push(
        "conv_reparam_stride2",
        10,
        with_head(vec![conv(2, 2, 2, Relu, true)], 2),
        3,
        Mode::Sample,
        0.3,
        17,
    );
    push(
        "variational_infer",
        7,
        with_head(vec![conv(2, 3, 1, Tanh, true)], 3),
        2,
        Mode::Infer,
        0.5,
        18,
    );
    push(
        "default_stack_det",
        15,
        vec![
            conv(4, 3, 1, Relu, false),
            LayerSpec::BatchNorm,
            LayerSpec::AvgPool1d { pool_size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::Dense {
                units: 15,
                activation: Sigmoid,
            },
        ],
        4,
        Mode::Train,
        0.0,
        19,
    );
    push(
        "default_stack_elbo",
        15,
        vec![
            conv(4, 3, 1, Relu, true),
            LayerSpec::BatchNorm,
            LayerSpec::AvgPool1d { pool_size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: 0.2 },
            LayerSpec::DenseVariational {
                units: 15,
                activation: Sigmoid,
            },
        ],
        4,
        Mode::Train,
        1.0 / 450.0,
        20,
    );
    push(
        "elbo_heavy_kl",
        12,
        vec![
            conv(3, 3, 1, Tanh, true),
            LayerSpec::BatchNorm,
            LayerSpec::AvgPool1d { pool_size: 2 },
            LayerSpec::Flatten,
            LayerSpec::DenseVariational {
                units: 6,
                activation: Sigmoid,
            },
        ],
        3,
        Mode::Train,
        1.0,
        21,
    );
    push(
        "mixed_det_variational",
        10,
        vec![
            conv(3, 3, 1, Tanh, false),
            LayerSpec::Flatten,
            LayerSpec::DenseVariational {
                units: 5,
                activation: Sigmoid,
            },
        ],
        2,
        Mode::Train,
        0.1,
        22,
    );
    out
}

/// Widens variational scales so the sampled term carries real gradient.
fn perturb_raw_scales(model: &mut Model, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for l in 0..model.layers().len() {
        if model.layers()[l].is_variational() {
            for p in model.layer_params_mut(l) {
                if p.name.ends_with("raw_scale") {
                    p.values.iter_mut().for_each(|v| *v = rng.random_range(-3.0..-1.0));
                } else if p.name == "bias_mean" {
                    p.values.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
                }
            }
        }
    }
}

fn randomize_batchnorm(model: &mut Model, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for l in 0..model.layers().len() {
        if model.layers()[l] == LayerSpec::BatchNorm {
            let params = model.layer_params_mut(l);
            for (i, p) in params.iter_mut().enumerate() {
                p.values.iter_mut().for_each(|v| {
                    *v = match i {
                        0 => rng.random_range(0.5..1.5),
                        1 => rng.random_range(-0.5..0.5),
                        2 => rng.random_range(-0.2..0.2),
                        _ => rng.random_range(0.5..2.0),
                    }
                });
            }
        }
    }
}

fn loss_at(model: &Model, x: &Tensor, y: &Tensor, mode: Mode, noise: Noise, w: f64) -> f64 {
    let pass = model.forward_with(x, mode, noise).unwrap();
    model.loss(&pass, y, w).unwrap().total
}

/// Largest relative error between analytic and central-difference gradients,
/// measured against `max(|analytic|, |numeric|, 1e-3)`.
pub fn max_relative_error(case: &Case) -> f64 {
    let mut model = Model::new(case.input_len, case.layers.clone(), case.seed).unwrap();
    perturb_raw_scales(&mut model, case.seed + 100);
    randomize_batchnorm(&mut model, case.seed + 200);
    let mut rng = rng_from_seed(case.seed + 300);
    let outputs = model.output_shape().size();
    let x = Tensor::new(
        vec![case.batch, case.input_len, 1],
        (0..case.batch * case.input_len)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let y = Tensor::new(
        vec![case.batch, outputs],
        (0..case.batch * outputs)
            .map(|_| f64::from(rng.random_bool(0.3)))
            .collect(),
    )
    .unwrap();
    let noise = Noise::Seeded(case.seed + 400);

    let pass = model.forward_with(&x, case.mode, noise).unwrap();
    let grads = model.backward(&pass, &y, case.kl_weight).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..model.layers().len() {
        for p in 0..model.params()[l].len() {
            if !model.params()[l][p].trainable {
                continue;
            }
            let n = model.params()[l][p].values.len();
            for k in 0..n {
                let original = model.params()[l][p].values[k];
                model.layer_params_mut(l)[p].values[k] = original + H;
                let up = loss_at(&model, &x, &y, case.mode, noise, case.kl_weight);
                model.layer_params_mut(l)[p].values[k] = original - H;
                let down = loss_at(&model, &x, &y, case.mode, noise, case.kl_weight);
                model.layer_params_mut(l)[p].values[k] = original;
                let numeric = (up - down) / (2.0 * H);
                let analytic = grads.get(l, p)[k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                if rel > worst {
                    worst = rel;
                }
            }
        }
    }
    worst
}
