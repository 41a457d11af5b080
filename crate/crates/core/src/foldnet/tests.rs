use super::*;
use crate::autodiff::check_gradients;
use crate::geometry::{make_spherical_template, Point3};
use rand::seq::SliceRandom;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = seeded(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn tiny() -> (EncoderSpec, DecoderSpec) {
    (
        EncoderSpec {
            knn_k: 4,
            point_mlp: vec![12, 8, 8],
            graph_layers: vec![8, 10, 12],
            codeword_mlp: vec![12, 10, 6],
            codeword_dim: 6,
            coordinate_scale: 1.0,
        },
        DecoderSpec {
            template_size: 16,
            fold_hidden: vec![9, 7],
            coordinate_scale: 1.0,
        },
    )
}

#[test]
fn default_specs_validate() {
    assert!(EncoderSpec::default().validate().is_ok());
    assert!(DecoderSpec::default().validate().is_ok());
    let bad = EncoderSpec {
        codeword_dim: 128,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = EncoderSpec {
        knn_k: 0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn codeword_is_permutation_invariant() {
    let enc = EncoderSpec::default();
    let params = init_params(&enc, &DecoderSpec::default(), 7).unwrap();
    let cloud = random_cloud(200, 1);
    let base = encode(&cloud, &enc, &params).unwrap();
    assert_eq!(base.values.len(), 256);
    assert!(base.values.iter().all(|v| v.is_finite()));
    let mut rng = seeded(2);
    for _ in 0..3 {
        let mut pts = cloud.points().to_vec();
        pts.shuffle(&mut rng);
        let shuffled = encode(&PointCloud::new(pts).unwrap(), &enc, &params).unwrap();
        assert_eq!(shuffled.values, base.values);
    }
}

#[test]
fn encoder_rejects_small_clouds() {
    let (enc, dec) = tiny();
    let params = init_params(&enc, &dec, 0).unwrap();
    assert!(encode(&random_cloud(4, 0), &enc, &params).is_err());
    assert!(encode(&random_cloud(5, 0), &enc, &params).is_ok());
}

#[test]
fn decoder_output_size_is_template_size() {
    let (enc, dec) = tiny();
    let params = init_params(&enc, &dec, 1).unwrap();
    let template = make_spherical_template(dec.template_size).unwrap();
    for n in [5, 40, 300] {
        let out = reconstruct(&random_cloud(n, n as u64), &enc, &dec, &template, &params).unwrap();
        assert_eq!(out.len(), 16);
    }
    let wrong = make_spherical_template(20).unwrap();
    let code = Codeword {
        values: vec![0.0; 6],
        frame_index: 1,
    };
    assert!(decode(&code, &wrong, &dec, &params).is_err());
}

#[test]
fn zero_network_decodes_to_origin() {
    let (enc, dec) = tiny();
    let mut params = init_params(&enc, &dec, 1).unwrap();
    let names: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    for name in names {
        let len = params.get(&name).unwrap().value().len();
        params.set_value(&name, vec![0.0; len]).unwrap();
    }
    let template = make_spherical_template(16).unwrap();
    let code = Codeword {
        values: vec![0.0; 6],
        frame_index: 3,
    };
    let out = decode(&code, &template, &dec, &params).unwrap();
    assert!(out.points().iter().all(|p| *p == Point3::new(0.0, 0.0, 0.0)));
    assert_eq!(out.frame_index(), Some(3));
}

#[test]
fn distinct_codewords_decode_differently() {
    let enc = EncoderSpec::default();
    let dec = DecoderSpec {
        template_size: 64,
        ..Default::default()
    };
    let params = init_params(&enc, &dec, 3).unwrap();
    let template = make_spherical_template(64).unwrap();
    let mut rng = seeded(4);
    let a = Codeword {
        values: (0..256).map(|_| rng.random_range(-1.0..1.0)).collect(),
        frame_index: 1,
    };
    let mut b = a.clone();
    b.values[17] += 0.5;
    let da = decode(&a, &template, &dec, &params).unwrap();
    let db = decode(&b, &template, &dec, &params).unwrap();
    assert_ne!(da.points(), db.points());
}

/// Literal decoder: tile the codeword, concatenate it with the points and
/// apply the unsplit first layer.
fn concat_reference(code: &[f64], template: &SphericalTemplate, dec: &DecoderSpec, params: &ParamStore) -> Vec<f64> {
    let m = template.len();
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::row(code.to_vec())).unwrap();
    let ones = tape.constant(Tensor::matrix(m, 1, vec![1.0; m]).unwrap()).unwrap();
    let tiled = tape.matmul(ones, c).unwrap();
    let mut points = tape.constant(Tensor::matrix(m, 3, template.to_flat()).unwrap()).unwrap();
    for fold in 0..FOLDS {
        let wc = params.get(&format!("dec.fold{fold}.in.code")).unwrap().value();
        let wp = params.get(&format!("dec.fold{fold}.in.point")).unwrap().value();
        let mut stacked = wc.data().to_vec();
        stacked.extend_from_slice(wp.data());
        let w = tape
            .constant(Tensor::matrix(wc.rows() + 3, wc.cols(), stacked).unwrap())
            .unwrap();
        let b = tape
            .constant(params.get(&format!("dec.fold{fold}.in.b")).unwrap().value().clone())
            .unwrap();
        let x = tape.concat_lastdim(tiled, points).unwrap();
        let h = tape.matmul(x, w).unwrap();
        let h = tape.add_broadcast(h, b).unwrap();
        let mut h = tape.relu(h).unwrap();
        let depth = dec.fold_hidden.len();
        for i in 0..depth {
            let layer = Dense::bind(params, &format!("dec.fold{fold}.h{i}")).unwrap();
            h = layer.forward(&mut tape, params, h, i + 1 < depth).unwrap();
        }
        points = h;
    }
    tape.value(points).data().to_vec()
}

#[test]
fn split_first_layer_matches_concatenation() {
    let enc = EncoderSpec::default();
    let dec = DecoderSpec {
        template_size: 50,
        ..Default::default()
    };
    let params = init_params(&enc, &dec, 5).unwrap();
    let template = make_spherical_template(50).unwrap();
    let mut rng = seeded(6);
    let code: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let split = decode(
        &Codeword {
            values: code.clone(),
            frame_index: 0,
        },
        &template,
        &dec,
        &params,
    )
    .unwrap()
    .to_flat();
    let literal = concat_reference(&code, &template, &dec, &params);
    for (a, b) in split.iter().zip(&literal) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn coordinate_scale_scales_decoder_output() {
    let (enc, dec) = tiny();
    let params = init_params(&enc, &dec, 2).unwrap();
    let template = make_spherical_template(16).unwrap();
    let code = Codeword {
        values: vec![0.3, -0.2, 0.1, 0.9, -0.5, 0.4],
        frame_index: 0,
    };
    let unit = decode(&code, &template, &dec, &params).unwrap().to_flat();
    let scaled_spec = DecoderSpec {
        coordinate_scale: 250.0,
        ..dec
    };
    let scaled = decode(&code, &template, &scaled_spec, &params).unwrap().to_flat();
    for (u, s) in unit.iter().zip(&scaled) {
        assert!((u * 250.0 - s).abs() <= 1e-12 * s.abs().max(1.0));
    }
}

#[test]
fn autoencoder_composite_matches_finite_differences() {
    let (enc, dec) = tiny();
    let template = make_spherical_template(dec.template_size).unwrap();
    for seed in 0..3 {
        let params = init_params(&enc, &dec, 100 + seed).unwrap();
        let cloud = random_cloud(12, 200 + seed);
        let report = check_gradients(
            &params,
            |tape, p| {
                let code = encode_on_tape(tape, &cloud, &enc, p)?;
                let out = decode_on_tape(tape, code, &template, &dec, p)?;
                let target = tape.constant(Tensor::matrix(16, 3, vec![0.25; 48])?)?;
                tape.mse(out, target)
            },
            1e-4,
            1e-3,
        )
        .unwrap();
        assert!(report.checked > report.skipped, "{report:?}");
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let enc = EncoderSpec::default();
    let dec = DecoderSpec {
        template_size: 128,
        ..Default::default()
    };
    let params = init_params(&enc, &dec, 8).unwrap();
    let template = make_spherical_template(128).unwrap();
    let cloud = random_cloud(128, 9);
    let mut tape = Tape::new();
    let code = encode_on_tape(&mut tape, &cloud, &enc, &params).unwrap();
    let out = decode_on_tape(&mut tape, code, &template, &dec, &params).unwrap();
    let loss = tape.mcd_loss(out, &cloud, 20).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut p = params.clone();
    p.accumulate(&tape, &grads);
    for param in p.iter() {
        let g = param.grad().unwrap();
        assert!(g.iter().any(|v| *v != 0.0), "{} has zero gradient", param.name());
    }
}

#[test]
fn training_is_deterministic_and_finite() {
    let (enc, dec) = tiny();
    let series = geometry::simulate_embryo(&geometry::EmbryoSimSpec {
        total_frames: 4,
        start_count: 30,
        end_count: 50,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        input_points: 24,
        rotation: RotationRange::symmetric(20.0),
        jitter_sigma2: 1.0,
        ..Default::default()
    };
    let (p1, t1) = train_autoencoder(std::slice::from_ref(&series), &enc, &dec, &cfg).unwrap();
    let (p2, t2) = train_autoencoder(std::slice::from_ref(&series), &enc, &dec, &cfg).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(p1, p2);
    assert_eq!(t1.steps.len(), 8);
    assert_eq!(t1.epoch_means.len(), 2);
    assert!(t1.steps.iter().all(|v| v.is_finite()));
    let other = TrainConfig { rng_seed: 1, ..cfg };
    assert_ne!(train_autoencoder(&[series], &enc, &dec, &other).unwrap().1, t1);
    assert!(train_autoencoder(&[], &enc, &dec, &TrainConfig::default()).is_err());
}

#[test]
fn encode_series_preserves_frames() {
    let (enc, dec) = tiny();
    let params = init_params(&enc, &dec, 0).unwrap();
    let series = geometry::simulate_embryo(&geometry::EmbryoSimSpec {
        total_frames: 5,
        start_count: 30,
        end_count: 50,
        ..Default::default()
    })
    .unwrap();
    let codes = encode_series(&series, &enc, &params, 20, 3).unwrap();
    assert_eq!(codes.iter().map(|c| c.frame_index).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert_eq!(codes, encode_series(&series, &enc, &params, 20, 3).unwrap());
}

#[test]
fn rotation_ranges() {
    let mut rng = seeded(0);
    assert_eq!(RotationRange::NONE.sample(&mut rng), [0.0; 3]);
    for _ in 0..100 {
        let a = RotationRange::symmetric(20.0).sample(&mut rng);
        assert!(a.iter().all(|v| v.abs() <= 20f64.to_radians()));
        let f = RotationRange::full().sample(&mut rng);
        assert!(f.iter().all(|v| (0.0..2.0 * PI).contains(v)));
    }
}
