mod common;

use common::*;
use seqsum::tensor::Tensor;
use seqsum::tokenizer::{TokenId, DECODER_START_ID};
use seqsum::transformer::{
    encoder_decoder_shapes, is_cross_attention, EncoderDecoderModel, ModelConfig, ModelError, SequenceStates,
};

fn hand_set_model() -> (ModelConfig, EncoderDecoderModel<f64>) {
    let cfg = ModelConfig {
        num_layers: 1,
        hidden_size: 4,
        num_heads: 1,
        ffn_size: 6,
        vocab_size: 7,
        max_positions: 6,
    };
    let tensors = hand_set_tensors(&encoder_decoder_shapes(&cfg));
    (cfg, EncoderDecoderModel::new(cfg, tensors).unwrap())
}

#[test]
fn encoder_matches_dense_oracle() {
    let (cfg, model) = hand_set_model();
    let input = [5, 6, 3, 5];
    let got = model.encoder_forward(&input).unwrap();
    let want = oracle_stack(model.tensors(), &cfg, "encoder", &input, None);
    assert_eq!(got.rows.dims(), &[4, 4]);
    for (i, row) in want.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((got.rows.get(i, j) - v).abs() < 1e-6, "row {i} col {j}");
        }
    }
}

#[test]
fn decoder_matches_dense_oracle() {
    let (cfg, model) = hand_set_model();
    let input = [6, 4, 5];
    let prefix = [DECODER_START_ID, 5, 6];
    let mem = model.encoder_forward(&input).unwrap();
    let got = model.decoder_log_probs(&prefix, &mem).unwrap();
    let want = oracle_decoder_log_probs(model.tensors(), &cfg, &input, &prefix);
    for (i, row) in want.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((got.get(i, j) - v).abs() < 1e-6);
        }
    }
}

#[test]
fn random_f64_model_matches_oracle() {
    let model: EncoderDecoderModel<f64> = toy_model(3, 11, 2).cast();
    let cfg = *model.config();
    let mut r = rng(9);
    for _ in 0..5 {
        let input = random_ids(&mut r, 5, 11);
        let mut prefix = vec![DECODER_START_ID];
        prefix.extend(random_ids(&mut r, 3, 11));
        let mem = model.encoder_forward(&input).unwrap();
        let got = model.decoder_log_probs(&prefix, &mem).unwrap();
        let want = oracle_decoder_log_probs(model.tensors(), &cfg, &input, &prefix);
        for (i, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((got.get(i, j) - v).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn output_shape_follows_input() {
    let model = toy_model(1, 10, 1);
    for len in 1..=16 {
        let ids: Vec<TokenId> = (0..len as TokenId).map(|i| i % 10).collect();
        let s = model.encoder_forward(&ids).unwrap();
        assert_eq!(s.rows.dims(), &[len, 8]);
        assert!(s.rows.is_finite());
    }
}

#[test]
fn overlong_and_empty_inputs_are_rejected() {
    let model = toy_model(1, 10, 1);
    let long = vec![5; 17];
    assert!(matches!(model.encoder_forward(&long), Err(ModelError::SequenceTooLong { len: 17, max: 16 })));
    assert!(matches!(model.encoder_forward(&[]), Err(ModelError::EmptySequence(_))));
    let mem = model.encoder_forward(&[5]).unwrap();
    let mut prefix = vec![DECODER_START_ID];
    prefix.extend(vec![5; 16]);
    assert!(matches!(model.decoder_forward(&prefix, &mem), Err(ModelError::SequenceTooLong { .. })));
    assert!(matches!(model.encoder_forward(&[10]), Err(ModelError::TokenOutOfRange { id: 10, .. })));
}

#[test]
fn encoder_is_bidirectional() {
    let mut r = rng(21);
    for seed in 0..20 {
        let model = toy_model(seed, 12, 2);
        let mut ids = random_ids(&mut r, 6, 12);
        let before = model.encoder_forward(&ids).unwrap();
        // changing the last token moves the first row
        ids[5] = (ids[5] + 1) % 12;
        let after = model.encoder_forward(&ids).unwrap();
        assert_ne!(before.rows.row(0), after.rows.row(0));
        // swapping two distinct tokens changes both rows
        ids[1] = 7;
        ids[3] = 8;
        let a = model.encoder_forward(&ids).unwrap();
        ids.swap(1, 3);
        let b = model.encoder_forward(&ids).unwrap();
        assert_ne!(a.rows.row(1), b.rows.row(1));
        assert_ne!(a.rows.row(3), b.rows.row(3));
    }
}

#[test]
fn decoder_is_causal() {
    let mut r = rng(5);
    for case in 0..100u64 {
        let model = toy_model(case % 10, 10, 2);
        let input = random_ids(&mut r, 4, 10);
        let mem = model.encoder_forward(&input).unwrap();
        let mut prefix = vec![DECODER_START_ID];
        prefix.extend(random_ids(&mut r, 7, 10));
        let full = model.decoder_log_probs(&prefix, &mem).unwrap();
        let cut = 1 + (case as usize % 7);
        let mut perturbed = prefix.clone();
        for t in perturbed[cut..].iter_mut() {
            *t = (*t + 3) % 10;
        }
        let other = model.decoder_log_probs(&perturbed, &mem).unwrap();
        let short = model.decoder_log_probs(&prefix[..cut], &mem).unwrap();
        for t in 0..cut {
            assert_eq!(full.row(t), other.row(t), "case {case} position {t}");
            assert_eq!(full.row(t), short.row(t), "case {case} position {t}");
        }
    }
}

#[test]
fn next_token_distribution_is_normalized() {
    for seed in 0..10 {
        let model = toy_model(seed, 13, 2);
        let mem = model.encoder_forward(&[5, 6, 7]).unwrap();
        let lp = model.decoder_forward(&[DECODER_START_ID, 8], &mem).unwrap();
        assert_eq!(lp.len(), 13);
        let total: f64 = lp.iter().map(|&v| f64::from(v).exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zeroed_cross_attention_ignores_memory() {
    let mut model = toy_model(4, 10, 2);
    for (name, t) in model.tensors_mut().iter_mut() {
        if is_cross_attention(name) && name.contains(".output.") {
            *t = Tensor::zeros(t.dims());
        }
    }
    let a = model.encoder_forward(&[5, 6, 7, 8]).unwrap();
    let b = SequenceStates { rows: Tensor::filled(&[2, 8], 3.5f32) };
    let prefix = [DECODER_START_ID, 9, 5];
    assert_eq!(model.decoder_log_probs(&prefix, &a).unwrap(), model.decoder_log_probs(&prefix, &b).unwrap());
}

#[test]
fn attention_rows_sum_to_one() {
    let model = toy_model(2, 10, 2);
    let maps = model.attention_maps(&[5, 6, 7, 8, 9], &[DECODER_START_ID, 5, 6]).unwrap();
    // encoder self, decoder self, decoder cross; per layer and head
    assert_eq!(maps.len(), 2 * 2 * 3);
    for m in &maps {
        for r in 0..m.rows() {
            let s: f32 = m.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn shape_audit_names_the_bad_tensor() {
    let model = toy_model(1, 10, 1);
    let cfg = *model.config();
    let mut tensors = model.into_tensors();
    tensors.insert("decoder.final_norm.scale".into(), Tensor::zeros(&[7]));
    match EncoderDecoderModel::new(cfg, tensors.clone()) {
        Err(ModelError::ShapeMismatch { name, .. }) => assert_eq!(name, "decoder.final_norm.scale"),
        other => panic!("unexpected {other:?}"),
    }
    tensors.remove("decoder.final_norm.scale");
    assert!(matches!(
        EncoderDecoderModel::new(cfg, tensors),
        Err(ModelError::MissingTensor(n)) if n == "decoder.final_norm.scale"
    ));
}
