use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use views_nn::{generate, DecodeOptions, Gradients, Seq2Seq, Seq2SeqConfig, SourceTokens, Tape, Tensor};

fn tiny_config(with_tokens: bool) -> Seq2SeqConfig {
    Seq2SeqConfig {
        feature_dim: 3,
        width: 4,
        heads: 2,
        ffn_hidden: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        vocab_size: 7,
        max_frames: 2,
        max_source_tokens: if with_tokens { 3 } else { 0 },
        max_target_len: 4,
        segments: if with_tokens { 3 } else { 1 },
        output_init_std: 0.5,
    }
}

fn frames() -> Tensor {
    Tensor::from_vec(2, 3, vec![0.3, -0.7, 1.1, -0.2, 0.5, 0.9])
}

fn loss_value(model: &Seq2Seq, source: &SourceTokens, inputs: &[usize], targets: &[usize]) -> f64 {
    let mut tape = Tape::new(&model.params);
    let l = model.loss(&mut tape, &frames(), source, inputs, targets).unwrap();
    tape.value(l).data[0]
}

fn check_gradients(with_tokens: bool, seed: u64) {
    let mut model = Seq2Seq::new(tiny_config(with_tokens), seed).unwrap();
    assert!(model.params.numel() <= 1000, "{} params", model.params.numel());
    let source = if with_tokens {
        SourceTokens {
            ids: vec![4, 5],
            segments: vec![1, 2],
        }
    } else {
        SourceTokens::default()
    };
    let inputs = [1, 3, 4];
    let targets = [3, 4, 2];

    let mut grads = Gradients::zeros_like(&model.params);
    {
        let mut tape = Tape::new(&model.params);
        let l = model.loss(&mut tape, &frames(), &source, &inputs, &targets).unwrap();
        tape.backward(l, &mut grads);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let total = model.params.numel();
    let eps = 1e-5;
    let mut checked = 0;
    while checked < 20 {
        let flat = rng.gen_range(0..total);
        let (id, off) = model.params.locate(flat).unwrap();
        let analytic = grads.get(id).data[off];
        let orig = model.params.get(id).data[off];
        model.params.get_mut(id).data[off] = orig + eps;
        let up = loss_value(&model, &source, &inputs, &targets);
        model.params.get_mut(id).data[off] = orig - eps;
        let down = loss_value(&model, &source, &inputs, &targets);
        model.params.get_mut(id).data[off] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel <= 1e-3,
            "{}[{off}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}",
            model.params.name(id)
        );
        checked += 1;
    }
}

#[test]
fn finite_differences_match_backprop_video_only() {
    check_gradients(false, 11);
}

#[test]
fn finite_differences_match_backprop_with_source_tokens() {
    check_gradients(true, 12);
}

#[test]
fn uniform_logits_give_log_vocab() {
    let mut cfg = tiny_config(false);
    cfg.vocab_size = 50;
    cfg.output_init_std = 0.0;
    let model = Seq2Seq::new(cfg, 3).unwrap();
    let l = loss_value(&model, &SourceTokens::default(), &[1, 3], &[3, 2]);
    assert!((l - (50f64).ln()).abs() < 1e-12, "{l}");
}

#[test]
fn beam_of_one_is_greedy() {
    let model = Seq2Seq::new(tiny_config(true), 5).unwrap();
    let source = SourceTokens {
        ids: vec![6],
        segments: vec![2],
    };
    let mut opts = DecodeOptions {
        bos: 1,
        eos: 2,
        max_len: 3,
        beam: 1,
        banned: vec![0],
    };
    let greedy = generate(&model, &frames(), &source, &opts).unwrap();
    // Hand-rolled greedy loop over the teacher-forced logits.
    let mut prefix = vec![1usize];
    let mut manual = Vec::new();
    for _ in 0..3 {
        let logits = model.logits(&frames(), &source, &prefix).unwrap();
        let row = logits.row(logits.rows - 1);
        let best = (1..row.len())
            .fold(1, |b, t| if row[t] > row[b] { t } else { b });
        if best == 2 {
            break;
        }
        manual.push(best);
        prefix.push(best);
    }
    assert_eq!(greedy.tokens, manual);
    opts.beam = 3;
    let beamed = generate(&model, &frames(), &source, &opts).unwrap();
    assert!(beamed.log_prob >= greedy.log_prob - 1e-12 || !greedy.finished);
}

#[test]
fn same_seed_same_parameters() {
    let a = Seq2Seq::new(tiny_config(true), 42).unwrap();
    let b = Seq2Seq::new(tiny_config(true), 42).unwrap();
    let c = Seq2Seq::new(tiny_config(true), 43).unwrap();
    let flat = |m: &Seq2Seq| -> Vec<f64> {
        m.params.entries().iter().flat_map(|e| e.tensor.data.clone()).collect()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn rejects_bad_shapes() {
    let model = Seq2Seq::new(tiny_config(false), 1).unwrap();
    let too_many = Tensor::zeros(3, 3);
    assert!(model.logits(&too_many, &SourceTokens::default(), &[1]).is_err());
    let tokens = SourceTokens {
        ids: vec![1],
        segments: vec![1],
    };
    assert!(model.logits(&frames(), &tokens, &[1]).is_err());
}
