use candle_core::{DType, Tensor};
use ig_core::dataset::PointCloud;
use ig_core::geometry::Box3D;
use ig_core::text::{tokenize_and_tag, LexiconTagger, TokenizedText};
use ig_net::backbone::SceneGeometry;
use ig_net::model::top_k_indices;
use ig_net::{IntentNet, ModelConfig, ModelInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_point_tokens: 32,
        num_queries: 6,
        encoder_layers: 1,
        decoder_layers: 1,
        num_attention_heads: 2,
        ffn_dim: 32,
        proj_dim: 8,
        group_size: 4,
        token_neighbors: 4,
        vocab_buckets: 64,
        text_layers: 1,
        max_text_len: 16,
        ..ModelConfig::default()
    }
}

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    PointCloud {
        scene_id: format!("s{seed}"),
        feature_dim: 3,
        points: (0..n)
            .map(|_| {
                let mut p: Vec<f64> = (0..3).map(|_| r.random_range(0.0..3.0)).collect();
                p.extend((0..3).map(|_| r.random_range(0.0..1.0)));
                p
            })
            .collect(),
    }
}

fn text(s: &str) -> TokenizedText {
    tokenize_and_tag(s, &LexiconTagger::default()).unwrap()
}

fn cands(n: usize) -> Vec<Box3D> {
    (0..n)
        .map(|i| Box3D::new([i as f64 * 0.5, 1.0, 0.4], [0.3 + 0.1 * i as f64, 0.5, 0.8]).unwrap())
        .collect()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    values(a).iter().zip(values(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn encode_shapes() {
    let cfg = ModelConfig {
        num_point_tokens: 256,
        ..tiny()
    };
    let c = cfg.hidden_dim;
    let model = IntentNet::new(cfg.clone(), 0).unwrap();
    let geo = SceneGeometry::build(&cloud(600, 1), &cfg).unwrap();
    let t = text("I want to sit down and rest");
    assert_eq!(t.len(), 8);
    let boxes = cands(4);
    let e = model
        .encode_modalities(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&t],
            candidates: vec![&boxes],
        })
        .unwrap();
    assert_eq!(e.points.dims(), &[1, 256, c]);
    assert_eq!(e.text.dims(), &[1, 8, c]);
    assert_eq!(e.boxes.dims(), &[1, 4, c]);
    let fused = model.encoder_fuse(&e).unwrap();
    assert_eq!(fused.points.dims(), e.points.dims());
    assert_eq!(fused.text.dims(), e.text.dims());
    assert_eq!(fused.boxes.dims(), e.boxes.dims());
}

#[test]
fn zero_candidates_rejected_and_long_text_flagged() {
    let cfg = tiny();
    let model = IntentNet::new(cfg.clone(), 0).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 2), &cfg).unwrap();
    let t = text("I want to sit down");
    let none: Vec<Box3D> = Vec::new();
    let err = model.encode_modalities(&ModelInput {
        scenes: vec![&geo],
        texts: vec![&t],
        candidates: vec![&none],
    });
    assert!(err.is_err());

    let long = text(&"I want to read a long book about the sea ".repeat(4));
    assert!(long.len() > cfg.max_text_len);
    let boxes = cands(2);
    let e = model
        .encode_modalities(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&long],
            candidates: vec![&boxes],
        })
        .unwrap();
    assert_eq!(e.truncated, vec![true]);
    assert_eq!(e.text_lens, vec![cfg.max_text_len]);
}

#[test]
fn permuting_candidates_permutes_box_rows() {
    let cfg = tiny();
    let model = IntentNet::new(cfg.clone(), 3).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 3), &cfg).unwrap();
    let t = text("I need to write a letter");
    let a = cands(4);
    let perm = [2, 0, 3, 1];
    let b: Vec<Box3D> = perm.iter().map(|&i| a[i]).collect();
    let enc = |c: &[Box3D]| {
        model
            .encode_modalities(&ModelInput {
                scenes: vec![&geo],
                texts: vec![&t],
                candidates: vec![c],
            })
            .unwrap()
            .boxes
            .squeeze(0)
            .unwrap()
    };
    let (ea, eb) = (enc(&a), enc(&b));
    for (row, &src) in perm.iter().enumerate() {
        assert_eq!(values(&eb.get(row).unwrap()), values(&ea.get(src).unwrap()));
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny();
    let geo = SceneGeometry::build(&cloud(120, 4), &cfg).unwrap();
    let t = text("I want to drink some water");
    let boxes = cands(3);
    let run = || {
        let model = IntentNet::new(cfg.clone(), 9).unwrap();
        let out = model
            .forward(&ModelInput {
                scenes: vec![&geo],
                texts: vec![&t],
                candidates: vec![&boxes],
            })
            .unwrap();
        (values(&out.boxes), values(&out.query_proj), out.selected)
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_encoder_layers_is_identity() {
    let cfg = ModelConfig {
        encoder_layers: 0,
        ..tiny()
    };
    let model = IntentNet::new(cfg.clone(), 0).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 5), &cfg).unwrap();
    let t = text("I want to sit");
    let boxes = cands(2);
    let e = model
        .encode_modalities(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&t],
            candidates: vec![&boxes],
        })
        .unwrap();
    let f = model.encoder_fuse(&e).unwrap();
    assert_eq!(values(&f.points), values(&e.points));
    assert_eq!(values(&f.text), values(&e.text));
    assert_eq!(values(&f.boxes), values(&e.boxes));
}

#[test]
fn fully_masked_text_leaves_only_the_residual_path() {
    let cfg = ModelConfig {
        encoder_layers: 2,
        ..tiny()
    };
    let model = IntentNet::with_dtype(cfg.clone(), 1, DType::F64).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 6), &cfg).unwrap();
    let t = text("I want to cook dinner");
    let boxes = cands(3);
    let mut e = model
        .encode_modalities(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&t],
            candidates: vec![&boxes],
        })
        .unwrap();
    e.text_mask = e.text_mask.zeros_like().unwrap();
    let with = model.encoder_fuse(&e).unwrap();
    let without = model.encoder_fuse_with(&e, true).unwrap();
    assert!(max_abs_diff(&with.points, &without.points) < 1e-12);
}

#[test]
fn selecting_all_tokens_returns_every_index() {
    let cfg = tiny();
    let model = IntentNet::new(cfg.clone(), 0).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 7), &cfg).unwrap();
    let t = text("I want to sit");
    let boxes = cands(2);
    let e = model
        .encode_modalities(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&t],
            candidates: vec![&boxes],
        })
        .unwrap();
    let p = cfg.num_point_tokens;
    let sel = model.select_queries(&e.points, &e.point_coords, p).unwrap();
    let mut idx = sel.indices[0].clone();
    idx.sort_unstable();
    assert_eq!(idx, (0..p).collect::<Vec<_>>());
    assert!(model.select_queries(&e.points, &e.point_coords, p + 1).is_err());
}

#[test]
fn top_k_order_and_ties() {
    assert_eq!(top_k_indices(&[5.0, 4.0, 3.0, 2.0], 3), vec![0, 1, 2]);
    assert_eq!(top_k_indices(&[1.0, 2.0, 2.0, 0.5], 3), vec![1, 2, 0]);
    assert_eq!(top_k_indices(&[0.0; 4], 2), vec![0, 1]);
}

#[test]
fn decoder_emits_k_queries_with_positive_sizes() {
    let mut count = 0;
    for (seed, layers) in (0..125u64).zip([0, 1, 2].into_iter().cycle()) {
        let cfg = ModelConfig {
            num_queries: 8,
            decoder_layers: layers,
            ..tiny()
        };
        let model = IntentNet::new(cfg.clone(), seed).unwrap();
        let geo = SceneGeometry::build(&cloud(64, seed), &cfg).unwrap();
        let t = text("I need to store my clothes");
        let boxes = cands(2);
        let out = model
            .forward(&ModelInput {
                scenes: vec![&geo],
                texts: vec![&t],
                candidates: vec![&boxes],
            })
            .unwrap();
        assert_eq!(out.queries.dims(), &[1, 8, cfg.hidden_dim]);
        for b in &out.pred_boxes().unwrap()[0] {
            assert!(b.size().iter().all(|s| *s > 0.0));
            count += 1;
        }
    }
    assert_eq!(count, 1000);
}

#[test]
fn padding_does_not_change_outputs() {
    let cfg = tiny();
    let model = IntentNet::with_dtype(cfg.clone(), 2, DType::F64).unwrap();
    let geo = SceneGeometry::build(&cloud(100, 8), &cfg).unwrap();
    let short = text("I want to sit");
    let long = text("I want to read a book before going to sleep");
    let (a, b) = (cands(2), cands(5));
    let alone = model
        .forward(&ModelInput {
            scenes: vec![&geo],
            texts: vec![&short],
            candidates: vec![&a],
        })
        .unwrap();
    let padded = model
        .forward(&ModelInput {
            scenes: vec![&geo, &geo],
            texts: vec![&short, &long],
            candidates: vec![&a, &b],
        })
        .unwrap();
    let first = |t: &Tensor, len: usize| t.get(0).unwrap().narrow(0, 0, len).unwrap();
    let k = cfg.num_queries;
    assert!(max_abs_diff(&alone.boxes.get(0).unwrap(), &first(&padded.boxes, k)) < 1e-6);
    assert!(max_abs_diff(&alone.query_proj.get(0).unwrap(), &first(&padded.query_proj, k)) < 1e-6);
    assert!(max_abs_diff(&alone.text_proj.get(0).unwrap(), &first(&padded.text_proj, short.len())) < 1e-6);
    let conf = |o: &ig_net::DecoderOutput| o.candidate_confidence.get(0).unwrap().narrow(0, 0, 2).unwrap();
    assert!(max_abs_diff(&conf(&alone), &conf(&padded)) < 1e-6);
    let vlog = padded.verb_pos_logits.get(0).unwrap().narrow(1, 0, short.len()).unwrap();
    assert!(max_abs_diff(&alone.verb_pos_logits.get(0).unwrap(), &vlog) < 1e-6);
    assert_eq!(alone.selected[0], padded.selected[0]);
}
