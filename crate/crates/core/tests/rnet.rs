mod common;

use common::*;
use hybrid_sod::autograd::{Graph, Tensor};
use hybrid_sod::data::{LabelKind, Sample};
use hybrid_sod::nn::{Checkpoint, ParamStore};
use hybrid_sod::rnet::attention::{ChannelAttention, SpatialAttention};
use hybrid_sod::rnet::{
    aggregation_stage, decoder_refinement, guidance_stage, predict_pseudo_labels, semantic_fusion, AggregationBlock,
    GuidanceBlock, MaskOverrides, RNet, RNetConfig,
};
use hybrid_sod::snet::SaliencyNetwork;
use hybrid_sod::Error;
use ndarray::{s, Array2, Array3, Array4};

fn tiny_config(input: usize) -> RNetConfig {
    RNetConfig { encoder_channels: [2, 3, 4, 4, 4], input_size: input, init_seed: 5, ..Default::default() }
}

fn set(store: &mut ParamStore<f64>, name: &str, values: &[f64]) {
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.get_mut(id);
    assert_eq!(t.len(), values.len(), "{name}");
    t.as_slice_mut().unwrap().copy_from_slice(values);
}

fn ramp(n: usize, scale: f64, offset: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * 0.37 + offset).sin()) * scale).collect()
}

fn pointwise(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    naive_conv(x, w, Some(b.as_slice().unwrap()), 1, 0)
}

/// Pooling → bottleneck → sigmoid chain from loops.
fn channel_weights_oracle(store: &ParamStore<f64>, prefix: &str, x: &Tensor<f64>) -> Vec<f64> {
    let (_, c, h, w) = x.dim();
    let p = |n: &str| store.get(store.id(&format!("{prefix}.{n}")).unwrap()).clone();
    let (w1, b1, w2, b2) = (p("squeeze.weight"), p("squeeze.bias"), p("excite.weight"), p("excite.bias"));
    let hidden = w1.dim().0;
    let mlp = |d: &[f64]| -> Vec<f64> {
        let hdn: Vec<f64> = (0..hidden)
            .map(|j| (b1[[0, j, 0, 0]] + (0..c).map(|k| w1[[j, k, 0, 0]] * d[k]).sum::<f64>()).max(0.0))
            .collect();
        (0..c).map(|k| b2[[0, k, 0, 0]] + (0..hidden).map(|j| w2[[k, j, 0, 0]] * hdn[j]).sum::<f64>()).collect()
    };
    let avg: Vec<f64> = (0..c).map(|k| x.slice(s![0, k, .., ..]).sum() / (h * w) as f64).collect();
    let max: Vec<f64> = (0..c).map(|k| x.slice(s![0, k, .., ..]).iter().copied().fold(f64::MIN, f64::max)).collect();
    mlp(&avg).iter().zip(mlp(&max)).map(|(a, m)| sigmoid(a + m)).collect()
}

fn spatial_mask_oracle(store: &ParamStore<f64>, prefix: &str, x: &Tensor<f64>) -> Tensor<f64> {
    let (_, c, h, w) = x.dim();
    let mut desc = Array4::zeros((1, 2, h, w));
    for y in 0..h {
        for xx in 0..w {
            let col: Vec<f64> = (0..c).map(|k| x[[0, k, y, xx]]).collect();
            desc[[0, 0, y, xx]] = col.iter().sum::<f64>() / c as f64;
            desc[[0, 1, y, xx]] = col.iter().copied().fold(f64::MIN, f64::max);
        }
    }
    let k = store.get(store.id(&format!("{prefix}.conv.weight")).unwrap());
    naive_conv(&desc, k, None, 1, 3).mapv(sigmoid)
}

fn concat_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).unwrap()
}

#[test]
fn channel_attention_matches_hand_chain() {
    let mut store = ParamStore::new();
    let ca = ChannelAttention::new(&mut store, &mut rng(1), "ca", 4);
    set(&mut store, "ca.squeeze.weight", &ramp(16, 0.8, 0.1));
    set(&mut store, "ca.squeeze.bias", &ramp(4, 0.2, 1.0));
    set(&mut store, "ca.excite.weight", &ramp(16, 0.6, 2.0));
    set(&mut store, "ca.excite.bias", &ramp(4, 0.1, 3.0));
    let x = Array4::from_shape_vec((1, 4, 2, 2), ramp(16, 1.5, 0.7)).unwrap();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = ca.apply(&mut g, &store, xv, None).unwrap();
    let wts = channel_weights_oracle(&store, "ca", &x);
    assert!(wts.iter().all(|&w| w > 0.0 && w < 1.0));
    let expect = Array4::from_shape_fn((1, 4, 2, 2), |(_, c, y, xx)| wts[c] * x[[0, c, y, xx]]);
    assert!(max_abs_diff(g.value(out), &expect) < 1e-6);
}

#[test]
fn channel_attention_is_permutation_equivariant_in_its_multiply() {
    let mut store = ParamStore::new();
    let ca = ChannelAttention::new(&mut store, &mut rng(2), "ca", 4);
    let x = uniform(&mut rng(3), (1, 4, 3, 3), -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let wv = ca.weights(&mut g, &store, xv, None).unwrap();
    let w = g.value(wv).clone();
    let perm = [2, 0, 3, 1];
    let px = Array4::from_shape_fn(x.dim(), |(b, c, y, xx)| x[[b, perm[c], y, xx]]);
    let pw = Array4::from_shape_fn(w.dim(), |(b, c, y, xx)| w[[b, perm[c], y, xx]]);
    let mut g = Graph::new();
    let (a, b) = (g.input(pw), g.input(px));
    let prod = g.mul(a, b).unwrap();
    let mut g2 = Graph::new();
    let (a2, b2) = (g2.input(w), g2.input(x));
    let orig = g2.mul(a2, b2).unwrap();
    let o = g2.value(orig);
    let p = g.value(prod);
    for c in 0..4 {
        assert_eq!(p.slice(s![.., c, .., ..]), o.slice(s![.., perm[c], .., ..]));
    }
}

#[test]
fn guidance_stage_matches_hand_evaluation() {
    let mut store = ParamStore::new();
    let block = GuidanceBlock::new(&mut store, &mut rng(4), "gb", 2, 3);
    let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        let len = store.get(store.id(n).unwrap()).len();
        set(&mut store, n, &ramp(len, 0.5, i as f64));
    }
    let mut r = rng(5);
    let f_srm = uniform(&mut r, (1, 2, 2, 2), -1.0, 1.0);
    let f_rgb = uniform(&mut r, (1, 2, 2, 2), -1.0, 1.0);
    let mut g = Graph::new();
    let (a, b) = (g.input(f_srm.clone()), g.input(f_rgb.clone()));
    let out = guidance_stage(&mut g, &store, &block, a, b, &MaskOverrides::default()).unwrap();

    let cat = concat_channels(&f_srm, &f_rgb);
    let wts = channel_weights_oracle(&store, "gb.ca", &cat);
    let f_com = Array4::from_shape_fn(cat.dim(), |(_, c, y, x)| wts[c] * cat[[0, c, y, x]]);
    let sa = spatial_mask_oracle(&store, "gb.sa", &f_rgb);
    let inner =
        Array4::from_shape_fn(f_com.dim(), |(_, c, y, x)| sa[[0, 0, y, x]] * f_com[[0, c, y, x]] + f_com[[0, c, y, x]]);
    let p = |n: &str| store.get(store.id(n).unwrap()).clone();
    let expect = pointwise(&inner, &p("gb.proj.weight"), &p("gb.proj.bias"));
    assert!(max_abs_diff(g.value(out), &expect) < 1e-6);
}

#[test]
fn aggregation_stage_matches_hand_evaluation() {
    let mut store = ParamStore::new();
    let block = AggregationBlock::new(&mut store, &mut rng(6), "ag", 2, 3);
    set(&mut store, "ag.sa.conv.weight", &ramp(98, 0.3, 0.5));
    let mut r = rng(7);
    let next = uniform(&mut r, (1, 3, 2, 2), -1.0, 1.0);
    let f_s = uniform(&mut r, (1, 3, 4, 4), -2.0, 2.0);
    let f_en = uniform(&mut r, (1, 3, 4, 4), -1.0, 1.0);
    let mut g = Graph::new();
    let (a, b, c) = (g.input(next.clone()), g.input(f_s.clone()), g.input(f_en.clone()));
    let out = aggregation_stage(&mut g, &store, &block, a, b, c, &MaskOverrides::default()).unwrap();

    let up = naive_resize(&next, 4, 4);
    let sa = spatial_mask_oracle(&store, "ag.sa", &f_en);
    let expect = Array4::from_shape_fn(up.dim(), |(_, ch, y, x)| {
        let u = up[[0, ch, y, x]];
        u + u * sigmoid(f_s[[0, ch, y, x]]) + sa[[0, 0, y, x]] * f_en[[0, ch, y, x]]
    });
    assert!(max_abs_diff(g.value(out), &expect) < 1e-6);
}

#[test]
fn aggregation_with_zero_encoder_term_scales_upsampled_features() {
    let mut store = ParamStore::new();
    let block = AggregationBlock::new(&mut store, &mut rng(8), "ag", 2, 2);
    let mut r = rng(9);
    let next = uniform(&mut r, (1, 2, 3, 3), -1.0, 1.0);
    let f_s = uniform(&mut r, (1, 2, 6, 6), -1.0, 1.0);
    let mut g = Graph::new();
    let (a, b, c) = (g.input(next.clone()), g.input(f_s.clone()), g.input(Array4::zeros((1, 2, 6, 6))));
    let out = aggregation_stage(&mut g, &store, &block, a, b, c, &MaskOverrides::default()).unwrap();
    let up = naive_resize(&next, 6, 6);
    let expect = Array4::from_shape_fn(up.dim(), |i| up[i] * (1.0 + sigmoid(f_s[i])));
    assert!(max_abs_diff(g.value(out), &expect) < 1e-12);
}

#[test]
fn fusion_gate_boundaries_and_midpoint() {
    let mut store = ParamStore::new();
    let block = AggregationBlock::new(&mut store, &mut rng(10), "ag", 2, 2);
    let f_g = Array4::from_elem((1, 2, 3, 3), 2.0);
    let f_en = Array4::from_elem((1, 2, 3, 3), 4.0);
    let run = |p: f64| {
        let mut g = Graph::new();
        let (a, b) = (g.input(f_g.clone()), g.input(f_en.clone()));
        let ov = MaskOverrides { gate: Some(p), ..Default::default() };
        let v = semantic_fusion(&mut g, &store, &block, a, b, &ov).unwrap();
        g.value(v).clone()
    };
    assert_eq!(run(1.0), f_g);
    assert_eq!(run(0.0), f_en);
    assert!(run(0.5).iter().all(|&v| v == 3.0));
}

#[test]
fn learned_masks_lie_strictly_inside_unit_interval() {
    let mut store = ParamStore::new();
    let ca = ChannelAttention::new(&mut store, &mut rng(11), "ca", 6);
    let sa = SpatialAttention::new(&mut store, &mut rng(11), "sa");
    let x = uniform(&mut rng(12), (2, 6, 5, 5), -3.0, 3.0);
    let mut g = Graph::new();
    let xv = g.input(x);
    let w = ca.weights(&mut g, &store, xv, None).unwrap();
    let m = sa.mask(&mut g, &store, xv, None).unwrap();
    for v in [w, m] {
        assert!(g.value(v).iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn decoder_refinement_at_zero_semantics_halves_input() {
    let mut g = Graph::new();
    let up = g.input(uniform(&mut rng(13), (1, 3, 4, 4), -5.0, 5.0));
    let zero = g.input(Array4::zeros((1, 3, 4, 4)));
    let r = decoder_refinement(&mut g, up, zero).unwrap();
    assert_eq!(g.value(r), &g.value(up).mapv(|v| 0.5 * v));
}

#[test]
fn encoder_levels_follow_stride_arithmetic() {
    assert_eq!(RNetConfig { input_size: 288, ..Default::default() }.level_sizes(), [144, 72, 36, 18, 9]);
    assert_eq!(tiny_config(32).level_sizes(), [16, 8, 4, 2, 1]);
    let net: RNet<f64> = RNet::new(tiny_config(32)).unwrap();
    let mut g = Graph::new();
    let i = g.input(Array4::zeros((1, 3, 32, 32)));
    let c = g.input(Array4::zeros((1, 1, 32, 32)));
    let (main, guide) = net.encode(&mut g, i, c).unwrap();
    for (lvl, (&m, &gd)) in main.iter().zip(&guide).enumerate() {
        let side = 32 >> (lvl + 1);
        assert_eq!(g.shape(m)[2..], [side, side]);
        assert_eq!(g.shape(gd)[2..], [side, side]);
        // zero input and zero biases: every stage stays at zero
        assert!(g.value(m).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn encode_rejects_mismatched_coarse() {
    let net: RNet<f64> = RNet::new(tiny_config(16)).unwrap();
    let mut g = Graph::new();
    let i = g.input(Array4::zeros((1, 3, 16, 16)));
    let c = g.input(Array4::zeros((1, 1, 8, 8)));
    assert!(matches!(net.encode(&mut g, i, c), Err(Error::Shape(_))));
}

#[test]
fn forward_outputs_are_maps_and_batch_items_are_independent() {
    let net: RNet<f64> = RNet::new(tiny_config(16)).unwrap();
    let mut r = rng(14);
    let one = uniform(&mut r, (1, 3, 16, 16), 0.0, 1.0);
    let coarse = uniform(&mut r, (1, 1, 16, 16), 0.0, 1.0);
    let img2 = ndarray::concatenate(ndarray::Axis(0), &[one.view(), one.view()]).unwrap();
    let c2 = ndarray::concatenate(ndarray::Axis(0), &[coarse.view(), coarse.view()]).unwrap();
    let p = net.forward(&img2, &c2).unwrap();
    assert_eq!(p.final_map.shape(), &[2, 1, 16, 16]);
    for m in std::iter::once(&p.final_map).chain(p.aux.iter()) {
        assert_eq!(m.shape(), &[2, 1, 16, 16]);
        assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(m.slice(s![0, .., .., ..]), m.slice(s![1, .., .., ..]));
    }
}

/// Moves zero-initialized biases off zero so that no activation sits exactly
/// on a ReLU kink.
fn generic_point(mut net: RNet<f64>, seed: u64) -> RNet<f64> {
    let mut r = rng(seed);
    for id in net.params.ids().collect::<Vec<_>>() {
        if net.params.name(id).ends_with(".bias") {
            let t = net.params.get_mut(id);
            let shape = t.dim();
            *t = uniform(&mut r, shape, -0.1, 0.1);
        }
    }
    net
}

fn gradcheck_rnet(net: &RNet<f64>, seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let image = uniform(&mut r, (1, 3, 16, 16), 0.0, 1.0);
    let coarse = uniform(&mut r, (1, 1, 16, 16), 0.0, 1.0);
    param_gradcheck(
        &net.params,
        |g, store| {
            let mut n = net.clone();
            n.params = store.clone();
            let i = g.input(image.clone());
            let c = g.input(coarse.clone());
            let out = n.forward_graph(g, i, c).unwrap();
            probe_loss(g, &[out.final_map, out.aux[0], out.aux[1], out.aux[2]], seed + 1)
        },
        3,
        seed,
    )
}

#[test]
fn full_forward_gradients_match_finite_differences() {
    let net = generic_point(RNet::new(tiny_config(16)).unwrap(), 40);
    let report = gradcheck_rnet(&net, 15);
    assert_eq!(report.len(), net.params.len());
    for (name, err) in &report {
        assert!(*err < 1e-4, "{name}: {err:e}");
    }
}

#[test]
fn guidance_and_aggregation_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let gb = GuidanceBlock::new(&mut store, &mut rng(16), "gb", 3, 3);
    let ab = AggregationBlock::new(&mut store, &mut rng(17), "ab", 3, 3);
    let mut r = rng(18);
    let f_srm = uniform(&mut r, (2, 3, 6, 6), -1.0, 1.0);
    let f_rgb = uniform(&mut r, (2, 3, 6, 6), -1.0, 1.0);
    let top = uniform(&mut r, (2, 6, 3, 3), -1.0, 1.0);
    let next = uniform(&mut r, (2, 3, 3, 3), -1.0, 1.0);
    let ov = MaskOverrides::default();
    let build = |g: &mut Graph<f64>, store: &ParamStore<f64>| {
        let (a, b) = (g.input(f_srm.clone()), g.input(f_rgb.clone()));
        let f_en = guidance_stage(g, store, &gb, a, b, &ov).unwrap();
        let t = g.input(top.clone());
        let f_g = hybrid_sod::rnet::semantic_features(g, store, &ab, t, (6, 6)).unwrap();
        let f_s = semantic_fusion(g, store, &ab, f_g, f_en, &ov).unwrap();
        let n = g.input(next.clone());
        let de = aggregation_stage(g, store, &ab, n, f_s, f_en, &ov).unwrap();
        squash_loss(g, de, 19)
    };
    for (name, err) in param_gradcheck(&store, build, 6, 20) {
        assert!(err < 1e-4, "{name}: {err:e}");
    }
    let err = input_gradcheck(
        &f_rgb,
        |g, x| {
            let a = g.input(f_srm.clone());
            let f_en = guidance_stage(g, &store, &gb, a, x, &ov).unwrap();
            squash_loss(g, f_en, 21)
        },
        20,
        22,
    );
    assert!(err < 1e-4, "guidance input gradient {err:e}");
}

#[test]
fn checkpoint_round_trip_reproduces_outputs_bitwise() {
    let mut net: RNet<f32> = RNet::new(RNetConfig { init_seed: 3, ..tiny_config(16) }).unwrap();
    let samples = tiny_samples::<f32>(3, 20);
    let refs: Vec<&Sample<f32>> = samples.iter().collect();
    net.train_step(&refs, &Default::default()).unwrap();
    let bytes = net.save();
    let restored = RNet::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored.optimizer_steps(), 1);
    assert_eq!(net.predict(&refs).unwrap(), restored.predict(&refs).unwrap());
    let mut other: RNet<f32> = RNet::new(RNetConfig { init_seed: 99, ..tiny_config(16) }).unwrap();
    other.load(&bytes).unwrap();
    assert_eq!(other.predict(&refs).unwrap(), net.predict(&refs).unwrap());
    assert_eq!(other.optimizer_steps(), 1);
}

fn tiny_samples<T: hybrid_sod::Scalar>(n: usize, side: usize) -> Vec<Sample<T>> {
    let mut r = rng(30);
    (0..n)
        .map(|i| {
            let img = uniform(&mut r, (1, side, side, 3), 0.0, 1.0);
            let image = Array3::from_shape_fn((side, side, 3), |(y, x, c)| T::lit(img[[0, y, x, c]]));
            let lab = binary(&mut r, (1, 1, side, side));
            let label = Array2::from_shape_fn((side, side), |(y, x)| T::lit(lab[[0, 0, y, x]]));
            let coarse = label.mapv(|v| v * T::lit(0.5) + T::lit(0.25));
            Sample::new(format!("s{i}"), image).with_label(label, LabelKind::Real).with_coarse(coarse)
        })
        .collect()
}

#[test]
fn training_steps_reduce_the_loss_on_a_fixed_batch() {
    let mut net: RNet<f64> = RNet::new(tiny_config(16)).unwrap();
    let samples = tiny_samples::<f64>(2, 16);
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let step = hybrid_sod::nn::StepParams { lr: 1e-2, weight_decay: 0.0, ..Default::default() };
    let first = net.train_step(&refs, &step).unwrap();
    let mut last = first;
    for _ in 0..15 {
        last = net.train_step(&refs, &step).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn pseudo_labels_contract() {
    let net: RNet<f64> = RNet::new(tiny_config(16)).unwrap();
    assert!(predict_pseudo_labels(&[], &net).unwrap().is_empty());
    let samples = tiny_samples::<f64>(3, 20);
    let a = predict_pseudo_labels(&samples, &net).unwrap();
    let b = predict_pseudo_labels(&samples, &net).unwrap();
    assert_eq!(a.len(), 3);
    for ((x, y), s) in a.iter().zip(&b).zip(&samples) {
        assert_eq!(x.label_kind, LabelKind::Pseudo);
        assert_eq!(x.image, s.image);
        assert_eq!(x.label, y.label);
        assert_eq!(x.label.as_ref().unwrap().dim(), (20, 20));
    }
    let mut bare = samples[0].clone();
    bare.coarse = None;
    assert!(matches!(predict_pseudo_labels(&[bare], &net), Err(Error::Data(_))));
}

#[test]
fn rgb_stem_is_widened_by_channel_repetition() {
    let k = Array4::from_shape_fn((2, 3, 3, 3), |(o, c, y, x)| (o * 100 + c * 10 + y * 3 + x) as f64);
    let wide = hybrid_sod::rnet::expand_rgb_stem(&k);
    assert_eq!(wide.shape(), &[2, 4, 3, 3]);
    assert_eq!(wide.slice(s![.., 3, .., ..]), k.slice(s![.., 0, .., ..]));
    assert_eq!(wide.slice(s![.., ..3, .., ..]), k.view());
}
