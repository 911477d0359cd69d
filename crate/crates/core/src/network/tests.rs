use super::*;
use crate::frames::{random_rotation, transform_rows};
use crate::molgraph::parse_molecule;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::toy;
use crate::trajectory::perturb_continuous;
use nalgebra::Matrix3;

fn net() -> ScoreNetwork {
    ScoreNetwork::new(ModelConfig::small(), ComponentSchedules::default(), 3).unwrap()
}

fn noisy_pair(idx: usize, seed: u64) -> (DenseTensors, DenseTensors) {
    let x0 = toy::corpus()[idx].to_dense();
    let s = perturb_continuous(&x0, 0.3, &mut rng::stream(seed, &[]), &ComponentSchedules::default()).unwrap();
    (x0, s.xt)
}

fn rotated(x: &DenseTensors, r: &Matrix3<f64>) -> DenseTensors {
    DenseTensors { p: transform_rows(&x.p, r), ..x.clone() }
}

fn zero_prefix(params: &mut ModelParams, prefix: &str) {
    for (name, t) in params.iter_mut() {
        if name.starts_with(prefix) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn fourier_at_zero() {
    let e = fourier_embed(0.0, 16);
    assert!(e.data()[..8].iter().all(|&v| v == 0.0));
    assert!(e.data()[8..].iter().all(|&v| v == 1.0));
}

#[test]
fn fourier_is_lipschitz_and_collision_free() {
    let d = 64;
    let c = 2.0 * std::f64::consts::PI * fourier_frequencies(d).iter().cloned().fold(0.0, f64::max) * (d as f64).sqrt();
    let grid: Vec<Tensor> = (0..=1000).map(|k| fourier_embed(k as f64 / 1000.0, d)).collect();
    for k in 0..1000 {
        let diff: f64 = grid[k].data().iter().zip(grid[k + 1].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= c * 1e-3);
    }
    let mut min = f64::INFINITY;
    for a in 0..grid.len() {
        for b in a + 1..grid.len() {
            let dd: f64 = grid[a].data().iter().zip(grid[b].data()).map(|(x, y)| (x - y).powi(2)).sum();
            min = min.min(dd);
        }
    }
    assert!(min > 0.0);
}

#[test]
fn layout_matches_init_and_names_are_unique() {
    let cfg = ModelConfig::small();
    let p = ModelParams::init(&cfg, 1);
    assert_eq!(p.len(), ModelParams::layout(&cfg).len());
    p.check_layout(&cfg).unwrap();
    assert!(p.is_finite());
    let shared = ModelConfig { share_encoders: true, ..cfg };
    assert!(ModelParams::layout(&shared).len() < p.len());
    assert!(matches!(p.check_layout(&ModelConfig { hidden: 16, ..cfg }), Err(NetworkError::ParamShape { .. })));
}

#[test]
fn encoder_is_invariant_and_equivariant() {
    let n = net();
    let (_, xt) = noisy_pair(10, 1);
    let run = |x: &DenseTensors| {
        let tape = Tape::new();
        let pv = n.params.bind(&tape, false);
        encode(&pv, CLEAN, x, &n.config).unwrap().value()
    };
    let base = run(&xt);
    let mut r = rng::stream(2, &[]);
    for _ in 0..5 {
        let mut moved = rotated(&xt, &random_rotation(&mut r));
        moved.p.data_mut().chunks_mut(3).for_each(|c| c[0] += 3.0);
        assert!(run(&moved).max_abs_diff(&base) < 1e-5);
    }
    let perm = [4, 2, 0, 8, 7, 1, 3, 6, 5];
    assert!(run(&xt.permuted(&perm)).max_abs_diff(&base.permute_rows(&perm)) < 1e-12);
}

#[test]
fn symmetric_atoms_get_identical_features() {
    let co2 = parse_molecule(
        r#"{"atoms":[{"el":"C","q":0,"xyz":[0,0,0]},{"el":"O","q":0,"xyz":[1.16,0,0]},{"el":"O","q":0,"xyz":[-1.16,0,0]}],"bonds":[[0,1,2],[0,2,2]]}"#,
    )
    .unwrap()
    .to_dense();
    let n = net();
    let tape = Tape::new();
    let pv = n.params.bind(&tape, false);
    let f = encode(&pv, CLEAN, &co2, &n.config).unwrap().value();
    for k in 0..n.config.hidden {
        assert!((f.at(&[1, k]) - f.at(&[2, k])).abs() < 1e-6);
    }
}

#[test]
fn fuse_contracts() {
    let mut n = net();
    let (x0, xt) = noisy_pair(10, 3);
    let emb = fourier_embed(0.3, n.config.time_dim);
    let go = |n: &ScoreNetwork, shuffle: bool| {
        let tape = Tape::new();
        let pv = n.params.bind(&tape, false);
        let mut f0 = encode(&pv, CLEAN, &x0, &n.config).unwrap();
        if shuffle {
            let v = f0.value().permute_rows(&[1, 0, 2, 3, 4, 5, 6, 7, 8]);
            f0 = tape.constant(v);
        }
        let ft = encode(&pv, NOISY, &xt, &n.config).unwrap();
        fuse(&pv, f0, ft, &emb).unwrap().value()
    };
    let base = go(&n, false);
    assert!(go(&n, true).max_abs_diff(&base) > 1e-6, "output must depend on the conditioner");
    zero_prefix(&mut n.params, "fuse_mlp");
    assert_eq!(go(&n, false).max_abs(), 0.0);
    let tape = Tape::new();
    let pv = n.params.bind(&tape, false);
    let a = tape.constant(Tensor::zeros(&[3, n.config.hidden]));
    let b = tape.constant(Tensor::zeros(&[4, n.config.hidden]));
    assert!(matches!(fuse(&pv, a, b, &emb), Err(NetworkError::Dimension(_))));
}

#[test]
fn edge_condition_contracts() {
    let mut n = net();
    let (x0, xt) = noisy_pair(10, 4);
    let emb = fourier_embed(0.3, n.config.time_dim);
    let run = |n: &ScoreNetwork, e0: &Tensor, et: &Tensor| {
        let tape = Tape::new();
        let pv = n.params.bind(&tape, false);
        edge_condition(&pv, e0, et, &emb).unwrap().value()
    };
    let w = run(&n, &x0.e, &xt.e);
    assert_eq!(w, w.transposed());
    for i in 0..9 {
        assert_eq!(w.at(&[i, i]), 0.0);
    }
    let perm = [4, 2, 0, 8, 7, 1, 3, 6, 5];
    let wp = run(&n, &x0.e.permute_pairs(&perm), &xt.e.permute_pairs(&perm));
    assert!(wp.max_abs_diff(&w.permute_pairs(&perm)) < 1e-12);
    zero_prefix(&mut n.params, "edge_mlp");
    assert_eq!(run(&n, &x0.e, &xt.e).max_abs(), 0.0);
}

#[test]
fn gcn_closed_form_and_residual_path() {
    let cfg = ModelConfig::small();
    let params = ModelParams::init(&cfg, 9);
    let l = cfg.hidden;
    let mut r = rng::stream(5, &[]);
    let h0 = Tensor::new(vec![4, l], rng::normals(&mut r, 4 * l)).unwrap();
    let tape = Tape::new();
    let pv = params.bind(&tape, false);
    // W = 0: Â = I, so one identity-activation layer is h·Θ + b + h.
    let w = tape.constant(Tensor::zeros(&[4, 4]));
    let out = fuse_gcn(&pv, tape.constant(h0.clone()), w, 1, Activation::Identity).unwrap();
    let theta = params.get("gcn.0.w").unwrap();
    let b = params.get("gcn.0.b").unwrap();
    let mut expected = Tensor::zeros(&[4, l]);
    for i in 0..4 {
        for j in 0..l {
            let mut acc = b.at(&[j]) + h0.at(&[i, j]);
            for k in 0..l {
                acc += h0.at(&[i, k]) * theta.at(&[k, j]);
            }
            expected.set(&[i, j], acc);
        }
    }
    assert!(out.node_h.value().max_abs_diff(&expected) < 1e-12);
    let pooled = out.pooled.value();
    for j in 0..l {
        let m = (0..4).map(|i| expected.at(&[i, j])).sum::<f64>() / 4.0;
        assert!((pooled.at(&[j]) - m).abs() < 1e-12);
    }
}

#[test]
fn normalized_adjacency_matches_formula() {
    let tape = Tape::new();
    let w = Tensor::matrix(3, 3, vec![0.0, 0.5, -1.0, 0.5, 0.0, 2.0, -1.0, 2.0, 0.0]).unwrap();
    let a = normalized_adjacency(tape.constant(w.clone())).unwrap().value();
    let d = [2.5, 3.5, 4.0];
    for i in 0..3 {
        for j in 0..3 {
            let wij = w.at(&[i, j]) + if i == j { 1.0 } else { 0.0 };
            assert!((a.at(&[i, j]) - wij / (d[i] as f64 * d[j] as f64).sqrt()).abs() < 1e-15);
        }
    }
}

#[test]
fn heads_respect_symmetries() {
    let n = net();
    let (x0, xt) = noisy_pair(10, 6);
    let run = |x0: &DenseTensors, xt: &DenseTensors| {
        let tape = Tape::new();
        let pv = n.params.bind(&tape, false);
        let o = n.predict_noise(&pv, x0, xt, 0.3).unwrap();
        (o.p.value(), o.h.value(), o.e.value(), project(&pv, &o.latent).unwrap().value())
    };
    let (p, h, e, z) = run(&x0, &xt);
    assert!((z.norm() - 1.0).abs() < 1e-6);
    for k in 0..3 {
        assert!((0..9).map(|i| p.at(&[i, k])).sum::<f64>().abs() < 1e-12);
    }
    for i in 0..9 {
        for j in 0..9 {
            for c in 0..BOND_TYPES {
                assert_eq!(e.at(&[i, j, c]), e.at(&[j, i, c]));
            }
        }
    }
    let mut r = rng::stream(7, &[]);
    for _ in 0..20 {
        let rot = random_rotation(&mut r);
        let (pr, hr, er, zr) = run(&rotated(&x0, &rot), &rotated(&xt, &rot));
        assert!(pr.max_abs_diff(&transform_rows(&p, &rot)) < 1e-4);
        assert!(hr.max_abs_diff(&h) < 1e-5);
        assert!(er.max_abs_diff(&e) < 1e-5);
        assert!(zr.max_abs_diff(&z) < 1e-5);
    }
    let perm = [4, 2, 0, 8, 7, 1, 3, 6, 5];
    let (pp, hp, ep, zp) = run(&x0.permuted(&perm), &xt.permuted(&perm));
    assert!(pp.max_abs_diff(&p.permute_rows(&perm)) < 1e-6);
    assert!(hp.max_abs_diff(&h.permute_rows(&perm)) < 1e-6);
    assert!(ep.max_abs_diff(&e.permute_pairs(&perm)) < 1e-6);
    assert!(zp.max_abs_diff(&z) < 1e-6);
    assert_eq!(h.shape(), &[9, ATOM_FEATURES]);
}

#[test]
fn zero_head_weights_give_zero_outputs() {
    let mut n = net();
    for prefix in ["head_3d_mlp", "head_h_mlp"] {
        zero_prefix(&mut n.params, prefix);
    }
    let (x0, xt) = noisy_pair(5, 8);
    let s = n.scores(&x0, &xt, 0.5).unwrap();
    assert_eq!(s.p.max_abs(), 0.0);
    // zero logits put x̂₀ at the centre of each simplex
    let (a, b) = n.schedules.h.alpha_beta(0.5).unwrap();
    let uniform = |c: usize| if c < TYPE_SLOTS { 1.0 / TYPE_SLOTS as f64 } else { 1.0 / 3.0 };
    for i in 0..xt.h.shape()[0] {
        for c in 0..ATOM_FEATURES {
            let want = -(xt.h.at(&[i, c]) - a * uniform(c)) / (b * b);
            assert!((s.h.at(&[i, c]) - want).abs() < 1e-12);
        }
    }
    n.config.parameterization = Parameterization::Noise;
    assert_eq!(n.scores(&x0, &xt, 0.5).unwrap().h.max_abs(), 0.0);
}

/// Point reflection keeps the e₂ part of the field and negates the e₁/e₃ parts.
#[test]
fn reflection_anti_transforms_e2() {
    let n = net();
    let (x0, xt) = noisy_pair(16, 9);
    let refl = -Matrix3::identity();
    let run = |x0: &DenseTensors, xt: &DenseTensors| {
        let tape = Tape::new();
        let pv = n.params.bind(&tape, false);
        let lat = n.latent(&pv, x0, xt, 0.3).unwrap();
        let c = head_3d_coefficients(&pv, &lat).unwrap().value();
        let field = score_3d(&pv, &lat, &n.frames_for(xt)).unwrap().value();
        (c, field, n.frames_for(xt))
    };
    let (c, out, frames) = run(&x0, &xt);
    let (c2, out_r, _) = run(&rotated(&x0, &refl), &rotated(&xt, &refl));
    assert!(c.max_abs_diff(&c2) < 1e-10, "coefficients are reflection invariant");
    // out(−P) + out(P) is twice the centred e₂ part.
    let n_atoms = frames.len();
    let mut e2_part = Tensor::zeros(&[n_atoms, 3]);
    for (i, f) in frames.iter().enumerate() {
        for k in 0..3 {
            e2_part.set(&[i, k], c.at(&[i, 1]) * f.e2[k]);
        }
    }
    let tape = Tape::new();
    let centred = {
        let v = tape.constant(e2_part);
        v.sub(v.mean_axis(0).unwrap().broadcast(&[n_atoms, 3]).unwrap()).unwrap().value()
    };
    let sum: Vec<f64> = out.data().iter().zip(out_r.data()).map(|(a, b)| a + b).collect();
    let sum = Tensor::new(vec![n_atoms, 3], sum).unwrap();
    assert!(sum.max_abs_diff(&centred.map(|v| 2.0 * v)) < 1e-9);
    assert!(centred.max_abs() > 1e-3, "the e₂ part is not trivially zero");
}

#[test]
fn identity_frames_break_equivariance() {
    let mut n = net();
    n.frame_mode = FrameMode::Identity;
    let (x0, xt) = noisy_pair(10, 10);
    let a = n.scores(&x0, &xt, 0.3).unwrap().p;
    let rot = random_rotation(&mut rng::stream(11, &[]));
    let b = n.scores(&rotated(&x0, &rot), &rotated(&xt, &rot), 0.3).unwrap().p;
    assert!(b.max_abs_diff(&transform_rows(&a, &rot)) > 1e-2);
}

#[test]
fn projections_separate_molecules() {
    let n = net();
    let embs: Vec<Tensor> = toy::corpus().iter().take(10).map(|g| n.embedding(&g.to_dense(), 0.0).unwrap()).collect();
    for a in 0..10 {
        for b in a + 1..10 {
            assert!(embs[a].max_abs_diff(&embs[b]) > 0.0);
        }
    }
}

#[test]
fn scores_need_positive_noise() {
    let n = net();
    let x = toy::corpus()[2].to_dense();
    assert_eq!(n.scores(&x, &x, 0.0).unwrap_err(), NetworkError::ZeroNoise(0.0));
    let ve = ScoreNetwork::new(ModelConfig::small(), ComponentSchedules::uniform(NoiseSchedule::ve(0.01, 1.0).unwrap()), 1).unwrap();
    assert!(ve.scores(&x, &x, 0.0).is_ok());
}
