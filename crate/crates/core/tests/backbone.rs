use brl_core::backbone::{
    backward, build_adjacency, forward, BackboneConfig, NormalizedAdjacency, ParamSet, SampleInput,
    Sgd, SgdConfig,
};
use brl_core::rng::rng_from;
use brl_core::{Error, SkeletonGraph};
use rand::Rng;

const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely against `FD_REL_TOL * FD_FLOOR`.
const FD_FLOOR: f64 = 1e-3;

fn toy_config(persons: usize, strides: Vec<usize>) -> BackboneConfig {
    BackboneConfig {
        input_channels: 3,
        joints: 5,
        frames: 8,
        persons,
        num_classes: 3,
        widths: vec![4, 6],
        temporal_kernel: 5,
        strides,
    }
}

fn toy_adjacency() -> NormalizedAdjacency {
    build_adjacency(&SkeletonGraph::toy5()).unwrap()
}

fn random_sample(cfg: &BackboneConfig, rng: &mut impl Rng) -> SampleInput<f64> {
    let n = cfg.persons * cfg.frames * cfg.joints * cfg.input_channels;
    SampleInput {
        data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        person_mask: (0..cfg.persons).map(|m| m == 0 || rng.random_bool(0.5)).collect(),
    }
}

/// Random init with non-trivial affine parameters so every slot is exercised.
fn random_params(cfg: &BackboneConfig, seed: u64) -> ParamSet<f64> {
    let mut rng = rng_from(seed);
    let mut p = ParamSet::<f64>::init(cfg, &mut rng);
    for param in &mut p.params {
        if param.name.ends_with("scale") || param.name.ends_with("shift") || param.name.ends_with("bias") {
            for v in &mut param.value {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    p.touch();
    p
}

/// Scalar objective `sum_i r_i . logits_i`.
fn objective(
    p: &ParamSet<f64>,
    cfg: &BackboneConfig,
    adj: &NormalizedAdjacency,
    batch: &[SampleInput<f64>],
    r: &[Vec<f64>],
) -> f64 {
    let (logits, _) = forward(p, cfg, adj, batch).unwrap();
    logits
        .iter()
        .zip(r)
        .map(|(l, ri)| l.iter().zip(ri).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn check_gradients(cfg: &BackboneConfig, seed: u64) -> (usize, f64) {
    let adj = toy_adjacency();
    let mut rng = rng_from(seed ^ 0xabc);
    let batch: Vec<_> = (0..2).map(|_| random_sample(cfg, &mut rng)).collect();
    let r: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..cfg.num_classes).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut p = random_params(cfg, seed);
    let (_, cache) = forward(&p, cfg, &adj, &batch).unwrap();
    backward(&mut p, cfg, &adj, &cache, &r).unwrap();
    let analytic: Vec<Vec<f64>> = p.params.iter().map(|x| x.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut checked = 0;
    for (pi, grads) in analytic.iter().enumerate() {
        for (vi, &a) in grads.iter().enumerate() {
            let orig = p.params[pi].value[vi];
            p.params[pi].value[vi] = orig + FD_STEP;
            p.touch();
            let plus = objective(&p, cfg, &adj, &batch, &r);
            p.params[pi].value[vi] = orig - FD_STEP;
            p.touch();
            let minus = objective(&p, cfg, &adj, &batch, &r);
            p.params[pi].value[vi] = orig;
            p.touch();
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            assert!(
                err <= FD_REL_TOL,
                "{}[{vi}]: analytic {a} numeric {numeric} (rel {err})",
                p.params[pi].name
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    (checked, worst)
}

#[test]
fn finite_differences_single_person() {
    let (n, _) = check_gradients(&toy_config(1, vec![1, 2]), 11);
    assert!(n > 0);
}

#[test]
fn finite_differences_two_persons_stride_one() {
    check_gradients(&toy_config(2, vec![1, 1]), 12);
}

#[test]
fn finite_differences_double_stride() {
    check_gradients(&toy_config(2, vec![2, 2]), 13);
}

#[test]
fn bias_only_model_outputs_bias() {
    let cfg = toy_config(2, vec![1, 2]);
    let mut p = ParamSet::<f64>::zeros(&cfg);
    p.get_mut("classifier.bias").unwrap().value = vec![0.5, -1.0, 2.0];
    let mut rng = rng_from(1);
    let batch: Vec<_> = (0..3).map(|_| random_sample(&cfg, &mut rng)).collect();
    let (logits, _) = forward(&p, &cfg, &toy_adjacency(), &batch).unwrap();
    for l in logits {
        assert_eq!(l, vec![0.5, -1.0, 2.0]);
    }
}

#[test]
fn identical_samples_identical_rows_and_no_batch_coupling() {
    let cfg = toy_config(2, vec![1, 2]);
    let p = random_params(&cfg, 3);
    let adj = toy_adjacency();
    let mut rng = rng_from(2);
    let s = random_sample(&cfg, &mut rng);
    let other = random_sample(&cfg, &mut rng);
    let (a, _) = forward(&p, &cfg, &adj, &[s.clone(), s.clone(), other.clone()]).unwrap();
    assert_eq!(a[0], a[1]);
    let (b, _) = forward(&p, &cfg, &adj, &[other, s]).unwrap();
    assert_eq!(a[0], b[1]);
    assert_eq!(a[2], b[0]);
}

#[test]
fn joint_relabelling_leaves_logits_unchanged() {
    let cfg = toy_config(1, vec![1, 2]);
    let p = random_params(&cfg, 4);
    let adj = toy_adjacency();
    let perm = [3, 0, 4, 2, 1];
    let mut rng = rng_from(5);
    let s = random_sample(&cfg, &mut rng);
    let c = cfg.input_channels;
    let mut permuted = s.clone();
    for t in 0..cfg.frames {
        for (i, &old) in perm.iter().enumerate() {
            for ch in 0..c {
                permuted.data[(t * cfg.joints + i) * c + ch] = s.data[(t * cfg.joints + old) * c + ch];
            }
        }
    }
    let (a, _) = forward(&p, &cfg, &adj, &[s]).unwrap();
    let (b, _) = forward(&p, &cfg, &adj.permuted(&perm), &[permuted]).unwrap();
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn stale_cache_is_refused() {
    let cfg = toy_config(1, vec![1, 2]);
    let mut p = random_params(&cfg, 6);
    let adj = toy_adjacency();
    let batch = vec![random_sample(&cfg, &mut rng_from(7))];
    let (_, cache) = forward(&p, &cfg, &adj, &batch).unwrap();
    let mut opt = Sgd::new(SgdConfig::default(), &p);
    opt.step(&mut p, 0.1);
    let err = backward(&mut p, &cfg, &adj, &cache, &[vec![1.0, 0.0, 0.0]]).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn zero_upstream_gives_zero_gradients_and_accumulation_adds() {
    let cfg = toy_config(2, vec![1, 2]);
    let mut p = random_params(&cfg, 8);
    let adj = toy_adjacency();
    let batch = vec![random_sample(&cfg, &mut rng_from(9))];
    let (_, cache) = forward(&p, &cfg, &adj, &batch).unwrap();
    backward(&mut p, &cfg, &adj, &cache, &[vec![0.0; 3]]).unwrap();
    assert!(p.params.iter().all(|x| x.grad.iter().all(|&g| g == 0.0)));

    let d = vec![vec![0.3, -0.2, 1.0]];
    backward(&mut p, &cfg, &adj, &cache, &d).unwrap();
    let once: Vec<Vec<f64>> = p.params.iter().map(|x| x.grad.clone()).collect();
    backward(&mut p, &cfg, &adj, &cache, &d).unwrap();
    assert!(p.params.iter().zip(&once).all(|(x, o)| &x.grad == o));
    p.accumulate = true;
    backward(&mut p, &cfg, &adj, &cache, &d).unwrap();
    for (x, o) in p.params.iter().zip(&once) {
        for (g, g1) in x.grad.iter().zip(o) {
            assert_eq!(*g, 2.0 * g1);
        }
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let cfg = toy_config(1, vec![1, 2]);
    let p = random_params(&cfg, 1);
    let bad = SampleInput {
        data: vec![0.0; 7],
        person_mask: vec![true],
    };
    assert!(matches!(
        forward(&p, &cfg, &toy_adjacency(), &[bad]),
        Err(Error::Shape(_))
    ));
    let adj = build_adjacency(&SkeletonGraph::compact15()).unwrap();
    let ok = random_sample(&cfg, &mut rng_from(1));
    assert!(forward(&p, &cfg, &adj, &[ok]).is_err());
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let cfg = toy_config(2, vec![1, 2]);
    let adj = toy_adjacency();
    let mut rng = rng_from(21);
    let batch: Vec<_> = (0..9).map(|_| random_sample(&cfg, &mut rng)).collect();
    let d: Vec<Vec<f64>> = (0..9)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut p = random_params(&cfg, 22);
            let (_, cache) = forward(&p, &cfg, &adj, &batch).unwrap();
            backward(&mut p, &cfg, &adj, &cache, &d).unwrap();
            p.params.into_iter().map(|x| x.grad).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn single_precision_tracks_double() {
    let cfg = toy_config(1, vec![1, 2]);
    let p64 = random_params(&cfg, 30);
    let mut p32 = ParamSet::<f32>::zeros(&cfg);
    for (a, b) in p32.params.iter_mut().zip(&p64.params) {
        a.value = b.value.iter().map(|&x| x as f32).collect();
    }
    let s = random_sample(&cfg, &mut rng_from(31));
    let s32 = SampleInput {
        data: s.data.iter().map(|&x| x as f32).collect(),
        person_mask: s.person_mask.clone(),
    };
    let adj = toy_adjacency();
    let (a, _) = forward(&p64, &cfg, &adj, &[s]).unwrap();
    let (b, _) = forward(&p32, &cfg, &adj, &[s32]).unwrap();
    for (x, y) in a[0].iter().zip(&b[0]) {
        assert!((x - y).abs() < 1e-4);
    }
}

#[test]
fn sgd_plain_step_and_zero_lr() {
    let cfg = toy_config(1, vec![1, 2]);
    let mut p = random_params(&cfg, 40);
    for x in &mut p.params {
        x.grad = x.value.iter().map(|v| 0.5 * v + 0.1).collect();
    }
    let before = p.clone();
    let plain = SgdConfig {
        momentum: 0.0,
        weight_decay: 0.0,
        nesterov: false,
    };
    Sgd::new(plain, &p).step(&mut p, 0.01);
    for (a, b) in p.params.iter().zip(&before.params) {
        for (x, (x0, g)) in a.value.iter().zip(b.value.iter().zip(&b.grad)) {
            assert_eq!(*x, x0 - 0.01 * g);
        }
        assert!(a.grad.iter().all(|&g| g == 0.0));
    }

    let mut q = before.clone();
    let mut opt = Sgd::new(SgdConfig::default(), &q);
    opt.step(&mut q, 0.0);
    for (a, b) in q.params.iter().zip(&before.params) {
        assert_eq!(a.value, b.value);
    }
    assert!(opt.buffers().iter().flatten().any(|&b| b != 0.0));
}

#[test]
fn nesterov_on_quadratic_bowl_matches_scalar_oracle() {
    // f(p) = p^2 / 2, gradient p; compare against an independent scalar loop.
    let cfg = BackboneConfig {
        input_channels: 1,
        joints: 1,
        frames: 1,
        persons: 1,
        num_classes: 1,
        widths: vec![1],
        temporal_kernel: 1,
        strides: vec![1],
    };
    let mut p = ParamSet::<f64>::zeros(&cfg);
    p.params[0].value[0] = 3.0;
    let conf = SgdConfig {
        momentum: 0.9,
        weight_decay: 0.0,
        nesterov: true,
    };
    let mut opt = Sgd::new(conf, &p);
    let (mut x, mut buf) = (3.0f64, 0.0f64);
    let mut trace = Vec::new();
    for _ in 0..100 {
        p.params[0].grad[0] = p.params[0].value[0];
        opt.step(&mut p, 0.1);
        let g = x;
        buf = 0.9 * buf + g;
        x -= 0.1 * (g + 0.9 * buf);
        assert_eq!(p.params[0].value[0], x);
        trace.push(x.abs());
    }
    assert!(trace[99] < 1e-3 * 3.0);
    // envelope shrinks after burn-in
    let peak = |w: &[f64]| w.iter().cloned().fold(0.0, f64::max);
    for k in 2..10 {
        assert!(peak(&trace[k * 10..(k + 1) * 10]) < peak(&trace[(k - 1) * 10..k * 10]));
    }
}

#[test]
fn weight_decay_alone_shrinks_parameters() {
    let cfg = toy_config(1, vec![1, 2]);
    let mut p = random_params(&cfg, 50);
    let before = p.clone();
    let conf = SgdConfig {
        momentum: 0.9,
        weight_decay: 1e-2,
        nesterov: true,
    };
    Sgd::new(conf, &p).step(&mut p, 0.1);
    // g = w p, buf = w p, update = (1 + m) w p
    let factor = 1.0 - 0.1 * (1.0 + 0.9) * 1e-2;
    for (a, b) in p.params.iter().zip(&before.params) {
        for (x, x0) in a.value.iter().zip(&b.value) {
            assert!((x - factor * x0).abs() <= 1e-15 * x0.abs().max(1.0));
        }
    }
}
