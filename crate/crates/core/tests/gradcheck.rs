use colorfuse::gradcheck::{
    analytic_gradients, generic_point, gradient_check, random_batch, Family, GradCheckConfig, Probe,
};
use colorfuse::model::{ChannelScale, ModelConfig, ModelGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> GradCheckConfig {
    GradCheckConfig {
        model: ModelConfig { channel_scale: ChannelScale::new(1, 16).unwrap(), ..ModelConfig::reduced() },
        samples: 0,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn every_family_is_covered_and_agrees() {
    let r = gradient_check(&small()).unwrap();
    let cov = r.coverage();
    for f in Family::ALL {
        assert!(cov.get(&f).copied().unwrap_or(0) > 0, "no {f} samples");
    }
    assert!(r.passed(), "{r}");
}

#[test]
fn same_seed_same_report() {
    let mut cfg = small();
    cfg.model.input_size = 32;
    cfg.batch = 2;
    let a = gradient_check(&cfg).unwrap();
    let b = gradient_check(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn zero_weight_head_matches_finite_differences() {
    let cfg = small().model;
    let mut g = ModelGraph::<f64>::new(cfg, 1).unwrap();
    g.zero_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, target, labels) = random_batch(&cfg, 4, &mut rng);
    analytic_gradients(&mut g, &x, &target, &labels, 1.0).unwrap();
    let mut probe = Probe::new(&mut g, &x, &target, &labels, 1.0).unwrap();
    let names: Vec<String> =
        g.params().iter().filter(|p| p.is_trainable() && p.name.starts_with("out.")).map(|p| p.name.clone()).collect();
    assert_eq!(names.len(), 4);
    let mut nonzero = 0;
    for name in names {
        let grad = g.param(&name).unwrap().grad.data().to_vec();
        for (i, a) in grad.into_iter().enumerate() {
            let n = probe.derivative(&mut g, &name, i, 1e-3).unwrap().unwrap();
            assert!((a - n).abs() <= 1e-6 * (1.0 + a.abs()), "{name}[{i}]: {a} vs {n}");
            nonzero += usize::from(a.abs() > 1e-12);
        }
    }
    // Only the shift of the output batch norm sees a nonzero input.
    assert_eq!(nonzero, 2);
}

#[test]
fn generic_point_moves_norm_parameters() {
    let cfg = small().model;
    let mut g = ModelGraph::<f64>::new(cfg, 1).unwrap();
    generic_point(&mut g, &mut ChaCha8Rng::seed_from_u64(0));
    let p = g.param("up1.norm.weight").unwrap();
    assert!(p.value.data().iter().all(|&v| (0.5..1.5).contains(&v) && v != 1.0));
}

