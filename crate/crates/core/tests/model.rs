use probunet_core::backbone::{Backbone, BackboneConfig};
use probunet_core::data::{coarsen, generate_synthetic, NormStats, SynthConfig};
use probunet_core::diagnostics::ensemble_crps;
use probunet_core::probunet::{Model, ModelConfig, ProbUNet};
use probunet_nn::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn tiny_model(seed: u64) -> Model {
    let mut cfg = ModelConfig::desk();
    cfg.backbone.channel_schedule = vec![2, 2, 4, 4];
    cfg.probunet.encoder_channels = vec![2, 4, 4, 4];
    cfg.probunet.fusion_hidden = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (net, mut params) = ProbUNet::new::<f32>(cfg, &mut rng).unwrap();
    // The output layer starts at zero, which would make every member identical.
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v += 0.05 * (rng.random::<f32>() - 0.5);
        }
    }
    let hr = generate_synthetic(1, (16, 16), seed, &SynthConfig { factor: 4, ..SynthConfig::default() }).unwrap();
    let norm = NormStats::from_training(&hr).unwrap();
    Model { net, params, norm, factor: 4 }
}

#[test]
fn ensembles_do_not_depend_on_the_batch_size() {
    let model = tiny_model(1);
    let hr = generate_synthetic(1, (16, 16), 9, &SynthConfig { factor: 4, ..SynthConfig::default() }).unwrap();
    let lr = coarsen(&hr.slice_time(0, 11).unwrap(), 4).unwrap();
    let whole = model.sample_ensemble(&lr, 3, 5, 64).unwrap();
    assert_eq!(whole.shape(), [33, 3, 16, 16]);
    assert_eq!(&whole.time_index[..6], &[0, 0, 0, 1, 1, 1]);
    for batch in [1, 4] {
        let split = model.sample_ensemble(&lr, 3, 5, batch).unwrap();
        assert_eq!(split.values(), whole.values(), "batch {batch}");
    }
    // Members differ from each other, and the seed matters.
    assert_ne!(whole.frame(0), whole.frame(1));
    assert_ne!(model.sample_ensemble(&lr, 3, 6, 64).unwrap().values(), whole.values());
    for t in 0..whole.len_time() {
        let (pr, tmin, tmax) = (whole.plane(t, 0), whole.plane(t, 1), whole.plane(t, 2));
        assert!(pr.iter().all(|&v| v > 0.0));
        assert!(tmin.iter().zip(tmax).all(|(a, b)| b > a));
    }
}

#[test]
fn backbone_features_see_the_whole_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let cfg = BackboneConfig { channel_schedule: vec![2, 2, 4, 4], ..BackboneConfig::default() };
    let backbone = Backbone::new(cfg, &mut store, &mut rng).unwrap();
    let n = 16;
    let base = Tensor::new(&[1, 3, n, n], (0..3 * n * n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = backbone.forward(&mut g, &p, xv).unwrap();
        g.value(y).clone()
    };
    let y0 = run(&base);
    let mut poked = base.clone();
    poked.data_mut()[0] += 1.0;
    let y1 = run(&poked);
    let (_, c, h, w) = y0.dims4();
    assert_eq!((h, w), (n, n));
    // A change in the top-left input pixel reaches the bottom-right output pixel.
    let far = (0..c).map(|k| (y0.data()[k * h * w + h * w - 1] - y1.data()[k * h * w + h * w - 1]).abs()).sum::<f64>();
    assert!(far > 1e-9, "receptive field does not span the grid ({far})");
}

#[test]
fn large_ensemble_crps_approaches_the_gaussian_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    for (mu, sigma, y) in [(0.0, 1.0, 0.3), (2.0, 0.5, 1.0), (-1.0, 3.0, 4.0)] {
        let dist = NormalDist::new(mu, sigma).unwrap();
        let members: Vec<f64> = (0..20_000).map(|_| dist.sample(&mut rng)).collect();
        let z = (y - mu) / sigma;
        let exact = sigma * (z * (2.0 * std_normal.cdf(z) - 1.0) + 2.0 * std_normal.pdf(z) - 1.0 / std::f64::consts::PI.sqrt());
        let fair = ensemble_crps(&members, y, true);
        assert!((fair - exact).abs() < 0.02 * exact + 1e-3, "N({mu}, {sigma}) at {y}: {fair} vs {exact}");
        // The fair score is below its plain counterpart.
        assert!(fair <= ensemble_crps(&members, y, false));
    }
}
