use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tte_core::geo::{
    equirectangular_m, filter_dataset, path_length, pieces_in_span, subpath_ground_truth,
    PathRecord, PathSegment, RoadNetwork,
};
use tte_core::model::{
    mape_loss, total_loss, LossConfig, Mode, Model, ModelConfig, PathCnnConfig, Penalties,
    TemporalConfig,
};
use tte_core::nn::{
    conv1d_same, conv2d_same, pool1d_max, pool2d, shannon_index, softmax, PoolMode, Tensor,
};
use tte_core::raster::{
    slide_windows, GeoProjection, RasterConfig, Rasterizer, WindowingConfig, CH_NETWORK, CH_PATH,
    CH_TRAFFIC,
};
use tte_core::synth::{
    generate_network, generate_paths, segment_sum_baseline, true_traffic_table, SynthConfig,
};
use tte_core::traffic::build_traffic_table;

fn city(seed: u64, num_paths: usize) -> SynthConfig {
    SynthConfig {
        grid: 8,
        highway_rows: vec![4],
        highway_cols: vec![3],
        seed,
        num_paths,
        ..SynthConfig::default()
    }
}

fn generated(seed: u64, num_paths: usize) -> (RoadNetwork, Vec<PathRecord>) {
    let cfg = city(seed, num_paths);
    let net = generate_network(&cfg).unwrap();
    let recs = generate_paths(&net, &cfg).unwrap();
    (net, recs)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn reversed(rec: &PathRecord, net: &RoadNetwork) -> PathRecord {
    let path = rec
        .path
        .iter()
        .rev()
        .map(|s| {
            let e = net.edge(s.edge_id).unwrap();
            let back = net.find_edge(e.end_node, e.start_node).unwrap();
            PathSegment {
                edge_id: back.id,
                from: 1.0 - s.to,
                to: 1.0 - s.from,
            }
        })
        .collect();
    PathRecord {
        path,
        ..rec.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_truths_sum_to_total(seed in 0u64..1000, cuts in prop::collection::vec(0.0f64..1.0, 0..12)) {
        let (net, recs) = generated(seed, 4);
        for rec in &recs {
            let len = path_length(rec, &net).unwrap();
            let mut pts: Vec<f64> = cuts.iter().map(|c| c * len).collect();
            pts.push(0.0);
            pts.push(len);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let sum: f64 = pts.windows(2).map(|w| subpath_ground_truth(rec, (w[0], w[1])).unwrap()).sum();
            prop_assert!((sum - rec.total_time_s()).abs() < 1e-6);
        }
    }

    #[test]
    fn locate_is_monotone(seed in 0u64..1000, mut dists in prop::collection::vec(0.0f64..1.0, 2..20)) {
        let (net, recs) = generated(seed, 3);
        dists.sort_by(f64::total_cmp);
        for rec in &recs {
            let len = path_length(rec, &net).unwrap();
            let order: Vec<(usize, f64)> = dists
                .iter()
                .map(|d| {
                    let p = pieces_in_span(rec, &net, d * len, d * len).unwrap()[0];
                    (p.segment_index, p.t0)
                })
                .collect();
            for w in order.windows(2) {
                prop_assert!(w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 <= w[1].1), "{:?}", w);
            }
        }
    }

    #[test]
    fn filter_is_idempotent(seed in 0u64..1000, stretch in prop::collection::vec(0.8f64..1.2, 8)) {
        let (net, mut recs) = generated(seed, 8);
        for (r, s) in recs.iter_mut().zip(&stretch) {
            r.raw_length_m = Some(path_length(r, &net).unwrap() * s);
        }
        let once = filter_dataset(&recs, &net);
        prop_assert_eq!(filter_dataset(&once, &net), once);
    }

    #[test]
    fn reversed_path_has_same_length(seed in 0u64..1000) {
        let (net, recs) = generated(seed, 6);
        for rec in &recs {
            let back = reversed(rec, &net);
            prop_assert!((path_length(&back, &net).unwrap() - path_length(rec, &net).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn traffic_table_is_order_independent_and_normalized(seed in 0u64..1000, shuffle_seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let (net, recs) = generated(seed, 20);
        let table = build_traffic_table(&recs, &net, 0).unwrap();
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let again = build_traffic_table(&shuffled, &net, 0).unwrap();
        for e in net.edges.values() {
            for h in 0..24 {
                let v = table.normalized_speed(e.id, h);
                prop_assert!(v > 0.0 && v <= 1.0);
                prop_assert_eq!(v.to_bits(), again.normalized_speed(e.id, h).to_bits());
            }
        }
    }

    #[test]
    fn raster_channel_invariants(seed in 0u64..1000, hour in 0u8..24) {
        let cfg = city(seed, 3);
        let net = generate_network(&cfg).unwrap();
        let recs = generate_paths(&net, &cfg).unwrap();
        let table = true_traffic_table(&net, &cfg).unwrap();
        let rcfg = RasterConfig::default();
        let r = Rasterizer::new(&net, &table, rcfg).unwrap();
        let wcfg = WindowingConfig::default();
        // pixel diagonal in meters
        let px_m = |c: (f64, f64)| equirectangular_m(c, (c.0 + rcfg.r_lng / rcfg.k as f64, c.1 + rcfg.r_lat / rcfg.k as f64));
        for rec in &recs {
            for w in slide_windows(rec, &wcfg, &net).unwrap() {
                let img = r.rasterize::<f64>(&w, rec, hour).unwrap();
                let twice = r.rasterize::<f64>(&w, rec, hour).unwrap();
                prop_assert!(img.tensor.data().iter().zip(twice.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
                let ch0 = img.nonzero(CH_PATH);
                prop_assert_eq!(&img.nonzero(CH_TRAFFIC), &ch0);
                prop_assert!(ch0.is_subset(&img.nonzero(CH_NETWORK)));
                for y in 0..rcfg.k {
                    for x in 0..rcfg.k {
                        let t = img.get(x, y, CH_TRAFFIC);
                        prop_assert!((0.0..=1.0).contains(&t));
                        for c in [0, 2, 3] {
                            let v = img.get(x, y, c);
                            prop_assert!(v == 0.0 || v == 1.0);
                        }
                    }
                }
                // connected stroke: no gaps for windows whose sub-path lies inside the image
                let proj = GeoProjection::new(w.center, &rcfg);
                let pieces = pieces_in_span(rec, &net, w.span.0, w.span.1).unwrap();
                let inside = pieces.iter().all(|p| {
                    let e = net.edge(p.edge_id).unwrap();
                    let (a, b) = net.edge_coords(e).unwrap();
                    [a, b].iter().all(|&q| {
                        let (x, y) = proj.to_pixel(q);
                        x >= 0.0 && y >= 0.0 && x < rcfg.k as f64 && y < rcfg.k as f64
                    })
                });
                if inside {
                    let need = ((w.span.1 - w.span.0) / px_m(w.center)).ceil() as usize;
                    prop_assert!(ch0.len() >= need, "{} pixels < {}", ch0.len(), need);
                }
            }
        }
    }

    #[test]
    fn conv_same_preserves_extents(h in 1usize..9, w in 1usize..9, c in 1usize..4, f in 0usize..3, filters in 1usize..4, seed in 0u64..100) {
        let f = 2 * f + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[h, w, c], &mut rng);
        let k = random_tensor(&[f, f, c, filters], &mut rng);
        let b = random_tensor(&[filters], &mut rng);
        prop_assert_eq!(conv2d_same(&x, &k, &b).unwrap().shape().to_vec(), vec![h, w, filters]);
        let x1 = random_tensor(&[h, c], &mut rng);
        let k1 = random_tensor(&[f, c, filters], &mut rng);
        prop_assert_eq!(conv1d_same(&x1, &k1, &b).unwrap().shape().to_vec(), vec![h, filters]);
    }

    #[test]
    fn pooling_extents_are_floored(h in 2usize..12, w in 2usize..12, c in 1usize..4, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&[h, w, c], &mut rng);
        for mode in [PoolMode::Max, PoolMode::Avg] {
            prop_assert_eq!(pool2d(&x, mode).unwrap().output.shape().to_vec(), vec![h / 2, w / 2, c]);
        }
        let x1 = random_tensor(&[h, c], &mut rng);
        prop_assert_eq!(pool1d_max(&x1).unwrap().output.shape().to_vec(), vec![h / 2, c]);
    }

    #[test]
    fn softmax_sums_to_one(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let h = shannon_index(&p);
        prop_assert!(h >= -1e-12 && h <= (z.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn mape_is_zero_iff_exact(truths in prop::collection::vec(1.0f64..1000.0, 1..10), bump in 0usize..10) {
        prop_assert_eq!(mape_loss(&truths, &truths).unwrap(), 0.0);
        let mut off = truths.clone();
        let i = bump % off.len();
        off[i] += 1.0;
        prop_assert!(mape_loss(&off, &truths).unwrap() > 0.0);
    }

    #[test]
    fn total_loss_is_linear(
        a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, d in -5.0f64..5.0, e in -5.0f64..5.0,
        beta in 0.0f64..1.0, g1 in 0.0f64..1.0, g2 in 0.0f64..1.0, g3 in 0.0f64..1.0,
    ) {
        let cfg = LossConfig { beta, gamma_center: g1, gamma_div: g2, gamma_l2: g3 };
        let got = total_loss(a, b, &Penalties { center: c, div: d, l2: e }, &cfg);
        let want = beta * a + (1.0 - beta) * b + g1 * c + g2 * d + g3 * e;
        prop_assert!((got - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000, n in 1usize..6, dropout_seed in 0u64..1000) {
        let config = ModelConfig {
            pathcnn: PathCnnConfig { k: 8, d: 4, channels: vec![2, 3], kernel: 3, lambda: 5, dropout: 0.3 },
            temporal: TemporalConfig { s_max: 4, channels: vec![4], kernel: 3, head_dims: vec![4, 1], subpath_hidden: 3 },
            ..ModelConfig::default()
        };
        let model = Model::<f64>::new(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let imgs: Vec<Tensor<f64>> = (0..n).map(|_| random_tensor(&[8, 8, 4], &mut rng)).collect();
        let refs: Vec<&Tensor<f64>> = imgs.iter().collect();
        for mode in [Mode::Inference, Mode::Training { seed: dropout_seed }] {
            let a = model.forward_path(&refs, mode).unwrap();
            let b = model.forward_path(&refs, mode).unwrap();
            prop_assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
            prop_assert_eq!(a.subpath_estimates, b.subpath_estimates);
        }
    }

    #[test]
    fn generated_records_pass_filter_and_baseline_is_exact_without_signals(seed in 0u64..1000) {
        let cfg = SynthConfig { signal_fraction: 0.0, ..city(seed, 10) };
        let net = generate_network(&cfg).unwrap();
        let recs = generate_paths(&net, &cfg).unwrap();
        let in_range: Vec<PathRecord> =
            recs.iter().filter(|r| (60.0..=3600.0).contains(&r.total_time_s())).cloned().collect();
        prop_assert_eq!(filter_dataset(&in_range, &net), in_range);
        let table = true_traffic_table(&net, &cfg).unwrap();
        let mae = recs
            .iter()
            .map(|r| (segment_sum_baseline(&table, r, &net, 0).unwrap() - r.total_time_s()).abs())
            .sum::<f64>()
            / recs.len() as f64;
        prop_assert!(mae < 1.0, "baseline MAE {}", mae);
    }
}
