use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use voxrel_core::encoder::{Encoder, EncoderConfig};
use voxrel_core::numerics::{backward, grad_check, GradCheckOptions, ParamVector, Tape, Var};
use voxrel_core::sampler::{sample_subregions, GapMatrix, SamplingParams};
use voxrel_core::tasks::*;
use voxrel_core::volume::{SubRegion, Vec3, Volume};

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn empty_params() -> ParamVector {
    voxrel_core::numerics::ParamLayout::new().zeros()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-scale..scale)))
        .collect()
}

fn unit_from(tape: &mut Tape<'_>, members: [Vec<f64>; 4]) -> UnitEmbeddings {
    UnitEmbeddings {
        members: members.map(|m| tape.input(m)),
    }
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_grid: 4,
        cell_grid: 2,
        hidden: 6,
        embed_dim: 5,
        head_hidden: 0,
        position_scale_mm: 1.0,
    }
}

fn noise_volume(seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let voxels = (0..16 * 16 * 16).map(|_| rng.random::<f32>()).collect();
    // Sub-mm spacing keeps squared-mm losses near 1, so finite differences
    // resolve even exactly-zero gradient components.
    Volume::new(seed, [16, 16, 16], [0.15, 0.1, 0.1], [0.0; 3], false, voxels).unwrap()
}

fn regions(seed: u64, alpha: usize) -> Vec<SubRegion> {
    let params = SamplingParams {
        min_foreground: 0.0,
        ..SamplingParams::new(alpha, [8, 8, 8])
    };
    sample_subregions(&noise_volume(seed), &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

// ---- encode_batch ----

#[test]
fn encode_batch_counts_and_tracks_one_patch() {
    let cfg = tiny_encoder();
    let online = cfg.init_params(1);
    let momentum = online.select_prefix("enc.");
    let enc = Encoder::new(cfg).unwrap();
    let rs = regions(1, 4);
    let mut tape = Tape::new(&online);
    let before = enc.forward_passes();
    let batch = encode_batch(&mut tape, &enc, &momentum, &rs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(enc.forward_passes() - before, 4);
    assert_eq!(batch.forward_passes, 4);
    let emb = batch.embeddings(&tape);
    assert_eq!(emb.iter().filter(|e| e.tracked).count(), 1);
    assert!(emb[batch.selected.unwrap()].tracked);

    // Gradient reaches the parameters only through the selected patch.
    let others: Vec<Var> = (0..4)
        .filter(|&i| i != batch.selected.unwrap())
        .map(|i| batch.patches[i])
        .collect();
    let s = tape.mean(&others);
    let s = tape.sum(s);
    let g = backward(&tape, s).unwrap();
    assert!(g.params.iter().all(|&x| x == 0.0));
    let s = tape.sum(batch.patches[batch.selected.unwrap()]);
    let g = backward(&tape, s).unwrap();
    assert!(g.params.iter().any(|&x| x != 0.0));
}

#[test]
fn encode_batch_rejects_single_patch() {
    let cfg = tiny_encoder();
    let online = cfg.init_params(1);
    let enc = Encoder::new(cfg).unwrap();
    let rs = regions(1, 2);
    let mut tape = Tape::new(&online);
    let err = encode_batch(&mut tape, &enc, &online, &rs[..1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn identical_twin_gives_identical_embeddings() {
    let cfg = tiny_encoder();
    let online = cfg.init_params(5);
    let momentum = online.select_prefix("enc.");
    let enc = Encoder::new(cfg).unwrap();
    let rs = regions(2, 5);
    let mut a = Tape::new(&online);
    let mixed = encode_batch(&mut a, &enc, &momentum, &rs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut b = Tape::detached(&online);
    let all = encode_all(&mut b, &enc, &rs).unwrap();
    let ea: Vec<_> = mixed.embeddings(&a).into_iter().map(|e| e.latent).collect();
    let eb: Vec<_> = all.embeddings(&b).into_iter().map(|e| e.latent).collect();
    assert_eq!(ea, eb);
}

#[test]
fn selection_is_uniform_chi_square() {
    let cfg = EncoderConfig {
        input_grid: 2,
        cell_grid: 1,
        hidden: 1,
        embed_dim: 1,
        head_hidden: 0,
        position_scale_mm: 1.0,
    };
    let online = cfg.init_params(0);
    let momentum = online.select_prefix("enc.");
    let enc = Encoder::new(cfg).unwrap();
    let rs = regions(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut counts = [0f64; 4];
    let n = 10_000;
    for _ in 0..n {
        let mut tape = Tape::new(&online);
        counts[encode_batch(&mut tape, &enc, &momentum, &rs, &mut rng).unwrap().selected.unwrap()] += 1.0;
    }
    let expected = n as f64 / 4.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 {stat} >= {critical}, counts {counts:?}");
}

// ---- CRSC ----

#[test]
fn similarity_shape_and_oracle() {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<[Vec<f64>; 4]> = (0..3).map(|_| std::array::from_fn(|_| random_vec(&mut rng, 6))).collect();
    let units: Vec<_> = raw.iter().map(|m| unit_from(&mut tape, m.clone())).collect();
    let sim = crsc_similarity(&tape, &units);
    assert_eq!(sim.shape(), [3, 4, 4]);
    for (block, m) in sim.blocks.iter().zip(&raw) {
        for i in 0..4 {
            assert_eq!(block[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(block[i][j], block[j][i]);
                assert!((-1.0..=1.0).contains(&block[i][j]));
                if i != j {
                    assert!((block[i][j] - oracle_cos(&m[i], &m[j])).abs() < 1e-12);
                }
            }
        }
    }
    let same = vec![0.3, -0.2, 0.9];
    let u = unit_from(&mut tape, std::array::from_fn(|_| same.clone()));
    let block = crsc_similarity(&tape, &[u]).blocks[0];
    for row in block {
        for v in row {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }
}

#[test]
fn crsc_loss_extremes_and_oracle() {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let a = vec![1.0, 2.0, -0.5];
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    let u = unit_from(&mut tape, [a.clone(), a.clone(), a.clone(), neg]);
    let l = crsc_loss(&mut tape, &[u]).unwrap();
    assert!((tape.scalar(l) + 2.0).abs() < 1e-15);

    let u = unit_from(&mut tape, std::array::from_fn(|_| a.clone()));
    let l = crsc_loss(&mut tape, &[u]).unwrap();
    assert!(tape.scalar(l).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw: Vec<[Vec<f64>; 4]> = (0..5).map(|_| std::array::from_fn(|_| random_vec(&mut rng, 7))).collect();
    let oracle = raw
        .iter()
        .map(|m| oracle_cos(&m[2], &m[3]) - oracle_cos(&m[0], &m[1]))
        .sum::<f64>()
        / 5.0;
    let units: Vec<_> = raw.into_iter().map(|m| unit_from(&mut tape, m)).collect();
    let l = crsc_loss(&mut tape, &units).unwrap();
    assert!((tape.scalar(l) - oracle).abs() < 1e-12);
    assert!(crsc_loss(&mut tape, &[]).is_err());
}

#[test]
fn crsc_infer_labels() {
    let r = crsc_infer(0.9, 0.1);
    assert!(r.second_is_distant && !r.tie && r.correct());
    let r = crsc_infer(0.1, 0.9);
    assert!(!r.second_is_distant && !r.correct());
    let r = crsc_infer(0.4, 0.4);
    assert!(r.tie && !r.correct());
}

proptest! {
    #[test]
    fn crsc_loss_scale_invariant(
        m in prop::array::uniform4(prop::collection::vec(-1.0f64..1.0, 5)),
        k in prop::array::uniform4(0.01f64..100.0),
    ) {
        prop_assume!(m.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3));
        let p = empty_params();
        let mut tape = Tape::new(&p);
        let u = unit_from(&mut tape, m.clone());
        let base = crsc_loss(&mut tape, &[u]).unwrap();
        let scaled: [Vec<f64>; 4] = std::array::from_fn(|i| m[i].iter().map(|x| x * k[i]).collect());
        let u = unit_from(&mut tape, scaled);
        let other = crsc_loss(&mut tape, &[u]).unwrap();
        prop_assert!((tape.scalar(base) - tape.scalar(other)).abs() < 1e-12);
        prop_assert!((-2.0..=2.0).contains(&tape.scalar(base)));
    }
}

// ---- GMP ----

fn gmp_value(points: &[Vec3], truth: &GapMatrix, eps: f64) -> f64 {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let vars: Vec<Var> = points.iter().map(|x| tape.input(x.to_vec())).collect();
    let l = gmp_loss(&mut tape, &vars, truth, eps).unwrap();
    tape.scalar(l)
}

#[test]
fn gmp_substitution_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = random_points(&mut rng, 5, 50.0);
    assert_eq!(gmp_value(&pts, &GapMatrix::from_points(&pts), 1.0), 0.0);

    let truth = GapMatrix::from_points(&[[0.0; 3], [0.0, 0.0, 10.0]]);
    let v = gmp_value(&[[0.0; 3], [0.0, 12.0, 0.0]], &truth, 1.0);
    let oracle = 0.25 * 2.0 * (2.0f64 / 11.0).powi(2);
    assert!((v - oracle).abs() < 1e-15);
    assert!((v - 0.016529).abs() < 1e-6);

    // Generic oracle over all ordered pairs.
    let truth_pts = random_points(&mut rng, 6, 40.0);
    let truth = GapMatrix::from_points(&truth_pts);
    let pred = random_points(&mut rng, 6, 40.0);
    let mut sum = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                let g = dist(truth_pts[i], truth_pts[j]);
                sum += ((dist(pred[i], pred[j]) - g).abs() / (g + 0.5)).powi(2);
            }
        }
    }
    assert!((gmp_value(&pred, &truth, 0.5) - sum / 36.0).abs() < 1e-12);
}

#[test]
fn gmp_rejects_bad_input() {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let a = tape.input(vec![0.0; 3]);
    let b = tape.input(vec![1.0; 3]);
    let truth = GapMatrix::from_points(&[[0.0; 3], [1.0; 3]]);
    assert!(gmp_loss(&mut tape, &[a, b], &truth, 0.0).is_err());
    assert!(gmp_loss(&mut tape, &[a], &truth, 1.0).is_err());
}

fn rotation(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let n = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

proptest! {
    #[test]
    fn gmp_rigid_invariance(seed in any::<u64>(), angle in -3.2f64..3.2, shift in prop::array::uniform3(-200.0f64..200.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = GapMatrix::from_points(&random_points(&mut rng, 5, 60.0));
        let pred = random_points(&mut rng, 5, 60.0);
        let axis: Vec3 = std::array::from_fn(|_| rng.random_range(0.1..1.0));
        let r = rotation(axis, angle);
        let moved: Vec<Vec3> = pred
            .iter()
            .map(|p| std::array::from_fn(|i| (0..3).map(|k| r[i][k] * p[k]).sum::<f64>() + shift[i]))
            .collect();
        prop_assert!((gmp_value(&pred, &truth, 1.0) - gmp_value(&moved, &truth, 1.0)).abs() < 1e-10);
    }
}

// ---- RBCS ----

fn rbcs_value(pred: &[Vec3], truth: &[Vec3], routes: &RouteSet, mode: RouteMode) -> f64 {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let vars: Vec<Var> = pred.iter().map(|x| tape.input(x.to_vec())).collect();
    let l = rbcs_loss(&mut tape, &vars, truth, routes, mode).unwrap();
    tape.scalar(l)
}

fn delta_value(pred: &[Vec3], truth: &[Vec3], route: &[usize], mode: RouteMode) -> f64 {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let vars: Vec<Var> = pred.iter().map(|x| tape.input(x.to_vec())).collect();
    let d = rbcs_delta(&mut tape, &vars, truth, route, mode).unwrap();
    tape.scalar(d)
}

fn collapse_oracle(pred: &[Vec3], truth: &[Vec3]) -> f64 {
    let n = pred.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += (0..3)
                    .map(|a| ((pred[j][a] - pred[i][a]) - (truth[j][a] - truth[i][a])).powi(2))
                    .sum::<f64>();
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

fn full(alpha: usize) -> RouteSet {
    enumerate_routes(alpha, usize::MAX, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn rbcs_literal_substitution() {
    let m = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let d = delta_value(&m, &m, &[0, 1, 2], RouteMode::Literal);
    assert!((d - 2.0).abs() < 1e-15);
    assert_eq!(delta_value(&m, &m, &[0, 1, 2], RouteMode::Aggregate), 0.0);
}

#[test]
fn rbcs_offset_prediction_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = random_points(&mut rng, 5, 50.0);
    let pred: Vec<Vec3> = truth.iter().map(|t| [t[0] + 7.0, t[1] - 3.0, t[2] + 0.5]).collect();
    let routes = full(5);
    for r in &routes.routes {
        assert!(delta_value(&pred, &truth, r, RouteMode::Aggregate) < 1e-12);
    }
    assert!(rbcs_value(&pred, &truth, &routes, RouteMode::Aggregate) < 1e-20);
}

#[test]
fn rbcs_interior_order_is_irrelevant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_points(&mut rng, 5, 50.0);
    let pred = random_points(&mut rng, 5, 50.0);
    let a = delta_value(&pred, &truth, &[4, 0, 1, 2, 3], RouteMode::Aggregate);
    let b = delta_value(&pred, &truth, &[4, 2, 1, 0, 3], RouteMode::Aggregate);
    assert!((a - b).abs() < 1e-12 * a.max(1.0));
}

#[test]
fn rbcs_rejects_invalid_route() {
    let p = empty_params();
    let mut tape = Tape::new(&p);
    let vars: Vec<Var> = (0..3).map(|_| tape.input(vec![0.0; 3])).collect();
    let err = rbcs_delta(&mut tape, &vars, &[[0.0; 3]; 3], &[0, 0, 2], RouteMode::Aggregate).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn rbcs_scaling_substitution() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_points(&mut rng, 4, 30.0);
    let pred: Vec<Vec3> = truth.iter().map(|t| t.map(|x| 2.0 * x)).collect();
    let mut oracle = 0.0;
    for (i, j) in (0..4).cartesian_product(0..4).filter(|(i, j)| i != j) {
        oracle += dist(truth[i], truth[j]).powi(2);
    }
    oracle /= 12.0;
    let v = rbcs_value(&pred, &truth, &full(4), RouteMode::Aggregate);
    assert!((v - oracle).abs() < 1e-9 * oracle);
}

#[test]
fn telescoping_collapse_small_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for alpha in 2..=6 {
        let routes = full(alpha);
        for _ in 0..20 {
            let truth = random_points(&mut rng, alpha, 80.0);
            let pred = random_points(&mut rng, alpha, 80.0);
            let v = rbcs_value(&pred, &truth, &routes, RouteMode::Aggregate);
            let o = collapse_oracle(&pred, &truth);
            assert!((v - o).abs() <= 1e-9 * o, "alpha {alpha}: {v} vs {o}");
        }
    }
}

proptest! {
    #[test]
    fn rbcs_translation_invariance(seed in any::<u64>(), shift in prop::array::uniform3(-500.0f64..500.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_points(&mut rng, 4, 50.0);
        let pred = random_points(&mut rng, 4, 50.0);
        let moved: Vec<Vec3> = pred.iter().map(|p| std::array::from_fn(|k| p[k] + shift[k])).collect();
        let routes = enumerate_routes(4, 10, &mut rng).unwrap();
        for mode in [RouteMode::Aggregate, RouteMode::Literal] {
            let a = rbcs_value(&pred, &truth, &routes, mode);
            let b = rbcs_value(&moved, &truth, &routes, mode);
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}

// ---- total loss and gradients ----

struct Fixture {
    cfg: EncoderConfig,
    online: ParamVector,
    momentum: ParamVector,
    regions: Vec<SubRegion>,
    targets: BatchTargets,
    routes: RouteSet,
}

fn fixture(seed: u64, alpha: usize) -> Fixture {
    let cfg = tiny_encoder();
    let online = cfg.init_params(seed);
    let mut momentum = online.select_prefix("enc.");
    // Make the twin differ from the online encoder.
    for v in momentum.values_mut() {
        *v *= 0.9;
    }
    let regions = regions(seed, alpha);
    let targets = BatchTargets::from_regions(&regions, [3, 3, 3]).unwrap();
    let routes = enumerate_routes(alpha, 8, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Fixture {
        cfg,
        online,
        momentum,
        regions,
        targets,
        routes,
    }
}

fn run(f: &Fixture, tape: &mut Tape<'_>, task: &TaskConfig) -> BatchLosses {
    let enc = Encoder::new(f.cfg.clone()).unwrap();
    let batch = encode_batch(tape, &enc, &f.momentum, &f.regions, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    batch_losses(tape, &enc, &batch, &f.targets, &f.routes, task).unwrap()
}

#[test]
fn total_loss_weights() {
    let f = fixture(4, 4);
    let task = TaskConfig::default();
    let mut tape = Tape::new(&f.online);
    let l = run(&f, &mut tape, &task);
    let sum = tape.scalar(l.crsc) + tape.scalar(l.gmp) + tape.scalar(l.rbcs);
    assert!((tape.scalar(l.total) - sum).abs() <= 1e-12 * sum.abs());

    let only = TaskConfig {
        weights: LossWeights { crsc: 1.0, gmp: 0.0, rbcs: 0.0 },
        ..TaskConfig::default()
    };
    let mut tape = Tape::new(&f.online);
    let l = run(&f, &mut tape, &only);
    assert_eq!(tape.scalar(l.total), tape.scalar(l.crsc));

    let none = TaskConfig {
        weights: LossWeights { crsc: 0.0, gmp: 0.0, rbcs: 0.0 },
        ..TaskConfig::default()
    };
    let mut tape = Tape::new(&f.online);
    let l = run(&f, &mut tape, &none);
    assert_eq!(tape.scalar(l.total), 0.0);
    let g = backward(&tape, l.total).unwrap();
    assert!(g.params.iter().all(|&x| x == 0.0));
}

#[test]
fn all_losses_pass_gradient_check() {
    for seed in 0..3 {
        let f = fixture(seed, 3);
        for mode in [RouteMode::Aggregate, RouteMode::Literal] {
            let task = TaskConfig {
                route_mode: mode,
                ..TaskConfig::default()
            };
            for pick in 0..4 {
                let options = GradCheckOptions {
                    step: 1e-3,
                    ..GradCheckOptions::default()
                };
                let report = grad_check(&f.online, options, |t| {
                    let l = run(&f, t, &task);
                    [l.crsc, l.gmp, l.rbcs, l.total][pick]
                })
                .unwrap();
                assert!(report.passed, "seed {seed} {mode:?} loss {pick}: {report:?}");
            }
        }
    }
}

#[test]
fn diagnostics_record_shapes() {
    let f = fixture(6, 4);
    let mut tape = Tape::new(&f.online);
    let l = run(&f, &mut tape, &TaskConfig::default());
    let rec = IterationRecord::collect(&tape, 3, &l, &f.targets, &f.routes);
    assert_eq!(rec.crsc_pairs.len(), 6);
    assert_eq!(rec.gap_points.len(), 6);
    assert_eq!(rec.route_arrows.len(), 3);
    assert!((0.0..=1.0).contains(&rec.crsc_accuracy));
    let json = serde_json::to_string(&rec).unwrap();
    assert!(json.contains("\"iter\":3"));
}
