use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Matrix;
use crate::regression::{logistic, logit, GlobalRegSpec, NodeRegSpec};

fn species(j: usize) -> Vec<String> {
    (0..j).map(|s| format!("sp{s}")).collect()
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| std::iter::once(1.0).chain((0..p).map(|_| rng.random_range(-1.0..1.0))).collect())
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn dataset_from(model: &ZtpsRegression, design: &Matrix<f64>, offsets: Vec<f64>, rng: &mut ChaCha8Rng) -> Dataset {
    let counts = model.simulate(design, &offsets, rng).unwrap();
    let raw = design.select_cols(&(1..design.ncols()).collect::<Vec<_>>());
    Dataset::new(
        (0..design.nrows()).map(|i| format!("site{i:05}")).collect(),
        model.tree().species_names().to_vec(),
        counts,
        model.covariate_names().to_vec(),
        &raw,
        Some(offsets),
    )
    .unwrap()
}

fn mixed_model(tree: PartitionTree, rng: &mut ChaCha8Rng) -> ZtpsRegression {
    let n_x = 3;
    let mut v = |scale: f64| (0..n_x).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    let nodes: Vec<NodeRegSpec> = (0..tree.n_internal())
        .map(|k| {
            let beta = v(0.8);
            match k % 3 {
                0 => NodeRegSpec::new(SplitFamily::Binomial, ZiSide::None, beta, None, None),
                1 => NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::None, beta, Some(vec![-1.5, 0.3, 0.0]), None),
                _ => NodeRegSpec::new(SplitFamily::Binomial, ZiSide::Side2, beta, None, Some(vec![logit(0.3), 0.5, -0.4])),
            }
            .unwrap()
        })
        .collect();
    let global = GlobalRegSpec::new(GlobalFamily::NegBin, vec![2.5, 0.4, -0.3], Some(-1.0), None).unwrap();
    ZtpsRegression::new(tree, vec!["x1".into(), "x2".into()], global, nodes).unwrap()
}

#[test]
fn parameter_counts_match_reference_table() {
    let tree = PartitionTree::balanced_tree(&species(180)).unwrap();
    assert_eq!(tree.n_internal(), 179);
    let nb = GlobalFamily::NegBin;
    assert_eq!(count_parameters(&tree, 3, ModelStructure::Tree(SplitFamily::BetaBinomial), nb), 1437);
    assert_eq!(count_parameters(&tree, 3, ModelStructure::FlatDirichletMultinomial, nb), 725);
    assert_eq!(count_parameters(&tree, 3, ModelStructure::Independent, nb), 900);
    assert_eq!(count_parameters(&tree, 3, ModelStructure::Independent, GlobalFamily::Poisson), 720);
}

#[test]
fn single_split_prediction() {
    let tree = PartitionTree::parse_newick("(a,b);").unwrap();
    let global = GlobalRegSpec::new(GlobalFamily::Poisson, vec![1.0, 0.5], None, None).unwrap();
    let node = NodeRegSpec::new(SplitFamily::Binomial, ZiSide::None, vec![0.2, -1.0], None, None).unwrap();
    let model = ZtpsRegression::new(tree, vec!["x".into()], global, vec![node]).unwrap();
    let x = [1.0, 0.7];
    let mu = model.predict_mean(&x, 2.0).unwrap();
    let total = (1.0f64 + 0.35).exp() * 2.0;
    let f = logistic(0.2 - 0.7);
    assert!((mu[0] - f * total).abs() < 1e-12 * total);
    assert!((mu[0] + mu[1] - total).abs() < 1e-12 * total);

    let (effect, mean) = model.size_effects(&x, 2.0, 1).unwrap()[0];
    let expected = -f * (1.0 - f) * total + f * 0.5 * total;
    assert!((effect - expected).abs() < 1e-12 * total);
    assert_eq!(mean, mu[0]);
}

#[test]
fn proportions_are_complementary() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tree = PartitionTree::balanced_tree(&species(7)).unwrap();
    let model = mixed_model(tree, &mut rng);
    for _ in 0..20 {
        let x = [1.0, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let prop = model.mean_proportions(&x).unwrap();
        for &id in model.tree().internal_nodes() {
            let (a, b) = model.tree().children(id).unwrap();
            assert!((prop[a] + prop[b] - 1.0).abs() < 1e-14);
        }
    }
}

#[test]
fn size_effects_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let tree = PartitionTree::balanced_tree(&species(6)).unwrap();
    let mut model = mixed_model(tree, &mut rng);
    model.global.zi = Some(vec![-1.0, 0.3, 0.2]);
    for _ in 0..10 {
        let x = vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for k in 1..3 {
            let effects = model.group_size_effects(&x, 1.5, k).unwrap();
            let h = 1e-6;
            let mut up = x.clone();
            up[k] += h;
            let mut dn = x.clone();
            dn[k] -= h;
            let mu_up = model.predict_groups(&up, 1.5).unwrap();
            let mu_dn = model.predict_groups(&dn, 1.5).unwrap();
            for (id, &(effect, _)) in effects.iter().enumerate() {
                let fd = (mu_up[id] - mu_dn[id]) / (2.0 * h);
                assert!((fd - effect).abs() <= 1e-6 * effect.abs().max(1.0), "node {id}: {effect} vs {fd}");
            }
        }
    }
}

#[test]
fn zero_coefficient_gives_zero_effect() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tree = PartitionTree::balanced_tree(&species(5)).unwrap();
    let mut model = mixed_model(tree, &mut rng);
    model.global.beta[2] = 0.0;
    for node in &mut model.nodes {
        node.beta[2] = 0.0;
        if let Some(b) = &mut node.b {
            b[2] = 0.0;
        }
    }
    let effects = model.size_effects(&[1.0, 0.3, -0.2], 1.0, 2).unwrap();
    assert!(effects.iter().all(|&(e, _)| e == 0.0));
    let table = model.effect_table(&[vec![1.0, 0.3, -0.2]], 1.0).unwrap();
    assert_eq!(table.rows.len(), 2 * model.tree().n_nodes());
    assert!(table.rows.iter().all(|r| r.rse.is_finite()));
}

#[test]
fn prediction_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let tree = PartitionTree::balanced_tree(&species(4)).unwrap();
    let model = mixed_model(tree, &mut rng);
    let x = [1.0, 0.4, -0.6];
    let site = model.site_model(&x, 1.0).unwrap();
    let mu = model.predict_mean(&x, 1.0).unwrap();
    let draws = 200_000;
    let mut sums = [0.0f64; 4];
    let mut squares = [0.0f64; 4];
    for _ in 0..draws {
        for (j, v) in site.sample(&mut rng).into_iter().enumerate() {
            sums[j] += v as f64;
            squares[j] += (v * v) as f64;
        }
    }
    for j in 0..4 {
        let mean = sums[j] / draws as f64;
        let var = squares[j] / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!((mean - mu[j]).abs() < 4.0 * se, "species {j}: {mean} vs {}", mu[j]);
        assert!((site.mean(j).unwrap() - mu[j]).abs() < 1e-12 * mu[j]);
    }
}

fn small_fit_inputs(seed: u64, n: usize) -> (Dataset, PartitionTree, ZtpsRegression) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = PartitionTree::balanced_tree(&species(4)).unwrap();
    let truth = mixed_model(tree.clone(), &mut rng);
    let design = random_design(&mut rng, n, 2);
    let offsets = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    (dataset_from(&truth, &design, offsets, &mut rng), tree, truth)
}

#[test]
fn totals_are_additive_and_threads_do_not_matter() {
    let (data, tree, _) = small_fit_inputs(25, 400);
    let serial = fit(&data, &tree, &FitConfig { threads: Some(1), ..FitConfig::default() }).unwrap();
    let parallel = fit(&data, &tree, &FitConfig { threads: Some(4), ..FitConfig::default() }).unwrap();
    assert_eq!(serial, parallel);
    let t = serial.totals;
    let ll = serial.global.loglik + serial.nodes.iter().map(|n| n.loglik).sum::<f64>();
    let aic = serial.global.aic + serial.nodes.iter().map(|n| n.aic).sum::<f64>();
    let bic = serial.global.bic + serial.nodes.iter().map(|n| n.bic).sum::<f64>();
    assert!((t.loglik - ll).abs() < 1e-9 && (t.aic - aic).abs() < 1e-9 && (t.bic - bic).abs() < 1e-9);
    assert_eq!(t.k, serial.model.n_params());
    assert!((t.aic - crate::regression::aic(t.loglik, t.k)).abs() < 1e-9);
}

#[test]
fn site_order_does_not_matter() {
    let (data, tree, _) = small_fit_inputs(26, 300);
    let config = FitConfig {
        standard_errors: false,
        ..FitConfig::default()
    };
    let a = fit(&data, &tree, &config).unwrap();
    let mut order: Vec<usize> = (0..data.n_sites()).collect();
    order.reverse();
    order.swap(3, 100);
    let b = fit(&data.subset(&order), &tree, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_species_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let tree = PartitionTree::parse_newick("(a,b);").unwrap();
    let global = GlobalRegSpec::new(GlobalFamily::NegBin, vec![2.0, 0.5], Some(-1.2), None).unwrap();
    let node = NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::None, vec![0.3, -0.8], Some(vec![-1.0, 0.4]), None).unwrap();
    let truth = ZtpsRegression::new(tree.clone(), vec!["x".into()], global, vec![node]).unwrap();
    let design = random_design(&mut rng, 5000, 1);
    let data = dataset_from(&truth, &design, vec![1.0; 5000], &mut rng);
    let config = FitConfig::default().with_candidates(&[SplitFamily::BetaBinomial], false);
    let fitted = fit(&data, &tree, &config).unwrap();
    let est = fitted.model.nodes()[0].to_params();
    let se = fitted.nodes[0].se.clone().unwrap();
    for ((e, t), s) in est.iter().zip(truth.nodes()[0].to_params()).zip(se) {
        assert!((e - t).abs() < 3.0 * s, "{e} vs {t} (se {s})");
    }
    let est = fitted.model.global().to_params();
    let se = fitted.global.se.clone().unwrap();
    for ((e, t), s) in est.iter().zip(truth.global().to_params()).zip(se) {
        assert!((e - t).abs() < 3.0 * s, "{e} vs {t} (se {s})");
    }
}

#[test]
fn rank_deficiency_is_reported() {
    let (data, tree, _) = small_fit_inputs(28, 50);
    let mut raw = data.design.select_cols(&[1, 2, 1]);
    for i in 0..raw.nrows() {
        raw.row_mut(i)[2] *= 2.0;
    }
    let bad = Dataset::new(
        data.site_ids.clone(),
        data.species.clone(),
        data.counts.clone(),
        vec!["x1".into(), "x2".into(), "x1_twice".into()],
        &raw,
        None,
    )
    .unwrap();
    match fit(&bad, &tree, &FitConfig::default()) {
        Err(Error::RankDeficient { columns }) => assert_eq!(columns, ["x1_twice"]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn model_file_round_trip() {
    let (data, tree, truth) = small_fit_inputs(29, 300);
    let fitted = fit(&data, &tree, &FitConfig::default()).unwrap();
    let text = export_model(&fitted).unwrap();
    let back = import_model(&text).unwrap();
    assert_eq!(back, fitted);
    for (a, b) in back.model.nodes().iter().zip(fitted.model.nodes()) {
        for (u, v) in a.to_params().iter().zip(b.to_params()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
    let x = [1.0, 0.25, -0.5];
    assert_eq!(back.model.predict_mean(&x, 1.0).unwrap(), fitted.model.predict_mean(&x, 1.0).unwrap());

    let truth_text = export_regression(&truth).unwrap();
    assert_eq!(import_regression(&truth_text).unwrap(), truth);
    assert!(matches!(import_model(&truth_text), Err(Error::Format(_))));

    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    match import_model(&bumped) {
        Err(Error::Format(msg)) => assert!(msg.contains("version")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn empty_node_is_flagged_not_fatal() {
    let (mut data, tree, _) = small_fit_inputs(30, 200);
    // Species sp0 and sp1 share the first internal child; empty both.
    for i in 0..data.n_sites() {
        let row = data.counts.row_mut(i);
        row[0] = 0;
        row[1] = 0;
    }
    let fitted = fit(&data, &tree, &FitConfig::default()).unwrap();
    let flagged = fitted.flagged_nodes();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].name, "{sp0,sp1}");
}
