//! Acceptance checks. Each test writes one `PASS`/`FAIL` line straight to
//! stdout (bypassing capture) and then asserts its verdict.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgcep::cep::{a_mean, cluster_accuracy, kmeans, w_mean, w_mean_forms, KMeansConfig, KMeansInit, W_MEAN_FORM_TOLERANCE};
use kgcep::datagen::{generate, ShapeSpec};
use kgcep::kg::{EntityId, RelationId, Split, Triple};
use kgcep::lp::{evaluate_lp, split_ranks, FilterMode, LpConfig};
use kgcep::model::{EmbeddingModel, Matrix, ModelKind};
use kgcep::stats::{pearson, spearman, StatsError};
use kgcep::sweep::{correlate_reports, run_sweep, CepMetric, CepSpec, GridSpec, LpMetric, LpSpec, SweepSpec, SweepTable};
use kgcep::train::{replica_seed, train, TrainConfig};

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{name}: {detail}");
}

fn info(name: &str, detail: String) {
    let _ = std::io::stdout().lock().write_all(format!("INFO {name}: {detail}\n").as_bytes());
}

#[test]
fn lp_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1b);
    let (mut instances, mut queries, mut mismatches, mut worst) = (0, 0, 0, 0.0f64);
    while instances < 50 {
        let Some(kg) = common::random_kg(&mut rng, 10) else { continue };
        instances += 1;
        let kind = if instances % 2 == 0 { ModelKind::TransE } else { ModelKind::TransH };
        let dim = rng.gen_range(1..=3);
        let model = common::grid_model(&kg, kind, dim, &mut rng);
        let config = common::random_lp_config(&mut rng);
        let oracle = common::oracle_lp(&model, &kg, Split::Tst, &config);
        let ranks: Vec<usize> = split_ranks(&model, &kg, Split::Tst, &config).unwrap().iter().map(|r| r.2).collect();
        queries += ranks.len();
        mismatches += ranks.iter().zip(&oracle.ranks).filter(|(a, b)| a != b).count() + ranks.len().abs_diff(oracle.ranks.len());
        let report = evaluate_lp(&model, &kg, Split::Tst, &config).unwrap();
        worst = worst.max((report.mrank - oracle.mrank).abs()).max((report.mrr - oracle.mrr).abs());
        for (k, v) in &oracle.hits {
            worst = worst.max((report.hits[k] - v).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "lp-oracle",
        mismatches == 0 && worst <= 1e-12 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, {queries} ranks, {mismatches} rank mismatches, max metric gap {worst:e}, {elapsed:.2?}"),
    );
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let mut report = Vec::new();
    let mut pass = true;
    for kind in [ModelKind::TransE, ModelKind::TransH] {
        let mut rng = ChaCha8Rng::seed_from_u64(kind as u64 + 7);
        let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
        while checked < 100 {
            let dim = rng.gen_range(2..=16);
            let mut draw = |rows: usize| Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let entities = draw(3);
            let relations = draw(1);
            let normals = (kind == ModelKind::TransH).then(|| {
                let mut w = draw(1);
                let n = w.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
                w.row_mut(0).iter_mut().for_each(|x| *x /= n);
                w
            });
            let model = EmbeddingModel { kind, typed: false, dim, entities, relations, normals };
            let t = |h, tl| Triple::new(EntityId(h), RelationId(0), EntityId(tl));
            let gamma = [1.0, 2.0, 4.0][rng.gen_range(0..3)];
            let (pos, neg) = if rng.gen() { (t(0, 1), t(2, 1)) } else { (t(0, 1), t(0, 2)) };
            match common::hinge_gradient_error(&model, &pos, &neg, gamma, 1e-5) {
                Some(e) => {
                    checked += 1;
                    worst = worst.max(e);
                }
                None => skipped += 1,
            }
        }
        pass &= worst < 1e-4;
        report.push(format!("{kind:?} 100 points (max rel err {worst:.2e}, {skipped} inactive-hinge draws skipped)"));
    }
    let elapsed = start.elapsed();
    verdict(
        "gradients",
        pass && elapsed < Duration::from_secs(5),
        format!("{}, {elapsed:.2?}", report.join("; ")),
    );
}

#[test]
fn training_signal() {
    let start = Instant::now();
    let ds = generate(&ShapeSpec { seed: 1, ..ShapeSpec::ontology() }).unwrap();
    let kg = &ds.kg;
    let config = TrainConfig { model: ModelKind::TransE, dim: 16, max_epochs: 200, typed: true, ..TrainConfig::default() };
    let lp = config.lp_config();
    let initial = EmbeddingModel::init(kg.dictionary(), config.model, config.dim, config.typed, replica_seed(config.seed, 0));
    let before = evaluate_lp(&initial, kg, Split::Tst, &lp).unwrap();
    let (model, _) = train(kg, &config).unwrap();
    let after = evaluate_lp(&model, kg, Split::Tst, &lp).unwrap();
    let elapsed = start.elapsed();
    let hits = after.hits_at(10).unwrap();
    let filtered = LpConfig { filter: FilterMode::Filtered, ..lp.clone() };
    let f0 = evaluate_lp(&initial, kg, Split::Tst, &filtered).unwrap();
    let f1 = evaluate_lp(&model, kg, Split::Tst, &filtered).unwrap();
    info(
        "training-signal",
        format!(
            "filtered ranking for comparison: MRR {:.4} -> {:.4} ({:.2}x), hits@10 {:.3}",
            f0.mrr,
            f1.mrr,
            f1.mrr / f0.mrr,
            f1.hits_at(10).unwrap()
        ),
    );
    verdict(
        "training-signal",
        after.mrr >= 3.0 * before.mrr && hits >= 0.5 && elapsed < Duration::from_secs(60),
        format!(
            "raw typed TST MRR {:.4} -> {:.4} ({:.2}x, need 3x), hits@10 {hits:.4} (need 0.5), {elapsed:.2?}",
            before.mrr,
            after.mrr,
            after.mrr / before.mrr
        ),
    );
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (points, truth) = common::gaussian_blobs(&mut rng, 4, 100, 2, 10.0);
    let (mut recovered, mut monotone, mut missed) = (0, 0, Vec::new());
    for seed in 0..10 {
        let r = kmeans(&points, 4, &KMeansConfig { seed, init: KMeansInit::KMeansPlusPlus, ..KMeansConfig::default() }).unwrap();
        if common::same_partition(&r.assignment, &truth) {
            recovered += 1;
        } else {
            missed.push(format!("seed {seed} stuck at WCSS {:.1}", r.wcss()));
        }
        monotone += usize::from(r.wcss_history.windows(2).all(|w| w[1] <= w[0]));
    }
    verdict(
        "kmeans",
        recovered == 10 && monotone == 10,
        format!("partition recovered for {recovered}/10 seeds {missed:?}, WCSS non-increasing in {monotone}/10 runs"),
    );
}

#[test]
fn cep_formulas() {
    let mut failures = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
    if w_mean(&[1.0, 0.5], &[10.0, 30.0], 40.0).unwrap() != 0.625 {
        failures.push("wMean([1,.5],[10,30])".to_string());
    }
    // Three clusters: {0,0,0,1}, {1,1,2}, {2,0,1} plus an unlabelled member.
    let assignment = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
    let labels = [Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(2), Some(2), Some(0), Some(1), None];
    let stats = cluster_accuracy(&assignment, &labels);
    let accs: Vec<f64> = stats.iter().map(|s| s.acc).collect();
    let t: Vec<f64> = stats.iter().map(|s| s.t_k as f64).collect();
    let preds: Vec<u32> = stats.iter().map(|s| s.predominant).collect();
    if preds != [0, 1, 0] || t != [3.0, 2.0, 1.0] {
        failures.push(format!("predominant {preds:?} T {t:?}"));
    }
    if !close(a_mean(&accs).unwrap(), 7.0 / 12.0) {
        failures.push("aMean fixture".into());
    }
    if !close(w_mean(&accs, &t, 10.0).unwrap(), 47.0 / 72.0) {
        failures.push("wMean fixture".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=64);
        let accs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let t: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=200) as f64).collect();
        let l = t.iter().sum::<f64>() + rng.gen_range(0..500) as f64;
        let (scaled, plain) = w_mean_forms(&accs, &t, l).unwrap();
        worst = worst.max((scaled - plain).abs());
    }
    if worst > W_MEAN_FORM_TOLERANCE {
        failures.push(format!("forms disagree by {worst:e}"));
    }
    verdict(
        "cep-formulas",
        failures.is_empty(),
        format!("fixtures {}; 1000 random weighted-mean pairs agree within {worst:e}", if failures.is_empty() { "ok".into() } else { failures.join(", ") }),
    );
}

#[test]
fn correlation_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst, mut undefined_ok, mut undefined) = (0.0f64, true, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=40);
        let coarse: bool = rng.gen();
        let mut draw = || {
            (0..n)
                .map(|_| if coarse { rng.gen_range(0..5) as f64 } else { rng.gen_range(-10.0..10.0) })
                .collect::<Vec<f64>>()
        };
        let (x, y) = (draw(), draw());
        let brute = [common::brute_pearson(&x, &y), common::brute_spearman(&x, &y)];
        for (lib, brute) in [pearson(&x, &y), spearman(&x, &y)].into_iter().zip(brute) {
            match lib {
                Ok(v) => worst = worst.max((v - brute).abs()),
                Err(StatsError::ConstantSeries) => {
                    undefined += 1;
                    undefined_ok &= brute.is_nan();
                }
                Err(e) => panic!("{e}"),
            }
        }
    }
    let (x, y) = ([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
    let (p, s) = (pearson(&x, &y).unwrap(), spearman(&x, &y).unwrap());
    let fixture = (p - 0.8).abs() < 1e-12 && (s - 0.8).abs() < 1e-12;
    verdict(
        "correlation",
        worst <= 1e-10 && undefined_ok && fixture,
        format!("1000 pairs within {worst:e} of brute force ({undefined} constant-series cases undefined); fixture pearson {p}, spearman {s}"),
    );
}

/// Default 27-point grid on the noisy ontology-like graph.
fn sweep_spec(root: &Path, shape: ShapeSpec, run: &str) -> SweepSpec {
    let data = root.join(format!("data-{:?}", shape.shape));
    if !data.join("lrn.tsv").exists() {
        generate(&shape).unwrap().write(&data).unwrap();
    }
    let targets = shape.levels.iter().map(|l| l.relation.clone()).collect();
    SweepSpec {
        name: format!("{:?}", shape.shape),
        dataset: data,
        out: root.join(run),
        grid: GridSpec::default(),
        cep: CepSpec { targets, multiplier: 4, max_iterations: 100, seed: 0, init: KMeansInit::KMeansPlusPlus },
        lp: LpSpec::default(),
    }
}

fn ontology_shape() -> ShapeSpec {
    ShapeSpec { seed: 1, noise_rate: 0.1, ..ShapeSpec::ontology() }
}

struct SharedSweep {
    root: PathBuf,
    table: SweepTable,
    elapsed: Duration,
}

fn ontology_sweep() -> &'static SharedSweep {
    static SWEEP: OnceLock<SharedSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let root = tempfile::tempdir().unwrap().keep();
        let start = Instant::now();
        let table = run_sweep(&sweep_spec(&root, ontology_shape(), "first")).unwrap();
        SharedSweep { root, table, elapsed: start.elapsed() }
    })
}

fn pearson_cell(table: &SweepTable, lp: LpMetric, target: &str) -> Option<f64> {
    correlate_reports(table, lp, CepMetric::AMean, target).unwrap().pearson.value()
}

#[test]
fn sweep_sign_pattern() {
    let shared = ontology_sweep();
    let t = &shared.table;
    let ok_rows = t.rows.iter().filter(|r| r.is_ok()).count();
    for target in &t.targets {
        info(
            "sweep-signs",
            format!(
                "ontology {target}: pearson(MRR, aMean) {:?}, pearson(MRank, aMean) {:?}",
                pearson_cell(t, LpMetric::Mrr, target),
                pearson_cell(t, LpMetric::MRank, target)
            ),
        );
    }
    let ehr_root = tempfile::tempdir().unwrap();
    let ehr = run_sweep(&sweep_spec(ehr_root.path(), ShapeSpec { seed: 1, noise_rate: 0.1, ..ShapeSpec::ehr() }, "ehr")).unwrap();
    for target in &ehr.targets {
        info(
            "sweep-signs",
            format!(
                "ehr {target} (not required): pearson(MRR, aMean) {:?}, pearson(MRank, aMean) {:?}",
                pearson_cell(&ehr, LpMetric::Mrr, target),
                pearson_cell(&ehr, LpMetric::MRank, target)
            ),
        );
    }
    let mrr = pearson_cell(t, LpMetric::Mrr, "inPGroup");
    let mrank = pearson_cell(t, LpMetric::MRank, "inPGroup");
    verdict(
        "sweep-signs",
        ok_rows == 27 && mrr.is_some_and(|v| v > 0.3) && mrank.is_some_and(|v| v < 0.0) && shared.elapsed < Duration::from_secs(1800),
        format!(
            "{ok_rows}/27 runs, inPGroup pearson(MRR, aMean) {mrr:?} (need > 0.3), pearson(MRank, aMean) {mrank:?} (need < 0), {:.1?}",
            shared.elapsed
        ),
    );
}

#[test]
fn sweep_determinism() {
    let shared = ontology_sweep();
    let second = run_sweep(&sweep_spec(&shared.root, ontology_shape(), "second")).unwrap();
    let read = |run: &str, file: &str| std::fs::read(shared.root.join(run).join(file)).unwrap();
    let csv = read("first", "reports/sweep.csv") == read("second", "reports/sweep.csv");
    let corr = read("first", "correlations.csv") == read("second", "correlations.csv");
    verdict(
        "determinism",
        csv && corr && second.rows == shared.table.rows,
        format!("sweep CSV identical: {csv}, correlation CSV identical: {corr}"),
    );
}
