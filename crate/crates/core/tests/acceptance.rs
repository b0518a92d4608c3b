//! One line per acceptance criterion, `PASS` or `FAIL`, then a non-zero exit
//! if anything failed. Criteria 5 to 7 need the Cora graph in the four-file
//! layout under `$GRAPH_UNLEARN_DATA/cora`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use graph_unlearn::aggregator::{
    aggregator_loss_grad, contra_with_negatives, init_aggregator, init_attention, predict, train_aggregator, AggBatch, AggTrainConfig,
    Draws, Fusion,
};
use graph_unlearn::config::{DatasetSpec, ExperimentConfig};
use graph_unlearn::experiment::{cmd_noise_recovery, draw_delete, load_dataset, SingleModel};
use graph_unlearn::gcn::{train_submodel, TrainConfig};
use graph_unlearn::graph::{induce_train_shards, synth_graph, DeleteSet, Graph, Partition, SbmConfig, Splits};
use graph_unlearn::metrics::mean_std;
use graph_unlearn::numerics::{Dense, ParamStore, Sparse, Tape};
use graph_unlearn::oracles::{finite_diff, oracle_loss_sem, oracle_loss_struct, oracle_loss_time};
use graph_unlearn::partitioner::{init_partitioner, loss_sem, loss_struct, loss_time, psi_loss_grad, PartitionConfig};
use graph_unlearn::seed::SeedLineage;
use graph_unlearn::store::save_state;
use graph_unlearn::unlearn::{build_pipeline, full_retrain, unlearn, verify_exactness, PipelineConfig, PipelineState, Strategy};
use graph_unlearn::{GraphF64, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = std::result::Result<String, String>;

fn within(start: Instant, limit: Duration, detail: String) -> Verdict {
    let took = start.elapsed();
    if took > limit {
        Err(format!("{detail}; took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()))
    } else {
        Ok(format!("{detail}; {:.2} s", took.as_secs_f64()))
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, f: usize, c: usize) -> GraphF64 {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = Dense::from_fn(n, f, |_, _| rng.gen_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.gen_range(0..c)).collect();
    Graph::new(Sparse::adjacency(n, &edges).unwrap(), x, labels, c, Splits::default()).unwrap()
}

fn soft_assignment(rng: &mut ChaCha8Rng, n: usize, s: usize) -> Dense<f64> {
    let raw = Dense::from_fn(n, s, |_, _| rng.gen_range(0.01..1.0));
    Dense::from_fn(n, s, |i, j| raw[(i, j)] / raw.row(i).iter().sum::<f64>())
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = rng.gen_range(2..=20);
        let s = rng.gen_range(1..=5);
        let c = rng.gen_range(1..=4);
        let g = random_graph(&mut rng, n, 0.3, 3, c);
        let p = soft_assignment(&mut rng, n, s);
        let pairs = [
            (lift(loss_time(&p, &g))?, lift(oracle_loss_time(&p, &g))?),
            (lift(loss_struct(&p, &g))?, lift(oracle_loss_struct(&p, &g))?),
            (lift(loss_sem(&p, &g))?, lift(oracle_loss_sem(&p, &g))?),
        ];
        for (name, (fast, slow)) in ["time", "struct", "sem"].iter().zip(pairs) {
            let d = (fast - slow).abs();
            if !(d <= 1e-10) {
                return Err(format!("instance {k} (N={n}, S={s}): loss_{name} {fast} vs oracle {slow}"));
            }
            worst = worst.max(d);
        }
    }
    within(start, Duration::from_secs(5), format!("50 instances, max |delta| {worst:.1e}"))
}

#[allow(clippy::approx_constant)]
fn hand_values() -> Verdict {
    let start = Instant::now();
    let adjacency = Sparse::adjacency(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let g = Graph::new(adjacency, Dense::filled(4, 1, 1.0), vec![0, 1, 0, 1], 2, Splits::default()).unwrap();
    let p = Dense::one_hot(&[0, 0, 1, 1], 2);
    let got = [lift(loss_time(&p, &g))?, lift(loss_struct(&p, &g))?, lift(loss_sem(&p, &g))?];
    let want: [f64; 3] = [2.0, 0.666667, 0.693147];
    let ok = got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-6);
    let detail = format!("time {:.6}, struct {:.6}, sem {:.6}", got[0], got[1], got[2]);
    check(ok, detail.clone())?;
    within(start, Duration::from_secs(1), detail)
}

fn grad_mismatch(analytic: &BTreeMap<String, Dense<f64>>, numeric: &BTreeMap<String, Dense<f64>>) -> Option<String> {
    for (name, num) in numeric {
        let a = analytic.get(name)?;
        for (x, y) in a.as_slice().iter().zip(num.as_slice()) {
            if (x - y).abs() > (1e-4 * x.abs().max(y.abs())).max(1e-6) {
                return Some(format!("{name}: analytic {x} vs numeric {y}"));
            }
        }
    }
    None
}

fn store_from(values: &BTreeMap<String, Dense<f64>>) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (k, v) in values {
        p.insert(k.clone(), v.clone());
    }
    p
}

fn values_of(p: &ParamStore<f64>) -> BTreeMap<String, Dense<f64>> {
    p.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let g = random_graph(&mut rng, 10, 0.3, 4, 3);
        let cfg = PartitionConfig { n_shards: 3, hidden: 5, lambda_time: 0.5, lambda_sem: 0.5, gamma: 0.1, ..PartitionConfig::default() };
        let params = init_partitioner::<f64, _>(4, &cfg, &mut rng);
        let (_, analytic) = lift(psi_loss_grad(&g, &cfg, &params))?;
        let numeric = lift(finite_diff(|v| psi_loss_grad(&g, &cfg, &store_from(v)).unwrap().0, &values_of(&params), 1e-5))?;
        if let Some(m) = grad_mismatch(&analytic, &numeric) {
            return Err(format!("partition loss, seed {trial}: {m}"));
        }

        let g =
            synth_graph::<f64>(&SbmConfig { n: 10, n_classes: 3, blocks: 2, p_in: 0.7, p_out: 0.3, seed: trial, ..SbmConfig::default() })
                .unwrap();
        let part = Partition::new(2, (0..10).map(|u| u % 2).collect()).unwrap();
        let fusion = if trial % 2 == 0 { Fusion::Embedding } else { Fusion::Posterior };
        let block = |rng: &mut ChaCha8Rng| {
            let x: Dense<f64> = Dense::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
            match fusion {
                Fusion::Embedding => x,
                Fusion::Posterior => Dense::from_fn(10, 3, |i, j| x[(i, j)].exp() / x.row(i).iter().map(|v| v.exp()).sum::<f64>()),
            }
        };
        let batch = AggBatch {
            node_ids: (0..10).collect(),
            labels: g.labels().to_vec(),
            shard_ids: vec![0, 1],
            embeddings: vec![block(&mut rng), block(&mut rng)],
        };
        let cfg = AggTrainConfig { lambda_contra: 0.5, lambda_recon: 0.5, weight_decay: 0.1, fusion, ..AggTrainConfig::default() };
        let draws = lift(Draws::sample(&batch, &g, &part, &cfg, &mut rng))?;
        let mut params = match fusion {
            Fusion::Embedding => init_aggregator::<f64, _>(&[0, 1], 3, 3, &mut rng),
            Fusion::Posterior => init_attention::<f64, _>(&[0, 1], 3, &mut rng),
        };
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let v = params.get_mut(&name).unwrap();
            v.as_mut_slice().iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5));
        }
        let (_, analytic) = lift(aggregator_loss_grad(&params, &batch, &cfg, &draws))?;
        let numeric =
            lift(finite_diff(|v| aggregator_loss_grad(&store_from(v), &batch, &cfg, &draws).unwrap().0, &values_of(&params), 1e-6))?;
        if let Some(m) = grad_mismatch(&analytic, &numeric) {
            return Err(format!("aggregator loss ({fusion:?}), seed {trial}: {m}"));
        }
    }
    within(start, Duration::from_secs(60), "20 seeds, partition and aggregator objectives".into())
}

fn small_pipeline(n_shards: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.partition.n_shards = n_shards;
    cfg.partition.hidden = 16;
    cfg.train = TrainConfig { epochs: 40, hidden: 16, ..TrainConfig::default() };
    cfg
}

fn exact_removal() -> Verdict {
    let start = Instant::now();
    let g = synth_graph::<f64>(&SbmConfig { n: 200, seed: 11, ..SbmConfig::default() }).unwrap();
    let cfg = small_pipeline(4);
    let hold = ExperimentConfig { pipeline: cfg.clone(), ..ExperimentConfig::default() };
    let (mut state, _) = lift(build_pipeline(g, &cfg, 11, None))?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;

    let pick = |state: &PipelineState<f64>, shard: usize, k: usize| state.shards[shard].node_ids()[..k].to_vec();
    let script: Vec<Box<dyn Fn(&PipelineState<f64>) -> Vec<usize>>> = vec![
        Box::new(|s| pick(s, 0, 2)),
        Box::new(|s| [pick(s, 1, 1), pick(s, 2, 1), pick(s, 1, 2)[1..].to_vec()].concat()),
        Box::new(|s| pick(s, 0, 1)),
    ];
    let mut retrained = 0;
    for (call, request) in script.iter().enumerate() {
        let before = tmp.path().join(format!("before{call}"));
        let after = tmp.path().join(format!("after{call}"));
        lift(save_state(&state, &hold, &before))?;
        let delete = DeleteSet::new(request(&state));
        let (next, report) = lift(unlearn(&state, &delete, None))?;
        lift(save_state(&next, &hold, &after))?;
        let exact = lift(verify_exactness(&next, None))?;
        if !exact.is_exact() || exact.max_delta() != 0.0 {
            return Err(format!("call {call}: max parameter delta {}", exact.max_delta()));
        }
        for i in (0..4).filter(|i| !report.affected.contains(i)) {
            for ext in ["manifest", "bin"] {
                let name = format!("shard_{i:04}.{ext}");
                let a = std::fs::read(before.join(&name)).map_err(|e| e.to_string())?;
                let b = std::fs::read(after.join(&name)).map_err(|e| e.to_string())?;
                if a != b {
                    return Err(format!("call {call}: untouched shard {i} checkpoint changed"));
                }
            }
        }
        retrained += report.affected.len();
        state = next;
    }
    within(
        start,
        Duration::from_secs(120),
        format!("3 calls, {retrained} shard retrains, all deltas 0, untouched checkpoints byte-identical"),
    )
}

fn cora() -> std::result::Result<(GraphF64, PathBuf), String> {
    let root = std::env::var_os("GRAPH_UNLEARN_DATA")
        .ok_or("Cora unavailable: GRAPH_UNLEARN_DATA is not set (expects a directory holding cora/)")?;
    let path = PathBuf::from(root).join("cora");
    if !path.join("edges.tsv").exists() {
        return Err(format!("Cora unavailable: {} lacks edges.tsv", path.display()));
    }
    let spec = DatasetSpec::Dir { path: path.clone(), n_classes: Some(7) };
    Ok((lift(load_dataset(&spec, 0))?, path))
}

fn cora_pipeline() -> PipelineConfig {
    PipelineConfig::default()
}

fn efficiency_ordering() -> Verdict {
    let start = Instant::now();
    let (g, _) = cora()?;
    let cfg = cora_pipeline();
    let (state, _) = lift(build_pipeline(g.clone(), &cfg, 0, None))?;
    let delete = draw_delete(&g, &graph_unlearn::config::DeleteSpec::Fraction(0.005), 0, 0);
    let t = Instant::now();
    let (_, report) = lift(unlearn(&state, &delete, None))?;
    let unlearn_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    lift(full_retrain(&g, &delete, &cfg, 0, None))?;
    let retrain_secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "{} deleted, {} of 20 shards retrained, unlearn {unlearn_secs:.2} s vs full retrain {retrain_secs:.2} s ({:.2}x)",
        delete.len(),
        report.affected.len(),
        retrain_secs / unlearn_secs
    );
    check(unlearn_secs <= 0.5 * retrain_secs, detail.clone())?;
    within(start, Duration::from_secs(15 * 60), detail)
}

fn utility_ordering() -> Verdict {
    let start = Instant::now();
    let (g, _) = cora()?;
    let mut f1: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..5 {
        let single = lift(SingleModel::train(&g, &TrainConfig::default(), seed))?;
        f1.entry("retrain").or_default().push(lift(single.evaluate_test(&g))?);
        for strategy in [Strategy::Random, Strategy::Trained] {
            let cfg = PipelineConfig { strategy, ..cora_pipeline() };
            let (state, _) = lift(build_pipeline(g.clone(), &cfg, seed, None))?;
            f1.entry(strategy.name()).or_default().push(lift(state.evaluate_test())?);
        }
    }
    let mean = |k: &str| mean_std(&f1[k]).0;
    let (r, t, s) = (mean("retrain"), mean("trained"), mean("random"));
    let detail = format!("mean F1 retrain {r:.4}, trained {t:.4}, random {s:.4}");
    check(r > t && t > s && t >= 0.60, detail.clone())?;
    within(start, Duration::from_secs(30 * 60), detail)
}

fn noise_recovery() -> Verdict {
    let start = Instant::now();
    let (_, path) = cora()?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        dataset: DatasetSpec::Dir { path, n_classes: Some(7) },
        pipeline: cora_pipeline(),
        noise_nodes: 100,
        noise_edges_per_node: 10,
        repetitions: Some(5),
        out: tmp.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let (runs, _) = lift(cmd_noise_recovery(&cfg, None))?;
    let mean = |f: fn(&graph_unlearn::experiment::NoiseRecovery) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>()).0;
    let (clean, poisoned, unlearned) = (mean(|r| r.clean.f1), mean(|r| r.poisoned.f1), mean(|r| r.unlearned.f1));
    let detail = format!("mean F1 clean {clean:.4}, poisoned {poisoned:.4}, unlearned {unlearned:.4}");
    check(poisoned < unlearned && unlearned <= clean, detail.clone())?;
    within(start, Duration::from_secs(45 * 60), detail)
}

fn degenerate_cases() -> Verdict {
    let start = Instant::now();
    let g = synth_graph::<f64>(&SbmConfig { n: 120, seed: 5, ..SbmConfig::default() }).unwrap();

    let (one, _) = lift(build_pipeline(g.clone(), &small_pipeline(1), 5, None))?;
    let f1 = lift(one.evaluate_test())?;
    let p = Dense::one_hot(one.partition.assignment(), 1);
    let structure = lift(loss_struct(&p, &g))?;
    check(structure == 0.0, format!("S=1 loss_struct {structure}"))?;

    let (four, _) = lift(build_pipeline(g.clone(), &small_pipeline(4), 5, None))?;
    let (same, report) = lift(unlearn(&four, &DeleteSet::default(), None))?;
    let untouched = same.models == four.models && same.retrain_counters() == four.retrain_counters() && report.untouched == 4;
    check(untouched, "empty delete changed the sub-models".into())?;

    let assignment: Vec<usize> = (0..g.n_nodes()).map(|u| [0, 1, 3][u % 3]).collect();
    let part = lift(Partition::new(4, assignment))?;
    let shards = lift(induce_train_shards(&g, &part))?;
    let tcfg = TrainConfig { epochs: 20, hidden: 8, ..TrainConfig::default() };
    let models = shards
        .iter()
        .map(|s| train_submodel(s, g.n_classes(), &tcfg, SeedLineage::new(5, s.shard_id, 0)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let agg = lift(train_aggregator(&models, &shards, &g, &part, &AggTrainConfig { epochs: 5, ..AggTrainConfig::default() }))?;
    let pred = lift(predict(&models, &shards, &agg, &g, &g.splits().test))?;
    check(!models[2].is_trained() && pred.labels.len() == g.splits().test.len(), "empty shard not tolerated".into())?;

    let mut worst = 0.0f64;
    for tau in [0.1, 0.5, 1.0, 7.0] {
        let e = Dense::from_fn(6, 4, |_, j| if j == 1 { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let f = tape.constant(e.clone());
        let l = tape.constant(e);
        let negatives: Vec<usize> = (0..6).map(|u| (u + 1) % 6).collect();
        let v = lift(contra_with_negatives(&mut tape, f, l, tau, &negatives, false))?;
        let value = lift(tape.scalar(v))?;
        worst = worst.max((value - 3f64.ln()).abs());
    }
    check(worst <= 1e-9, format!("identical-embedding InfoNCE off ln 3 by {worst:e}"))?;
    within(
        start,
        Duration::from_secs(120),
        format!("S=1 F1 {f1:.3}, loss_struct 0; empty delete no-op; empty shard ok; InfoNCE ln 3 within {worst:.0e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("hand-value checks", hand_values),
        ("gradient suite", gradient_suite),
        ("exact removal", exact_removal),
        ("efficiency ordering", efficiency_ordering),
        ("utility ordering", utility_ordering),
        ("noise recovery", noise_recovery),
        ("degenerate cases", degenerate_cases),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
