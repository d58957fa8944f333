//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Expected values come from independent oracles in this file or in
//! `readflow::oracle`, never from the code paths under test.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use readflow::cli::{accuracy, optimize, RunConfig};
use readflow::cluster::{balanced_cluster, cluster_then_reorder, ClusterParams, OutputClustering};
use readflow::error_model::{
    ber_from_ter, inject_cycle_errors, output_error_probability, ter_from_stats, BitProfile, OperatingPoint,
    ProfileTable, TimingErrorModel,
};
use readflow::forward::{forward_pass, simulate_layer};
use readflow::oracle::{
    balanced_partitions, brute_force_clustering, brute_force_sequence, partition_sd, sequence_flips,
};
use readflow::plan::{LayerPlan, PlanEntry, PlanMode};
use readflow::reorder::{direct_reorder, sort_input_channels, ChannelSequence, SortCriteria};
use readflow::sim::{simulate_tile, PsumTrace};
use readflow::synth::{random_acts, random_bundle, random_tensor, toy_classifier, BundleParams, WeightParams};
use readflow::tensor::{example_matrix, Activation, ActivationBatch, ArrayConfig, QuantizedTensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// `out[n][k] = sum_c a[n][c] * w[c][k]` in i64.
fn matmul(w: &QuantizedTensor, a: &ActivationBatch) -> Vec<i64> {
    let mut out = vec![0i64; a.samples() * w.cols()];
    for n in 0..a.samples() {
        for c in 0..w.rows() {
            let x = a.sample(n)[c] as i64;
            for k in 0..w.cols() {
                out[n * w.cols() + k] += x * w.get(c, k) as i64;
            }
        }
    }
    out
}

fn requant(v: i64, act: Activation, shift: u32) -> u8 {
    let v = if act == Activation::Relu { v.max(0) } else { v };
    (v >> shift).clamp(0, 255) as u8
}

fn random_plan(rng: &mut ChaCha8Rng, layer: usize, rows: usize, cols: usize, cap: usize) -> LayerPlan {
    let mut channels: Vec<usize> = (0..cols).collect();
    channels.shuffle(rng);
    let entries = channels
        .chunks(cap)
        .map(|members| {
            let mut seq: Vec<usize> = (0..rows).collect();
            seq.shuffle(rng);
            PlanEntry::new(members.to_vec(), ChannelSequence::new(seq).unwrap())
        })
        .collect();
    LayerPlan::new(layer, rows, cols, cap, entries).unwrap()
}

fn c1_bit_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let weights = WeightParams::default();
    for t in 0..1000 {
        let rows = rng.gen_range(1..=48);
        let cols = rng.gen_range(1..=24);
        let cfg = ArrayConfig::new(rng.gen_range(1..=16), rng.gen_range(1..=8)).unwrap();
        let w = random_tensor(rows, cols, &weights, &mut rng).map_err(e)?;
        let acts = random_acts(rng.gen_range(1..=4), rows, 255, 0.2, &mut rng).map_err(e)?;
        let criteria = if rng.gen_bool(0.5) {
            SortCriteria::SignFirst
        } else {
            SortCriteria::MagFirst
        };
        let plan = match t % 3 {
            0 => direct_reorder(0, &w, &cfg, criteria).map_err(e)?,
            1 => cluster_then_reorder(0, &w, &cfg, criteria, &ClusterParams::default()).map_err(e)?,
            _ => random_plan(&mut rng, 0, rows, cols, cfg.array_cols),
        };
        let sim = simulate_layer(&w, &acts, None, &plan, &cfg, false).map_err(e)?;
        let expected = matmul(&w, &acts);
        check(!sim.overflowed, || format!("triple {t}: unexpected overflow"))?;
        check(
            sim.outputs.iter().map(|&v| v as i64).eq(expected.iter().copied()),
            || format!("triple {t}: planned outputs differ"),
        )?;
    }
    for b in 0..500 {
        let n_layers = rng.gen_range(2..=4);
        let dims: Vec<usize> = (0..=n_layers).map(|_| rng.gen_range(2..=40)).collect();
        let cfg = ArrayConfig::new(rng.gen_range(1..=16), rng.gen_range(1..=8)).unwrap();
        let params = BundleParams {
            dims,
            samples: 3,
            act_sparsity: 0.1,
            seed: rng.gen(),
            ..Default::default()
        };
        let (bundle, acts) = random_bundle(&params, &cfg).map_err(e)?;
        let plans: Vec<LayerPlan> = bundle
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = &l.weights;
                match rng.gen_range(0..3) {
                    0 => direct_reorder(i, w, &cfg, SortCriteria::SignFirst).unwrap(),
                    1 => cluster_then_reorder(i, w, &cfg, SortCriteria::SignFirst, &ClusterParams::default()).unwrap(),
                    _ => random_plan(&mut rng, i, w.rows(), w.cols(), cfg.array_cols),
                }
            })
            .collect();
        let planned = forward_pass(&bundle, &acts, &cfg, Some(&plans), None, false).map_err(e)?;
        let baseline = forward_pass(&bundle, &acts, &cfg, None, None, false).map_err(e)?;
        let mut input = acts.clone();
        for (i, layer) in bundle.layers().iter().enumerate() {
            let expected = matmul(&layer.weights, &input);
            let got = &planned.layers[i].outputs;
            check(
                got.iter().map(|&v| v as i64).eq(expected.iter().copied()) && *got == baseline.layers[i].outputs,
                || format!("bundle {b} layer {i}: planned outputs differ"),
            )?;
            let next = expected
                .iter()
                .map(|&v| requant(v, layer.activation, layer.shift))
                .collect();
            input = ActivationBatch::new(input.samples(), layer.weights.cols(), next).map_err(e)?;
        }
    }
    Ok("1000 triples, 500 bundles, all outputs identical".into())
}

fn c2_single_column() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut explored = 0;
    for t in 0..500 {
        let c = rng.gen_range(1..=8);
        let params = WeightParams {
            positive_fraction: rng.gen_range(0.0..=1.0),
            sparsity: [0.0, 0.2][t % 2],
            max_magnitude: 127,
        };
        let tile = random_tensor(c, 1, &params, &mut rng).map_err(e)?;
        let acts = random_acts(1, c, 255, 0.1, &mut rng).map_err(e)?;
        let best = brute_force_sequence(&tile, &acts).map_err(e)?;
        explored += best.explored;
        for criteria in [SortCriteria::SignFirst, SortCriteria::MagFirst] {
            let seq = sort_input_channels(&tile, criteria);
            let flips = sequence_flips(&tile, &acts, seq.as_slice());
            check(flips <= 1 && flips == best.best_value, || {
                format!("tile {t} {criteria:?}: heuristic {flips}, oracle {}", best.best_value)
            })?;
        }
    }
    Ok(format!(
        "500 tiles, {explored} orders enumerated, heuristic optimal in every case"
    ))
}

fn c3_worked_example() -> Outcome {
    let w = example_matrix();
    let cfg = ArrayConfig::new(4, 2).unwrap();
    let ones = ActivationBatch::filled(1, 4, 1).unwrap();
    let plan = cluster_then_reorder(0, &w, &cfg, SortCriteria::SignFirst, &ClusterParams::default()).map_err(e)?;
    let members: Vec<Vec<usize>> = plan.entries().iter().map(|x| x.members.clone()).collect();
    check(members == vec![vec![0, 2], vec![1, 3]], || {
        format!("clustering {members:?}")
    })?;
    let w1 = &plan.entries()[0];
    check(w1.sequence.as_slice() == [2, 0, 3, 1], || {
        format!("W1 sequence {:?}", w1.sequence)
    })?;
    let sd = partition_sd(&w, &members);
    let sd_identity = partition_sd(&w, &[vec![0, 1], vec![2, 3]]);
    check(sd == 0 && sd_identity == 8, || {
        format!("SD {sd} vs identity {sd_identity}")
    })?;

    let col0 = w.select_columns(&[0]).unwrap();
    let base = simulate_tile(&col0, &ones, &cfg, &ChannelSequence::identity(4)).map_err(e)?;
    let reordered = simulate_tile(&col0, &ones, &cfg, &w1.sequence).map_err(e)?;
    let (fb, fr) = (base.traces[0].flip_count(), reordered.traces[0].flip_count());
    check(fb == 2 && fr == 0, || format!("column-0 flips {fb} -> {fr}"))?;
    check(base.traces[0].values == [0, 4, -6, 3, 1], || "baseline trace".into())?;
    check(reordered.traces[0].values == [0, 9, 13, 11, 1], || {
        "reordered trace".into()
    })?;

    let planned = simulate_layer(&w, &ones, None, &plan, &cfg, false).map_err(e)?;
    let expected = matmul(&w, &ones);
    check(planned.outputs.iter().map(|&v| v as i64).eq(expected), || {
        "outputs changed".into()
    })?;
    Ok("W1 [2,0,3,1]; {{0,2},{1,3}} SD 0 vs 8; flips 2 -> 0; outputs unchanged".into())
}

fn c4_never_worse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let skews = [0.05, 0.2, 0.5, 0.8, 0.95];
    let sparsities = [0.0, 0.3, 0.7];
    let mut improved = 0;
    for t in 0..1000 {
        let params = WeightParams {
            positive_fraction: skews[t % skews.len()],
            sparsity: sparsities[(t / skews.len()) % sparsities.len()],
            max_magnitude: 127,
        };
        let k = rng.gen_range(2..=32);
        let cap = rng.gen_range(1..=8.min(k));
        let w = random_tensor(rng.gen_range(1..=48), k, &params, &mut rng).map_err(e)?;
        let clustering = balanced_cluster(&w, cap, &ClusterParams::default()).map_err(e)?;
        let clusters = clustering.clusters().to_vec();
        OutputClustering::new(clusters.clone(), k, cap).map_err(|x| format!("matrix {t}: {x}"))?;
        let got = partition_sd(&w, &clusters);
        let blocks: Vec<Vec<usize>> = (0..k).collect::<Vec<_>>().chunks(cap).map(|c| c.to_vec()).collect();
        let identity = partition_sd(&w, &blocks);
        check(got <= identity, || format!("matrix {t}: {got} > identity {identity}"))?;
        improved += usize::from(got < identity);
    }
    let (mut gap, mut optimal, n) = (0u64, 0, 300);
    for _ in 0..n {
        let k = rng.gen_range(2..=8);
        let params = WeightParams {
            positive_fraction: *skews.choose(&mut rng).unwrap(),
            ..Default::default()
        };
        let w = random_tensor(rng.gen_range(1..=32), k, &params, &mut rng).map_err(e)?;
        let got = partition_sd(
            &w,
            balanced_cluster(&w, 2, &ClusterParams::default())
                .map_err(e)?
                .clusters(),
        );
        let best = brute_force_clustering(&w, 2).map_err(e)?;
        check(balanced_partitions(k, 2).len() as u64 == best.explored, || {
            "partition count".into()
        })?;
        gap += got - best.best_value;
        optimal += usize::from(got == best.best_value);
    }
    Ok(format!(
        "1000 matrices never worse ({improved} strictly better); K<=8, A_c=2: mean gap {:.3} SD, optimal in {optimal}/{n}",
        gap as f64 / n as f64
    ))
}

fn c5_ensemble_ordering() -> Outcome {
    let cfg = ArrayConfig::new(16, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut base, mut direct, mut cluster) = (0.0, 0.0, 0.0);
    let n = 200;
    for _ in 0..n {
        let w = random_tensor(64, 16, &WeightParams::default(), &mut rng).map_err(e)?;
        let acts = random_acts(16, 64, 255, 0.0, &mut rng).map_err(e)?;
        let rate = |p: &LayerPlan| simulate_layer(&w, &acts, None, p, &cfg, false).map(|s| s.stats.flip_rate);
        base += rate(&LayerPlan::identity(0, 64, 16, 4).map_err(e)?).map_err(e)?;
        direct += rate(&direct_reorder(0, &w, &cfg, SortCriteria::SignFirst).map_err(e)?).map_err(e)?;
        let plan = cluster_then_reorder(0, &w, &cfg, SortCriteria::SignFirst, &ClusterParams::default()).map_err(e)?;
        cluster += rate(&plan).map_err(e)?;
    }
    let (b, d, c) = (base / n as f64, direct / n as f64, cluster / n as f64);
    let detail = format!("mean flip rate baseline {b:.4}, direct {d:.4}, cluster {c:.4}");
    check(c <= d && d < b && c < b, || detail.clone())?;
    Ok(detail)
}

/// 64x16 layer traces on `samples` random inputs under `plan`.
fn layer_traces(w: &QuantizedTensor, acts: &ActivationBatch, plan: &LayerPlan, cfg: &ArrayConfig) -> Vec<PsumTrace> {
    simulate_layer(w, acts, None, plan, cfg, true)
        .unwrap()
        .traces
        .into_iter()
        .map(|t| t.trace)
        .collect()
}

fn c6_eq1_fidelity() -> Outcome {
    let (ter, n, trials) = (1e-3, 100, 1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failed = 0u64;
    for _ in 0..trials {
        let mut any = false;
        for _ in 0..n {
            any |= rng.gen::<f64>() < ter;
        }
        failed += u64::from(any);
    }
    let mc = failed as f64 / trials as f64;
    let analytic = ber_from_ter(ter, n);
    check((mc - analytic).abs() <= 1e-3, || {
        format!("Monte-Carlo {mc} vs {analytic}")
    })?;

    let cfg = ArrayConfig::default();
    let w = random_tensor(64, 16, &WeightParams::default(), &mut rng).map_err(e)?;
    let acts = random_acts(256, 64, 255, 0.0, &mut rng).map_err(e)?;
    let plan = LayerPlan::identity(0, 64, 16, 4).map_err(e)?;
    let traces = layer_traces(&w, &acts, &plan, &cfg);
    let outputs = traces.len() as f64;
    let stats = readflow::sim::SignFlipStats::from_traces(&traces);

    // Uniform cycle probability: the layer TER chain is exact.
    let flat = TimingErrorModel::with_profile(2e-3, 2e-3, BitProfile::MsbGeometric, 61).map_err(e)?;
    let inj = inject_cycle_errors(0, &traces, &flat);
    let p = ber_from_ter(ter_from_stats(&stats, &flat), 64);
    let sigma = (p * (1.0 - p) / outputs).sqrt();
    let emp = inj.empirical_output_error_rate();
    check((emp - p).abs() <= 3.0 * sigma, || {
        format!("uniform: empirical {emp} vs {p} (sigma {sigma})")
    })?;

    // Flip-dependent probability: per-output chain, Poisson-binomial bound.
    let skewed = TimingErrorModel::with_profile(2e-2, 1e-4, BitProfile::MsbGeometric, 62).map_err(e)?;
    let inj = inject_cycle_errors(0, &traces, &skewed);
    let probs: Vec<f64> = traces.iter().map(|t| output_error_probability(t, &skewed)).collect();
    let mean = probs.iter().sum::<f64>() / outputs;
    let sigma2 = (probs.iter().map(|p| p * (1.0 - p)).sum::<f64>()).sqrt() / outputs;
    let emp2 = inj.empirical_output_error_rate();
    let layer_chain = ber_from_ter(ter_from_stats(&stats, &skewed), 64);
    check((emp2 - mean).abs() <= 3.0 * sigma2, || {
        format!("flip-dependent: empirical {emp2} vs {mean} (sigma {sigma2})")
    })?;
    Ok(format!(
        "MC {mc:.5} vs {analytic:.5}; uniform {emp:.4} vs {p:.4} ±{:.4}; flip-dependent {emp2:.4} vs {mean:.4} ±{:.4} (layer-TER chain {layer_chain:.4})",
        3.0 * sigma,
        3.0 * sigma2
    ))
}

fn c7_ter_ratio() -> Outcome {
    let cfg = ArrayConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_tensor(64, 16, &WeightParams::default(), &mut rng).map_err(e)?;
    let acts = random_acts(128, 64, 255, 0.0, &mut rng).map_err(e)?;
    let base = layer_traces(&w, &acts, &LayerPlan::identity(0, 64, 16, 4).map_err(e)?, &cfg);
    let plan = cluster_then_reorder(0, &w, &cfg, SortCriteria::SignFirst, &ClusterParams::default()).map_err(e)?;
    let planned = layer_traces(&w, &acts, &plan, &cfg);
    let model = TimingErrorModel::with_profile(0.2, 0.0, BitProfile::MsbGeometric, 71).map_err(e)?;
    let ib = inject_cycle_errors(0, &base, &model);
    let ip = inject_cycle_errors(0, &planned, &model);
    let sb = readflow::sim::SignFlipStats::from_traces(&base);
    let sp = readflow::sim::SignFlipStats::from_traces(&planned);
    check(ib.cycles >= 100_000 && ip.cycles >= 100_000, || "too few cycles".into())?;
    check(sp.total_flips > 0, || "planned order has no flips".into())?;
    let flip_ratio = sb.flip_rate / sp.flip_rate;
    let ter_ratio = ib.empirical_ter() / ip.empirical_ter();
    // Errors only occur on flip cycles: events ~ Binomial(flips, p_flip).
    let rel_var = |flips: u64| (1.0 - model.p_flip) / (flips as f64 * model.p_flip);
    let sigma = flip_ratio * (rel_var(sb.total_flips) + rel_var(sp.total_flips)).sqrt();
    let detail = format!(
        "{} cycles each; TER ratio {ter_ratio:.3} vs flip ratio {flip_ratio:.3} (3 sigma {:.3})",
        ib.cycles,
        3.0 * sigma
    );
    check((ter_ratio - flip_ratio).abs() <= 3.0 * sigma, || detail.clone())?;
    Ok(detail)
}

fn c8_accuracy_retention() -> Outcome {
    let array = ArrayConfig::new(16, 4).unwrap();
    let params = BundleParams {
        dims: vec![48, 32, 16, 8],
        samples: 300,
        seed: 8,
        ..Default::default()
    };
    let (bundle, data) = toy_classifier(&params, 0.05, &array).map_err(e)?;
    let mut profiles = ProfileTable::default();
    profiles.profiles.insert(
        "stress".into(),
        OperatingPoint {
            p_flip: 5e-2,
            p_base: 5e-5,
        },
    );
    profiles.profiles.insert(
        "error_free".into(),
        OperatingPoint {
            p_flip: 0.0,
            p_base: 0.0,
        },
    );
    let cfg = RunConfig {
        array,
        profiles,
        error_model: TimingErrorModel::with_profile(0.0, 0.0, BitProfile::MsbGeometric, 8).map_err(e)?,
        ..Default::default()
    };
    let plan = optimize(&bundle, &cfg, PlanMode::Cluster, SortCriteria::SignFirst).map_err(e)?;
    let points: Vec<String> = cfg.profiles.profiles.keys().cloned().collect();
    let report = accuracy(&bundle, &data, &cfg, &plan, &points, 5).map_err(e)?;
    let mut lines = Vec::new();
    for p in &report.points {
        lines.push(format!("{} {:.3}/{:.3}", p.point, p.baseline.mean, p.planned.mean));
        check(p.planned.mean >= p.baseline.mean, || {
            format!("{}: planned {} < baseline {}", p.point, p.planned.mean, p.baseline.mean)
        })?;
        if p.p_flip == 0.0 && p.p_base == 0.0 {
            check(
                p.planned.mean == report.clean_accuracy && p.baseline.mean == report.clean_accuracy,
                || format!("error-free accuracy differs from clean {}", report.clean_accuracy),
            )?;
        }
    }
    Ok(format!("baseline/planned mean over 5 seeds: {}", lines.join(", ")))
}

fn readflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (gen_a, gen_b) = (root.join("a"), root.join("b"));
    for out in [&gen_a, &gen_b] {
        let o = readflow(&[
            "gen",
            "--out",
            &s(out),
            "--dims",
            "24,16,8",
            "--samples",
            "40",
            "--seed",
            "9",
            "--classifier",
        ]);
        check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    for f in [
        "bundle/manifest.json",
        "bundle/layer000.bin",
        "bundle/layer001.bin",
        "acts/batch000.bin",
        "acts/batch000.labels",
    ] {
        let (x, y) = (
            std::fs::read(gen_a.join(f)).map_err(e)?,
            std::fs::read(gen_b.join(f)).map_err(e)?,
        );
        check(x == y, || format!("gen output {f} differs"))?;
    }
    let bundle = s(&gen_a.join("bundle"));
    let acts = s(&gen_a.join("acts"));
    let plan = s(&root.join("plan.json"));
    let o = readflow(&["optimize", "--bundle", &bundle, "--out", &plan, "--seed", "3"]);
    check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["optimize", "--bundle", &bundle, "--seed", "3"],
        vec![
            "optimize",
            "--bundle",
            &bundle,
            "--mode",
            "direct",
            "--criteria",
            "mag_first",
        ],
        vec!["simulate", "--bundle", &bundle, "--acts", &acts, "--plan", &plan],
        vec![
            "simulate", "--bundle", &bundle, "--acts", &acts, "--plan", &plan, "--format", "csv",
        ],
        vec![
            "inject", "--bundle", &bundle, "--acts", &acts, "--plan", &plan, "--seed", "11",
        ],
        vec![
            "accuracy",
            "--bundle",
            &bundle,
            "--acts",
            &acts,
            "--plan",
            &plan,
            "--seed",
            "11",
            "--repeats",
            "3",
        ],
        vec![
            "accuracy", "--bundle", &bundle, "--acts", &acts, "--seed", "11", "--format", "csv",
        ],
        vec!["oracle", "--bundle", &bundle, "--acts", &acts],
    ];
    for args in &commands {
        let (x, y) = (readflow(args), readflow(args));
        check(x.status.success(), || {
            format!("{}: {}", args[0], String::from_utf8_lossy(&x.stderr))
        })?;
        check(!x.stdout.is_empty() && x.stdout == y.stdout, || {
            format!("{args:?}: reports differ")
        })?;
    }
    let t = |n: &str| s(&root.join(n));
    for name in ["t1.csv", "t2.csv"] {
        let o = readflow(&[
            "inject",
            "--bundle",
            &bundle,
            "--acts",
            &acts,
            "--plan",
            &plan,
            "--traces",
            &t(name),
        ]);
        check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    check(
        std::fs::read(t("t1.csv")).map_err(e)? == std::fs::read(t("t2.csv")).map_err(e)?,
        || "trace exports differ".into(),
    )?;
    Ok(format!(
        "gen, trace export and {} report commands byte-identical on rerun",
        commands.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1 bit-exactness", c1_bit_exactness),
        ("C2 single-column optimality", c2_single_column),
        ("C3 worked example", c3_worked_example),
        ("C4 never-worse clustering", c4_never_worse),
        ("C5 ensemble flip-rate ordering", c5_ensemble_ordering),
        ("C6 BER fidelity", c6_eq1_fidelity),
        ("C7 TER-ratio transfer", c7_ter_ratio),
        ("C8 toy accuracy retention", c8_accuracy_retention),
        ("C9 determinism", c9_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
