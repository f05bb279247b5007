//! Acceptance criteria, run in order in a single test so that runtime
//! budgets are measured without other tests competing for the CPU.
//!
//! Each criterion prints one `PASS`/`FAIL` line to stderr (bypassing the
//! test harness's output capture) and the test fails if any criterion does.

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use optinc::codec::{decode_pam4, encode_pam4, GradientWord, Quantizer, SystemConfig};
use optinc::dataset::{generate_dataset, AggregationSample, GenerationMode};
use optinc::harness::{preset, RunConfig};
use optinc::onn::{evaluate, Activation, OnnModel, OnnSpec};
use optinc::photonic::approx::{closest_orthogonal, fit_diagonal};
use optinc::photonic::cost::{approx_layer_mzis, full_layer_mzis, unitary_mzis};
use optinc::photonic::mesh::{decompose_unitary, haar_orthogonal, haar_unitary, reconstruct};
use optinc::photonic::mzi_cost;
use optinc::topo::{
    e2e_toy_training, overhead_report, ring_allreduce, Aggregation, CascadeTopology, E2eConfig,
};
use optinc::trainer::{finite_difference_check, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

/// Outcome of one criterion: a short detail string, or a failure reason.
type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, budget: Duration) -> std::result::Result<(), String> {
    check(elapsed <= budget, format!("took {elapsed:.2?}, budget {budget:?}"))
}

fn cfg(b: u32, n: u64, k: usize) -> SystemConfig {
    SystemConfig::new(b, n, k, Quantizer::Floor).unwrap()
}

fn c1_codec() -> Outcome {
    let start = Instant::now();
    for b in [4u32, 8, 16] {
        let c = cfg(b, 1, 1);
        for x in 0..(1u64 << b) {
            let frame = encode_pam4(GradientWord(x), &c).map_err(|e| e.to_string())?;
            // independent oracle: consecutive bit pairs of the binary expansion
            let bits = format!("{:0width$b}", x, width = b as usize);
            let expect: Vec<u8> = bits.as_bytes().chunks(2).map(|p| (p[0] - b'0') * 2 + (p[1] - b'0')).collect();
            check(frame.symbols() == expect.as_slice(), format!("B={b} x={x}: symbols {:?}", frame.symbols()))?;
            check(decode_pam4(&frame, &c).map_err(|e| e.to_string())? == GradientWord(x), format!("B={b} x={x}: round trip"))?;
        }
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(1))?;
    Ok(format!("all codes for B in {{4, 8, 16}} round-trip in {t:.2?}"))
}

const STRUCTURES: [(&str, &[usize], &[usize], f64); 4] = [
    ("table1-row1", &[4, 64, 128, 256, 128, 64, 4], &[1, 2, 3, 4, 5, 6], 0.393),
    ("table1-row2", &[4, 64, 128, 256, 512, 256, 128, 64, 4], &[2, 3, 4, 5, 6, 7], 0.409),
    ("table1-row3", &[4, 64, 128, 256, 512, 1024, 512, 256, 128, 64, 4], &[2, 3, 4, 5, 6, 7, 8, 9], 0.404),
    ("table1-row4", &[4, 64, 128, 256, 512, 256, 128, 64, 8], &[4, 5, 6], 0.493),
];

/// MZIs of a rectangular mesh counted column by column.
fn mesh_columns(m: u64) -> u64 {
    (0..m).map(|col| if col % 2 == 0 { m / 2 } else { (m - 1) / 2 }).sum()
}

/// Independent per-layer summation: output mesh, diagonal column on the
/// output ports, input mesh; or per square block a mesh and a diagonal.
fn layer_by_columns(rows: u64, cols: u64, approximated: bool) -> u64 {
    if approximated {
        let s = rows.min(cols);
        let blocks = rows.div_ceil(s) * cols.div_ceil(s);
        blocks * (mesh_columns(s) + s)
    } else {
        mesh_columns(rows) + rows + mesh_columns(cols)
    }
}

fn c2_mzi_counts() -> Outcome {
    check(unitary_mzis(4) == 6, "unitary m=4")?;
    check(mesh_columns(4) == 6, "column count m=4")?;
    check(full_layer_mzis(64, 4) == 2086, "full 64x4")?;
    check(layer_by_columns(64, 4, false) == 2086, "column count 64x4")?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in [4usize, 9, 64] {
        let mesh = decompose_unitary(&haar_unitary(m, &mut rng)).map_err(|e| e.to_string())?;
        check(mesh.mzis.len() as u64 == unitary_mzis(m as u64), format!("decomposed mesh of size {m}"))?;
    }
    let mut totals = Vec::new();
    for (name, dims, approx, _) in STRUCTURES {
        let approx: BTreeSet<usize> = approx.iter().copied().collect();
        let report = mzi_cost(dims, &approx);
        let mut full = 0;
        let mut deployed = 0;
        for (i, w) in dims.windows(2).enumerate() {
            let (rows, cols) = (w[1] as u64, w[0] as u64);
            check(full_layer_mzis(rows, cols) == layer_by_columns(rows, cols, false), format!("{name} layer {}", i + 1))?;
            check(approx_layer_mzis(rows, cols) == layer_by_columns(rows, cols, true), format!("{name} layer {} approx", i + 1))?;
            full += layer_by_columns(rows, cols, false);
            deployed += layer_by_columns(rows, cols, approx.contains(&(i + 1)));
        }
        check(report.total_full == full && report.total_deployed == deployed, format!("{name} totals"))?;
        totals.push(format!("{name} {full}/{deployed}"));
    }
    Ok(format!("6, 2086 and network totals (full/deployed) {}", totals.join(", ")))
}

fn c3_area_ratios() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    for (name, _, _, published) in STRUCTURES {
        let rc = preset(name).map_err(|e| e.to_string())?;
        let c = rc.system_config().map_err(|e| e.to_string())?;
        let spec = rc.onn_spec(&c).map_err(|e| e.to_string())?;
        let r = mzi_cost(&spec.layer_dims, &spec.approx_layers);
        let gap = (r.area_ratio - published) * 100.0;
        check(gap.abs() <= 0.5, format!("{name}: {:.2}% vs {:.1}%", r.area_ratio * 100.0, published * 100.0))?;
        parts.push(format!("{name} {:.2}% ({gap:+.2} pp)", r.area_ratio * 100.0));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(parts.join(", "))
}

fn c4_mesh_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut worst = Vec::new();
    for m in [4usize, 8, 16, 64] {
        let tol = if m == 64 { 1e-7 } else { 1e-8 };
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let u = haar_unitary(m, &mut rng);
            let mesh = decompose_unitary(&u).map_err(|e| e.to_string())?;
            let back = reconstruct(&mesh);
            let err = (&back - &u).iter().map(|z| z.norm()).fold(0.0, f64::max);
            max_err = max_err.max(err);
        }
        check(max_err <= tol, format!("m={m}: error {max_err:.2e} > {tol:.0e}"))?;
        worst.push(format!("m={m} {max_err:.1e}"));
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(30))?;
    Ok(format!("max errors {} in {t:.2?}", worst.join(", ")))
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

fn c5_procrustes() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_d: f64 = 0.0;
    for _ in 0..100 {
        let w = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let u = closest_orthogonal(&w).map_err(|e| e.to_string())?;
        let d = fit_diagonal(&w, &u).map_err(|e| e.to_string())?;
        for i in 0..4 {
            // grid search over the scale of row i
            let resid = |s: f64| (0..4).map(|j| (w[(i, j)] - s * u[(i, j)]).powi(2)).sum::<f64>();
            let mut best = (f64::INFINITY, 0.0);
            let mut s = -3.0;
            while s <= 3.0 {
                let r = resid(s);
                if r < best.0 {
                    best = (r, s);
                }
                s += 1e-4;
            }
            worst_d = worst_d.max((best.1 - d[i]).abs());
        }
        let own = frob(&w, &u);
        for _ in 0..1000 {
            let q = haar_orthogonal(4, &mut rng);
            check(own <= frob(&w, &q) + 1e-12, "a random orthogonal matrix beat the Procrustes solution")?;
        }
    }
    check(worst_d <= 1e-3, format!("diagonal fit differs from grid search by {worst_d:.2e}"))?;
    let t = start.elapsed();
    within(t, Duration::from_secs(60))?;
    Ok(format!("max |d - grid| {worst_d:.1e}; Procrustes never beaten; {t:.2?}"))
}

fn c6_gradients() -> Outcome {
    let start = Instant::now();
    let c = cfg(8, 4, 4);
    let ds = generate_dataset(&c, GenerationMode::Sampled { count: 64 }, 6, 1 << 20).map_err(|e| e.to_string())?;
    let samples: Vec<&AggregationSample> = ds.samples.iter().collect();
    let tc = TrainConfig::new(10, &c);
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..20 {
        let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Gelu };
        let hidden = rng.random_range(3..12);
        let approx: BTreeSet<usize> = if i % 3 == 0 { [1, 2].into_iter().collect() } else { BTreeSet::new() };
        let spec = OnnSpec::new(vec![4, hidden, hidden + 2, 4], act, approx, &c).map_err(|e| e.to_string())?;
        let model = OnnModel::new(spec, i).map_err(|e| e.to_string())?;
        let err = finite_difference_check(&model, &samples, &tc, &c, 100, i).map_err(|e| e.to_string())?;
        worst = worst.max(err);
    }
    check(worst <= 1e-5, format!("max relative error {worst:.2e}"))?;
    let t = start.elapsed();
    within(t, Duration::from_secs(60))?;
    Ok(format!("max relative error {worst:.1e} over 20 models in {t:.2?}"))
}

fn train_preset(rc: &RunConfig) -> std::result::Result<(OnnModel, f64, Duration), String> {
    let c = rc.system_config().map_err(|e| e.to_string())?;
    let spec = rc.onn_spec(&c).map_err(|e| e.to_string())?;
    let tc = rc.train_config(&c).map_err(|e| e.to_string())?;
    let ds = generate_dataset(&c, GenerationMode::Exhaustive, 0, 1 << 24).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (model, rep) = train(&spec, &ds, &tc).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let acc = evaluate(&model, &ds).map_err(|e| e.to_string())?.accuracy;
    check(acc == rep.final_accuracy, "report accuracy disagrees with evaluate")?;
    check(model.projection_residual().map_err(|e| e.to_string())? == 0.0, "final model is not projected")?;
    Ok((model, acc, t))
}

fn c7_toy() -> Outcome {
    let rc = preset("toy").map_err(|e| e.to_string())?;
    check(rc.onn.structure.as_deref() == Some("2-32-32-2"), "toy structure")?;
    let (_, acc, t) = train_preset(&rc)?;
    check(acc == 1.0, format!("accuracy {acc:.4}"))?;
    within(t, Duration::from_secs(300))?;
    Ok(format!("accuracy {acc:.4} on 49 samples in {t:.2?}"))
}

fn c8_row1() -> Outcome {
    let rc = preset("table1-row1").map_err(|e| e.to_string())?;
    let (_, acc, t) = train_preset(&rc)?;
    check(acc >= 0.995, format!("accuracy {acc:.6} after {t:.0?}"))?;
    within(t, Duration::from_secs(7200))?;
    Ok(format!("accuracy {acc:.6} on 28561 samples in {t:.0?}"))
}

fn c9_cascade() -> Outcome {
    let start = Instant::now();
    let c = cfg(4, 2, 2);
    let topo = CascadeTopology::oracle(c).map_err(|e| e.to_string())?;
    let (mut corrected_bad, mut uncorrected_bad) = (0u64, 0u64);
    for idx in 0..65536u64 {
        let w: Vec<u64> = (0..4).map(|k| (idx >> (4 * (3 - k))) & 15).collect();
        let words: Vec<GradientWord> = w.iter().map(|&x| GradientWord(x)).collect();
        let global = w.iter().sum::<u64>() / 4;
        let basic = ((w[0] + w[1]) / 2 + (w[2] + w[3]) / 2) / 2;
        let corr = topo.aggregate(&words, true).map_err(|e| e.to_string())?.0;
        let unc = topo.aggregate(&words, false).map_err(|e| e.to_string())?.0;
        check(unc == basic, format!("uncorrected path deviates from Q(Q/Q) on {w:?}"))?;
        corrected_bad += (corr != global) as u64;
        uncorrected_bad += (unc != global) as u64;
    }
    let hand = [2, 1, 1, 0].map(GradientWord);
    let (u, k) = (topo.aggregate(&hand, false).map_err(|e| e.to_string())?, topo.aggregate(&hand, true).map_err(|e| e.to_string())?);
    check(u == GradientWord(0) && k == GradientWord(1), format!("{{2,1,1,0}} gave {} / {}", u.0, k.0))?;
    check(corrected_bad == 0, format!("{corrected_bad} corrected mismatches"))?;
    check(uncorrected_bad >= 1, "uncorrected path never mismatched")?;
    let t = start.elapsed();
    within(t, Duration::from_secs(10))?;
    Ok(format!("corrected 0/65536 mismatches, uncorrected {uncorrected_bad}/65536; {{2,1,1,0}} -> 0 vs 1; {t:.2?}"))
}

fn c10_ring() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in [2usize, 4, 8, 16] {
        let vectors: Vec<Vec<f64>> = (0..n).map(|_| (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let out = ring_allreduce(&vectors).map_err(|e| e.to_string())?;
        check(out.rounds == 2 * (n - 1), format!("N={n}: {} rounds", out.rounds))?;
        for j in 0..1000 {
            let mean = vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            check(out.vectors.iter().all(|v| (v[j] - mean).abs() <= 1e-12), format!("N={n}: element {j}"))?;
        }
        let o = overhead_report(n as u64).map_err(|e| e.to_string())?;
        check(o.ring_rounds == 2 * (n as u64 - 1) && o.optinc_rounds == 1, format!("N={n}: overhead rounds"))?;
        check((o.relative_overhead - (n as f64 - 2.0) / n as f64).abs() < 1e-15, format!("N={n}: overhead"))?;
    }
    let t = start.elapsed();
    within(t, Duration::from_secs(1))?;
    Ok(format!("rounds 2, 6, 14, 30; means to 1e-12; overhead (N-2)/N; {t:.2?}"))
}

fn c11_e2e() -> Outcome {
    let start = Instant::now();
    let ecfg = E2eConfig { bit_width: 8, ..E2eConfig::default() };
    let exact = e2e_toy_training(&ecfg, &Aggregation::ExactMean).map_err(|e| e.to_string())?;
    let ring = e2e_toy_training(&ecfg, &Aggregation::Ring).map_err(|e| e.to_string())?;
    let optinc = e2e_toy_training(&ecfg, &Aggregation::OptincOracle).map_err(|e| e.to_string())?;
    check(ring.points == exact.points && ring.final_params == exact.final_params, "ring trajectory differs from exact mean")?;
    let gap = (optinc.final_accuracy() - exact.final_accuracy()) * 100.0;
    check(gap.abs() <= 2.0, format!("optinc {:.4} vs exact {:.4}", optinc.final_accuracy(), exact.final_accuracy()))?;
    let t = start.elapsed();
    within(t, Duration::from_secs(600))?;
    Ok(format!(
        "exact {:.4}, optinc_oracle {:.4} ({gap:+.2} points), ring bit-identical; {t:.2?}",
        exact.final_accuracy(),
        optinc.final_accuracy()
    ))
}

fn run_cli(dir: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_optinc"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    check(status.success(), format!("`optinc {}` exited with {status}", args.join(" ")))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn c12_determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for run in &runs {
        let d = run.path();
        let ckpt = d.join("model.onn");
        let ckpt = ckpt.to_str().unwrap();
        let seq: Vec<Vec<&str>> = vec![
            vec!["gen-dataset", "--preset", "toy", "--seed", "3", "--csv"],
            vec!["gen-dataset", "--preset", "toy", "--seed", "3", "--cascade"],
            vec!["gen-dataset", "--B", "8", "--N", "4", "--K", "4", "--sampled", "500", "--seed", "3"],
            vec!["train", "--preset", "toy", "--seed", "3", "--epochs", "300"],
            vec!["eval", "--preset", "toy", "--checkpoint", ckpt],
            vec!["cost", "--preset", "table1-row2"],
            vec!["decompose", "--preset", "toy", "--checkpoint", ckpt],
            vec!["cascade-sim", "--N", "2", "--B", "4", "--oracle", "--exhaustive"],
            vec!["rounds", "--N", "2,4,8,16"],
            vec!["e2e", "--agg", "exact_mean,ring,optinc_oracle", "--steps", "50", "--seed", "3"],
        ];
        for args in seq {
            run_cli(d, &args)?;
        }
    }
    let (a, b) = (snapshot(runs[0].path()), snapshot(runs[1].path()));
    check(a.len() >= 10, format!("only {} artifacts written", a.len()))?;
    check(a.iter().map(|f| &f.0).eq(b.iter().map(|f| &f.0)), "runs wrote different file sets")?;
    for (x, y) in a.iter().zip(&b) {
        check(x.1 == y.1, format!("{} differs between runs", x.0))?;
    }
    Ok(format!("{} artifacts from 10 commands byte-identical across two runs", a.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("codec exhaustiveness", c1_codec),
        ("MZI count formulas", c2_mzi_counts),
        ("area ratios", c3_area_ratios),
        ("mesh round trip", c4_mesh_roundtrip),
        ("Procrustes and diagonal fit", c5_procrustes),
        ("gradient correctness", c6_gradients),
        ("toy exact learning", c7_toy),
        ("row-1 full-scale training", c8_row1),
        ("cascade correctness", c9_cascade),
        ("ring baseline", c10_ring),
        ("end-to-end toy training", c11_e2e),
        ("determinism", c12_determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            report(&format!("criterion {n:>2} SKIP {name} (ACCEPTANCE_ONLY)"));
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => report(&format!("criterion {n:>2} PASS {name}: {detail}")),
            Err(why) => {
                report(&format!("criterion {n:>2} FAIL {name}: {why}"));
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
