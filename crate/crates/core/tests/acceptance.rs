//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vortexkit::criteria::{
    decompose, ivd_field_vector, quadform_ab, s_from_gradient, Criterion, CriterionFields, QuadForm, SVector,
    OMEGA_THRESHOLD,
};
use vortexkit::dataset::{extract_cls, extract_seg, group_folds, normalize, split_random, SampleSet};
use vortexkit::flowgrid::{decode_fgrd, encode_fgrd, load_fgrd, save_fgrd, FlowGrid, FlowParams};
use vortexkit::nn::{init_uniform, train, LossKind, Matrix, Mlp, TrainConfig, TrainReport};
use vortexkit::numerics::{gradient_field, nondimensionalize, transport_residual_field, vorticity_3d, vorticity_field};
use vortexkit::synth::{generate, FlowKind, GenSpec, Vortex};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: &str, title: &str, limit_s: f64, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(detail) if secs >= limit_s => Err(format!("{detail}; runtime {secs:.2} s exceeds {limit_s} s")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            self.failures += 1;
        }
        println!("[{tag}] {id} {title} ({secs:.2} s, limit {limit_s} s): {detail}");
    }
}

// ---------------------------------------------------------------------------
// AC1

/// `trace(A^T A)` and `trace(B^T B)` straight from the nine entries.
fn direct_ab(s: &[f64; 9]) -> (f64, f64) {
    let g = |r: usize, c: usize| s[3 * r + c];
    let (mut a, mut b) = (0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            a += (0.5 * (g(r, c) + g(c, r))).powi(2);
            b += (0.5 * (g(r, c) - g(c, r))).powi(2);
        }
    }
    (a, b)
}

fn ac1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let mut s = [0.0; 9];
        s.iter_mut().for_each(|v| *v = rng.gen_range(-10.0..10.0));
        let (qa, qb) = quadform_ab(&SVector(s), QuadForm::Corrected);
        let (da, db) = direct_ab(&s);
        worst = worst.max((qa - da).abs() / da.abs().max(f64::MIN_POSITIVE));
        worst = worst.max((qb - db).abs() / db.abs().max(f64::MIN_POSITIVE));
    }
    ensure(worst < 1e-12, || format!("corrected max rel err {worst:e}"))?;
    // solid-body rotation with unit rate: du/dy = -1, dv/dx = 1
    let solid = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let (_, half_b) = quadform_ab(&SVector(solid), QuadForm::HalfWeight);
    let (_, direct_b) = direct_ab(&solid);
    ensure(half_b == 1.0 && direct_b == 2.0, || format!("solid body: half-weight b = {half_b}, direct b = {direct_b}"))?;
    Ok(format!(
        "10^4 random s: max rel err {worst:.1e} < 1e-12; solid body half-weight b = {half_b}, direct b = {direct_b}"
    ))
}

// ---------------------------------------------------------------------------
// AC2

fn taylor_green(n: usize, nu: f64, dt: f64, timesteps: usize) -> FlowGrid {
    let mut spec = GenSpec::new(FlowKind::TaylorGreen2d, [n, n, 3]);
    spec.nu = nu;
    spec.dt = dt;
    spec.timesteps = timesteps;
    generate(&spec).unwrap().grid
}

fn ac2() -> Check {
    let nu = 0.1;
    let vort_err = |n: usize| {
        let g = taylor_green(n, nu, 0.1, 3);
        let mut e: f64 = 0.0;
        for t in 0..3 {
            let decay = (-2.0 * nu * 0.1 * t as f64).exp();
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    let exact = 2.0 * g.x()[i].cos() * g.y()[j].cos() * decay;
                    e = e.max((vorticity_3d(&g, t, [i, j, 1]).unwrap()[2] - exact).abs());
                }
            }
        }
        e
    };
    let vr = vort_err(33) / vort_err(65);
    ensure((3.5..=4.5).contains(&vr), || format!("vorticity ratio {vr:.3} outside [3.5, 4.5]"))?;

    let params = FlowParams::new(1.0, 1.0, 1.0, nu).unwrap();
    let residual = |n: usize| {
        // dt halves with h; both grids are probed at physical time 0.2
        let dt = 0.1 * 32.0 / (n - 1) as f64;
        let level = (0.2 / dt).round() as usize;
        let g = nondimensionalize(&taylor_green(n, nu, dt, 2 * level + 1), &params).unwrap();
        let field = transport_residual_field(&g, params.reynolds(), level).unwrap();
        field.valid_values().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let tr = residual(33) / residual(65);
    ensure((3.0..=5.0).contains(&tr), || format!("transport residual ratio {tr:.3} outside [3.0, 5.0]"))?;
    Ok(format!("vorticity error ratio {vr:.3} in [3.5, 4.5]; transport residual ratio {tr:.3} in [3.0, 5.0]"))
}

// ---------------------------------------------------------------------------
// AC3

/// Pre-activations of every hidden layer, computed independently of the crate.
fn hidden_preactivations(model: &Mlp, x: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    let mut act: Vec<Vec<f64>> = (0..x.rows).map(|r| x.row(r).to_vec()).collect();
    let layers = model.layers();
    for layer in &layers[..layers.len() - 1] {
        act = act
            .iter()
            .map(|a| {
                (0..layer.outputs)
                    .map(|o| {
                        let z = layer.bias[o]
                            + (0..layer.inputs).map(|c| layer.weights[o * layer.inputs + c] * a[c]).sum::<f64>();
                        out.push(z);
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect();
    }
    out
}

fn fd_rel_error(model: &Mlp, x: &Matrix, y: &[usize], loss: LossKind) -> f64 {
    let trace = model.forward_trace(x).unwrap();
    let (_, dl) = loss.eval(trace.logits(), y).unwrap();
    let analytic = model.backward(&trace, &dl).unwrap().flatten();
    let h = 1e-5;
    let base = model.params();
    let mut probe = model.clone();
    let mut p = base.clone();
    let mut numeric = Vec::with_capacity(base.len());
    for n in 0..base.len() {
        let mut eval = |delta: f64| {
            p[n] = base[n] + delta;
            probe.set_params(&p).unwrap();
            loss.eval(&probe.forward(x).unwrap(), y).unwrap().0
        };
        let d = (eval(h) - eval(-h)) / (2.0 * h);
        p[n] = base[n];
        numeric.push(d);
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}

fn ac3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut summary = Vec::new();
    for loss in [LossKind::Bce, LossKind::Ce] {
        let (mut done, mut redrawn) = (0, 0);
        let mut worst: f64 = 0.0;
        while done < 100 {
            let depth = rng.gen_range(1..=3);
            let mut widths = vec![rng.gen_range(1..=8)];
            for _ in 0..depth - 1 {
                widths.push(rng.gen_range(2..=8));
            }
            let classes = match loss {
                LossKind::Bce => 2,
                LossKind::Ce => rng.gen_range(2..=5),
            };
            widths.push(if loss == LossKind::Bce { rng.gen_range(1..=2) } else { classes });
            let model = init_uniform(&widths, rng.gen()).unwrap();
            let rows = rng.gen_range(1..=6);
            let x = Matrix::from_vec(rows, widths[0], (0..rows * widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let y: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
            // finite differences across a ReLU kink are meaningless
            if hidden_preactivations(&model, &x).iter().any(|z| z.abs() < 1e-3) {
                redrawn += 1;
                continue;
            }
            let err = fd_rel_error(&model, &x, &y, loss);
            ensure(err < 1e-6, || format!("{loss:?} config {done} (widths {widths:?}): rel err {err:e}"))?;
            worst = worst.max(err);
            done += 1;
        }
        summary.push(format!("{loss:?}: 100 configs, max rel err {worst:.1e} ({redrawn} redrawn near ReLU kinks)"));
    }
    Ok(summary.join("; "))
}

// ---------------------------------------------------------------------------
// AC4

fn dyadic_grid(seed: u64, n: usize) -> FlowGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
    let len = n * n * n;
    let mut comp = || (0..len).map(|_| rng.gen_range(-256i32..=256) as f64 / 64.0).collect::<Vec<_>>();
    let (u, v, w) = (comp(), comp(), comp());
    FlowGrid::new(axis.clone(), axis.clone(), axis, 1, 0.1, u, v, w).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn ac4() -> Check {
    // Galilean shift
    for (seed, shift) in [(1, [3.0, -5.0, 7.0]), (2, [0.5, -0.25, 1.75])] {
        let g = dyadic_grid(seed, 7);
        let h = g.shifted(shift);
        let (ga, gb) = (gradient_field(&g, 0).unwrap(), gradient_field(&h, 0).unwrap());
        for (a, b) in ga.tensors().iter().zip(gb.tensors()) {
            if let (Some(a), Some(b)) = (a, b) {
                ensure(bits(&s_from_gradient(a).0) == bits(&s_from_gradient(b).0), || "s changed under shift".into())?;
                let (pa, pb) = (decompose(a), decompose(b));
                ensure(pa.a.to_bits() == pb.a.to_bits() && pa.b.to_bits() == pb.b.to_bits(), || {
                    "a/b changed under shift".into()
                })?;
            }
        }
        let (fa, fb) = (CriterionFields::from_gradients(&ga), CriterionFields::from_gradients(&gb));
        ensure(bits(fa.q.values()) == bits(fb.q.values()), || "Q changed under shift".into())?;
        ensure(bits(fa.omega.values()) == bits(fb.omega.values()), || "Omega changed under shift".into())?;
    }

    // IVD under a uniform vorticity offset from added solid-body rotation
    let mut spec = GenSpec::new(FlowKind::LambOseenStreet, [41, 41, 3]);
    spec.extent = Some([[-2.0, 2.0], [-2.0, 2.0], [0.0, 1.0]]);
    spec.vortices = vec![Vortex { center: [0.1, -0.2], circulation: 1.5, core_radius: 0.5, advection: [0.0, 0.0] }];
    let vortex = generate(&spec).unwrap().grid;
    let omega0 = 0.75;
    let add = |a: &[f64], f: &dyn Fn(usize) -> f64| a.iter().enumerate().map(|(n, v)| v + f(n)).collect::<Vec<_>>();
    let d = vortex.dims();
    let xy = |n: usize| {
        let (i, j, _) = d.unravel(n);
        (vortex.x()[i], vortex.y()[j])
    };
    let rotated = FlowGrid::new(
        vortex.x().to_vec(),
        vortex.y().to_vec(),
        vortex.z().to_vec(),
        1,
        0.1,
        add(vortex.u_all(), &|n| -omega0 * xy(n).1),
        add(vortex.v_all(), &|n| omega0 * xy(n).0),
        vortex.w_all().to_vec(),
    )
    .unwrap();
    let a = ivd_field_vector(&vorticity_field(&vortex, 0).unwrap()).unwrap();
    let b = ivd_field_vector(&vorticity_field(&rotated, 0).unwrap()).unwrap();
    let ivd_diff = a.valid_values().zip(b.valid_values()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    ensure(ivd_diff <= 1e-12, || format!("IVD changed by {ivd_diff:e}"))?;

    // FGRD round trip
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let grids = [
        generate(&GenSpec::new(FlowKind::TaylorGreen3d, [9, 8, 7])).unwrap().grid,
        FlowGrid::new(
            vec![-1e300, 0.0, 5e-324],
            vec![1.0],
            vec![0.0, 1e-300],
            1,
            1e-9,
            vec![f64::MAX, -0.0, 5e-324, -f64::MAX, 1.0 / 3.0, PI],
            vec![0.0; 6],
            vec![-1e-310; 6],
        )
        .unwrap(),
    ];
    for (n, g) in grids.iter().enumerate() {
        let bytes = encode_fgrd(g).unwrap();
        let path = dir.path().join(format!("g{n}.fgrd"));
        save_fgrd(g, &path).unwrap();
        let back = load_fgrd(&path).unwrap();
        ensure(encode_fgrd(&back).unwrap() == bytes && encode_fgrd(&decode_fgrd(&bytes).unwrap()).unwrap() == bytes, || {
            format!("grid {n} did not round-trip")
        })?;
        for c in 0..3 {
            ensure(bits(g.component(c)) == bits(back.component(c)), || format!("grid {n} payload bits differ"))?;
        }
    }

    // determinism: two full reruns of both experiments
    let seg = |epochs| {
        let set = seg_samples([33, 33, 5]);
        run_segmentation(&set, epochs).1
    };
    let (s1, s2) = (seg(30), seg(30));
    ensure(s1.same_outcome(&s2), || "segmentation reruns differ".into())?;
    let set = cls_samples();
    let (c1, c2) = (run_classification(&set), run_classification(&set));
    ensure(c1.len() == c2.len() && c1.iter().zip(&c2).all(|(a, b)| a.same_outcome(b)), || {
        "classification reruns differ".into()
    })?;
    Ok(format!(
        "shift: s, a, b, Q, Omega bit-identical; IVD max change {ivd_diff:.1e}; FGRD bit-exact; reruns identical"
    ))
}

// ---------------------------------------------------------------------------
// AC5

fn seg_samples(dims: [usize; 3]) -> SampleSet {
    let g = generate(&GenSpec::new(FlowKind::LambOseenStreet, dims)).unwrap();
    let (_, labels) = Criterion::Omega.label(&g.grid, 0, OMEGA_THRESHOLD).unwrap();
    extract_seg(&g.grid, 0, &labels).unwrap()
}

fn run_segmentation(set: &SampleSet, epochs: usize) -> (Mlp, TrainReport) {
    let (tr, te) = split_random(set, 0.8, 0).unwrap();
    let (tr, te, _) = normalize(&tr, &te).unwrap();
    let mut cfg = TrainConfig::segmentation_3d();
    cfg.epochs = epochs;
    let mut model = init_uniform(&cfg.widths, cfg.seed).unwrap();
    let report = train(&mut model, &tr, &te, &cfg).unwrap();
    (model, report)
}

fn ac5() -> Check {
    let set = seg_samples([65, 65, 9]);
    let positives = set.labels().iter().filter(|&&l| l == 1).count();
    let (_, report) = run_segmentation(&set, 500);
    let m = &report.final_metrics;
    ensure(m.precision >= 0.95 && m.recall >= 0.95, || {
        format!("precision {:.4}, recall {:.4} (need >= 0.95)", m.precision, m.recall)
    })?;
    Ok(format!(
        "{} samples ({positives} vortex), 500 epochs: test precision {:.4}, recall {:.4}, accuracy {:.4}",
        set.len(),
        m.precision,
        m.recall,
        m.accuracy
    ))
}

// ---------------------------------------------------------------------------
// AC6 / AC7

const VISCOSITIES: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

fn cls_samples() -> SampleSet {
    let family: Vec<_> = VISCOSITIES
        .iter()
        .enumerate()
        .map(|(class, &nu)| {
            let mut spec = GenSpec::new(FlowKind::TaylorGreen3d, [34, 33, 40]);
            spec.extent = Some([[0.5, 2.5], [0.0, PI], [0.0, 1.0]]);
            spec.timesteps = 21;
            spec.dt = 0.1;
            spec.nu = nu;
            (generate(&spec).unwrap().grid, class)
        })
        .collect();
    extract_cls(&family).unwrap()
}

fn run_classification(set: &SampleSet) -> Vec<TrainReport> {
    group_folds(set, 5, 0.8, 0)
        .unwrap()
        .iter()
        .map(|fold| {
            let (tr, te, _) = normalize(&fold.train, &fold.test).unwrap();
            let cfg = TrainConfig::classification(set.width(), VISCOSITIES.len());
            let mut model = init_uniform(&cfg.widths, cfg.seed).unwrap();
            train(&mut model, &tr, &te, &cfg).unwrap()
        })
        .collect()
}

fn ac6(reports: &mut Vec<(TrainReport, f64)>) -> Check {
    let set = cls_samples();
    let folds = group_folds(&set, 5, 0.8, 0).unwrap();
    for fold in &folds {
        let start = Instant::now();
        let (tr, te, _) = normalize(&fold.train, &fold.test).unwrap();
        let cfg = TrainConfig::classification(set.width(), VISCOSITIES.len());
        let mut model = init_uniform(&cfg.widths, cfg.seed).unwrap();
        let report = train(&mut model, &tr, &te, &cfg).unwrap();
        reports.push((report, start.elapsed().as_secs_f64()));
    }
    let accs: Vec<f64> = reports.iter().map(|(r, _)| r.final_metrics.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    for (n, (r, _)) in reports.iter().enumerate() {
        let rows = r.final_metrics.confusion.rows();
        ensure(rows.len() == 4 && rows.iter().all(|row| row.len() == 4), || format!("fold {n} confusion is not 4x4"))?;
        let csv = r.final_metrics.confusion.to_csv();
        ensure(csv.lines().count() == 5 && csv.lines().all(|l| l.split(',').count() == 5), || {
            format!("fold {n} confusion CSV is not 5x5 cells")
        })?;
    }
    ensure(reports.len() == 5, || format!("{} folds instead of 5", reports.len()))?;
    ensure(mean >= 0.95, || format!("mean accuracy {mean:.4} < 0.95 (folds {accs:?})"))?;
    Ok(format!(
        "{} series of {} values, 5 folds: accuracies {:?}, mean {mean:.4}; five 4x4 confusion matrices",
        set.len(),
        set.width(),
        accs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>()
    ))
}

fn ac7(reports: &[(TrainReport, f64)]) -> Check {
    ensure(reports.len() == 5, || "classification folds unavailable".into())?;
    let mut walls = Vec::new();
    for (n, (report, end_to_end)) in reports.iter().enumerate() {
        let json: serde_json::Value = serde_json::to_value(report).map_err(|e| e.to_string())?;
        let recorded = json["wall_clock_seconds"].as_f64().ok_or("report JSON lacks wall_clock_seconds")?;
        ensure(*end_to_end < 10.0, || format!("fold {n} took {end_to_end:.2} s"))?;
        walls.push(format!("{recorded:.2}"));
    }
    Ok(format!("per-fold training wall clock from report JSON (s): {walls:?}, each < 10 s end to end"))
}

fn main() -> ExitCode {
    // single worker so the runtime limits are measured single-threaded
    let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    let mut suite = Suite { failures: 0 };
    let mut cls_reports = Vec::new();
    suite.run("AC1", "quadratic-form consistency", 1.0, ac1);
    suite.run("AC2", "finite-difference convergence", 10.0, ac2);
    suite.run("AC3", "gradient checks", 30.0, ac3);
    suite.run("AC4", "invariance and determinism", f64::INFINITY, ac4);
    suite.run("AC5", "segmentation desk experiment", 180.0, ac5);
    suite.run("AC6", "classification desk experiment", 120.0, || ac6(&mut cls_reports));
    suite.run("AC7", "classification cost per fold", f64::INFINITY, || ac7(&cls_reports));
    println!("{} of 7 criteria passed", 7 - suite.failures);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
