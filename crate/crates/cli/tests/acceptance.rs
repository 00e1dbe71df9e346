//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! `cargo test -p colorfuse-cli --test acceptance` runs them all; a name
//! substring as argument runs a subset. Exits nonzero if anything fails.

// `ensure!(a < b)` must fail on NaN, so negated comparisons are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use colorfuse::colorspace::{lab_pixel_to_srgb, normalize_ab, normalize_l, srgb_pixel_to_lab, Planes};
use colorfuse::dataset::synthetic_examples;
use colorfuse::eval::{compare, evaluate_with, ground_truth, image_metrics, MetricReport};
use colorfuse::gradcheck::{gradient_check, Family, GradCheckConfig};
use colorfuse::loss::cross_entropy_loss;
use colorfuse::model::{parameter_report, ModelConfig, ModelGraph, TABLE_ROWS};
use colorfuse::tensor::Tensor;
use colorfuse::train::{TrainConfig, Trainer};
use colorfuse::weights::{save_weights, WeightStore};
use colorfuse_study::events::EventLog;
use colorfuse_study::{SourceSpec, StudyService, StudySpec, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(t: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let used = t.elapsed();
    ensure!(used < limit, "{what} took {:.1}s, limit {}s", used.as_secs_f64(), limit.as_secs());
    Ok(())
}

fn group(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

const TABLE_PARAMS: [(&str, usize); 14] = [
    ("Input Block", 9_536),
    ("Down Block Layer 1", 221_952),
    ("Down Block Layer 2", 1_116_416),
    ("Down Block Layer 3", 6_822_400),
    ("Down Block Layer 4", 13_114_368),
    ("Bridge Layer", 4_721_664),
    ("Global Layer", 34_215_168),
    ("Classification Layer", 167_323),
    ("Up Block Layer 1", 1_771_008),
    ("Up Block Layer 2", 574_336),
    ("Up Block Layer 3", 143_808),
    ("Up Block Layer 4", 45_280),
    ("Up Block Layer 5", 7_200),
    ("Conv Out Layer", 38),
];
const TABLE_TOTAL: usize = 62_930_497;

fn parameter_budget() -> Outcome {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_colorfuse"))
        .arg("inspect")
        .env_remove("COLORFUSE_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure!(out.status.success(), "inspect exited with {}", out.status);
    let text = String::from_utf8_lossy(&out.stdout);
    for (row, count) in TABLE_PARAMS {
        let line = text.lines().find(|l| l.starts_with(row)).ok_or(format!("no `{row}` row"))?;
        ensure!(line.trim_end().ends_with(&format!(" {}", group(count))), "`{row}` row reads `{line}`, expected {count}");
    }
    let total = text.lines().find(|l| l.starts_with("Total Parameters")).ok_or("no total line")?;
    ensure!(total.trim_end().ends_with(&group(TABLE_TOTAL)), "total reads `{total}`");

    let report = parameter_report(&ModelGraph::<f32>::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?);
    for (row, count) in TABLE_PARAMS {
        let got = report.row(row).map(|r| r.params);
        ensure!(got == Some(count), "{row}: {got:?} != {count}");
    }
    ensure!(report.total == TABLE_TOTAL, "total {} != {TABLE_TOTAL}", report.total);
    ensure!(elapsed < Duration::from_secs(1), "inspect took {:.2}s", elapsed.as_secs_f64());
    Ok(format!("14 rows and total {} exact; inspect ran in {:.2}s", group(TABLE_TOTAL), elapsed.as_secs_f64()))
}

fn shape_trace() -> Outcome {
    let expected: [(&str, &str); 15] = [
        ("Input Block", "64 x 128 x 128"),
        ("Input Pool", "64 x 64 x 64"),
        ("Down Block Layer 1", "64 x 64 x 64"),
        ("Down Block Layer 2", "128 x 32 x 32"),
        ("Down Block Layer 3", "256 x 16 x 16"),
        ("Down Block Layer 4", "512 x 8 x 8"),
        ("Bridge Layer", "512 x 8 x 8"),
        ("Global Layer", "512 x 1, 256 x 1"),
        ("Classification Layer", "137 x 1"),
        ("Up Block Layer 1", "256 x 16 x 16"),
        ("Up Block Layer 2", "128 x 32 x 32"),
        ("Up Block Layer 3", "64 x 64 x 64"),
        ("Up Block Layer 4", "32 x 128 x 128"),
        ("Up Block Layer 5", "16 x 256 x 256"),
        ("Conv Out Layer", "2 x 256 x 256"),
    ];
    let fmt = |shapes: &[Vec<usize>]| {
        shapes
            .iter()
            .map(|s| if s.len() == 1 { format!("{} x 1", s[0]) } else { s.iter().map(usize::to_string).collect::<Vec<_>>().join(" x ") })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let g = ModelGraph::<f32>::new(ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let x = Tensor::zeros(&[1, 3, 256, 256]);
    let out = g.infer(&x).map_err(|e| e.to_string())?;
    ensure!(out.trace.len() == expected.len(), "forward traced {} stages, expected {}", out.trace.len(), expected.len());
    for ((name, want), got) in expected.iter().zip(&out.trace) {
        ensure!(got.name == *name, "stage `{}` where `{name}` was expected", got.name);
        let got = fmt(&got.shapes);
        ensure!(got == *want, "{name}: {got} != {want}");
    }
    let from_config = colorfuse::model::shape_trace(g.config()).map_err(|e| e.to_string())?;
    ensure!(from_config == out.trace, "config-derived trace differs from the forward pass");
    ensure!(out.ab.shape() == [1, 2, 256, 256], "output tensor {:?}", out.ab.shape());
    Ok(format!("{} stages of a 256x256 forward pass match", TABLE_ROWS.len()))
}

fn gradient_verification() -> Outcome {
    let t = Instant::now();
    let cfg = GradCheckConfig::default();
    let report = gradient_check(&cfg).map_err(|e| e.to_string())?;
    within(t, Duration::from_secs(600), "gradient check")?;
    let n = report.samples.len();
    ensure!(n >= 200, "only {n} samples");
    let coverage = report.coverage();
    for f in Family::ALL {
        ensure!(coverage.get(&f).copied().unwrap_or(0) > 0, "no `{f}` samples");
    }
    ensure!(report.max_rel_error <= 1e-4, "max relative error {:.3e}", report.max_rel_error);
    ensure!(report.vanishing_ok(), "a bias feeding batch norm has a nonzero gradient");
    ensure!(report.passed(), "report marked failed");
    Ok(format!("{n} samples over {} families, max rel error {:.2e}", coverage.len(), report.max_rel_error))
}

fn color_round_trip() -> Outcome {
    let t = Instant::now();
    let level = |i: u32| ((i * 255 + 8) / 16) as u8;
    let mut worst = 0i32;
    for r in 0..17 {
        for g in 0..17 {
            for b in 0..17 {
                let px = [level(r), level(g), level(b)];
                let back = lab_pixel_to_srgb(srgb_pixel_to_lab(px));
                for c in 0..3 {
                    worst = worst.max((i32::from(back[c]) - i32::from(px[c])).abs());
                }
            }
        }
    }
    within(t, Duration::from_secs(10), "round trip")?;
    ensure!(worst <= 1, "a channel moved by {worst}");
    Ok(format!("4913 colors, max channel error {worst}"))
}

fn analytic_losses() -> Outcome {
    let k = 137;
    let uniform = Tensor::<f64>::full(&[3, k], 1.0 / k as f64);
    let ce = cross_entropy_loss(&uniform, &[0, 60, 136]).map_err(|e| e.to_string())?;
    ensure!((ce - (k as f64).ln()).abs() <= 1e-3, "uniform CE {ce}, ln 137 = {}", (k as f64).ln());

    let mut g = ModelGraph::<f32>::new(ModelConfig::reduced(), 3).map_err(|e| e.to_string())?;
    g.zero_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_vec(&[2, 3, 64, 64], (0..2 * 3 * 64 * 64).map(|_| rng.random::<f32>()).collect()).unwrap();
    let out = g.infer(&x).map_err(|e| e.to_string())?;
    ensure!(out.ab.data().iter().all(|&v| v == 0.5), "ab is not exactly 0.5 everywhere");
    let probs = out.probs.ok_or("no class probabilities")?;
    let first = probs.data()[0];
    ensure!(probs.data().iter().all(|&p| p == first), "class probabilities are not all equal");
    ensure!((f64::from(first) * k as f64 - 1.0).abs() < 1e-6, "probability {first} is not 1/137");
    Ok(format!("CE {ce:.6}; zero weights give ab = 0.5 and p = {first:e} for all {k} classes"))
}

/// Total loss at the first step and the lowest seen within `steps`.
fn overfit(preset: &str, steps: usize) -> Result<(f64, f64), String> {
    let data = synthetic_examples(16, 64, 137, 11);
    let cfg = TrainConfig::preset(preset).map_err(|e| e.to_string())?;
    let model = ModelConfig { fusion_enabled: cfg.fusion_enabled, ..ModelConfig::reduced() };
    let mut g = ModelGraph::<f32>::new(model, cfg.seed).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(&g, &cfg).map_err(|e| e.to_string())?;
    let first = trainer.step(&mut g, &data).map_err(|e| e.to_string())?.total;
    let mut best = first;
    for _ in 1..steps {
        best = best.min(trainer.step(&mut g, &data).map_err(|e| e.to_string())?.total);
    }
    Ok((first, best))
}

fn overfit_sanity() -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    for preset in ["proposed3", "proposed2_nofusion"] {
        let (first, best) = overfit(preset, 200)?;
        ensure!(best < 0.5 * first, "{preset}: best loss {best:.5} is not below half of {first:.5}");
        parts.push(format!("{preset} {first:.4} -> {best:.4}"));
    }
    within(t, Duration::from_secs(1800), "overfit runs")?;
    Ok(parts.join(", "))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut planes = |c: usize, scale: f64| {
        Planes::new(c, 4, 4, (0..c * 16).map(|_| scale * rng.random::<f64>()).collect::<Vec<_>>()).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pred = planes(2, 1.0);
        let gt = planes(2, 1.0);
        let l = planes(1, 100.0);
        let m = image_metrics(&pred, &gt, &l).map_err(|e| e.to_string())?;
        let (mut abs, mut sq, mut sq_lab) = (0.0, 0.0, 0.0);
        for i in 0..16 {
            let lab_of = |ab: &Planes| {
                let lab = [l.data[i], ab.data[i] * 255.0 - 128.0, ab.data[16 + i] * 255.0 - 128.0];
                let back = srgb_pixel_to_lab(lab_pixel_to_srgb(lab));
                [normalize_l(back[0]), normalize_ab(back[1]), normalize_ab(back[2])]
            };
            let (p, q) = (lab_of(&pred), lab_of(&gt));
            for c in 0..3 {
                sq_lab += (p[c] - q[c]).powi(2);
            }
            for c in 0..2 {
                let d = pred.data[c * 16 + i] - gt.data[c * 16 + i];
                abs += d.abs();
                sq += d * d;
            }
        }
        for (got, want) in [(m.mae, abs / 32.0), (m.mse_ab, sq / 32.0), (m.mse_lab, sq_lab / 48.0)] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure!(worst <= 1e-10, "metrics differ from the scalar loop by {worst:e}");

    let data = synthetic_examples(6, 32, 3, 4);
    let id = evaluate_with(&data, "identity", false, ground_truth).map_err(|e| e.to_string())?;
    ensure!(id.avg_mae == 0.0, "identity avg_mae = {}", id.avg_mae);

    let published = [
        MetricReport::summary("Zhang 2016", 0.05311835, 0.0, 0.0),
        MetricReport::summary("Zhang 2017", 0.04648737, 0.0, 0.0),
        MetricReport::summary("ColorNet", 0.04631426, 0.0, 0.0),
        MetricReport::summary("Proposed 3", 0.04376666, 0.0, 0.0),
        MetricReport::summary("Proposed 2 w/o Fusion", 0.04088821, 0.0, 0.0),
    ];
    let order: Vec<&str> = compare(&published).iter().map(|r| r.model.as_str()).collect();
    let want = ["Proposed 2 w/o Fusion", "Proposed 3", "ColorNet", "Zhang 2017", "Zhang 2016"];
    ensure!(order == want, "ranking {order:?}");
    Ok(format!("loop oracle max diff {worst:.1e}; identity MAE 0; ranking {}", order.join(" < ")))
}

fn weight_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = synthetic_examples(4, 64, 137, 5);
    let mut g = ModelGraph::<f32>::new(ModelConfig::reduced(), 8).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { batch_size: 4, ..TrainConfig::preset("proposed2").unwrap() };
    let mut trainer = Trainer::new(&g, &cfg).map_err(|e| e.to_string())?;
    for _ in 0..2 {
        trainer.step(&mut g, &data).map_err(|e| e.to_string())?;
    }
    let path = dir.path().join("w.unfw");
    save_weights(&g, &path).map_err(|e| e.to_string())?;
    let loaded: ModelGraph<f32> = WeightStore::read(&path).and_then(|s| s.build_graph(None)).map_err(|e| e.to_string())?;
    let (a, b) = (g.params(), loaded.params());
    ensure!(a.len() == b.len(), "{} tensors saved, {} loaded", a.len(), b.len());
    let mut stats = 0;
    for (p, q) in a.iter().zip(&b) {
        ensure!(p.name == q.name && p.value.shape() == q.value.shape(), "{} / {} differ", p.name, q.name);
        let same = p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same, "{} changed in the round trip", p.name);
        stats += usize::from(!p.is_trainable());
    }
    let again = dir.path().join("again.unfw");
    save_weights(&loaded, &again).map_err(|e| e.to_string())?;
    let bytes = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    ensure!(bytes(&path)? == bytes(&again)?, "re-saved file differs");
    Ok(format!("{} tensors ({stats} running statistics) bit-identical", a.len()))
}

const TRUTH: &str = "label-truth";
const BROKEN: &str = "label-corrupted";

fn pattern(i: u32, x: u32, y: u32) -> [u8; 3] {
    [(x * 29 + i * 13) as u8, (y * 19 + i * 7) as u8, ((x + y) * 11 + i * 37) as u8]
}

/// Ground-truth images and channel-rotated twins; returns the spec and the
/// decoded truth pixels.
fn study_fixture(root: &Path, n: u32) -> (StudySpec, Vec<Vec<u8>>) {
    let truth = root.join("truth_images");
    let broken = root.join("corrupted_images");
    std::fs::create_dir_all(&truth).unwrap();
    std::fs::create_dir_all(&broken).unwrap();
    let mut pixels = Vec::new();
    for i in 0..n {
        let img = image::RgbImage::from_fn(8, 8, |x, y| image::Rgb(pattern(i, x, y)));
        img.save(truth.join(format!("hidden_truth_{i}.png"))).unwrap();
        pixels.push(img.into_raw());
        let bad = image::RgbImage::from_fn(8, 8, |x, y| {
            let [r, g, b] = pattern(i, x, y);
            image::Rgb([b, r, g])
        });
        bad.save(broken.join(format!("hidden_broken_{i}.png"))).unwrap();
    }
    let sources = vec![
        SourceSpec { label: TRUTH.into(), dir: truth },
        SourceSpec { label: BROKEN.into(), dir: broken },
    ];
    (StudySpec { name: "acceptance".into(), sources, trials_per_session: None }, pixels)
}

fn decode(png: &[u8]) -> Vec<u8> {
    image::load_from_memory_with_format(png, image::ImageFormat::Png).unwrap().to_rgb8().into_raw()
}

fn study_protocol() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let log = dir.path().join("study.jsonl");
    let (spec, truth) = study_fixture(dir.path(), 5);
    let err = |e: colorfuse_study::StudyError| e.to_string();
    let svc = StudyService::open(&log).map_err(err)?;
    let study = svc.create_study(&spec).map_err(err)?;
    let secrets = [TRUTH, BROKEN, "hidden_", "truth_images", "corrupted_images"];
    let leaks = |text: &str| secrets.iter().find(|s| text.contains(**s)).map(|s| s.to_string());
    let visible = serde_json::to_string(&svc.studies()).unwrap();
    ensure!(leaks(&visible).is_none(), "study listing reveals {:?}", leaks(&visible));

    // Every session: balanced sources, no repeated image, nothing identifying.
    let run = |alias: &str, seed: u64, judge: &dyn Fn(bool) -> Verdict| -> Result<(), String> {
        let s = svc.open_session(study.id, alias, seed).map_err(err)?;
        let mut seen = Vec::new();
        let mut from_truth = 0;
        while let Some(t) = svc.next_trial(s.session_id).map_err(err)? {
            let png_text = String::from_utf8_lossy(&t.png).into_owned();
            ensure!(leaks(&png_text).is_none(), "trial image bytes reveal {:?}", leaks(&png_text));
            let px = decode(&t.png);
            ensure!(!seen.contains(&px), "image repeated within session {alias}");
            let real = truth.contains(&px);
            from_truth += usize::from(real);
            seen.push(px);
            svc.submit(s.session_id, t.trial_id, judge(real)).map_err(err)?;
        }
        let info = svc.session(s.session_id).map_err(err)?;
        let json = serde_json::to_string(&info).unwrap();
        ensure!(leaks(&json).is_none(), "session info reveals {:?}", leaks(&json));
        ensure!(info.complete && seen.len() == 10, "session {alias} ran {} trials", seen.len());
        ensure!(from_truth == 5, "session {alias} drew {from_truth} of 10 from the truth source");
        Ok(())
    };
    for (i, alias) in ["a", "b", "c"].iter().enumerate() {
        run(alias, i as u64, &|_| Verdict::Real)?;
    }
    let rates = |svc: &StudyService| -> Result<Vec<Option<f64>>, String> {
        Ok(svc.report(study.id, false).map_err(err)?.sources.iter().map(|s| s.rate).collect())
    };
    let all_real = rates(&svc)?;
    ensure!(all_real == [Some(100.0), Some(100.0)], "all-real respondents give {all_real:?}");

    let svc2_log = dir.path().join("study2.jsonl");
    let svc2 = StudyService::open(&svc2_log).map_err(err)?;
    let study2 = svc2.create_study(&spec).map_err(err)?;
    for alias in ["d", "e"] {
        let s = svc2.open_session(study2.id, alias, 3).map_err(err)?;
        while let Some(t) = svc2.next_trial(s.session_id).map_err(err)? {
            let v = if truth.contains(&decode(&t.png)) { Verdict::Real } else { Verdict::Fake };
            svc2.submit(s.session_id, t.trial_id, v).map_err(err)?;
        }
    }
    let report = svc2.report(study2.id, false).map_err(err)?;
    let by_label: Vec<(&str, Option<f64>)> = report.sources.iter().map(|s| (s.label.as_str(), s.rate)).collect();
    ensure!(by_label == [(TRUTH, Some(100.0)), (BROKEN, Some(0.0))], "discriminating judge gives {by_label:?}");

    // Crash mid-session: three acknowledged judgments, then a torn write.
    let s = svc.open_session(study.id, "crash", 9).map_err(err)?;
    for _ in 0..3 {
        let t = svc.next_trial(s.session_id).map_err(err)?.ok_or("session ended early")?;
        svc.submit(s.session_id, t.trial_id, Verdict::Fake).map_err(err)?;
    }
    let pending = svc.next_trial(s.session_id).map_err(err)?.ok_or("session ended early")?;
    drop(svc);
    let mut f = std::fs::OpenOptions::new().append(true).open(&log).map_err(|e| e.to_string())?;
    f.write_all(br#"{"event":"judged","sess"#).map_err(|e| e.to_string())?;
    drop(f);
    let svc = StudyService::open(&log).map_err(err)?;
    let info = svc.session(s.session_id).map_err(err)?;
    ensure!(info.judged == 3, "{} of 3 acknowledged judgments survived", info.judged);
    let resumed = svc.next_trial(s.session_id).map_err(err)?.ok_or("nothing to resume")?;
    ensure!(resumed.trial_id == pending.trial_id && resumed.number == 4, "resumed at trial {}", resumed.number);
    let (_, events) = EventLog::open(&log).map_err(err)?;
    ensure!(rates(&svc)? == all_real, "replay changed the completed-session report");
    Ok(format!(
        "all-real 100/100, discriminating 100/0, 5+5 per session, blinded, {} events replayed after a torn write",
        events.len()
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 9] = [
        ("parameter budget", parameter_budget),
        ("shape trace", shape_trace),
        ("gradient verification", gradient_verification),
        ("color round trip", color_round_trip),
        ("analytic loss values", analytic_losses),
        ("overfit sanity", overfit_sanity),
        ("metric oracle", metric_oracle),
        ("weight-store round trip", weight_round_trip),
        ("study protocol", study_protocol),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name} [{secs:.1}s] {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1}s] {why}");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
