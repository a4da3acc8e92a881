//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use phq_cli::archive::{Ensemble, ModelArchive};
use phq_ensemble::augment::{oversample_plan, perturb_group, select_perturbed, AugmentConfig, SalientGroup};
use phq_ensemble::bottom_up::{predict_all_bottom_up, train_bottom_up, BottomUpEnsemble};
use phq_ensemble::mel::{mel_patch, LOG_FLOOR};
use phq_ensemble::metrics::{binary_macro_f1, cronbach_alpha, macro_f1, mae, pearson, rmse, Correlation};
use phq_ensemble::optim::{grad, loss, LinearSoftmaxModel, TrainConfig};
use phq_ensemble::synth::{synth_cohort, SyntheticConfig};
use phq_ensemble::top_down::{predict_all_top_down, train_top_down, Expert, TopDownMoe};
use phq_ensemble::{severity_of, Embedding, PredictionSource, Severity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn phq(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_phq")).args(args).output().expect("spawn phq");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn phq_ok(args: &[&str]) -> Result<(), String> {
    let (code, err) = phq(args);
    check(code == 0, || format!("phq {} exited {code}: {}", args.join(" "), err.trim()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_metrics(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(',').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn metric(m: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    let v: f64 = m
        .get(key)
        .ok_or(format!("missing metric {key}"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))?;
    check(v.is_finite(), || format!("{key} is not finite"))?;
    Ok(v)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

// ---------------------------------------------------------------------------
// Real-data adapter path

fn adapter_path() -> Outcome {
    // Files in the declared schemas, shaped like an external corpus export:
    // numeric speaker ids, unsorted rows, a few groups per speaker.
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut labels = String::from("speaker_id,split,q1,q2,q3,q4,q5,q6,q7,q8,total,binary\n");
    let mut embs = String::from("speaker_id,group_index");
    for j in 0..64 {
        embs.push_str(&format!(",e{j:02}"));
    }
    embs.push('\n');
    let mut dev_embs = embs.clone();
    let mut features = String::from("speaker_id,speaking_rate,pause_ratio\n");
    for id in (300..360).rev() {
        let items: Vec<u8> = (0..8).map(|_| rng.random_range(0..=3)).collect();
        let total: u32 = items.iter().map(|&v| u32::from(v)).sum();
        let split = if id % 4 == 0 { "dev" } else { "train" };
        labels.push_str(&format!(
            "{id},{split},{},{total},{}\n",
            items.iter().map(u8::to_string).collect::<Vec<_>>().join(","),
            u8::from(total >= 10)
        ));
        let target = if split == "dev" { &mut dev_embs } else { &mut embs };
        for g in 0..rng.random_range(3..8) {
            let v: Vec<String> = gaussian(&mut rng, 64, 1.0)
                .iter()
                .enumerate()
                .map(|(j, x)| (x + 0.2 * f64::from(items[j % 8])).to_string())
                .collect();
            target.push_str(&format!("{id},{g},{}\n", v.join(",")));
        }
        let na = if id % 7 == 0 { "NA".to_string() } else { rng.random_range(2.0..5.0f64).to_string() };
        features.push_str(&format!("{id},{na},{}\n", rng.random_range(0.0..1.0f64)));
    }
    fs::write(d.join("labels.csv"), labels).unwrap();
    fs::write(d.join("train.csv"), embs).unwrap();
    fs::write(d.join("dev.csv"), dev_embs).unwrap();
    fs::write(d.join("features.csv"), features).unwrap();
    let j = |f: &str| d.join(f);
    for system in ["bottom-up", "top-down"] {
        let model = j(&format!("{system}.model"));
        let pred = j(&format!("{system}.csv"));
        let eval = j(&format!("{system}-eval"));
        phq_ok(&["train", "--system", system, "--labels", p(&j("labels.csv")), "--embeddings", p(&j("train.csv")), "--out", p(&model)])?;
        phq_ok(&["predict", "--model", p(&model), "--embeddings", p(&j("dev.csv")), "--out", p(&pred)])?;
        phq_ok(&["evaluate", "--pred", p(&pred), "--labels", p(&j("labels.csv")), "--out", p(&eval)])?;
        phq_ok(&["report", "--pred", p(&pred), "--features", p(&j("features.csv")), "--out", p(&eval)])?;
        for f in ["metrics.csv", "per_class.csv", "cronbach.csv", "scatter.csv", "feature_correlations.csv"] {
            check(eval.join(f).is_file(), || format!("{system}: {f} missing"))?;
        }
    }
    Ok("train/predict/evaluate/report ran unmodified on external-schema files for both systems".into())
}

// ---------------------------------------------------------------------------
// Metric oracles: exact integer arithmetic, one rounding at the end

fn f1_oracle(t: &[usize], pr: &[usize], labels: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &c in labels {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (&a, &b) in t.iter().zip(pr) {
            match (a == c, b == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let den = 2 * tp + fp + fneg;
        sum += if den == 0 { 0.0 } else { (2 * tp) as f64 / den as f64 };
    }
    sum / labels.len() as f64
}

fn pearson_oracle(x: &[i64], y: &[i64]) -> Option<f64> {
    let n = x.len() as i128;
    let sx: i128 = x.iter().map(|&v| v as i128).sum();
    let sy: i128 = y.iter().map(|&v| v as i128).sum();
    let sxy: i128 = x.iter().zip(y).map(|(&a, &b)| (a * b) as i128).sum();
    let sxx: i128 = x.iter().map(|&v| (v * v) as i128).sum();
    let syy: i128 = y.iter().map(|&v| (v * v) as i128).sum();
    let (num, dx, dy) = (n * sxy - sx * sy, n * sxx - sx * sx, n * syy - sy * sy);
    if dx == 0 || dy == 0 {
        return None;
    }
    Some(num as f64 / ((dx as f64) * (dy as f64)).sqrt())
}

/// alpha = K (B - A) / ((K - 1) B), with A and B the item-variance sum and the
/// total variance, both scaled by n(n-1) so they stay integers.
fn alpha_oracle(rows: &[Vec<i64>]) -> Option<f64> {
    let n = rows.len() as i128;
    let k = rows[0].len();
    let scaled_var = |col: &dyn Fn(&Vec<i64>) -> i64| -> i128 {
        let s: i128 = rows.iter().map(|r| col(r) as i128).sum();
        let ss: i128 = rows.iter().map(|r| (col(r) as i128).pow(2)).sum();
        n * ss - s * s
    };
    let a: i128 = (0..k).map(|j| scaled_var(&|r: &Vec<i64>| r[j])).sum();
    let b = scaled_var(&|r: &Vec<i64>| r.iter().sum());
    if b == 0 {
        return None;
    }
    let k = k as i128;
    Some((k * (b - a)) as f64 / ((k - 1) * b) as f64)
}

fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = [0.0f64; 5];
    let mut undefined = (0, 0);
    let labels: Vec<usize> = (0..5).collect();
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        // severity-like labels and PHQ-like totals
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let pr: Vec<usize> = t.iter().map(|&c| if rng.random_bool(0.6) { c } else { rng.random_range(0..5) }).collect();
        let got = macro_f1(&t, &pr, &labels).map_err(|e| e.to_string())?.macro_f1;
        worst[0] = worst[0].max((got - f1_oracle(&t, &pr, &labels)).abs());
        let tb: Vec<bool> = t.iter().map(|&c| c >= 2).collect();
        let pb: Vec<bool> = pr.iter().map(|&c| c >= 2).collect();
        let got = binary_macro_f1(&tb, &pb).map_err(|e| e.to_string())?.macro_f1;
        let oracle = f1_oracle(
            &tb.iter().map(|&b| usize::from(b)).collect::<Vec<_>>(),
            &pb.iter().map(|&b| usize::from(b)).collect::<Vec<_>>(),
            &[0, 1],
        );
        worst[0] = worst[0].max((got - oracle).abs());

        let x: Vec<i64> = (0..n).map(|_| rng.random_range(0..=24)).collect();
        let y: Vec<i64> = if rng.random_bool(0.05) {
            vec![rng.random_range(0..=24); n]
        } else {
            x.iter().map(|&v| (v + rng.random_range(-6..=6)).clamp(0, 24)).collect()
        };
        let (xf, yf): (Vec<f64>, Vec<f64>) = (x.iter().map(|&v| v as f64).collect(), y.iter().map(|&v| v as f64).collect());
        let abs_sum: i64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        let sq_sum: i64 = x.iter().zip(&y).map(|(a, b)| (a - b).pow(2)).sum();
        worst[1] = worst[1].max((mae(&xf, &yf).unwrap() - abs_sum as f64 / n as f64).abs());
        worst[2] = worst[2].max((rmse(&xf, &yf).unwrap() - (sq_sum as f64 / n as f64).sqrt()).abs());
        match (pearson(&xf, &yf).unwrap(), pearson_oracle(&x, &y)) {
            (Correlation::Defined { r, .. }, Some(o)) => worst[3] = worst[3].max((r - o).abs()),
            (Correlation::Undefined, None) => undefined.0 += 1,
            (got, want) => return Err(format!("pearson definedness differs: {got:?} vs {want:?}")),
        }

        let k = rng.random_range(2..=8);
        let base: Vec<i64> = (0..n).map(|_| rng.random_range(0..=3)).collect();
        let rows: Vec<Vec<i64>> = base
            .iter()
            .map(|&b| (0..k).map(|_| if rng.random_bool(0.7) { b } else { rng.random_range(0..=3) }).collect())
            .collect();
        let frows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        match (cronbach_alpha(&frows).unwrap(), alpha_oracle(&rows)) {
            (Some(a), Some(o)) => worst[4] = worst[4].max((a - o).abs() / o.abs().max(1.0)),
            (None, None) => undefined.1 += 1,
            (got, want) => return Err(format!("alpha definedness differs: {got:?} vs {want:?}")),
        }
    }
    let elapsed = start.elapsed();
    check(worst[..4].iter().all(|&w| w <= 1e-9), || format!("max deviation f1/mae/rmse/r = {:?}", &worst[..4]))?;
    check(worst[4] <= 1e-12, || format!("alpha deviation {:e}", worst[4]))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 instances; max |diff| f1 {:.1e}, mae {:.1e}, rmse {:.1e}, r {:.1e}, alpha {:.1e} (relative); {} undefined r and {} undefined alpha agreed; {:.2?}",
        worst[0], worst[1], worst[2], worst[3], worst[4], undefined.0, undefined.1, elapsed
    ))
}

// ---------------------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(1..=64);
        // weights at the usual 1/sqrt(d) scale keep the probability floor
        // inactive; where it binds the loss is flat and has no useful derivative
        let w = gaussian(&mut rng, classes * dim, 1.0 / (dim as f64).sqrt());
        let model = LinearSoftmaxModel::from_parts(classes, dim, w, gaussian(&mut rng, classes, 1.0)).unwrap();
        let x = gaussian(&mut rng, dim, 1.0);
        let y = rng.random_range(0..classes);
        let py = model.predict_proba(&x).unwrap()[y];
        check(py > 1e-12, || format!("floor binds (p = {py:e})"))?;
        let g = grad(&model, &x, y).unwrap();
        for (i, &analytic) in g.values().iter().enumerate() {
            let (mut plus, mut minus) = (model.clone(), model.clone());
            plus.params_mut()[i] += h;
            minus.params_mut()[i] -= h;
            let numeric = (loss(&plus, &x, y).unwrap() - loss(&minus, &x, y).unwrap()) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4));
        }
    }
    check(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("100 triples, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng, classes: usize) -> LinearSoftmaxModel<f64> {
    let scale = rng.random_range(0.05..2.0);
    LinearSoftmaxModel::from_parts(classes, 64, gaussian(rng, classes * 64, scale), gaussian(rng, classes, 2.0)).unwrap()
}

fn random_speakers(rng: &mut ChaCha8Rng, count: usize) -> Vec<Embedding> {
    let mut out = Vec::new();
    for s in 0..count {
        let shift = gaussian(rng, 64, 1.0);
        for g in 0..rng.random_range(1..=10) {
            let v: Vec<f64> = gaussian(rng, 64, 1.0).iter().zip(&shift).map(|(a, b)| a + b).collect();
            out.push(Embedding::new(format!("s{s:04}"), g, v).unwrap());
        }
    }
    out
}

fn consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let cfg = TrainConfig::default();
    let (mut checked, mut bands_seen, mut totals_seen) = (0usize, [0usize; 5], [false; 25]);
    for round in 0..200 {
        let speakers = random_speakers(&mut rng, 50);
        let preds = if round % 2 == 0 {
            let models = (0..8).map(|_| random_model(&mut rng, 4)).collect();
            predict_all_bottom_up(&BottomUpEnsemble::from_models(models, cfg).unwrap(), &speakers).unwrap()
        } else {
            let router = random_model(&mut rng, 5);
            let experts = Severity::ALL
                .iter()
                .map(|&severity| Expert { severity, model: random_model(&mut rng, 5), trained: true })
                .collect();
            predict_all_top_down(&TopDownMoe::from_parts(router, experts, cfg).unwrap(), &speakers).unwrap()
        };
        for pr in &preds {
            let t = pr.predicted_total();
            check(pr.is_consistent(), || format!("inconsistent {pr:?}"))?;
            check(t <= 24 && pr.predicted_binary() == (t >= 10), || format!("binary misaligned {pr:?}"))?;
            check(severity_of(u32::from(t)).unwrap() == pr.predicted_severity(), || format!("severity misaligned {pr:?}"))?;
            match pr.source() {
                PredictionSource::TopDown { expert } => {
                    check(expert.range().contains(&t), || format!("total outside expert band {pr:?}"))?;
                    bands_seen[expert.index()] += 1;
                }
                PredictionSource::BottomUp { predicted_items } => {
                    check(predicted_items.total() == t, || format!("items do not sum to total {pr:?}"))?;
                }
            }
            totals_seen[usize::from(t)] = true;
            checked += 1;
        }
    }
    check(checked == 5000 * 2, || format!("checked {checked} predictions"))?;
    Ok(format!(
        "{checked} predictions aligned; top-down experts used {bands_seen:?}; {} of 25 totals produced",
        totals_seen.iter().filter(|&&b| b).count()
    ))
}

// ---------------------------------------------------------------------------
// End-to-end synthetic benchmark through the binary

const BENCHMARK_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/benchmark.csv");

struct Benchmark {
    _tmp: tempfile::TempDir,
    bottom_up_eval: PathBuf,
    result: Result<(BTreeMap<&'static str, f64>, Duration), String>,
}

fn run_benchmark() -> Benchmark {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_path_buf();
    let bottom_up_eval = d.join("bottom-up-eval");
    let result = (|| {
        let start = Instant::now();
        fs::write(d.join("synth.conf"), "# seed-7 separable cohort\nseed = 7\ngroups_per_speaker = 300\n").unwrap();
        phq_ok(&["synth", "--config", p(&d.join("synth.conf")), "--out", p(&d.join("data"))])?;
        let data = d.join("data");
        let mut got = BTreeMap::new();
        for (system, key) in [("bottom-up", "bottom_up"), ("top-down", "top_down")] {
            let model = d.join(format!("{system}.model"));
            let pred = d.join(format!("{system}.csv"));
            let eval = d.join(format!("{system}-eval"));
            phq_ok(&[
                "train", "--system", system, "--seed", "7",
                "--labels", p(&data.join("labels.csv")),
                "--embeddings", p(&data.join("train_embeddings.csv")),
                "--out", p(&model),
            ])?;
            phq_ok(&["predict", "--model", p(&model), "--embeddings", p(&data.join("dev_embeddings.csv")), "--out", p(&pred)])?;
            phq_ok(&["evaluate", "--pred", p(&pred), "--labels", p(&data.join("labels.csv")), "--out", p(&eval)])?;
            let m = read_metrics(&eval.join("metrics.csv"));
            let leak = |s: &str| -> &'static str { Box::leak(format!("{key}_{s}").into_boxed_str()) };
            for name in ["binary_macro_f1", "severity_macro_f1", "mae", "rmse", "pearson_r"] {
                got.insert(leak(name), metric(&m, name)?);
            }
        }
        Ok((got, start.elapsed()))
    })();
    Benchmark { _tmp: tmp, bottom_up_eval, result }
}

fn benchmark(b: &Benchmark) -> Outcome {
    let (got, elapsed) = b.result.clone()?;
    let (bu_f1, bu_r, td_f1) = (got["bottom_up_binary_macro_f1"], got["bottom_up_pearson_r"], got["top_down_binary_macro_f1"]);
    let summary = format!("bottom-up F1 {bu_f1:.4} r {bu_r:.4}, top-down F1 {td_f1:.4}, {elapsed:.1?}");
    check(bu_f1 >= 0.90 && bu_r >= 0.80 && td_f1 >= 0.85, || format!("below threshold: {summary}"))?;
    check(elapsed < Duration::from_secs(60), || format!("too slow: {summary}"))?;

    // frozen achieved values
    let frozen: BTreeMap<String, f64> = fs::read_to_string(BENCHMARK_FIXTURE)
        .map_err(|e| format!("{BENCHMARK_FIXTURE}: {e}"))?
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect();
    for (k, v) in &got {
        let want = frozen.get(*k).ok_or(format!("fixture lacks {k}"))?;
        check((v - want).abs() <= 1e-12, || format!("{k} drifted from frozen {want} to {v}"))?;
    }
    Ok(format!("{summary}; matches frozen fixture"))
}

// ---------------------------------------------------------------------------

fn cronbach_sanity(b: &Benchmark) -> Outcome {
    let rows: Vec<Vec<f64>> = [0.0, 3.0, 1.0, 2.0, 2.0, 0.0, 3.0].iter().map(|&v| vec![v; 8]).collect();
    let alpha = cronbach_alpha(&rows).unwrap().ok_or("identical items gave undefined alpha")?;
    check((alpha - 1.0).abs() <= 1e-12, || format!("identical items alpha {alpha}"))?;
    b.result.as_ref().map_err(|e| format!("benchmark did not run: {e}"))?;
    let m = read_metrics(&b.bottom_up_eval.join("cronbach.csv"));
    let (t, pr) = (metric(&m, "true")?, metric(&m, "predicted")?);
    Ok(format!("identical items alpha = {alpha}; synthetic dev alpha(true) {t:.4}, alpha(predicted) {pr:.4}"))
}

// ---------------------------------------------------------------------------

fn mel_front_end() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut worst = 0.0f64;
    let floor = LOG_FLOOR.ln();
    for trial in 0..10 {
        let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = mel_patch(&x).unwrap();
        check(base.shape() == (128, 28), || format!("shape {:?}", base.shape()))?;
        let c = [0.25, 3.0, 1e-3, 40.0][trial % 4];
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let out = mel_patch(&scaled).unwrap();
        check(out.shape() == (128, 28), || format!("shape {:?}", out.shape()))?;
        for (a, b) in base.as_slice().iter().zip(out.as_slice()) {
            if *a > floor && *b > floor {
                worst = worst.max((b - a - 2.0 * c.ln()).abs());
            }
        }
    }
    check(worst < 1e-9, || format!("scaling deviation {worst:e}"))?;

    // the CLI path over a WAV file
    let tmp = tempfile::tempdir().unwrap();
    let wav = tmp.path().join("a.wav");
    let format = hound::WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&wav, format).unwrap();
    for i in 0..8100 {
        w.write_sample((8000.0 * (i as f64 * 0.2).sin()) as i16).unwrap();
    }
    w.finalize().unwrap();
    let csv = tmp.path().join("mel.csv");
    phq_ok(&["mel", "--wav", p(&wav), "--out", p(&csv)])?;
    let text = fs::read_to_string(&csv).unwrap();
    check(text.lines().count() == 1 + 2 * 128, || "expected two 128-band patches".into())?;
    check(text.lines().all(|l| l.split(',').count() == 30), || "expected 28 frame columns".into())?;
    Ok(format!("(128, 28) patches; max |shift - 2 ln c| {worst:.1e}; CLI wrote 2 patches from 8100 samples"))
}

// ---------------------------------------------------------------------------

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let data = dir.join("data");
    phq_ok(&["synth", "--seed", "7", "--out", p(&data)])?;
    let mut files = Vec::new();
    for system in ["bottom-up", "top-down"] {
        let model = dir.join(format!("{system}.model"));
        let pred = dir.join(format!("{system}.csv"));
        let eval = dir.join(format!("{system}-eval"));
        phq_ok(&[
            "train", "--system", system, "--seed", "11",
            "--labels", p(&data.join("labels.csv")),
            "--embeddings", p(&data.join("train_embeddings.csv")),
            "--out", p(&model),
        ])?;
        phq_ok(&["predict", "--model", p(&model), "--embeddings", p(&data.join("dev_embeddings.csv")), "--out", p(&pred)])?;
        phq_ok(&["evaluate", "--pred", p(&pred), "--labels", p(&data.join("labels.csv")), "--out", p(&eval), "--model", p(&model)])?;
        files.push((format!("{system}.model"), fs::read(&model).unwrap()));
        files.push((format!("{system}.csv"), fs::read(&pred).unwrap()));
        let mut reports: Vec<_> = fs::read_dir(&eval).unwrap().map(|e| e.unwrap().path()).collect();
        reports.sort();
        for r in reports {
            files.push((format!("{system}/{}", r.file_name().unwrap().to_string_lossy()), fs::read(&r).unwrap()));
        }
    }
    Ok(files)
}

fn determinism_and_persistence() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let first = pipeline(&tmp.path().join("run1"))?;
    let second = pipeline(&tmp.path().join("run2"))?;
    check(first.len() == second.len(), || "different file sets".into())?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        check(a == b, || format!("{name} differs between runs"))?;
    }

    // 100-speaker fixture: save/load must not change a single prediction
    let cfg = SyntheticConfig { train_counts: [40, 25, 20, 10, 5], dev_counts: [0; 5], ..SyntheticConfig::default() };
    let cohort = synth_cohort(&cfg).unwrap().train;
    let aug = AugmentConfig::default().with_seed(3);
    let bu = train_bottom_up(&cohort, &TrainConfig::bottom_up(3), &aug).unwrap();
    let td = train_top_down(&cohort, &TrainConfig::top_down(3), &aug).unwrap();
    let before = (predict_all_bottom_up(&bu, &cohort.embeddings).unwrap(), predict_all_top_down(&td, &cohort.embeddings).unwrap());
    for ensemble in [Ensemble::BottomUp(bu), Ensemble::TopDown(td)] {
        let archive = ModelArchive { ensemble, train_config: TrainConfig::bottom_up(3), augment_config: aug, data_fingerprint: "fixture".into() };
        let loaded = ModelArchive::from_bytes(&archive.to_bytes()).map_err(|e| e.to_string())?;
        check(loaded == archive, || "archive round trip changed parameters".into())?;
        let after = match &loaded.ensemble {
            Ensemble::BottomUp(m) => predict_all_bottom_up(m, &cohort.embeddings).unwrap(),
            Ensemble::TopDown(m) => predict_all_top_down(m, &cohort.embeddings).unwrap(),
        };
        let want = if matches!(loaded.ensemble, Ensemble::BottomUp(_)) { &before.0 } else { &before.1 };
        check(&after == want, || "predictions changed after reload".into())?;
        check(after.len() == 100, || format!("{} speakers predicted", after.len()))?;
    }
    Ok(format!("{} pipeline files byte-identical across runs; 100-speaker predictions identical after reload for both systems", first.len()))
}

// ---------------------------------------------------------------------------

fn augmentation_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let defaults = AugmentConfig::default();
    for trial in 0..50 {
        let units: Vec<Vec<f64>> = (0..27).map(|_| gaussian(&mut rng, 16, 1.0)).collect();
        let saliency: Vec<f64> = (0..27).map(|_| rng.random_range(0.0..1.0)).collect();
        let group = SalientGroup::new(units.clone(), saliency.clone()).unwrap();
        let out = perturb_group(&group, &defaults.with_seed(trial)).unwrap();
        let mut order: Vec<usize> = (0..27).collect();
        order.sort_by(|&a, &b| saliency[a].total_cmp(&saliency[b]));
        let mut lowest: Vec<usize> = order[..6].to_vec();
        lowest.sort();
        check(select_perturbed(&saliency, 21, 6) == lowest, || "selection is not the 6 least salient".into())?;
        for (i, (a, b)) in units.iter().zip(out.units()).enumerate() {
            let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
            check(same != lowest.contains(&i), || format!("unit {i} changed={} but perturbed={}", !same, lowest.contains(&i)))?;
        }
    }

    let mut labels = Vec::new();
    for (class, &n) in [47usize, 29, 20, 7, 4].iter().enumerate() {
        labels.extend(std::iter::repeat_n(class, n));
    }
    let mut cases = vec![labels];
    for _ in 0..200 {
        let n = rng.random_range(1..120);
        let k = rng.random_range(1..6);
        cases.push((0..n).map(|_| rng.random_range(0..k)).collect());
    }
    for labels in &cases {
        let plan = oversample_plan(labels, 5).map_err(|e| e.to_string())?;
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for d in &plan {
            *hist.entry(labels[d.source]).or_default() += 1;
        }
        let max = hist.values().max().unwrap();
        let mut original: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in labels {
            *original.entry(l).or_default() += 1;
        }
        check(hist.values().all(|c| c == max), || format!("histogram {hist:?}"))?;
        check(*max == *original.values().max().unwrap(), || "target is not the majority count".into())?;
    }
    Ok("50 groups of 27 units: exactly the 6 least salient changed, 21 bit-identical; 201 label sets oversampled to uniform histograms (47,29,20,7,4 -> 5 x 47)".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let started = Instant::now();
    let bench = run_benchmark();
    let criteria: Vec<Criterion> = vec![
        ("real-data adapter path", Box::new(adapter_path)),
        ("metric oracle equivalence", Box::new(metric_oracles)),
        ("gradient correctness", Box::new(gradient_check)),
        ("consistency invariants", Box::new(consistency)),
        ("end-to-end synthetic benchmark", Box::new(|| benchmark(&bench))),
        ("cronbach sanity", Box::new(|| cronbach_sanity(&bench))),
        ("mel front end", Box::new(mel_front_end)),
        ("determinism and persistence", Box::new(determinism_and_persistence)),
        ("augmentation contract", Box::new(augmentation_contract)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or("panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} criteria, {failed} failed, {:.1?}", 9, started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
