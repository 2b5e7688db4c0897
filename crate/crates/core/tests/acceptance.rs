//! One check per acceptance criterion. Runs as a plain binary so the
//! PASS/FAIL lines always reach the terminal.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use wordhmm::audio::{self, AudioClip, AudioError};
use wordhmm::frontend;
use wordhmm::hmm::{self, Hmm, ObservationSequence};
use wordhmm::recognizer::{self, TrainingCorpus};
use wordhmm::vq::{self, Codebook};
use wordhmm::{cli, FeatureVector};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_obs(rng: &mut rand_chacha::ChaCha8Rng, m: usize, t: usize) -> ObservationSequence {
    ObservationSequence::new((0..t).map(|_| rng.random_range(0..m)).collect())
}

/// Instances with N ≤ 3, M ≤ 4, T ≤ 6; every other one uses coarse weights so
/// exact ties and zero probabilities occur.
fn oracle_instances(count: usize) -> Vec<(RawHmm, ObservationSequence)> {
    let mut rng = rng(1);
    (0..count)
        .map(|i| {
            let n = rng.random_range(1..=3);
            let m = rng.random_range(1..=4);
            let t = rng.random_range(1..=6);
            let raw = random_raw_hmm(&mut rng, n, m, i % 2 == 0);
            let obs = random_obs(&mut rng, m, t);
            (raw, obs)
        })
        .collect()
}

fn to_hmm(raw: &RawHmm) -> Hmm {
    Hmm::new(raw.pi.clone(), raw.a.clone(), raw.b.clone()).expect("valid random model")
}

fn forward_oracle() -> Check {
    let start = Instant::now();
    let instances = oracle_instances(400);
    let mut worst: f64 = 0.0;
    for (k, (raw, obs)) in instances.iter().enumerate() {
        let p = brute_force_probability(raw, obs.symbols());
        let f = hmm::forward(&to_hmm(raw), obs).map_err(|e| e.to_string())?;
        if p == 0.0 {
            ensure(f.is_impossible(), || format!("instance {k}: oracle 0, forward {}", f.log_likelihood))?;
        } else {
            let rel = (f.log_likelihood.exp() - p).abs() / p;
            worst = worst.max(rel);
            ensure(rel <= 1e-10, || format!("instance {k}: relative error {rel:e}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} instances, worst relative error {worst:.1e}, {elapsed:.2?}", instances.len()))
}

fn viterbi_oracle() -> Check {
    let start = Instant::now();
    let instances = oracle_instances(400);
    for (k, (raw, obs)) in instances.iter().enumerate() {
        let (path, lp) = brute_force_viterbi(raw, obs.symbols());
        let v = hmm::viterbi(&to_hmm(raw), obs).map_err(|e| e.to_string())?;
        ensure(v.states == path, || format!("instance {k}: path {:?}, oracle {path:?}", v.states))?;
        if lp.is_finite() {
            ensure((v.log_prob - lp).abs() <= 1e-10 * lp.abs().max(1.0), || {
                format!("instance {k}: log prob {} vs {lp}", v.log_prob)
            })?;
        } else {
            ensure(v.log_prob == f64::NEG_INFINITY, || format!("instance {k}: expected -inf"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} instances, {elapsed:.2?}", instances.len()))
}

fn check_invariants(h: &Hmm, mask: &[Vec<bool>]) -> Result<(), String> {
    let sums_to_one = |row: &[f64]| (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9 && row.iter().all(|&p| p >= 0.0);
    ensure(sums_to_one(h.pi()), || "pi not stochastic".into())?;
    for (i, row) in h.transitions().iter().enumerate() {
        ensure(sums_to_one(row), || format!("A row {i} not stochastic"))?;
        for (j, &p) in row.iter().enumerate() {
            ensure(mask[i][j] || p == 0.0, || format!("A[{i}][{j}] left its structural zero"))?;
        }
    }
    for (i, row) in h.emissions().iter().enumerate() {
        ensure(sums_to_one(row), || format!("B row {i} not stochastic"))?;
    }
    Ok(())
}

fn baum_welch_monotone() -> Check {
    let mut rng = rng(3);
    let pairs = 60;
    let mut steps = 0;
    for k in 0..pairs {
        let n = rng.random_range(2..=5);
        let m = rng.random_range(2..=8);
        let h = if k % 2 == 0 {
            hmm::init_left_right(n, m, k as u64)
        } else {
            let coarse = random_raw_hmm(&mut rng, n, m, true);
            let fine = random_raw_hmm(&mut rng, n, m, false);
            Hmm::new(fine.pi, coarse.a, fine.b).map_err(|e| e.to_string())?
        };
        let mask = h.topology_mask().to_vec();
        let seqs: Vec<ObservationSequence> = (0..rng.random_range(1..=6))
            .map(|_| {
                let t = rng.random_range(n..n + 30);
                random_obs(&mut rng, m, t)
            })
            .collect();
        let mut model = h;
        let mut prev = f64::NEG_INFINITY;
        for it in 0..25 {
            let step = hmm::reestimate(&model, &seqs, 1e-8, 1e-6).map_err(|e| e.to_string())?;
            ensure(step.log_likelihood >= prev - 1e-8, || {
                format!("pair {k} iteration {it}: {prev} -> {}", step.log_likelihood)
            })?;
            prev = step.log_likelihood;
            model = step.model;
            check_invariants(&model, &mask).map_err(|e| format!("pair {k} iteration {it}: {e}"))?;
            steps += 1;
        }
    }
    Ok(format!("{pairs} model/data pairs, {steps} re-estimation steps"))
}

fn levinson_oracle() -> Check {
    let mut rng = rng(4);
    let count = 200;
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let p = rng.random_range(1..=8);
        let len = rng.random_range(p + 4..p + 80);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = autocorrelation(&x, p);
        let lpc = frontend::levinson_durbin(&r).map_err(|e| e.to_string())?;
        let (a_ref, e_ref) = dense_lpc(&r);
        let scale = a_ref.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let rel = lpc.a.iter().zip(&a_ref).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(rel);
        ensure(rel <= 1e-8, || format!("autocorrelation {k}: predictor relative error {rel:e}"))?;
        ensure((lpc.error - e_ref).abs() <= 1e-8 * e_ref.abs().max(1e-300), || {
            format!("autocorrelation {k}: error energy {} vs {e_ref}", lpc.error)
        })?;
        ensure(lpc.order_errors.windows(2).all(|w| w[1] <= w[0]), || {
            format!("autocorrelation {k}: error energy increased with order")
        })?;
        ensure(lpc.k.iter().all(|k| k.abs() <= 1.0 + 1e-9), || format!("autocorrelation {k}: |k| > 1"))?;
    }
    Ok(format!("{count} autocorrelations, worst relative error {worst:.1e}"))
}

fn cepstrum_oracle() -> Check {
    let mut rng = rng(5);
    let count = 300;
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let p = rng.random_range(1..=6);
        let refl: Vec<f64> = (0..p).map(|_| rng.random_range(-0.98..0.98)).collect();
        let a = predictor_from_reflections(&refl);
        let c = frontend::predictor_to_cepstrum(&a, 2 * p);
        let c_ref = series_cepstrum(&a, 2 * p);
        let err = c.as_slice().iter().zip(&c_ref).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("predictor {k}: error {err:e}"))?;
    }
    for a1 in [0.95, 0.5, -0.7] {
        let c = frontend::predictor_to_cepstrum(&[a1], 12);
        for (i, v) in c.as_slice().iter().enumerate() {
            let m = (i + 1) as f64;
            ensure((v - a1.powf(m) / m).abs() <= 1e-12, || format!("single pole {a1}: c_{m} = {v}"))?;
        }
    }
    Ok(format!("{count} stable predictors, worst error {worst:.1e}; single-pole closed form holds"))
}

fn vq_checks() -> Check {
    let mut rng = rng(6);
    let mut queries = 0;
    let mut lloyd_steps = 0;
    for k in 0..6 {
        let dim = rng.random_range(2..=12);
        let data: Vec<FeatureVector> = (0..400)
            .map(|i| {
                let centre = (i % 5) as f64;
                FeatureVector((0..dim).map(|_| centre + rng.random_range(-0.8..0.8)).collect())
            })
            .collect();
        let size = 1 << (k + 1);
        let (cb, trace) = vq::train_codebook_traced(&data, size, k as u64, 50, 1e-4).map_err(|e| e.to_string())?;
        for stage in &trace.stages {
            for w in stage.distortions.windows(2) {
                ensure(w[1] <= w[0] * (1.0 + 1e-12), || {
                    format!("codebook {k}, size {}: distortion rose {} -> {}", stage.size, w[0], w[1])
                })?;
                lloyd_steps += 1;
            }
        }
        let check = |cb: &Codebook, v: &[f64]| -> Result<(), String> {
            let got = vq::quantize(cb, &FeatureVector(v.to_vec())).map_err(|e| e.to_string())?;
            let want = brute_force_nearest(cb.centroids(), v);
            ensure(got == want, || format!("query {v:?}: {got} vs {want}"))
        };
        for v in &data {
            check(&cb, &v.0)?;
            queries += 1;
        }
        for _ in 0..200 {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..6.0)).collect();
            check(&cb, &v)?;
            queries += 1;
        }
        let grid: Vec<Vec<f64>> = (0..size).map(|i| (0..dim).map(|d| ((i + d) % 3) as f64).collect()).collect();
        let grid_cb = Codebook::new(grid).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let v: Vec<f64> = (0..dim).map(|_| f64::from(rng.random_range(0..=4u8)) / 2.0).collect();
            check(&grid_cb, &v)?;
            queries += 1;
        }
    }
    Ok(format!("{lloyd_steps} Lloyd steps non-increasing, {queries} queries match brute force"))
}

fn run_cli(args: &[&str]) -> Result<(String, String), String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["wordhmm"];
    full.extend_from_slice(args);
    let code = cli::run(full, &mut out, &mut err);
    let out = String::from_utf8_lossy(&out).into_owned();
    let err = String::from_utf8_lossy(&err).into_owned();
    if code == 0 {
        Ok((out, err))
    } else {
        Err(format!("`{}` exited {code}: {err}", args.join(" ")))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn accuracy_of(json: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(json).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["accuracy"].as_f64().ok_or_else(|| "report has no accuracy".into())
}

fn end_to_end(work: &Path) -> Check {
    let start = Instant::now();
    let train = work.join("train");
    let test = work.join("test");
    let model = work.join("model.json");
    run_cli(&["gen-corpus", p(&train), "--speakers", "5", "--attempts", "5", "--seed", "0"])?;
    run_cli(&[
        "gen-corpus", p(&test), "--speakers", "5", "--attempts", "4", "--first-speaker", "5", "--seed", "1",
    ])?;
    run_cli(&["train", p(&train), p(&model), "--seed", "0"])?;
    let clean_json = work.join("clean.json");
    let noisy_json = work.join("snr5.json");
    run_cli(&["eval", p(&model), p(&test), "--json", p(&clean_json)])?;
    run_cli(&["eval", p(&model), p(&test), "--snr", "5", "--json", p(&noisy_json)])?;
    let elapsed = start.elapsed();
    let clean = accuracy_of(&clean_json)?;
    let noisy = accuracy_of(&noisy_json)?;
    let summary = format!(
        "clean {:.1}%, 5 dB SNR {:.1}% (drop {:.1} points), {elapsed:.1?}",
        100.0 * clean,
        100.0 * noisy,
        100.0 * (clean - noisy)
    );
    ensure(clean >= 0.80, || format!("clean accuracy below 80%: {summary}"))?;
    ensure(clean - noisy >= 0.10, || format!("noise drop below 10 points: {summary}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn determinism(work: &Path) -> Check {
    let train = work.join("train");
    if !train.exists() {
        run_cli(&["gen-corpus", p(&train), "--seed", "0"])?;
    }
    let m1 = work.join("det1.json");
    let m2 = work.join("det2.json");
    run_cli(&["train", p(&train), p(&m1), "--seed", "7"])?;
    run_cli(&["train", p(&train), p(&m2), "--seed", "7"])?;
    let b1 = fs::read(&m1).map_err(|e| e.to_string())?;
    let b2 = fs::read(&m2).map_err(|e| e.to_string())?;
    ensure(b1 == b2, || "two training runs wrote different model files".into())?;

    let model = recognizer::load_model(&b1).map_err(|e| e.to_string())?;
    let resaved = recognizer::save_model(&model);
    ensure(resaved == b1, || "load then save changed the model file".into())?;
    let reloaded = recognizer::load_model(&resaved).map_err(|e| e.to_string())?;

    let corpus = TrainingCorpus::from_dir(&train).map_err(|e| e.to_string())?;
    let mut probes: Vec<AudioClip> = corpus
        .iter()
        .step_by(6)
        .take(40)
        .map(|(_, s)| s.load().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    for i in 0..10u64 {
        let clip = audio::synthesize_word_token(i as usize, 20 + i, 99, 8000).map_err(|e| e.to_string())?;
        probes.push(audio::add_noise(&clip, 15.0, i).map_err(|e| e.to_string())?);
    }
    ensure(probes.len() == 50, || format!("probe set has {} tokens", probes.len()))?;
    for (i, clip) in probes.iter().enumerate() {
        let a = recognizer::recognize(&model, clip).map_err(|e| e.to_string())?;
        let b = recognizer::recognize(&reloaded, clip).map_err(|e| e.to_string())?;
        ensure(a.ranked == b.ranked, || format!("probe {i}: decisions differ after reload"))?;
    }
    Ok(format!("identical model files ({} bytes), stable load/save, {} probes agree", b1.len(), probes.len()))
}

fn wav_codec() -> Check {
    let mut rng = rng(9);
    let clips = 300;
    let mut worst: f64 = 0.0;
    for k in 0..clips {
        let len = rng.random_range(1..4000);
        let rate = if k % 2 == 0 { 8000 } else { 16000 };
        let samples: Vec<f64> = (0..len)
            .map(|i| match k % 3 {
                0 => rng.random_range(-1.0..=1.0),
                1 => 0.7 * (i as f64 * 0.01 * (k + 1) as f64).sin(),
                _ => [-1.0, 1.0, 0.0][i % 3],
            })
            .collect();
        let clip = AudioClip::new(samples, rate).map_err(|e| e.to_string())?;
        let back = audio::load_wav(&audio::save_wav(&clip)).map_err(|e| e.to_string())?;
        ensure(back.sample_rate() == rate && back.len() == clip.len(), || format!("clip {k}: shape changed"))?;
        let err = clip.samples().iter().zip(back.samples()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err);
        ensure(err <= 1.0 / 32767.0, || format!("clip {k}: error {err:e}"))?;
    }

    let good = wav_bytes(8000, 1, 16, 1, &pcm16(&[10, -20, 30, -40]));
    let with = |at: usize, bytes: &[u8]| {
        let mut b = good.clone();
        b[at..at + bytes.len()].copy_from_slice(bytes);
        b
    };
    let corpus: Vec<(&str, Vec<u8>, bool)> = vec![
        ("empty file", vec![], true),
        ("header cut short", good[..30].to_vec(), true),
        ("not RIFF", with(0, b"JUNK"), true),
        ("not WAVE", with(8, b"WAVX"), true),
        ("data chunk overruns", with(40, &1000u32.to_le_bytes()), true),
        ("missing data chunk", good[..36].to_vec(), true),
        ("stereo", wav_bytes(8000, 2, 16, 1, &pcm16(&[1, 2])), false),
        ("8-bit", wav_bytes(8000, 1, 8, 1, &[1, 2]), false),
        ("24-bit", wav_bytes(8000, 1, 24, 1, &[0; 6]), false),
        ("IEEE float", wav_bytes(8000, 1, 32, 3, &[0; 8]), false),
        ("22.05 kHz", wav_bytes(22050, 1, 16, 1, &pcm16(&[1])), false),
    ];
    for (name, bytes, malformed) in &corpus {
        let res = audio::load_wav(bytes);
        let ok = if *malformed {
            matches!(res, Err(AudioError::MalformedWav(_)))
        } else {
            matches!(res, Err(AudioError::UnsupportedFormat(_)))
        };
        ensure(ok, || format!("{name}: got {res:?}"))?;
    }
    Ok(format!("{clips} clips within {worst:.2e}, {} malformed headers rejected", corpus.len()))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("HMM forward vs exhaustive path sum", Box::new(forward_oracle)),
        ("Viterbi vs exhaustive argmax", Box::new(viterbi_oracle)),
        ("Baum-Welch monotonicity and invariants", Box::new(baum_welch_monotone)),
        ("Levinson-Durbin vs dense Toeplitz solve", Box::new(levinson_oracle)),
        ("LPC cepstrum vs power series", Box::new(cepstrum_oracle)),
        ("VQ distortion and nearest neighbour", Box::new(vq_checks)),
        ("end-to-end synthetic experiment", Box::new(|| end_to_end(work.path()))),
        ("determinism and persistence", Box::new(|| determinism(work.path()))),
        ("WAV codec", Box::new(wav_codec)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
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
