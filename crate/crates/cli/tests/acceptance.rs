use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use hydro_ssm::data::fit_normalizer;
use hydro_ssm::eval::{
    evaluate, improvements, load_observations, median, metric_suite, percentage_difference, signatures, skill_score,
    FhvImprovement, MetricReport,
};
use hydro_ssm::model::ModelConfig;
use hydro_ssm::selfcheck::{mode_gap, model_gradient_error, random_ssm, run_selfcheck, SelfcheckOptions};
use hydro_ssm::train::{read_predictions, train};
use hydro_ssm::{build_model, BasinRecord, DataDir, Period, Tensor, TrainConfig, WindowedDataset};
use hydro_ssm_cli::commands::write_data_dir;
use hydro_ssm_cli::commands::reservoir_basin;
use hydro_ssm_cli::{cmd_train, TrainArgs, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn mode_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let ssm = random_ssm(&mut rng, 4, 8);
        for l in [16, 256, 512] {
            let u = random_tensor(&mut rng, &[2, l, 4]);
            worst = worst.max(mode_gap(&ssm, &u, false)?);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-6, || format!("max relative gap {worst:.3e} > 1e-6"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("max relative gap {worst:.3e} over 150 sequences in {:.1} s", elapsed.as_secs_f64()))
}

fn gradient_fidelity() -> Result<String, String> {
    let start = Instant::now();
    let cfg = ModelConfig {
        d_model: 4,
        d_state: 4,
        n_layer: 2,
        input_dim: 5,
        lookback: 8,
        ..ModelConfig::default()
    };
    let err = model_gradient_error(&cfg, 2, 7)?;
    let elapsed = start.elapsed();
    ensure(err <= 1e-3, || format!("relative gradient error {err:.3e} > 1e-3"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("relative gradient error {err:.3e} in {:.1} s", elapsed.as_secs_f64()))
}

fn random_record(rng: &mut ChaCha8Rng, days: usize) -> BasinRecord {
    BasinRecord {
        basin_id: "random".into(),
        start: date(2000, 1, 1),
        forcing: (0..days)
            .map(|_| std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal)))
            .collect(),
        attributes: Vec::new(),
        discharge: (0..days).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect(),
    }
}

fn stability() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lookback = 16;
    let records = vec![random_record(&mut rng, 64 + lookback)];
    let period = Period::new(records[0].start, records[0].date(records[0].len() - 1)).unwrap();
    let norm = fit_normalizer(&records, &[], &period).map_err(|e| e.to_string())?;
    let data = WindowedDataset::training(&records, &period, &norm, lookback).map_err(|e| e.to_string())?;
    let mc = ModelConfig {
        d_model: 8,
        d_state: 8,
        n_layer: 2,
        input_dim: 5,
        lookback,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 50,
        epochs_scheduler: 50,
        batch_size: 16,
        lr: 1e-2,
        lr_min: 1e-3,
        lr_dt: 1e-2,
        seeds: vec![1],
        train_period: period,
        test_period: period,
        ..TrainConfig::default()
    };
    let model = build_model(&mc, 1).map_err(|e| e.to_string())?;
    let out = train(model, &data, &tc, 1, |_| {}).map_err(|e| e.to_string())?;
    ensure(out.optimizer.step == 200, || format!("ran {} steps, expected 200", out.optimizer.step))?;
    let (mut poles, mut max_re, mut max_abs) = (0, f64::NEG_INFINITY, 0.0f64);
    for b in &out.model.blocks {
        for a in b.ssm.poles() {
            ensure(a.re < 0.0, || format!("pole with Re(a) = {}", a.re))?;
            max_re = max_re.max(a.re);
            poles += 1;
        }
        for z in b.ssm.discretize_zoh().a_bar {
            ensure(z.norm() < 1.0, || format!("|a_bar| = {}", z.norm()))?;
            max_abs = max_abs.max(z.norm());
        }
    }
    Ok(format!("200 steps, {poles} poles, max Re(a) {max_re:.3e}, max |a_bar| {max_abs:.9}"))
}

mod oracle {
    pub fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    fn pop_std(x: &[f64]) -> f64 {
        let m = mean(x);
        (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
    }

    pub fn pearson(o: &[f64], s: &[f64]) -> f64 {
        let (mo, ms) = (mean(o), mean(s));
        let mut num = 0.0;
        let (mut so, mut ss) = (0.0, 0.0);
        for i in 0..o.len() {
            num += (o[i] - mo) * (s[i] - ms);
            so += (o[i] - mo).powi(2);
            ss += (s[i] - ms).powi(2);
        }
        num / (so * ss).sqrt()
    }

    pub fn nse(o: &[f64], s: &[f64]) -> f64 {
        let mo = mean(o);
        let num: f64 = o.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = o.iter().map(|a| (a - mo).powi(2)).sum();
        1.0 - num / den
    }

    pub fn kge(o: &[f64], s: &[f64]) -> f64 {
        let r = pearson(o, s);
        let beta = mean(s) / mean(o);
        let alpha = pop_std(s) / pop_std(o);
        1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt()
    }

    fn desc(x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn fhv(o: &[f64], s: &[f64]) -> f64 {
        let h = (o.len() * 2 / 100).max(1);
        let (o, s) = (desc(o), desc(s));
        let num: f64 = (0..h).map(|i| s[i] - o[i]).sum();
        let den: f64 = o[..h].iter().sum();
        num / den * 100.0
    }

    fn low_volume(x: &[f64]) -> f64 {
        let n = x.len();
        let v = desc(x);
        let seg: Vec<f64> = (1..=n)
            .filter(|&rank| rank as f64 / (n as f64 + 1.0) >= 0.7)
            .map(|rank| v[rank - 1].max(1e-6).ln())
            .collect();
        let floor = seg.iter().cloned().fold(f64::INFINITY, f64::min);
        seg.iter().map(|l| l - floor).sum()
    }

    pub fn flv(o: &[f64], s: &[f64]) -> f64 {
        let (lo, ls) = (low_volume(o), low_volume(s));
        (-ls + lo) / lo * 100.0
    }

    pub fn pbias(o: &[f64], s: &[f64]) -> f64 {
        (s.iter().sum::<f64>() - o.iter().sum::<f64>()) / o.iter().sum::<f64>() * 100.0
    }
}

fn random_series(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let obs: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < 0.05 { 0.0 } else { (rng.random::<f64>() * 4.0 - 2.0).exp() })
        .collect();
    let a = rng.random_range(0.6..1.4);
    let sim = obs.iter().map(|q| a * q + rng.random_range(-0.2..0.4)).collect();
    let reference = obs.iter().map(|q| q * 0.9 + rng.random_range(0.0..0.5)).collect();
    (obs, sim, reference)
}

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0.0f64;
    let mut track = |name: &str, got: f64, want: f64| -> Result<(), String> {
        let e = (got - want).abs();
        ensure(e <= 1e-10, || format!("{name}: {got} vs oracle {want}"))?;
        worst = worst.max(e);
        Ok(())
    };
    for _ in 0..100 {
        let (o, s, r) = random_series(&mut rng, 730);
        let m = metric_suite(&o, &s).map_err(|e| e.to_string())?;
        let mr = metric_suite(&o, &r).map_err(|e| e.to_string())?;
        track("nse", m.nse, oracle::nse(&o, &s))?;
        track("kge", m.kge, oracle::kge(&o, &s))?;
        track("pearson_r", m.pearson_r, oracle::pearson(&o, &s))?;
        track("fhv", m.fhv, oracle::fhv(&o, &s))?;
        track("flv", m.flv, oracle::flv(&o, &s))?;
        track("pbias", m.pbias, oracle::pbias(&o, &s))?;
        let (nm, nr) = (oracle::nse(&o, &s), oracle::nse(&o, &r));
        let (km, kr) = (oracle::kge(&o, &s), oracle::kge(&o, &r));
        track("nse skill", skill_score(m.nse, mr.nse).map_err(|e| e.to_string())?, (nm - nr) / (1.0 - nr))?;
        track("kge skill", skill_score(m.kge, mr.kge).map_err(|e| e.to_string())?, (km - kr) / (1.0 - kr))?;
        let imp = improvements(&MetricReport::new("b", 1, m), &MetricReport::new("b", 1, mr), FhvImprovement::Verbatim)
            .map_err(|e| e.to_string())?;
        let (fm, fr) = (oracle::fhv(&o, &s), oracle::fhv(&o, &r));
        let (rm, rr) = (oracle::pearson(&o, &s), oracle::pearson(&o, &r));
        let (pm, pr) = (oracle::pbias(&o, &s), oracle::pbias(&o, &r));
        track("fhv improvement", imp.fhv, ((fr - 1.0).abs() - (fm - 1.0).abs()) / 100.0)?;
        track("r improvement", imp.pearson_r, (rr - 1.0).abs() - (rm - 1.0).abs())?;
        track("pbias improvement", imp.pbias, (pr.abs() - pm.abs()) / 100.0)?;
        let (g1, g2) = (oracle::mean(&o), oracle::mean(&s));
        let pd = percentage_difference(g2, g1).ok_or("percentage difference undefined")?;
        track("percentage difference", pd, (g2 - g1) / g1 * 100.0)?;
    }
    let m = metric_suite(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).map_err(|e| e.to_string())?;
    ensure(m.nse == 0.8, || format!("worked NSE {} != 0.8", m.nse))?;
    let o = [0.5, 1.0, 3.0, 2.0, 6.0, 0.25];
    let s: Vec<f64> = o.iter().map(|q| 2.0 * q).collect();
    let m = metric_suite(&o, &s).map_err(|e| e.to_string())?;
    ensure(m.kge == 1.0 - 2f64.sqrt(), || format!("worked KGE {} != 1 - sqrt 2", m.kge))?;
    ensure(m.pbias == 100.0, || format!("worked pbias {} != 100", m.pbias))?;
    Ok(format!("100 series, 13 quantities, max abs error {worst:.3e}; worked NSE 0.8 and KGE 1-sqrt(2) exact"))
}

fn skill_on_medians() -> Result<String, String> {
    let nse = skill_score(0.74, 0.72).map_err(|e| e.to_string())?;
    let kge = skill_score(0.75, 0.74).map_err(|e| e.to_string())?;
    let (en, ek) = ((nse - 1.0 / 14.0).abs(), (kge - 1.0 / 26.0).abs());
    ensure(en <= 1e-9 && ek <= 1e-9, || format!("nse skill {nse}, kge skill {kge}"))?;
    Ok(format!("nse skill {nse:.12}, kge skill {kge:.12}"))
}

fn signature_oracles() -> Result<String, String> {
    let sig = |q: &[Option<f64>]| signatures(q).map_err(|e| e.to_string());
    let quantile_close = |a: f64, b: f64| (a - b).abs() <= 1e-12;

    let s = sig(&vec![Some(1.0); 365])?;
    ensure(s.q_mean == 1.0 && quantile_close(s.q5, 1.0) && quantile_close(s.q95, 1.0), || format!("{s:?}"))?;
    ensure(
        [s.high_q_freq, s.high_q_dur, s.low_q_freq, s.low_q_dur, s.zero_q_freq] == [0.0; 5],
        || format!("constant series: {s:?}"),
    )?;

    let mut q = vec![Some(0.0); 365];
    for d in &mut q[50..60] {
        *d = Some(10.0);
    }
    let s = sig(&q)?;
    ensure(s.zero_q_freq == 355.0 / 365.0 * 100.0, || format!("zero_q_freq {}", s.zero_q_freq))?;

    let mut q = vec![Some(2.0); 730];
    for d in &mut q[300..303] {
        *d = Some(30.0);
    }
    let s = sig(&q)?;
    ensure(s.high_q_freq == 3.0 * 365.25 / 730.0, || format!("high_q_freq {}", s.high_q_freq))?;
    ensure(s.high_q_dur == 3.0, || format!("high_q_dur {}", s.high_q_dur))?;
    ensure(quantile_close(s.q5, 2.0), || format!("q5 {}", s.q5))?;
    Ok("constant, ten-day and three-day-burst series match hand counts".into())
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

/// NSE of every member of a finished run against its data directory.
fn member_nse(run_dir: &Path, data_dir: &Path) -> Result<Vec<f64>, String> {
    let rows = read_predictions(&run_dir.join("predictions.csv")).map_err(|e| e.to_string())?;
    let obs = load_observations(&DataDir::new(data_dir), &["00000001".to_string()]).map_err(|e| e.to_string())?;
    let reports = evaluate(&rows, &obs).map_err(|e| e.to_string())?;
    Ok(reports.iter().map(|r| r.metrics.nse).collect())
}

fn reservoir_data(dir: &Path, years: u32, weekly_pulse: f64) -> PathBuf {
    let spec = reservoir_basin(date(1990, 10, 1), years, 1, weekly_pulse, 0.0);
    let data = dir.join("data");
    write_data_dir(&DataDir::new(&data), &[], &[hydro_ssm::data::synthetic::generate(&spec, false)]).unwrap();
    data
}

fn train_args(config: PathBuf, out: PathBuf, variant: Option<Variant>) -> TrainArgs {
    TrainArgs {
        config,
        output_dir: Some(out),
        variant,
        quiet: true,
        ..TrainArgs::default()
    }
}

const RESERVOIR_CONFIG: &str = r#"
data_dir = "data"
use_attributes = false

[model]
d_model = 32
d_state = 16
n_layer = 2
input_dim = 5
lookback = 365

[train]
epochs = 50
epochs_scheduler = 50
seeds = [1]
train_period = { start = "1990-10-01", end = "1997-09-30" }
test_period = { start = "1997-10-01", end = "2000-09-30" }
"#;

fn synthetic_learnability() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = reservoir_data(dir.path(), 10, 0.0);
    let config = write_config(dir.path(), RESERVOIR_CONFIG);
    let run = dir.path().join("run");
    cmd_train(&train_args(config, run.clone(), None)).map_err(|e| e.to_string())?;
    let nse = member_nse(&run, &data)?[0];
    let elapsed = start.elapsed();
    ensure(nse >= 0.90, || format!("test NSE {nse:.4} < 0.90 after 50 epochs ({:.0} s)", elapsed.as_secs_f64()))?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("test NSE {nse:.4} after 50 epochs in {:.0} s", elapsed.as_secs_f64()))
}

const PULSE_CONFIG: &str = r#"
data_dir = "data"
use_attributes = false

[model]
d_model = 16
d_state = 16
n_layer = 2
input_dim = 5
lookback = 120

[train]
epochs = 50
epochs_scheduler = 50
seeds = [1, 2, 3]
train_period = { start = "1990-10-01", end = "1994-09-30" }
test_period = { start = "1994-10-01", end = "1996-09-30" }
"#;

fn frequency_tuning_direction() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = reservoir_data(dir.path(), 6, 25.0);
    let config = write_config(dir.path(), PULSE_CONFIG);
    let mut medians = Vec::new();
    for variant in [Variant::S4dFt, Variant::S4d] {
        let run = dir.path().join(format!("{variant:?}"));
        cmd_train(&train_args(config.clone(), run.clone(), Some(variant))).map_err(|e| e.to_string())?;
        medians.push(median(member_nse(&run, &data)?));
    }
    let (ft, basic) = (medians[0], medians[1]);
    ensure(ft >= basic, || format!("median NSE S4D-FT {ft:.4} < S4D {basic:.4}"))?;
    Ok(format!("median test NSE over 3 seeds: S4D-FT {ft:.4}, S4D {basic:.4}"))
}

fn fixture_end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let failed: Vec<String> = run_selfcheck(&SelfcheckOptions::default())
        .into_iter()
        .filter(|r| !r.passed)
        .map(|r| r.to_string())
        .collect();
    ensure(failed.is_empty(), || failed.join("; "))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = dir.path().join("smoke");
    let report = cmd_train(&train_args(fixtures().join("smoke.toml"), run.clone(), None)).map_err(|e| e.to_string())?;
    ensure(report.members == [1, 2], || format!("members {:?}", report.members))?;
    for seed in [1, 2] {
        let p = run.join(format!("checkpoints/seed_{seed}.ckpt"));
        ensure(p.is_file(), || format!("{} missing", p.display()))?;
    }
    let rows = read_predictions(&run.join("predictions.csv")).map_err(|e| e.to_string())?;
    ensure(!rows.is_empty(), || "no predictions".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(900), || format!("took {elapsed:?}"))?;
    Ok(format!("selfcheck clean, 2 members, {} prediction rows in {:.1} s", rows.len(), elapsed.as_secs_f64()))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        cmd_train(&train_args(fixtures().join("smoke.toml"), run.clone(), None)).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(run.join("predictions.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "prediction files differ".into())?;
    Ok(format!("two runs wrote identical {}-byte prediction files", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("mode equivalence", mode_equivalence),
        ("gradient fidelity", gradient_fidelity),
        ("stability after training", stability),
        ("metric oracles", metric_oracles),
        ("skill scores on fixed medians", skill_on_medians),
        ("signature oracles", signature_oracles),
        ("synthetic learnability", synthetic_learnability),
        ("frequency tuning direction", frequency_tuning_direction),
        ("fixture end to end", fixture_end_to_end),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {id} {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {id} {name}: {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
