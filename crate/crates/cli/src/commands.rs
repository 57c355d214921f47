use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use hydro_ssm::data::synthetic::{self, SyntheticBasin};
use hydro_ssm::data::{convert_camels, load_basin_list, load_dataset, write_attributes, write_basin, write_basin_list, CamelsLayout};
use hydro_ssm::eval::{
    aggregate, attribution, basin_medians, basin_skills, evaluate, improvement_ratios, load_observations, read_metrics,
    read_signatures, record_signatures, skill_score, write_json, write_metrics, write_signatures, write_skill_scores,
    FhvImprovement, Ratio, Summary,
};
use hydro_ssm::selfcheck::{run_selfcheck, CheckResult, SelfcheckOptions};
use hydro_ssm::train::{predict, read_predictions, run_ensemble, write_loss_log, write_predictions};
use hydro_ssm::{BasinRecord, Checkpoint, DataDir, Period, PredictionRow};
use serde::Serialize;

use crate::config::{RunConfig, DATA_DIR_ENV};
use crate::{
    AttributeArgs, CamelsArgs, CliError, EvaluateArgs, PredictArgs, Preset, SelfcheckArgs, SignaturesArgs, SyntheticArgs,
    TrainArgs, Variant,
};

const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_DIR: &str = "checkpoints";

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn data_dir_or_env(flag: Option<&Path>) -> Result<DataDir, CliError> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .map(DataDir::new)
        .ok_or_else(|| CliError::Usage(format!("no data directory given and {DATA_DIR_ENV} is not set")))
}

fn period_or(start: Option<NaiveDate>, end: Option<NaiveDate>, default: Period) -> Result<Period, CliError> {
    match (start, end) {
        (Some(s), Some(e)) => Ok(Period::new(s, e)?),
        _ => Ok(default),
    }
}

pub fn checkpoint_path(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("seed_{seed}.ckpt"))
}

pub fn cmd_ingest_camels(args: &CamelsArgs) -> Result<(), CliError> {
    let basins = load_basin_list(&args.basins)?;
    let mut layout = CamelsLayout::new(&args.camels_root);
    layout.source = args.forcing_source.clone();
    let records = convert_camels(&layout, &basins, &DataDir::new(&args.out))?;
    println!("converted {} basin(s) into {}", records.len(), args.out.display());
    Ok(())
}

/// Write records, attribute table and basin list into a data directory.
pub fn write_data_dir(dir: &DataDir, attribute_names: &[String], records: &[BasinRecord]) -> Result<(), CliError> {
    for r in records {
        write_basin(dir, r)?;
    }
    write_attributes(&dir.attributes(), attribute_names, records)?;
    let ids: Vec<String> = records.iter().map(|r| r.basin_id.clone()).collect();
    write_basin_list(&dir.basin_list(), &ids)?;
    Ok(())
}

/// The reservoir preset basin: `years` calendar years from `start`.
pub fn reservoir_basin(start: NaiveDate, years: u32, seed: u64, weekly_pulse: f64, missing_fraction: f64) -> SyntheticBasin {
    let end = start
        .checked_add_months(chrono::Months::new(12 * years))
        .expect("date in range");
    let mut spec = SyntheticBasin::new("00000001", start, (end - start).num_days() as usize, seed);
    spec.params.weekly_pulse = weekly_pulse;
    spec.missing_fraction = missing_fraction;
    spec
}

pub fn cmd_ingest_synthetic(args: &SyntheticArgs) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&args.missing_fraction) {
        return Err(CliError::Usage(format!("missing fraction must lie in [0, 1), got {}", args.missing_fraction)));
    }
    if !(args.weekly_pulse >= 0.0 && args.weekly_pulse.is_finite()) {
        return Err(CliError::Usage(format!("weekly pulse must be non-negative, got {}", args.weekly_pulse)));
    }
    let (names, records) = match args.preset {
        Preset::TwoBasin => (
            hydro_ssm::data::ATTRIBUTE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            synthetic::two_basin_fixture(),
        ),
        Preset::Reservoir => {
            if args.years == 0 {
                return Err(CliError::Usage("years must be positive".into()));
            }
            let spec = reservoir_basin(args.start, args.years, args.seed, args.weekly_pulse, args.missing_fraction);
            (Vec::new(), vec![synthetic::generate(&spec, false)])
        }
    };
    write_data_dir(&DataDir::new(&args.out), &names, &records)?;
    println!("wrote {} basin(s) into {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Debug)]
pub struct TrainReport {
    pub output_dir: PathBuf,
    /// Seeds of members that trained successfully.
    pub members: Vec<u64>,
}

/// Config with command-line overrides applied.
fn train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seeds) = &args.seed_set {
        cfg.train.seeds = seeds.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(o) = &args.output_dir {
        cfg.output_dir = o.clone();
    }
    if args.variant == Some(Variant::S4d) {
        cfg.model = cfg.model.basic_s4d();
    }
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| CliError::io(p, e));
    cfg.data_dir = Some(abs(&cfg.resolved_data_dir()?)?);
    cfg.output_dir = abs(&cfg.output_dir)?;
    if let Some(b) = &cfg.basin_list {
        cfg.basin_list = Some(abs(b)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_run_data(cfg: &RunConfig) -> Result<(Vec<String>, Vec<BasinRecord>), CliError> {
    let dir = DataDir::new(cfg.resolved_data_dir()?);
    let list = cfg.basin_list.clone().unwrap_or_else(|| dir.basin_list());
    let basins = load_basin_list(&list)?;
    if basins.is_empty() {
        return Err(CliError::Usage(format!("{} lists no basins", list.display())));
    }
    let (mut names, mut records) = load_dataset(&dir, &basins)?;
    if !cfg.use_attributes {
        names.clear();
        for r in &mut records {
            r.attributes.clear();
        }
    }
    Ok((names, records))
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport, CliError> {
    let cfg = train_config(args)?;
    let (names, records) = load_run_data(&cfg)?;
    let out = cfg.output_dir.clone();
    create_dir(&out.join(CHECKPOINT_DIR))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let quiet = args.quiet;
    let log = move |seed: u64, e: &hydro_ssm::train::EpochLog| {
        if !quiet {
            eprintln!("seed {seed} epoch {} loss {:.6} lr {:.3e}", e.epoch, e.train_loss, e.lr);
        }
    };
    let ensemble = run_ensemble(&records, &names, &cfg.model, &cfg.train, cfg.jobs, &log)?;
    let mut rows = Vec::new();
    for m in &ensemble.members {
        m.checkpoint.save(&checkpoint_path(&out, m.checkpoint.seed))?;
        rows.extend(predict(&m.checkpoint, &records, &cfg.train.test_period)?);
    }
    write_loss_log(&out.join("loss_log.csv"), &ensemble.members)?;
    write_predictions(&out.join("predictions.csv"), &rows)?;
    for (seed, e) in &ensemble.failures {
        eprintln!("member {seed} failed: {e}");
    }
    if !ensemble.failures.is_empty() {
        return Err(CliError::MembersFailed {
            failed: ensemble.failures.len(),
            total: cfg.train.seeds.len(),
        });
    }
    Ok(TrainReport {
        output_dir: out,
        members: ensemble.members.iter().map(|m| m.checkpoint.seed).collect(),
    })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.run_dir.join(CONFIG_FILE))?;
    if let Some(d) = &args.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    let period = period_or(args.start, args.end, cfg.train.test_period)?;
    let (_, records) = load_run_data(&cfg)?;
    let mut rows: Vec<PredictionRow> = Vec::new();
    let mut found = 0;
    for seed in &cfg.train.seeds {
        let path = checkpoint_path(&args.run_dir, *seed);
        if !path.is_file() {
            continue;
        }
        let ck = Checkpoint::load(&path)?;
        rows.extend(predict(&ck, &records, &period)?);
        found += 1;
    }
    if found == 0 {
        return Err(CliError::Usage(format!("no checkpoints under {}", args.run_dir.join(CHECKPOINT_DIR).display())));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_predictions(&args.out, &rows)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianSkill {
    /// Skill of the mean of member medians.
    pub member_mean: f64,
    /// Skill of the median over all member-basin pairs.
    pub pooled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub fhv_improvement: FhvImprovement,
    pub model: Summary,
    pub reference: Option<Summary>,
    /// NSE and KGE skill of the model's summary medians over the reference's.
    pub median_skill: Option<BTreeMap<String, MedianSkill>>,
    pub improvement_ratios: Option<BTreeMap<String, Ratio>>,
}

fn read_all_predictions(paths: &[PathBuf]) -> Result<Vec<PredictionRow>, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_predictions(p)?);
    }
    Ok(rows)
}

fn basins_of(rows: &[PredictionRow]) -> Vec<String> {
    rows.iter()
        .map(|r| r.basin_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn median_skill(model: &Summary, reference: &Summary) -> Result<BTreeMap<String, MedianSkill>, CliError> {
    let mut out = BTreeMap::new();
    for name in ["nse", "kge"] {
        let (m, r) = (&model.metrics[name], &reference.metrics[name]);
        out.insert(
            name.to_string(),
            MedianSkill {
                member_mean: skill_score(m.mean, r.mean)?,
                pooled: skill_score(m.pooled_median, r.pooled_median)?,
            },
        );
    }
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let form = if args.fhv_corrected { FhvImprovement::Corrected } else { FhvImprovement::Verbatim };
    let dir = data_dir_or_env(args.obs_dir.as_deref())?;
    let rows = read_all_predictions(&args.predictions)?;
    if rows.is_empty() {
        return Err(CliError::Usage("prediction files contain no rows".into()));
    }
    let ref_rows = read_all_predictions(&args.reference)?;
    let mut basins = basins_of(&rows);
    basins.extend(basins_of(&ref_rows));
    basins.sort();
    basins.dedup();
    let obs = load_observations(&dir, &basins)?;
    let reports = evaluate(&rows, &obs)?;
    let model = aggregate(&reports)?;
    create_dir(&args.out)?;
    write_metrics(&args.out.join("metrics.csv"), &reports)?;
    let mut summary = EvaluationSummary {
        fhv_improvement: form,
        model,
        reference: None,
        median_skill: None,
        improvement_ratios: None,
    };
    if !args.reference.is_empty() {
        let ref_reports = evaluate(&ref_rows, &obs)?;
        let reference = aggregate(&ref_reports)?;
        write_metrics(&args.out.join("reference_metrics.csv"), &ref_reports)?;
        let (m, r) = (basin_medians(&reports), basin_medians(&ref_reports));
        write_skill_scores(&args.out.join("skill_scores.csv"), &basin_skills(&m, &r, form)?)?;
        summary.median_skill = Some(median_skill(&summary.model, &reference)?);
        summary.improvement_ratios = Some(improvement_ratios(&m, &r)?);
        summary.reference = Some(reference);
    }
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(())
}

pub fn cmd_signatures(args: &SignaturesArgs) -> Result<(), CliError> {
    let dir = data_dir_or_env(args.obs_dir.as_deref())?;
    let period = period_or(args.start, args.end, Period::default_test())?;
    let list = args.basins.clone().unwrap_or_else(|| dir.basin_list());
    let basins = load_basin_list(&list)?;
    let obs = load_observations(&dir, &basins)?;
    let sigs = record_signatures(&obs, &period)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_signatures(&args.out, &sigs)?;
    Ok(())
}

pub fn cmd_attribute(args: &AttributeArgs) -> Result<(), CliError> {
    let form = if args.fhv_corrected { FhvImprovement::Corrected } else { FhvImprovement::Verbatim };
    let model = basin_medians(&read_metrics(&args.metrics)?);
    let reference = basin_medians(&read_metrics(&args.reference_metrics)?);
    let sigs = read_signatures(&args.signatures)?;
    let report = attribution(&model, &reference, &sigs, form)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&args.out, &report)?;
    Ok(())
}

pub fn cmd_selfcheck(args: &SelfcheckArgs) -> Vec<CheckResult> {
    run_selfcheck(&SelfcheckOptions {
        seed: args.seed,
        kernel_sign_flip: args.inject_kernel_sign_flip,
    })
}
