use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{improvements, pearson, percentage_difference, skill_score, FhvImprovement, Improvements, MetricReport, Metrics};
use super::signatures::SignatureSet;
use super::EvalError;

/// Groups smaller than this get no correlation coefficients.
pub const MIN_GROUP_FOR_CORRELATION: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinAttribution {
    pub basin_id: String,
    /// 1 when both skill scores are positive, otherwise 2.
    pub group: u8,
    pub nse_skill: f64,
    pub kge_skill: f64,
    pub improvements: Improvements,
}

/// Correlations keyed by skill score (`nse_skill`, `kge_skill`) and then by
/// improvement or signature name. `None` marks an undefined coefficient.
pub type CorrelationTable = BTreeMap<String, BTreeMap<String, Option<f64>>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAnalysis {
    pub basins: Vec<String>,
    pub skill_vs_improvement: CorrelationTable,
    pub skill_vs_signature: CorrelationTable,
    pub signature_means: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub fhv_improvement: FhvImprovement,
    pub basins: Vec<BasinAttribution>,
    pub group_1: GroupAnalysis,
    pub group_2: GroupAnalysis,
    /// `(mean_group2 - mean_group1) / mean_group1 * 100` per signature.
    pub percentage_differences: BTreeMap<String, Option<f64>>,
}

const IMPROVEMENT_NAMES: [&str; 3] = ["fhv", "pearson_r", "pbias"];

fn improvement_values(i: &Improvements) -> [f64; 3] {
    [i.fhv, i.pearson_r, i.pbias]
}

/// Skill scores, improvements and group of every basin in both tables.
pub fn basin_skills(
    model: &BTreeMap<String, Metrics>,
    reference: &BTreeMap<String, Metrics>,
    fhv_form: FhvImprovement,
) -> Result<Vec<BasinAttribution>, EvalError> {
    if let Some(b) = model.keys().find(|b| !reference.contains_key(*b)) {
        return Err(EvalError::MissingBasin {
            basin: b.clone(),
            table: "reference metrics".into(),
        });
    }
    if let Some(b) = reference.keys().find(|b| !model.contains_key(*b)) {
        return Err(EvalError::MissingBasin {
            basin: b.clone(),
            table: "model metrics".into(),
        });
    }
    if model.is_empty() {
        return Err(EvalError::Empty("metrics table".into()));
    }
    model
        .iter()
        .map(|(b, m)| {
            let r = &reference[b];
            let nse_skill = skill_score(m.nse, r.nse)?;
            let kge_skill = skill_score(m.kge, r.kge)?;
            let imp = improvements(&MetricReport::new(b, 0, *m), &MetricReport::new(b, 0, *r), fhv_form)?;
            Ok(BasinAttribution {
                basin_id: b.clone(),
                group: if nse_skill > 0.0 && kge_skill > 0.0 { 1 } else { 2 },
                nse_skill,
                kge_skill,
                improvements: imp,
            })
        })
        .collect()
}

/// Split basins by skill of `model` over `reference` and relate the skill
/// scores to metric improvements and to observed-flow signatures.
pub fn attribution(
    model: &BTreeMap<String, Metrics>,
    reference: &BTreeMap<String, Metrics>,
    signatures: &BTreeMap<String, SignatureSet>,
    fhv_form: FhvImprovement,
) -> Result<AttributionReport, EvalError> {
    let basins = basin_skills(model, reference, fhv_form)?;
    let sigs = basins
        .iter()
        .map(|b| {
            signatures.get(&b.basin_id).copied().ok_or_else(|| EvalError::MissingBasin {
                basin: b.basin_id.clone(),
                table: "signatures".into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let analyse = |g: u8| {
        let idx: Vec<usize> = (0..basins.len()).filter(|&i| basins[i].group == g).collect();
        group_analysis(&basins, &sigs, &idx)
    };
    let (group_1, group_2) = (analyse(1), analyse(2));
    let percentage_differences = SignatureSet::NAMES
        .iter()
        .map(|n| {
            let d = match (group_2.signature_means[*n], group_1.signature_means[*n]) {
                (Some(g2), Some(g1)) => percentage_difference(g2, g1),
                _ => None,
            };
            (n.to_string(), d)
        })
        .collect();
    Ok(AttributionReport {
        fhv_improvement: fhv_form,
        basins,
        group_1,
        group_2,
        percentage_differences,
    })
}

fn group_analysis(basins: &[BasinAttribution], sigs: &[SignatureSet], idx: &[usize]) -> GroupAnalysis {
    let enough = idx.len() >= MIN_GROUP_FOR_CORRELATION;
    let skills: [(&str, Vec<f64>); 2] = [
        ("nse_skill", idx.iter().map(|&i| basins[i].nse_skill).collect()),
        ("kge_skill", idx.iter().map(|&i| basins[i].kge_skill).collect()),
    ];
    let table = |names: &[&str], column: &dyn Fn(usize, usize) -> f64| -> CorrelationTable {
        skills
            .iter()
            .map(|(s, sv)| {
                let row = names
                    .iter()
                    .enumerate()
                    .map(|(k, n)| {
                        let col: Vec<f64> = idx.iter().map(|&i| column(i, k)).collect();
                        (n.to_string(), if enough { pearson(sv, &col) } else { None })
                    })
                    .collect();
                (s.to_string(), row)
            })
            .collect()
    };
    let skill_vs_improvement = table(&IMPROVEMENT_NAMES, &|i, k| improvement_values(&basins[i].improvements)[k]);
    let skill_vs_signature = table(&SignatureSet::NAMES, &|i, k| sigs[i].values()[k]);
    let signature_means = SignatureSet::NAMES
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let m = (!idx.is_empty()).then(|| idx.iter().map(|&i| sigs[i].values()[k]).sum::<f64>() / idx.len() as f64);
            (n.to_string(), m)
        })
        .collect();
    GroupAnalysis {
        basins: idx.iter().map(|&i| basins[i].basin_id.clone()).collect(),
        skill_vs_improvement,
        skill_vs_signature,
        signature_means,
    }
}
