//! The modality ablation grid: every combination under both protocols and
//! both targets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::{kfold_cv, loso_cv, CvError, CvResult, Protocol};
use super::features::TrialFeatures;
use super::model::{ModalityCombo, Target, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecognitionConfig {
    pub train: TrainConfig,
    pub k: usize,
    pub combos: Vec<ModalityCombo>,
    pub targets: Vec<Target>,
    pub protocols: Vec<Protocol>,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            k: 10,
            combos: ModalityCombo::ALL.to_vec(),
            targets: Target::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub protocol: Protocol,
    pub target: Target,
    pub combo: ModalityCombo,
    pub acc_mean: f64,
    pub acc_sd: f64,
    pub mf1_mean: f64,
    pub mf1_sd: f64,
    pub units: usize,
    /// Highest mean accuracy in its (protocol, target) column.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub n_trials: usize,
    pub n_subjects: usize,
    pub cells: Vec<AblationCell>,
    pub warnings: Vec<String>,
    pub results: Vec<CvResult>,
}

pub fn ablation_report(
    data: &[TrialFeatures],
    cfg: &RecognitionConfig,
) -> Result<AblationReport, CvError> {
    if data.is_empty() {
        return Err(CvError::Empty);
    }
    let mut results = Vec::new();
    for &protocol in &cfg.protocols {
        for &target in &cfg.targets {
            for &combo in &cfg.combos {
                results.push(match protocol {
                    Protocol::Loso => loso_cv(data, combo, target, &cfg.train)?,
                    Protocol::IntraSubject => kfold_cv(data, cfg.k, combo, target, &cfg.train)?,
                });
            }
        }
    }
    let mut cells: Vec<AblationCell> = results
        .iter()
        .map(|r| AblationCell {
            protocol: r.protocol,
            target: r.target,
            combo: r.combo,
            acc_mean: r.acc_mean,
            acc_sd: r.acc_sd,
            mf1_mean: r.mf1_mean,
            mf1_sd: r.mf1_sd,
            units: r.units.len(),
            best: false,
        })
        .collect();
    let mut best: BTreeMap<(Protocol, Target), usize> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        let e = best.entry((c.protocol, c.target)).or_insert(i);
        if c.acc_mean > cells[*e].acc_mean {
            *e = i;
        }
    }
    for i in best.into_values() {
        cells[i].best = true;
    }
    let mut warnings = Vec::new();
    for r in &results {
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    Ok(AblationReport {
        n_trials: data.len(),
        n_subjects: super::cv::by_subject(data).len(),
        cells,
        warnings,
        results,
    })
}

impl AblationReport {
    pub fn cell(
        &self,
        protocol: Protocol,
        target: Target,
        combo: ModalityCombo,
    ) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.protocol == protocol && c.target == target && c.combo == combo)
    }

    /// One table per protocol; rows are combinations, columns ACC and MF1
    /// per target. The best accuracy in each column is bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let protocols: Vec<Protocol> = dedup(self.cells.iter().map(|c| c.protocol));
        let targets: Vec<Target> = dedup(self.cells.iter().map(|c| c.target));
        let combos: Vec<ModalityCombo> = dedup(self.cells.iter().map(|c| c.combo));
        for p in protocols {
            let title = match p {
                Protocol::Loso => "Cross-subject (leave-one-subject-out)",
                Protocol::IntraSubject => "Intra-subject (stratified k-fold)",
            };
            let _ = writeln!(s, "### {title}\n");
            s.push_str("| Modality |");
            for t in &targets {
                let _ = write!(s, " {t} ACC | {t} MF1 |");
            }
            s.push_str("\n|---|");
            s.push_str(&"---|---|".repeat(targets.len()));
            s.push('\n');
            for c in &combos {
                let _ = write!(s, "| {c} |");
                for t in &targets {
                    match self.cell(p, *t, *c) {
                        Some(cell) => {
                            let acc = format!("{:.3}±{:.3}", cell.acc_mean, cell.acc_sd);
                            let acc = if cell.best { format!("**{acc}**") } else { acc };
                            let _ = write!(s, " {acc} | {:.3}±{:.3} |", cell.mf1_mean, cell.mf1_sd);
                        }
                        None => s.push_str(" - | - |"),
                    }
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }
}

fn dedup<T: Ord + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = it.collect();
    v.sort();
    v.dedup();
    v
}
