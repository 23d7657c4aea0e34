//! Component ablations: four single-removal variants plus the full model.

use std::fmt::Write as _;
use std::path::Path;

use ig_core::dataset::SplitName;
use ig_core::eval::{evaluate, MetricsReport};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::PreparedData;
use super::detector::ModelDetector;
use super::train::train_prepared;
use crate::losses::AblationFlags;
use crate::NetError;

/// Which components a row keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    pub verb: bool,
    pub verb2obj: bool,
    pub matchbox: bool,
    pub adapt: bool,
}

impl Components {
    pub fn flags(self) -> AblationFlags {
        AblationFlags {
            no_verb_align: !self.verb,
            no_verb2obj: !self.verb2obj,
            no_matchbox: !self.matchbox,
            no_adapt: !self.adapt,
        }
    }
}

/// Row ids, kept components and published val Top1-Acc@0.25 / @0.5.
pub const ABLATION_ROWS: [(&str, Components, [f64; 2]); 5] = [
    ("a", Components { verb: false, verb2obj: true, matchbox: true, adapt: true }, [53.09, 34.62]),
    ("b", Components { verb: true, verb2obj: false, matchbox: true, adapt: true }, [57.87, 39.42]),
    ("c", Components { verb: true, verb2obj: true, matchbox: false, adapt: true }, [56.25, 38.37]),
    ("d", Components { verb: true, verb2obj: true, matchbox: true, adapt: false }, [57.39, 36.93]),
    ("e", Components { verb: true, verb2obj: true, matchbox: true, adapt: true }, [58.34, 40.83]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: String,
    pub components: Components,
    pub flags: AblationFlags,
    pub metrics: MetricsReport,
    pub best_epoch: usize,
    pub reference_top1_acc_25: f64,
    pub reference_top1_acc_50: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: SplitName,
    pub rows: Vec<AblationRow>,
    /// For each ablated row, whether removing its component lowered
    /// Top1-Acc@0.25 relative to the full model, as the reference rows do.
    pub agrees_with_reference: Vec<(String, bool)>,
    pub note: String,
}

impl AblationReport {
    pub fn to_markdown(&self) -> String {
        let mark = |b: bool| if b { "x" } else { " " };
        let mut s = format!("Ablations on the {} split\n\n", self.split);
        s.push_str("| ID | Verb | Verb2Obj | MatchBox | Adapt | Top1-Acc@0.25 | Top1-Acc@0.5 | ref @0.25 | ref @0.5 |\n");
        s.push_str("|----|------|----------|----------|-------|---------------|--------------|-----------|----------|\n");
        for r in &self.rows {
            let c = r.components;
            let _ = writeln!(
                s,
                "| ({}) | {} | {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
                r.id,
                mark(c.verb),
                mark(c.verb2obj),
                mark(c.matchbox),
                mark(c.adapt),
                r.metrics.top1_acc_25,
                r.metrics.top1_acc_50,
                r.reference_top1_acc_25,
                r.reference_top1_acc_50
            );
        }
        s.push('\n');
        s.push_str(&self.note);
        s.push('\n');
        s
    }
}

/// Trains every row from the same seed and scores it on the evaluation split.
pub fn run_ablation(base: &RunConfig, data: &PreparedData) -> Result<AblationReport, NetError> {
    let split = base.train.eval_split;
    let (_, raw) = data.split(split)?;
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (id, components, reference) in ABLATION_ROWS {
        let mut cfg = base.clone();
        cfg.train.ablation = components.flags();
        log::info!("ablation row ({id}) with {:?}", cfg.train.ablation);
        let outcome = train_prepared(&cfg, data, None)?;
        let metrics = evaluate(&mut ModelDetector::new(&outcome.model, data, &cfg), raw)?;
        rows.push(AblationRow {
            id: id.to_string(),
            components,
            flags: cfg.train.ablation,
            metrics,
            best_epoch: outcome.best_epoch,
            reference_top1_acc_25: reference[0],
            reference_top1_acc_50: reference[1],
        });
    }
    let full = rows.last().expect("five rows").metrics.top1_acc_25;
    let agrees_with_reference = rows[..4]
        .iter()
        .map(|r| (r.id.clone(), r.metrics.top1_acc_25 <= full))
        .collect();
    Ok(AblationReport {
        split,
        rows,
        agrees_with_reference,
        note: "Reference columns were measured on real scans with pretrained backbones and are \
               shown for direction only; desk-scale differences can exceed their margins."
            .to_string(),
    })
}

/// Runs the ablation on a dataset directory and writes `ablation.json` and
/// `ablation.md` into `out_dir`.
pub fn run_ablation_dir(base: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<AblationReport, NetError> {
    base.validate()?;
    let data = PreparedData::load(data_dir, &base.model)?;
    let report = run_ablation(base, &data)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| NetError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let json = out_dir.join("ablation.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report).expect("reports serialize")).map_err(io(&json))?;
    let md = out_dir.join("ablation.md");
    std::fs::write(&md, report.to_markdown()).map_err(io(&md))?;
    Ok(report)
}
