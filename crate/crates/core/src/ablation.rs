//! The component ablation grid: baseline, two paths, low-level modulation,
//! cross-path modulation, both modulations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{render_rows, MetricsReport};
use crate::network::{AquaNet, AquaNetConfig};
use crate::taxonomy::ClassTaxonomy;
use crate::training::{evaluate, train, TrainConfig, TrainOptions, TrainPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub two_paths: bool,
    pub low_level_modulation: bool,
    pub cross_path_modulation: bool,
}

/// `(row label, toggles)` in table order.
pub const ABLATION_ROWS: [(&str, Toggles); 5] = [
    ("baseline", Toggles::new(false, false, false)),
    ("+two paths", Toggles::new(true, false, false)),
    ("+two paths +LM", Toggles::new(true, true, false)),
    ("+two paths +CM", Toggles::new(true, false, true)),
    ("+two paths +LM +CM", Toggles::new(true, true, true)),
];

impl Toggles {
    pub const fn new(two_paths: bool, low_level_modulation: bool, cross_path_modulation: bool) -> Self {
        Self {
            two_paths,
            low_level_modulation,
            cross_path_modulation,
        }
    }

    pub fn apply(self, cfg: &AquaNetConfig) -> AquaNetConfig {
        cfg.clone()
            .with_toggles(self.two_paths, self.low_level_modulation, self.cross_path_modulation)
    }

    /// Directory-safe row tag, e.g. `tp1_lm0_cm1`.
    pub fn tag(self) -> String {
        format!(
            "tp{}_lm{}_cm{}",
            self.two_paths as u8, self.low_level_modulation as u8, self.cross_path_modulation as u8
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: Toggles,
    pub model: AquaNetConfig,
    pub num_params: usize,
    pub report: MetricsReport,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const COLUMNS: [&'static str; 4] = ["A-acc", "A-mIoU", "acc", "mIoU"];

    /// Values in percent, `None` where undefined.
    pub fn values(row: &AblationRow) -> [Option<f64>; 4] {
        let r = &row.report;
        [r.a_acc, r.a_miou, Some(r.acc), Some(r.miou)].map(|v| v.map(|x| 100.0 * x))
    }

    pub fn render_table(&self) -> String {
        let headers: Vec<String> = Self::COLUMNS.iter().map(|s| s.to_string()).collect();
        let rows: Vec<(String, Vec<Option<f64>>)> = self.rows.iter().map(|r| (r.label.clone(), Self::values(r).to_vec())).collect();
        render_rows(&headers, &rows)
    }
}

/// Trains every grid row from the same seed and schedule, then evaluates
/// on `eval`. With `out_dir`, each row's checkpoint and loss log go to
/// `out_dir/<tag>/`.
pub fn run_ablation(
    base: &AquaNetConfig,
    train_cfg: &TrainConfig,
    taxonomy: &ClassTaxonomy,
    train_data: &[TrainPair],
    eval_data: &[TrainPair],
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (label, toggles) in ABLATION_ROWS {
        let model = toggles.apply(base);
        let mut net = AquaNet::new(model.clone(), taxonomy.clone())?;
        let row_dir = out_dir.map(|d| d.join(toggles.tag()));
        let opts = TrainOptions {
            out_dir: row_dir.as_deref(),
            progress_every: 0,
        };
        let log = train(&mut net, train_cfg, train_data, &opts)?.log;
        log::info!("ablation row `{label}` trained ({} iterations)", log.rows.len());
        let report = evaluate(&net, eval_data, taxonomy)?;
        rows.push(AblationRow {
            label: label.to_string(),
            toggles,
            num_params: net.num_params(),
            model,
            report,
            final_loss: log.rows.last().map(|r| r.loss_total),
        });
    }
    Ok(AblationTable { rows })
}
