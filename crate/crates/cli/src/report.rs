use serde::{Deserialize, Serialize};
use was::baselines::Strategy;
use was::was::RunMetrics;
use was::RunConfig;

/// JSON schema every `metrics.json` written by `distill` conforms to.
pub const METRICS_SCHEMA: &str = include_str!("../schema/metrics.schema.json");

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRun {
    pub seed: u64,
    pub test_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub avg_selected: f64,
    pub top1_selected_ratio: f64,
    pub decoupled_ratio: f64,
}

impl SeedRun {
    pub fn new(seed: u64, m: &RunMetrics) -> Self {
        SeedRun {
            seed,
            test_acc: m.test_acc,
            val_acc: m.val_acc,
            best_epoch: m.best_epoch,
            avg_selected: m.avg_selected,
            top1_selected_ratio: m.top1_selected_ratio,
            decoupled_ratio: m.decoupled_ratio,
        }
    }
}

/// Contents of `metrics.json`: means over seeds at the top level, one entry
/// per seed under `runs`, and the run configuration of the first seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub bank_hash: String,
    pub seeds: Vec<u64>,
    pub test_acc: f64,
    pub test_acc_std: f64,
    pub val_acc: f64,
    pub val_acc_std: f64,
    pub avg_selected: f64,
    pub top1_selected_ratio: f64,
    pub decoupled_ratio: f64,
    pub runs: Vec<SeedRun>,
    pub config: RunConfig,
}

impl MetricsReport {
    pub fn new(strategy: Strategy, bank_hash: String, runs: Vec<SeedRun>, config: RunConfig) -> Self {
        let col = |f: fn(&SeedRun) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let (test_acc, test_acc_std) = mean_std(&col(|r| r.test_acc));
        let (val_acc, val_acc_std) = mean_std(&col(|r| r.val_acc));
        MetricsReport {
            strategy,
            bank_hash,
            seeds: runs.iter().map(|r| r.seed).collect(),
            test_acc,
            test_acc_std,
            val_acc,
            val_acc_std,
            avg_selected: mean_std(&col(|r| r.avg_selected)).0,
            top1_selected_ratio: mean_std(&col(|r| r.top1_selected_ratio)).0,
            decoupled_ratio: mean_std(&col(|r| r.decoupled_ratio)).0,
            runs,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub bank_hash: String,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("strategy,mean_acc,std_acc,bank_hash\n");
    for r in rows {
        out += &format!("{},{:.6},{:.6},{}\n", r.strategy, r.mean_acc, r.std_acc, r.bank_hash);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_the_sample_deviation() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn report_aggregates_runs() {
        let run = |seed, acc| SeedRun {
            seed,
            test_acc: acc,
            val_acc: 1.0,
            best_epoch: 3,
            avg_selected: 2.0,
            top1_selected_ratio: 0.5,
            decoupled_ratio: 0.25,
        };
        let r = MetricsReport::new(Strategy::Was, "h".into(), vec![run(4, 0.8), run(5, 0.9)], RunConfig::default());
        assert_eq!(r.seeds, vec![4, 5]);
        assert!((r.test_acc - 0.85).abs() < 1e-15);
        assert!((r.test_acc_std - 0.005f64.sqrt()).abs() < 1e-15);
        assert_eq!((r.val_acc, r.val_acc_std, r.avg_selected), (1.0, 0.0, 2.0));
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn ablation_csv_layout() {
        let rows = [AblationRow {
            strategy: Strategy::ImportanceTopk(3),
            mean_acc: 0.5,
            std_acc: 0.125,
            bank_hash: "ab".into(),
        }];
        assert_eq!(ablation_csv(&rows), "strategy,mean_acc,std_acc,bank_hash\ntopk3,0.500000,0.125000,ab\n");
    }
}
