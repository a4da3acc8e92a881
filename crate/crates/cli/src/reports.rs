//! `evaluate` and `report`: comma-separated tables with fixed headers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use phq_ensemble::io::{self, SystemKind};
use phq_ensemble::metrics::{
    binary_macro_f1, feature_correlation_report, item_alpha, per_item_report, regression_metrics, scatter_export,
    severity_macro_f1, ClassificationReport, Correlation,
};
use phq_ensemble::{Phq8Items, Prediction, Severity, SpeakerLabel};

use crate::archive::ModelArchive;
use crate::commands::{in_file, read_input};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::settings::Settings;
use crate::{EvaluateArgs, ReportArgs};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const PER_ITEM_FILE: &str = "per_item.csv";
pub const CRONBACH_FILE: &str = "cronbach.csv";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const FEATURES_FILE: &str = "feature_correlations.csv";

const NA: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| CliError::internal(e.to_string()))
}

fn corr_cells(c: &Correlation<f64>) -> [String; 2] {
    [opt(c.r()), opt(c.p_value())]
}

fn read_prediction_file(path: &Path) -> CliResult<(Vec<Prediction>, SystemKind)> {
    let preds = in_file(path, io::read_predictions(read_input(path)?.as_slice()))?;
    let Some(first) = preds.first() else {
        return Err(CliError::data(format!("{}: no predictions", path.display())));
    };
    let system = SystemKind::of(first);
    if let Some(p) = preds.iter().find(|p| SystemKind::of(p) != system) {
        return Err(CliError::data(format!(
            "{}: mixes {} and {} rows (speaker {})",
            path.display(),
            system.name(),
            SystemKind::of(p).name(),
            p.speaker_id()
        )));
    }
    if let Some(p) = preds.iter().find(|p| !p.is_consistent()) {
        return Err(CliError::data(format!("{}: inconsistent prediction for {}", path.display(), p.speaker_id())));
    }
    Ok((preds, system))
}

pub fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let mut s = Settings::load(
        args.config.as_deref(),
        &["pred", "labels", "out", "model", "per_item", "cronbach", "scatter"],
    )?;
    s.flag("pred", args.pred.as_ref().map(|p| p.display()));
    s.flag("labels", args.labels.as_ref().map(|p| p.display()));
    s.flag("out", args.out.as_ref().map(|p| p.display()));
    s.flag("model", args.model.as_ref().map(|p| p.display()));
    s.flag("per_item", args.per_item);
    s.flag("cronbach", args.cronbach);
    s.flag("scatter", args.scatter);
    let pred_path = s.input("pred")?;
    let labels_path = s.input("labels")?;
    let dir: PathBuf = s.require("out")?;
    let model_path = s.get::<PathBuf>("model")?;
    if let Some(m) = &model_path {
        if !m.is_file() {
            return Err(CliError::usage(format!("model file not found: {}", m.display())));
        }
    }
    let (want_items, want_alpha, want_scatter) = (
        s.bool_or("per_item", true)?,
        s.bool_or("cronbach", true)?,
        s.bool_or("scatter", true)?,
    );

    let (preds, system) = read_prediction_file(&pred_path)?;
    let rows = in_file(&labels_path, io::read_labels(read_input(&labels_path)?.as_slice()))?;
    let by_id: BTreeMap<&str, &SpeakerLabel> = rows.iter().map(|r| (r.label.speaker_id.as_str(), &r.label)).collect();
    let truth: Vec<&SpeakerLabel> = preds
        .iter()
        .map(|p| {
            by_id.get(p.speaker_id()).copied().ok_or_else(|| {
                CliError::data(format!("speaker {} has a prediction but no label in {}", p.speaker_id(), labels_path.display()))
            })
        })
        .collect::<CliResult<_>>()?;
    if preds.len() < 2 {
        return Err(CliError::data("evaluation needs at least two predicted speakers"));
    }
    let fingerprint = match &model_path {
        Some(m) => {
            let archive = ModelArchive::load(m)?;
            archive.expect_kind(system)?;
            Some(archive.data_fingerprint)
        }
        None => None,
    };

    let binary = binary_macro_f1(
        &truth.iter().map(|l| l.binary).collect::<Vec<_>>(),
        &preds.iter().map(|p| p.predicted_binary()).collect::<Vec<_>>(),
    )?;
    let severity = severity_macro_f1(
        &truth.iter().map(|l| l.severity).collect::<Vec<_>>(),
        &preds.iter().map(|p| p.predicted_severity()).collect::<Vec<_>>(),
    )?;
    let true_totals: Vec<u8> = truth.iter().map(|l| l.total).collect();
    let pred_totals: Vec<u8> = preds.iter().map(|p| p.predicted_total()).collect();
    let regression = regression_metrics(
        &true_totals.iter().map(|&t| f64::from(t)).collect::<Vec<_>>(),
        &pred_totals.iter().map(|&t| f64::from(t)).collect::<Vec<_>>(),
    )?;

    let mut metrics = vec![
        vec!["system".to_string(), system.name().to_string()],
        vec!["speakers".to_string(), preds.len().to_string()],
        vec!["binary_macro_f1".to_string(), binary.macro_f1.to_string()],
        vec!["severity_macro_f1".to_string(), severity.macro_f1.to_string()],
        vec!["mae".to_string(), regression.mae.to_string()],
        vec!["rmse".to_string(), regression.rmse.to_string()],
    ];
    let [r, p] = corr_cells(&regression.correlation);
    metrics.push(vec!["pearson_r".to_string(), r]);
    metrics.push(vec!["pearson_p".to_string(), p]);
    if let Some(f) = fingerprint {
        metrics.push(vec!["model_data_fingerprint".to_string(), f]);
    }

    let class_rows = |task: &str, report: &ClassificationReport, name: &dyn Fn(usize) -> String| -> Vec<Vec<String>> {
        report
            .per_class
            .iter()
            .map(|c| {
                vec![
                    task.to_string(),
                    name(c.label),
                    c.precision.to_string(),
                    c.recall.to_string(),
                    c.f1.to_string(),
                    c.support.to_string(),
                ]
            })
            .collect()
    };
    let mut per_class = class_rows("binary", &binary, &|l| l.to_string());
    per_class.extend(class_rows("severity", &severity, &|l| {
        Severity::from_index(l).map(|s| s.name().to_string()).unwrap_or_else(|_| l.to_string())
    }));

    let mut out = Outputs::new();
    out.dir(&dir)?;
    out.write(&dir.join(METRICS_FILE), &table(&["metric", "value"], metrics)?)?;
    out.write(
        &dir.join(PER_CLASS_FILE),
        &table(&["task", "class", "precision", "recall", "f1", "support"], per_class)?,
    )?;

    let true_items: Vec<Phq8Items> = truth.iter().map(|l| l.items).collect();
    let pred_items: Option<Vec<Phq8Items>> = preds.iter().map(|p| p.predicted_items().copied()).collect();
    if let (true, Some(pred_items)) = (want_items, &pred_items) {
        let rows = per_item_report(&true_items, pred_items)?
            .into_iter()
            .map(|m| {
                let [r, p] = corr_cells(&m.correlation);
                vec![m.item.name().to_string(), m.mae.to_string(), m.rmse.to_string(), r, p]
            })
            .collect();
        out.write(
            &dir.join(PER_ITEM_FILE),
            &table(&["item", "mae", "rmse", "pearson_r", "pearson_p"], rows)?,
        )?;
    }
    if want_alpha {
        let predicted = match &pred_items {
            Some(items) => item_alpha(items)?,
            None => None,
        };
        let rows = vec![
            vec!["true".to_string(), opt(item_alpha(&true_items)?)],
            vec!["predicted".to_string(), opt(predicted)],
        ];
        out.write(&dir.join(CRONBACH_FILE), &table(&["items", "alpha"], rows)?)?;
    }
    if want_scatter {
        let ids: Vec<String> = preds.iter().map(|p| p.speaker_id().to_string()).collect();
        let rows = scatter_export(&true_totals, &pred_totals, &ids)?
            .into_iter()
            .map(|r| vec![r.rank.to_string(), r.speaker_id, r.actual.to_string(), r.predicted.to_string()])
            .collect();
        out.write(
            &dir.join(SCATTER_FILE),
            &table(&["rank", "speaker_id", "actual", "predicted"], rows)?,
        )?;
    }
    out.commit();
    Ok(())
}

pub fn report(args: ReportArgs) -> CliResult<()> {
    let mut s = Settings::load(args.config.as_deref(), &["pred", "features", "out"])?;
    s.flag("pred", args.pred.as_ref().map(|p| p.display()));
    s.flag("features", args.features.as_ref().map(|p| p.display()));
    s.flag("out", args.out.as_ref().map(|p| p.display()));
    let pred_path = s.input("pred")?;
    let features_path = s.input("features")?;
    let dir: PathBuf = s.require("out")?;

    let (preds, _) = read_prediction_file(&pred_path)?;
    let features = in_file(&features_path, io::read_features(read_input(&features_path)?.as_slice()))?;
    let totals: Vec<(String, f64)> = preds
        .iter()
        .map(|p| (p.speaker_id().to_string(), f64::from(p.predicted_total())))
        .collect();
    let rows = feature_correlation_report(&totals, &features)?
        .into_iter()
        .map(|f| {
            let [r, p] = corr_cells(&f.correlation);
            vec![f.feature, f.n.to_string(), r, p]
        })
        .collect();
    let mut out = Outputs::new();
    out.dir(&dir)?;
    out.write(&dir.join(FEATURES_FILE), &table(&["feature", "n", "pearson_r", "pearson_p"], rows)?)?;
    out.commit();
    Ok(())
}
