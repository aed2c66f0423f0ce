//! End-to-end experiment runner: data, splits, training, assessment, metrics
//! and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, MetricSelector, ResolvedModel};
use crate::dataset::{generate_synthetic, load_csv, make_splits, validate_records, PropertyRecord, Splits};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    pareto_frontier, r_squared_on, round_sig, trend_bins, EvaluationReport, FairnessBlock, FairnessMeasure,
    FairnessRecord, ParetoPoint, ReportMetadata, SplitR2,
};
use crate::fairness::{deviation_weighted_fairness, group_fairness, ratio_samples, relative_unfairness, RatioSample};
use crate::gbm::{tune, FoldData, GbmConfig};
use crate::ksegment::{segment_populations, train_ksegment_with, KSegmentModel};
use crate::segmentation::{SegmentationScheme, SmoothingSpec};

pub const PARETO_FILE: &str = "pareto.csv";
pub const TREND_FILE: &str = "trend.csv";
pub const PRICE_LEVELS_FILE: &str = "price_levels.csv";
pub const ASSESSMENTS_FILE: &str = "assessments.csv";
pub const SUMMARY_FILE: &str = "summary.md";
pub const DATA_FILE: &str = "data.csv";

pub fn report_path(out_dir: &Path, model: &str) -> PathBuf {
    out_dir.join(format!("report_{model}.json"))
}

pub fn model_path(out_dir: &Path, model: &str) -> PathBuf {
    out_dir.join("models").join(format!("{model}.json"))
}

/// Records split into the training data (with its chronological splits) and
/// the assessment roll.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub feature_dim: usize,
    pub training: Vec<PropertyRecord>,
    pub splits: Splits,
    pub assessment: Vec<PropertyRecord>,
}

impl PreparedData {
    fn pick(&self, idx: &[usize]) -> Vec<PropertyRecord> {
        idx.iter().map(|&i| self.training[i].clone()).collect()
    }

    pub fn train_records(&self) -> Vec<PropertyRecord> {
        self.pick(&self.splits.train)
    }

    pub fn test_records(&self) -> Vec<PropertyRecord> {
        self.pick(&self.splits.test)
    }

    pub fn sold_assessment(&self) -> Vec<PropertyRecord> {
        self.assessment.iter().filter(|r| r.is_sold()).cloned().collect()
    }
}

pub fn load_records(cfg: &ExperimentConfig) -> Result<(Vec<PropertyRecord>, usize)> {
    if let Some(s) = &cfg.synthetic {
        Ok((generate_synthetic(s)?, s.feature_dim))
    } else {
        let data = cfg.data.as_ref().ok_or_else(|| Error::config(".", "no data source"))?;
        let records = load_csv(&data.path, &data.schema)?;
        Ok((records, data.schema.features.len()))
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (records, feature_dim) = load_records(cfg).stage("data")?;
    validate_records(&records, feature_dim).stage("data")?;
    let period = cfg.splits.assessment_period.or_else(|| {
        cfg.synthetic
            .as_ref()
            .filter(|s| s.assessment_fraction > 0.0)
            .map(|s| s.months as i64)
    });
    let (training, assessment): (Vec<_>, Vec<_>) = match period {
        Some(p) => {
            let (a, t): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.sale_date >= p);
            (t.into_iter().filter(|r| r.is_sold()).collect(), a)
        }
        None => records.into_iter().partition(|r| r.is_sold()),
    };
    let splits = make_splits(&training, &cfg.splits.split_spec()).stage("splits")?;
    Ok(PreparedData {
        feature_dim,
        training,
        splits,
        assessment,
    })
}

/// A configured model fitted on the training split and, for assessment, on
/// the full training data.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub resolved: ResolvedModel,
    pub on_train: KSegmentModel,
    pub final_model: KSegmentModel,
}

/// Per-segment booster configs, tuned on the rolling-origin folds restricted
/// to each segment when a search budget is set.
fn segment_configs(data: &PreparedData, scheme: &SegmentationScheme, base: &GbmConfig) -> Result<Vec<GbmConfig>> {
    let k = scheme.num_segments();
    if base.random_search_budget == 0 {
        return Ok(vec![base.clone(); k]);
    }
    let train = data.train_records();
    let (_, groups) = segment_populations(&train, scheme)?;
    let mut segment_of = vec![0usize; data.training.len()];
    for (s, members) in groups.iter().enumerate() {
        for &m in members {
            segment_of[data.splits.train[m]] = s;
        }
    }
    (0..k)
        .into_par_iter()
        .map(|s| {
            let rows = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
                idx.iter()
                    .filter(|&&i| segment_of[i] == s)
                    .map(|&i| (data.training[i].features.clone(), data.training[i].sale_price.unwrap()))
                    .unzip()
            };
            let folds: Vec<FoldData> = data
                .splits
                .folds
                .iter()
                .filter_map(|f| {
                    let (fit_features, fit_targets) = rows(&f.fit);
                    let (validate_features, validate_targets) = rows(&f.validate);
                    let varied = validate_targets.windows(2).any(|w| w[0] != w[1]);
                    (fit_targets.len() >= 2 && varied).then_some(FoldData {
                        fit_features,
                        fit_targets,
                        validate_features,
                        validate_targets,
                    })
                })
                .collect();
            if folds.is_empty() {
                return Ok(base.clone());
            }
            let cfg = GbmConfig {
                seed: base.seed.wrapping_add(s as u64),
                ..base.clone()
            };
            tune(&folds, &cfg).map(|t| GbmConfig { seed: base.seed, ..t })
        })
        .collect()
}

pub fn train_models(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Vec<TrainedModel>> {
    let resolved = cfg.resolved_models()?;
    // Training ignores the smoothing rule, so models sharing a segmentation
    // share their submodels.
    let mut schemes: Vec<SegmentationScheme> = Vec::new();
    for m in &resolved {
        if !schemes.contains(&m.scheme) {
            schemes.push(m.scheme.clone());
        }
    }
    let train = data.train_records();
    let fitted: Vec<(KSegmentModel, KSegmentModel)> = schemes
        .par_iter()
        .map(|scheme| {
            let unsmoothed = SmoothingSpec::unsmoothed();
            let configs = segment_configs(data, scheme, &cfg.gbm)?;
            let on_train = train_ksegment_with(&train, scheme, &unsmoothed, &configs)?;
            let final_model = if cfg.splits.refit_full && !data.splits.test.is_empty() {
                train_ksegment_with(&data.training, scheme, &unsmoothed, &configs)?
            } else {
                on_train.clone()
            };
            Ok((on_train, final_model))
        })
        .collect::<Result<_>>()
        .stage("training")?;

    resolved
        .into_iter()
        .map(|r| {
            let s = schemes.iter().position(|s| *s == r.scheme).unwrap();
            let (on_train, final_model) = &fitted[s];
            Ok(TrainedModel {
                on_train: on_train.with_spec(r.spec.clone())?,
                final_model: final_model.with_spec(r.spec.clone())?,
                resolved: r,
            })
        })
        .collect::<Result<_>>()
        .stage("training")
}

fn sale_prices(records: &[PropertyRecord]) -> Vec<f64> {
    records.iter().map(|r| r.sale_price.unwrap()).collect()
}

/// Computed figures for one model before rounding and baseline comparison.
struct Evaluated {
    r2: SplitR2,
    samples: Vec<RatioSample>,
    group: Vec<(usize, f64)>,
    deviation: Vec<(f64, f64)>,
}

fn evaluate_model(cfg: &ExperimentConfig, data: &PreparedData, model: &TrainedModel) -> Result<Evaluated> {
    let scale = cfg.report.r2_scale;
    let r2_of = |m: &KSegmentModel, recs: &[PropertyRecord]| -> Result<Option<f64>> {
        if recs.len() < 2 {
            return Ok(None);
        }
        let preds = m.assess_all(recs)?;
        match r_squared_on(scale, &preds, &sale_prices(recs)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedVariance(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let train = data.train_records();
    let test = data.test_records();
    let sold_roll = data.sold_assessment();
    let r2 = SplitR2 {
        train: r2_of(&model.on_train, &train)?,
        test: r2_of(&model.on_train, &test)?,
        assessment: r2_of(&model.final_model, &sold_roll)?,
    };

    let (fair_model, fair_records) = match cfg.report.fairness_split.as_str() {
        "test" => (&model.on_train, test),
        _ => (&model.final_model, sold_roll),
    };
    if fair_records.is_empty() {
        return Err(Error::Dataset(format!(
            "no sold records in the `{}` split to measure fairness on",
            cfg.report.fairness_split
        ))
        .in_stage("fairness"));
    }
    let assessed = fair_model.assess_all(&fair_records)?;
    let samples = ratio_samples(&sale_prices(&fair_records), &assessed)?;
    let group = cfg
        .metrics
        .n_values
        .iter()
        .map(|&n| Ok((n, group_fairness(&samples, n)?)))
        .collect::<Result<Vec<_>>>()
        .stage("fairness")?;
    let deviation = cfg
        .metrics
        .alpha_values
        .iter()
        .map(|&a| Ok((a, deviation_weighted_fairness(&samples, a)?)))
        .collect::<Result<Vec<_>>>()
        .stage("fairness")?;
    Ok(Evaluated {
        r2,
        samples,
        group,
        deviation,
    })
}

fn ru_against(baseline: Option<&Evaluated>, pick: impl Fn(&Evaluated) -> f64, raw: f64) -> Option<f64> {
    // A zero baseline score makes the ratio undefined; only raw scores are reported then.
    baseline.and_then(|b| relative_unfairness(raw, pick(b)).ok()).map(round_sig)
}

/// Output of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub reports: Vec<EvaluationReport>,
    pub pareto: Vec<ParetoRow>,
    pub models: Vec<TrainedModel>,
}

pub fn evaluate_all(cfg: &ExperimentConfig, data: &PreparedData, models: &[TrainedModel]) -> Result<Vec<EvaluationReport>> {
    let evaluated: Vec<Evaluated> = models
        .par_iter()
        .map(|m| evaluate_model(cfg, data, m).stage("evaluation"))
        .collect::<Result<_>>()?;
    let baseline = cfg
        .baseline
        .as_ref()
        .and_then(|b| models.iter().position(|m| &m.resolved.name == b))
        .map(|i| &evaluated[i]);

    models
        .iter()
        .zip(&evaluated)
        .map(|(m, ev)| {
            let mut measures = Vec::new();
            for (i, &(n, raw)) in ev.group.iter().enumerate() {
                measures.push(FairnessRecord {
                    metric: FairnessMeasure::Group,
                    n: Some(n),
                    alpha: None,
                    raw: round_sig(raw),
                    ru: ru_against(baseline, |b| b.group[i].1, raw),
                });
            }
            for (i, &(alpha, raw)) in ev.deviation.iter().enumerate() {
                measures.push(FairnessRecord {
                    metric: FairnessMeasure::Deviation,
                    n: None,
                    alpha: Some(alpha),
                    raw: round_sig(raw),
                    ru: ru_against(baseline, |b| b.deviation[i].1, raw),
                });
            }
            let trend = trend_bins(&ev.samples, cfg.report.num_bins, cfg.report.log_range)?
                .into_iter()
                .map(|mut b| {
                    b.bin_center_logprice = round_sig(b.bin_center_logprice);
                    b.median_ratio = b.median_ratio.map(round_sig);
                    b
                })
                .collect();
            Ok(EvaluationReport {
                metadata: ReportMetadata {
                    model: m.resolved.name.clone(),
                    num_segments: m.resolved.scheme.num_segments(),
                    scheme: m.resolved.scheme.clone(),
                    smoothing: m.resolved.spec.clone(),
                    data_seed: cfg.synthetic.as_ref().map(|s| s.seed),
                    gbm_seed: cfg.gbm.seed,
                },
                r2_scale: cfg.report.r2_scale,
                r_squared: SplitR2 {
                    train: ev.r2.train.map(round_sig),
                    test: ev.r2.test.map(round_sig),
                    assessment: ev.r2.assessment.map(round_sig),
                },
                fairness: FairnessBlock {
                    split: cfg.report.fairness_split.clone(),
                    num_samples: ev.samples.len(),
                    baseline: baseline.and(cfg.baseline.clone()),
                    measures,
                },
                trend,
            })
        })
        .collect::<Result<_>>()
        .stage("report")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub model: String,
    pub accuracy: f64,
    pub fairness_metric: String,
    pub fairness_value: f64,
    pub on_frontier: bool,
    pub on_hull: bool,
}

pub fn pareto_rows(reports: &[EvaluationReport], selector: MetricSelector, split: &str) -> Result<Vec<ParetoRow>> {
    let mut labels = Vec::new();
    let points = reports
        .iter()
        .map(|r| {
            let accuracy = r.r_squared.get(split).ok_or_else(|| {
                Error::Dataset(format!("model `{}` has no R² on the `{split}` split", r.metadata.model))
            })?;
            let rec = r.fairness.find(selector.measure, selector.param).ok_or_else(|| {
                Error::Dataset(format!("model `{}` has no `{selector}` fairness score", r.metadata.model))
            })?;
            labels.push(rec.label());
            Ok(ParetoPoint {
                model: r.metadata.model.clone(),
                accuracy,
                fairness: rec.raw,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("pareto")?;
    let frontier = pareto_frontier(&points).stage("pareto")?;
    Ok(points
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, label))| ParetoRow {
            model: p.model,
            accuracy: p.accuracy,
            fairness_metric: label,
            fairness_value: p.fairness,
            on_frontier: frontier.non_dominated.contains(&i),
            on_hull: frontier.hull.contains(&i),
        })
        .collect())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Serialization(format!("{}: {e}", path.display()))
}

pub fn write_pareto_csv(path: &Path, rows: &[ParetoRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["model", "accuracy", "fairness_metric", "fairness_value", "on_frontier", "on_hull"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.accuracy.to_string(),
            r.fairness_metric.clone(),
            r.fairness_value.to_string(),
            r.on_frontier.to_string(),
            r.on_hull.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trend_csv(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["model", "bin_center_logprice", "median_ratio", "count"])
        .map_err(csv_err(path))?;
    for r in reports {
        for b in &r.trend {
            w.write_record([
                r.metadata.model.clone(),
                b.bin_center_logprice.to_string(),
                b.median_ratio.map(|m| m.to_string()).unwrap_or_default(),
                b.count.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sale price next to the baseline's and each model's assessment, on the
/// fairness split.
fn write_price_levels(
    path: &Path,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    models: &[TrainedModel],
    baseline: &TrainedModel,
) -> Result<()> {
    let pick = |m: &TrainedModel| -> (KSegmentModel, Vec<PropertyRecord>) {
        match cfg.report.fairness_split.as_str() {
            "test" => (m.on_train.clone(), data.test_records()),
            _ => (m.final_model.clone(), data.sold_assessment()),
        }
    };
    let (base_model, records) = pick(baseline);
    let base_values = base_model.assess_all(&records)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["model", "id", "sale_price", "baseline_assessment", "model_assessment"])
        .map_err(csv_err(path))?;
    for m in models {
        let values = pick(m).0.assess_all(&records)?;
        for ((r, b), v) in records.iter().zip(&base_values).zip(&values) {
            w.write_record([
                m.resolved.name.clone(),
                r.id.clone(),
                r.sale_price.unwrap().to_string(),
                round_sig(*b).to_string(),
                round_sig(*v).to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_models(out_dir: &Path, models: &[TrainedModel]) -> Result<Vec<PathBuf>> {
    ensure_dir(&out_dir.join("models"))?;
    models
        .iter()
        .map(|m| {
            let path = model_path(out_dir, &m.resolved.name);
            m.final_model.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Runs the whole pipeline and writes every output into the report directory.
pub fn run_experiment_with(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let data = prepare_data(cfg)?;
    let models = train_models(cfg, &data)?;
    let reports = evaluate_all(cfg, &data, &models)?;
    let selector = cfg.report.pareto_selector()?;
    let pareto = pareto_rows(&reports, selector, &cfg.report.pareto_split)?;

    let out = &cfg.report.out_dir;
    ensure_dir(out).stage("report")?;
    save_models(out, &models).stage("report")?;
    for r in &reports {
        write_json(&report_path(out, &r.metadata.model), r).stage("report")?;
    }
    write_pareto_csv(&out.join(PARETO_FILE), &pareto).stage("report")?;
    write_trend_csv(&out.join(TREND_FILE), &reports).stage("report")?;
    if let Some(b) = cfg.baseline.as_ref().and_then(|b| models.iter().find(|m| &m.resolved.name == b)) {
        write_price_levels(&out.join(PRICE_LEVELS_FILE), cfg, &data, &models, b).stage("report")?;
    }
    Ok(ExperimentOutput {
        reports,
        pareto,
        models,
    })
}

pub fn run_experiment(config_path: &Path) -> Result<ExperimentOutput> {
    run_experiment_with(&ExperimentConfig::load(config_path)?)
}

pub fn load_reports(cfg: &ExperimentConfig) -> Result<Vec<EvaluationReport>> {
    cfg.models
        .iter()
        .map(|m| {
            let path = report_path(&cfg.report.out_dir, &m.name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Loads saved ensembles and values every assessment-roll record.
pub fn assess_saved(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let data = prepare_data(cfg)?;
    let out = &cfg.report.out_dir;
    let path = out.join(ASSESSMENTS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["model", "id", "prior_assessment", "quantile", "assessed_value", "sale_price"])
        .map_err(csv_err(&path))?;
    for m in &cfg.models {
        let model = KSegmentModel::load(&model_path(out, &m.name)).stage("assess")?;
        for r in &data.assessment {
            let v = model.assess(r).stage("assess")?;
            w.write_record([
                m.name.clone(),
                r.id.clone(),
                r.prior_assessment.to_string(),
                model.quantile(r.prior_assessment).to_string(),
                round_sig(v).to_string(),
                r.sale_price.map(|p| p.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Markdown tables of accuracy and fairness for a set of reports.
pub fn render_summary(reports: &[EvaluationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| model | K | smoothing | R² train | R² test | R² assessment |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            r.metadata.model,
            r.metadata.num_segments,
            r.metadata.smoothing.method.short_name(),
            fmt_opt(r.r_squared.train),
            fmt_opt(r.r_squared.test),
            fmt_opt(r.r_squared.assessment),
        );
    }
    let Some(first) = reports.first() else { return s };
    let labels: Vec<String> = first.fairness.measures.iter().map(|m| m.label()).collect();
    let _ = writeln!(s);
    let _ = writeln!(s, "| model | {} |", labels.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(labels.len()));
    for r in reports {
        let cells: Vec<String> = r
            .fairness
            .measures
            .iter()
            .map(|m| match m.ru {
                Some(ru) => format!("{:.6} (RU {ru:.2})", m.raw),
                None => format!("{:.6}", m.raw),
            })
            .collect();
        let _ = writeln!(s, "| {} | {} |", r.metadata.model, cells.join(" | "));
    }
    s
}
