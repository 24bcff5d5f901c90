use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::Result;
use serde::Serialize;

use dprob::dataset::Dataset;
use dprob::hyper::EbResult;
use dprob::pipeline::{analyze, split_study, Analysis, ChainSummary, SplitRecord, SplitStudyConfig};
use dprob::sim::{delta_oracle, run_replications, summarize, MeanFn, ReplicationConfig, ReplicationRecord, SchemeSummary, SimScenario};

use crate::config::RunConfig;
use crate::output::{num, Stage};
use crate::svg::{box_chart, line_chart, Series};

const TOP_ROWS: usize = 5;

/// Scheme names enabled by the estimator choice, in reporting order.
fn schemes(cfg: &RunConfig) -> Vec<&'static str> {
    dprob::pipeline::SCHEMES
        .iter()
        .copied()
        .filter(|s| match *s {
            "d1" => cfg.estimator.first(),
            "d2" => cfg.estimator.second(),
            _ => true,
        })
        .collect()
}

fn opt(cond: bool, v: f64) -> String {
    if cond {
        num(v)
    } else {
        String::new()
    }
}

struct Progress {
    label: String,
    total: usize,
    done: AtomicUsize,
}

impl Progress {
    fn new(label: impl Into<String>, total: usize) -> Self {
        Self {
            label: label.into(),
            total,
            done: AtomicUsize::new(0),
        }
    }

    fn tick(&self, _index: usize) {
        let k = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        eprint!("\r{}: {k}/{}", self.label, self.total);
        if k == self.total {
            eprintln!();
        }
    }
}

#[derive(Serialize)]
struct AnalysisJson<'a> {
    n: usize,
    response: &'a str,
    covariates: &'a [String],
    hyperparameters: &'a EbResult,
    chain: &'a Option<ChainSummary>,
    sigma0_sq: f64,
    report: &'a dprob::dprob::WeightReport,
    baselines: &'a [dprob::baselines::BaselineWeights],
}

/// Writes report.csv, report.json, inclusion.csv and baselines.csv.
fn write_analysis(stage: &Stage, cfg: &RunConfig, ds: &Dataset, a: &Analysis) -> Result<()> {
    let (e1, e2) = (cfg.estimator.first(), cfg.estimator.second());

    let mut w = stage.csv("report.csv")?;
    w.write_record(["model", "log_pi1", "log_pi2", "cond_pi1", "cond_pi2", "evidence"])?;
    for row in &a.report.rows {
        let evidence = if e1 { row.evidence1 } else { row.evidence2 };
        w.write_record([
            row.model.clone(),
            opt(e1, row.log_pi1),
            opt(e2, row.log_pi2),
            opt(e1, row.cond_pi1),
            opt(e2, row.cond_pi2),
            evidence.as_str().to_string(),
        ])?;
    }
    w.flush()?;

    stage.json(
        "report.json",
        &AnalysisJson {
            n: ds.n(),
            response: ds.response(),
            covariates: ds.names(),
            hyperparameters: &a.eb,
            chain: &a.chain,
            sigma0_sq: a.sigma0_sq,
            report: &a.report,
            baselines: &a.baselines,
        },
    )?;

    let weights = a.scheme_weights();
    let enabled = schemes(cfg);
    let mut w = stage.csv("inclusion.csv")?;
    w.write_record(["covariate", "method", "probability"])?;
    for (name, probs) in weights.iter().filter(|(n, _)| enabled.contains(n)) {
        let incl = dprob::dprob::inclusion_probabilities(&a.models, probs, ds.p());
        for (cov, p) in ds.names().iter().zip(incl) {
            w.write_record([cov.as_str(), name, &num(p)])?;
        }
    }
    w.flush()?;

    let mut w = stage.csv("baselines.csv")?;
    w.write_record(["model", "method", "log_score", "probability"])?;
    for b in &a.baselines {
        for ((m, s), p) in a.models.iter().zip(&b.log_scores).zip(&b.probs) {
            w.write_record([m.label(ds.names()), b.method.as_str().to_string(), num(*s), num(*p)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_top(cfg: &RunConfig, ds: &Dataset, a: &Analysis) {
    println!(
        "n = {}, {} covariates, {} models; log marginal likelihood {:.3}",
        ds.n(),
        ds.p(),
        a.models.len(),
        a.eb.logml
    );
    println!(
        "lambda = [{}], tau = {:.4}",
        a.eb.cfg.lambda.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>().join(", "),
        a.eb.cfg.tau
    );
    let enabled = schemes(cfg);
    for (name, w) in a.scheme_weights() {
        if !enabled.contains(&name) {
            continue;
        }
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&i, &j| w[j].total_cmp(&w[i]).then(i.cmp(&j)));
        println!("\n{name}");
        println!("  {:>4}  {:>10}  {:>12}  model", "rank", "prob", "log10 abs");
        for (rank, &i) in order.iter().take(TOP_ROWS).enumerate() {
            let abs = match name {
                "d1" => format!("{:>12.3}", a.report.rows[i].log_pi1 / std::f64::consts::LN_10),
                "d2" => format!("{:>12.3}", a.report.rows[i].log_pi2 / std::f64::consts::LN_10),
                _ => format!("{:>12}", "-"),
            };
            println!("  {:>4}  {:>10.4}  {abs}  {}", rank + 1, w[i], a.models[i].label(ds.names()));
        }
        println!("  effective models {:.2}", dprob::aggregate::effective_models(&w));
    }
}

pub fn weights(cfg: &RunConfig, ds: &Dataset, stage: &Stage) -> Result<()> {
    let a = analyze(ds, &cfg.analysis(ds.n()))?;
    write_analysis(stage, cfg, ds, &a)?;
    print_top(cfg, ds, &a);
    Ok(())
}

#[derive(Serialize)]
struct MethodSummary {
    method: String,
    mean_rmse: f64,
    median_rmse: f64,
    /// Share of splits on which the reference predicted better.
    reference_better: Option<f64>,
}

#[derive(Serialize)]
struct SchemeSplitSummary {
    scheme: String,
    /// Mean of the per-split aggregate RMSE minus that of exponential weighting.
    mean_aggregate_minus_ew: f64,
    mean_top_weight: f64,
    mean_effective_models: f64,
    mean_inclusion: Vec<f64>,
}

#[derive(Serialize)]
struct SplitSummary {
    splits: usize,
    train_frac: f64,
    methods: Vec<MethodSummary>,
    schemes: Vec<SchemeSplitSummary>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Writes rmse.csv, summary.json and rmse.svg for a split study.
pub fn splits(cfg: &RunConfig, ds: &Dataset, stage: &Stage) -> Result<()> {
    let n_splits = cfg.reps.expect("resolved for split commands");
    let train_frac = cfg.train_frac.expect("resolved for split commands");
    let n_train = (ds.n() as f64 * train_frac).round() as usize;
    let study = SplitStudyConfig {
        splits: n_splits,
        train_frac,
        seed: cfg.seed,
        analysis: cfg.analysis(n_train),
    };
    let progress = Progress::new("splits", n_splits);
    let records: Vec<SplitRecord> = split_study(ds, &study, &|i| progress.tick(i))?;
    let enabled = schemes(cfg);

    // method -> rmse per split, in insertion order
    let mut methods: Vec<(String, Vec<f64>)> = vec![("gp".into(), vec![])];
    for s in &enabled {
        methods.push((format!("{s}_top"), vec![]));
        methods.push((format!("{s}_aggregate"), vec![]));
    }
    let mut w = stage.csv("rmse.csv")?;
    w.write_record(["seed", "method", "rmse"])?;
    for rec in &records {
        let mut col = 0;
        let mut push = |name: &str, v: f64, w: &mut csv::Writer<std::fs::File>| -> Result<()> {
            methods[col].1.push(v);
            col += 1;
            w.write_record([rec.seed.to_string(), name.to_string(), num(v)])?;
            Ok(())
        };
        push("gp", rec.outcome.reference_rmse, &mut w)?;
        for s in &enabled {
            let o = rec.outcome.scheme(s).expect("every scheme is evaluated");
            push(&format!("{s}_top"), o.rmse_top, &mut w)?;
            push(&format!("{s}_aggregate"), o.rmse_aggregate, &mut w)?;
        }
    }
    w.flush()?;

    // paired per-split differences against exponential weighting
    let ew = |r: &SplitRecord| r.outcome.scheme("ew").expect("every scheme is evaluated").rmse_aggregate;
    let mut paired: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut w = stage.csv("paired_vs_ew.csv")?;
    w.write_record(["seed", "method", "aggregate_rmse_minus_ew"])?;
    for rec in &records {
        for s in &enabled {
            let d = rec.outcome.scheme(s).expect("every scheme is evaluated").rmse_aggregate - ew(rec);
            paired.entry(s).or_default().push(d);
            w.write_record([rec.seed.to_string(), s.to_string(), num(d)])?;
        }
    }
    w.flush()?;
    let paired_groups: Vec<(String, Vec<f64>)> = enabled
        .iter()
        .filter(|s| **s != "ew")
        .map(|s| (s.to_string(), paired[*s].clone()))
        .collect();
    stage.text(
        "paired_vs_ew.svg",
        &box_chart("Aggregate RMSE minus exponential weighting", "RMSE difference", &paired_groups),
    )?;

    let gp = methods[0].1.clone();
    let summary = SplitSummary {
        splits: records.len(),
        train_frac,
        methods: methods
            .iter()
            .map(|(name, v)| MethodSummary {
                method: name.clone(),
                mean_rmse: mean(v),
                median_rmse: median(v),
                reference_better: (name != "gp")
                    .then(|| gp.iter().zip(v).filter(|(g, m)| g < m).count() as f64 / v.len() as f64),
            })
            .collect(),
        schemes: enabled
            .iter()
            .map(|s| {
                let outs: Vec<_> = records.iter().map(|r| r.outcome.scheme(s).expect("evaluated")).collect();
                let p = outs[0].inclusion.len();
                SchemeSplitSummary {
                    scheme: s.to_string(),
                    mean_aggregate_minus_ew: mean(&paired[*s]),
                    mean_top_weight: mean(&outs.iter().map(|o| o.top_weight).collect::<Vec<_>>()),
                    mean_effective_models: mean(&outs.iter().map(|o| o.effective_models).collect::<Vec<_>>()),
                    mean_inclusion: (0..p)
                        .map(|c| mean(&outs.iter().map(|o| o.inclusion[c]).collect::<Vec<_>>()))
                        .collect(),
                }
            })
            .collect(),
    };
    stage.json("summary.json", &summary)?;
    stage.text("rmse.svg", &box_chart("Test RMSE over random splits", "RMSE", &methods))?;

    println!("\n{:<20} {:>10} {:>10} {:>14}", "method", "mean rmse", "median", "gp better");
    for m in &summary.methods {
        let better = m.reference_better.map(|b| format!("{:.0}%", 100.0 * b)).unwrap_or_default();
        println!("{:<20} {:>10.4} {:>10.4} {:>14}", m.method, m.mean_rmse, m.median_rmse, better);
    }
    Ok(())
}

#[derive(Serialize)]
struct ScenarioSummary {
    scenario: String,
    mean: MeanFn,
    n: usize,
    reps: usize,
    /// Population divergence of the best fit within the full model.
    full_model_delta: f64,
    mean_kl1_full: f64,
    mean_kl2_full: f64,
    mean_log_pi1_full: f64,
    mean_log_pi2_full: f64,
    median_log_pi1_full: f64,
    median_log_pi2_full: f64,
    mean_reference_rmse: f64,
    schemes: Vec<SchemeSummary>,
}

fn summarize_scenario(scn: &SimScenario, records: &[ReplicationRecord], enabled: &[&str]) -> Result<ScenarioSummary> {
    // full model is the last in enumeration order
    let full = |r: &ReplicationRecord| r.kl.len() - 1;
    let collect = |f: &dyn Fn(&ReplicationRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    Ok(ScenarioSummary {
        scenario: scn.mean.name(),
        mean: scn.mean,
        n: scn.n,
        reps: records.len(),
        full_model_delta: delta_oracle(scn, &[0])?.delta,
        mean_kl1_full: mean(&collect(&|r| r.kl[full(r)].kl1)),
        mean_kl2_full: mean(&collect(&|r| r.kl[full(r)].kl2)),
        mean_log_pi1_full: mean(&collect(&|r| r.log_pi1[full(r)])),
        mean_log_pi2_full: mean(&collect(&|r| r.log_pi2[full(r)])),
        median_log_pi1_full: median(&collect(&|r| r.log_pi1[full(r)])),
        median_log_pi2_full: median(&collect(&|r| r.log_pi2[full(r)])),
        mean_reference_rmse: mean(&collect(&|r| r.outcome.reference_rmse)),
        schemes: summarize(records)
            .into_iter()
            .filter(|s| enabled.contains(&s.scheme.as_str()))
            .collect(),
    })
}

pub fn sim(cfg: &RunConfig, stage: &Stage) -> Result<()> {
    let n = cfg.sample_size.expect("resolved for sim");
    let reps = cfg.reps.expect("resolved for sim");
    let enabled = schemes(cfg);
    let mut w = stage.csv("replications.csv")?;
    w.write_record(["scenario", "rep", "method", "metric", "value"])?;
    let mut summaries = Vec::new();
    let mut rmse_groups: BTreeMap<String, Vec<(String, Vec<f64>)>> = BTreeMap::new();

    for mean_fn in cfg.scenarios() {
        let scn = SimScenario::new(mean_fn, n);
        let rep_cfg = ReplicationConfig {
            reps,
            n_test: cfg.test_size.expect("resolved for sim"),
            seed: cfg.seed,
            analysis: cfg.analysis(n),
        };
        let progress = Progress::new(scn.mean.name(), reps);
        let records = run_replications(&scn, &rep_cfg, &|i| progress.tick(i))?;
        let name = scn.mean.name();
        let mut row = |rep: usize, method: &str, metric: &str, v: f64| {
            w.write_record([name.as_str(), &rep.to_string(), method, metric, &num(v)])
        };
        for r in &records {
            let full = r.kl.len() - 1;
            if cfg.estimator.first() {
                row(r.rep, "d1", "kl_full", r.kl[full].kl1)?;
                row(r.rep, "d1", "log_pi_full", r.log_pi1[full])?;
            }
            if cfg.estimator.second() {
                row(r.rep, "d2", "kl_full", r.kl[full].kl2)?;
                row(r.rep, "d2", "log_pi_full", r.log_pi2[full])?;
            }
            row(r.rep, "gp", "rmse", r.outcome.reference_rmse)?;
            for s in &enabled {
                let o = r.outcome.scheme(s).expect("every scheme is evaluated");
                row(r.rep, s, "full_weight", o.inclusion[0])?;
                row(r.rep, s, "rmse_top", o.rmse_top)?;
                row(r.rep, s, "rmse_aggregate", o.rmse_aggregate)?;
                row(r.rep, s, "effective_models", o.effective_models)?;
            }
        }
        let mut groups = vec![("gp".to_string(), records.iter().map(|r| r.outcome.reference_rmse).collect())];
        for s in &enabled {
            groups.push((
                s.to_string(),
                records.iter().map(|r| r.outcome.scheme(s).expect("evaluated").rmse_aggregate).collect(),
            ));
        }
        rmse_groups.insert(name.clone(), groups);
        summaries.push(summarize_scenario(&scn, &records, &enabled)?);
    }
    w.flush()?;
    stage.json("summary.json", &summaries)?;

    let mut w = stage.csv("curves.csv")?;
    w.write_record([
        "scenario", "gamma", "method", "mean_full_weight", "mean_log_pi_full", "mean_rmse_top", "mean_rmse_aggregate",
        "mean_effective_models",
    ])?;
    for s in &summaries {
        let gamma = match s.mean {
            MeanFn::Curvature { gamma } => num(gamma),
            _ => String::new(),
        };
        for x in &s.schemes {
            let log_pi = match x.scheme.as_str() {
                "d1" => num(s.mean_log_pi1_full),
                "d2" => num(s.mean_log_pi2_full),
                _ => String::new(),
            };
            w.write_record([
                s.scenario.clone(),
                gamma.clone(),
                x.scheme.clone(),
                num(x.mean_full_weight),
                log_pi,
                num(x.mean_rmse_top),
                num(x.mean_rmse_aggregate),
                num(x.mean_effective_models),
            ])?;
        }
    }
    w.flush()?;

    let curvature: Vec<&ScenarioSummary> = summaries
        .iter()
        .filter(|s| matches!(s.mean, MeanFn::Curvature { .. }))
        .collect();
    if curvature.is_empty() {
        for (name, groups) in &rmse_groups {
            stage.text(
                &format!("rmse_{name}.svg"),
                &box_chart(&format!("{name}: aggregate test RMSE"), "RMSE", groups),
            )?;
        }
    } else {
        let gamma = |s: &ScenarioSummary| match s.mean {
            MeanFn::Curvature { gamma } => gamma,
            _ => unreachable!("filtered to curvature scenarios"),
        };
        let series: Vec<Series> = enabled
            .iter()
            .map(|name| Series {
                name: name.to_string(),
                points: curvature
                    .iter()
                    .map(|s| {
                        let w = s.schemes.iter().find(|x| x.scheme == *name).map_or(f64::NAN, |x| x.mean_full_weight);
                        (gamma(s), w)
                    })
                    .collect(),
            })
            .collect();
        stage.text(
            "full_weight.svg",
            &line_chart("Mean weight of the linear model", "curvature", "weight", &series),
        )?;
        let mut kl = Vec::new();
        if cfg.estimator.first() {
            kl.push(Series {
                name: "d1".into(),
                points: curvature.iter().map(|s| (gamma(s), s.mean_kl1_full)).collect(),
            });
        }
        if cfg.estimator.second() {
            kl.push(Series {
                name: "d2".into(),
                points: curvature.iter().map(|s| (gamma(s), s.mean_kl2_full)).collect(),
            });
        }
        kl.push(Series {
            name: "delta".into(),
            points: curvature.iter().map(|s| (gamma(s), s.full_model_delta)).collect(),
        });
        stage.text("kl.svg", &line_chart("Estimated divergence of the linear model", "curvature", "KL", &kl))?;
    }

    println!("{:<22} {:>10} {:>10} {:>10}  mean weight of the full model", "scenario", "delta", "kl1", "kl2");
    for s in &summaries {
        let weights = s
            .schemes
            .iter()
            .map(|x| format!("{}={:.3}", x.scheme, x.mean_full_weight))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{:<22} {:>10.4} {:>10.4} {:>10.4}  {weights}",
            s.scenario, s.full_model_delta, s.mean_kl1_full, s.mean_kl2_full
        );
    }
    Ok(())
}
