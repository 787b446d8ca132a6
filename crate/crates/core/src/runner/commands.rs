use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{GridSpec, Method, RunConfig};
use super::csvio::{fmt_exact, provenance, read_dataset, write_columns, write_dataset};
use crate::baselines::{ols_adrf, reg_adrf};
use crate::data::Dataset;
use crate::datagen::{
    run_appendix_b_with, simulate, AppendixBReport, DatasetKind, SyntheticDataset, APPENDIX_B_Q,
    REPORTED_DELTA, REPORTED_HELDOUT_MIN, REPORTED_REC_ERROR,
};
use crate::egm::{CausalEgm, StepRecord, TrainingTrace, TreatmentKind};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_adrf, estimate_binary_effects, quantile_grid, uniform_grid, AdrfEstimate,
    BinaryEffects,
};
use crate::metrics::{self, mean_sd, MetricReport};

/// Evaluation grid for treatment sample `x`.
pub fn resolve_grid(config: &RunConfig, x: &[f64]) -> Result<Vec<f64>> {
    match config.grid {
        GridSpec::Observed => {
            let mut g = x.to_vec();
            g.sort_by(f64::total_cmp);
            Ok(g)
        }
        GridSpec::Quantile => quantile_grid(
            x,
            config.grid_lo_quantile,
            config.grid_hi_quantile,
            config.grid_points,
        ),
        GridSpec::Uniform { lo, hi, count } => uniform_grid(lo, hi, count),
    }
}

/// The configured data for `seed`: read from `data_path` if set,
/// simulated otherwise.
pub fn load_data(config: &RunConfig, seed: u64) -> Result<(Dataset, Option<SyntheticDataset>)> {
    match &config.data_path {
        Some(path) => Ok((read_dataset(path, None)?, None)),
        None => {
            let sim = simulate(config.dataset, config.n, config.p, seed, config.tau)?;
            Ok((sim.data.clone(), Some(sim)))
        }
    }
}

/// Configured treatment kind, or binary exactly when all `x` are 0 or 1.
pub fn treatment_kind(config: &RunConfig, data: &Dataset) -> TreatmentKind {
    config.treatment.unwrap_or(if data.has_binary_treatment() {
        TreatmentKind::Binary
    } else {
        TreatmentKind::Continuous
    })
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_config(config: &RunConfig, out: &Path) -> Result<()> {
    let text = format!(
        "# config_hash={}\n{}",
        config.hash(),
        config.to_config_string()
    );
    fs::write(out.join("config.txt"), text)?;
    Ok(())
}

/// Simulate one dataset into `out/data.csv` with its true curve in
/// `out/oracle.csv`. The curve is tabulated on the evaluation grid plus
/// `x = 0`, or at 0 and 1 for binary data.
pub fn cmd_simulate(config: &RunConfig, seed: u64, out: &Path) -> Result<SyntheticDataset> {
    create_dir(out)?;
    let sim = simulate(config.dataset, config.n, config.p, seed, config.tau)?;
    let header = vec![provenance(&config.hash(), &[seed])];
    write_dataset(out.join("data.csv"), &sim.data, &header)?;
    let xs = if config.dataset.is_binary() {
        vec![0.0, 1.0]
    } else {
        let mut g = resolve_grid(config, sim.data.x.as_slice().expect("contiguous"))?;
        g.push(0.0);
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    let mu = sim.oracle.curve(&xs).to_vec();
    write_columns(out.join("oracle.csv"), &header, &["x", "mu"], &[&xs, &mu])?;
    write_config(config, out)?;
    Ok(sim)
}

pub fn write_trace(path: &Path, trace: &TrainingTrace, comments: &[String]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for c in comments {
        writeln!(out, "{c}")?;
    }
    writeln!(
        out,
        "iteration,{},generator_total,critic_total",
        StepRecord::FIELDS.join(",")
    )?;
    for (i, r) in trace.records.iter().enumerate() {
        let vals: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            vals.join(","),
            r.generator_total(),
            r.critic_total()
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Train one model. Writes `model.egm` and `trace.csv`, plus `data.csv`
/// when the data was simulated.
pub fn cmd_train(
    config: &RunConfig,
    seed: u64,
    out: &Path,
) -> Result<(CausalEgm<f32>, TrainingTrace)> {
    create_dir(out)?;
    let (data, sim) = load_data(config, seed)?;
    let header = vec![provenance(&config.hash(), &[seed])];
    if sim.is_some() {
        write_dataset(out.join("data.csv"), &data, &header)?;
    }
    let kind = treatment_kind(config, &data);
    let mut model = CausalEgm::<f32>::build(config.model_config(data.p(), kind, seed))?;
    let trace = model.fit(&data)?;
    model.save(out.join("model.egm"))?;
    write_trace(&out.join("trace.csv"), &trace, &header)?;
    write_config(config, out)?;
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Adrf(AdrfEstimate),
    Binary(BinaryEffects),
}

/// Estimates from a saved model. `kind` states which estimate the caller
/// expects; it must agree with the model's treatment kind.
pub fn cmd_estimate(
    config: &RunConfig,
    model_path: &Path,
    data_path: &Path,
    kind: Option<TreatmentKind>,
    out: &Path,
) -> Result<Estimate> {
    let model = CausalEgm::<f32>::load(model_path)?;
    let data = read_dataset(data_path, None)?;
    estimate_with(config, &model, &data, kind, out)
}

/// Same as [`cmd_estimate`] for a model already in memory.
pub fn estimate_with(
    config: &RunConfig,
    model: &CausalEgm<f32>,
    data: &Dataset,
    kind: Option<TreatmentKind>,
    out: &Path,
) -> Result<Estimate> {
    let model_kind = model.config().treatment_kind;
    if let Some(k) = kind {
        if k != model_kind {
            return Err(Error::contract(format!(
                "{} estimate requested from a {} treatment model",
                k.as_str(),
                model_kind.as_str()
            )));
        }
    }
    create_dir(out)?;
    let header = vec![provenance(&config.hash(), &[model.config().seed])];
    match model_kind {
        TreatmentKind::Continuous => {
            let grid = resolve_grid(config, data.x.as_slice().expect("contiguous"))?;
            let est = estimate_adrf(model, data, &grid)?;
            write_columns(
                out.join("adrf.csv"),
                &header,
                &["x", "mu_hat"],
                &[&est.x_grid, &est.mu_hat],
            )?;
            Ok(Estimate::Adrf(est))
        }
        TreatmentKind::Binary => {
            let eff = estimate_binary_effects(model, data, config.factual)?;
            let mut comments = header;
            comments.push(format!(
                "# ate={} factual={}",
                eff.ate,
                config.factual.as_str()
            ));
            let cols = [
                data.x.to_vec(),
                eff.y1_hat.to_vec(),
                eff.y0_hat.to_vec(),
                eff.ite.to_vec(),
            ];
            write_columns(
                out.join("effects.csv"),
                &comments,
                &["x", "y1_hat", "y0_hat", "ite"],
                &[&cols[0], &cols[1], &cols[2], &cols[3]],
            )?;
            Ok(Estimate::Binary(eff))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub method: Method,
    pub metric: &'static str,
    pub value: f64,
}

/// One method's estimated curve next to the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub x: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub mu_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Vec<MetricValue>,
    pub curves: Vec<Curve>,
}

impl SeedResult {
    pub fn value(&self, method: Method, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.method == method && m.metric == metric)
            .map(|m| m.value)
    }
}

fn fit_neural(
    config: &RunConfig,
    method: Method,
    data: &Dataset,
    kind: TreatmentKind,
    seed: u64,
) -> Result<CausalEgm<f32>> {
    let mut model =
        CausalEgm::<f32>::build(method.adjust(config.model_config(data.p(), kind, seed)))?;
    model.fit(data)?;
    Ok(model)
}

/// Simulate, fit every configured method and score it against the truth.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedResult> {
    if config.data_path.is_some() {
        return Err(Error::config(
            "benchmarks need simulated data with a known truth; unset data_path",
        ));
    }
    let sim = simulate(config.dataset, config.n, config.p, seed, config.tau)?;
    let data = &sim.data;
    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    let mut push = |method, metric, value| {
        metrics.push(MetricValue {
            method,
            metric,
            value,
        })
    };

    if config.dataset.is_binary() {
        let po = sim
            .potential
            .as_ref()
            .expect("binary generators record both outcomes");
        for &method in &config.methods {
            if !method.is_neural() {
                return Err(Error::config(format!(
                    "{} applies to continuous treatments only",
                    method.as_str()
                )));
            }
            let model = fit_neural(config, method, data, TreatmentKind::Binary, seed)?;
            let eff = estimate_binary_effects(&model, data, config.factual)?;
            let args = (
                po.y1.view(),
                po.y0.view(),
                eff.y1_hat.view(),
                eff.y0_hat.view(),
            );
            push(method, "ate", eff.ate);
            push(
                method,
                "eps_ate",
                metrics::eps_ate(args.0, args.1, args.2, args.3)?,
            );
            if config.pehe_rooted {
                push(
                    method,
                    "sqrt_pehe",
                    metrics::sqrt_pehe(args.0, args.1, args.2, args.3)?,
                );
            } else {
                push(
                    method,
                    "eps_pehe",
                    metrics::eps_pehe(args.0, args.1, args.2, args.3)?,
                );
            }
        }
        return Ok(SeedResult {
            seed,
            metrics,
            curves,
        });
    }

    let grid = resolve_grid(config, data.x.as_slice().expect("contiguous"))?;
    let m = grid.len();
    let dx = config.mtef_step;
    // Estimate at the grid and at the shifted grid in one pass.
    let mut both = grid.clone();
    both.extend(grid.iter().map(|x| x + dx));
    let truth = sim.oracle.curve(&grid);
    let truth_shift = sim.oracle.curve(&both[m..]);
    for &method in &config.methods {
        let est = match method {
            Method::Ols => ols_adrf(data, &both)?,
            Method::Reg => reg_adrf(data, &both)?,
            _ => {
                let model = fit_neural(config, method, data, TreatmentKind::Continuous, seed)?;
                estimate_adrf(&model, data, &both)?
            }
        };
        let hat = ndarray::ArrayView1::from(&est.mu_hat[..m]);
        let hat_shift = ndarray::ArrayView1::from(&est.mu_hat[m..]);
        push(method, "rmse", metrics::rmse(truth.view(), hat)?);
        let mape = if config.dataset == DatasetKind::Twins {
            metrics::mape_excluding(truth.view(), hat)?.0
        } else {
            metrics::mape(truth.view(), hat)?
        };
        push(method, "mape", mape);
        push(
            method,
            "mtef_bias",
            metrics::mtef_bias_tabulated(truth.view(), truth_shift.view(), hat, hat_shift, dx)?,
        );
        curves.push(Curve {
            method,
            x: grid.clone(),
            mu_hat: hat.to_vec(),
            mu_true: truth.to_vec(),
        });
    }
    Ok(SeedResult {
        seed,
        metrics,
        curves,
    })
}

/// One aggregated row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub seeds: Vec<SeedResult>,
    pub summary: Vec<SummaryRow>,
}

/// Mean and sample sd of every (method, metric) pair, in first-seen order.
pub fn summarize(results: &[SeedResult]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(Method, &'static str)> = Vec::new();
    for r in results {
        for m in &r.metrics {
            if !keys.contains(&(m.method, m.metric)) {
                keys.push((m.method, m.metric));
            }
        }
    }
    keys.into_iter()
        .map(|(method, metric)| {
            let values = results
                .iter()
                .filter_map(|r| r.value(method, metric))
                .collect();
            Ok(SummaryRow {
                method,
                report: MetricReport::from_values(metric, values)?,
            })
        })
        .collect()
}

pub const PER_SEED_HEADER: &str = "seed,dataset,method,metric,value";
pub const SUMMARY_HEADER: &str = "dataset,method,metric,mean,sd,n_seeds,label";

pub fn per_seed_lines(dataset: DatasetKind, r: &SeedResult) -> Vec<String> {
    r.metrics
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{},{}",
                r.seed,
                dataset.as_str(),
                m.method.as_str(),
                m.metric,
                m.value
            )
        })
        .collect()
}

/// Run every configured seed, `jobs` at a time. Per-seed rows go to
/// `per_seed.csv` and `curves.csv` in seed order as each group of seeds
/// finishes; the aggregate table is `benchmark.csv`. With an explicit
/// `lo:hi:count` grid, `bands.csv` holds mean ± 1.96·sd across seeds at
/// each grid point.
pub fn cmd_benchmark(config: &RunConfig, jobs: usize, out: &Path) -> Result<BenchmarkReport> {
    config.validate()?;
    create_dir(out)?;
    write_config(config, out)?;
    let header = provenance(&config.hash(), &config.seeds);
    let open = |name: &str, columns: &str| -> Result<BufWriter<File>> {
        let mut f = BufWriter::new(File::create(out.join(name))?);
        writeln!(f, "{header}")?;
        writeln!(f, "{columns}")?;
        Ok(f)
    };
    let mut per_seed = open("per_seed.csv", PER_SEED_HEADER)?;
    let mut curves = open("curves.csv", "seed,method,x,mu_hat,mu_true")?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let mut results = Vec::with_capacity(config.seeds.len());
    for group in config.seeds.chunks(jobs.max(1)) {
        let done: Vec<SeedResult> = pool.install(|| {
            group
                .par_iter()
                .map(|&s| run_seed(config, s))
                .collect::<Result<_>>()
        })?;
        for r in done {
            for line in per_seed_lines(config.dataset, &r) {
                writeln!(per_seed, "{line}")?;
            }
            for c in &r.curves {
                for i in 0..c.x.len() {
                    writeln!(
                        curves,
                        "{},{},{},{},{}",
                        r.seed,
                        c.method.as_str(),
                        fmt_exact(c.x[i]),
                        fmt_exact(c.mu_hat[i]),
                        fmt_exact(c.mu_true[i])
                    )?;
                }
            }
            results.push(r);
        }
        per_seed.flush()?;
        curves.flush()?;
    }

    let summary = summarize(&results)?;
    let mut table = open("benchmark.csv", SUMMARY_HEADER)?;
    for row in &summary {
        let r = &row.report;
        writeln!(
            table,
            "{},{},{},{},{},{},{}",
            config.dataset.as_str(),
            row.method.as_str(),
            r.metric,
            r.mean,
            r.sd,
            r.n_seeds(),
            row.method.label()
        )?;
    }
    table.flush()?;

    if matches!(config.grid, GridSpec::Uniform { .. }) && !config.dataset.is_binary() {
        let mut bands = open("bands.csv", "method,x,mu_true,mean,sd,lower,upper")?;
        for &method in &config.methods {
            let per: Vec<&super::commands::Curve> = results
                .iter()
                .filter_map(|r| r.curves.iter().find(|c| c.method == method))
                .collect();
            let Some(first) = per.first() else { continue };
            for i in 0..first.x.len() {
                let vals: Vec<f64> = per.iter().map(|c| c.mu_hat[i]).collect();
                let (mean, sd) = mean_sd(&vals);
                writeln!(
                    bands,
                    "{},{},{},{},{},{},{}",
                    method.as_str(),
                    fmt_exact(first.x[i]),
                    fmt_exact(first.mu_true[i]),
                    mean,
                    sd,
                    mean - 1.96 * sd,
                    mean + 1.96 * sd
                )?;
            }
        }
        bands.flush()?;
    }
    Ok(BenchmarkReport {
        seeds: results,
        summary,
    })
}

/// Run the partially fixed encoder-decoder experiment and write
/// `appendix_b.csv`, one row per checkpoint.
pub fn cmd_appendix_b(config: &RunConfig, seed: u64, out: &Path) -> Result<AppendixBReport> {
    create_dir(out)?;
    let mut ab = config.appendix_b.clone();
    ab.seed = seed;
    let report = run_appendix_b_with(&ab)?;
    let path: PathBuf = out.join("appendix_b.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    writeln!(f, "{}", provenance(&config.hash(), &[seed]))?;
    writeln!(
        f,
        "# theoretical={} (sum of eigenvalues {}..=50) reported_rec_error={} \
         reported_heldout_min={} reported_delta={}",
        report.theoretical,
        APPENDIX_B_Q + 1,
        REPORTED_REC_ERROR,
        REPORTED_HELDOUT_MIN,
        REPORTED_DELTA
    )?;
    writeln!(
        f,
        "# best={} best_iteration={} delta={} ratio={}",
        report.best,
        report.best_iteration,
        report.delta,
        report.best / report.theoretical
    )?;
    writeln!(f, "iteration,holdout_error,best_so_far,theoretical,delta")?;
    for c in &report.checkpoints {
        writeln!(
            f,
            "{},{},{},{},{}",
            c.iteration,
            c.holdout_error,
            c.best_so_far,
            report.theoretical,
            c.best_so_far - report.theoretical
        )?;
    }
    f.flush()?;
    write_config(config, out)?;
    Ok(report)
}
