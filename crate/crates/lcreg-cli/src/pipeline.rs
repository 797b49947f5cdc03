//! Command implementations. Every numeric table is derived from trace.bin
//! by postprocess operations: `fit` writes the trace and then runs the same
//! summarizer that `report` runs on a stored run directory.

use crate::meta::{RunMeta, META_VERSION};
use crate::{FitArgs, ReportArgs, SimulateArgs};
use lcreg::error::{Error, Result};
use lcreg::files::{
    read_covariates, read_responses, write_covariates, write_responses, ResponseSchema,
    RunConfigFile, Truth,
};
use lcreg::lca::{run_lca_chain, LcaChainConfig};
use lcreg::lcr::{run_lcr_chain, LcrChainConfig};
use lcreg::model::{CategoricalDataset, CovariateMatrix, ItemProbs, PriorConfig};
use lcreg::postprocess::{
    adjusted_rand_index, class_proportions, credible_ball, hdi, minvi_point_estimate,
    posterior_inclusion_probabilities, posthoc_theta, stephens_relabel, variation_of_information,
    CredibleBall, PartitionEstimate, RelabelledTrace,
};
use lcreg::simulate::{generate, sim1_spec, sim2_spec, CovariateLaw, GenerativeSpec};
use lcreg::trace::{ChainTrace, Mode, ModelKind};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

// ---------------------------------------------------------------------------
// simulate

#[derive(Deserialize)]
struct SpecFile {
    /// theta[class][item][category].
    theta: Vec<Vec<Vec<f64>>>,
    /// beta[coefficient][class]; the last class column must be zero.
    beta: Vec<Vec<f64>>,
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = match args.spec.as_str() {
        "sim1" => sim1_spec(args.n),
        "sim2" => sim2_spec(args.n),
        path => {
            let file = std::fs::File::open(path).map_err(|e| {
                Error::Config(format!("unknown spec name or unreadable file '{path}': {e}"))
            })?;
            let parsed: SpecFile = serde_json::from_reader(file)?;
            let theta = ItemProbs::from_rows(&parsed.theta)?;
            let rows = parsed.beta.len();
            let cols = parsed.beta.first().map_or(0, Vec::len);
            let beta = DMatrix::from_fn(rows, cols, |r, c| parsed.beta[r][c]);
            GenerativeSpec {
                theta,
                beta,
                covariates: CovariateLaw::StandardNormal {
                    n_predictors: rows.saturating_sub(1),
                },
                n_obs: args.n,
            }
        }
    };
    let (data, covariates, labels) = generate(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let item_names: Vec<String> = (1..=data.n_items()).map(|j| format!("item{j}")).collect();
    let pred_names: Vec<String> = (1..=covariates.n_predictors())
        .map(|l| format!("x{l}"))
        .collect();
    write_responses(&args.out.join("responses.csv"), &data, &item_names)?;
    ResponseSchema::new(&item_names, data.levels()).write(&args.out.join("schema.json"))?;
    write_covariates(&args.out.join("covariates.csv"), &covariates, &pred_names)?;
    Truth::from_spec(&spec, &labels).write(&args.out.join("truth.json"))?;
    println!(
        "wrote {} observations ({} items, {} predictors) to {}",
        data.n_obs(),
        data.n_items(),
        covariates.n_predictors(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

struct FitPlan {
    model: ModelKind,
    mode: Mode,
    g_values: Vec<usize>,
    n_iter: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    alpha: Option<f64>,
    lambda: Option<f64>,
    coef_prior_var: Option<f64>,
    coef_overrides: Vec<(usize, usize, f64)>,
    item_prior: Option<f64>,
    pred_prior: Option<f64>,
}

fn build_plan(args: &FitArgs) -> Result<FitPlan> {
    let config = match &args.config {
        Some(path) => RunConfigFile::read(path)?,
        None => RunConfigFile::default(),
    };
    let model = match args.model.as_str() {
        "lca" => ModelKind::Lca,
        "lcr" => ModelKind::Lcr,
        other => {
            return Err(Error::Config(format!(
                "unknown model '{other}' (expected lca or lcr)"
            )))
        }
    };
    if let Some(m) = config.get("model") {
        let file_model = match m {
            "lca" => ModelKind::Lca,
            "lcr" => ModelKind::Lcr,
            other => return Err(Error::Config(format!("unknown model '{other}' in config"))),
        };
        if file_model != model {
            return Err(Error::Config(format!(
                "config file declares model '{m}' but --model {} given",
                args.model
            )));
        }
    }
    let mode = match (&args.mode, config.get("mode")) {
        (Some(flag), _) => Mode::parse(flag)?,
        (None, Some(key)) => Mode::parse(key)?,
        (None, None) => match model {
            ModelKind::Lca => Mode::ItemSel,
            ModelKind::Lcr => Mode::Both,
        },
    };
    if model == ModelKind::Lca && mode.selects_predictors() {
        return Err(Error::Config(
            "predictor selection applies to lcr fits only".into(),
        ));
    }
    let g_flag = match args.g {
        Some(g) => Some(g),
        None => config.get_parsed::<usize>("g")?,
    };
    let g_values = match (&args.g_grid, g_flag) {
        (Some(grid), _) => {
            if model != ModelKind::Lca {
                return Err(Error::Config(
                    "--g-grid runs the LCA class-count comparison; use --g for lcr".into(),
                ));
            }
            let (lo, hi) = grid.split_once(':').ok_or_else(|| {
                Error::Config(format!("--g-grid expects LO:HI, got '{grid}'"))
            })?;
            let lo: usize = lo
                .parse()
                .map_err(|_| Error::Config(format!("bad grid bound '{lo}'")))?;
            let hi: usize = hi
                .parse()
                .map_err(|_| Error::Config(format!("bad grid bound '{hi}'")))?;
            if lo < 1 || hi < lo {
                return Err(Error::Config(format!("empty grid {lo}:{hi}")));
            }
            (lo..=hi).collect()
        }
        (None, Some(g)) => vec![g],
        (None, None) => return Err(Error::Config("supply --g or --g-grid".into())),
    };
    let pick =
        |flag: Option<usize>, key: &str, default: usize| -> Result<usize> {
            Ok(flag.or(config.get_parsed::<usize>(key)?).unwrap_or(default))
        };
    Ok(FitPlan {
        model,
        mode,
        g_values,
        n_iter: pick(args.n_iter, "n_iter", 50_000)?,
        burn_in: pick(args.burn_in, "burn_in", 1_000)?,
        thin: pick(args.thin, "thin", 10)?,
        seed: args.seed.or(config.get_parsed::<u64>("seed")?).unwrap_or(1),
        alpha: config.get_parsed::<f64>("alpha")?,
        lambda: config.get_parsed::<f64>("lambda")?,
        coef_prior_var: config.get_parsed::<f64>("coef_prior_var")?,
        coef_overrides: config.coef_variance_overrides()?,
        item_prior: config.get_parsed::<f64>("item_prior")?,
        pred_prior: config.get_parsed::<f64>("pred_prior")?,
    })
}

fn build_priors(
    plan: &FitPlan,
    levels: &[usize],
    n_classes: usize,
    n_predictors: usize,
) -> Result<PriorConfig> {
    let mut priors = PriorConfig::defaults(levels, n_classes, n_predictors);
    if let Some(alpha) = plan.alpha {
        priors.item_concentration = levels.iter().map(|&k| vec![alpha; k]).collect();
    }
    if let Some(lambda) = plan.lambda {
        priors.class_concentration = vec![lambda; n_classes];
    }
    if let Some(v) = plan.coef_prior_var {
        priors.coef_variance = vec![vec![v; n_predictors + 1]; n_classes.saturating_sub(1)];
    }
    for &(class, coef, variance) in &plan.coef_overrides {
        if class >= n_classes.saturating_sub(1) || coef > n_predictors {
            return Err(Error::Config(format!(
                "coef_prior_var_overrides entry {}:{}:{} outside the model dimensions",
                class + 1,
                coef,
                variance
            )));
        }
        priors.coef_variance[class][coef] = variance;
    }
    if let Some(p) = plan.item_prior {
        priors.item_inclusion_prior = vec![p; levels.len()];
    }
    if let Some(p) = plan.pred_prior {
        priors.predictor_inclusion_prior = vec![p; n_predictors];
    }
    priors.validate(levels, n_classes, n_predictors)?;
    Ok(priors)
}

pub fn cmd_fit(args: FitArgs) -> Result<()> {
    let plan = build_plan(&args)?;
    let schema_path = args
        .schema
        .clone()
        .unwrap_or_else(|| args.responses.with_file_name("schema.json"));
    let schema = ResponseSchema::read(&schema_path)?;
    let (data, dropped) = read_responses(&args.responses, &schema, args.drop_incomplete)?;
    if !dropped.is_empty() {
        log::warn!("dropped {} rows with missing responses", dropped.len());
    }
    let covariates = match (&args.covariates, plan.model) {
        (Some(path), _) => Some(read_covariates(path, &dropped)?),
        (None, ModelKind::Lcr) => {
            return Err(Error::Config("lcr fits require --covariates".into()))
        }
        (None, ModelKind::Lca) => None,
    };
    if let Some(covs) = &covariates {
        if covs.n_obs() != data.n_obs() {
            return Err(Error::Dimension(format!(
                "{} covariate rows for {} response rows",
                covs.n_obs(),
                data.n_obs()
            )));
        }
    }
    let n_predictors = covariates.as_ref().map_or(0, CovariateMatrix::n_predictors);

    // Validate every chain configuration before touching the filesystem.
    let mut chain_priors = Vec::new();
    for &g in &plan.g_values {
        let priors = build_priors(&plan, data.levels(), g, n_predictors)?;
        match plan.model {
            ModelKind::Lca => {
                let config = lca_config(&plan, g, priors.clone(), stream_id_for(&plan, g));
                config.validate(&data)?;
            }
            ModelKind::Lcr => {
                let config = lcr_config(&plan, g, priors.clone(), stream_id_for(&plan, g));
                config.validate(&data, covariates.as_ref().unwrap())?;
            }
        }
        chain_priors.push(priors);
    }

    std::fs::create_dir_all(&args.out)?;
    let multi = plan.g_values.len() > 1;
    let threads: Option<usize> = std::env::var("LCREG_THREADS")
        .ok()
        .and_then(|v| v.parse().ok());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let jobs: Vec<(usize, PriorConfig)> = plan
        .g_values
        .iter()
        .copied()
        .zip(chain_priors)
        .collect();
    let results: Vec<Result<(usize, PartitionEstimate)>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(g, priors)| {
                let dir = if multi {
                    args.out.join(format!("g{g}"))
                } else {
                    args.out.clone()
                };
                std::fs::create_dir_all(&dir)?;
                let estimate = fit_one_chain(
                    &plan,
                    *g,
                    priors,
                    &data,
                    covariates.as_ref(),
                    &schema,
                    &args,
                    &schema_path,
                    &dropped,
                    &dir,
                )?;
                Ok((*g, estimate))
            })
            .collect()
    });
    let mut estimates = Vec::new();
    for r in results {
        estimates.push(r?);
    }

    if multi {
        write_grid_comparison(&args.out, &estimates)?;
    }
    println!("fit complete: {}", args.out.display());
    Ok(())
}

fn stream_id_for(plan: &FitPlan, g: usize) -> u64 {
    if plan.g_values.len() > 1 {
        g as u64
    } else {
        0
    }
}

fn lca_config(plan: &FitPlan, g: usize, priors: PriorConfig, stream_id: u64) -> LcaChainConfig {
    LcaChainConfig {
        n_classes: g,
        n_iter: plan.n_iter,
        burn_in: plan.burn_in,
        thin: plan.thin,
        priors,
        seed: plan.seed,
        stream_id,
        item_selection: plan.mode.selects_items(),
    }
}

fn lcr_config(plan: &FitPlan, g: usize, priors: PriorConfig, stream_id: u64) -> LcrChainConfig {
    LcrChainConfig {
        n_classes: g,
        n_iter: plan.n_iter,
        burn_in: plan.burn_in,
        thin: plan.thin,
        priors,
        seed: plan.seed,
        stream_id,
        mode: plan.mode,
    }
}

#[allow(clippy::too_many_arguments)]
fn fit_one_chain(
    plan: &FitPlan,
    g: usize,
    priors: &PriorConfig,
    data: &CategoricalDataset,
    covariates: Option<&CovariateMatrix>,
    schema: &ResponseSchema,
    args: &FitArgs,
    schema_path: &Path,
    dropped: &[usize],
    dir: &Path,
) -> Result<PartitionEstimate> {
    let stream_id = stream_id_for(plan, g);
    let trace = match plan.model {
        ModelKind::Lca => run_lca_chain(data, &lca_config(plan, g, priors.clone(), stream_id))?,
        ModelKind::Lcr => run_lcr_chain(
            data,
            covariates.unwrap(),
            &lcr_config(plan, g, priors.clone(), stream_id),
        )?,
    };
    let trace_path = dir.join("trace.bin");
    trace.write(std::io::BufWriter::new(std::fs::File::create(&trace_path)?))?;

    let pred_names: Vec<String> = (1..=trace.n_predictors).map(|l| format!("x{l}")).collect();
    let meta = RunMeta {
        meta_version: META_VERSION,
        model: plan.model,
        mode: plan.mode,
        n_classes: g,
        n_iter: plan.n_iter,
        burn_in: plan.burn_in,
        thin: plan.thin,
        seed: plan.seed,
        stream_id,
        n_obs: data.n_obs(),
        levels: data.levels().to_vec(),
        item_names: schema.names(),
        predictor_names: pred_names,
        priors: priors.clone(),
        responses_path: args.responses.clone(),
        schema_path: schema_path.to_path_buf(),
        covariates_path: args.covariates.clone(),
        dropped_rows: dropped.to_vec(),
    };
    meta.write(&dir.join("meta.json"))?;

    // Summaries come from the stored trace, not the in-memory one: read it
    // back so fit and report share one code path byte for byte.
    let stored = ChainTrace::read(std::io::BufReader::new(std::fs::File::open(&trace_path)?))?;
    let summarized = summarize(&stored, data, covariates, &meta)?;
    write_summary_json(dir, &meta, &summarized)?;
    write_partition_json(dir, &summarized.partition)?;
    Ok(summarized.partition)
}

// ---------------------------------------------------------------------------
// shared summarization

pub struct Summarized {
    pub relabelled: RelabelledTrace,
    pub partition: PartitionEstimate,
    pub item_pips: Vec<f64>,
    pub pred_pips: Vec<f64>,
    pub proportions: Vec<(f64, f64)>,
    pub coefficients: Vec<CoefficientSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoefficientSummary {
    /// 1-based non-baseline class.
    pub class: usize,
    /// 0 = intercept, l = predictor l.
    pub coefficient: usize,
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub hdi_lower: f64,
    pub hdi_upper: f64,
}

pub fn coefficient_name(meta: &RunMeta, coefficient: usize) -> String {
    if coefficient == 0 {
        "intercept".to_string()
    } else {
        meta.predictor_names
            .get(coefficient - 1)
            .cloned()
            .unwrap_or_else(|| format!("x{coefficient}"))
    }
}

pub fn summarize(
    trace: &ChainTrace,
    data: &CategoricalDataset,
    covariates: Option<&CovariateMatrix>,
    meta: &RunMeta,
) -> Result<Summarized> {
    let mut trace = trace.clone();
    trace.recompute_class_probs(data, covariates, &meta.priors)?;
    let relabelled = stephens_relabel(&trace)?;
    let (item_pips, pred_pips) = posterior_inclusion_probabilities(&relabelled.trace);
    let proportions = class_proportions(&relabelled.trace);
    let mut partition = minvi_point_estimate(
        &relabelled.trace.labels,
        relabelled.trace.n_kept,
        relabelled.trace.n_obs,
    )?;
    partition.credible_ball = Some(credible_ball(
        &relabelled.trace.labels,
        relabelled.trace.n_kept,
        relabelled.trace.n_obs,
        &partition.labels,
        0.95,
    )?);
    let coefficients = coefficient_summaries(&relabelled.trace, meta)?;
    Ok(Summarized {
        relabelled,
        partition,
        item_pips,
        pred_pips,
        proportions,
        coefficients,
    })
}

fn coefficient_summaries(trace: &ChainTrace, meta: &RunMeta) -> Result<Vec<CoefficientSummary>> {
    let mut out = Vec::new();
    if meta.model != ModelKind::Lcr || trace.n_kept == 0 {
        return Ok(out);
    }
    for g in 0..trace.n_classes.saturating_sub(1) {
        for r in 0..trace.coef_count() {
            let draws: Vec<f64> = (0..trace.n_kept)
                .map(|t| trace.beta_entry(t, r, g))
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (draws.len().max(2) - 1) as f64;
            let (lo, hi) = hdi(&draws, 0.95)?;
            out.push(CoefficientSummary {
                class: g + 1,
                coefficient: r,
                name: coefficient_name(meta, r),
                mean,
                sd: var.sqrt(),
                hdi_lower: lo,
                hdi_upper: hi,
            });
        }
    }
    Ok(out)
}

fn write_summary_json(dir: &Path, meta: &RunMeta, s: &Summarized) -> Result<()> {
    let value = json!({
        "model": meta.model,
        "mode": meta.mode,
        "n_classes": meta.n_classes,
        "n_kept": s.relabelled.trace.n_kept,
        "relabelling": {
            "converged": s.relabelled.converged,
            "outer_iterations": s.relabelled.outer_iterations,
        },
        "class_proportions": s.proportions.iter().enumerate().map(|(g, (mean, sd))| json!({
            "class": g + 1,
            "mean": mean,
            "sd": sd,
        })).collect::<Vec<_>>(),
        "coefficients": s.coefficients,
        "item_pips": s.item_pips.iter().enumerate().map(|(j, pip)| json!({
            "item": meta.item_names.get(j).cloned().unwrap_or_else(|| format!("item{}", j + 1)),
            "pip": pip,
        })).collect::<Vec<_>>(),
        "predictor_pips": s.pred_pips.iter().enumerate().map(|(l, pip)| json!({
            "predictor": meta.predictor_names.get(l).cloned().unwrap_or_else(|| format!("x{}", l + 1)),
            "pip": pip,
        })).collect::<Vec<_>>(),
    });
    let file = std::fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(file, &value)?;
    Ok(())
}

fn write_partition_json(dir: &Path, partition: &PartitionEstimate) -> Result<()> {
    let one_based = |labels: &[usize]| -> Vec<usize> { labels.iter().map(|&z| z + 1).collect() };
    let ball = partition.credible_ball.as_ref();
    let ball_json = ball.map(|b: &CredibleBall| {
        json!({
            "radius": b.radius,
            "level": b.level,
            "horizontal": b.horizontal.iter().map(|p| one_based(p)).collect::<Vec<_>>(),
            "vertical_upper": b.vertical_upper.iter().map(|p| one_based(p)).collect::<Vec<_>>(),
            "vertical_lower": b.vertical_lower.iter().map(|p| one_based(p)).collect::<Vec<_>>(),
        })
    });
    let value = json!({
        "labels": one_based(&partition.labels),
        "expected_vi": partition.expected_vi,
        "credible_ball": ball_json,
    });
    let file = std::fs::File::create(dir.join("partition.json"))?;
    serde_json::to_writer_pretty(file, &value)?;
    Ok(())
}

fn write_grid_comparison(out: &Path, estimates: &[(usize, PartitionEstimate)]) -> Result<()> {
    let mut rows = estimates.to_vec();
    rows.sort_by_key(|(g, _)| *g);
    let mut comparison = csv::Writer::from_path(out.join("comparison.csv"))?;
    comparison.write_record(["g", "expected_vi", "ball_radius", "n_classes_estimate"])?;
    for (g, est) in &rows {
        let radius = est.credible_ball.as_ref().map_or(f64::NAN, |b| b.radius);
        let occupied = {
            let mut set: Vec<usize> = est.labels.clone();
            set.sort_unstable();
            set.dedup();
            set.len()
        };
        comparison.write_record([
            g.to_string(),
            format!("{:.6}", est.expected_vi),
            format!("{radius:.6}"),
            occupied.to_string(),
        ])?;
    }
    comparison.flush()?;

    // Pairwise credible-ball containment: is the other grid member's point
    // estimate inside this member's 95% ball?
    let mut containment = csv::Writer::from_path(out.join("containment.csv"))?;
    containment.write_record(["g_ref", "g_other", "vi_distance", "contained"])?;
    for (g_ref, est_ref) in &rows {
        let radius = est_ref.credible_ball.as_ref().map_or(f64::NAN, |b| b.radius);
        for (g_other, est_other) in &rows {
            if g_ref == g_other {
                continue;
            }
            let dist = variation_of_information(&est_ref.labels, &est_other.labels);
            containment.write_record([
                g_ref.to_string(),
                g_other.to_string(),
                format!("{dist:.6}"),
                (dist <= radius).to_string(),
            ])?;
        }
    }
    containment.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(args: ReportArgs) -> Result<()> {
    let meta = RunMeta::read(&args.run.join("meta.json"))?;
    let responses_path = args.responses.clone().unwrap_or(meta.responses_path.clone());
    let schema_path = args.schema.clone().unwrap_or(meta.schema_path.clone());
    let schema = ResponseSchema::read(&schema_path)?;
    let (data, _) = read_responses(&responses_path, &schema, true)?;
    let covariates = match args
        .covariates
        .clone()
        .or_else(|| meta.covariates_path.clone())
    {
        Some(path) if meta.model == ModelKind::Lcr => {
            Some(read_covariates(&path, &meta.dropped_rows)?)
        }
        _ => None,
    };
    let trace = ChainTrace::read(std::io::BufReader::new(std::fs::File::open(
        args.run.join("trace.bin"),
    )?))?;
    if data.n_obs() != trace.n_obs {
        return Err(Error::Dimension(format!(
            "trace holds {} observations but responses have {}",
            trace.n_obs,
            data.n_obs()
        )));
    }
    let out_dir = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out_dir)?;
    let s = summarize(&trace, &data, covariates.as_ref(), &meta)?;

    write_coefficient_summary_csv(&out_dir, &s)?;
    write_pip_csv(&out_dir, &meta, &s)?;
    write_theta_posthoc_csv(&out_dir, &meta, &data, &s)?;
    write_coefficient_draws_csv(&out_dir, &meta, &s.relabelled.trace)?;

    if let Some(truth_path) = &args.truth {
        let truth = Truth::read(truth_path)?;
        write_truth_tables(&out_dir, &meta, &s, &truth)?;
    }
    println!("report written to {}", out_dir.display());
    Ok(())
}

fn write_coefficient_summary_csv(out: &Path, s: &Summarized) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("coefficient_summary.csv"))?;
    w.write_record([
        "class",
        "coefficient",
        "name",
        "mean",
        "sd",
        "hdi_lower",
        "hdi_upper",
    ])?;
    for c in &s.coefficients {
        w.write_record([
            c.class.to_string(),
            c.coefficient.to_string(),
            c.name.clone(),
            format!("{:.6}", c.mean),
            format!("{:.6}", c.sd),
            format!("{:.6}", c.hdi_lower),
            format!("{:.6}", c.hdi_upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_pip_csv(out: &Path, meta: &RunMeta, s: &Summarized) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("pip.csv"))?;
    w.write_record(["kind", "index", "name", "pip"])?;
    for (j, pip) in s.item_pips.iter().enumerate() {
        w.write_record([
            "item".to_string(),
            (j + 1).to_string(),
            meta.item_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("item{}", j + 1)),
            format!("{pip:.6}"),
        ])?;
    }
    for (l, pip) in s.pred_pips.iter().enumerate() {
        w.write_record([
            "predictor".to_string(),
            (l + 1).to_string(),
            meta.predictor_names
                .get(l)
                .cloned()
                .unwrap_or_else(|| format!("x{}", l + 1)),
            format!("{pip:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Post-hoc theta table over the items retained by the run (PIP > 0.5).
fn write_theta_posthoc_csv(
    out: &Path,
    meta: &RunMeta,
    data: &CategoricalDataset,
    s: &Summarized,
) -> Result<()> {
    let estimates = posthoc_theta(&s.relabelled.trace, data, &meta.priors)?;
    let mut w = csv::Writer::from_path(out.join("theta_posthoc.csv"))?;
    w.write_record(["class", "item", "name", "category", "mean", "sd"])?;
    let total_levels = data.total_levels();
    for g in 0..estimates.n_classes {
        for (j, &k_j) in data.levels().iter().enumerate() {
            if s.item_pips[j] <= 0.5 {
                continue;
            }
            for k in 0..k_j {
                let idx = g * total_levels + data.offset(j) + k;
                w.write_record([
                    (g + 1).to_string(),
                    (j + 1).to_string(),
                    meta.item_names
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| format!("item{}", j + 1)),
                    (k + 1).to_string(),
                    format!("{:.6}", estimates.mean[idx]),
                    format!("{:.6}", estimates.sd[idx]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Plot-ready long-format CSV of posterior coefficient draws.
fn write_coefficient_draws_csv(out: &Path, meta: &RunMeta, trace: &ChainTrace) -> Result<()> {
    if meta.model != ModelKind::Lcr {
        return Ok(());
    }
    let mut w = csv::Writer::from_path(out.join("coefficient_draws.csv"))?;
    w.write_record(["iteration", "class", "coefficient", "name", "value"])?;
    for t in 0..trace.n_kept {
        for g in 0..trace.n_classes.saturating_sub(1) {
            for r in 0..trace.coef_count() {
                w.write_record([
                    (t + 1).to_string(),
                    (g + 1).to_string(),
                    r.to_string(),
                    coefficient_name(meta, r),
                    format!("{:.8}", trace.beta_entry(t, r, g)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Maximum-overlap assignment of chain classes to truth classes (subset DP
/// on the negated contingency counts).
pub fn align_classes_to_truth(
    trace: &ChainTrace,
    truth_labels: &[usize],
    n_truth_classes: usize,
) -> Vec<usize> {
    let g = trace.n_classes.max(n_truth_classes);
    let mut overlap = vec![0.0f64; g * g];
    for t in 0..trace.n_kept {
        for (i, &z) in trace.labels_at(t).iter().enumerate() {
            overlap[z as usize * g + truth_labels[i]] += 1.0;
        }
    }
    // Assignment maximizing total overlap: subset DP over truth classes.
    let full = 1usize << g;
    let mut dp = vec![f64::NEG_INFINITY; full];
    let mut parent = vec![usize::MAX; full];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask] == f64::NEG_INFINITY {
            continue;
        }
        let chain_class = mask.count_ones() as usize;
        if chain_class == g {
            continue;
        }
        for truth_class in 0..g {
            let bit = 1 << truth_class;
            if mask & bit != 0 {
                continue;
            }
            let cand = dp[mask] + overlap[chain_class * g + truth_class];
            if cand > dp[mask | bit] {
                dp[mask | bit] = cand;
                parent[mask | bit] = truth_class;
            }
        }
    }
    let mut assignment = vec![0usize; g];
    let mut mask = full - 1;
    while mask != 0 {
        let truth_class = parent[mask];
        let chain_class = mask.count_ones() as usize - 1;
        assignment[chain_class] = truth_class;
        mask &= !(1 << truth_class);
    }
    assignment.truncate(trace.n_classes);
    assignment
}

fn write_truth_tables(out: &Path, meta: &RunMeta, s: &Summarized, truth: &Truth) -> Result<()> {
    let truth_labels = truth.labels_zero_based();
    if truth_labels.len() != s.relabelled.trace.n_obs {
        return Err(Error::Dimension(format!(
            "truth has {} labels for {} observations",
            truth_labels.len(),
            s.relabelled.trace.n_obs
        )));
    }
    let ari = adjusted_rand_index(&s.partition.labels, &truth_labels)?;
    std::fs::write(out.join("ari.txt"), format!("{ari:.6}\n"))?;

    if meta.model != ModelKind::Lcr || truth.beta.is_empty() {
        return Ok(());
    }
    let n_truth_classes = truth.beta.first().map_or(0, Vec::len);
    let assignment = align_classes_to_truth(&s.relabelled.trace, &truth_labels, n_truth_classes);
    let true_beta = truth.beta_matrix();
    let g_total = s.relabelled.trace.n_classes;
    let baseline_truth = assignment[g_total - 1];
    let mut w = csv::Writer::from_path(out.join("hdi_coverage.csv"))?;
    w.write_record([
        "class",
        "truth_class",
        "coefficient",
        "name",
        "true_value",
        "hdi_lower",
        "hdi_upper",
        "covered",
    ])?;
    for c in &s.coefficients {
        let truth_class = assignment[c.class - 1];
        // Re-reference the truth to the chain's matched baseline class.
        let true_value =
            true_beta[(c.coefficient, truth_class)] - true_beta[(c.coefficient, baseline_truth)];
        let covered = c.hdi_lower <= true_value && true_value <= c.hdi_upper;
        w.write_record([
            c.class.to_string(),
            (truth_class + 1).to_string(),
            c.coefficient.to_string(),
            c.name.clone(),
            format!("{true_value:.6}"),
            format!("{:.6}", c.hdi_lower),
            format!("{:.6}", c.hdi_upper),
            covered.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
