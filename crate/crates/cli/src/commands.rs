//! The five commands. Each loads its inputs, runs the library and writes its
//! tables into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ztps::data::Matrix;
use ztps::eval::{cross_validate, CvReport};
use ztps::fit::{export_model, export_regression, import_regression, FitConfig, FittedZtpsRegression, ZtpsRegression};
use ztps::regression::{logit, Candidate, GlobalFamily, GlobalRegSpec, NodeRegSpec, SplitFamily, ZiSide};
use ztps::tree::PartitionTree;

use crate::error::{CliError, Result};
use crate::fingerprint::Fingerprint;
use crate::input::{check_species, load_dataset, load_folds, load_offsets, load_points, load_tree};
use crate::table::{opt, read_text, TableWriter};
use crate::{EvalArgs, ExportEffectsArgs, FitArgs, PredictArgs, SimulateArgs};

fn output_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_model(path: &Path) -> Result<ZtpsRegression> {
    import_regression(&read_text(path)?).map_err(|e| CliError::file(path, e.to_string()))
}

fn family_name(f: SplitFamily) -> &'static str {
    match f {
        SplitFamily::Binomial => "binomial",
        SplitFamily::BetaBinomial => "betabinomial",
    }
}

fn zi_name(z: ZiSide) -> &'static str {
    match z {
        ZiSide::None => "none",
        ZiSide::Side1 => "side1",
        ZiSide::Side2 => "side2",
    }
}

pub fn candidate_label(c: Candidate) -> String {
    match c.zi_side {
        ZiSide::None => family_name(c.family).to_string(),
        side => format!("{}_zi_{}", family_name(c.family), zi_name(side)),
    }
}

/// Per-node model choice with the AIC of every candidate.
pub fn selection_table(fp: &str, fitted: &FittedZtpsRegression, config: &FitConfig) -> TableWriter {
    let mut header: Vec<String> = ["node", "family", "zi_side", "k", "n_obs", "loglik", "aic", "bic", "flagged"]
        .map(String::from)
        .into();
    header.extend(config.candidates.iter().map(|&c| format!("aic_{}", candidate_label(c))));
    let mut w = TableWriter::new(fp, &header);
    for (report, spec) in fitted.nodes.iter().zip(fitted.model.nodes()) {
        let mut row = vec![
            report.name.clone(),
            family_name(spec.family).to_string(),
            zi_name(spec.zi_side).to_string(),
            report.k.to_string(),
            report.n_obs.to_string(),
            report.loglik.to_string(),
            report.aic.to_string(),
            report.bic.to_string(),
            report.flagged.to_string(),
        ];
        row.extend(config.candidates.iter().map(|c| {
            let outcome = report.candidates.iter().find(|o| o.candidate == *c);
            opt(outcome.and_then(|o| o.aic))
        }));
        w.row(row);
    }
    w
}

pub fn coefficient_table(fp: &str, fitted: &FittedZtpsRegression) -> TableWriter {
    let columns = fitted.model.design_names();
    let mut w = TableWriter::new(fp, &["component", "parameter", "estimate", "se"]);
    let global = fitted.model.global();
    let blocks = std::iter::once((
        "global".to_string(),
        global.layout().param_names(&columns),
        global.to_params(),
        fitted.global.se.as_ref(),
    ))
    .chain(fitted.nodes.iter().zip(fitted.model.nodes()).map(|(r, s)| {
        (r.name.clone(), s.layout().param_names(&columns), s.to_params(), r.se.as_ref())
    }));
    for (component, names, values, se) in blocks {
        for (i, (name, value)) in names.iter().zip(&values).enumerate() {
            let se = se.and_then(|s| s.get(i).copied());
            w.row([component.clone(), name.clone(), value.to_string(), opt(se)]);
        }
    }
    w
}

pub fn effects_table(
    fp: &str,
    model: &ZtpsRegression,
    labels: &[String],
    points: &[Vec<f64>],
    offset: f64,
) -> Result<TableWriter> {
    let table = model.effect_table(points, offset)?;
    let mut w = TableWriter::new(fp, &["point", "node", "is_leaf", "covariate", "mean", "effect", "rse"]);
    for r in &table.rows {
        w.row([
            labels[r.point].clone(),
            r.node.clone(),
            r.is_leaf.to_string(),
            r.covariate.clone(),
            r.mean.to_string(),
            r.effect.to_string(),
            r.rse.to_string(),
        ]);
    }
    Ok(w)
}

pub fn summary_table(fp: &str, fitted: &FittedZtpsRegression) -> TableWriter {
    let mut w = TableWriter::new(fp, &["component", "loglik", "k", "aic", "bic"]);
    let g = &fitted.global;
    w.row(["global".to_string(), g.loglik.to_string(), g.k.to_string(), g.aic.to_string(), g.bic.to_string()]);
    let n = &fitted.nodes;
    w.row([
        "nodes".to_string(),
        n.iter().map(|r| r.loglik).sum::<f64>().to_string(),
        n.iter().map(|r| r.k).sum::<usize>().to_string(),
        n.iter().map(|r| r.aic).sum::<f64>().to_string(),
        n.iter().map(|r| r.bic).sum::<f64>().to_string(),
    ]);
    let t = &fitted.totals;
    w.row(["total".to_string(), t.loglik.to_string(), t.k.to_string(), t.aic.to_string(), t.bic.to_string()]);
    w
}

fn flagged_error(names: &[String], report: &Path) -> Result<()> {
    if names.is_empty() {
        return Ok(());
    }
    Err(CliError::Numerical(format!(
        "{} node fit(s) fell back to an intercept-only binomial ({}); see {}",
        names.len(),
        names.join(", "),
        report.display()
    )))
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let config = args.model.config()?;
    let mut fp = Fingerprint::new("fit");
    args.data.fingerprint(&mut fp)?;
    args.model.fingerprint(&mut fp);
    fp.optional_file("at", args.at.as_deref())?;
    let fp = fp.finish();

    let dataset = load_dataset(&args.data.paths())?;
    let tree = load_tree(&args.data.tree)?;
    check_species(&dataset, &tree, &args.data.counts, &args.data.tree)?;
    let mut labels = vec!["mean".to_string()];
    let mut points = vec![dataset.mean_design_row()];
    if let Some(at) = &args.at {
        let (l, p) = load_points(at, &dataset.covariate_names)?;
        labels.extend(l);
        points.extend(p);
    }

    let fitted = ztps::fit::fit(&dataset, &tree, &config)?;
    let out = output_dir(&args.out)?;
    write_text(&out.join("model.json"), &export_model(&fitted)?)?;
    selection_table(&fp, &fitted, &config).write(&out.join("selection.tsv"))?;
    coefficient_table(&fp, &fitted).write(&out.join("coefficients.tsv"))?;
    effects_table(&fp, &fitted.model, &labels, &points, 1.0)?.write(&out.join("effects.tsv"))?;
    summary_table(&fp, &fitted).write(&out.join("summary.tsv"))?;

    let mut flagged = TableWriter::new(&fp, &["node", "note"]);
    let names: Vec<String> = fitted.flagged_nodes().iter().map(|r| r.name.clone()).collect();
    for r in fitted.flagged_nodes() {
        flagged.row([r.name.clone(), r.note.clone().unwrap_or_default()]);
    }
    let report = out.join("flagged.tsv");
    flagged.write(&report)?;
    flagged_error(&names, &report)
}

fn normal<R: Rng>(rng: &mut R, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

/// Random truth for `simulate` without a model file: a balanced tree whose
/// nodes cycle through binomial, beta-binomial and zero-inflated binomial
/// splits.
pub fn generator_model<R: Rng>(species: usize, p: usize, global: GlobalFamily, rng: &mut R) -> Result<ZtpsRegression> {
    if species < 2 {
        return Err(CliError::Usage("--species must be at least 2".into()));
    }
    let names: Vec<String> = (1..=species).map(|j| format!("sp{j}")).collect();
    let tree = PartitionTree::balanced_tree(&names)?;
    let n_x = p + 1;
    let mut beta = vec![30f64.ln()];
    beta.extend((0..p).map(|_| normal(rng, 0.3)));
    let log_dispersion = (global == GlobalFamily::NegBin).then_some(-1.0);
    let global = GlobalRegSpec::new(global, beta, log_dispersion, None)?;
    let mut nodes = Vec::with_capacity(tree.n_internal());
    for k in 0..tree.n_internal() {
        let beta: Vec<f64> = (0..n_x).map(|_| normal(rng, 0.5)).collect();
        let spec = match k % 3 {
            0 => NodeRegSpec::new(SplitFamily::Binomial, ZiSide::None, beta, None, None)?,
            1 => {
                let mut delta = vec![0.0; n_x];
                delta[0] = -1.5;
                NodeRegSpec::new(SplitFamily::BetaBinomial, ZiSide::None, beta, Some(delta), None)?
            }
            _ => NodeRegSpec::new(SplitFamily::Binomial, ZiSide::Side2, beta, None, Some(vec![logit(0.2)]))?,
        };
        nodes.push(spec);
    }
    let covariates = (1..=p).map(|k| format!("x{k}")).collect();
    Ok(ZtpsRegression::new(tree, covariates, global, nodes)?)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.sites == 0 {
        return Err(CliError::Usage("--sites must be at least 1".into()));
    }
    if let Some(k) = args.folds {
        if k < 2 || k > args.sites {
            return Err(CliError::Usage(format!("--folds must lie in 2..={}", args.sites)));
        }
    }
    let mut fp = Fingerprint::new("simulate");
    match &args.model {
        Some(path) => {
            fp.file("model", path)?;
        }
        None => {
            fp.option("species", args.species)
                .option("n_covariates", args.n_covariates)
                .option("global", format!("{:?}", args.global));
        }
    }
    fp.option("sites", args.sites)
        .option("seed", args.seed)
        .option("folds", opt(args.folds));
    let fp = fp.finish();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let model = match &args.model {
        Some(path) => read_model(path)?,
        None => generator_model(args.species, args.n_covariates, args.global.into(), &mut rng)?,
    };
    let n = args.sites;
    let p = model.covariate_names().len();
    let width = n.to_string().len();
    let sites: Vec<String> = (1..=n).map(|i| format!("site{i:0width$}")).collect();
    let mut design = Vec::with_capacity(n * (p + 1));
    for _ in 0..n {
        design.push(1.0);
        design.extend((0..p).map(|_| normal(&mut rng, 1.0)));
    }
    let design = Matrix::new(n, p + 1, design)?;
    let offsets = vec![1.0; n];
    let counts = model.simulate(&design, &offsets, &mut rng)?;

    let out = output_dir(&args.out)?;
    let species = model.tree().species_names();
    let mut w = TableWriter::new(&fp, &[&["site_id".to_string()], species].concat());
    for (site, row) in sites.iter().zip(counts.rows()) {
        w.row(std::iter::once(site.clone()).chain(row.iter().map(u64::to_string)));
    }
    w.write(&out.join("counts.tsv"))?;

    let mut w = TableWriter::new(&fp, &[&["site_id".to_string()], model.covariate_names()].concat());
    for (site, row) in sites.iter().zip(design.rows()) {
        w.row(std::iter::once(site.clone()).chain(row[1..].iter().map(f64::to_string)));
    }
    w.write(&out.join("covariates.tsv"))?;

    let mut w = TableWriter::new(&fp, &["site_id", "offset"]);
    for (site, o) in sites.iter().zip(&offsets) {
        w.row([site.clone(), o.to_string()]);
    }
    w.write(&out.join("offsets.tsv"))?;

    if let Some(k) = args.folds {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut labels = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            labels[i] = pos % k + 1;
        }
        let mut w = TableWriter::new(&fp, &["site_id", "fold"]);
        for (site, l) in sites.iter().zip(&labels) {
            w.row([site.clone(), l.to_string()]);
        }
        w.write(&out.join("folds.tsv"))?;
    }

    write_text(&out.join("tree.nwk"), &format!("{}\n", model.tree().to_newick()))?;
    write_text(&out.join("truth.json"), &export_regression(&model)?)
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let covariates = args
        .covariates
        .as_deref()
        .ok_or_else(|| CliError::Usage("predict needs --covariates for the sites to predict".into()))?;
    let mut fp = Fingerprint::new("predict");
    fp.file("model", &args.model)?
        .file("covariates", covariates)?
        .optional_file("offsets", args.offsets.as_deref())?;
    let fp = fp.finish();

    let model = read_model(&args.model)?;
    let (sites, points) = load_points(covariates, model.covariate_names())?;
    let offsets = match &args.offsets {
        Some(path) => load_offsets(path, &sites, covariates)?,
        None => vec![1.0; sites.len()],
    };
    let out = output_dir(&args.out)?;
    let mut w = TableWriter::new(&fp, &[&["site_id".to_string()], model.tree().species_names()].concat());
    for ((site, x), &o) in sites.iter().zip(&points).zip(&offsets) {
        let mean = model.predict_mean(x, o)?;
        w.row(std::iter::once(site.clone()).chain(mean.iter().map(f64::to_string)));
    }
    w.write(&out.join("predictions.tsv"))
}

/// Cross-validation table: one column per fold, then the two global
/// summaries. For RMSE the site-weighted column is the RMSE pooled over all
/// held-out cells.
pub fn cv_table(fp: &str, report: &CvReport) -> TableWriter {
    let mut header = vec!["metric".to_string()];
    header.extend(report.folds.iter().map(|f| format!("fold_{}", f.fold)));
    header.extend(["global_site_weighted".to_string(), "global_fold_mean".to_string()]);
    let mut w = TableWriter::new(fp, &header);
    let row = |name: &str, per: Vec<String>, a: String, b: String| {
        std::iter::once(name.to_string()).chain(per).chain([a, b]).collect::<Vec<_>>()
    };
    w.row(row(
        "mae_log1p",
        report.folds.iter().map(|f| f.mae_log1p.to_string()).collect(),
        report.mae_site_weighted.to_string(),
        report.mae_fold_mean.to_string(),
    ));
    w.row(row(
        "rmse",
        report.folds.iter().map(|f| f.rmse.to_string()).collect(),
        report.rmse_pooled.to_string(),
        report.rmse_fold_mean.to_string(),
    ));
    let total: usize = report.folds.iter().map(|f| f.n_sites).sum();
    w.row(row(
        "n_sites",
        report.folds.iter().map(|f| f.n_sites.to_string()).collect(),
        total.to_string(),
        (total as f64 / report.folds.len() as f64).to_string(),
    ));
    w
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let folds_path = args
        .folds
        .as_deref()
        .ok_or_else(|| CliError::Usage("eval needs --folds <file> assigning each site to a fold".into()))?;
    let config = args.model.config()?;
    let mut fp = Fingerprint::new("eval");
    args.data.fingerprint(&mut fp)?;
    args.model.fingerprint(&mut fp);
    fp.file("folds", folds_path)?;
    let fp = fp.finish();

    let dataset = load_dataset(&args.data.paths())?;
    let tree = load_tree(&args.data.tree)?;
    check_species(&dataset, &tree, &args.data.counts, &args.data.tree)?;
    let folds = load_folds(folds_path, &dataset.site_ids, &args.data.counts)?;
    let report = cross_validate(&dataset, &tree, &folds, &config)?;

    let out = output_dir(&args.out)?;
    cv_table(&fp, &report).write(&out.join("cv_report.tsv"))?;
    let mut flagged = TableWriter::new(&fp, &["fold", "node"]);
    let mut names = Vec::new();
    for f in &report.folds {
        for node in &f.flagged_nodes {
            flagged.row([f.fold.to_string(), node.clone()]);
            names.push(format!("fold {}: {node}", f.fold));
        }
    }
    let path = out.join("flagged.tsv");
    flagged.write(&path)?;
    flagged_error(&names, &path)
}

pub fn export_effects(args: &ExportEffectsArgs) -> Result<()> {
    if args.covariates.is_none() && args.at.is_none() {
        return Err(CliError::Usage(
            "export-effects needs --covariates (mean row) and/or --at (evaluation rows)".into(),
        ));
    }
    if !(args.offset.is_finite() && args.offset > 0.0) {
        return Err(CliError::Usage("--offset must be positive".into()));
    }
    let mut fp = Fingerprint::new("export-effects");
    fp.file("model", &args.model)?
        .optional_file("covariates", args.covariates.as_deref())?
        .optional_file("at", args.at.as_deref())?
        .option("offset", args.offset);
    let fp = fp.finish();

    let model = read_model(&args.model)?;
    let mut labels = Vec::new();
    let mut points = Vec::new();
    if let Some(path) = &args.covariates {
        let (_, rows) = load_points(path, model.covariate_names())?;
        if rows.is_empty() {
            return Err(CliError::file(path, "no sites"));
        }
        let mut mean = vec![0.0; model.n_x()];
        for r in &rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        labels.push("mean".to_string());
        points.push(mean);
    }
    if let Some(path) = &args.at {
        let (l, p) = load_points(path, model.covariate_names())?;
        labels.extend(l);
        points.extend(p);
    }
    let out = output_dir(&args.out)?;
    effects_table(&fp, &model, &labels, &points, args.offset)?.write(&out.join("effects.tsv"))
}

