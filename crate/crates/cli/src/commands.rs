use std::collections::HashMap;
use std::path::{Path, PathBuf};

use variscan::regression::{
    predict as predict_draws, Family, OutcomeData, RepresentativeMode, Stage2Sampler,
};
use variscan::sim::{concordance_error, gen_cluster_dataset, gen_survival_dataset};
use variscan::stage1::{run_configuration, Stage1Sampler};
use variscan::summaries::{credible_interval, dirichlet_posterior_prob, kappa, logbf_lower_bound};
use variscan::{CovariateMatrix, Partition, RandomSource, Standardization};

use crate::artifacts::*;
use crate::config::{load, EffectiveConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::*;
use crate::{streams, Common};

/// Resolved configuration, its hash and the output directory of one command.
struct Run {
    config: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Run {
    fn start(common: &Common, command: &str, inputs: &[(&str, &Path)], extra: &[String]) -> CliResult<Self> {
        let mut overrides = common.overrides.clone();
        overrides.extend_from_slice(extra);
        let config = load(common.config.as_deref(), &overrides, common.seed)?;
        Self::with_config(config, &common.out, command, inputs)
    }

    fn with_config(config: RunConfig, out: &Path, command: &str, inputs: &[(&str, &Path)]) -> CliResult<Self> {
        let effective = EffectiveConfig {
            command: command.to_string(),
            inputs: inputs.iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect(),
            run: config,
        };
        let text = effective.to_toml()?;
        ensure_dir(out)?;
        write_text(&out.join(CONFIG_FILE), &text)?;
        Ok(Self { config: effective.run, hash: hex_digest_of(&text), out: out.to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn rng(&self, stream: u64) -> RandomSource {
        RandomSource::new(self.config.seed, stream)
    }
}

fn hex_digest_of(text: &str) -> String {
    crate::config::hex_digest(text.as_bytes())
}

fn pairs(items: &[(&str, String)]) -> Vec<(String, String)> {
    items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn generated_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn simulate_clusters(common: &Common) -> CliResult<()> {
    let run = Run::start(common, "simulate-clusters", &[], &[])?;
    let data = gen_cluster_dataset(&run.config.cluster_sim, &mut run.rng(streams::SIMULATION))?;
    let names = generated_names(data.x.p());
    write_covariates(&run.path("covariates.csv"), &run.hash, &names, &data.x)?;
    write_allocation(&run.path("truth_allocation.csv"), &run.hash, &names, data.allocation.assignments())?;
    let truth = Truth {
        allocation: Some(data.allocation.assignments().iter().map(|l| l + 1).collect()),
        n_clusters: Some(data.n_clusters()),
        ..Default::default()
    };
    write_json(&run.path(TRUTH_FILE), &truth)
}

pub fn simulate_survival(common: &Common, beta_star: Option<f64>, source: Option<&Path>) -> CliResult<()> {
    let extra: Vec<String> = beta_star.map(|b| format!("survival_sim.beta_star={}", fmt_f64(b))).into_iter().collect();
    let inputs: Vec<(&str, &Path)> = source.map(|p| ("source", p)).into_iter().collect();
    let run = Run::start(common, "simulate-survival", &inputs, &extra)?;
    let (names, source_x) = match source {
        Some(p) => {
            let ing = ingest_covariates(p)?;
            if ing.matrix.has_missing() {
                return Err(CliError::Data(format!("{}: source covariates must be complete", p.display())));
            }
            (ing.names, Some(ing.matrix))
        }
        None => (generated_names(run.config.survival_sim.p), None),
    };
    let data = gen_survival_dataset(&run.config.survival_sim, source_x.as_ref(), &mut run.rng(streams::SIMULATION))?;
    let all: Vec<usize> = (0..data.w.len()).collect();
    write_covariates(&run.path("covariates.csv"), &run.hash, &names, &data.x)?;
    write_outcomes(&run.path("outcomes.csv"), &run.hash, &all, &data.w, &data.delta)?;
    for (label, rows) in [("train", &data.train), ("test", &data.test)] {
        let x = data.x.select_rows(rows)?;
        let w: Vec<f64> = rows.iter().map(|&i| data.w[i]).collect();
        let d: Vec<bool> = rows.iter().map(|&i| data.delta[i]).collect();
        let local: Vec<usize> = (0..rows.len()).collect();
        write_covariates(&run.path(&format!("{label}_covariates.csv")), &run.hash, &names, &x)?;
        write_outcomes(&run.path(&format!("{label}_outcomes.csv")), &run.hash, &local, &w, &d)?;
    }
    let mut split = TableWriter::create(&run.path("split.csv"), &run.hash, &["subject", "set", "row"])?;
    for (label, rows) in [("train", &data.train), ("test", &data.test)] {
        for (r, &i) in rows.iter().enumerate() {
            split.row([(i + 1).to_string(), label.to_string(), (r + 1).to_string()])?;
        }
    }
    split.finish()?;
    let truth = Truth {
        predictors: Some(data.predictors.iter().map(|j| j + 1).collect()),
        beta_star: Some(run.config.survival_sim.beta_star),
        ..Default::default()
    };
    write_json(&run.path(TRUTH_FILE), &truth)
}

fn same_observed(a: &CovariateMatrix, b: &CovariateMatrix) -> bool {
    a.n() == b.n()
        && a.p() == b.p()
        && (0..a.p()).all(|j| {
            (0..a.n()).all(|i| {
                a.is_missing(i, j) == b.is_missing(i, j)
                    && (a.is_missing(i, j) || a.get(i, j).to_bits() == b.get(i, j).to_bits())
            })
        })
}

fn load_checkpoint<T: serde::de::DeserializeOwned>(path: &Path, resume: bool) -> CliResult<Option<T>> {
    if resume && path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

fn check_hash(found: &str, expected: &str, what: &str) -> CliResult<()> {
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Checkpoint(format!("{what} was written under config hash {found}, current run is {expected}")))
    }
}

fn chunk(every: usize) -> Option<usize> {
    Some(if every == 0 { usize::MAX } else { every })
}

pub fn fit_stage1(common: &Common, covariates: &Path, resume: bool) -> CliResult<()> {
    let run = Run::start(common, "fit-stage1", &[("covariates", covariates)], &[])?;
    stage1_with(&run, covariates, resume)
}

fn stage1_with(run: &Run, covariates: &Path, resume: bool) -> CliResult<()> {
    let ing = ingest_covariates(covariates)?;
    let standardization = if run.config.io.standardize {
        Standardization::fit(&ing.matrix)
    } else {
        Standardization::identity(ing.matrix.p())
    };
    let x = standardization.apply(&ing.matrix)?;
    let ckpt_path = run.path(STAGE1_CHECKPOINT);
    let mut sampler = match load_checkpoint::<Stage1Checkpoint>(&ckpt_path, resume)? {
        Some(c) => {
            check_hash(&c.config_hash, &run.hash, "Stage-1 checkpoint")?;
            if !same_observed(&c.sampler.x, &x) {
                return Err(CliError::Checkpoint("Stage-1 checkpoint covariates differ from the input".into()));
            }
            c.sampler
        }
        None => Stage1Sampler::new(&x, run.config.stage1.clone(), run.rng(streams::STAGE1))?,
    };
    let every = run.config.io.checkpoint_every;
    while !sampler.is_finished() {
        sampler.run(chunk(every))?;
        if every > 0 {
            write_json(&ckpt_path, &Stage1Checkpoint { config_hash: run.hash.clone(), sampler: sampler.clone() })?;
        }
    }
    let (cocluster, allocation, loss) = sampler.summarize()?;
    let configuration = run_configuration(
        &sampler.x,
        &allocation,
        &sampler.state,
        &run.config.stage1,
        &mut run.rng(streams::CONFIGURATION),
    )?;
    let artifact = Stage1Artifact {
        config_hash: run.hash.clone(),
        names: ing.names.clone(),
        standardization,
        x: sampler.x.clone(),
        allocation: allocation.clone(),
        allocation_loss: loss,
        configuration,
        discounts: sampler.discounts.clone(),
        log_odds: sampler.log_odds.clone(),
    };

    write_allocation(&run.path("allocation.csv"), &run.hash, &ing.names, allocation.assignments())?;
    let header: Vec<&str> = std::iter::once("covariate").chain(ing.names.iter().map(String::as_str)).collect();
    let mut cc = TableWriter::create(&run.path("cocluster.csv"), &run.hash, &header)?;
    for j in 0..cocluster.p() {
        cc.row(std::iter::once(ing.names[j].clone()).chain(cocluster.row(j).iter().map(|v| fmt_f64(*v))))?;
    }
    cc.finish()?;
    let mut dt = TableWriter::create(&run.path("d_trace.csv"), &run.hash, &["draw", "discount", "log_odds"])?;
    for (i, (d, l)) in sampler.discounts.iter().zip(&sampler.log_odds).enumerate() {
        dt.row([(i + 1).to_string(), fmt_f64(*d), fmt_f64(*l)])?;
    }
    dt.finish()?;
    let mut tr = TableWriter::create(
        &run.path("trace.csv"),
        &run.hash,
        &["sweep", "n_clusters", "tau", "tau1", "xi", "discount", "mass", "dp_mass", "n_atoms", "log_likelihood", "log_odds"],
    )?;
    for t in &sampler.trace {
        tr.row([
            t.sweep.to_string(),
            t.n_clusters.to_string(),
            fmt_f64(t.tau),
            fmt_f64(t.tau1),
            fmt_f64(t.xi),
            fmt_f64(t.discount),
            fmt_f64(t.mass),
            fmt_f64(t.dp_mass),
            t.n_atoms.to_string(),
            fmt_f64(t.log_likelihood),
            fmt_f64(t.log_odds),
        ])?;
    }
    tr.finish()?;
    let conf = &artifact.configuration;
    let mut cf = TableWriter::create(
        &run.path("configuration.csv"),
        &run.hash,
        &["subject", "cluster", "latent", "indicator_prob"],
    )?;
    for k in 0..allocation.n_clusters() {
        let col = conf.latent.column(k);
        for (i, v) in col.iter().enumerate() {
            cf.row([(i + 1).to_string(), (k + 1).to_string(), fmt_f64(*v), fmt_f64(conf.indicator_probs[k][i])])?;
        }
    }
    cf.finish()?;
    let mut summary = stage1_summary(&artifact)?;
    summary.push(("missing_cells".into(), ing.matrix.missing_count().to_string()));
    write_key_values(&run.path("summary.csv"), &run.hash, &summary)?;
    write_json(&run.path(STAGE1_FILE), &artifact)
}

fn stage1_summary(a: &Stage1Artifact) -> CliResult<Vec<(String, String)>> {
    let (d_lo, d_hi) = credible_interval(&a.discounts, 0.95)?;
    let bf = logbf_lower_bound(&a.log_odds)?;
    let d_mean = a.discounts.iter().sum::<f64>() / a.discounts.len() as f64;
    Ok(pairs(&[
        ("n", a.x.n().to_string()),
        ("p", a.x.p().to_string()),
        ("samples", a.discounts.len().to_string()),
        ("q_hat", a.allocation.n_clusters().to_string()),
        ("allocation_loss", fmt_f64(a.allocation_loss)),
        ("d_mean", fmt_f64(d_mean)),
        ("d_lower", fmt_f64(d_lo)),
        ("d_upper", fmt_f64(d_hi)),
        ("p_dirichlet", fmt_f64(dirichlet_posterior_prob(&a.discounts)?)),
        ("logbf_bound", fmt_f64(bf.mean)),
        ("logbf_lower", fmt_f64(bf.lower)),
        ("logbf_upper", fmt_f64(bf.upper)),
    ]))
}

pub fn fit_stage2(common: &Common, stage1: &Path, outcomes: &Path, resume: bool) -> CliResult<()> {
    let run = Run::start(common, "fit-stage2", &[("stage1", stage1), ("outcomes", outcomes)], &[])?;
    stage2_with(&run, stage1, outcomes, resume)
}

fn outcome_data(run: &Run, path: &Path, n: usize) -> CliResult<OutcomeData> {
    let o = read_outcomes(path)?;
    if o.w.len() != n {
        return Err(CliError::Data(format!(
            "{}: {} outcomes for {n} training subjects",
            path.display(),
            o.w.len()
        )));
    }
    let family = run.config.family.resolve(o.delta.is_some());
    let delta = o.delta.unwrap_or_else(|| vec![true; n]);
    let data = match family {
        Family::Aft => OutcomeData::aft(o.w, delta),
        Family::Gaussian => OutcomeData::gaussian(o.w),
        Family::Glm(_) => OutcomeData { w: o.w, delta, family },
    };
    data.validate()?;
    Ok(data)
}

fn stage2_with(run: &Run, stage1: &Path, outcomes: &Path, resume: bool) -> CliResult<()> {
    let s1: Stage1Artifact = read_json(&stage1.join(STAGE1_FILE))?;
    let data = outcome_data(run, outcomes, s1.x.n())?;
    let cfg = &run.config.stage2;
    let latent = match cfg.representative_mode {
        RepresentativeMode::Latent => Some(&s1.configuration.latent),
        RepresentativeMode::Member => None,
    };
    let ckpt_path = run.path(STAGE2_CHECKPOINT);
    let mut sampler = match load_checkpoint::<Stage2Checkpoint>(&ckpt_path, resume)? {
        Some(c) => {
            check_hash(&c.config_hash, &run.hash, "Stage-2 checkpoint")?;
            if c.sampler.partition != s1.allocation || c.sampler.data != data {
                return Err(CliError::Checkpoint("Stage-2 checkpoint inputs differ from the current ones".into()));
            }
            c.sampler
        }
        None => Stage2Sampler::new(&s1.allocation, latent, &s1.x, &data, cfg.clone(), run.rng(streams::STAGE2))?,
    };
    let every = run.config.io.checkpoint_every;
    while !sampler.is_finished() {
        sampler.run(chunk(every))?;
        if every > 0 {
            write_json(&ckpt_path, &Stage2Checkpoint { config_hash: run.hash.clone(), sampler: sampler.clone() })?;
        }
    }
    let out = sampler.finish()?;

    let members = s1.allocation.members();
    let mut sel = TableWriter::create(
        &run.path("selection.csv"),
        &run.hash,
        &["cluster", "size", "linear_prob", "spline_prob", "top_members"],
    )?;
    for (k, m) in members.iter().enumerate() {
        let mut ranked: Vec<(usize, usize)> =
            out.representative_counts[k].iter().enumerate().map(|(pos, &c)| (c, m[pos])).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let top: Vec<String> = ranked
            .iter()
            .filter(|(c, _)| *c > 0)
            .take(run.config.io.top_members)
            .map(|(c, j)| format!("{}:{c}", s1.names[*j]))
            .collect();
        sel.row([
            (k + 1).to_string(),
            m.len().to_string(),
            fmt_f64(out.linear_prob[k]),
            fmt_f64(out.spline_prob[k]),
            top.join(";"),
        ])?;
    }
    sel.finish()?;
    let mut om = TableWriter::create(&run.path("omega_trace.csv"), &run.hash, &["draw", "omega0", "omega1", "omega2"])?;
    for (i, w) in out.omega_trace.iter().enumerate() {
        om.row([(i + 1).to_string(), fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(w[2])])?;
    }
    om.finish()?;
    let m = out.samples.len() as f64;
    let size = out.samples.iter().map(|s| s.beta.len() as f64 - 1.0).sum::<f64>() / m;
    let sigma2 = out.samples.iter().map(|s| s.sigma2).sum::<f64>() / m;
    write_key_values(
        &run.path("summary.csv"),
        &run.hash,
        &pairs(&[
            ("samples", out.samples.len().to_string()),
            ("nonlinearity", fmt_f64(out.nonlinearity)),
            ("mean_columns", fmt_f64(size)),
            ("mean_sigma2", fmt_f64(sigma2)),
        ]),
    )?;
    let artifact = Stage2Artifact {
        config_hash: run.hash.clone(),
        stage1_hash: s1.config_hash.clone(),
        family: data.family,
        mode: cfg.representative_mode,
        spline: cfg.spline.clone(),
        samples: out.samples,
        linear_prob: out.linear_prob,
        spline_prob: out.spline_prob,
        omega_trace: out.omega_trace,
        nonlinearity: out.nonlinearity,
    };
    write_json(&run.path(STAGE2_FILE), &artifact)
}

pub fn fit(common: &Common, covariates: &Path, outcomes: &Path, resume: bool) -> CliResult<()> {
    let top = Run::start(common, "fit", &[("covariates", covariates), ("outcomes", outcomes)], &[])?;
    let s1_dir = top.out.join("stage1");
    let s1 = Run::with_config(top.config.clone(), &s1_dir, "fit-stage1", &[("covariates", covariates)])?;
    stage1_with(&s1, covariates, resume)?;
    let s2 = Run::with_config(
        top.config.clone(),
        &top.out.join("stage2"),
        "fit-stage2",
        &[("stage1", Path::new("../stage1")), ("outcomes", outcomes)],
    )?;
    stage2_with(&s2, &s1_dir, outcomes, resume)
}

pub fn predict(common: &Common, stage1: &Path, stage2: &Path, covariates: &Path) -> CliResult<()> {
    let run = Run::start(
        common,
        "predict",
        &[("stage1", stage1), ("stage2", stage2), ("covariates", covariates)],
        &[],
    )?;
    let s1: Stage1Artifact = read_json(&stage1.join(STAGE1_FILE))?;
    let s2: Stage2Artifact = read_json(&stage2.join(STAGE2_FILE))?;
    check_hash(&s2.stage1_hash, &s1.config_hash, "Stage-2 artifact's Stage-1 input")?;
    let ing = ingest_covariates(covariates)?;
    if ing.matrix.p() != s1.x.p() {
        return Err(CliError::Data(format!(
            "{}: {} covariates, the fit used {}",
            covariates.display(),
            ing.matrix.p(),
            s1.x.p()
        )));
    }
    let x = s1.standardization.apply(&ing.matrix)?;
    let means: Vec<f64> = (0..s1.x.p()).map(|j| s1.x.column(j).iter().sum::<f64>() / s1.x.n() as f64).collect();
    let p = predict_draws(&s2.samples, &s1.allocation, s2.mode, &s2.spline, &s2.family, &x, &means)?;
    let mut w = TableWriter::create(&run.path("predictions.csv"), &run.hash, &["subject", "y_tilde", "w_tilde", "sd"])?;
    for i in 0..x.n() {
        w.row([(i + 1).to_string(), fmt_f64(p.y[i]), fmt_f64(p.w[i]), fmt_f64(p.sd[i])])?;
    }
    w.finish()?;
    if p.imputed_cells > 0 {
        eprintln!("filled {} missing test cells with training column means", p.imputed_cells);
    }
    Ok(())
}

fn truth_partition(path: &Path) -> CliResult<(Partition, usize)> {
    let truth: Truth = read_json(path)?;
    let labels = truth
        .allocation
        .ok_or_else(|| CliError::Data(format!("{}: no true allocation", path.display())))?;
    if labels.contains(&0) {
        return Err(CliError::Data(format!("{}: allocation labels are 1-based", path.display())));
    }
    let part = Partition::from_labels(&labels);
    let q0 = truth.n_clusters.unwrap_or_else(|| part.n_clusters());
    Ok((part, q0))
}

pub fn evaluate(
    common: &Common,
    truth: Option<&Path>,
    allocation: Option<&Path>,
    outcomes: Option<&Path>,
    predictions: Option<&Path>,
) -> CliResult<()> {
    let inputs: Vec<(&str, &Path)> = [("truth", truth), ("allocation", allocation), ("outcomes", outcomes), ("predictions", predictions)]
        .into_iter()
        .filter_map(|(k, p)| p.map(|p| (k, p)))
        .collect();
    let mut results: Vec<(String, String)> = Vec::new();
    match (truth, allocation) {
        (Some(t), Some(a)) => {
            let (c0, q0) = truth_partition(t)?;
            let c = Partition::from_labels(&read_allocation(a)?);
            if c.len() != c0.len() {
                return Err(CliError::Data(format!("allocation covers {} covariates, truth {}", c.len(), c0.len())));
            }
            let all: Vec<usize> = (0..c.len()).collect();
            results.push(("kappa".into(), fmt_f64(kappa(&c, &c0, &all)?)));
            results.push(("q_hat".into(), c.n_clusters().to_string()));
            results.push(("q0".into(), q0.to_string()));
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--truth and --allocation go together".into())),
    }
    match (outcomes, predictions) {
        (Some(o), Some(p)) => {
            let o = read_outcomes(o)?;
            let (subjects, values) = read_predictions(p)?;
            let lookup: HashMap<&str, f64> = subjects.iter().map(String::as_str).zip(values.iter().copied()).collect();
            let pred = o
                .subjects
                .iter()
                .map(|s| lookup.get(s.as_str()).copied().ok_or_else(|| CliError::Data(format!("no prediction for subject {s}"))))
                .collect::<CliResult<Vec<f64>>>()?;
            let delta = o.delta.clone().unwrap_or_else(|| vec![true; o.w.len()]);
            results.push(("concordance_error".into(), fmt_f64(concordance_error(&o.w, &delta, &pred)?)));
            results.push(("subjects".into(), o.w.len().to_string()));
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--outcomes and --predictions go together".into())),
    }
    if results.is_empty() {
        return Err(CliError::Usage("nothing to evaluate: give --truth/--allocation and/or --outcomes/--predictions".into()));
    }
    let run = Run::start(common, "evaluate", &inputs, &[])?;
    for (k, v) in &results {
        println!("{k}\t{v}");
    }
    write_key_values(&run.path("evaluation.csv"), &run.hash, &results)
}

pub fn report(
    common: &Common,
    stage1: &Path,
    stage2: Option<&Path>,
    truth: Option<&Path>,
    evaluations: &[String],
) -> CliResult<()> {
    let labelled = evaluations
        .iter()
        .map(|e| {
            e.split_once('=')
                .map(|(l, p)| (l.to_string(), PathBuf::from(p)))
                .ok_or_else(|| CliError::Usage(format!("--evaluation `{e}` is not label=path")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut inputs: Vec<(String, PathBuf)> = vec![("stage1".into(), stage1.to_path_buf())];
    inputs.extend(stage2.map(|p| ("stage2".to_string(), p.to_path_buf())));
    inputs.extend(truth.map(|p| ("truth".to_string(), p.to_path_buf())));
    inputs.extend(labelled.iter().map(|(l, p)| (format!("evaluation.{l}"), p.clone())));
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(k, p)| (k.as_str(), p.as_path())).collect();
    let run = Run::start(common, "report", &input_refs, &[])?;

    let s1: Stage1Artifact = read_json(&stage1.join(STAGE1_FILE))?;
    let mut sizes: Vec<(usize, usize)> = s1.allocation.sizes().iter().copied().enumerate().collect();
    sizes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cs = TableWriter::create(&run.path("cluster_sizes.csv"), &run.hash, &["rank", "cluster", "size"])?;
    for (r, (k, s)) in sizes.iter().enumerate() {
        cs.row([(r + 1).to_string(), (k + 1).to_string(), s.to_string()])?;
    }
    cs.finish()?;

    let bins = run.config.io.density_bins.max(1);
    let mut counts = vec![0usize; bins];
    for d in &s1.discounts {
        counts[((d * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let width = 1.0 / bins as f64;
    let total = s1.discounts.len().max(1) as f64;
    let mut dd = TableWriter::create(&run.path("d_density.csv"), &run.hash, &["bin_lower", "bin_upper", "density"])?;
    for (b, c) in counts.iter().enumerate() {
        dd.row([fmt_f64(b as f64 * width), fmt_f64((b + 1) as f64 * width), fmt_f64(*c as f64 / total / width)])?;
    }
    dd.finish()?;

    let mut summary = stage1_summary(&s1)?;
    if let Some(t) = truth {
        let (c0, q0) = truth_partition(t)?;
        if c0.len() != s1.allocation.len() {
            return Err(CliError::Data("truth and Stage-1 allocation differ in length".into()));
        }
        let all: Vec<usize> = (0..c0.len()).collect();
        summary.push(("kappa".into(), fmt_f64(kappa(&s1.allocation, &c0, &all)?)));
        summary.push(("q0".into(), q0.to_string()));
    }
    if let Some(dir) = stage2 {
        let s2: Stage2Artifact = read_json(&dir.join(STAGE2_FILE))?;
        summary.push(("nonlinearity".into(), fmt_f64(s2.nonlinearity)));
        let mut om = TableWriter::create(&run.path("omega_long.csv"), &run.hash, &["draw", "component", "value"])?;
        for (i, w) in s2.omega_trace.iter().enumerate() {
            for (c, v) in w.iter().enumerate() {
                om.row([(i + 1).to_string(), format!("omega{c}"), fmt_f64(*v)])?;
            }
        }
        om.finish()?;
        let mut sl = TableWriter::create(&run.path("selection_long.csv"), &run.hash, &["cluster", "kind", "probability"])?;
        for (k, (l, s)) in s2.linear_prob.iter().zip(&s2.spline_prob).enumerate() {
            sl.row([(k + 1).to_string(), "linear".into(), fmt_f64(*l)])?;
            sl.row([(k + 1).to_string(), "spline".into(), fmt_f64(*s)])?;
        }
        sl.finish()?;
    }
    write_key_values(&run.path("summary.csv"), &run.hash, &summary)?;

    if !labelled.is_empty() {
        let mut er = TableWriter::create(&run.path("error_rates.csv"), &run.hash, &["label", "metric", "value"])?;
        for (l, p) in &labelled {
            for (m, v) in read_key_values(p)? {
                er.row([l.as_str(), m.as_str(), v.as_str()])?;
            }
        }
        er.finish()?;
    }
    Ok(())
}
