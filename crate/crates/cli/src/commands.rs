use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use sevenleague::cdc::{build_matrix, CdcMatrix, Decompressor};
use sevenleague::dataset::{generate_labels, LabeledDataset};
use sevenleague::harness::{
    ks_over_time, strong_weak_errors, timing_benchmark, PathSource, RunManifest, SchemeId, TimingConfig,
};
use sevenleague::interpolation::{Extrapolation, InterpolantKind};
use sevenleague::models::{SdeParams, TimeGrid};
use sevenleague::neural::{metrics, metrics_from_predictions, train_with_progress, MlpSurrogate};
use sevenleague::paths::{NormalDraws, PathEnsemble};
use sevenleague::pricing::{
    price_asian, price_bermudan_lsmc_with, OptionKind, PriceResult,
};
use sevenleague::probability::gauss_hermite_normal;
use sevenleague::schemes::ClassicalScheme;
use sevenleague::seven_league::{SamplerOptions, SevenLeagueSampler};

use crate::config::{require, ConfigError, RunConfig, StudySection, SurrogateSection};

pub struct Ctx {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub dry_run: bool,
    pub config: RunConfig,
}

fn config_err<T>(r: sevenleague::Result<T>) -> Result<T> {
    r.map_err(|e| ConfigError(e.to_string()).into())
}

impl Ctx {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// An input produced by an earlier command.
    fn upstream(&self, p: &Path, producer: &str) -> Result<PathBuf> {
        let full = self.resolve(p);
        if !full.exists() {
            bail!(
                "{} not found; produce it first with `sevenleague {producer}`",
                full.display()
            );
        }
        Ok(full)
    }

    fn manifest(&self, command: &str, seeds: Vec<u64>) -> RunManifest {
        let mut cfg = serde_json::to_value(&self.config).unwrap_or_default();
        cfg["seed"] = self.seed.into();
        RunManifest::new(command, cfg, seeds)
    }

    fn finish(&self, mut manifest: RunManifest, artifacts: &[PathBuf]) -> Result<()> {
        for a in artifacts {
            manifest.add_artifact(a)?;
        }
        let path = self.out_dir.join(format!("{}.manifest.json", manifest.command));
        manifest.save(&path)?;
        println!("manifest: {}", path.display());
        Ok(())
    }

    fn create(&self, p: &Path) -> Result<PathBuf> {
        let full = self.resolve(p);
        if let Some(dir) = full.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(full)
    }
}

fn load_sampler(ctx: &Ctx, sur: &SurrogateSection, path: &Path, params: &SdeParams) -> Result<SevenLeagueSampler> {
    let file = ctx.upstream(path, "train")?;
    let net = MlpSurrogate::load(&file).with_context(|| format!("loading model {}", file.display()))?;
    let rule = gauss_hermite_normal(net.n_outputs())?;
    let options = SamplerOptions {
        interpolant: sur.interpolant.unwrap_or(InterpolantKind::Pchip),
        clamp_domain: sur.clamp_domain,
        ..SamplerOptions::default()
    };
    Ok(SevenLeagueSampler::new(Arc::new(net), rule, *params, options)?)
}

struct Samplers {
    conditional: SevenLeagueSampler,
    marginal: SevenLeagueSampler,
    interpolant: InterpolantKind,
    extrapolation: Extrapolation,
}

fn samplers(ctx: &Ctx, sur: Option<&SurrogateSection>, schemes: &[SchemeId], params: &SdeParams) -> Result<Option<Samplers>> {
    if !schemes.iter().any(|s| s.needs_surrogate()) {
        return Ok(None);
    }
    let sur = sur.ok_or_else(|| ConfigError("surrogate schemes need a `surrogate` section".into()))?;
    let conditional = load_sampler(ctx, sur, &sur.model, params)?;
    let marginal = load_sampler(ctx, sur, sur.marginal_model.as_ref().unwrap_or(&sur.model), params)?;
    Ok(Some(Samplers {
        conditional,
        marginal,
        interpolant: sur.interpolant.unwrap_or(InterpolantKind::Pchip),
        extrapolation: sur.extrapolation,
    }))
}

fn source<'a>(id: SchemeId, s: Option<&'a Samplers>) -> Result<PathSource<'a>> {
    Ok(match id {
        SchemeId::Euler => PathSource::Classical(ClassicalScheme::Euler),
        SchemeId::Milstein => PathSource::Classical(ClassicalScheme::Milstein),
        SchemeId::Exact => PathSource::Classical(ClassicalScheme::Exact),
        SchemeId::SevenLeague => PathSource::SevenLeague(&s.ok_or_else(|| anyhow!("no surrogate loaded"))?.conditional),
        SchemeId::SevenLeagueCdc => {
            let s = s.ok_or_else(|| anyhow!("no surrogate loaded"))?;
            PathSource::Cdc {
                conditional: &s.conditional,
                marginal: &s.marginal,
                interpolant: s.interpolant,
                extrapolation: s.extrapolation,
            }
        }
    })
}

fn names(s: &[SchemeId]) -> String {
    s.iter().map(|id| id.as_str()).collect::<Vec<_>>().join(", ")
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let data = require(&ctx.config.data, "data", "gen-data")?;
    if data.domains.is_empty() {
        return Err(ConfigError("`data.domains` is empty".into()).into());
    }
    let rule = config_err(gauss_hermite_normal(data.quadrature_points))?;
    let seeds: Vec<u64> = (0..data.domains.len() as u64).map(|i| ctx.seed.wrapping_add(i)).collect();
    let mut total = 0;
    for (i, d) in data.domains.iter().enumerate() {
        config_err(d.validate())?;
        println!(
            "domain {i}: {:?}, {} points x {} labels, {} MC paths each, seed {}",
            d.model,
            d.n_lhs,
            d.labels_per_point(),
            d.n_mc_paths,
            seeds[i]
        );
        total += d.n_rows();
    }
    let out = ctx.resolve(&data.output);
    println!("{total} rows -> {}", out.display());
    if ctx.dry_run {
        return Ok(());
    }
    let mut merged: Option<LabeledDataset> = None;
    for (d, seed) in data.domains.iter().zip(&seeds) {
        let ds = generate_labels(d, &rule, data.label_scheme, *seed)?;
        merged = Some(match merged {
            None => ds,
            Some(m) => m.merge(ds)?,
        });
    }
    let ds = merged.unwrap();
    let out = ctx.create(&data.output)?;
    ds.save(&out)?;
    println!("rows: {}", ds.n_rows());
    for j in 0..ds.n_outputs {
        let col = (0..ds.n_rows()).map(|r| ds.target_row(r)[j]);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        println!("label {j}: [{lo:.6}, {hi:.6}]");
    }
    ctx.finish(ctx.manifest("gen-data", seeds), &[out.clone(), LabeledDataset::sidecar_path(&out)])
}

pub fn train(ctx: &Ctx) -> Result<()> {
    let t = require(&ctx.config.training, "training", "train")?;
    let mut opt = t.optimizer.clone();
    opt.seed = ctx.seed;
    config_err(opt.validate())?;
    if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
        return Err(ConfigError("`training.train_fraction` must lie in (0, 1)".into()).into());
    }
    let data_path = ctx.upstream(&t.dataset, "gen-data")?;
    println!(
        "training {:?} hidden layers for {} epochs on {}",
        t.hidden,
        opt.total_epochs(),
        data_path.display()
    );
    if ctx.dry_run {
        return Ok(());
    }
    let ds = LabeledDataset::load(&data_path)?;
    let (train_set, test_set) = ds.split(t.train_fraction, ctx.seed)?;
    let train_set = if t.normalize_gbm { config_err(train_set.normalize_gbm())?.0 } else { train_set };
    let mut sizes = vec![ds.n_inputs];
    sizes.extend(&t.hidden);
    sizes.push(ds.n_outputs);
    let mut net = MlpSurrogate::glorot_init(&sizes, ctx.seed)?;
    let every = (opt.total_epochs() / 20).max(1);
    let report = train_with_progress(&mut net, &train_set.inputs, &train_set.targets, &opt, |e, loss| {
        if (e + 1) % every == 0 {
            eprintln!("epoch {:>5}  loss {loss:.6e}", e + 1);
        }
    })?;
    let model = ctx.create(&t.output)?;
    net.save(&model)?;
    let loss_path = model.with_extension("loss.csv");
    let mut w = BufWriter::new(File::create(&loss_path)?);
    writeln!(w, "epoch,loss")?;
    for (e, l) in report.loss_history.iter().enumerate() {
        writeln!(w, "{},{}", e + 1, l)?;
    }
    w.flush()?;
    let m = if t.normalize_gbm {
        // reported in the units of the data file
        let (norm, scales) = test_set.normalize_gbm()?;
        let mut pred = net.forward_batch(&norm.inputs)?;
        for (row, y) in pred.chunks_exact_mut(ds.n_outputs).zip(&scales) {
            row.iter_mut().for_each(|v| *v *= y);
        }
        metrics_from_predictions(&pred, &test_set.targets, ds.n_outputs)?
    } else {
        metrics(&net, &test_set.inputs, &test_set.targets)?
    };
    let metrics_path = model.with_extension("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&m)?)?;
    println!("held-out R²: {:?}", m.r_squared);
    println!("held-out MAE: {:?}", m.mae);
    ctx.finish(ctx.manifest("train", vec![ctx.seed]), &[model, loss_path, metrics_path])
}

fn scheme_grid(dt: f64, horizon: f64) -> Result<TimeGrid> {
    config_err(TimeGrid::with_horizon(0.0, dt, horizon))
}

fn simulate_source(ctx: &Ctx, kind: SchemeId, params: &SdeParams, sur: Option<&SurrogateSection>, grid: &TimeGrid, draws: &NormalDraws) -> Result<PathEnsemble> {
    if let (SchemeId::SevenLeagueCdc, Some(SurrogateSection { matrix: Some(m), interpolant, extrapolation, .. })) = (kind, sur) {
        let file = ctx.upstream(m, "build-cdc")?;
        let matrix = CdcMatrix::load(&file)?;
        if matrix.grid != *grid || matrix.params != *params {
            bail!("matrix {} was built for a different grid or parameters; rebuild it with `sevenleague build-cdc`", file.display());
        }
        let kind = interpolant.unwrap_or(InterpolantKind::Pchip);
        return Ok(Decompressor::with_extrapolation(matrix, kind, *extrapolation)?.simulate_with_draws(draws)?);
    }
    let s = samplers(ctx, sur, &[kind], params)?;
    Ok(source(kind, s.as_ref())?.simulate(params, grid, draws)?)
}

pub fn simulate(ctx: &Ctx) -> Result<()> {
    let s = require(&ctx.config.scheme, "scheme", "simulate")?;
    config_err(s.params.validate())?;
    let grid = scheme_grid(s.dt, s.horizon)?;
    if s.n_paths == 0 {
        return Err(ConfigError("`scheme.n_paths` must be positive".into()).into());
    }
    let out = ctx.resolve(s.output.as_deref().unwrap_or(Path::new("paths.bin")));
    println!("{} paths of {} x {} steps with {} -> {}", s.n_paths, grid.n_steps, grid.dt, s.kind, out.display());
    if ctx.dry_run {
        return Ok(());
    }
    let draws = NormalDraws::generate(s.n_paths, grid.n_steps, ctx.seed);
    let paths = simulate_source(ctx, s.kind, &s.params, s.surrogate.as_ref(), &grid, &draws)?;
    let out = ctx.create(&out)?;
    paths.save(&out)?;
    let term = paths.terminal();
    let mean = term.iter().sum::<f64>() / term.len() as f64;
    let sd = (term.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / term.len() as f64).sqrt();
    println!("Y(T): mean {mean:.6}, sd {sd:.6}");
    ctx.finish(ctx.manifest("simulate", vec![ctx.seed]), &[out])
}

pub fn build_cdc(ctx: &Ctx) -> Result<()> {
    let s = require(&ctx.config.scheme, "scheme", "build-cdc")?;
    config_err(s.params.validate())?;
    let grid = scheme_grid(s.dt, s.horizon)?;
    let sur = s
        .surrogate
        .as_ref()
        .ok_or_else(|| ConfigError("`build-cdc` needs `scheme.surrogate`".into()))?;
    let out = ctx.resolve(sur.matrix.as_deref().unwrap_or(Path::new("cdc.json")));
    println!("matrix for {} steps of {} -> {}", grid.n_steps, grid.dt, out.display());
    if ctx.dry_run {
        return Ok(());
    }
    let sm = samplers(ctx, Some(sur), &[SchemeId::SevenLeagueCdc], &s.params)?.unwrap();
    let (matrix, stats) = build_matrix(&sm.conditional, &sm.marginal, &grid)?;
    let out = ctx.create(&out)?;
    matrix.save(&out)?;
    println!(
        "{} x {} x {} matrix; {} marginal and {} conditional evaluations",
        matrix.n_times(),
        matrix.m_s(),
        matrix.m_c(),
        stats.marginal_evaluations,
        stats.conditional_evaluations
    );
    ctx.finish(ctx.manifest("build-cdc", vec![ctx.seed]), &[out.clone(), CdcMatrix::body_path(&out)])
}

pub fn price(ctx: &Ctx) -> Result<()> {
    let s = require(&ctx.config.scheme, "scheme", "price")?;
    let p = require(&ctx.config.pricing, "pricing", "price")?;
    config_err(s.params.validate())?;
    config_err(p.option.validate())?;
    let grid = scheme_grid(s.dt, p.option.maturity())?;
    let out = ctx.resolve(&p.output);
    println!(
        "{:?} on {} paths with {} (dt {}) -> {}",
        p.option.kind,
        s.n_paths,
        s.kind,
        grid.dt,
        out.display()
    );
    if ctx.dry_run {
        return Ok(());
    }
    let draws = NormalDraws::generate(s.n_paths, grid.n_steps, ctx.seed);
    let paths = simulate_source(ctx, s.kind, &s.params, s.surrogate.as_ref(), &grid, &draws)?;
    let est = match p.option.kind {
        OptionKind::AsianFixedStrike => price_asian(&paths, &p.option)?,
        OptionKind::BermudanPut => price_bermudan_lsmc_with(&paths, &p.option, p.continuation)?,
    };
    if est.skipped_regressions > 0 {
        eprintln!("note: {} exercise dates had too few in-the-money paths for regression", est.skipped_regressions);
    }
    let result = PriceResult::new(est, s.n_paths, s.kind.as_str(), p.option, ctx.seed);
    let out = ctx.create(&out)?;
    std::fs::write(&out, serde_json::to_string_pretty(&result)?)?;
    println!("price {:.8} ± {:.8}", result.price, result.stderr);
    ctx.finish(ctx.manifest("price", vec![ctx.seed]), &[out])
}

pub fn study(ctx: &Ctx, schemes_override: Option<Vec<SchemeId>>) -> Result<()> {
    let st = require(&ctx.config.study, "study", "study")?;
    match st {
        StudySection::Convergence {
            schemes,
            params,
            horizon,
            dt_values,
            n_paths,
            surrogate,
            output,
        } => {
            config_err(params.validate())?;
            let schemes = schemes_override.unwrap_or_else(|| schemes.clone());
            let out = ctx.resolve(output);
            println!("convergence of {} over dt {dt_values:?}, {n_paths} paths -> {}", names(&schemes), out.display());
            if ctx.dry_run {
                return Ok(());
            }
            let sm = samplers(ctx, surrogate.as_ref(), &schemes, params)?;
            let mut reports = Vec::new();
            for id in &schemes {
                let r = strong_weak_errors(&source(*id, sm.as_ref())?, params, *horizon, dt_values, *n_paths, ctx.seed)?;
                println!("{id}: strong slope {:?}, weak slope {:?}", r.strong_slope, r.weak_slope);
                reports.push(r);
            }
            let out = ctx.create(output)?;
            let mut w = BufWriter::new(File::create(&out)?);
            writeln!(w, "scheme,dt,strong_error,strong_stderr,weak_error,weak_stderr")?;
            for r in &reports {
                for i in 0..r.dt_values.len() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        r.scheme, r.dt_values[i], r.strong_errors[i], r.strong_stderr[i], r.weak_errors[i], r.weak_stderr[i]
                    )?;
                }
            }
            w.flush()?;
            let json = out.with_extension("json");
            std::fs::write(&json, serde_json::to_string_pretty(&reports)?)?;
            ctx.finish(ctx.manifest("study", vec![ctx.seed]), &[out, json])
        }
        StudySection::Timing {
            params,
            horizon,
            dt_values,
            n_paths,
            interpolants,
            surrogate,
            output,
        } => {
            config_err(params.validate())?;
            let cfg = TimingConfig {
                params: *params,
                horizon: *horizon,
                dt_values: dt_values.clone(),
                n_paths: *n_paths,
                seed: ctx.seed,
                interpolants: interpolants.clone().unwrap_or_else(|| vec![InterpolantKind::Pchip]),
            };
            let out = ctx.resolve(output);
            println!("timing over dt {dt_values:?}, {n_paths} paths -> {}", out.display());
            if ctx.dry_run {
                return Ok(());
            }
            let sm = samplers(ctx, Some(surrogate), &[SchemeId::SevenLeagueCdc], params)?.unwrap();
            let rep = timing_benchmark(&sm.conditional, &sm.marginal, &cfg)?;
            for r in &rep.rows {
                println!("{:<7} {:?} dt {}: build {:.3}s total {:.3}s", r.scheme.as_str(), r.interpolant, r.dt, r.build_s, r.total_s);
            }
            for s in &rep.speedups {
                println!("dt {} {:?}: gamma measured {:.4}, predicted {:.4}", s.dt, s.interpolant, s.measured, s.predicted);
            }
            let out = ctx.create(output)?;
            rep.write_csv(File::create(&out)?)?;
            let json = out.with_extension("json");
            std::fs::write(&json, serde_json::to_string_pretty(&rep)?)?;
            ctx.finish(ctx.manifest("study", vec![ctx.seed]), &[out, json])
        }
    }
}

pub fn ks(ctx: &Ctx, schemes_override: Option<Vec<SchemeId>>) -> Result<()> {
    let k = require(&ctx.config.ks, "ks", "ks")?;
    config_err(k.params.validate())?;
    scheme_grid(k.dt, k.horizon)?;
    let schemes = schemes_override.unwrap_or_else(|| k.schemes.clone());
    let out = ctx.resolve(&k.output);
    println!("KS of {}, dt {}, {} samples -> {}", names(&schemes), k.dt, k.n_samples, out.display());
    if ctx.dry_run {
        return Ok(());
    }
    let sm = samplers(ctx, k.surrogate.as_ref(), &schemes, &k.params)?;
    let out = ctx.create(&out)?;
    let mut w = BufWriter::new(File::create(&out)?);
    writeln!(w, "scheme,time,statistic,p_value")?;
    for id in &schemes {
        let pts = ks_over_time(&source(*id, sm.as_ref())?, &k.params, k.dt, k.horizon, k.n_samples, ctx.seed, k.coupling)?;
        for p in &pts {
            writeln!(w, "{id},{},{},{}", p.time, p.statistic, p.p_value)?;
        }
        let max = pts.iter().map(|p| p.statistic).fold(0.0, f64::max);
        println!("{id}: max KS statistic {max:.5}");
    }
    w.flush()?;
    drop(w);
    ctx.finish(ctx.manifest("ks", vec![ctx.seed]), &[out])
}
