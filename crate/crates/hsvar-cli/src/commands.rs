//! The six batch subcommands. Each runs one pipeline, writes a result
//! bundle into the run directory and reports progress on standard error;
//! results go to files only.

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::{ingest, Ingested};
use crate::output::{
    fmt_f64, params_table, BootstrapInfo, ColumnsInfo, Manifest, RiskInfo, RunDir, SavedModel,
    SelectionInfo,
};
use hsvar_core::sim::BootstrapGrid;
use hsvar_core::{
    map_segmentation, risk_series, FitResult, GridSelection, RiskConfig, Scenario, TimeIndex,
};

pub struct CommandContext {
    pub config: RunConfig,
    pub out_dir: std::path::PathBuf,
    pub force: bool,
    pub cli_seed: Option<u64>,
}

impl CommandContext {
    fn delimiter(&self) -> char {
        self.config
            .data
            .as_ref()
            .map(|d| d.delimiter.chars().next().unwrap())
            .unwrap_or(',')
    }

    fn seeds(&self) -> Vec<u64> {
        match self.cli_seed {
            Some(s) => vec![s],
            None => self.config.em.seeds.clone(),
        }
    }

    fn load_data(&self) -> Result<Ingested> {
        let data_config = self.config.data_required()?;
        let ing = ingest(&data_config.path, data_config)?;
        let t_len = ing.dataset.n_rows();
        if self.config.model.h * 10 >= t_len {
            return Err(CliError::input(format!(
                "VAR order H = {} is implausibly large for T = {t_len} (need H < T/10)",
                self.config.model.h
            )));
        }
        eprintln!(
            "ingested {} rows: p = {}, J = {}, L = {}",
            t_len,
            ing.dataset.n_outcomes(),
            ing.dataset.n_emission_covariates(),
            ing.dataset.n_hazard_covariates()
        );
        Ok(ing)
    }

    fn run_selection(&self, ing: &Ingested) -> Result<GridSelection> {
        let lambda_grid = self.config.penalty.values()?;
        let seeds = self.seeds();
        eprintln!(
            "selection grid: K in {:?}, {} penalty values, {} seeds",
            self.config.model.k_grid,
            lambda_grid.len(),
            seeds.len()
        );
        let selection = hsvar_core::grid_select(
            &ing.dataset,
            &self.config.model.k_grid,
            &lambda_grid,
            &seeds,
            &self.config.em_config(),
        )?;
        let cell = &selection.cells[selection.selected];
        eprintln!(
            "selected K = {}, lambda0 = {:.6}, ICL = {:.3} (converged: {})",
            cell.k, cell.lambda0, cell.icl, cell.converged
        );
        Ok(selection)
    }

    /// Fitted model for bootstrap / risk / segment: loaded from a prior run
    /// when configured, otherwise re-selected from scratch.
    fn obtain_fit(&self, ing: &Ingested, dir: &mut RunDir) -> Result<(FitResult, bool)> {
        if let Some(model_dir) = &self.config.input.model_dir {
            let saved = SavedModel::load(model_dir)?;
            eprintln!("loaded fitted model from {}", model_dir.display());
            let fit = saved.to_fit(&ing.dataset)?;
            return Ok((fit, true));
        }
        let selection = self.run_selection(ing)?;
        write_selection_bundle(dir, &selection, ing, self.delimiter())?;
        SavedModel::from_fit(&selection.fit, &ing.outcome_names).save(dir)?;
        Ok((selection.fit, false))
    }
}

fn time_labels(time: &TimeIndex) -> Vec<String> {
    (0..time.len()).map(|t| time.label(t)).collect()
}

fn columns_info(ing: &Ingested) -> ColumnsInfo {
    ColumnsInfo {
        time: ing.time_name.clone(),
        outcomes: ing.outcome_names.clone(),
        emission_covariates: ing.emission_covariate_names.clone(),
        hazard_covariates: ing.hazard_covariate_names.clone(),
    }
}

fn write_selection_bundle(
    dir: &mut RunDir,
    selection: &GridSelection,
    ing: &Ingested,
    delim: char,
) -> Result<()> {
    let d = delim;
    // ICL grid.
    let mut grid = format!("k{d}lambda0{d}seed{d}icl{d}loglik{d}iterations{d}converged{d}error\n");
    for cell in &selection.cells {
        grid.push_str(&format!(
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
            cell.k,
            fmt_f64(cell.lambda0),
            cell.seed,
            fmt_f64(cell.icl),
            fmt_f64(cell.loglik),
            cell.iterations,
            cell.converged,
            cell.error.clone().unwrap_or_default()
        ));
    }
    dir.write_table("icl_grid.csv", &grid)?;
    write_fit_bundle(dir, &selection.fit, ing, delim)
}

fn write_fit_bundle(dir: &mut RunDir, fit: &FitResult, ing: &Ingested, delim: char) -> Result<()> {
    let d = delim;
    dir.write_table("parameters.csv", &params_table(&fit.params, delim))?;

    let labels = time_labels(&ing.dataset.time);
    let probs = fit.posteriors.state_probs();
    let mut post = format!("time{d}state{d}probability\n");
    for t in 0..probs.nrows() {
        for k in 0..probs.ncols() {
            post.push_str(&format!(
                "{}{d}{}{d}{}\n",
                labels[t],
                k,
                fmt_f64(probs[[t, k]])
            ));
        }
    }
    dir.write_table("posteriors.csv", &post)?;

    let map = map_segmentation(&fit.posteriors);
    let mut seg = format!("time{d}label\n");
    for (t, label) in map.iter().enumerate() {
        seg.push_str(&format!("{}{d}{}\n", labels[t], label));
    }
    dir.write_table("segmentation.csv", &seg)?;

    let mut trace = format!("iteration{d}loglik\n");
    for (i, ll) in fit.loglik_trace.iter().enumerate() {
        trace.push_str(&format!("{i}{d}{}\n", fmt_f64(*ll)));
    }
    dir.write_table("loglik_trace.csv", &trace)?;
    Ok(())
}

pub fn cmd_fit(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let ing = ctx.load_data()?;
    // Single-cell fit: first K of the grid, first penalty value.
    let k = ctx.config.model.k_grid[0];
    let lambda0 = ctx.config.penalty.values()?[0];
    let seeds = ctx.seeds();
    let em_config = ctx.config.em_config();
    let mut best: Option<FitResult> = None;
    for &seed in &seeds {
        let fit = hsvar_core::fit(&ing.dataset, k, lambda0, seed, &em_config)?;
        let better = match &best {
            None => true,
            Some(b) => (fit.converged, -fit.icl) > (b.converged, -b.icl),
        };
        if better {
            best = Some(fit);
        }
    }
    let fit = best.expect("at least one seed");
    eprintln!(
        "fit: K = {k}, lambda0 = {lambda0:.6}, loglik = {:.3}, ICL = {:.3}",
        fit.posteriors.loglik, fit.icl
    );
    write_fit_bundle(&mut dir, &fit, &ing, ctx.delimiter())?;
    SavedModel::from_fit(&fit, &ing.outcome_names).save(&mut dir)?;

    let mut manifest = Manifest::new("fit", &ctx.config, ctx.cli_seed);
    manifest.columns = Some(columns_info(&ing));
    manifest.dims = Some(fit.params.dims);
    manifest.selection = Some(SelectionInfo::from_fit(&fit));
    if !fit.converged {
        manifest.exit_code = 4;
    }
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn cmd_select(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let ing = ctx.load_data()?;
    let selection = ctx.run_selection(&ing)?;
    write_selection_bundle(&mut dir, &selection, &ing, ctx.delimiter())?;
    SavedModel::from_fit(&selection.fit, &ing.outcome_names).save(&mut dir)?;

    let mut manifest = Manifest::new("select", &ctx.config, ctx.cli_seed);
    manifest.columns = Some(columns_info(&ing));
    manifest.dims = Some(selection.fit.params.dims);
    manifest.selection = Some(SelectionInfo::from_fit(&selection.fit));
    if !selection.fit.converged {
        manifest.exit_code = 4;
    }
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn cmd_simulate(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let settings = ctx
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::input("cmd_simulate needs a [simulate] section"))?;
    let scenario = Scenario::parse(&settings.scenario).ok_or_else(|| {
        CliError::input(format!(
            "unknown scenario '{}' (expected two_state, three_state or app_like)",
            settings.scenario
        ))
    })?;
    let t_len = settings.t_len.unwrap_or_else(|| scenario.default_t_len());
    let seed = ctx.cli_seed.or(settings.seed).unwrap_or(0);
    let sim_config = scenario.sim_config(t_len, seed);
    let out = hsvar_core::simulate(&sim_config)?;
    eprintln!(
        "simulated scenario '{}': T = {t_len}, seed = {seed}",
        scenario.name()
    );

    let d = ctx.delimiter();
    let dims = sim_config.truth.dims;
    // Data table with generic column names.
    let mut header = vec!["time".to_string()];
    for i in 0..dims.p {
        header.push(format!("y{}", i + 1));
    }
    for c in 0..dims.j {
        header.push(format!("x{}", c + 1));
    }
    for c in 0..dims.l {
        header.push(format!("z{}", c + 1));
    }
    let mut table = header.join(&d.to_string());
    table.push('\n');
    for t in 0..t_len {
        let mut row = vec![t.to_string()];
        for i in 0..dims.p {
            row.push(fmt_f64(out.data.y[[t, i]]));
        }
        for c in 0..dims.j {
            row.push(fmt_f64(out.data.x[[t, c]]));
        }
        for c in 0..dims.l {
            row.push(fmt_f64(out.data.z[[t, c]]));
        }
        table.push_str(&row.join(&d.to_string()));
        table.push('\n');
    }
    dir.write_table("data.csv", &table)?;

    let mut states = format!("time{d}state{d}dwell\n");
    for t in 0..t_len {
        states.push_str(&format!("{t}{d}{}{d}{}\n", out.states[t], out.dwells[t]));
    }
    dir.write_table("states.csv", &states)?;
    dir.write_table("truth_parameters.csv", &params_table(&sim_config.truth, d))?;

    let mut manifest = Manifest::new("simulate", &ctx.config, ctx.cli_seed);
    manifest.dims = Some(dims);
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn cmd_bootstrap(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let ing = ctx.load_data()?;
    let (fit, _loaded) = ctx.obtain_fit(&ing, &mut dir)?;
    let grid = BootstrapGrid {
        k_list: ctx.config.model.k_grid.clone(),
        lambda0_list: ctx.config.penalty.values()?,
        seeds: ctx.seeds(),
    };
    let b = ctx.config.bootstrap.replicas;
    eprintln!("bootstrap: {b} replicas over the full selection grid");
    let result = hsvar_core::parametric_bootstrap(
        &ing.dataset,
        &fit,
        b,
        &grid,
        &ctx.config.em_config(),
        ctx.config.bootstrap.seed,
    )?;
    eprintln!(
        "bootstrap finished: {} completed, {} failed, {} matched K = {}",
        result.completed,
        result.failed,
        result.k_selected.iter().filter(|&&k| k == result.k_reference).count(),
        result.k_reference
    );

    let d = ctx.delimiter();
    let mut intervals =
        format!("block{d}state{d}row{d}col{d}estimate{d}lower{d}upper{d}selection\n");
    for s in &result.summaries {
        intervals.push_str(&format!(
            "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
            s.block,
            s.state,
            s.row,
            s.col,
            fmt_f64(s.estimate),
            fmt_f64(s.lower),
            fmt_f64(s.upper),
            s.selection.map(fmt_f64).unwrap_or_default()
        ));
    }
    dir.write_table("bootstrap_intervals.csv", &intervals)?;

    let mut ks = format!("replica{d}selected_k\n");
    for (i, k) in result.k_selected.iter().enumerate() {
        ks.push_str(&format!("{i}{d}{k}\n"));
    }
    dir.write_table("bootstrap_k.csv", &ks)?;
    dir.write_table(
        "debiased_parameters.csv",
        &params_table(&result.debiased, d),
    )?;

    let mut manifest = Manifest::new("bootstrap", &ctx.config, ctx.cli_seed);
    manifest.columns = Some(columns_info(&ing));
    manifest.dims = Some(fit.params.dims);
    manifest.selection = Some(SelectionInfo::from_fit(&fit));
    manifest.bootstrap = Some(BootstrapInfo {
        requested: result.requested,
        completed: result.completed,
        failed: result.failed,
        k_reference: result.k_reference,
        level: result.level,
    });
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn cmd_risk(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let ing = ctx.load_data()?;
    let (fit, _loaded) = ctx.obtain_fit(&ing, &mut dir)?;
    let risk_config = RiskConfig {
        tau: ctx.config.risk.tau,
        tau_star: ctx.config.risk.tau_star,
        measure: ctx.config.risk.measure,
        with_shapley: ctx.config.risk.shapley,
    };
    eprintln!(
        "risk series: tau = {}, tau* = {}, shapley = {}",
        risk_config.tau, risk_config.tau_star, risk_config.with_shapley
    );
    let rows = risk_series(&ing.dataset, &fit.params, &risk_config)?;

    let d = ctx.delimiter();
    let names = &ing.outcome_names;
    let p = names.len();
    let mut header = vec!["time".to_string()];
    for metric in ["var", "es", "mcovar", "mcoes", "sd"] {
        for name in names {
            header.push(format!("{metric}_{name}"));
        }
    }
    if risk_config.with_shapley {
        for i in names {
            for j in names {
                header.push(format!("sh_{i}_{j}"));
            }
        }
    }
    let labels = time_labels(&ing.dataset.time);
    let mut table = header.join(&d.to_string());
    table.push('\n');
    for row in &rows {
        let mut cells = vec![labels[row.t].clone()];
        for vals in [&row.var, &row.es, &row.mcovar, &row.mcoes, &row.sd] {
            for v in vals.iter() {
                cells.push(fmt_f64(*v));
            }
        }
        if let Some(sh) = &row.shapley {
            for i in 0..p {
                for j in 0..p {
                    cells.push(fmt_f64(sh[[i, j]]));
                }
            }
        }
        table.push_str(&cells.join(&d.to_string()));
        table.push('\n');
    }
    dir.write_table("risk.csv", &table)?;

    let mut manifest = Manifest::new("risk", &ctx.config, ctx.cli_seed);
    manifest.columns = Some(columns_info(&ing));
    manifest.dims = Some(fit.params.dims);
    manifest.selection = Some(SelectionInfo::from_fit(&fit));
    manifest.risk = Some(RiskInfo {
        tau: risk_config.tau,
        tau_star: risk_config.tau_star,
        measure: risk_config.measure,
        rows: rows.len(),
    });
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

pub fn cmd_segment(ctx: &CommandContext) -> Result<Manifest> {
    let mut dir = RunDir::create(&ctx.out_dir, ctx.force)?;
    let ing = ctx.load_data()?;
    let (fit, _loaded) = ctx.obtain_fit(&ing, &mut dir)?;

    let d = ctx.delimiter();
    let labels = time_labels(&ing.dataset.time);
    let map = map_segmentation(&fit.posteriors);
    let mut seg = format!("time{d}label\n");
    for (t, label) in map.iter().enumerate() {
        seg.push_str(&format!("{}{d}{}\n", labels[t], label));
    }
    dir.write_table("segmentation.csv", &seg)?;

    let mut manifest = Manifest::new("segment", &ctx.config, ctx.cli_seed);
    manifest.columns = Some(columns_info(&ing));
    manifest.dims = Some(fit.params.dims);
    manifest.selection = Some(SelectionInfo::from_fit(&fit));
    dir.write_manifest(&manifest)?;
    Ok(manifest)
}

/// Writes an error manifest so failures are machine-readable too.
pub fn write_error_manifest(
    ctx: &CommandContext,
    command: &str,
    err: &CliError,
) -> std::result::Result<(), std::io::Error> {
    let mut manifest = Manifest::new(command, &ctx.config, ctx.cli_seed);
    manifest.error = Some(crate::output::ErrorRecord {
        kind: err.kind().to_string(),
        message: err.to_string(),
    });
    manifest.exit_code = err.exit_code();
    if let Ok(mut dir) = RunDir::create(&ctx.out_dir, true) {
        let _ = dir.write_manifest(&manifest);
    }
    Ok(())
}

/// Dispatch by name; used by main and by integration tests.
pub fn run_command(name: &str, ctx: &CommandContext) -> Result<Manifest> {
    match name {
        "fit" => cmd_fit(ctx),
        "select" => cmd_select(ctx),
        "simulate" => cmd_simulate(ctx),
        "bootstrap" => cmd_bootstrap(ctx),
        "risk" => cmd_risk(ctx),
        "segment" => cmd_segment(ctx),
        other => Err(CliError::input(format!("unknown command '{other}'"))),
    }
}

