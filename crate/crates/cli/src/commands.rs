use std::io::Write;
use std::path::{Path, PathBuf};

use aedes_core::estimation::{
    fit_bites_ig, fit_capacity_ig, fit_trap_scaling, load_cases, PfModel,
};
use aedes_core::forcing::{load_climate, load_numeric_table, ClimateSeries};
use aedes_core::lifecycle::{
    self as lifecycle, burn_in, integral_oracle, peak_relative_error, CapacitySource,
    LifecycleParams, LifecycleState,
};
use aedes_core::pipeline::{load_grid, run_grid, PipelineConfig};
use aedes_core::risk::{load_feature_weeks, train, LabeledWeek};
use aedes_core::transmission::{simulate_epi, TransmissionState};

use crate::config::{self, resolve};
use crate::{CliError, Common};

type Result<T> = std::result::Result<T, CliError>;

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", c.out.display())))?;
    Ok(&c.out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Validation(format!("cannot write {}: {e}", path.display()))
}

/// Sizes the global pool used by the particle filter and the capacity chains.
fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(CliError::Validation("--threads must be >= 1".into()));
    }
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

pub fn simulate(c: &Common) -> Result<()> {
    let (cfg, base): (config::SimulateConfig, PathBuf) = config::load(&c.config)?;
    let climate = load_climate(&resolve(&base, &cfg.climate))?;
    let params = LifecycleParams::new(
        cfg.j,
        config::load_rates(&base, &cfg.rates)?,
        cfg.capacity.source(&base)?,
    )?;
    let horizon = cfg.horizon_days.unwrap_or(climate.len());
    let mut init = LifecycleState::from_totals(cfg.j, &cfg.initial)?;
    if cfg.burn_in_days > 0 {
        init = burn_in(&params, &climate, cfg.burn_in_days, &init)?;
    }
    let out = out_dir(c)?.join("trajectory.csv");
    match cfg.epi {
        None => lifecycle::simulate(&params, &climate, &init, horizon)?
            .write_csv(&out, cfg.substates)?,
        Some(epi) => {
            let mut state = TransmissionState::disease_free(&init, epi.n_humans);
            state.seed_infectious(cfg.initial_infectious)?;
            simulate_epi(&params, &epi, &climate, &state, horizon)?.write_csv(&out)?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

pub fn oracle_check(c: &Common) -> Result<()> {
    let (cfg, base): (config::OracleConfig, PathBuf) = config::load(&c.config)?;
    let climate = match (&cfg.climate, cfg.temperature) {
        (Some(p), None) => load_climate(&resolve(&base, p))?,
        (None, Some(t)) => ClimateSeries::constant(
            chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            cfg.horizon_days.max(1),
            t,
            0.0,
        )?,
        _ => {
            return Err(CliError::Validation(
                "set exactly one of climate and temperature".into(),
            ))
        }
    };
    if !(cfg.tolerance > 0.0) {
        return Err(CliError::Validation("tolerance must be > 0".into()));
    }
    let params = LifecycleParams::new(
        cfg.j,
        config::load_rates(&base, &cfg.rates)?,
        cfg.capacity.source(&base)?,
    )?;
    let init = LifecycleState::from_totals(cfg.j, &cfg.initial)?;
    let ode = lifecycle::simulate(&params, &climate, &init, cfg.horizon_days)?.totals();
    let oracle = integral_oracle(
        &params,
        &climate,
        &cfg.initial,
        cfg.horizon_days,
        cfg.quad_dt,
    )?;
    let err = peak_relative_error(&oracle, &ode);

    let path = out_dir(c)?.join("oracle_check.csv");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "day,eggs_ode,eggs_oracle,larvae_ode,larvae_oracle,pupae_ode,pupae_oracle,adults_ode,adults_oracle")
        .map_err(io_err(&path))?;
    for (d, (a, b)) in ode.iter().zip(&oracle).enumerate() {
        let (a, b): ([f64; 4], [f64; 4]) = (a.as_array(), b.as_array());
        writeln!(
            w,
            "{d},{},{},{},{},{},{},{},{}",
            a[0], b[0], a[1], b[1], a[2], b[2], a[3], b[3]
        )
        .map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let names = ["eggs", "larvae", "pupae", "adults"];
    for (n, e) in names.iter().zip(err) {
        println!("{n}: max deviation {e:.3e} of peak");
    }
    let worst = err.iter().copied().fold(0.0, f64::max);
    if worst > cfg.tolerance {
        return Err(CliError::Numeric(format!(
            "ODE and oracle differ by {worst:.3e} of peak (tolerance {})",
            cfg.tolerance
        )));
    }
    println!("agreement within {}", cfg.tolerance);
    Ok(())
}

pub fn fit_pf(c: &Common) -> Result<()> {
    let (cfg, base): (config::FitPfConfig, PathBuf) = config::load(&c.config)?;
    init_threads(c.threads)?;
    let cases = load_cases(&resolve(&base, &cfg.cases), cfg.location.as_deref())?;
    let climate = load_climate(&resolve(&base, &cfg.climate))?;
    let offset = (cases.week_starts[0] - climate.start_date()).num_days();
    if offset != 0 {
        return Err(CliError::Validation(format!(
            "climate must start on the first case week ({}), found {}",
            cases.week_starts[0],
            climate.start_date()
        )));
    }
    // Capacity is per particle; this value only satisfies validation.
    let params = LifecycleParams::new(
        cfg.j,
        config::load_rates(&base, &cfg.rates)?,
        CapacitySource::Constant(cfg.epi.n_humans),
    )?;
    let model = PfModel::new(&params, cfg.epi, &climate, cfg.pf)?;
    let result = model.run(&cases.counts, c.seed)?;
    let path = out_dir(c)?.join("posterior.csv");
    result.write_posterior_csv(&path, &cases.week_starts)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn fit_capacity(c: &Common) -> Result<()> {
    let (cfg, base): (config::FitCapacityConfig, PathBuf) = config::load(&c.config)?;
    init_threads(c.threads)?;
    let rows = load_numeric_table(&resolve(&base, &cfg.pairs), &["precip_m", "capacity"])?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
    let fit = fit_capacity_ig(&pairs, &cfg.fit, c.seed)?;
    let dir = out_dir(c)?;
    let model = fit.posterior_mean_model();
    write_file(&dir.join("capacity_model.toml"), &model.to_toml_string())?;
    let p_max = model.p_max;
    let ps: Vec<f64> = (0..=100).map(|i| p_max * i as f64 / 100.0).collect();
    fit.write_curve_csv(&dir.join("mu_curve.csv"), &ps)?;
    let mut diag = String::from("parameter,rhat,acceptance\n");
    for ((name, r), a) in aedes_core::estimation::capacity::PARAM_NAMES
        .iter()
        .zip(&fit.rhat)
        .zip(&fit.acceptance)
    {
        diag.push_str(&format!("{name},{r},{a}\n"));
    }
    write_file(&dir.join("diagnostics.csv"), &diag)?;
    println!("converged: {}", fit.converged);
    Ok(())
}

pub fn fit_bites(c: &Common) -> Result<()> {
    let (cfg, base): (config::FitBitesConfig, PathBuf) = config::load(&c.config)?;
    let rows = load_numeric_table(&resolve(&base, &cfg.values), &["n_bites"])?;
    let values: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let fit = fit_bites_ig(&values)?;
    let text = format!(
        "mu = {}\nlambda = {}\nlambda_capped = {}\nn = {}\n",
        fit.mu, fit.lambda, fit.lambda_capped, fit.n
    );
    write_file(&out_dir(c)?.join("bites_fit.toml"), &text)?;
    println!("mu = {}, lambda = {}", fit.mu, fit.lambda);
    Ok(())
}

pub fn fit_traps(c: &Common) -> Result<()> {
    let (cfg, base): (config::FitTrapsConfig, PathBuf) = config::load(&c.config)?;
    let rows = load_numeric_table(&resolve(&base, &cfg.traps), &["count", "adults"])?;
    let mut counts = Vec::with_capacity(rows.len());
    for r in &rows {
        if !(r[0] >= 0.0 && r[0].fract() == 0.0) {
            return Err(CliError::Validation(format!(
                "trap count {} is not a nonnegative integer",
                r[0]
            )));
        }
        counts.push(r[0] as u64);
    }
    let adults: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let fit = fit_trap_scaling(&counts, &adults, &cfg.fit, c.seed)?;
    let dir = out_dir(c)?;
    write_file(
        &dir.join("trap_fit.toml"),
        &format!(
            "k = {}\nr = {}\nacceptance = {}\nbackground_only = {}\n",
            fit.k, fit.r, fit.acceptance, fit.background_only
        ),
    )?;
    let mut curve = String::from("adults,count,fitted_mean\n");
    for ((a, n), m) in adults.iter().zip(&counts).zip(fit.mean_curve(&adults)) {
        curve.push_str(&format!("{a},{n},{m}\n"));
    }
    write_file(&dir.join("trap_curve.csv"), &curve)?;
    println!("k = {}, r = {}", fit.k, fit.r);
    Ok(())
}

pub fn train_risk(c: &Common) -> Result<()> {
    let (cfg, base): (config::TrainRiskConfig, PathBuf) = config::load(&c.config)?;
    if cfg.weeks.is_empty() {
        return Err(CliError::Validation("no weekly series listed".into()));
    }
    let mut data: Vec<LabeledWeek> = Vec::new();
    for p in &cfg.weeks {
        data.extend(load_feature_weeks(&resolve(&base, p))?.dataset()?);
    }
    let model = train(&data, &cfg.train)?;
    model.save(&out_dir(c)?.join("risk_model.toml"))?;
    if let Some(t) = &model.training {
        println!(
            "{} labeled weeks, accuracy {:.3}, loss {:.4}",
            t.samples, t.accuracy, t.final_loss
        );
    }
    Ok(())
}

pub fn riskmap(c: &Common) -> Result<()> {
    let (cfg, base): (config::RiskmapConfig, PathBuf) = config::load(&c.config)?;
    let grid = load_grid(&resolve(&base, &cfg.grid))?;
    let pipeline = PipelineConfig {
        j: cfg.j,
        rates: config::load_rates(&base, &cfg.rates)?,
        capacity: cfg.capacity(&base)?,
        epi: cfg.epi,
        risk: cfg.risk(&base)?,
        burn_in_days: cfg.burn_in_days,
    };
    let run = run_grid(&grid, &pipeline, c.threads)?;
    let dir = out_dir(c)?;
    for r in &run.rasters {
        r.render(dir)?;
    }
    if !run.failures.is_empty() {
        let mut text = String::from("lat,lon,error\n");
        for f in &run.failures {
            text.push_str(&format!(
                "{},{},\"{}\"\n",
                f.index.lat(),
                f.index.lon(),
                f.error.replace('"', "'")
            ));
        }
        write_file(&dir.join("failures.csv"), &text)?;
    }
    println!(
        "{} rasters for {} cells ({} nonviable, {} failed)",
        run.rasters.len(),
        grid.len(),
        run.nonviable.len(),
        run.failures.len()
    );
    Ok(())
}
