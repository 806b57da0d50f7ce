//! Command-line entry point: ingestion -> calibration -> surface -> outputs,
//! plus the stability and model-comparison harnesses.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calibration::{
    self, bootstrap, fit_term, CalibrationMode, FitResult, OptimizerConfig, PriorTerm,
    ReducedMode, WeightConfig, WeightVariant,
};
use crate::error::{Result, SmileFitError};
use crate::market_data::{
    build_grid, group_terms, load_context, load_quotes, Grid, GridMode, GridSpec, MarketContext,
    TermQuotes,
};
use crate::no_arbitrage::VerticalBoundConvention;
use crate::smile::{ModelConfig, SigmoidKind};
use crate::surface::{
    build_surface, implied_density, local_vol, AnchorRule, InterpolatorConfig, SurfaceGrid,
};
use crate::svi::{svi_fit, SviFitMode};

/// Bundled XLF fixture (quotes + market context).
pub const FIXTURE_QUOTES: &str =
    concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/xlf_quotes.csv");
pub const FIXTURE_CONTEXT: &str =
    concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/xlf_context.json");

#[derive(Parser)]
#[command(name = "smilefit", version, about = "Arbitrage-free implied volatility surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Calibrate the smile term by term and write per-term fit artifacts.
    Fit(CommonArgs),
    /// Build the implied volatility surface on the grid.
    Surface(CommonArgs),
    /// Build the surface and emit Dupire local volatility.
    Localvol(CommonArgs),
    /// Build the surface and emit the implied density per expiry.
    Density(CommonArgs),
    /// Run the full no-arbitrage report without writing surfaces.
    CheckNoarb(CommonArgs),
    /// Re-calibrate a dated series of quote files into a parameter time series.
    Stability(StabilityArgs),
    /// Fit both this model and raw SVI on the same weighted points.
    CompareSvi(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Calibrate every term with enough quotes.
    All,
    /// Calibrate only the first and last terms, interpolate the rest.
    Ends,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Quote CSV (expiry,strike,type,iv[,bid_iv,ask_iv,delta]); defaults to
    /// the bundled XLF fixture.
    #[arg(long)]
    pub quotes: Option<PathBuf>,
    /// Market context JSON (valuation_date, spot, rate); defaults to the
    /// bundled XLF context.
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Grid spec JSON; defaults to the quoted strikes at the quoted expiries.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Run config JSON (optimizer, weights, interpolator overrides).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which terms to calibrate; the rest are filled by interpolation.
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    pub mode: ModeArg,
    /// Seed for every random draw in the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write gnuplot-style .dat files.
    #[arg(long)]
    pub plot_data: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Args, Clone)]
pub struct StabilityArgs {
    /// Two or more dated quote CSVs; a YYYY-MM-DD in the file name sets the
    /// valuation date of that file.
    #[arg(long, num_args = 2.., required = true)]
    pub quotes: Vec<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Freeze the hinge location C at its first-day value on later days.
    #[arg(long)]
    pub frozen_c: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

/// Optional overrides loaded from --config JSON; unset fields keep defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub nu: Option<f64>,
    pub cap: Option<f64>,
    pub weight_variant: Option<WeightVariant>,
    pub max_evals: Option<usize>,
    pub population: Option<usize>,
    pub penalty_scale: Option<f64>,
    pub seed: Option<u64>,
    pub vertical_bound_convention: Option<VerticalBoundConvention>,
    pub sigmoid: Option<SigmoidKind>,
    pub anchor: Option<AnchorRule>,
    pub k: Option<f64>,
    pub sigma_star: Option<f64>,
}

/// Grid spec file: like `GridSpec` but expiries may be omitted to mean "the
/// quoted expiries".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpecFile {
    pub mode: GridMode,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub sigma_star: Option<f64>,
    #[serde(default)]
    pub strikes: Vec<f64>,
    #[serde(default)]
    pub expiries: Vec<f64>,
    #[serde(default)]
    pub step: Option<f64>,
}

/// Everything one command run needs, resolved from flags + config file.
pub struct RunConfig {
    pub context: MarketContext,
    pub quotes_path: PathBuf,
    pub grid_file: Option<GridSpecFile>,
    pub model: ModelConfig<f64>,
    pub wcfg: WeightConfig,
    pub ocfg: OptimizerConfig,
    pub icfg: InterpolatorConfig,
    pub convention: VerticalBoundConvention,
    pub mode: CalibrationMode,
    pub sigma_star: Option<f64>,
    pub out: PathBuf,
    pub format: FormatArg,
    pub plot_data: bool,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(FileConfig::default()),
    }
}

fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let fc = load_file_config(args.config.as_deref())?;
    let context_path =
        args.context.clone().unwrap_or_else(|| PathBuf::from(FIXTURE_CONTEXT));
    let context = load_context(&context_path)?;
    let quotes_path = args.quotes.clone().unwrap_or_else(|| PathBuf::from(FIXTURE_QUOTES));
    let grid_file = match &args.grid {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            Some(serde_json::from_str::<GridSpecFile>(&text)?)
        }
        None => None,
    };
    let mut wcfg = WeightConfig::default();
    if let Some(nu) = fc.nu {
        wcfg.nu = nu;
    }
    if let Some(cap) = fc.cap {
        wcfg.cap = cap;
    }
    if let Some(v) = fc.weight_variant {
        wcfg.variant = v;
    }
    let mut ocfg = OptimizerConfig::default();
    if let Some(m) = fc.max_evals {
        ocfg.max_evals = m;
    }
    ocfg.population = fc.population.or(ocfg.population);
    if let Some(p) = fc.penalty_scale {
        ocfg.penalty_scale = p;
    }
    ocfg.seed = args.seed.or(fc.seed).unwrap_or(0);
    let mut icfg = InterpolatorConfig::default();
    if let Some(a) = fc.anchor.clone() {
        icfg.anchor = a;
    }
    if let Some(k) = fc.k {
        icfg.k = k;
    }
    let mut model = ModelConfig::default();
    if let Some(s) = fc.sigmoid {
        model.sigmoid = s;
    }
    Ok(RunConfig {
        context,
        quotes_path,
        sigma_star: fc.sigma_star.or_else(|| grid_file.as_ref().and_then(|g| g.sigma_star)),
        grid_file,
        model,
        wcfg,
        ocfg,
        icfg,
        convention: fc.vertical_bound_convention.unwrap_or_default(),
        mode: match args.mode {
            ModeArg::All => CalibrationMode::All,
            ModeArg::Ends => CalibrationMode::EndsOnly,
        },
        out: args.out.clone(),
        format: args.format,
        plot_data: args.plot_data,
    })
}

/// Terms + the fitting grid (rows at the term maturities) + the output grid
/// (the requested expiries; defaults to the term maturities).
struct Prepared {
    terms: Vec<TermQuotes>,
    fit_grid: Grid,
    surface_grid: Grid,
}

fn prepare(rc: &RunConfig, quotes_path: &Path, context: &MarketContext) -> Result<Prepared> {
    let quotes = load_quotes(quotes_path)?;
    let terms = group_terms(&quotes, context, rc.sigma_star)?;
    let sigma_star = terms[0].sigma_star;
    let maturities: Vec<f64> = terms.iter().map(|t| t.maturity).collect();
    let (mode, gamma, strikes, expiries, step) = match &rc.grid_file {
        Some(g) => (
            g.mode,
            g.gamma,
            g.strikes.clone(),
            if g.expiries.is_empty() { maturities.clone() } else { g.expiries.clone() },
            g.step,
        ),
        None => {
            // default grid: the union of quoted strikes at the quoted expiries
            let mut ks: Vec<f64> =
                terms.iter().flat_map(|t| t.points.iter().map(|p| p.strike)).collect();
            ks.sort_by(f64::total_cmp);
            ks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            (GridMode::StrikeList, None, ks, maturities.clone(), None)
        }
    };
    let surface_spec = GridSpec {
        mode,
        gamma,
        sigma_star: Some(sigma_star),
        strikes: strikes.clone(),
        expiries,
        step,
    };
    let fit_spec = GridSpec { expiries: maturities, ..surface_spec.clone() };
    Ok(Prepared {
        terms,
        fit_grid: build_grid(&fit_spec, context)?,
        surface_grid: build_grid(&surface_spec, context)?,
    })
}

fn calibrate(rc: &RunConfig, prep: &Prepared) -> Result<Vec<Option<FitResult>>> {
    bootstrap(
        &prep.terms,
        &prep.fit_grid,
        &rc.model,
        &rc.wcfg,
        &rc.ocfg,
        rc.convention,
        rc.mode,
    )
}

fn assemble(rc: &RunConfig, prep: &Prepared) -> Result<(Vec<Option<FitResult>>, SurfaceGrid)> {
    let fits = calibrate(rc, prep)?;
    let surface = build_surface(
        &prep.terms,
        &fits,
        &prep.surface_grid,
        &rc.model,
        &rc.icfg,
        rc.convention,
        rc.context.rate,
    )?;
    Ok((fits, surface))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn fmt_f(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

/// Long-format grid CSV: T,K,value.
fn grid_csv(header: &str, expiries: &[f64], strikes: &[f64], value: impl Fn(usize, usize) -> f64) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for (i, &t) in expiries.iter().enumerate() {
        for (j, &k) in strikes.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", fmt_f(t), fmt_f(k), value(i, j)));
        }
    }
    s
}

/// Gnuplot-style blocks: one block per expiry, blank-line separated.
fn plot_dat(expiries: &[f64], strikes: &[f64], value: impl Fn(usize, usize) -> f64) -> String {
    let mut s = String::new();
    for (i, &t) in expiries.iter().enumerate() {
        s.push_str(&format!("# T={}\n", fmt_f(t)));
        for (j, &k) in strikes.iter().enumerate() {
            s.push_str(&format!("{} {}\n", fmt_f(k), value(i, j)));
        }
        s.push('\n');
    }
    s
}

fn report_summary(surface: &SurfaceGrid) -> String {
    let mut s = String::from("maturity,source,anchor,ok,worst_butterfly,worst_vertical,calendar_ok,lee_plus,lee_minus\n");
    for (slice, term) in surface.terms.iter().zip(&surface.report.terms) {
        s.push_str(&format!(
            "{},{:?},{},{},{:.6e},{:.6e},{},{:.6},{:.6}\n",
            fmt_f(slice.maturity),
            slice.source,
            slice.anchor_used.map(|a| format!("{a:?}")).unwrap_or_else(|| "-".into()),
            term.ok,
            term.worst_butterfly,
            term.worst_vertical,
            term.calendar_ok.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            term.lee_plus_slope,
            term.lee_minus_slope,
        ));
    }
    s
}

fn cmd_fit(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let fits = calibrate(rc, &prep)?;
    let mut wrote = 0usize;
    for (term, fit) in prep.terms.iter().zip(&fits) {
        let Some(fit) = fit else { continue };
        let stem = term.expiry.format("%Y-%m-%d").to_string();
        write_text(
            &rc.out.join(format!("fit_{stem}.json")),
            &serde_json::to_string_pretty(fit)?,
        )?;
        let weights = calibration::term_weights(term, &rc.wcfg);
        let mut csv = String::from("strike,z,weight,market_iv,model_iv,residual_w\n");
        for ((p, r), w) in term.points.iter().zip(&fit.residuals).zip(&weights) {
            let model_w = p.w_m + r;
            let model_iv = (model_w.max(0.0) / term.maturity).sqrt();
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f(p.strike),
                p.z,
                w,
                p.iv,
                model_iv,
                r
            ));
        }
        write_text(&rc.out.join(format!("residuals_{stem}.csv")), &csv)?;
        println!(
            "fit {} T={:.4}: mode={:?} rmse={:.6} feasible={} evals={} time_ms={:.0}",
            stem, term.maturity, fit.mode, fit.iv_rmse, fit.feasible, fit.evals, fit.wall_time_ms
        );
        wrote += 1;
    }
    println!("wrote {wrote} term fit(s) to {}", rc.out.display());
    Ok(())
}

fn cmd_surface(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let (_, surface) = assemble(rc, &prep)?;
    match rc.format {
        FormatArg::Csv => {
            let csv = grid_csv("T,K,iv", &surface.expiries, &surface.strikes, |i, j| {
                surface.iv(i, j)
            });
            write_text(&rc.out.join("surface.csv"), &csv)?;
        }
        FormatArg::Json => {
            write_text(&rc.out.join("surface.json"), &serde_json::to_string_pretty(&surface)?)?;
        }
    }
    write_text(&rc.out.join("report.csv"), &report_summary(&surface))?;
    if rc.plot_data {
        let dat = plot_dat(&surface.expiries, &surface.strikes, |i, j| surface.iv(i, j));
        write_text(&rc.out.join("surface.dat"), &dat)?;
    }
    println!(
        "surface {}x{} ok={} -> {}",
        surface.expiries.len(),
        surface.strikes.len(),
        surface.report.ok,
        rc.out.display()
    );
    Ok(())
}

fn cmd_localvol(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let (_, surface) = assemble(rc, &prep)?;
    let lv = local_vol(&surface, &rc.model)?;
    match rc.format {
        FormatArg::Csv => {
            let csv = grid_csv("T,K,sigma_loc", &lv.expiries, &lv.strikes, |i, j| lv.values[i][j]);
            write_text(&rc.out.join("localvol.csv"), &csv)?;
        }
        FormatArg::Json => {
            write_text(&rc.out.join("localvol.json"), &serde_json::to_string_pretty(&lv)?)?;
        }
    }
    write_text(&rc.out.join("report.csv"), &report_summary(&surface))?;
    if rc.plot_data {
        let dat = plot_dat(&lv.expiries, &lv.strikes, |i, j| lv.values[i][j]);
        write_text(&rc.out.join("localvol.dat"), &dat)?;
    }
    let min = lv.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "localvol {}x{} min={:.6} -> {}",
        lv.expiries.len(),
        lv.strikes.len(),
        min,
        rc.out.display()
    );
    Ok(())
}

fn cmd_density(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let (_, surface) = assemble(rc, &prep)?;
    let dens = implied_density(&surface)?;
    match rc.format {
        FormatArg::Csv => {
            let mut csv = String::from("T,K,pdf\n");
            for row in &dens.rows {
                for (k, p) in row.strikes.iter().zip(&row.pdf) {
                    csv.push_str(&format!("{},{},{}\n", fmt_f(row.maturity), fmt_f(*k), p));
                }
            }
            write_text(&rc.out.join("density.csv"), &csv)?;
            let mut sum =
                String::from("T,integral,tail_left,tail_right,total_mass\n");
            for row in &dens.rows {
                sum.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_f(row.maturity), row.integral, row.tail_mass.0, row.tail_mass.1, row.total_mass
                ));
            }
            write_text(&rc.out.join("density_summary.csv"), &sum)?;
        }
        FormatArg::Json => {
            write_text(&rc.out.join("density.json"), &serde_json::to_string_pretty(&dens)?)?;
        }
    }
    write_text(&rc.out.join("report.csv"), &report_summary(&surface))?;
    if rc.plot_data {
        let mut dat = String::new();
        for row in &dens.rows {
            dat.push_str(&format!("# T={}\n", fmt_f(row.maturity)));
            for (k, p) in row.strikes.iter().zip(&row.pdf) {
                dat.push_str(&format!("{} {}\n", fmt_f(*k), p));
            }
            dat.push('\n');
        }
        write_text(&rc.out.join("density.dat"), &dat)?;
    }
    println!("density {} row(s) -> {}", dens.rows.len(), rc.out.display());
    Ok(())
}

fn cmd_check_noarb(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let (_, surface) = assemble(rc, &prep)?;
    print!("{}", report_summary(&surface));
    println!("no-arbitrage report: ok");
    Ok(())
}

/// Valuation date of a stability file: a YYYY-MM-DD anywhere in the file
/// name, else the context date.
fn file_date(path: &Path, fallback: chrono::NaiveDate) -> chrono::NaiveDate {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let bytes = name.as_bytes();
    for start in 0..bytes.len().saturating_sub(9) {
        if let Ok(d) =
            chrono::NaiveDate::parse_from_str(&name[start..start + 10], "%Y-%m-%d")
        {
            return d;
        }
    }
    fallback
}

fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let common = CommonArgs {
        quotes: None,
        context: args.context.clone(),
        grid: args.grid.clone(),
        config: args.config.clone(),
        mode: ModeArg::All,
        seed: args.seed,
        out: args.out.clone(),
        plot_data: false,
        format: args.format,
    };
    let rc = resolve(&common)?;
    if args.quotes.len() < 2 {
        return Err(SmileFitError::Input("stability needs at least 2 dated quote files".into()));
    }
    let mut rows: Vec<(chrono::NaiveDate, chrono::NaiveDate, f64, [f64; 7], f64, bool)> =
        Vec::new();
    // expiry -> first-day C, for the frozen-C refit mode
    let mut frozen: std::collections::BTreeMap<chrono::NaiveDate, f64> =
        std::collections::BTreeMap::new();
    let mut first_day_done = false;
    for path in &args.quotes {
        let date = file_date(path, rc.context.valuation_date);
        let context = MarketContext { valuation_date: date, ..rc.context };
        let day = (|| -> Result<Vec<(TermQuotes, FitResult)>> {
            let prep = prepare(&rc, path, &context)?;
            let mut out = Vec::new();
            let mut prior: Option<PriorTerm> = None;
            for (i, term) in prep.terms.iter().enumerate() {
                if calibration::reduced_mode(term.points.len()) == ReducedMode::Interpolate {
                    continue;
                }
                let mut ocfg = rc.ocfg.clone();
                let freeze_c = if args.frozen_c && first_day_done {
                    frozen.get(&term.expiry).copied()
                } else {
                    None
                };
                if let Some(c0) = freeze_c {
                    // pin C by collapsing its box to a hair around c0
                    ocfg.bounds[2] = [c0 - 1e-12, c0 + 1e-12];
                }
                let mut fit = fit_term(
                    term,
                    &prep.fit_grid.nodes[i],
                    &rc.model,
                    &rc.wcfg,
                    &ocfg,
                    rc.convention,
                    prior.as_ref(),
                    None,
                )?;
                if let Some(c0) = freeze_c {
                    fit.params.c = c0;
                }
                prior = Some(PriorTerm {
                    params: fit.params,
                    maturity: term.maturity,
                    forward: term.forward,
                    sigma_star: term.sigma_star,
                });
                out.push((term.clone(), fit));
            }
            Ok(out)
        })();
        match day {
            Ok(fits) => {
                for (term, fit) in fits {
                    if args.frozen_c {
                        frozen.entry(term.expiry).or_insert(fit.params.c);
                    }
                    let p = fit.params;
                    rows.push((
                        date,
                        term.expiry,
                        term.maturity,
                        [p.w_c, p.s_c, p.c, p.s, p.kurt, p.alpha, p.beta],
                        fit.iv_rmse,
                        fit.feasible,
                    ));
                }
                first_day_done = true;
            }
            Err(e) => {
                eprintln!("stability: skipping {} ({e})", path.display());
            }
        }
    }
    if rows.is_empty() {
        return Err(SmileFitError::Optimizer("no stability file produced a fit".into()));
    }
    let mut csv =
        String::from("date,expiry,maturity,w_c,s_c,c,s,kurt,alpha,beta,iv_rmse,feasible\n");
    for (date, expiry, t, p, rmse, feasible) in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            date, expiry, t, p[0], p[1], p[2], p[3], p[4], p[5], p[6], rmse, feasible
        ));
    }
    write_text(&args.out.join("stability.csv"), &csv)?;
    println!("stability: {} row(s) -> {}", rows.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub expiry: chrono::NaiveDate,
    pub maturity: f64,
    pub model_objective: f64,
    pub model_iv_rmse: f64,
    pub model_feasible: bool,
    pub svi_objective: f64,
    pub svi_iv_rmse: f64,
    pub svi_feasible: bool,
    /// Feasibility of the SVI refit under the full grid constraint set.
    pub svi_full_constraints_feasible: bool,
}

fn cmd_compare_svi(rc: &RunConfig) -> Result<()> {
    let prep = prepare(rc, &rc.quotes_path, &rc.context)?;
    let fits = calibrate(rc, &prep)?;
    let mut rows = Vec::new();
    for (i, (term, fit)) in prep.terms.iter().zip(&fits).enumerate() {
        let Some(fit) = fit else { continue };
        let nodes = &prep.fit_grid.nodes[i];
        let svi =
            svi_fit(term, nodes, SviFitMode::PositiveW, &rc.wcfg, &rc.ocfg, rc.convention)?;
        let svi_full = svi_fit(
            term,
            nodes,
            SviFitMode::FullConstraints,
            &rc.wcfg,
            &rc.ocfg,
            rc.convention,
        )?;
        rows.push(CompareRow {
            expiry: term.expiry,
            maturity: term.maturity,
            model_objective: fit.objective,
            model_iv_rmse: fit.iv_rmse,
            model_feasible: fit.feasible,
            svi_objective: svi.objective,
            svi_iv_rmse: svi.iv_rmse,
            svi_feasible: svi.feasible,
            svi_full_constraints_feasible: svi_full.feasible,
        });
    }
    match rc.format {
        FormatArg::Csv => {
            let mut csv = String::from(
                "expiry,maturity,model_objective,model_iv_rmse,model_feasible,svi_objective,svi_iv_rmse,svi_feasible,svi_full_constraints_feasible\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.expiry,
                    r.maturity,
                    r.model_objective,
                    r.model_iv_rmse,
                    r.model_feasible,
                    r.svi_objective,
                    r.svi_iv_rmse,
                    r.svi_feasible,
                    r.svi_full_constraints_feasible
                ));
            }
            write_text(&rc.out.join("compare_svi.csv"), &csv)?;
        }
        FormatArg::Json => {
            write_text(&rc.out.join("compare_svi.json"), &serde_json::to_string_pretty(&rows)?)?;
        }
    }
    for r in &rows {
        println!(
            "compare {} T={:.4}: model obj={:.6e} rmse={:.6} | svi obj={:.6e} rmse={:.6} full_feasible={}",
            r.expiry,
            r.maturity,
            r.model_objective,
            r.model_iv_rmse,
            r.svi_objective,
            r.svi_iv_rmse,
            r.svi_full_constraints_feasible
        );
    }
    println!("compare-svi: {} row(s) -> {}", rows.len(), rc.out.display());
    Ok(())
}

/// Run one parsed command; errors map to exit codes via
/// `SmileFitError::exit_code`.
pub fn run_command(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(&resolve(a)?),
        Command::Surface(a) => cmd_surface(&resolve(a)?),
        Command::Localvol(a) => cmd_localvol(&resolve(a)?),
        Command::Density(a) => cmd_density(&resolve(a)?),
        Command::CheckNoarb(a) => cmd_check_noarb(&resolve(a)?),
        Command::Stability(a) => cmd_stability(a),
        Command::CompareSvi(a) => cmd_compare_svi(&resolve(a)?),
    }
}

/// CLI entry: returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let SmileFitError::ArbitrageRejected(_) = e {
                // the violation list is embedded in the message
            }
            e.exit_code()
        }
    }
}
