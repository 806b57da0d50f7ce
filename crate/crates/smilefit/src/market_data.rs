//! Quote ingestion, call/put blending, forwards, normalized strikes, and the
//! calibration/output grid.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::black_scholes::OptionType;
use crate::error::{Result, SmileFitError};

/// One raw option quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketQuote {
    pub expiry: NaiveDate,
    pub strike: f64,
    #[serde(rename = "type")]
    pub option_type: OptionType,
    pub iv: f64,
    pub bid_iv: Option<f64>,
    pub ask_iv: Option<f64>,
    pub delta: Option<f64>,
}

/// Valuation date, spot and flat continuously-compounded rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketContext {
    pub valuation_date: NaiveDate,
    pub spot: f64,
    pub rate: f64,
}

impl MarketContext {
    /// ACT/365 year fraction from valuation to expiry.
    pub fn year_fraction(&self, expiry: NaiveDate) -> f64 {
        (expiry - self.valuation_date).num_days() as f64 / 365.0
    }

    /// F(T) = S e^{rT}.
    pub fn forward(&self, maturity: f64) -> f64 {
        self.spot * (self.rate * maturity).exp()
    }
}

/// z = log(K/F) / (sigma* sqrt(T)).
pub fn normalized_strike(strike: f64, forward: f64, maturity: f64, sigma_star: f64) -> Result<f64> {
    for (v, name) in [
        (strike, "strike"),
        (forward, "forward"),
        (maturity, "maturity"),
        (sigma_star, "sigma_star"),
    ] {
        if !(v > 0.0) {
            return Err(SmileFitError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok((strike / forward).ln() / (sigma_star * maturity.sqrt()))
}

/// Delta-weighted average of call and put IVs at one strike.
///
/// Weights (1-|delta_c|) and (1-|delta_p|) renormalized to sum to 1; when
/// either delta is missing or both weights vanish, a plain average is used and
/// the returned flag marks the fallback.
pub fn blend_call_put(
    call_iv: f64,
    put_iv: f64,
    call_delta: Option<f64>,
    put_delta: Option<f64>,
) -> (f64, bool) {
    match (call_delta, put_delta) {
        (Some(dc), Some(dp)) => {
            let wc = 1.0 - dc.abs();
            let wp = 1.0 - dp.abs();
            let sum = wc + wp;
            if sum <= 0.0 {
                ((call_iv + put_iv) / 2.0, true)
            } else {
                ((wc * call_iv + wp * put_iv) / sum, false)
            }
        }
        _ => ((call_iv + put_iv) / 2.0, true),
    }
}

fn parse_opt_f64(field: &str, row: usize, name: &str) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|e| SmileFitError::Parse { row, message: format!("{name}: {e}") })
}

/// Load quotes from the CSV format `expiry,strike,type,iv,bid_iv,ask_iv,delta`.
pub fn load_quotes(path: &Path) -> Result<Vec<MarketQuote>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["expiry", "strike", "type", "iv", "bid_iv", "ask_iv", "delta"];
    for (i, name) in expected.iter().enumerate().take(4) {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(SmileFitError::Input(format!(
                "quote CSV must start with header {}",
                expected.join(",")
            )));
        }
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 2; // header is row 1
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let expiry = NaiveDate::parse_from_str(get(0), "%Y-%m-%d")
            .map_err(|e| SmileFitError::Parse { row, message: format!("expiry: {e}") })?;
        let strike: f64 = get(1)
            .parse()
            .map_err(|e| SmileFitError::Parse { row, message: format!("strike: {e}") })?;
        let option_type = match get(2) {
            "call" | "C" | "c" => OptionType::Call,
            "put" | "P" | "p" => OptionType::Put,
            other => {
                return Err(SmileFitError::Parse {
                    row,
                    message: format!("type must be call or put, got '{other}'"),
                })
            }
        };
        let iv: f64 = get(3)
            .parse()
            .map_err(|e| SmileFitError::Parse { row, message: format!("iv: {e}") })?;
        let bid_iv = parse_opt_f64(get(4), row, "bid_iv")?;
        let ask_iv = parse_opt_f64(get(5), row, "ask_iv")?;
        let delta = parse_opt_f64(get(6), row, "delta")?;

        if !(strike > 0.0) {
            return Err(SmileFitError::Parse { row, message: format!("strike must be positive, got {strike}") });
        }
        if !(iv > 0.0) {
            return Err(SmileFitError::Parse { row, message: format!("iv must be positive, got {iv}") });
        }
        if let (Some(b), Some(a)) = (bid_iv, ask_iv) {
            if !(b <= iv && iv <= a) {
                return Err(SmileFitError::Parse {
                    row,
                    message: format!("bid/mid/ask not ordered: {b}/{iv}/{a}"),
                });
            }
        }
        if let Some(d) = delta {
            if d.abs() > 1.0 {
                return Err(SmileFitError::Parse { row, message: format!("|delta| > 1: {d}") });
            }
        }
        if !seen.insert((expiry, strike.to_bits(), option_type)) {
            return Err(SmileFitError::Parse {
                row,
                message: format!("duplicate quote ({expiry}, {strike}, {option_type:?})"),
            });
        }
        out.push(MarketQuote { expiry, strike, option_type, iv, bid_iv, ask_iv, delta });
    }
    if out.is_empty() {
        return Err(SmileFitError::NoQuotes);
    }
    Ok(out)
}

/// Load a context file: JSON `{valuation_date, spot, rate}` or a one-row CSV
/// with that header.
pub fn load_context(path: &Path) -> Result<MarketContext> {
    let text = std::fs::read_to_string(path)?;
    let trimmed = text.trim_start();
    let ctx: MarketContext = if trimmed.starts_with('{') {
        serde_json::from_str(trimmed)?
    } else {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut it = rdr.deserialize::<MarketContext>();
        it.next().ok_or_else(|| SmileFitError::Input("context CSV has no data row".into()))??
    };
    if !(ctx.spot > 0.0) {
        return Err(SmileFitError::Input(format!("spot must be positive, got {}", ctx.spot)));
    }
    Ok(ctx)
}

/// One calibration point of a term: normalized strike, market total variance,
/// and the weighting inputs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TermPoint {
    pub strike: f64,
    pub z: f64,
    pub iv: f64,
    pub w_m: f64,
    pub call_delta: Option<f64>,
    pub put_delta: Option<f64>,
    pub bid_iv: Option<f64>,
    pub ask_iv: Option<f64>,
    /// Set when call/put blending fell back to the plain average.
    pub blend_fallback: bool,
}

/// All calibration inputs for one expiry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermQuotes {
    pub expiry: NaiveDate,
    pub maturity: f64,
    pub forward: f64,
    pub sigma_star: f64,
    /// ATM-interpolated IV of this term, used by the point weights.
    pub sigma_atm: f64,
    pub points: Vec<TermPoint>,
}

/// Group validated quotes into per-expiry calibration terms with OTM
/// preference: puts below the forward, calls above, blended where both sides
/// quote the same strike.
pub fn group_terms(
    quotes: &[MarketQuote],
    context: &MarketContext,
    sigma_star: Option<f64>,
) -> Result<Vec<TermQuotes>> {
    if quotes.is_empty() {
        return Err(SmileFitError::NoQuotes);
    }
    let mut by_expiry: BTreeMap<NaiveDate, Vec<&MarketQuote>> = BTreeMap::new();
    for q in quotes {
        if context.year_fraction(q.expiry) <= 0.0 {
            return Err(SmileFitError::Input(format!(
                "expiry {} not after valuation date {}",
                q.expiry, context.valuation_date
            )));
        }
        by_expiry.entry(q.expiry).or_default().push(q);
    }
    let sigma_star = match sigma_star {
        Some(s) => s,
        None => default_sigma_star(&by_expiry, context)?,
    };

    let mut terms = Vec::new();
    for (&expiry, qs) in &by_expiry {
        let maturity = context.year_fraction(expiry);
        let forward = context.forward(maturity);
        // merge call/put per strike
        let mut by_strike: BTreeMap<u64, (f64, Option<&MarketQuote>, Option<&MarketQuote>)> =
            BTreeMap::new();
        for q in qs {
            let e = by_strike.entry(q.strike.to_bits()).or_insert((q.strike, None, None));
            match q.option_type {
                OptionType::Call => e.1 = Some(q),
                OptionType::Put => e.2 = Some(q),
            }
        }
        let mut points = Vec::new();
        for (_, (strike, call, put)) in by_strike {
            let (iv, call_delta, put_delta, bid, ask, fallback) = match (call, put) {
                (Some(c), Some(p)) => {
                    let (iv, fb) = blend_call_put(c.iv, p.iv, c.delta, p.delta);
                    (iv, c.delta, p.delta, c.bid_iv.or(p.bid_iv), c.ask_iv.or(p.ask_iv), fb)
                }
                // OTM preference for one-sided strikes
                (Some(c), None) => (c.iv, c.delta, None, c.bid_iv, c.ask_iv, false),
                (None, Some(p)) => (p.iv, None, p.delta, p.bid_iv, p.ask_iv, false),
                (None, None) => unreachable!(),
            };
            let z = normalized_strike(strike, forward, maturity, sigma_star)?;
            points.push(TermPoint {
                strike,
                z,
                iv,
                w_m: iv * iv * maturity,
                call_delta,
                put_delta,
                bid_iv: bid,
                ask_iv: ask,
                blend_fallback: fallback,
            });
        }
        points.sort_by(|a, b| a.z.total_cmp(&b.z));
        let sigma_atm = atm_iv(&points, forward);
        terms.push(TermQuotes { expiry, maturity, forward, sigma_star, sigma_atm, points });
    }
    Ok(terms)
}

/// ATM IV by linear interpolation in strike (nearest quote if one-sided).
fn atm_iv(points: &[TermPoint], forward: f64) -> f64 {
    debug_assert!(!points.is_empty());
    let mut below: Option<&TermPoint> = None;
    let mut above: Option<&TermPoint> = None;
    for p in points {
        if p.strike <= forward {
            below = Some(p);
        } else if above.is_none() {
            above = Some(p);
        }
    }
    match (below, above) {
        (Some(b), Some(a)) => {
            let t = (forward - b.strike) / (a.strike - b.strike);
            b.iv + t * (a.iv - b.iv)
        }
        (Some(b), None) => b.iv,
        (None, Some(a)) => a.iv,
        (None, None) => unreachable!(),
    }
}

/// Default sigma*: ATM IV of the shortest listed maturity.
fn default_sigma_star(
    by_expiry: &BTreeMap<NaiveDate, Vec<&MarketQuote>>,
    context: &MarketContext,
) -> Result<f64> {
    let (&expiry, qs) = by_expiry.iter().next().ok_or(SmileFitError::NoQuotes)?;
    let maturity = context.year_fraction(expiry);
    let forward = context.forward(maturity);
    // nearest-to-forward quote is a sufficient ATM proxy here
    let q = qs
        .iter()
        .min_by(|a, b| (a.strike - forward).abs().total_cmp(&(b.strike - forward).abs()))
        .unwrap();
    Ok(q.iv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    ZBand,
    StrikeList,
}

/// Grid specification: a symmetric z-band of gamma standard deviations, or an
/// explicit strike list shared across expiries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub mode: GridMode,
    /// z_band: half-width in standard deviations.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Normalization volatility; defaults to the shortest term's ATM IV.
    #[serde(default)]
    pub sigma_star: Option<f64>,
    /// strike_list: ascending strikes.
    #[serde(default)]
    pub strikes: Vec<f64>,
    /// Expiries as year fractions, ascending.
    pub expiries: Vec<f64>,
    /// z_band: z-node spacing.
    #[serde(default)]
    pub step: Option<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.expiries.is_empty() || self.expiries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SmileFitError::Config("grid expiries must be non-empty, strictly increasing".into()));
        }
        if self.expiries[0] <= 0.0 {
            return Err(SmileFitError::Config("grid expiries must be positive".into()));
        }
        match self.mode {
            GridMode::ZBand => {
                let g = self.gamma.unwrap_or(5.0);
                if g <= 0.0 {
                    return Err(SmileFitError::Config("gamma must be positive".into()));
                }
            }
            GridMode::StrikeList => {
                if self.strikes.is_empty() || self.strikes.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SmileFitError::Config(
                        "strike_list grid needs strictly increasing strikes".into(),
                    ));
                }
                if self.strikes[0] <= 0.0 {
                    return Err(SmileFitError::Config("strikes must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One grid node: normalized strike and the strike it maps to at its expiry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridNode {
    pub z: f64,
    pub strike: f64,
}

/// The materialized grid: per-expiry node rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub expiries: Vec<f64>,
    pub forwards: Vec<f64>,
    pub sigma_star: f64,
    /// nodes[i] are the nodes of expiry i, ascending in z.
    pub nodes: Vec<Vec<GridNode>>,
}

/// Materialize the grid: in z_band mode z-nodes span [-gamma sigma*, gamma sigma*]
/// with strikes K = F(T) e^{z sigma* sqrt(T)}; in strike_list mode the strikes are
/// fixed and z follows from the same map inverted.
pub fn build_grid(spec: &GridSpec, context: &MarketContext) -> Result<Grid> {
    spec.validate()?;
    let sigma_star = spec.sigma_star.unwrap_or(1.0);
    let forwards: Vec<f64> = spec.expiries.iter().map(|&t| context.forward(t)).collect();
    let mut nodes = Vec::new();
    match spec.mode {
        GridMode::ZBand => {
            let gamma = spec.gamma.unwrap_or(5.0);
            let half = gamma * sigma_star;
            let step = spec.step.unwrap_or(half / 10.0);
            let n = (2.0 * half / step).round() as usize;
            for (i, &t) in spec.expiries.iter().enumerate() {
                let mut row = Vec::with_capacity(n + 1);
                for j in 0..=n {
                    let z = -half + step * j as f64;
                    let strike = forwards[i] * (z * sigma_star * t.sqrt()).exp();
                    row.push(GridNode { z, strike });
                }
                nodes.push(row);
            }
        }
        GridMode::StrikeList => {
            for (i, &t) in spec.expiries.iter().enumerate() {
                let row = spec
                    .strikes
                    .iter()
                    .map(|&k| {
                        Ok(GridNode { z: normalized_strike(k, forwards[i], t, sigma_star)?, strike: k })
                    })
                    .collect::<Result<Vec<_>>>()?;
                nodes.push(row);
            }
        }
    }
    Ok(Grid { expiries: spec.expiries.clone(), forwards, sigma_star, nodes })
}
