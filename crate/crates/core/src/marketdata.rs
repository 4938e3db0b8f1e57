//! Price and dividend ingestion, weekly returns, period total returns and a
//! factor-model generator for synthetic markets.
//!
//! Input rows follow the CSV schema `date,ticker,close,dividend` (ISO-8601
//! dates, `dividend` optional). Industry tags come from a separate metadata
//! file `ticker,code,industry`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trading days per return window.
pub const WINDOW_DAYS: usize = 5;

/// Largest fraction of the period's trading dates a ticker may be missing
/// before it is rejected.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{ticker} on {date}: {message}")]
    Validation {
        ticker: String,
        date: NaiveDate,
        message: String,
    },
    #[error("ticker {0} is not in the metadata")]
    UnknownTicker(String),
    #[error("ticker {ticker} is missing {missing} of {grid} trading dates in period {period}")]
    Alignment {
        ticker: String,
        period: String,
        missing: usize,
        grid: usize,
    },
    #[error("period {period} has {found} shared trading dates, need at least {required}")]
    InsufficientData {
        period: String,
        found: usize,
        required: usize,
    },
    #[error("ticker {ticker} has no prices in period {period}")]
    NoPrices { ticker: String, period: String },
    #[error("invalid study period {label}: {message}")]
    InvalidPeriod { label: String, message: String },
    #[error("invalid synthetic market: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// Exchange-assigned industry group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Industry {
    Energy,
    Finance,
    HealthCare,
    Industrial,
    Materials,
    Other(String),
}

impl Industry {
    /// The five groups of the Shanghai A sample.
    pub const CORE: [Industry; 5] = [
        Industry::Energy,
        Industry::Finance,
        Industry::HealthCare,
        Industry::Industrial,
        Industry::Materials,
    ];
}

impl fmt::Display for Industry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Industry::Energy => f.write_str("Energy"),
            Industry::Finance => f.write_str("Finance"),
            Industry::HealthCare => f.write_str("Health Care"),
            Industry::Industrial => f.write_str("Industrial"),
            Industry::Materials => f.write_str("Materials"),
            Industry::Other(name) => f.write_str(name),
        }
    }
}

impl FromStr for Industry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let name = s.trim();
        if name.is_empty() {
            return Err("empty industry name".to_string());
        }
        let folded: String = name
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match folded.as_str() {
            "energy" => Industry::Energy,
            "finance" | "financial" | "financials" => Industry::Finance,
            "healthcare" => Industry::HealthCare,
            "industrial" | "industrials" => Industry::Industrial,
            "materials" => Industry::Materials,
            _ => Industry::Other(name.to_string()),
        })
    }
}

impl From<Industry> for String {
    fn from(value: Industry) -> Self {
        value.to_string()
    }
}

impl TryFrom<String> for Industry {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, Self::Error> {
        value.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub close: f64,
    pub dividend: f64,
}

/// Dated closes and cash dividends for one ticker, sorted by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    ticker: String,
    industry: Industry,
    observations: Vec<Observation>,
}

impl PriceSeries {
    /// Sorts the observations by date and checks prices and dividends.
    pub fn new(
        ticker: impl Into<String>,
        industry: Industry,
        mut observations: Vec<Observation>,
    ) -> Result<Self> {
        let ticker = ticker.into();
        observations.sort_by_key(|o| o.date);
        for (i, obs) in observations.iter().enumerate() {
            let invalid = |message: &str| MarketDataError::Validation {
                ticker: ticker.clone(),
                date: obs.date,
                message: message.to_string(),
            };
            if !(obs.close.is_finite() && obs.close > 0.0) {
                return Err(invalid(&format!("close price {} is not positive", obs.close)));
            }
            if !(obs.dividend.is_finite() && obs.dividend >= 0.0) {
                return Err(invalid(&format!("dividend {} is negative", obs.dividend)));
            }
            if i > 0 && observations[i - 1].date == obs.date {
                return Err(invalid("duplicate date"));
            }
        }
        Ok(Self {
            ticker,
            industry,
            observations,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn industry(&self) -> &Industry {
        &self.industry
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn within(&self, period: &StudyPeriod) -> &[Observation] {
        let lo = self.observations.partition_point(|o| o.date < period.start);
        let hi = self.observations.partition_point(|o| o.date <= period.end);
        &self.observations[lo..hi]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPeriod {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyPeriod {
    pub fn new(label: impl Into<String>, start: NaiveDate, end: NaiveDate) -> Result<Self> {
        let label = label.into();
        if start >= end {
            return Err(MarketDataError::InvalidPeriod {
                label,
                message: format!("start {start} is not before end {end}"),
            });
        }
        Ok(Self { label, start, end })
    }

    /// Builds consecutive periods labelled `1..` from `k + 1` boundary dates.
    pub fn from_boundaries(boundaries: &[NaiveDate]) -> Result<Vec<Self>> {
        let periods = boundaries
            .windows(2)
            .enumerate()
            .map(|(i, w)| StudyPeriod::new((i + 1).to_string(), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        validate_periods(&periods)?;
        Ok(periods)
    }
}

/// Boundaries of the four study periods: calm, boom, crash, recovery.
pub fn default_boundaries() -> Vec<NaiveDate> {
    [
        (2005, 5, 13),
        (2006, 6, 13),
        (2007, 10, 16),
        (2008, 10, 28),
        (2010, 10, 19),
    ]
    .iter()
    .map(|&(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).expect("valid boundary date"))
    .collect()
}

pub fn default_periods() -> Vec<StudyPeriod> {
    StudyPeriod::from_boundaries(&default_boundaries()).expect("default boundaries are ordered")
}

/// Periods must follow each other, sharing a boundary date or starting the
/// day after the previous one ends.
pub fn validate_periods(periods: &[StudyPeriod]) -> Result<()> {
    for pair in periods.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.start < prev.end || next.start > prev.end + Duration::days(1) {
            return Err(MarketDataError::InvalidPeriod {
                label: next.label.clone(),
                message: format!(
                    "starts {} but period {} ends {}",
                    next.start, prev.label, prev.end
                ),
            });
        }
    }
    Ok(())
}

/// One row of the `ticker,code,industry` metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickerInfo {
    pub ticker: String,
    pub code: String,
    pub industry: Industry,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    rows: Vec<TickerInfo>,
    index: HashMap<String, usize>,
}

impl Metadata {
    pub fn new(rows: Vec<TickerInfo>) -> Self {
        let index = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.ticker.clone(), i))
            .collect();
        Self { rows, index }
    }

    pub fn rows(&self) -> &[TickerInfo] {
        &self.rows
    }

    pub fn get(&self, ticker: &str) -> Option<&TickerInfo> {
        self.index.get(ticker).map(|&i| &self.rows[i])
    }

    pub fn industry(&self, ticker: &str) -> Option<&Industry> {
        self.get(ticker).map(|r| &r.industry)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_metadata<R: Read>(source: R) -> Result<Metadata> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut rows = Vec::new();
    for record in reader.deserialize::<TickerInfo>() {
        rows.push(record?);
    }
    Ok(Metadata::new(rows))
}

pub fn write_metadata<W: Write>(sink: W, metadata: &Metadata) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    for row in metadata.rows() {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads `date,ticker,close[,dividend]` rows into one series per ticker,
/// sorted by ticker. Empty or absent dividend cells read as zero.
pub fn load_prices<R: Read>(source: R, metadata: &Metadata) -> Result<Vec<PriceSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let missing = |name: &str| MarketDataError::Parse {
        line: 1,
        message: format!("header has no `{name}` column"),
    };
    let date_col = column("date").ok_or_else(|| missing("date"))?;
    let ticker_col = column("ticker").ok_or_else(|| missing("ticker"))?;
    let close_col = column("close").ok_or_else(|| missing("close"))?;
    let dividend_col = column("dividend");

    let mut grouped: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| MarketDataError::Parse {
                line,
                message: format!("missing `{name}` field"),
            })
        };
        let bad = |name: &str, value: &str| MarketDataError::Parse {
            line,
            message: format!("cannot parse {name} `{value}`"),
        };

        let raw_date = field(date_col, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| bad("date", raw_date))?;
        let ticker = field(ticker_col, "ticker")?.to_string();
        if ticker.is_empty() {
            return Err(bad("ticker", ""));
        }
        let raw_close = field(close_col, "close")?;
        let close: f64 = raw_close.parse().map_err(|_| bad("close", raw_close))?;
        let dividend = match dividend_col.and_then(|c| record.get(c)) {
            None | Some("") => 0.0,
            Some(raw) => raw.parse::<f64>().map_err(|_| bad("dividend", raw))?,
        };
        grouped.entry(ticker).or_default().push(Observation {
            date,
            close,
            dividend,
        });
    }

    grouped
        .into_iter()
        .map(|(ticker, observations)| {
            let industry = metadata
                .industry(&ticker)
                .cloned()
                .ok_or_else(|| MarketDataError::UnknownTicker(ticker.clone()))?;
            PriceSeries::new(ticker, industry, observations)
        })
        .collect()
}

/// Writes series in the same schema [`load_prices`] reads, rows ordered by
/// date and then by series order.
pub fn write_prices<W: Write>(sink: W, series: &[PriceSeries]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, usize, &Observation)> = series
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.observations.iter().map(move |o| (o.date, i, o)))
        .collect();
    rows.sort_by_key(|&(date, i, _)| (date, i));

    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["date", "ticker", "close", "dividend"])?;
    for (date, i, obs) in rows {
        writer.write_record([
            date.format("%Y-%m-%d").to_string(),
            series[i].ticker.clone(),
            obs.close.to_string(),
            obs.dividend.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Simple returns over consecutive five-trading-day windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnMatrix {
    pub tickers: Vec<String>,
    /// `(base date, end date)` of each window.
    pub windows: Vec<(NaiveDate, NaiveDate)>,
    /// windows x tickers.
    pub values: Array2<f64>,
}

impl ReturnMatrix {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }
}

/// Five-trading-day returns `(P_t + dividends in (t-5, t]) / P_{t-5} - 1` on
/// non-overlapping windows starting at the first shared trading day of the
/// period. A trailing partial window is dropped.
///
/// The trading grid is the intersection of every ticker's dates inside the
/// period. A ticker missing more than 5% of the union of dates is rejected.
pub fn weekly_returns(series: &[PriceSeries], period: &StudyPeriod) -> Result<ReturnMatrix> {
    let inside: Vec<&[Observation]> = series.iter().map(|s| s.within(period)).collect();

    let union: BTreeSet<NaiveDate> = inside.iter().flat_map(|obs| obs.iter().map(|o| o.date)).collect();
    let allowed = (MAX_MISSING_FRACTION * union.len() as f64).floor() as usize;
    for (s, obs) in series.iter().zip(&inside) {
        let missing = union.len() - obs.len();
        if missing > allowed {
            return Err(MarketDataError::Alignment {
                ticker: s.ticker.clone(),
                period: period.label.clone(),
                missing,
                grid: union.len(),
            });
        }
    }

    let grid: Vec<NaiveDate> = union
        .iter()
        .copied()
        .filter(|d| inside.iter().all(|obs| obs.binary_search_by_key(d, |o| o.date).is_ok()))
        .collect();
    if grid.len() < WINDOW_DAYS + 1 {
        return Err(MarketDataError::InsufficientData {
            period: period.label.clone(),
            found: grid.len(),
            required: WINDOW_DAYS + 1,
        });
    }

    let n_windows = (grid.len() - 1) / WINDOW_DAYS;
    let windows: Vec<(NaiveDate, NaiveDate)> = (0..n_windows)
        .map(|w| (grid[w * WINDOW_DAYS], grid[(w + 1) * WINDOW_DAYS]))
        .collect();
    let ends: Vec<NaiveDate> = windows.iter().map(|w| w.1).collect();

    let mut values = Array2::zeros((n_windows, series.len()));
    for (col, obs) in inside.iter().enumerate() {
        let price_on = |date: NaiveDate| {
            let i = obs
                .binary_search_by_key(&date, |o| o.date)
                .expect("grid dates exist in every series");
            obs[i].close
        };
        let mut dividends = vec![0.0; n_windows];
        for o in obs.iter().filter(|o| o.dividend > 0.0) {
            // window w covers (base_w, end_w]
            if o.date <= grid[0] {
                continue;
            }
            let w = ends.partition_point(|&end| end < o.date);
            if w < n_windows {
                dividends[w] += o.dividend;
            }
        }
        for (w, &(base, end)) in windows.iter().enumerate() {
            values[[w, col]] = (price_on(end) + dividends[w]) / price_on(base) - 1.0;
        }
    }

    Ok(ReturnMatrix {
        tickers: series.iter().map(|s| s.ticker.clone()).collect(),
        windows,
        values,
    })
}

/// Total return over the period with dividends reinvested at that day's close.
///
/// The holding is bought at the first trading date on or after the start and
/// valued at the last trading date on or before the end. Dividends paid after
/// the purchase date, including on the final date, are reinvested.
pub fn period_total_return(series: &PriceSeries, period: &StudyPeriod) -> Result<f64> {
    let obs = series.within(period);
    let (first, last) = match (obs.first(), obs.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => {
            return Err(MarketDataError::NoPrices {
                ticker: series.ticker.clone(),
                period: period.label.clone(),
            })
        }
    };
    let units = obs[1..]
        .iter()
        .filter(|o| o.dividend > 0.0)
        .fold(1.0, |units, o| units * (1.0 + o.dividend / o.close));
    Ok(units * last.close / first.close - 1.0)
}

/// Factor loadings for one synthetic stock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockLoading {
    pub ticker: String,
    pub industry: Industry,
    pub cluster: usize,
    pub industry_loading: f64,
    pub cluster_loading: f64,
}

/// A change of market conditions from `start_week` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start_week: usize,
    /// Daily log drift shared by every stock.
    pub drift: f64,
    /// Multiplies every factor and idiosyncratic volatility.
    pub vol_scale: f64,
}

/// Multiplicative factor model. Each trading day a stock's log return is
///
/// `drift + market_loading * M + industry_loading * I_g + cluster_loading * C_c + e`
///
/// with independent standard normal factors scaled by `factor_vol` and
/// idiosyncratic noise scaled by `idiosyncratic_vol`. Stocks sharing a cluster
/// factor are more correlated with each other than with the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub stocks: Vec<StockLoading>,
    pub market_loading: f64,
    pub factor_vol: f64,
    pub idiosyncratic_vol: f64,
    /// Annual dividend as a fraction of price, paid once every 52 weeks.
    pub dividend_yield: f64,
    pub start: NaiveDate,
    /// Sorted by `start_week`. Empty means zero drift and unit volatility scale.
    pub regimes: Vec<Regime>,
}

impl FactorSpec {
    /// `n_stocks` tickers `S000..` spread over the five core industries, cut
    /// into `n_clusters` contiguous blocks.
    pub fn blocks(
        n_stocks: usize,
        n_clusters: usize,
        cluster_loading: f64,
        industry_loading: f64,
    ) -> Self {
        let width = n_stocks.to_string().len().max(3);
        let stocks = (0..n_stocks)
            .map(|i| StockLoading {
                ticker: format!("S{i:0width$}"),
                industry: Industry::CORE[i % Industry::CORE.len()].clone(),
                cluster: i * n_clusters.max(1) / n_stocks.max(1),
                industry_loading,
                cluster_loading,
            })
            .collect();
        Self::with_stocks(stocks)
    }

    /// One stock per metadata row; clusters are dealt round-robin so each
    /// cluster mixes industries.
    pub fn from_metadata(
        metadata: &Metadata,
        n_clusters: usize,
        cluster_loading: f64,
        industry_loading: f64,
    ) -> Self {
        let stocks = metadata
            .rows()
            .iter()
            .enumerate()
            .map(|(i, row)| StockLoading {
                ticker: row.ticker.clone(),
                industry: row.industry.clone(),
                cluster: i % n_clusters.max(1),
                industry_loading,
                cluster_loading,
            })
            .collect();
        Self::with_stocks(stocks)
    }

    pub fn with_stocks(stocks: Vec<StockLoading>) -> Self {
        Self {
            stocks,
            market_loading: 0.0,
            factor_vol: 0.01,
            idiosyncratic_vol: 0.01,
            dividend_yield: 0.0,
            start: NaiveDate::from_ymd_opt(2005, 5, 13).expect("valid date"),
            regimes: Vec::new(),
        }
    }

    fn regime_at(&self, week: usize) -> (f64, f64) {
        self.regimes
            .iter()
            .rev()
            .find(|r| r.start_week <= week)
            .map_or((0.0, 1.0), |r| (r.drift, r.vol_scale))
    }
}

/// Simulates `n_weeks` of daily prices (five weekdays per week) for the
/// stocks of `spec`. Deterministic given `seed`.
pub fn generate_synthetic(
    n_stocks: usize,
    n_weeks: usize,
    spec: &FactorSpec,
    seed: u64,
) -> Result<Vec<PriceSeries>> {
    if n_stocks < 4 {
        return Err(MarketDataError::InvalidSpec(format!(
            "need at least 4 stocks, got {n_stocks}"
        )));
    }
    if n_weeks == 0 {
        return Err(MarketDataError::InvalidSpec("need at least one week".into()));
    }
    if spec.stocks.len() != n_stocks {
        return Err(MarketDataError::InvalidSpec(format!(
            "spec describes {} stocks, asked for {n_stocks}",
            spec.stocks.len()
        )));
    }
    if !(spec.factor_vol >= 0.0 && spec.idiosyncratic_vol > 0.0 && spec.dividend_yield >= 0.0) {
        return Err(MarketDataError::InvalidSpec(
            "volatilities and dividend yield must be non-negative, idiosyncratic volatility positive"
                .into(),
        ));
    }

    let industries: Vec<Industry> = spec
        .stocks
        .iter()
        .map(|s| s.industry.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let industry_of: Vec<usize> = spec
        .stocks
        .iter()
        .map(|s| industries.binary_search(&s.industry).expect("collected above"))
        .collect();
    let n_clusters = spec.stocks.iter().map(|s| s.cluster + 1).max().unwrap_or(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_price: Vec<f64> = (0..n_stocks)
        .map(|_| (20.0 + 80.0 * rng.random::<f64>()).ln())
        .collect();
    let dates = trading_days(spec.start, n_weeks * WINDOW_DAYS);
    let payout_day: Vec<usize> = (0..n_stocks).map(|i| 60 + (i * 37) % 190).collect();

    let mut observations: Vec<Vec<Observation>> = vec![Vec::with_capacity(dates.len()); n_stocks];
    let mut industry_factor = vec![0.0; industries.len()];
    let mut cluster_factor = vec![0.0; n_clusters];
    for (day, &date) in dates.iter().enumerate() {
        if day > 0 {
            let (drift, scale) = spec.regime_at(day / WINDOW_DAYS);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            let market = normal() * spec.factor_vol * scale;
            for f in industry_factor.iter_mut() {
                *f = normal() * spec.factor_vol * scale;
            }
            for f in cluster_factor.iter_mut() {
                *f = normal() * spec.factor_vol * scale;
            }
            for (i, stock) in spec.stocks.iter().enumerate() {
                let noise = normal() * spec.idiosyncratic_vol * scale;
                log_price[i] += drift
                    + spec.market_loading * market
                    + stock.industry_loading * industry_factor[industry_of[i]]
                    + stock.cluster_loading * cluster_factor[stock.cluster]
                    + noise;
            }
        }
        for i in 0..n_stocks {
            let close = round4(log_price[i].exp()).max(1e-4);
            let dividend = if spec.dividend_yield > 0.0 && day % 260 == payout_day[i] {
                round4(spec.dividend_yield * close)
            } else {
                0.0
            };
            observations[i].push(Observation {
                date,
                close,
                dividend,
            });
        }
    }

    spec.stocks
        .iter()
        .zip(observations)
        .map(|(stock, obs)| PriceSeries::new(stock.ticker.clone(), stock.industry.clone(), obs))
        .collect()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// `count` consecutive weekdays starting at `start` (or the next weekday).
pub fn trading_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut date = start;
    while out.len() < count {
        if !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(date);
        }
        date += Duration::days(1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn metadata(tickers: &[&str]) -> Metadata {
        Metadata::new(
            tickers
                .iter()
                .map(|t| TickerInfo {
                    ticker: t.to_string(),
                    code: t.to_string(),
                    industry: Industry::Energy,
                })
                .collect(),
        )
    }

    fn series(ticker: &str, rows: &[(NaiveDate, f64, f64)]) -> PriceSeries {
        let obs = rows
            .iter()
            .map(|&(date, close, dividend)| Observation {
                date,
                close,
                dividend,
            })
            .collect();
        PriceSeries::new(ticker, Industry::Finance, obs).unwrap()
    }

    #[test]
    fn loads_two_tickers() {
        let csv = "date,ticker,close,dividend\n\
                   2020-01-02,AAA,10,0\n2020-01-02,BBB,20,\n\
                   2020-01-03,AAA,11,0.5\n2020-01-03,BBB,21,0\n\
                   2020-01-06,AAA,12,0\n2020-01-06,BBB,22,0\n";
        let out = load_prices(csv.as_bytes(), &metadata(&["AAA", "BBB"])).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.len() == 3));
        assert_eq!(out[0].observations()[1].dividend, 0.5);
        assert_eq!(out[1].observations()[0].dividend, 0.0);
    }

    #[test]
    fn zero_close_is_a_validation_error() {
        let csv = "date,ticker,close,dividend\n2020-01-02,AAA,0,0\n";
        let err = load_prices(csv.as_bytes(), &metadata(&["AAA"])).unwrap_err();
        match err {
            MarketDataError::Validation { ticker, date: d, .. } => {
                assert_eq!(ticker, "AAA");
                assert_eq!(d, date(2020, 1, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_dividend_column_reads_zero() {
        let csv = "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,10.5\n";
        let out = load_prices(csv.as_bytes(), &metadata(&["AAA"])).unwrap();
        assert!(out[0].observations().iter().all(|o| o.dividend == 0.0));
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,ten\n";
        match load_prices(csv.as_bytes(), &metadata(&["AAA"])).unwrap_err() {
            MarketDataError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_ticker_is_rejected() {
        let csv = "date,ticker,close\n2020-01-02,ZZZ,10\n";
        assert!(matches!(
            load_prices(csv.as_bytes(), &metadata(&["AAA"])),
            Err(MarketDataError::UnknownTicker(t)) if t == "ZZZ"
        ));
    }

    #[test]
    fn row_order_does_not_matter() {
        let sorted = "date,ticker,close\n2020-01-02,AAA,10\n2020-01-03,AAA,11\n2020-01-06,AAA,12\n";
        let shuffled = "date,ticker,close\n2020-01-06,AAA,12\n2020-01-02,AAA,10\n2020-01-03,AAA,11\n";
        let md = metadata(&["AAA"]);
        assert_eq!(
            load_prices(sorted.as_bytes(), &md).unwrap(),
            load_prices(shuffled.as_bytes(), &md).unwrap()
        );
    }

    #[test]
    fn duplicate_dates_are_rejected() {
        let csv = "date,ticker,close\n2020-01-02,AAA,10\n2020-01-02,AAA,11\n";
        assert!(matches!(
            load_prices(csv.as_bytes(), &metadata(&["AAA"])),
            Err(MarketDataError::Validation { .. })
        ));
    }

    fn six_day_period() -> (Vec<NaiveDate>, StudyPeriod) {
        let days = trading_days(date(2020, 1, 6), 6);
        let period = StudyPeriod::new("p", days[0], days[5]).unwrap();
        (days, period)
    }

    #[test]
    fn weekly_return_includes_window_dividend() {
        let (days, period) = six_day_period();
        let mut rows: Vec<_> = days.iter().map(|&d| (d, 100.0, 0.0)).collect();
        rows[5].1 = 110.0;
        rows[3].2 = 2.0;
        let r = weekly_returns(&[series("A", &rows)], &period).unwrap();
        assert_eq!(r.n_windows(), 1);
        assert!((r.values[[0, 0]] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn flat_price_gives_zero_return() {
        let (days, period) = six_day_period();
        let rows: Vec<_> = days.iter().map(|&d| (d, 100.0, 0.0)).collect();
        let r = weekly_returns(&[series("A", &rows)], &period).unwrap();
        assert_eq!(r.values[[0, 0]], 0.0);
    }

    #[test]
    fn partial_final_window_is_dropped() {
        let days = trading_days(date(2020, 1, 6), 11);
        let period = StudyPeriod::new("p", days[0], days[10]).unwrap();
        let rows: Vec<_> = days.iter().enumerate().map(|(i, &d)| (d, 100.0 + i as f64, 0.0)).collect();
        let r = weekly_returns(&[series("A", &rows)], &period).unwrap();
        assert_eq!(r.n_windows(), 2);
        assert_eq!(r.windows[1], (days[5], days[10]));
    }

    #[test]
    fn gaps_beyond_tolerance_name_the_ticker() {
        let days = trading_days(date(2020, 1, 6), 40);
        let period = StudyPeriod::new("p", days[0], days[39]).unwrap();
        let full: Vec<_> = days.iter().map(|&d| (d, 100.0, 0.0)).collect();
        let gappy: Vec<_> = full.iter().copied().enumerate().filter(|(i, _)| i % 10 != 3).map(|(_, r)| r).collect();
        let err = weekly_returns(&[series("A", &full), series("B", &gappy)], &period).unwrap_err();
        assert!(matches!(err, MarketDataError::Alignment { ticker, .. } if ticker == "B"));

        // one missing day in forty is tolerated; the grid shrinks instead
        let one_gap: Vec<_> = full.iter().copied().enumerate().filter(|(i, _)| *i != 3).map(|(_, r)| r).collect();
        let r = weekly_returns(&[series("A", &full), series("B", &one_gap)], &period).unwrap();
        assert_eq!(r.n_windows(), (39 - 1) / 5);
    }

    #[test]
    fn too_few_dates_is_an_error() {
        let days = trading_days(date(2020, 1, 6), 5);
        let period = StudyPeriod::new("p", days[0], days[4]).unwrap();
        let rows: Vec<_> = days.iter().map(|&d| (d, 100.0, 0.0)).collect();
        assert!(matches!(
            weekly_returns(&[series("A", &rows)], &period),
            Err(MarketDataError::InsufficientData { .. })
        ));
    }

    #[test]
    fn total_return_reinvests_dividends() {
        let d = trading_days(date(2020, 1, 6), 3);
        let period = StudyPeriod::new("p", d[0], d[2]).unwrap();

        let s = series("A", &[(d[0], 100.0, 0.0), (d[1], 100.0, 10.0), (d[2], 110.0, 0.0)]);
        assert!((period_total_return(&s, &period).unwrap() - 0.21).abs() < 1e-12);

        let s = series("A", &[(d[0], 100.0, 0.0), (d[1], 95.0, 0.0), (d[2], 90.0, 0.0)]);
        assert!((period_total_return(&s, &period).unwrap() + 0.10).abs() < 1e-12);

        let s = series("A", &[(d[0], 100.0, 0.0), (d[1], 101.0, 0.0), (d[2], 100.0, 5.0)]);
        assert!((period_total_return(&s, &period).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn total_return_uses_boundary_trading_dates() {
        // period boundaries fall on a weekend
        let s = series(
            "A",
            &[(date(2020, 1, 3), 50.0, 0.0), (date(2020, 1, 6), 100.0, 0.0), (date(2020, 1, 10), 120.0, 0.0), (date(2020, 1, 13), 1.0, 0.0)],
        );
        let period = StudyPeriod::new("p", date(2020, 1, 4), date(2020, 1, 12)).unwrap();
        assert_eq!(period_total_return(&s, &period).unwrap(), 120.0 / 100.0 - 1.0);

        let empty = StudyPeriod::new("q", date(2021, 1, 1), date(2021, 2, 1)).unwrap();
        assert!(matches!(period_total_return(&s, &empty), Err(MarketDataError::NoPrices { .. })));
    }

    #[test]
    fn default_periods_chain() {
        let periods = default_periods();
        assert_eq!(periods.len(), 4);
        assert_eq!(periods[0].start, date(2005, 5, 13));
        assert_eq!(periods[3].end, date(2010, 10, 19));
        assert!(periods.windows(2).all(|w| w[0].end == w[1].start));
        assert!(StudyPeriod::new("bad", date(2020, 1, 2), date(2020, 1, 2)).is_err());
    }

    #[test]
    fn industry_names_parse() {
        assert_eq!("Health Care".parse::<Industry>().unwrap(), Industry::HealthCare);
        assert_eq!("industrials".parse::<Industry>().unwrap(), Industry::Industrial);
        assert_eq!("Utilities".parse::<Industry>().unwrap(), Industry::Other("Utilities".into()));
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let spec = FactorSpec::blocks(8, 2, 1.0, 0.5);
        let a = generate_synthetic(8, 20, &spec, 7).unwrap();
        let b = generate_synthetic(8, 20, &spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 100);
        assert!(generate_synthetic(3, 20, &FactorSpec::blocks(3, 1, 1.0, 0.0), 7).is_err());
        assert!(generate_synthetic(8, 0, &spec, 7).is_err());
    }

    #[test]
    fn synthetic_prices_round_trip_through_csv() {
        let mut spec = FactorSpec::blocks(5, 1, 1.0, 0.0);
        spec.dividend_yield = 0.03;
        let prices = generate_synthetic(5, 60, &spec, 3).unwrap();
        let md = Metadata::new(
            spec.stocks
                .iter()
                .map(|s| TickerInfo {
                    ticker: s.ticker.clone(),
                    code: s.ticker.clone(),
                    industry: s.industry.clone(),
                })
                .collect(),
        );
        let mut buf = Vec::new();
        write_prices(&mut buf, &prices).unwrap();
        let back = load_prices(buf.as_slice(), &md).unwrap();
        assert_eq!(back, prices);
        assert!(prices.iter().any(|s| s.observations().iter().any(|o| o.dividend > 0.0)));
    }
}
