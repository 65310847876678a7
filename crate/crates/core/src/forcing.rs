//! Climate forcing: daily climate series, temperature-dependent rate tables,
//! development extent, moving averages and the precipitation-driven carrying
//! capacity model.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TEMPERATURE_C: f64 = -90.0;
pub const MAX_TEMPERATURE_C: f64 = 60.0;
pub const CLIMATE_HEADER: [&str; 3] = ["date", "tavg_c", "precip_m"];

/// Window of the trailing precipitation average that drives carrying capacity.
pub const PRECIP_WINDOW_DAYS: usize = 14;

/// Default rate tables shipped with the crate.
pub const DEFAULT_RATES_TOML: &str = include_str!("../data/default_rates.toml");
pub const DEFAULT_CAPACITY_TOML: &str = include_str!("../data/default_capacity.toml");

// ---------------------------------------------------------------------------
// Climate series

#[derive(Debug, Clone, PartialEq)]
pub struct ClimateSeries {
    start_date: NaiveDate,
    tavg: Vec<f64>,
    precip: Vec<f64>,
}

impl ClimateSeries {
    pub fn new(start_date: NaiveDate, tavg: Vec<f64>, precip: Vec<f64>) -> Result<Self> {
        if tavg.is_empty() {
            return Err(Error::invalid("climate series must hold at least one day"));
        }
        if tavg.len() != precip.len() {
            return Err(Error::invalid(format!(
                "temperature ({}) and precipitation ({}) lengths differ",
                tavg.len(),
                precip.len()
            )));
        }
        for (i, (&t, &p)) in tavg.iter().zip(&precip).enumerate() {
            check_day(t, p).map_err(|m| Error::invalid(format!("day {i}: {m}")))?;
        }
        Ok(Self {
            start_date,
            tavg,
            precip,
        })
    }

    /// Constant weather, mostly for tests and scenario runs.
    pub fn constant(start_date: NaiveDate, days: usize, tavg: f64, precip: f64) -> Result<Self> {
        Self::new(start_date, vec![tavg; days], vec![precip; days])
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn len(&self) -> usize {
        self.tavg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tavg.is_empty()
    }

    pub fn tavg(&self) -> &[f64] {
        &self.tavg
    }

    pub fn precip(&self) -> &[f64] {
        &self.precip
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(day as u64)
    }

    /// Step forcing: the daily mean applies over the whole day. Times past the
    /// last day use the last day's value.
    pub fn temperature_at(&self, t: f64) -> f64 {
        let i = (t.max(0.0).floor() as usize).min(self.tavg.len() - 1);
        self.tavg[i]
    }

    /// Series of `days` days whose day `d` is day `(offset + d) mod len` of this one.
    pub fn cyclic(&self, offset: usize, days: usize) -> ClimateSeries {
        let n = self.len();
        let idx = |d: usize| (offset + d) % n;
        ClimateSeries {
            start_date: self.date(offset % n),
            tavg: (0..days).map(|d| self.tavg[idx(d)]).collect(),
            precip: (0..days).map(|d| self.precip[idx(d)]).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", CLIMATE_HEADER.join(",")).map_err(io)?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.date(i), self.tavg[i], self.precip[i]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub(crate) fn check_day(t: f64, p: f64) -> std::result::Result<(), String> {
    if !t.is_finite() || !(MIN_TEMPERATURE_C..=MAX_TEMPERATURE_C).contains(&t) {
        return Err(format!(
            "temperature {t} outside [{MIN_TEMPERATURE_C}, {MAX_TEMPERATURE_C}] C"
        ));
    }
    if !p.is_finite() || p < 0.0 {
        return Err(format!("precipitation {p} must be finite and >= 0"));
    }
    Ok(())
}

pub(crate) fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date {s:?}: {e}"))
}

pub(crate) fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| format!("bad {what} {s:?}"))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn check_header(
    rdr: &mut csv::Reader<std::fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!(
                "expected header {:?}, found {:?}",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

/// Reads a CSV of numbers with exactly the columns in `header`.
pub fn load_numeric_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, header)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .zip(header)
            .map(|(v, name)| parse_f64(v, name))
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a climate CSV (`date,tavg_c,precip_m`, one row per consecutive day).
pub fn load_climate(path: &Path) -> Result<ClimateSeries> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &CLIMATE_HEADER)?;
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut tavg = Vec::new();
    let mut precip = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() != 3 {
            return Err(perr(format!("expected 3 fields, found {}", rec.len())));
        }
        let date = parse_date(&rec[0]).map_err(perr)?;
        let t = parse_f64(&rec[1], "temperature").map_err(perr)?;
        let p = parse_f64(&rec[2], "precipitation").map_err(perr)?;
        check_day(t, p).map_err(perr)?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(Error::Format(format!(
                    "{}: line {line}: date {date} does not follow {prev}",
                    path.display()
                )));
            }
            if date != *prev + chrono::Days::new(1) {
                return Err(Error::Format(format!(
                    "{}: line {line}: gap between {prev} and {date}",
                    path.display()
                )));
            }
        }
        dates.push(date);
        tavg.push(t);
        precip.push(p);
    }
    let start = *dates
        .first()
        .ok_or_else(|| Error::Format(format!("{}: no data rows", path.display())))?;
    ClimateSeries::new(start, tavg, precip)
}

// ---------------------------------------------------------------------------
// Rate tables

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RateName {
    EggToLarva,
    LarvaToPupa,
    PupaToAdult,
    Gonotrophic,
    EggMortality,
    LarvaMortality,
    PupaMortality,
    AdultMortality,
    ExtrinsicIncubation,
    Oviposition,
}

impl RateName {
    pub const ALL: [RateName; 10] = [
        RateName::EggToLarva,
        RateName::LarvaToPupa,
        RateName::PupaToAdult,
        RateName::Gonotrophic,
        RateName::EggMortality,
        RateName::LarvaMortality,
        RateName::PupaMortality,
        RateName::AdultMortality,
        RateName::ExtrinsicIncubation,
        RateName::Oviposition,
    ];

    pub fn key(self) -> &'static str {
        match self {
            RateName::EggToLarva => "egg_to_larva",
            RateName::LarvaToPupa => "larva_to_pupa",
            RateName::PupaToAdult => "pupa_to_adult",
            RateName::Gonotrophic => "gonotrophic",
            RateName::EggMortality => "egg_mortality",
            RateName::LarvaMortality => "larva_mortality",
            RateName::PupaMortality => "pupa_mortality",
            RateName::AdultMortality => "adult_mortality",
            RateName::ExtrinsicIncubation => "extrinsic_incubation",
            RateName::Oviposition => "oviposition",
        }
    }
}

impl fmt::Display for RateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for RateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RateName::ALL
            .into_iter()
            .find(|r| r.key() == s)
            .ok_or_else(|| Error::Format(format!("unknown rate name {s:?}")))
    }
}

/// Piecewise-linear rate over temperature, clamped outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    name: RateName,
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl RateTable {
    pub fn new(name: RateName, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::invalid(format!(
                "{name}: knot and value counts differ"
            )));
        }
        if knots.len() < 2 {
            return Err(Error::invalid(format!("{name}: at least 2 knots required")));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name}: non-finite entry")));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "{name}: knots must be strictly increasing"
            )));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid(format!("{name}: values must be >= 0")));
        }
        Ok(Self {
            name,
            knots,
            values,
        })
    }

    /// A rate that does not depend on temperature.
    pub fn constant(name: RateName, value: f64) -> Result<Self> {
        Self::new(
            name,
            vec![MIN_TEMPERATURE_C, MAX_TEMPERATURE_C],
            vec![value, value],
        )
    }

    pub fn name(&self) -> RateName {
        self.name
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        if t.is_nan() {
            return v[0];
        }
        if t <= k[0] {
            return v[0];
        }
        let last = k.len() - 1;
        if t >= k[last] {
            return v[last];
        }
        let i = k.partition_point(|&x| x <= t) - 1;
        let w = (t - k[i]) / (k[i + 1] - k[i]);
        (v[i] + w * (v[i + 1] - v[i])).max(0.0)
    }
}

/// Every rate the life-cycle and transmission models need, evaluated at one
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyRates {
    pub egg_to_larva: f64,
    pub larva_to_pupa: f64,
    pub pupa_to_adult: f64,
    pub gonotrophic: f64,
    pub egg_mortality: f64,
    pub larva_mortality: f64,
    pub pupa_mortality: f64,
    pub adult_mortality: f64,
    pub extrinsic_incubation: f64,
    /// Eggs laid per completed gonotrophic cycle.
    pub oviposition: f64,
}

impl DailyRates {
    pub fn development_all_positive(&self) -> bool {
        self.egg_to_larva > 0.0
            && self.larva_to_pupa > 0.0
            && self.pupa_to_adult > 0.0
            && self.gonotrophic > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSet {
    tables: Vec<RateTable>,
}

impl RateSet {
    /// Requires exactly one table per [`RateName`].
    pub fn new(mut tables: Vec<RateTable>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &tables {
            if !seen.insert(t.name) {
                return Err(Error::Format(format!("rate {} given twice", t.name)));
            }
        }
        if let Some(missing) = RateName::ALL.iter().find(|n| !seen.contains(n)) {
            return Err(Error::Format(format!("missing rate table {missing}")));
        }
        tables.sort_by_key(|t| t.name);
        Ok(Self { tables })
    }

    /// The shipped tables.
    pub fn default_tables() -> Self {
        Self::from_toml_str(DEFAULT_RATES_TOML).expect("shipped rate tables parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// One `[name]` block per rate, each with `points = [[temperature_c, value], ...]`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Block {
            points: Vec<[f64; 2]>,
        }
        let blocks: BTreeMap<String, Block> =
            toml::from_str(text).map_err(|e| Error::Format(format!("rate tables: {e}")))?;
        let mut tables = Vec::with_capacity(blocks.len());
        for (key, block) in blocks {
            let name: RateName = key.parse()?;
            let (knots, values) = block.points.iter().map(|p| (p[0], p[1])).unzip();
            tables.push(RateTable::new(name, knots, values)?);
        }
        Self::new(tables)
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            s.push_str(&format!("[{}]\npoints = [\n", t.name));
            for (k, v) in t.knots.iter().zip(&t.values) {
                s.push_str(&format!("    [{k:?}, {v:?}],\n"));
            }
            s.push_str("]\n\n");
        }
        s
    }

    pub fn table(&self, name: RateName) -> &RateTable {
        &self.tables[name as usize]
    }

    pub fn with_table(mut self, table: RateTable) -> Self {
        let i = table.name as usize;
        self.tables[i] = table;
        self
    }

    /// Same value at every temperature for every rate.
    pub fn constant(rates: &DailyRates) -> Self {
        let v = [
            rates.egg_to_larva,
            rates.larva_to_pupa,
            rates.pupa_to_adult,
            rates.gonotrophic,
            rates.egg_mortality,
            rates.larva_mortality,
            rates.pupa_mortality,
            rates.adult_mortality,
            rates.extrinsic_incubation,
            rates.oviposition,
        ];
        let tables = RateName::ALL
            .iter()
            .zip(v)
            .map(|(n, x)| RateTable::constant(*n, x).expect("constant rates must be >= 0"))
            .collect();
        Self { tables }
    }

    pub fn at(&self, t: f64) -> DailyRates {
        let r = |n: RateName| self.tables[n as usize].rate_at(t);
        DailyRates {
            egg_to_larva: r(RateName::EggToLarva),
            larva_to_pupa: r(RateName::LarvaToPupa),
            pupa_to_adult: r(RateName::PupaToAdult),
            gonotrophic: r(RateName::Gonotrophic),
            egg_mortality: r(RateName::EggMortality),
            larva_mortality: r(RateName::LarvaMortality),
            pupa_mortality: r(RateName::PupaMortality),
            adult_mortality: r(RateName::AdultMortality),
            extrinsic_incubation: r(RateName::ExtrinsicIncubation),
            oviposition: r(RateName::Oviposition),
        }
    }
}

/// `int_u^t rate(T(tau)) dtau` under daily step forcing, in days since the
/// series start. Exact for piecewise-constant temperature.
pub fn development_extent(
    table: &RateTable,
    climate: &ClimateSeries,
    u: f64,
    t: f64,
) -> Result<f64> {
    if !(u.is_finite() && t.is_finite()) {
        return Err(Error::invalid("development bounds must be finite"));
    }
    if u > t {
        return Err(Error::invalid(format!(
            "lower bound {u} exceeds upper bound {t}"
        )));
    }
    let span = climate.len() as f64;
    if u < 0.0 || t > span {
        return Err(Error::invalid(format!(
            "[{u}, {t}] outside the series span [0, {span}]"
        )));
    }
    let mut total = 0.0;
    let mut a = u;
    while a < t {
        let day = a.floor();
        let b = (day + 1.0).min(t);
        total += (b - a) * table.rate_at(climate.tavg[day as usize]);
        a = b;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Moving averages

/// Trailing mean over the last `window` samples; the first samples average
/// over what is available.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::invalid("moving-average window must be >= 1"));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let n = (i + 1).min(window);
        // Recompute exactly every so often to keep the running sum from drifting.
        if i % 4096 == 4095 {
            sum = series[i + 1 - n..=i].iter().sum();
        }
        out.push(sum / n as f64);
    }
    Ok(out)
}

/// `m_i = (c_{i-1} + c_i + c_{i+1}) / 3`, averaging the available neighbours
/// at the ends.
pub fn centered_moving_average3(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Carrying capacity

/// Carrying capacity per human as an inverse-Gaussian law whose mean and shape
/// are piecewise functions of precipitation (m/day), continuous at `p0`.
///
/// Below `p0` both are quadratics. Above it the mean decays exponentially and
/// the shape stays quadratic. The high-branch offsets are fixed by continuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub p0: f64,
    /// Upper end of the precipitation range the model is valid on.
    pub p_max: f64,
}

impl CapacityModel {
    pub fn new(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.a0,
            self.a1,
            self.a2,
            self.alpha1,
            self.alpha2,
            self.b0,
            self.b1,
            self.b2,
            self.beta1,
            self.beta2,
            self.p0,
            self.p_max,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelInvalid("non-finite capacity parameter".into()));
        }
        if self.p0 < 0.0 || self.p_max <= 0.0 {
            return Err(Error::ModelInvalid("need p0 >= 0 and p_max > 0".into()));
        }
        if !self.positive_on_range() {
            return Err(Error::ModelInvalid(format!(
                "mu(p) or lambda(p) not positive on [0, {}]",
                self.p_max
            )));
        }
        Ok(())
    }

    pub(crate) fn positive_on_range(&self) -> bool {
        const N: usize = 400;
        let top = self.p_max.max(self.p0);
        (0..=N)
            .map(|i| top * i as f64 / N as f64)
            .chain([self.p0])
            .all(|p| self.mu(p) > 0.0 && self.lambda(p) > 0.0)
    }

    fn mu_low(&self, p: f64) -> f64 {
        self.a0 + self.a1 * p + self.a2 * p * p
    }

    fn lambda_low(&self, p: f64) -> f64 {
        self.b0 + self.b1 * p + self.b2 * p * p
    }

    /// High-branch mean offset implied by continuity at `p0`.
    pub fn alpha0(&self) -> f64 {
        self.mu_low(self.p0) - self.alpha2 * (-self.alpha1 * self.p0).exp()
    }

    /// High-branch shape offset implied by continuity at `p0`.
    pub fn beta0(&self) -> f64 {
        self.lambda_low(self.p0) - self.beta1 * self.p0 - self.beta2 * self.p0 * self.p0
    }

    pub fn mu(&self, p: f64) -> f64 {
        if p < self.p0 {
            self.mu_low(p)
        } else {
            self.alpha0() + self.alpha2 * (-self.alpha1 * p).exp()
        }
    }

    pub fn lambda(&self, p: f64) -> f64 {
        if p < self.p0 {
            self.lambda_low(p)
        } else {
            self.beta0() + self.beta1 * p + self.beta2 * p * p
        }
    }

    /// Expected carrying capacity per human at precipitation `p`.
    pub fn capacity_mean(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::invalid(format!(
                "precipitation {p} must be finite and >= 0"
            )));
        }
        Ok(self.mu(p))
    }

    /// The shipped illustrative model.
    pub fn default_model() -> Self {
        toml::from_str::<CapacityModel>(DEFAULT_CAPACITY_TOML)
            .expect("shipped capacity model parses")
            .new()
            .expect("shipped capacity model is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CapacityModel =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        m.new()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }
}

/// Inverse-Gaussian log-density `log f(c | mu, lambda)`.
pub fn inverse_gaussian_ln_pdf(c: f64, mu: f64, lambda: f64) -> f64 {
    if c <= 0.0 || mu <= 0.0 || lambda <= 0.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (lambda / (2.0 * std::f64::consts::PI * c * c * c)).ln()
        - lambda * (c - mu) * (c - mu) / (2.0 * mu * mu * c)
}
