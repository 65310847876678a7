//! Per-cell risk scoring over a gridded climate and daily raster output.
//!
//! Each cell is independent: a life-cycle run over cyclic spin-up plus the
//! cell's climate, with capacity from trailing two-week precipitation. Daily
//! R0 uses the simulated adult abundance. Trailing 30-day means of R0 and of
//! adults per human feed the risk model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forcing::{
    check_day, check_header, csv_reader, moving_average, parse_date, parse_f64, CapacityModel,
    ClimateSeries, RateSet,
};
use crate::lifecycle::{
    simulate_with, with_spinup, CapacitySource, LifecycleParams, LifecycleState,
};
use crate::risk::{band, RiskBand, RiskModel};
use crate::transmission::{reproduction_number, EpiParams};

pub const GRID_HEADER: [&str; 5] = ["lat", "lon", "date", "tavg_c", "precip_m"];
pub const RASTER_HEADER: [&str; 5] = ["lat", "lon", "risk", "r0_ma", "vf_ma"];
/// Grid spacing in degrees.
pub const CELL_DEGREES: f64 = 0.25;
/// Window of the trailing means of R0 and abundance (days).
pub const FEATURE_WINDOW_DAYS: usize = 30;
pub const INITIAL_EGGS: f64 = 10.0;
const PROGRESS_EVERY: usize = 1000;

/// Grid coordinates in quarter degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub lat_q: i32,
    pub lon_q: i32,
}

impl CellIndex {
    pub fn from_degrees(lat: f64, lon: f64) -> std::result::Result<Self, String> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=360.0).contains(&lon) {
            return Err(format!("coordinates ({lat}, {lon}) out of range"));
        }
        let q = |v: f64| {
            let x = v / CELL_DEGREES;
            if (x - x.round()).abs() > 1e-9 {
                Err(format!("{v} is not a multiple of {CELL_DEGREES} degrees"))
            } else {
                Ok(x.round() as i32)
            }
        };
        Ok(Self {
            lat_q: q(lat)?,
            lon_q: q(lon)?,
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat_q as f64 * CELL_DEGREES
    }

    pub fn lon(&self) -> f64 {
        self.lon_q as f64 * CELL_DEGREES
    }
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub index: CellIndex,
    pub climate: ClimateSeries,
}

/// Cells sorted by `(lat, lon)`, all covering the same dates.
#[derive(Debug, Clone)]
pub struct ClimateGrid {
    cells: Vec<GridCell>,
}

impl ClimateGrid {
    pub fn new(mut cells: Vec<GridCell>) -> Result<Self> {
        let first = cells
            .first()
            .ok_or_else(|| Error::invalid("grid has no cells"))?;
        let (start, len) = (first.climate.start_date(), first.climate.len());
        for c in &cells {
            if c.climate.start_date() != start || c.climate.len() != len {
                return Err(Error::Format(format!(
                    "cell ({}, {}) covers {} days from {}, expected {len} from {start}",
                    c.index.lat(),
                    c.index.lon(),
                    c.climate.len(),
                    c.climate.start_date()
                )));
            }
        }
        cells.sort_by_key(|c| c.index);
        if cells.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::Format("duplicate grid cell".into()));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.cells[0].climate.start_date()
    }

    pub fn days(&self) -> usize {
        self.cells[0].climate.len()
    }

    pub fn bounds(&self) -> (CellIndex, CellIndex) {
        bounds(self.cells.iter().map(|c| c.index))
    }

    /// `lat,lon,date,tavg_c,precip_m`; rows grouped by cell, dates ascending.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", GRID_HEADER.join(",")).map_err(io)?;
        for c in &self.cells {
            let (lat, lon) = (c.index.lat(), c.index.lon());
            for d in 0..c.climate.len() {
                writeln!(
                    w,
                    "{lat},{lon},{},{},{}",
                    c.climate.date(d),
                    c.climate.tavg()[d],
                    c.climate.precip()[d]
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

fn bounds(idx: impl Iterator<Item = CellIndex>) -> (CellIndex, CellIndex) {
    let mut lo = CellIndex {
        lat_q: i32::MAX,
        lon_q: i32::MAX,
    };
    let mut hi = CellIndex {
        lat_q: i32::MIN,
        lon_q: i32::MIN,
    };
    for i in idx {
        lo.lat_q = lo.lat_q.min(i.lat_q);
        lo.lon_q = lo.lon_q.min(i.lon_q);
        hi.lat_q = hi.lat_q.max(i.lat_q);
        hi.lon_q = hi.lon_q.max(i.lon_q);
    }
    (lo, hi)
}

/// Reads a gridded climate CSV. Rows of a cell may be interleaved with other
/// cells but must be in consecutive date order.
pub fn load_grid(path: &Path) -> Result<ClimateGrid> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &GRID_HEADER)?;
    let mut cells: BTreeMap<CellIndex, (NaiveDate, NaiveDate, Vec<f64>, Vec<f64>)> =
        BTreeMap::new();
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
        if rec.len() != 5 {
            return Err(perr(format!("expected 5 fields, found {}", rec.len())));
        }
        let lat = parse_f64(&rec[0], "latitude").map_err(perr)?;
        let lon = parse_f64(&rec[1], "longitude").map_err(perr)?;
        let idx = CellIndex::from_degrees(lat, lon).map_err(perr)?;
        let date = parse_date(&rec[2]).map_err(perr)?;
        let t = parse_f64(&rec[3], "temperature").map_err(perr)?;
        let p = parse_f64(&rec[4], "precipitation").map_err(perr)?;
        check_day(t, p).map_err(perr)?;
        match cells.get_mut(&idx) {
            None => {
                cells.insert(idx, (date, date, vec![t], vec![p]));
            }
            Some((_, last, tv, pv)) => {
                if date != *last + chrono::Days::new(1) {
                    return Err(Error::Format(format!(
                        "{}: line {line}: cell ({lat}, {lon}) date {date} does not follow {last}",
                        path.display()
                    )));
                }
                *last = date;
                tv.push(t);
                pv.push(p);
            }
        }
    }
    let cells = cells
        .into_iter()
        .map(|(index, (start, _, t, p))| {
            Ok(GridCell {
                index,
                climate: ClimateSeries::new(start, t, p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    ClimateGrid::new(cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub j: usize,
    pub rates: RateSet,
    pub capacity: CapacityModel,
    pub epi: EpiParams,
    pub risk: RiskModel,
    pub burn_in_days: usize,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::invalid("J must be >= 1"));
        }
        self.capacity.validate()?;
        self.epi.validate(self.j)?;
        self.risk.validate()
    }
}

/// Daily features and risk for one cell over its own climate dates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSeries {
    pub r0_ma: Vec<f64>,
    pub vf_ma: Vec<f64>,
    pub risk: Vec<f64>,
    /// No day had positive development rates in every stage.
    pub nonviable: bool,
}

impl CellSeries {
    fn nonviable(days: usize) -> Self {
        Self {
            r0_ma: vec![0.0; days],
            vf_ma: vec![0.0; days],
            risk: vec![0.0; days],
            nonviable: true,
        }
    }
}

/// Risk series for one cell. Day `d` uses the state at the start of day `d`
/// and that day's temperature; the trailing means include spin-up days.
pub fn run_cell(climate: &ClimateSeries, cfg: &PipelineConfig) -> Result<CellSeries> {
    let days = climate.len();
    if days == 0 {
        return Err(Error::invalid("empty climate series"));
    }
    if !climate
        .tavg()
        .iter()
        .any(|t| cfg.rates.at(*t).development_all_positive())
    {
        return Ok(CellSeries::nonviable(days));
    }
    let params = LifecycleParams::new(
        cfg.j,
        cfg.rates.clone(),
        CapacitySource::Precipitation {
            model: cfg.capacity,
            per_human_scale: cfg.epi.n_humans,
        },
    )?;
    let spun = with_spinup(climate, cfg.burn_in_days);
    let total = spun.len();
    let mut r0 = Vec::with_capacity(total);
    let mut vf = Vec::with_capacity(total);
    let mut failure = None;
    simulate_with(
        &params,
        &spun,
        &LifecycleState::with_eggs(cfg.j, INITIAL_EGGS),
        total - 1,
        |d, s| {
            if failure.is_some() {
                return;
            }
            let adults = s.totals().adults;
            let rates = cfg.rates.at(spun.tavg()[d]);
            match reproduction_number(adults, &cfg.epi, &rates) {
                Ok(r) => r0.push(r),
                Err(e) => {
                    failure = Some(e);
                    r0.push(0.0);
                }
            }
            vf.push(adults / cfg.epi.n_humans);
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    // Running sums can leave round-off negatives where the inputs are zero.
    let trailing = |v: &[f64]| -> Result<Vec<f64>> {
        let mut m = moving_average(v, FEATURE_WINDOW_DAYS)?.split_off(cfg.burn_in_days);
        m.iter_mut().for_each(|x| *x = x.max(0.0));
        Ok(m)
    };
    let r0_ma = trailing(&r0)?;
    let vf_ma = trailing(&vf)?;
    let risk = r0_ma
        .iter()
        .zip(&vf_ma)
        .map(|(r, v)| cfg.risk.predict(*r, *v))
        .collect();
    Ok(CellSeries {
        r0_ma,
        vf_ma,
        risk,
        nonviable: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterCell {
    pub index: CellIndex,
    pub risk: f64,
    pub r0_ma: f64,
    pub vf_ma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRaster {
    pub date: NaiveDate,
    pub cells: Vec<RasterCell>,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub index: CellIndex,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct GridRun {
    pub rasters: Vec<RiskRaster>,
    /// Cells whose run failed; they appear in the rasters with risk 0.
    pub failures: Vec<CellFailure>,
    pub nonviable: Vec<CellIndex>,
}

/// Runs every cell on a pool of `threads` workers. Output order follows the
/// grid, so results do not depend on scheduling.
pub fn run_grid(grid: &ClimateGrid, cfg: &PipelineConfig, threads: usize) -> Result<GridRun> {
    cfg.validate()?;
    if threads == 0 {
        return Err(Error::invalid("threads must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start thread pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let n = grid.len();
    let results: Vec<Result<CellSeries>> = pool.install(|| {
        grid.cells
            .par_iter()
            .map(|c| {
                let r = run_cell(&c.climate, cfg);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if k % PROGRESS_EVERY == 0 {
                    log::info!("{k}/{n} cells done");
                }
                r
            })
            .collect()
    });
    let days = grid.days();
    let mut failures = Vec::new();
    let mut nonviable = Vec::new();
    let mut series = Vec::with_capacity(n);
    for (c, r) in grid.cells.iter().zip(results) {
        match r {
            Ok(s) => {
                if s.nonviable {
                    nonviable.push(c.index);
                }
                series.push(s);
            }
            Err(e) => {
                failures.push(CellFailure {
                    index: c.index,
                    error: e.to_string(),
                });
                series.push(CellSeries {
                    nonviable: false,
                    ..CellSeries::nonviable(days)
                });
            }
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {n} cells failed", failures.len());
    }
    let rasters = (0..days)
        .map(|d| RiskRaster {
            date: grid.start_date() + chrono::Days::new(d as u64),
            cells: grid
                .cells
                .iter()
                .zip(&series)
                .map(|(c, s)| RasterCell {
                    index: c.index,
                    risk: s.risk[d],
                    r0_ma: s.r0_ma[d],
                    vf_ma: s.vf_ma[d],
                })
                .collect(),
        })
        .collect();
    Ok(GridRun {
        rasters,
        failures,
        nonviable,
    })
}

pub fn band_color(risk: f64) -> [u8; 3] {
    match band(risk) {
        RiskBand::Low => [0, 0, 255],
        RiskBand::Indeterminate => [128, 128, 128],
        RiskBand::High => [255, 0, 0],
    }
}

const NO_CELL: [u8; 3] = [255, 255, 255];

impl RiskRaster {
    pub fn csv_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("risk_{}.csv", self.date))
    }

    pub fn ppm_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("risk_{}.ppm", self.date))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", RASTER_HEADER.join(",")).map_err(io)?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.index.lat(),
                c.index.lon(),
                c.risk,
                c.r0_ma,
                c.vf_ma
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Binary PPM with one pixel per grid step over the bounding box, north
    /// at the top; pixels without a cell are white.
    pub fn ppm_bytes(&self) -> Vec<u8> {
        if self.cells.is_empty() {
            return b"P6\n1 1\n255\n\xff\xff\xff".to_vec();
        }
        let (lo, hi) = bounds(self.cells.iter().map(|c| c.index));
        let width = (hi.lon_q - lo.lon_q + 1) as usize;
        let height = (hi.lat_q - lo.lat_q + 1) as usize;
        let mut px = vec![NO_CELL; width * height];
        for c in &self.cells {
            let row = (hi.lat_q - c.index.lat_q) as usize;
            let col = (c.index.lon_q - lo.lon_q) as usize;
            px[row * width + col] = band_color(c.risk);
        }
        let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
        out.extend(px.iter().flatten());
        out
    }

    /// Writes `risk_YYYY-MM-DD.csv` and `risk_YYYY-MM-DD.ppm` into `dir`.
    pub fn render(&self, dir: &Path) -> Result<()> {
        self.write_csv(&self.csv_path(dir))?;
        let ppm = self.ppm_path(dir);
        std::fs::write(&ppm, self.ppm_bytes()).map_err(|e| Error::io(&ppm, e))
    }
}

/// Reads a raster CSV written by `RiskRaster::write_csv`.
pub fn load_raster(path: &Path, date: NaiveDate) -> Result<RiskRaster> {
    let mut rdr = csv_reader(path)?;
    check_header(&mut rdr, path, &RASTER_HEADER)?;
    let mut cells = Vec::new();
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
        if rec.len() != 5 {
            return Err(perr(format!("expected 5 fields, found {}", rec.len())));
        }
        let v = |i: usize, what: &str| parse_f64(&rec[i], what).map_err(perr);
        let index = CellIndex::from_degrees(v(0, "latitude")?, v(1, "longitude")?).map_err(perr)?;
        cells.push(RasterCell {
            index,
            risk: v(2, "risk")?,
            r0_ma: v(3, "r0_ma")?,
            vf_ma: v(4, "vf_ma")?,
        });
    }
    Ok(RiskRaster { date, cells })
}
