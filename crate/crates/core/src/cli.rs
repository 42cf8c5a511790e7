//! Command-line front end: `generate`, `featurize`, `label-emission`,
//! `train`, `predict` and `recommend`, driven by a flat key=value config.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use crate::emission::EmissionCoefficients;
use crate::error::ClvError;
use crate::features::{
    read_feature_rows, regional_demand, FeatureError, select_top_categories, write_feature_rows, BinEdges, CategorySet, FeatureRow,
    ScopeKind, SELECTED_CATEGORIES,
};
use crate::geo::{partition_city, BusRoute, GeoPoint, GridIndex};
use crate::ingest::{
    extract_all_trips, parse_dataset, BusRecord, Dataset, DatasetKind, IcCardRecord, PoiRecord, TaxiRecord, TimeWindow,
    WeatherRecord,
};
use crate::neural::checkpoint::TrainedModel;
use crate::pipeline::{
    daily_windows, featurize_records, forecast, read_forecast, recommend_from_forecast, routes_from_bus, split_dataset,
    train_both, write_forecast, DemandReport, EmissionReport, Featurizer, InputScaling, PipelineConfig, RowKinds,
    SplitFractions,
};
use crate::recommend::{write_recommendation, DemandScalar};
use crate::synthcity::{CityModel, COEFFICIENTS_FILE};

pub const FEATURES_FILE: &str = "features.csv";
pub const GRID_FEATURES_FILE: &str = "grid_features.csv";
pub const DEMAND_CHECKPOINT: &str = "demand.ckpt";
pub const EMISSION_CHECKPOINT: &str = "emission.ckpt";
pub const TRACE_FILE: &str = "train_trace.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const RECOMMENDATION_FILE: &str = "recommendation.csv";

#[derive(Debug, Parser)]
#[command(name = "clairvoyance", version, about = "Electric-bus route planning from taxi, bus, smart-card, POI and weather data")]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for generation, region sampling and training.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Number of routes to recommend.
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
    /// Length of each prediction window in hours.
    #[arg(long = "horizon-hours", global = true, value_name = "N")]
    pub horizon_hours: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic city's datasets and ground truth to data_dir.
    Generate,
    /// Route feature vectors and demand classes (features.csv).
    Featurize,
    /// Grid feature vectors and emission labels (grid_features.csv).
    LabelEmission,
    /// Train both predictors (demand.ckpt, emission.ckpt, train_trace.csv).
    Train,
    /// Forecast the latest window (forecast.csv).
    Predict,
    /// Rank routes from the forecast (recommendation.csv).
    Recommend,
}

/// POI category choice for route and grid features.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoryChoice {
    Reference,
    /// Top correlated categories on the training days.
    Auto,
    Fixed(CategorySet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub region_km: f64,
    pub edges: BinEdges,
    pub k: usize,
    pub categories: CategoryChoice,
    pub demand_scalar: DemandScalar,
    /// Also holds the study area, grid size, daily windows and horizon.
    pub city: CityModel,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            data_dir: PathBuf::from("data"),
            work_dir: PathBuf::from("work"),
            seed: 7,
            region_km: crate::geo::DEFAULT_REGION_SIDE_KM,
            edges: BinEdges::default(),
            k: 5,
            categories: CategoryChoice::Reference,
            demand_scalar: DemandScalar::Midpoint,
            city: CityModel::default(),
            pipeline: PipelineConfig::default(),
        };
        c.set_seed(7);
        c
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|s| s.trim().parse().ok()).collect()
}

impl RunConfig {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.city.seed = seed;
        self.pipeline.demand.seed = seed;
        self.pipeline.emission.seed = seed;
    }

    pub fn set_horizon(&mut self, hours: u32) {
        self.city.horizon_hours = hours;
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ClvError> {
        let mut c = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ClvError::Config(format!("config line {}: expected key = value", n + 1)))?;
            c.set(key.trim(), value.trim(), base).map_err(|m| ClvError::Config(format!("config line {} ({}): {m}", n + 1, key.trim())))?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let bad = || format!("bad value `{value}` for {key}");
        fn num<T: std::str::FromStr>(v: &str, bad: impl Fn() -> String) -> Result<T, String> {
            v.parse().map_err(|_| bad())
        }
        match key {
            "data_dir" => self.data_dir = base.join(value),
            "work_dir" => self.work_dir = base.join(value),
            "seed" => self.set_seed(num(value, bad)?),
            "bbox" => {
                let v: Vec<f64> = parse_list(value).filter(|v: &Vec<f64>| v.len() == 4).ok_or_else(bad)?;
                self.city.sw = GeoPoint::new(v[0], v[1]).map_err(|e| e.to_string())?;
                self.city.ne = GeoPoint::new(v[2], v[3]).map_err(|e| e.to_string())?;
            }
            "cell_km" => self.city.cell_km = num(value, bad)?,
            "region_km" => self.region_km = num(value, bad)?,
            "bin_edges" => self.edges = BinEdges::new(parse_list(value).ok_or_else(bad)?).map_err(|e| e.to_string())?,
            "k" => self.k = num(value, bad)?,
            "horizon_hours" => self.set_horizon(num(value, bad)?),
            "window_hours" => self.city.window_hours = parse_list(value).ok_or_else(bad)?,
            "categories" => {
                self.categories = match value {
                    "reference" => CategoryChoice::Reference,
                    "auto" => CategoryChoice::Auto,
                    list => {
                        let v: Vec<u8> = parse_list(list).ok_or_else(bad)?;
                        let arr: [u8; SELECTED_CATEGORIES] = v.try_into().map_err(|_| bad())?;
                        CategoryChoice::Fixed(CategorySet::new(arr).map_err(|e| e.to_string())?)
                    }
                }
            }
            "demand_scalar" => self.demand_scalar = DemandScalar::parse(value).ok_or_else(bad)?,
            "routes" => self.city.routes = num(value, bad)?,
            "stations_per_route" => self.city.stations_per_route = num(value, bad)?,
            "taxis" => self.city.taxis = num(value, bad)?,
            "days" => self.city.days = num(value, bad)?,
            "start_date" => self.city.start_date = NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| bad())?,
            "gps_interval_s" => self.city.gps_interval_s = num(value, bad)?,
            "background_pois" => self.city.background_pois = num(value, bad)?,
            "demand_scale" => self.city.demand_scale = num(value, bad)?,
            "base_rate" => self.city.base_rate = num(value, bad)?,
            "learning_rate" => self.pipeline.demand.learning_rate = num(value, bad)?,
            "epochs" => self.pipeline.demand.epochs = num(value, bad)?,
            "batch_size" => {
                let b = num(value, bad)?;
                self.pipeline.demand.batch_size = b;
                self.pipeline.emission.batch_size = b;
            }
            "corruption" => self.pipeline.demand.corruption = num(value, bad)?,
            "pretrain_epochs" => self.pipeline.demand.pretrain_epochs = num(value, bad)?,
            "pretrain_learning_rate" => self.pipeline.demand.pretrain_learning_rate = num(value, bad)?,
            "pretrain" => self.pipeline.pretrain = num(value, bad)?,
            "hidden" => self.pipeline.hidden = if value.is_empty() { Vec::new() } else { parse_list(value).ok_or_else(bad)? },
            "pnn_hidden" => self.pipeline.pnn_hidden = num(value, bad)?,
            "emission_learning_rate" => self.pipeline.emission.learning_rate = num(value, bad)?,
            "emission_epochs" => self.pipeline.emission.epochs = num(value, bad)?,
            "demand_scaling" => self.pipeline.demand_scaling = InputScaling::parse(value).ok_or_else(bad)?,
            "emission_scaling" => self.pipeline.emission_scaling = InputScaling::parse(value).ok_or_else(bad)?,
            "split" => {
                let v: Vec<f64> = parse_list(value).filter(|v: &Vec<f64>| v.len() == 3).ok_or_else(bad)?;
                let total: f64 = v.iter().sum();
                if !(total > 0.0 && v.iter().all(|x| *x >= 0.0)) {
                    return Err(bad());
                }
                self.pipeline.fractions = SplitFractions { train: v[0] / total, val: v[1] / total, test: v[2] / total };
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ClvError> {
        self.city.validate()?;
        let bad = |m: String| Err(ClvError::Config(m));
        if !(self.region_km > 0.0 && self.region_km.is_finite()) {
            return bad(format!("region_km {} must be positive", self.region_km));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.pipeline.pnn_hidden == 0 || self.pipeline.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.pipeline.demand.validate()?;
        self.pipeline.emission.validate()?;
        self.pipeline.fractions.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridIndex, ClvError> {
        Ok(partition_city(self.city.sw, self.city.ne, self.city.cell_km)?)
    }

    fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig { classes: self.edges.class_count(), ..self.pipeline.clone() }
    }
}

/// Config from `--config` (or defaults) with command-line overrides applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig, ClvError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ClvError::io(path, e))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            RunConfig::parse(&text, &base)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    if let Some(h) = cli.horizon_hours {
        cfg.set_horizon(h);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes through a temporary sibling, then renames over `path`.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<(), ClvError>) -> Result<(), ClvError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ClvError::io(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| ClvError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        let file = w.into_inner().map_err(|e| ClvError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| ClvError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| ClvError::io(path, e))
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn open(path: &Path) -> Result<BufReader<File>, ClvError> {
    File::open(path).map(BufReader::new).map_err(|e| ClvError::io(path, e))
}

struct Inputs {
    taxi: Vec<TaxiRecord>,
    bus: Vec<BusRecord>,
    ic: Vec<IcCardRecord>,
    pois: Vec<PoiRecord>,
    weather: Vec<WeatherRecord>,
}

fn load(dir: &Path, kind: DatasetKind) -> Result<Dataset, ClvError> {
    let path = dir.join(kind.file_name());
    let ds = parse_dataset(kind, open(&path)?).map_err(|e| ClvError::ingest(&path, e))?;
    let report = ds.report();
    if report.rejected_count() > 0 {
        eprintln!("{}: {} of {} rows rejected", path.display(), report.rejected_count(), report.total_rows);
    }
    Ok(ds)
}

fn load_inputs(dir: &Path, need_taxi: bool, need_ic: bool) -> Result<Inputs, ClvError> {
    let mut inputs = Inputs { taxi: Vec::new(), bus: Vec::new(), ic: Vec::new(), pois: Vec::new(), weather: Vec::new() };
    let mut kinds = vec![DatasetKind::Bus, DatasetKind::Poi, DatasetKind::Weather];
    if need_ic {
        kinds.push(DatasetKind::Ic);
    }
    if need_taxi {
        kinds.push(DatasetKind::Taxi);
    }
    for kind in kinds {
        match load(dir, kind)? {
            Dataset::Taxi(p) => inputs.taxi = p.records,
            Dataset::Bus(p) => inputs.bus = p.records,
            Dataset::Ic(p) => inputs.ic = p.records,
            Dataset::Poi(p) => inputs.pois = p.records,
            Dataset::Weather(p) => inputs.weather = p.records,
        }
    }
    Ok(inputs)
}

fn coefficients(dir: &Path) -> Result<EmissionCoefficients, ClvError> {
    let path = dir.join(COEFFICIENTS_FILE);
    match File::open(&path) {
        Ok(f) => Ok(EmissionCoefficients::read_csv(BufReader::new(f))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(EmissionCoefficients::defaults()),
        Err(e) => Err(ClvError::io(&path, e)),
    }
}

fn routes(cfg: &RunConfig, bus: &[BusRecord]) -> Result<Vec<BusRoute>, ClvError> {
    let routes = routes_from_bus(bus, cfg.region_km, cfg.seed)?;
    if routes.is_empty() {
        return Err(ClvError::Config("bus data defines no routes".into()));
    }
    Ok(routes)
}

/// Categories ranked by correlation with trips ending in each affecting
/// region over the training days.
fn auto_categories(cfg: &RunConfig, inputs: &Inputs, routes: &[BusRoute]) -> Result<CategorySet, ClvError> {
    let dates: BTreeSet<NaiveDate> = inputs.weather.iter().map(|w| w.date).collect();
    let (train_days, _, _) = cfg.pipeline.fractions.day_counts(dates.len())?;
    let windows: Vec<TimeWindow> = dates
        .iter()
        .take(train_days.max(1))
        .flat_map(|d| daily_windows(*d, &cfg.city.window_hours, cfg.city.horizon_hours))
        .collect();
    let trips = extract_all_trips(&inputs.taxi);
    let regions: Vec<_> = routes.iter().flat_map(|r| r.regions.iter().copied()).collect();
    let demand: Vec<f64> = regions.iter().map(|reg| windows.iter().map(|w| regional_demand(&trips, reg, *w)).sum()).collect();
    Ok(select_top_categories(&inputs.pois, &regions, &demand)?)
}

fn featurizer(cfg: &RunConfig, inputs: &Inputs) -> Result<Featurizer, ClvError> {
    let routes = routes(cfg, &inputs.bus)?;
    let categories = match &cfg.categories {
        CategoryChoice::Reference => CategorySet::reference(),
        CategoryChoice::Fixed(c) => *c,
        CategoryChoice::Auto => auto_categories(cfg, inputs, &routes)?,
    };
    Ok(Featurizer::new(
        cfg.grid()?,
        routes,
        inputs.pois.clone(),
        categories,
        cfg.edges.clone(),
        coefficients(&cfg.data_dir)?,
    ))
}

fn write_rows(path: &Path, rows: &[FeatureRow]) -> Result<(), ClvError> {
    write_atomic(path, |w| Ok(write_feature_rows(rows, w)?))
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>, ClvError> {
    read_feature_rows(open(path)?).map_err(|e| ClvError::Feature(FeatureError::File(format!("{}: {e}", path.display()))))
}

pub fn generate(cfg: &RunConfig) -> Result<(), ClvError> {
    let dir = &cfg.data_dir;
    let staging = dir.join(".generate.tmp");
    let _ = std::fs::remove_dir_all(&staging);
    let summary = cfg.city.generate_to_dir(&staging)?;
    for entry in std::fs::read_dir(&staging).map_err(|e| ClvError::io(&staging, e))? {
        let entry = entry.map_err(|e| ClvError::io(&staging, e))?;
        let target = dir.join(entry.file_name());
        std::fs::rename(entry.path(), &target).map_err(|e| ClvError::io(&target, e))?;
    }
    std::fs::remove_dir(&staging).map_err(|e| ClvError::io(&staging, e))?;
    println!(
        "generated {} taxi, {} bus, {} ic, {} poi, {} weather, {} truth rows in {}",
        summary.taxi_rows,
        summary.bus_rows,
        summary.ic_rows,
        summary.poi_rows,
        summary.weather_rows,
        summary.truth_rows,
        dir.display()
    );
    Ok(())
}

pub fn featurize(cfg: &RunConfig) -> Result<(), ClvError> {
    let inputs = load_inputs(&cfg.data_dir, true, true)?;
    let f = featurizer(cfg, &inputs)?;
    let kinds = RowKinds { route: true, grid: false };
    let (rows, _) = featurize_records(&f, &inputs.taxi, &inputs.ic, &inputs.weather, &cfg.city.window_hours, cfg.city.horizon_hours, kinds)?;
    let path = cfg.work_dir.join(FEATURES_FILE);
    write_rows(&path, &rows)?;
    println!("{} route rows ({} routes) -> {}", rows.len(), f.routes.len(), path.display());
    Ok(())
}

pub fn label_emission(cfg: &RunConfig) -> Result<(), ClvError> {
    let inputs = load_inputs(&cfg.data_dir, true, false)?;
    let f = featurizer(cfg, &inputs)?;
    let kinds = RowKinds { route: false, grid: true };
    let (_, rows) = featurize_records(&f, &inputs.taxi, &[], &inputs.weather, &cfg.city.window_hours, cfg.city.horizon_hours, kinds)?;
    let path = cfg.work_dir.join(GRID_FEATURES_FILE);
    write_rows(&path, &rows)?;
    println!("{} grid rows ({} cells) -> {}", rows.len(), f.grid.cell_count(), path.display());
    Ok(())
}

fn write_trace<W: Write>(w: &mut W, d: &DemandReport, e: &EmissionReport) -> std::io::Result<()> {
    writeln!(w, "model,stage,layer,epoch,train_loss,val_loss,val_accuracy")?;
    for (layer, trace) in d.pretrain.iter().enumerate() {
        for (i, loss) in trace.iter().enumerate() {
            writeln!(w, "demand,pretrain,{layer},{},{loss},,", i + 1)?;
        }
    }
    let f = &d.fine_tune;
    for (i, loss) in f.train_nll.iter().enumerate() {
        let v = f.val_nll.get(i).map_or(String::new(), f64::to_string);
        let a = f.val_accuracy.get(i).map_or(String::new(), f64::to_string);
        writeln!(w, "demand,finetune,,{},{loss},{v},{a}", i + 1)?;
    }
    for (i, loss) in e.training.train_mse.iter().enumerate() {
        let v = e.training.val_rmse.get(i).map_or(String::new(), f64::to_string);
        writeln!(w, "emission,train,,{},{loss},{v},", i + 1)?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), ClvError> {
    let pc = cfg.pipeline_config();
    let demand = split_dataset(read_rows(&cfg.work_dir.join(FEATURES_FILE))?, pc.fractions)?;
    let emission = split_dataset(read_rows(&cfg.work_dir.join(GRID_FEATURES_FILE))?, pc.fractions)?;
    if demand.kind != ScopeKind::Route || emission.kind != ScopeKind::Grid {
        return Err(ClvError::Config("features.csv must hold route rows and grid_features.csv grid rows".into()));
    }
    let ((dm, dr), (em, er)) = train_both(&demand, &emission, &pc)?;
    for (name, model) in [(DEMAND_CHECKPOINT, &dm), (EMISSION_CHECKPOINT, &em)] {
        let path = cfg.work_dir.join(name);
        write_atomic(&path, |w| model.write_to(w).map_err(|e| ClvError::io(&path, e)))?;
    }
    let trace = cfg.work_dir.join(TRACE_FILE);
    write_atomic(&trace, |w| write_trace(w, &dr, &er).map_err(|e| ClvError::io(&trace, e)))?;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "demand: best epoch {}, val nll {}, val accuracy {}, test accuracy {}",
        dr.fine_tune.best_epoch,
        opt(dr.fine_tune.best_val_nll()),
        opt(dr.fine_tune.best_val_accuracy()),
        opt(dr.test_accuracy)
    );
    println!(
        "emission: best epoch {}, val rmse {}, test rmse {}",
        er.training.best_epoch,
        opt(er.training.val_rmse.get(er.training.best_epoch.wrapping_sub(1)).copied()),
        opt(er.test_rmse)
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<TrainedModel, ClvError> {
    TrainedModel::load(path).map_err(|e| ClvError::io(path, e))?.map_err(ClvError::from)
}

pub fn predict(cfg: &RunConfig) -> Result<(), ClvError> {
    let demand = load_model(&cfg.work_dir.join(DEMAND_CHECKPOINT))?;
    let emission = load_model(&cfg.work_dir.join(EMISSION_CHECKPOINT))?;
    let route_rows = read_rows(&cfg.work_dir.join(FEATURES_FILE))?;
    let grid_rows = read_rows(&cfg.work_dir.join(GRID_FEATURES_FILE))?;
    let grid_windows: BTreeSet<TimeWindow> = grid_rows.iter().map(|r| r.window).collect();
    let window = route_rows
        .iter()
        .map(|r| r.window)
        .filter(|w| grid_windows.contains(w))
        .max_by_key(|w| (w.start, w.end))
        .ok_or_else(|| ClvError::Config("route and grid features share no window".into()))?;
    let bundle = forecast(&demand, &emission, &route_rows, &grid_rows, window)?;
    let path = cfg.work_dir.join(FORECAST_FILE);
    write_atomic(&path, |w| Ok(write_forecast(&bundle, w)?))?;
    println!("forecast {} routes, {} cells -> {}", bundle.routes.len(), bundle.cells.len(), path.display());
    Ok(())
}

pub fn recommend(cfg: &RunConfig) -> Result<(), ClvError> {
    let bundle = read_forecast(open(&cfg.work_dir.join(FORECAST_FILE))?)?;
    let bus = match load(&cfg.data_dir, DatasetKind::Bus)? {
        Dataset::Bus(p) => p.records,
        _ => unreachable!("bus dataset"),
    };
    let routes = routes(cfg, &bus)?;
    let rec = recommend_from_forecast(&bundle, &routes, &cfg.grid()?, &cfg.edges, cfg.demand_scalar, cfg.k)?;
    let path = cfg.work_dir.join(RECOMMENDATION_FILE);
    write_atomic(&path, |w| Ok(write_recommendation(&rec.routes, w)?))?;
    for (i, r) in rec.routes.iter().enumerate() {
        println!("{:>3} {} score {:.4} (demand {:.1}, emission {:.3} kg)", i + 1, r.route_id, r.score, r.mu, r.theta);
    }
    if rec.mu_degenerate || rec.theta_degenerate {
        eprintln!("note: a score component is constant across routes and contributes 0");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), ClvError> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Generate => generate(&cfg),
        Command::Featurize => featurize(&cfg),
        Command::LabelEmission => label_emission(&cfg),
        Command::Train => train(&cfg),
        Command::Predict => predict(&cfg),
        Command::Recommend => recommend(&cfg),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            eprintln!("config.invalid: {}", msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: "));
            return crate::error::EXIT_VALIDATION;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.report_line());
            e.exit_code()
        }
    }
}
