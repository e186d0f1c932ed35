//! Event sequences, dataset files, and z-score normalization.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where events happen: continuous coordinates in `dim` dimensions or one of
/// `locations` discrete labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    Continuous { dim: usize },
    Discrete { locations: usize },
}

impl SpaceSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpaceSpec::Continuous { dim } if !(1..=3).contains(&dim) => {
                Err(Error::invalid(format!("continuous dimension must be 1..=3, got {dim}")))
            }
            SpaceSpec::Discrete { locations } if locations < 2 => {
                Err(Error::invalid(format!("need at least 2 discrete locations, got {locations}")))
            }
            _ => Ok(()),
        }
    }

    /// Width of the encoder's spatial input: `D`, or `N` for one-hot labels.
    pub fn input_dim(&self) -> usize {
        match *self {
            SpaceSpec::Continuous { dim } => dim,
            SpaceSpec::Discrete { locations } => locations,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, SpaceSpec::Discrete { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Coords(Vec<f64>),
    Id(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(rename = "s")]
    pub location: Location,
}

impl Event {
    pub fn continuous(t: f64, coords: Vec<f64>) -> Self {
        Self {
            t,
            location: Location::Coords(coords),
        }
    }

    pub fn discrete(t: f64, id: usize) -> Self {
        Self {
            t,
            location: Location::Id(id),
        }
    }

    pub fn coords(&self) -> Option<&[f64]> {
        match &self.location {
            Location::Coords(c) => Some(c),
            Location::Id(_) => None,
        }
    }

    pub fn location_id(&self) -> Option<usize> {
        match self.location {
            Location::Id(id) => Some(id),
            Location::Coords(_) => None,
        }
    }

    fn check(&self, space: &SpaceSpec) -> std::result::Result<(), String> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(format!("time {} is not a finite nonnegative number", self.t));
        }
        match (&self.location, space) {
            (Location::Coords(c), SpaceSpec::Continuous { dim }) => {
                if c.len() != *dim {
                    return Err(format!("expected {dim} coordinates, got {}", c.len()));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err("non-finite coordinate".into());
                }
            }
            (Location::Id(id), SpaceSpec::Discrete { locations }) => {
                if id >= locations {
                    return Err(format!("location {id} outside 0..{locations}"));
                }
            }
            _ => return Err("location kind does not match the space".into()),
        }
        Ok(())
    }
}

/// Time-ordered events observed on `[window_start, window_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub id: String,
    pub window_start: f64,
    pub window_end: f64,
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn new(
        id: impl Into<String>,
        window_start: f64,
        window_end: f64,
        events: Vec<Event>,
        space: &SpaceSpec,
    ) -> Result<Self> {
        let seq = Self {
            id: id.into(),
            window_start,
            window_end,
            events,
        };
        seq.validate(space)?;
        Ok(seq)
    }

    pub fn validate(&self, space: &SpaceSpec) -> Result<()> {
        let fail = |msg: String| Error::Sequence {
            seq_id: self.id.clone(),
            msg,
        };
        if self.events.is_empty() {
            return Err(fail("sequence has no events".into()));
        }
        for (i, e) in self.events.iter().enumerate() {
            e.check(space).map_err(|m| fail(format!("event {i}: {m}")))?;
        }
        if let Some(i) = self.events.windows(2).position(|w| w[1].t < w[0].t) {
            return Err(fail(format!(
                "times decrease at event {}: {} after {}",
                i + 1,
                self.events[i + 1].t,
                self.events[i].t
            )));
        }
        let (first, last) = (self.events[0].t, self.events[self.events.len() - 1].t);
        if !(self.window_start <= first && last <= self.window_end) {
            return Err(fail(format!(
                "events [{first}, {last}] fall outside window [{}, {}]",
                self.window_start, self.window_end
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Inter-event times; the first is measured from `window_start`.
    pub fn intervals(&self) -> Vec<f64> {
        let mut prev = self.window_start;
        self.events
            .iter()
            .map(|e| {
                let tau = e.t - prev;
                prev = e.t;
                tau
            })
            .collect()
    }
}

/// Per-feature location and scale used to standardize diffusion targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub time_interval_mean: f64,
    pub time_interval_std: f64,
    /// Empty for discrete space.
    pub space_mean: Vec<f64>,
    pub space_std: Vec<f64>,
}

impl NormalizationStats {
    /// Population mean and standard deviation over every event of `sequences`.
    /// A zero spread is replaced by one.
    pub fn fit(sequences: &[EventSequence], space: &SpaceSpec) -> Result<Self> {
        let taus: Vec<f64> = sequences.iter().flat_map(|s| s.intervals()).collect();
        if taus.is_empty() {
            return Err(Error::invalid("cannot fit normalization on zero events"));
        }
        let (time_interval_mean, time_interval_std) = mean_std(&taus, "time interval");
        let (mut space_mean, mut space_std) = (Vec::new(), Vec::new());
        if let SpaceSpec::Continuous { dim } = *space {
            for d in 0..dim {
                let column: Vec<f64> = sequences
                    .iter()
                    .flat_map(|s| s.events.iter().filter_map(move |e| e.coords().map(|c| c[d])))
                    .collect();
                let (m, s) = mean_std(&column, "coordinate");
                space_mean.push(m);
                space_std.push(s);
            }
        }
        Ok(Self {
            time_interval_mean,
            time_interval_std,
            space_mean,
            space_std,
        })
    }

    pub fn normalize_interval(&self, tau: f64) -> f64 {
        (tau - self.time_interval_mean) / self.time_interval_std
    }

    pub fn denormalize_interval(&self, z: f64) -> f64 {
        z * self.time_interval_std + self.time_interval_mean
    }

    pub fn normalize_coords(&self, coords: &[f64]) -> Vec<f64> {
        coords
            .iter()
            .zip(self.space_mean.iter().zip(&self.space_std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize_coords(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.space_mean.iter().zip(&self.space_std))
            .map(|(&x, (&m, &s))| x * s + m)
            .collect()
    }

    /// Log-Jacobian turning a standardized temporal density into original units.
    pub fn time_log_scale(&self) -> f64 {
        self.time_interval_std.ln()
    }

    /// Summed log-Jacobian of the spatial standardization (zero when discrete).
    pub fn space_log_scale(&self) -> f64 {
        self.space_std.iter().map(|s| s.ln()).sum()
    }

    /// Scale applied to absolute times before positional encoding.
    pub fn time_scale(&self) -> f64 {
        self.time_interval_std
    }
}

fn mean_std(values: &[f64], what: &str) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 0.0 && std.is_finite() {
        (mean, std)
    } else {
        log::warn!("{what} feature is constant; using unit scale");
        (mean, 1.0)
    }
}

/// Train/validation/test sequences sharing one space, with normalization
/// statistics computed from the training split alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub space: SpaceSpec,
    pub train: Vec<EventSequence>,
    pub val: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
    pub stats: NormalizationStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl Dataset {
    pub fn new(
        space: SpaceSpec,
        train: Vec<EventSequence>,
        val: Vec<EventSequence>,
        test: Vec<EventSequence>,
    ) -> Result<Self> {
        space.validate()?;
        for s in train.iter().chain(&val).chain(&test) {
            s.validate(&space)?;
        }
        let stats = NormalizationStats::fit(&train, &space)?;
        Ok(Self {
            space,
            train,
            val,
            test,
            stats,
        })
    }

    /// Splits `sequences` in order: the first `n_train` train, the next
    /// `n_val` validation, the rest test.
    pub fn from_split(space: SpaceSpec, mut sequences: Vec<EventSequence>, n_train: usize, n_val: usize) -> Result<Self> {
        if n_train + n_val > sequences.len() {
            return Err(Error::invalid(format!(
                "{n_train} train + {n_val} validation sequences requested from {}",
                sequences.len()
            )));
        }
        let test = sequences.split_off(n_train + n_val);
        let val = sequences.split_off(n_train);
        Self::new(space, sequences, val, test)
    }

    pub fn split(&self, split: Split) -> &[EventSequence] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn num_events(&self, split: Split) -> usize {
        self.split(split).iter().map(|s| s.len()).sum()
    }
}

/// On-disk dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Delimited text. `path` is either one events file (all sequences become
    /// the training split) or a directory holding `train.csv`, `val.csv` and
    /// `test.csv`. Each events file may have a companion
    /// `<stem>.windows.csv` with rows `seq_id,window_start,window_end`, and a
    /// directory may hold `space.json`.
    Csv,
    /// One JSON document with the fields of [`Dataset`] (stats optional).
    Json,
}

impl DatasetFormat {
    /// `Json` for `*.json` paths, `Csv` otherwise.
    pub fn infer(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e == "json") && path.file_name().is_some_and(|n| n != "space.json") {
            DatasetFormat::Json
        } else {
            DatasetFormat::Csv
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Json => {
            #[derive(Deserialize)]
            struct Doc {
                space: SpaceSpec,
                train: Vec<EventSequence>,
                #[serde(default)]
                val: Vec<EventSequence>,
                #[serde(default)]
                test: Vec<EventSequence>,
            }
            let doc: Doc = serde_json::from_str(&fs::read_to_string(path)?)?;
            Dataset::new(doc.space, doc.train, doc.val, doc.test)
        }
        DatasetFormat::Csv if path.is_dir() => {
            let declared: Option<SpaceSpec> = match fs::read_to_string(path.join("space.json")) {
                Ok(text) => Some(serde_json::from_str(&text)?),
                Err(_) => None,
            };
            let mut raw = Vec::new();
            for split in Split::ALL {
                let file = path.join(format!("{}.csv", split.name()));
                raw.push(if file.exists() { read_events_csv(&file)? } else { RawSplit::default() });
            }
            let space = match declared {
                Some(s) => s,
                None => infer_space(&raw)?,
            };
            let mut splits = raw.into_iter().map(|r| r.into_sequences(&space));
            let train = splits.next().expect("three splits")?;
            let val = splits.next().expect("three splits")?;
            let test = splits.next().expect("three splits")?;
            Dataset::new(space, train, val, test)
        }
        DatasetFormat::Csv => {
            let raw = read_events_csv(path)?;
            let space = infer_space(std::slice::from_ref(&raw))?;
            let train = raw.into_sequences(&space)?;
            Dataset::new(space, train, Vec::new(), Vec::new())
        }
    }
}

/// Writes `dataset` in `format`. For `Csv`, `path` is a directory.
pub fn save_dataset(dataset: &Dataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Json => {
            fs::write(path, serde_json::to_string_pretty(dataset)?)?;
        }
        DatasetFormat::Csv => {
            fs::create_dir_all(path)?;
            fs::write(path.join("space.json"), serde_json::to_string_pretty(&dataset.space)?)?;
            for split in Split::ALL {
                write_events_csv(
                    &path.join(format!("{}.csv", split.name())),
                    dataset.split(split),
                    &dataset.space,
                )?;
            }
        }
    }
    Ok(())
}

fn windows_path(events: &Path) -> PathBuf {
    let stem = events.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    events.with_file_name(format!("{stem}.windows.csv"))
}

/// Writes an events file and its companion windows file.
pub fn write_events_csv(path: &Path, sequences: &[EventSequence], space: &SpaceSpec) -> Result<()> {
    let mut header = vec!["seq_id".to_string(), "t".to_string()];
    match *space {
        SpaceSpec::Continuous { dim } => header.extend((1..=dim).map(|d| format!("s_{d}"))),
        SpaceSpec::Discrete { .. } => header.push("loc_id".into()),
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(&header).map_err(csv_io)?;
    for seq in sequences {
        for e in &seq.events {
            let mut row = vec![seq.id.clone(), e.t.to_string()];
            match &e.location {
                Location::Coords(c) => row.extend(c.iter().map(|v| v.to_string())),
                Location::Id(id) => row.push(id.to_string()),
            }
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(windows_path(path)).map_err(csv_io)?;
    w.write_record(["seq_id", "window_start", "window_end"]).map_err(csv_io)?;
    for seq in sequences {
        w.write_record([seq.id.clone(), seq.window_start.to_string(), seq.window_end.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Default)]
struct RawSplit {
    /// Number of spatial columns, `None` for `loc_id`.
    coord_cols: Option<Option<usize>>,
    max_id: Option<usize>,
    groups: Vec<(String, Vec<Event>)>,
    windows: HashMap<String, (f64, f64)>,
}

impl RawSplit {
    fn into_sequences(self, space: &SpaceSpec) -> Result<Vec<EventSequence>> {
        let mut out = Vec::with_capacity(self.groups.len());
        for (id, events) in self.groups {
            let (start, end) = self
                .windows
                .get(&id)
                .copied()
                .unwrap_or_else(|| (0.0, events.last().map_or(0.0, |e| e.t)));
            out.push(EventSequence::new(id, start, end, events, space)?);
        }
        Ok(out)
    }
}

fn infer_space(raw: &[RawSplit]) -> Result<SpaceSpec> {
    let mut kind = None;
    for r in raw.iter().filter(|r| r.coord_cols.is_some()) {
        if kind.is_some() && kind != r.coord_cols {
            return Err(Error::invalid("splits disagree on the spatial columns"));
        }
        kind = r.coord_cols;
    }
    let space = match kind {
        Some(Some(dim)) => SpaceSpec::Continuous { dim },
        Some(None) => {
            let max = raw.iter().filter_map(|r| r.max_id).max().unwrap_or(0);
            SpaceSpec::Discrete {
                locations: (max + 1).max(2),
            }
        }
        None => return Err(Error::invalid("dataset has no events files")),
    };
    space.validate()?;
    Ok(space)
}

fn read_events_csv(path: &Path) -> Result<RawSplit> {
    let display = path.display().to_string();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_io)?;
    let header: Vec<String> = reader.headers().map_err(csv_io)?.iter().map(str::to_owned).collect();
    if header.len() < 3 || header[0] != "seq_id" || header[1] != "t" {
        return Err(parse_err(1, format!("expected header seq_id,t,<s_1..s_D | loc_id>, got {header:?}")));
    }
    let discrete = header.len() == 3 && header[2] == "loc_id";
    let dim = header.len() - 2;
    let mut raw = RawSplit {
        coord_cols: Some(if discrete { None } else { Some(dim) }),
        ..Default::default()
    };
    let mut seen = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(i + 2, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("field {} ({:?}) is not a number", header[j], &rec[j])))
        };
        let t = num(1)?;
        let event = if discrete {
            let id = rec[2]
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("loc_id {:?} is not a nonnegative integer", &rec[2])))?;
            raw.max_id = Some(raw.max_id.map_or(id, |m: usize| m.max(id)));
            Event::discrete(t, id)
        } else {
            Event::continuous(t, (2..header.len()).map(num).collect::<Result<_>>()?)
        };
        let id = rec[0].to_string();
        match raw.groups.last_mut() {
            Some((last, events)) if *last == id => events.push(event),
            _ => {
                if seen.insert(id.clone(), ()).is_some() {
                    return Err(parse_err(line, format!("rows of sequence {id} are not contiguous")));
                }
                raw.groups.push((id, vec![event]));
            }
        }
    }
    let wpath = windows_path(path);
    if wpath.exists() {
        let wdisplay = wpath.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(&wpath)
            .map_err(csv_io)?;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_io)?;
            let line = i + 2;
            let bad = |msg: String| Error::Parse {
                path: wdisplay.clone(),
                line,
                msg,
            };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", rec.len())));
            }
            let start = rec[1].parse::<f64>().map_err(|_| bad("bad window_start".into()))?;
            let end = rec[2].parse::<f64>().map_err(|_| bad("bad window_end".into()))?;
            raw.windows.insert(rec[0].to_string(), (start, end));
        }
    }
    Ok(raw)
}
