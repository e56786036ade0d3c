//! C-MAPSS loading, sensor selection, normalization and windowing.
//!
//! Raw files have one row per cycle with 26 whitespace-separated fields:
//! unit, cycle, three operational settings and 21 sensors. RUL files hold
//! one integer per line, one line per test unit.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hpinn_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Labels are truncated at this many cycles.
pub const RUL_CAP: f64 = 125.0;

pub const RAW_FIELDS: usize = 26;
pub const RAW_SENSORS: usize = 21;

/// Standard C-MAPSS sensor names, in file order.
pub const SENSOR_NAMES: [&str; RAW_SENSORS] = [
    "T2", "T24", "T30", "T50", "P2", "P15", "P30", "Nf", "Nc", "epr", "Ps30", "phi", "NRf", "NRc", "BPR", "farB",
    "htBleed", "Nf_dmd", "PCNfR_dmd", "W31", "W32",
];

/// 1-based indices of the sensors that stay constant: T2, P2, P15, epr, farB,
/// Nf_dmd and PCNfR_dmd.
pub const DROPPED_SENSORS: [usize; 7] = [1, 5, 6, 10, 16, 18, 19];

pub const KEPT_SENSORS: usize = RAW_SENSORS - DROPPED_SENSORS.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    FD001,
    FD002,
    FD003,
    FD004,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::FD001, Subset::FD002, Subset::FD003, Subset::FD004];

    pub fn name(self) -> &'static str {
        match self {
            Subset::FD001 => "FD001",
            Subset::FD002 => "FD002",
            Subset::FD003 => "FD003",
            Subset::FD004 => "FD004",
        }
    }

    /// Sliding-window length: 40 for FD001, 60 for the rest.
    pub fn window_len(self) -> usize {
        match self {
            Subset::FD001 => 40,
            _ => 60,
        }
    }

    /// `(training, testing)` trajectory counts of the published dataset.
    pub fn unit_counts(self) -> (usize, usize) {
        match self {
            Subset::FD001 => (100, 100),
            Subset::FD002 => (260, 259),
            Subset::FD003 => (100, 100),
            Subset::FD004 => (248, 249),
        }
    }

    pub fn file_names(self) -> [String; 3] {
        let n = self.name();
        [format!("train_{n}.txt"), format!("test_{n}.txt"), format!("RUL_{n}.txt")]
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CoreError::Validation(format!("unknown subset {s:?} (expected FD001..FD004)")))
    }
}

/// One engine's history.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitSeries {
    pub unit: u32,
    /// Contiguous `1..=L`.
    pub cycles: Vec<u32>,
    pub settings: Vec<[f64; 3]>,
    /// `L x S`.
    pub sensors: Tensor,
}

impl UnitSeries {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.cols()
    }

    pub fn last_cycle(&self) -> u32 {
        self.cycles.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Longest training trajectory, used to scale end cycles into `t`.
    pub t_max: f64,
}

/// A `T x S` slice of normalized history ending at `end_cycle`.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub unit: u32,
    pub x: Tensor,
    pub end_cycle: u32,
    pub t_norm: f64,
    /// Capped RUL at `end_cycle`.
    pub label: f64,
}

/// Training units, test units and the per-test-unit true RUL.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSubset {
    pub train: Vec<UnitSeries>,
    pub test: Vec<UnitSeries>,
    pub test_rul: Vec<u32>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

/// Parse one 26-column file into unit series, in order of first appearance.
pub fn parse_series_file(path: &Path) -> Result<Vec<UnitSeries>> {
    parse_series_text(&read(path)?, path)
}

pub fn parse_series_text(text: &str, path: &Path) -> Result<Vec<UnitSeries>> {
    let perr = |line: usize, detail: String| CoreError::Parse { path: path.to_path_buf(), line, detail };
    let mut units: Vec<UnitSeries> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();

    fn finish(units: &mut [UnitSeries], rows: &mut Vec<f64>) {
        if let Some(u) = units.last_mut() {
            let n = u.cycles.len();
            u.sensors = Tensor::new(n, RAW_SENSORS, std::mem::take(rows));
        }
    }

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != RAW_FIELDS {
            return Err(perr(line, format!("expected {RAW_FIELDS} fields, found {}", fields.len())));
        }
        let int = |s: &str, what: &str| -> Result<u32> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as u32)
                .ok_or_else(|| perr(line, format!("{what} {s:?} is not a non-negative integer")))
        };
        let unit = int(fields[0], "unit id")?;
        let cycle = int(fields[1], "cycle")?;
        let mut nums = [0.0; RAW_FIELDS - 2];
        for (k, s) in fields[2..].iter().enumerate() {
            nums[k] = s.parse().map_err(|_| perr(line, format!("field {} ({s:?}) is not numeric", k + 3)))?;
        }

        if units.last().map(|u| u.unit) != Some(unit) {
            if units.iter().any(|u| u.unit == unit) {
                return Err(CoreError::Validation(format!(
                    "{}: unit {unit} reappears at line {line} after other units",
                    path.display()
                )));
            }
            finish(&mut units, &mut rows);
            units.push(UnitSeries { unit, cycles: Vec::new(), settings: Vec::new(), sensors: Tensor::zeros(0, 0) });
        }
        let u = units.last_mut().expect("unit pushed above");
        let expected = u.cycles.len() as u32 + 1;
        if cycle != expected {
            return Err(CoreError::Validation(format!(
                "{}: unit {unit} has non-contiguous cycles (expected {expected}, found {cycle} at line {line})",
                path.display()
            )));
        }
        u.cycles.push(cycle);
        u.settings.push([nums[0], nums[1], nums[2]]);
        rows.extend_from_slice(&nums[3..]);
    }
    finish(&mut units, &mut rows);
    Ok(units)
}

pub fn parse_rul_file(path: &Path) -> Result<Vec<u32>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let v = s.parse::<u32>().map_err(|_| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("{s:?} is not a non-negative integer"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Load `train_FD00x.txt`, `test_FD00x.txt` and `RUL_FD00x.txt` from `dir`.
pub fn parse_subset(dir: &Path, subset: Subset) -> Result<RawSubset> {
    let [train_f, test_f, rul_f] = subset.file_names();
    let paths: Vec<PathBuf> = [train_f, test_f, rul_f].iter().map(|f| dir.join(f)).collect();
    for p in &paths {
        if !p.is_file() {
            return Err(CoreError::MissingFile(p.clone()));
        }
    }
    let train = parse_series_file(&paths[0])?;
    let test = parse_series_file(&paths[1])?;
    let test_rul = parse_rul_file(&paths[2])?;
    if test_rul.len() != test.len() {
        return Err(CoreError::Validation(format!(
            "{} lists {} RUL values for {} test units",
            paths[2].display(),
            test_rul.len(),
            test.len()
        )));
    }
    Ok(RawSubset { train, test, test_rul })
}

/// Serialize series in the raw 26-column layout. Values are written in
/// shortest round-trip form, so parsing the output reproduces them exactly.
pub fn format_series(series: &[UnitSeries]) -> String {
    let mut out = String::new();
    for u in series {
        for (r, cycle) in u.cycles.iter().enumerate() {
            let mut fields = vec![u.unit.to_string(), cycle.to_string()];
            fields.extend(u.settings[r].iter().map(|v| format!("{v:?}")));
            fields.extend(u.sensors.row_slice(r).iter().map(|v| format!("{v:?}")));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Remove the seven constant sensors, keeping the rest in order.
pub fn drop_constant_sensors(series: &[UnitSeries]) -> Result<Vec<UnitSeries>> {
    let keep: Vec<usize> = (0..RAW_SENSORS).filter(|i| !DROPPED_SENSORS.contains(&(i + 1))).collect();
    series
        .iter()
        .map(|u| {
            if u.sensor_count() != RAW_SENSORS {
                return Err(CoreError::Validation(format!(
                    "unit {} has {} sensor columns, expected {RAW_SENSORS}",
                    u.unit,
                    u.sensor_count()
                )));
            }
            let sensors = Tensor::from_fn(u.len(), keep.len(), |r, c| u.sensors.get(r, keep[c]));
            Ok(UnitSeries { sensors, ..u.clone() })
        })
        .collect()
}

/// Names of the sensors that survive [`drop_constant_sensors`].
pub fn kept_sensor_names() -> Vec<&'static str> {
    SENSOR_NAMES.iter().enumerate().filter(|(i, _)| !DROPPED_SENSORS.contains(&(i + 1))).map(|(_, n)| *n).collect()
}

/// Per-sensor min/max over the training series.
pub fn fit_normalization(train: &[UnitSeries]) -> Result<NormStats> {
    let s = train.first().map(UnitSeries::sensor_count).ok_or_else(|| {
        CoreError::Validation("cannot fit normalization on an empty training set".into())
    })?;
    let mut min = vec![f64::INFINITY; s];
    let mut max = vec![f64::NEG_INFINITY; s];
    let mut t_max = 0u32;
    for u in train {
        if u.sensor_count() != s {
            return Err(CoreError::Validation(format!("unit {} has {} sensors, expected {s}", u.unit, u.sensor_count())));
        }
        t_max = t_max.max(u.last_cycle());
        for r in 0..u.len() {
            for (c, &v) in u.sensors.row_slice(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    if let Some(c) = (0..s).find(|&c| max[c] <= min[c]) {
        return Err(CoreError::Validation(format!(
            "sensor column {c} is constant ({}) in the training data; apply drop_constant_sensors first",
            min[c]
        )));
    }
    Ok(NormStats { min, max, t_max: t_max as f64 })
}

pub fn apply_normalization(series: &[UnitSeries], stats: &NormStats) -> Result<Vec<UnitSeries>> {
    series
        .iter()
        .map(|u| {
            if u.sensor_count() != stats.min.len() {
                return Err(CoreError::Validation(format!(
                    "unit {} has {} sensors but normalization expects {}",
                    u.unit,
                    u.sensor_count(),
                    stats.min.len()
                )));
            }
            let sensors = Tensor::from_fn(u.len(), u.sensor_count(), |r, c| {
                (u.sensors.get(r, c) - stats.min[c]) / (stats.max[c] - stats.min[c])
            });
            Ok(UnitSeries { sensors, ..u.clone() })
        })
        .collect()
}

/// Every stride-1 window of a training unit, labelled with capped RUL.
pub fn make_windows(unit: &UnitSeries, window: usize, stride: usize, stats: &NormStats) -> Result<Vec<Window>> {
    if stride != 1 {
        return Err(CoreError::Validation(format!("sliding stride must be 1, got {stride}")));
    }
    if window == 0 {
        return Err(CoreError::Validation("window length must be positive".into()));
    }
    let len = unit.len();
    if len < window {
        log::warn!("unit {} has {len} cycles, shorter than window {window}; skipped", unit.unit);
        return Ok(Vec::new());
    }
    let last = unit.last_cycle();
    Ok((0..=len - window)
        .map(|k| {
            let end_cycle = unit.cycles[k + window - 1];
            Window {
                unit: unit.unit,
                x: unit.sensors.slice(k, k + window, 0, unit.sensor_count()),
                end_cycle,
                t_norm: end_cycle as f64 / stats.t_max,
                label: RUL_CAP.min((last - end_cycle) as f64),
            }
        })
        .collect())
}

/// The final `window` rows of a test unit, front-padded by repeating the
/// first row when the unit is shorter than the window.
pub fn test_last_window(unit: &UnitSeries, window: usize, true_rul: u32, stats: &NormStats) -> Window {
    let len = unit.len();
    let s = unit.sensor_count();
    let pad = window.saturating_sub(len);
    let start = len.saturating_sub(window);
    let x = Tensor::from_fn(window, s, |r, c| {
        let src = if r < pad { 0 } else { start + r - pad };
        unit.sensors.get(src, c)
    });
    let end_cycle = unit.last_cycle();
    Window {
        unit: unit.unit,
        x,
        end_cycle,
        t_norm: end_cycle as f64 / stats.t_max,
        label: RUL_CAP.min(true_rul as f64),
    }
}

/// Seeded random window-level split; `round(fraction * N)` go to validation.
/// Both halves keep their original relative order.
pub fn split_validation(windows: Vec<Window>, fraction: f64, seed: u64) -> Result<(Vec<Window>, Vec<Window>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CoreError::Validation(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    if windows.is_empty() {
        return Err(CoreError::Validation("cannot split an empty window set".into()));
    }
    let n = windows.len();
    let n_val = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (w, v) in windows.into_iter().zip(is_val) {
        if v {
            val.push(w);
        } else {
            train.push(w);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(id: u32, len: usize, sensors: usize) -> UnitSeries {
        UnitSeries {
            unit: id,
            cycles: (1..=len as u32).collect(),
            settings: vec![[0.0; 3]; len],
            sensors: Tensor::from_fn(len, sensors, |r, c| (r * sensors + c) as f64),
        }
    }

    fn stats(t_max: f64) -> NormStats {
        NormStats { min: vec![0.0], max: vec![1.0], t_max }
    }

    #[test]
    fn drops_exactly_the_named_sensors() {
        let out = drop_constant_sensors(&[unit(1, 3, 21)]).unwrap();
        assert_eq!(out[0].sensor_count(), 14);
        // T24 (sensor 2) becomes the first retained column.
        assert_eq!(out[0].sensors.get(0, 0), 1.0);
        assert_eq!(kept_sensor_names()[0], "T24");
        assert_eq!(kept_sensor_names().len(), KEPT_SENSORS);
        assert!(drop_constant_sensors(&out).is_err());
    }

    #[test]
    fn min_max_maps_endpoints() {
        let mut u = unit(1, 3, 1);
        u.sensors = Tensor::column(vec![10.0, 20.0, 30.0]);
        let st = fit_normalization(std::slice::from_ref(&u)).unwrap();
        let n = apply_normalization(&[u], &st).unwrap();
        assert_eq!(n[0].sensors.data(), &[0.0, 0.5, 1.0]);
        let mut t = unit(2, 1, 1);
        t.sensors = Tensor::column(vec![35.0]);
        assert_eq!(apply_normalization(&[t], &st).unwrap()[0].sensors.item(), 1.25);
        assert_eq!(st.t_max, 3.0);
    }

    #[test]
    fn constant_sensor_rejected() {
        let mut u = unit(1, 3, 1);
        u.sensors = Tensor::column(vec![4.0, 4.0, 4.0]);
        let err = fit_normalization(&[u]).unwrap_err().to_string();
        assert!(err.contains("drop_constant_sensors"), "{err}");
    }

    #[test]
    fn window_counts_and_labels() {
        let u = unit(1, 100, 1);
        let w = make_windows(&u, 40, 1, &stats(100.0)).unwrap();
        assert_eq!(w.len(), 61);
        assert_eq!(w[0].end_cycle, 40);
        assert_eq!(w.last().unwrap().label, 0.0);
        assert!(make_windows(&u, 40, 2, &stats(100.0)).is_err());
        assert!(make_windows(&unit(2, 30, 1), 40, 1, &stats(100.0)).unwrap().is_empty());

        let long = unit(3, 150, 1);
        let w = make_windows(&long, 10, 1, &stats(150.0)).unwrap();
        assert_eq!(w[0].end_cycle, 10);
        assert_eq!(w[0].label, 125.0);
        assert_eq!(w.last().unwrap().end_cycle, 150);
        assert_eq!(w.last().unwrap().label, 0.0);
    }

    #[test]
    fn last_window_suffix_and_padding() {
        let u = unit(1, 80, 1);
        let w = test_last_window(&u, 60, 30, &stats(100.0));
        assert_eq!(w.x.data(), &(20..80).map(|v| v as f64).collect::<Vec<_>>()[..]);
        assert_eq!(w.label, 30.0);

        let short = unit(2, 45, 1);
        let w = test_last_window(&short, 60, 140, &stats(100.0));
        let mut want = vec![0.0; 15];
        want.extend((0..45).map(|v| v as f64));
        assert_eq!(w.x.data(), &want[..]);
        assert_eq!(w.label, 125.0);
        assert_eq!(w.end_cycle, 45);
    }

    #[test]
    fn split_is_seeded_and_sized() {
        let ws = make_windows(&unit(1, 139, 1), 40, 1, &stats(139.0)).unwrap();
        assert_eq!(ws.len(), 100);
        let (a, b) = split_validation(ws.clone(), 0.2, 5).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (c, d) = split_validation(ws.clone(), 0.2, 5).unwrap();
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert!(split_validation(ws.clone(), 0.0, 5).is_err());
        assert!(split_validation(Vec::new(), 0.2, 5).is_err());
    }

    #[test]
    fn parse_errors_carry_context() {
        let p = Path::new("train_FD001.txt");
        let mut row: Vec<String> = (0..26).map(|i| i.to_string()).collect();
        row[0] = "1".into();
        row[1] = "1".into();
        let good = row.join(" ");
        let short = row[..25].join(" ");
        match parse_series_text(&format!("{good}\n{short}\n"), p) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        row[1] = "3".into();
        let gap = row.join(" ");
        let err = parse_series_text(&format!("{good}\n{gap}\n"), p).unwrap_err().to_string();
        assert!(err.contains("unit 1"), "{err}");
    }

    #[test]
    fn empty_directory_is_missing_file() {
        let dir = std::env::temp_dir().join("hpinn-empty-dir-test");
        std::fs::create_dir_all(&dir).unwrap();
        assert!(matches!(parse_subset(&dir, Subset::FD001), Err(CoreError::MissingFile(_))));
    }
}
