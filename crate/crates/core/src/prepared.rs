//! Prepared datasets: normalized, sensor-reduced series plus everything
//! needed to rebuild the windows and the validation split.
//!
//! File layout: a first line `# hpinn-prepared v1 <json header>`, then a CSV
//! header `split,unit,cycle,set1,set2,set3,<sensor names>` and one row per
//! cycle. Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hpinn_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_normalization, drop_constant_sensors, fit_normalization, kept_sensor_names, make_windows, split_validation,
    test_last_window, NormStats, RawSubset, Subset, UnitSeries, Window,
};
use crate::error::{CoreError, Result};

const MAGIC: &str = "# hpinn-prepared v1 ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedHeader {
    pub subset: Subset,
    pub window: usize,
    pub sensors: Vec<String>,
    pub norm_stats: NormStats,
    pub validation_fraction: f64,
    pub split_seed: u64,
    /// True RUL per test unit, in test-unit order.
    pub test_rul: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub header: PreparedHeader,
    /// Normalized, 14 sensors.
    pub train: Vec<UnitSeries>,
    pub test: Vec<UnitSeries>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub subset: Subset,
    pub window: usize,
    pub train_units: usize,
    pub test_units: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub skipped_train_units: usize,
    pub norm_stats: NormStats,
}

impl PreparedDataset {
    /// Drop constant sensors, fit normalization on the training units and
    /// apply it to both splits.
    pub fn prepare(raw: &RawSubset, subset: Subset, validation_fraction: f64, split_seed: u64) -> Result<Self> {
        if raw.test.len() != raw.test_rul.len() {
            return Err(CoreError::Validation(format!(
                "{} test units but {} RUL values",
                raw.test.len(),
                raw.test_rul.len()
            )));
        }
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(CoreError::Validation(format!(
                "validation fraction must lie in (0, 1), got {validation_fraction}"
            )));
        }
        let train = drop_constant_sensors(&raw.train)?;
        let test = drop_constant_sensors(&raw.test)?;
        let stats = fit_normalization(&train)?;
        let header = PreparedHeader {
            subset,
            window: subset.window_len(),
            sensors: kept_sensor_names().into_iter().map(String::from).collect(),
            validation_fraction,
            split_seed,
            test_rul: raw.test_rul.clone(),
            norm_stats: stats.clone(),
        };
        Ok(Self { train: apply_normalization(&train, &stats)?, test: apply_normalization(&test, &stats)?, header })
    }

    pub fn stats(&self) -> &NormStats {
        &self.header.norm_stats
    }

    /// Every sliding window of every training unit, before the split.
    pub fn all_train_windows(&self) -> Result<Vec<Window>> {
        let mut out = Vec::new();
        for u in &self.train {
            out.extend(make_windows(u, self.header.window, 1, self.stats())?);
        }
        Ok(out)
    }

    /// `(train, validation)` windows.
    pub fn split(&self) -> Result<(Vec<Window>, Vec<Window>)> {
        split_validation(self.all_train_windows()?, self.header.validation_fraction, self.header.split_seed)
    }

    /// Padded last window of each test unit, labelled with capped true RUL.
    pub fn test_windows(&self) -> Vec<Window> {
        self.test
            .iter()
            .zip(&self.header.test_rul)
            .map(|(u, &r)| test_last_window(u, self.header.window, r, self.stats()))
            .collect()
    }

    pub fn summary(&self) -> Result<PrepareSummary> {
        let (train, val) = self.split()?;
        Ok(PrepareSummary {
            subset: self.header.subset,
            window: self.header.window,
            train_units: self.train.len(),
            test_units: self.test.len(),
            train_windows: train.len(),
            validation_windows: val.len(),
            skipped_train_units: self.train.iter().filter(|u| u.len() < self.header.window).count(),
            norm_stats: self.header.norm_stats.clone(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        out.push_str("split,unit,cycle,set1,set2,set3");
        for s in &self.header.sensors {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
        for (split, units) in [("train", &self.train), ("test", &self.test)] {
            for u in units {
                for (r, cycle) in u.cycles.iter().enumerate() {
                    let _ = write!(out, "{split},{},{cycle}", u.unit);
                    for v in u.settings[r].iter().chain(u.sensors.row_slice(r)) {
                        let _ = write!(out, ",{v:?}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| CoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, detail: String| CoreError::Parse { path: path.to_path_buf(), line, detail };
        let mut lines = text.lines().enumerate();
        let first = lines.next().map(|(_, l)| l).unwrap_or("");
        let json = first.strip_prefix(MAGIC).ok_or_else(|| perr(1, "not a prepared dataset (bad first line)".into()))?;
        let header: PreparedHeader = serde_json::from_str(json).map_err(|e| perr(1, format!("header: {e}")))?;
        let s = header.sensors.len();
        if header.norm_stats.min.len() != s || header.norm_stats.max.len() != s {
            return Err(perr(1, "normalization statistics do not match the sensor list".into()));
        }
        lines.next();

        let mut train: Vec<UnitSeries> = Vec::new();
        let mut test: Vec<UnitSeries> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut current: Option<(bool, UnitSeries)> = None;
        let flush = |cur: Option<(bool, UnitSeries)>, rows: &mut Vec<Vec<f64>>, train: &mut Vec<UnitSeries>, test: &mut Vec<UnitSeries>| {
            if let Some((is_train, mut u)) = cur {
                let data: Vec<f64> = rows.drain(..).flatten().collect();
                u.sensors = Tensor::new(u.cycles.len(), s, data);
                if is_train { train.push(u) } else { test.push(u) }
            }
        };
        for (i, raw) in lines {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split(',').collect();
            if fields.len() != 6 + s {
                return Err(perr(line, format!("expected {} fields, found {}", 6 + s, fields.len())));
            }
            let is_train = match fields[0] {
                "train" => true,
                "test" => false,
                other => return Err(perr(line, format!("unknown split {other:?}"))),
            };
            let unit: u32 = fields[1].parse().map_err(|_| perr(line, format!("bad unit {:?}", fields[1])))?;
            let cycle: u32 = fields[2].parse().map_err(|_| perr(line, format!("bad cycle {:?}", fields[2])))?;
            let nums: Vec<f64> = fields[3..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| perr(line, format!("{f:?} is not numeric"))))
                .collect::<Result<_>>()?;
            let same = matches!(&current, Some((t, u)) if *t == is_train && u.unit == unit);
            if !same {
                flush(current.take(), &mut rows, &mut train, &mut test);
                current = Some((is_train, UnitSeries { unit, cycles: Vec::new(), settings: Vec::new(), sensors: Tensor::zeros(0, 0) }));
            }
            let (_, u) = current.as_mut().expect("set above");
            if cycle != u.cycles.len() as u32 + 1 {
                return Err(perr(line, format!("unit {unit} has non-contiguous cycles")));
            }
            u.cycles.push(cycle);
            u.settings.push([nums[0], nums[1], nums[2]]);
            rows.push(nums[3..].to_vec());
        }
        flush(current, &mut rows, &mut train, &mut test);
        if test.len() != header.test_rul.len() {
            return Err(CoreError::Validation(format!(
                "{}: {} test units but {} RUL values in the header",
                path.display(),
                test.len(),
                header.test_rul.len()
            )));
        }
        Ok(Self { header, train, test })
    }
}
