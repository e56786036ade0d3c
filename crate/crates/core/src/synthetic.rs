//! Synthetic run-to-failure fleets in the raw C-MAPSS file layout.
//!
//! Useful for exercising the pipeline end to end without the NASA files.
//! Each unit's informative sensors follow a smooth, noisy degradation curve
//! toward failure; the seven usually-dropped sensors stay flat within an
//! operating condition.

use std::fs;
use std::path::Path;

use hpinn_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{format_series, RawSubset, Subset, UnitSeries, DROPPED_SENSORS, RAW_SENSORS};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub train_units: usize,
    pub test_units: usize,
    /// Inclusive range of run-to-failure lengths.
    pub life: (usize, usize),
    /// Number of distinct operating conditions (1 or 6 in the real data).
    pub conditions: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Unit counts and condition count mirroring a published subset.
    pub fn like(subset: Subset, seed: u64) -> Self {
        let (train_units, test_units) = subset.unit_counts();
        let conditions = match subset {
            Subset::FD001 | Subset::FD003 => 1,
            Subset::FD002 | Subset::FD004 => 6,
        };
        Self { train_units, test_units, life: (128, 362), conditions, noise: 0.02, seed }
    }

    pub fn small(seed: u64) -> Self {
        Self { train_units: 12, test_units: 8, life: (70, 120), conditions: 1, noise: 0.02, seed }
    }
}

struct SensorModel {
    base: f64,
    /// Signed degradation amplitude; zero for flat sensors.
    drift: f64,
    condition_shift: Vec<f64>,
}

fn sensor_models(rng: &mut ChaCha8Rng, conditions: usize) -> Vec<SensorModel> {
    (0..RAW_SENSORS)
        .map(|i| {
            let flat = DROPPED_SENSORS.contains(&(i + 1));
            let base = rng.random_range(10.0..600.0);
            let drift = if flat {
                0.0
            } else {
                let mag = base * rng.random_range(0.004..0.02);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            };
            let condition_shift =
                (0..conditions).map(|c| if c == 0 { 0.0 } else { base * rng.random_range(-0.3..0.3) }).collect();
            SensorModel { base, drift, condition_shift }
        })
        .collect()
}

fn simulate_unit(
    rng: &mut ChaCha8Rng,
    models: &[SensorModel],
    unit: u32,
    life: usize,
    observed: usize,
    spec: &SyntheticSpec,
) -> UnitSeries {
    let exponent = rng.random_range(1.5..3.0);
    let mut settings = Vec::with_capacity(observed);
    let mut data = Vec::with_capacity(observed * RAW_SENSORS);
    for k in 0..observed {
        let cond = rng.random_range(0..spec.conditions);
        settings.push([
            cond as f64 * 10.0 + rng.random_range(-0.002..0.002),
            cond as f64 * 0.1 + rng.random_range(-0.0002..0.0002),
            if cond % 2 == 0 { 100.0 } else { 60.0 },
        ]);
        let health = ((k + 1) as f64 / life as f64).powf(exponent);
        for m in models {
            let level = m.base + m.condition_shift[cond];
            let v = if m.drift == 0.0 {
                level
            } else {
                let noise: f64 = rng.random_range(-1.0..1.0) * spec.noise * m.drift.abs() * 3.0;
                level + m.drift * health + noise
            };
            data.push(v);
        }
    }
    UnitSeries {
        unit,
        cycles: (1..=observed as u32).collect(),
        settings,
        sensors: Tensor::new(observed, RAW_SENSORS, data),
    }
}

pub fn generate(spec: &SyntheticSpec) -> RawSubset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let models = sensor_models(&mut rng, spec.conditions.max(1));
    let spec = SyntheticSpec { conditions: spec.conditions.max(1), ..spec.clone() };
    let (lo, hi) = spec.life;
    let train = (1..=spec.train_units as u32)
        .map(|u| {
            let life = rng.random_range(lo..=hi);
            simulate_unit(&mut rng, &models, u, life, life, &spec)
        })
        .collect();
    let mut test_rul = Vec::with_capacity(spec.test_units);
    let test = (1..=spec.test_units as u32)
        .map(|u| {
            let life = rng.random_range(lo..=hi);
            let observed = ((life as f64 * rng.random_range(0.25..0.95)) as usize).max(1);
            test_rul.push((life - observed) as u32);
            simulate_unit(&mut rng, &models, u, life, observed, &spec)
        })
        .collect();
    RawSubset { train, test, test_rul }
}

/// Write `train_`, `test_` and `RUL_` files for `subset` into `dir`.
pub fn write_subset(dir: &Path, subset: Subset, data: &RawSubset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let [train_f, test_f, rul_f] = subset.file_names();
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| CoreError::io(p, e))
    };
    write(&train_f, format_series(&data.train))?;
    write(&test_f, format_series(&data.test))?;
    let rul: String = data.test_rul.iter().map(|r| format!("{r}\n")).collect();
    write(&rul_f, rul)
}
