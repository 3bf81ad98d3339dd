//! Seeded synthetic grid records for demos and end-to-end tests. Cells are
//! drawn from a regular 500 m lattice; a smooth latent hazard field drives
//! both the labels and the predictors, so the predictors carry signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{label_from_sum_pde, Feature, FeatureVec, Huc12, Record};

const KM_PER_DEG_LAT: f64 = 111.32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub n_train: usize,
    pub cols: usize,
    pub rows: usize,
    pub cell_km: f64,
    /// South-west lattice corner (lon, lat).
    pub origin: (f64, f64),
    /// Share of cells in each label, lowest level first.
    pub label_shares: [f64; 3],
    /// Chance that an individual predictor value is missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_records: 200,
            n_train: 140,
            cols: 30,
            rows: 20,
            cell_km: 0.5,
            origin: (-95.45, 29.75),
            label_shares: [0.45, 0.40, 0.15],
            missing_rate: 0.01,
            seed: 7,
        }
    }
}

/// Watershed of a lattice column: a wide western unit and two narrow ones.
fn huc12_for(col: usize, cols: usize) -> &'static str {
    if col * 5 < cols * 4 {
        "120401040101"
    } else if col * 10 < cols * 9 {
        "120401040102"
    } else {
        "120401040103"
    }
}

fn noise(rng: &mut ChaCha8Rng) -> f64 {
    // Irwin-Hall(3) centered and scaled to unit variance
    (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5) * 2.0
}

fn round_to(v: f64, places: i32) -> f64 {
    let m = 10f64.powi(places);
    (v * m).round() / m
}

/// Train and test records. Labels follow from `Sum_PDE` with the standard
/// thresholds; test records keep their labels for scoring.
pub fn generate(spec: &SyntheticSpec) -> Result<(Vec<Record>, Vec<Record>)> {
    if spec.n_records > spec.cols * spec.rows
        || spec.n_train > spec.n_records
        || spec.n_records == 0
    {
        return Err(Error::InvalidInput(format!(
            "cannot place {} records ({} train) on a {}x{} lattice",
            spec.n_records, spec.n_train, spec.cols, spec.rows
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cells: Vec<usize> = (0..spec.cols * spec.rows).collect();
    cells.shuffle(&mut rng);
    cells.truncate(spec.n_records);

    let lat_step = spec.cell_km / KM_PER_DEG_LAT;
    let lon_step = spec.cell_km / (KM_PER_DEG_LAT * spec.origin.1.to_radians().cos());

    struct Cell {
        col: usize,
        row: usize,
        hazard: f64,
    }
    let mut placed: Vec<Cell> = cells
        .iter()
        .map(|&c| {
            let (col, row) = (c % spec.cols, c / spec.cols);
            let (fc, fr) = (col as f64, row as f64);
            let hazard = 0.7 * (fc / 4.5).sin()
                + 0.6 * (fr / 3.5).cos()
                + 0.8 * fc / spec.cols as f64
                + 0.35 * noise(&mut rng);
            Cell { col, row, hazard }
        })
        .collect();

    // label cut points from hazard ranks
    let mut sorted: Vec<f64> = placed.iter().map(|c| c.hazard).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cut0 = sorted[((spec.label_shares[0] * n as f64) as usize).min(n - 1)];
    let cut1 =
        sorted[(((spec.label_shares[0] + spec.label_shares[1]) * n as f64) as usize).min(n - 1)];
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (sorted.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-9);

    let mut records = Vec::with_capacity(n);
    for (i, cell) in placed.drain(..).enumerate() {
        let z = (cell.hazard - mean) / sd;
        let mut e = || noise(&mut rng);
        let values = [
            (Feature::Age, (40.0 + 15.0 * e()).max(1.0).round()),
            (
                Feature::Far,
                round_to((0.15 + 0.05 * z + 0.05 * e()).max(0.0), 4),
            ),
            (
                Feature::PolyNum,
                (60.0 + 20.0 * z + 20.0 * e()).max(0.0).round(),
            ),
            (Feature::PoiNum, (3.0 + 3.0 * e()).max(0.0).round()),
            (
                Feature::Fndn,
                round_to((2.0 - 0.5 * z + 0.6 * e()).max(0.0), 3),
            ),
            (
                Feature::PopuNum,
                round_to((300.0 + 120.0 * z + 100.0 * e()).max(0.0), 1),
            ),
            (
                Feature::Elevation,
                round_to((25.0 - 8.0 * z + 5.0 * e()).max(0.5), 2),
            ),
            (
                Feature::DisCoa,
                round_to(40.0 + 0.5 * cell.col as f64 - 3.0 * z + e(), 2),
            ),
            (
                Feature::Impervious,
                round_to((30.0 + 10.0 * z + 8.0 * e()).clamp(0.0, 100.0), 2),
            ),
            (Feature::Roughness, round_to((0.3 + 0.1 * e()).max(0.01), 3)),
            (
                Feature::DisStream,
                round_to((1.2 - 0.4 * z + 0.3 * e()).max(0.01), 3),
            ),
            (
                Feature::Hand,
                round_to((12.0 - 5.0 * z + 3.0 * e()).max(0.1), 2),
            ),
            (
                Feature::ClaimsPast50yr,
                (5.0 + 4.0 * z + 3.0 * e()).max(0.0).round(),
            ),
            (Feature::RainMax, round_to(12.0 + 2.5 * z + 1.5 * e(), 2)),
        ];
        let mut predictors = FeatureVec::from_pairs(values);
        for f in Feature::ALL {
            if rng.random::<f64>() < spec.missing_rate {
                predictors.set(f, None);
            }
        }
        let sum_pde = if cell.hazard < cut0 {
            0.0
        } else if cell.hazard < cut1 {
            round_to(rng.random_range(0.05..=1.0), 4)
        } else {
            round_to(rng.random_range(1.05..=4.0), 4)
        };
        let jitter = |rng: &mut ChaCha8Rng| (rng.random::<f64>() - 0.5) * 0.2;
        let x = spec.origin.0 + (cell.col as f64 + 0.5 + jitter(&mut rng)) * lon_step;
        let y = spec.origin.1 + (cell.row as f64 + 0.5 + jitter(&mut rng)) * lat_step;
        records.push(Record {
            row_id: 1000 + i as i64,
            x: round_to(x, 6),
            y: round_to(y, 6),
            huc12: Huc12::new(huc12_for(cell.col, spec.cols))?,
            predictors,
            sum_pde: Some(sum_pde),
            label: Some(label_from_sum_pde(sum_pde)?),
        });
    }
    let test = records.split_off(spec.n_train);
    Ok((records, test))
}
