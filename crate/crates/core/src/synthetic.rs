//! Seeded generator for a frame shaped like a national municipality register:
//! a few thousand units in 7 regions, four age-band population counts as
//! targets, and six skewed size measures as auxiliaries.
//!
//! Auxiliaries are driven by a shared latent size so that, once discretized,
//! only a small share of the category combinations is realized.

use std::io;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::frame::{Frame, FrameSchema};

pub const ROWS: usize = 2896;
pub const DOMAIN_COLUMN: &str = "REG";
pub const ID_COLUMN: &str = "COM";
pub const TARGETS: [&str; 4] = ["POPU19", "POPU20_39", "POPU40_64", "POPU65P"];
pub const AUX: [&str; 6] = ["POPTOT", "HAPOLY", "SURFBOIS", "SURFCULT", "ALP", "AIRBAT"];
/// k-means classes used for each auxiliary, in `AUX` order.
pub const CLASSES: [usize; 6] = [18, 3, 3, 3, 3, 3];
/// Seed whose discretized frame has 641 atomic strata over the 7 regions.
pub const REFERENCE_SEED: u64 = 12;

/// Region weights, summing to one.
const REGION_SHARE: [f64; 7] = [0.13, 0.30, 0.14, 0.16, 0.09, 0.11, 0.07];
const AGE_SHARE: [f64; 4] = [0.22, 0.28, 0.34, 0.16];

/// Raw generated columns, before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub ids: Vec<String>,
    pub domains: Vec<String>,
    /// `targets[g][row]`.
    pub targets: Vec<Vec<f64>>,
    /// `aux[m][row]`, numeric.
    pub aux: Vec<Vec<f64>>,
}

pub fn generate(seed: u64) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut ids = Vec::with_capacity(ROWS);
    let mut domains = Vec::with_capacity(ROWS);
    let mut targets = vec![Vec::with_capacity(ROWS); TARGETS.len()];
    let mut aux = vec![Vec::with_capacity(ROWS); AUX.len()];

    let mut cumulative = 0.0;
    let bounds: Vec<usize> = REGION_SHARE
        .iter()
        .map(|s| {
            cumulative += s;
            (cumulative * ROWS as f64).round() as usize
        })
        .collect();
    let mut region = 0;
    for row in 0..ROWS {
        while row >= bounds[region] {
            region += 1;
        }
        ids.push(format!("{}", row + 1));
        domains.push(format!("{}", region + 1));

        // Regions differ in typical size and in how mountainous they are.
        let size: f64 = 6.6 + 0.15 * region as f64 + 1.15 * unit.sample(&mut rng);
        let pop = size.exp().round().max(10.0);
        let mut shares: Vec<f64> = AGE_SHARE
            .iter()
            .map(|s| s * (0.12 * unit.sample(&mut rng)).exp())
            .collect();
        let sum: f64 = shares.iter().sum();
        shares.iter_mut().for_each(|s| *s /= sum);
        for (col, s) in targets.iter_mut().zip(&shares) {
            col.push((pop * s).round());
        }

        let area = (0.45 * size + 3.2 + 0.8 * unit.sample(&mut rng)).exp().round();
        let forest = (area * rng.gen_range(0.05..0.6)).round();
        let crops = (area * rng.gen_range(0.05..0.7)).round();
        let alpine = if rng.gen_bool(0.25 + 0.08 * region as f64) {
            (area * rng.gen_range(0.1..0.6)).round()
        } else {
            0.0
        };
        let built = (pop * 0.045 * (0.35 * unit.sample(&mut rng)).exp()).round();
        for (col, v) in aux.iter_mut().zip([pop, area, forest, crops, alpine, built]) {
            col.push(v);
        }
    }
    SyntheticData { ids, domains, targets, aux }
}

impl SyntheticData {
    pub fn schema() -> FrameSchema {
        FrameSchema::new(TARGETS, AUX, Some(DOMAIN_COLUMN)).with_id(ID_COLUMN)
    }

    /// Builds the frame with every auxiliary replaced by its k-means classes.
    pub fn to_frame(&self) -> Result<Frame> {
        let aux = self.aux.iter().map(|c| c.iter().map(|v| v.to_string()).collect()).collect();
        let mut frame = Frame::from_columns(
            Self::schema(),
            self.ids.clone(),
            self.targets.clone(),
            aux,
            Some(self.domains.clone()),
        )?;
        for (name, k) in AUX.iter().zip(CLASSES) {
            frame.discretize_aux(name, k)?;
        }
        Ok(frame)
    }

    /// Writes the raw numeric table with header
    /// `COM, REG, <targets>, <auxiliaries>`.
    pub fn write_csv<W: io::Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![ID_COLUMN, DOMAIN_COLUMN];
        header.extend(TARGETS);
        header.extend(AUX);
        w.write_record(&header)?;
        for row in 0..self.ids.len() {
            let mut rec = vec![self.ids[row].clone(), self.domains[row].clone()];
            rec.extend(self.targets.iter().map(|c| c[row].to_string()));
            rec.extend(self.aux.iter().map(|c| c[row].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
