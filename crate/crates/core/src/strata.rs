//! Atomic strata and the stratifications decoded from chromosomes.

use std::collections::BTreeMap;
use std::io;

use crate::error::{Error, Result};
use crate::frame::DomainFrame;

/// Separator between category labels in an atomic stratum key.
pub const KEY_SEPARATOR: &str = "*";

/// One realized cell of the auxiliary-variable Cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStratum {
    pub key: String,
    /// Interned category codes, one per auxiliary variable.
    pub codes: Vec<u32>,
    pub n: usize,
    pub mean: Vec<f64>,
    /// Population (divisor `n`) standard deviations.
    pub sd: Vec<f64>,
    pub domain: String,
    /// Frame row indices belonging to the stratum.
    pub rows: Vec<usize>,
}

/// The atomic strata of one domain, in lexicographic key-tuple order.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicStrataSet {
    pub domain: String,
    pub strata: Vec<AtomicStratum>,
    pub total_n: usize,
}

impl AtomicStrataSet {
    /// Assembles a set from prebuilt strata (used for synthetic instances).
    pub fn new(domain: &str, strata: Vec<AtomicStratum>) -> Result<Self> {
        let first = strata.first().ok_or(Error::EmptyGroup)?;
        let g = first.mean.len();
        for s in &strata {
            if s.n == 0 || s.mean.len() != g || s.sd.len() != g {
                return Err(Error::InvalidArgs(format!("malformed atomic stratum `{}`", s.key)));
            }
        }
        let total_n = strata.iter().map(|s| s.n).sum();
        Ok(AtomicStrataSet { domain: domain.to_owned(), strata, total_n })
    }

    /// Number of atomic strata, K.
    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.strata.first().map_or(0, |s| s.mean.len())
    }

    /// Population totals T_g = sum over strata of N * mean. They do not depend
    /// on how the atomic strata are grouped.
    pub fn totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.num_targets()];
        for s in &self.strata {
            for (tg, m) in t.iter_mut().zip(&s.mean) {
                *tg += s.n as f64 * m;
            }
        }
        t
    }
}

/// Pooled statistics of a group of atomic strata.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumStats {
    pub n: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Indices into the atomic strata set.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratification {
    pub strata: Vec<StratumStats>,
    pub labels: Vec<u32>,
}

impl Stratification {
    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.strata.first().map_or(0, |s| s.mean.len())
    }

    pub fn population(&self) -> usize {
        self.strata.iter().map(|s| s.n).sum()
    }

    /// T_g = sum_h N_h M_hg.
    pub fn totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.num_targets()];
        for s in &self.strata {
            for (tg, m) in t.iter_mut().zip(&s.mean) {
                *tg += s.n as f64 * m;
            }
        }
        t
    }

    /// Stratum index (0-based) of every atomic stratum.
    pub fn assignment(&self, k: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; k];
        for (h, s) in self.strata.iter().enumerate() {
            for &m in &s.members {
                out[m] = h;
            }
        }
        out
    }
}

/// Groups the domain's rows by their auxiliary category tuple and computes
/// per-cell counts, means and population standard deviations. Only realized
/// combinations produce a stratum.
pub fn build_atomic_strata(df: &DomainFrame<'_>) -> Result<AtomicStrataSet> {
    if df.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let frame = df.frame;
    let m = frame.num_aux();
    let g = frame.num_targets();
    let mut cells: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for &row in &df.rows {
        let codes: Vec<u32> = (0..m).map(|j| frame.aux_code(row, j)).collect();
        cells.entry(codes).or_default().push(row);
    }
    let strata = cells
        .into_iter()
        .map(|(codes, rows)| {
            let key = codes
                .iter()
                .enumerate()
                .map(|(j, &c)| frame.aux(j).levels[c as usize].as_str())
                .collect::<Vec<_>>()
                .join(KEY_SEPARATOR);
            let n = rows.len();
            let mut mean = vec![0.0; g];
            for &r in &rows {
                for (acc, y) in mean.iter_mut().zip(frame.targets(r)) {
                    *acc += y;
                }
            }
            mean.iter_mut().for_each(|v| *v /= n as f64);
            let mut var = vec![0.0; g];
            for &r in &rows {
                for ((acc, y), mu) in var.iter_mut().zip(frame.targets(r)).zip(&mean) {
                    *acc += (y - mu) * (y - mu);
                }
            }
            let sd = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
            AtomicStratum { key, codes, n, mean, sd, domain: df.label.clone(), rows }
        })
        .collect();
    AtomicStrataSet::new(&df.label, strata)
}

/// Pools the atomic strata listed in `members` into one stratum.
///
/// Uses the between/within decomposition
/// `S_h^2 = sum_k N_k (S_k^2 + (M_k - M_h)^2) / N_h`, which equals the raw
/// second-moment identity without its cancellation.
pub fn merge_group(strata: &[AtomicStratum], members: Vec<usize>) -> Result<StratumStats> {
    let first = *members.first().ok_or(Error::EmptyGroup)?;
    let g = strata[first].mean.len();
    if members.len() == 1 {
        let s = &strata[first];
        return Ok(StratumStats { n: s.n, mean: s.mean.clone(), sd: s.sd.clone(), members });
    }
    let mut n = 0usize;
    let mut mean = vec![0.0; g];
    for &k in &members {
        let s = &strata[k];
        n += s.n;
        for (acc, m) in mean.iter_mut().zip(&s.mean) {
            *acc += s.n as f64 * m;
        }
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|v| *v /= nf);
    let mut var = vec![0.0; g];
    for &k in &members {
        let s = &strata[k];
        let w = s.n as f64;
        for j in 0..g {
            let d = s.mean[j] - mean[j];
            var[j] += w * (s.sd[j] * s.sd[j] + d * d);
        }
    }
    let sd = var.into_iter().map(|v| (v / nf).max(0.0).sqrt()).collect();
    Ok(StratumStats { n, mean, sd, members })
}

/// Checks that `labels` is a valid chromosome over `k` atomic strata.
pub fn validate_labels(labels: &[u32], k: usize) -> Result<()> {
    if labels.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: labels.len() });
    }
    for (position, &label) in labels.iter().enumerate() {
        if label == 0 || label as usize > k {
            return Err(Error::LabelOutOfRange { position, label, max: k });
        }
    }
    Ok(())
}

/// Atomic strata sharing a label form one stratum; strata are emitted in
/// order of first label appearance.
pub fn decode_partition(labels: &[u32], set: &AtomicStrataSet) -> Result<Stratification> {
    let k = set.len();
    validate_labels(labels, k)?;
    let mut slot = vec![u32::MAX; k + 1];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let s = &mut slot[l as usize];
        if *s == u32::MAX {
            *s = groups.len() as u32;
            groups.push(Vec::new());
        }
        groups[*s as usize].push(i);
    }
    let strata = groups
        .into_iter()
        .map(|members| merge_group(&set.strata, members))
        .collect::<Result<Vec<_>>>()?;
    Ok(Stratification { strata, labels: labels.to_vec() })
}

/// Writes `STRATUM_KEY, N, M1..MG, S1..SG, DOMAIN`.
pub fn write_atomic_strata<W: io::Write>(set: &AtomicStrataSet, sink: W) -> Result<()> {
    let g = set.num_targets();
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["STRATUM_KEY".to_owned(), "N".to_owned()];
    header.extend((1..=g).map(|i| format!("M{i}")));
    header.extend((1..=g).map(|i| format!("S{i}")));
    header.push("DOMAIN".to_owned());
    w.write_record(&header)?;
    for s in &set.strata {
        let mut rec = vec![s.key.clone(), s.n.to_string()];
        rec.extend(s.mean.iter().map(|v| v.to_string()));
        rec.extend(s.sd.iter().map(|v| v.to_string()));
        rec.push(s.domain.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
