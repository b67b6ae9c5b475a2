//! Population frame: loading, variable roles, discretization and domain split.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io;

use crate::error::{Error, Result};

/// Label used for every row when the schema has no domain column.
pub const SINGLE_DOMAIN: &str = "1";

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSchema {
    pub targets: Vec<String>,
    pub aux: Vec<String>,
    /// `None` puts every row in a single domain labelled [`SINGLE_DOMAIN`].
    pub domain: Option<String>,
    pub id: Option<String>,
}

impl FrameSchema {
    pub fn new<T, A>(targets: T, aux: A, domain: Option<&str>) -> Self
    where
        T: IntoIterator,
        T::Item: Into<String>,
        A: IntoIterator,
        A::Item: Into<String>,
    {
        FrameSchema {
            targets: targets.into_iter().map(Into::into).collect(),
            aux: aux.into_iter().map(Into::into).collect(),
            domain: domain.map(str::to_owned),
            id: None,
        }
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = Some(id.to_owned());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidSchema("at least one target column required".into()));
        }
        if self.aux.is_empty() {
            return Err(Error::InvalidSchema("at least one auxiliary column required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.targets.iter().chain(&self.aux) {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSchema(format!("column `{name}` listed twice")));
            }
        }
        if let Some(d) = &self.domain {
            if seen.contains(d.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "domain column `{d}` is also a target or auxiliary"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Abort on the first missing value.
    #[default]
    Strict,
    /// Silently skip rows with a missing value.
    DropRow,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub missing: MissingPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            missing: MissingPolicy::Strict,
        }
    }
}

/// An interned categorical column. `codes[row]` indexes into `levels`, and
/// level order is the ordering used for stratum keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<u32>,
}

impl Categorical {
    /// Interns `values`, ordering levels numerically when both sides parse as
    /// numbers and lexicographically otherwise.
    pub fn from_strings(name: &str, values: &[String]) -> Self {
        let mut levels: Vec<String> = values.to_vec();
        levels.sort_by(|a, b| natural_cmp(a, b));
        levels.dedup();
        let index: HashMap<&str, u32> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let codes = values.iter().map(|v| index[v.as_str()]).collect();
        Categorical {
            name: name.to_owned(),
            levels,
            codes,
        }
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row] as usize]
    }
}

fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Population records with their roles resolved. Immutable after load, apart
/// from [`Frame::discretize_aux`] which is meant to run once before use.
#[derive(Debug, Clone)]
pub struct Frame {
    schema: FrameSchema,
    ids: Vec<String>,
    /// Row-major `len() x targets` matrix.
    y: Vec<f64>,
    aux: Vec<Categorical>,
    domain: Categorical,
}

impl Frame {
    /// Builds a frame from in-memory columns. `aux[m][row]` is the category
    /// label of auxiliary `m`; `domains` may be `None` for a single domain.
    pub fn from_columns(
        schema: FrameSchema,
        ids: Vec<String>,
        targets: Vec<Vec<f64>>,
        aux: Vec<Vec<String>>,
        domains: Option<Vec<String>>,
    ) -> Result<Self> {
        schema.validate()?;
        let n = ids.len();
        if n == 0 {
            return Err(Error::EmptyFrame);
        }
        if targets.len() != schema.targets.len() || aux.len() != schema.aux.len() {
            return Err(Error::InvalidSchema("column count does not match schema".into()));
        }
        for col in &targets {
            if col.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: col.len() });
            }
        }
        for col in &aux {
            if col.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: col.len() });
            }
        }
        let g = targets.len();
        let mut y = vec![0.0; n * g];
        for (j, col) in targets.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                y[i * g + j] = *v;
            }
        }
        let aux = schema
            .aux
            .iter()
            .zip(&aux)
            .map(|(name, col)| Categorical::from_strings(name, col))
            .collect();
        let domain_values = match domains {
            Some(d) => {
                if d.len() != n {
                    return Err(Error::LengthMismatch { expected: n, found: d.len() });
                }
                d
            }
            None => vec![SINGLE_DOMAIN.to_owned(); n],
        };
        let domain_name = schema.domain.clone().unwrap_or_else(|| "DOMAIN".into());
        let domain = Categorical::from_strings(&domain_name, &domain_values);
        Ok(Frame { schema, ids, y, aux, domain })
    }

    pub fn schema(&self) -> &FrameSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_targets(&self) -> usize {
        self.schema.targets.len()
    }

    pub fn num_aux(&self) -> usize {
        self.aux.len()
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn targets(&self, row: usize) -> &[f64] {
        let g = self.num_targets();
        &self.y[row * g..(row + 1) * g]
    }

    pub fn aux(&self, m: usize) -> &Categorical {
        &self.aux[m]
    }

    pub fn aux_code(&self, row: usize, m: usize) -> u32 {
        self.aux[m].codes[row]
    }

    pub fn domain_label(&self, row: usize) -> &str {
        self.domain.label(row)
    }

    pub fn domains(&self) -> &Categorical {
        &self.domain
    }

    /// Replaces a numeric auxiliary column by `k` optimal 1-D k-means classes.
    /// Level labels read `[lo;hi](c)` with classes ordered by value.
    pub fn discretize_aux(&mut self, column: &str, k: usize) -> Result<()> {
        let m = self
            .schema
            .aux
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::MissingColumn(column.to_owned()))?;
        let col = &self.aux[m];
        let values = (0..self.len())
            .map(|row| {
                let raw = col.label(row);
                raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row: row + 1,
                    column: column.to_owned(),
                    value: raw.to_owned(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = discretize(&values, k)?;
        let classes = labels.iter().copied().max().unwrap_or(1) as usize;
        let mut lo = vec![f64::INFINITY; classes];
        let mut hi = vec![f64::NEG_INFINITY; classes];
        for (v, l) in values.iter().zip(&labels) {
            let c = *l as usize - 1;
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
        let levels = (0..classes)
            .map(|c| format!("[{};{}]({})", lo[c], hi[c], c + 1))
            .collect();
        self.aux[m] = Categorical {
            name: column.to_owned(),
            levels,
            codes: labels.iter().map(|l| l - 1).collect(),
        };
        Ok(())
    }
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == "NA"
}

/// Reads a delimited table with a mandatory header row. Row order is preserved.
pub fn load_frame<R: io::Read>(source: R, schema: &FrameSchema, opts: LoadOptions) -> Result<Frame> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let target_idx = schema.targets.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let aux_idx = schema.aux.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let domain_idx = schema.domain.as_deref().map(find).transpose()?;
    let id_idx = schema.id.as_deref().map(find).transpose()?;

    let mut ids = Vec::new();
    let mut targets = vec![Vec::new(); target_idx.len()];
    let mut aux = vec![Vec::new(); aux_idx.len()];
    let mut domains = domain_idx.map(|_| Vec::new());

    'rows: for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |idx: usize| record.get(idx).unwrap_or("");

        // Validate the whole row before pushing anything.
        let mut ys = Vec::with_capacity(target_idx.len());
        for (name, &idx) in schema.targets.iter().zip(&target_idx) {
            let raw = field(idx);
            if is_missing(raw) {
                match opts.missing {
                    MissingPolicy::Strict => {
                        return Err(Error::MissingValue { row, column: name.clone() })
                    }
                    MissingPolicy::DropRow => continue 'rows,
                }
            }
            let v = raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                value: raw.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row, column: name.clone(), value: raw.to_owned() });
            }
            ys.push(v);
        }
        let mut cats = Vec::with_capacity(aux_idx.len() + 1);
        let categorical_cols = schema
            .aux
            .iter()
            .zip(&aux_idx)
            .chain(schema.domain.iter().zip(domain_idx.iter()));
        for (name, &idx) in categorical_cols {
            let raw = field(idx);
            if is_missing(raw) {
                match opts.missing {
                    MissingPolicy::Strict => {
                        return Err(Error::MissingValue { row, column: name.clone() })
                    }
                    MissingPolicy::DropRow => continue 'rows,
                }
            }
            cats.push(raw.trim().to_owned());
        }

        ids.push(match id_idx {
            Some(idx) => field(idx).trim().to_owned(),
            None => row.to_string(),
        });
        for (col, v) in targets.iter_mut().zip(ys) {
            col.push(v);
        }
        let mut cats = cats.into_iter();
        for col in aux.iter_mut() {
            col.push(cats.next().expect("aux value"));
        }
        if let Some(d) = domains.as_mut() {
            d.push(cats.next().expect("domain value"));
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyFrame);
    }
    Frame::from_columns(schema.clone(), ids, targets, aux, domains)
}

/// The rows of one domain, as indices into the parent frame.
#[derive(Debug, Clone)]
pub struct DomainFrame<'a> {
    pub frame: &'a Frame,
    pub label: String,
    pub rows: Vec<usize>,
}

impl DomainFrame<'_> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One [`DomainFrame`] per distinct domain value, ordered by domain label.
pub fn split_domains(frame: &Frame) -> Vec<DomainFrame<'_>> {
    let dom = frame.domains();
    let mut rows = vec![Vec::new(); dom.levels.len()];
    for (row, &code) in dom.codes.iter().enumerate() {
        rows[code as usize].push(row);
    }
    dom.levels
        .iter()
        .zip(rows)
        .filter(|(_, r)| !r.is_empty())
        .map(|(label, rows)| DomainFrame { frame, label: label.clone(), rows })
        .collect()
}

/// Optimal univariate k-means. Returns one label per input in `1..=k`,
/// ordered by cluster mean; equal values always share a label.
///
/// Clusters are contiguous in sorted order, so the minimum within-cluster sum
/// of squares is found exactly by dynamic programming over the distinct
/// values, with divide-and-conquer over the monotone split points.
pub fn discretize(values: &[f64], k: usize) -> Result<Vec<u32>> {
    if values.is_empty() {
        return Err(Error::InvalidArgs("cannot discretize an empty column".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgs("k must be at least 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgs("values must be finite".into()));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    let d = distinct.len();
    if k > d {
        return Err(Error::KTooLarge { k, distinct: d });
    }

    let mut weight = vec![0.0; d];
    for v in values {
        let i = distinct.binary_search_by(|p| p.partial_cmp(v).expect("finite")).expect("present");
        weight[i] += 1.0;
    }
    // Shift by the median to keep the prefix sums well conditioned.
    let shift = distinct[d / 2];
    let mut pw = vec![0.0; d + 1];
    let mut px = vec![0.0; d + 1];
    let mut pxx = vec![0.0; d + 1];
    for i in 0..d {
        let x = distinct[i] - shift;
        pw[i + 1] = pw[i] + weight[i];
        px[i + 1] = px[i] + weight[i] * x;
        pxx[i + 1] = pxx[i] + weight[i] * x * x;
    }
    // SSE of distinct values i..j (half-open).
    let sse = |i: usize, j: usize| -> f64 {
        let w = pw[j] - pw[i];
        let s = px[j] - px[i];
        (pxx[j] - pxx[i] - s * s / w).max(0.0)
    };

    // cost[c][j]: best SSE of the first j distinct values in c + 1 clusters.
    // split[c][j]: start of the last cluster in that solution.
    let mut cost = vec![vec![f64::INFINITY; d + 1]; k];
    let mut split = vec![vec![0usize; d + 1]; k];
    for (j, c) in cost[0].iter_mut().enumerate().skip(1) {
        *c = sse(0, j);
    }
    for c in 1..k {
        let (prev, cur) = cost.split_at_mut(c);
        let layer = Layer { prev: &prev[c - 1], min_start: c, sse: &sse };
        layer.fill(&mut cur[0], &mut split[c], c + 1, d, c, d - 1);
    }

    let mut boundaries = vec![d; k + 1];
    boundaries[0] = 0;
    let mut j = d;
    for c in (1..k).rev() {
        let start = split[c][j];
        boundaries[c] = start;
        j = start;
    }
    let mut class_of = vec![0u32; d];
    for c in 0..k {
        for slot in &mut class_of[boundaries[c]..boundaries[c + 1]] {
            *slot = c as u32 + 1;
        }
    }
    Ok(values
        .iter()
        .map(|v| {
            let i = distinct.binary_search_by(|p| p.partial_cmp(v).expect("finite")).expect("present");
            class_of[i]
        })
        .collect())
}

/// One DP layer: `cur[j] = min_i prev[i] + sse(i, j)` over `min_start <= i < j`.
struct Layer<'a, F> {
    prev: &'a [f64],
    min_start: usize,
    sse: &'a F,
}

impl<F: Fn(usize, usize) -> f64> Layer<'_, F> {
    /// Fills `cur[lo..=hi]` knowing each optimal split lies in `[opt_lo, opt_hi]`.
    fn fill(&self, cur: &mut [f64], split: &mut [usize], lo: usize, hi: usize, opt_lo: usize, opt_hi: usize) {
        if lo > hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let first = opt_lo.max(self.min_start);
        let last = opt_hi.min(mid - 1);
        let mut best = f64::INFINITY;
        let mut best_i = first;
        for i in first..=last {
            let v = self.prev[i] + (self.sse)(i, mid);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        cur[mid] = best;
        split[mid] = best_i;
        if mid > lo {
            self.fill(cur, split, lo, mid - 1, opt_lo, best_i);
        }
        self.fill(cur, split, mid + 1, hi, best_i, opt_hi);
    }
}
