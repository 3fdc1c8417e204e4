//! Tensor-train sketching of summary tensors.
//!
//! A d-way summary is swept left to right: at each bond the current
//! unfolding is truncated by SVD, the left factor becomes a core, and
//! the remainder carries forward. Each step records the Frobenius norm
//! of what the truncation dropped, which later feeds the reconstruction
//! error bound sqrt(sum of squared step errors).

use std::fmt;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::budget::ElementBudget;
use crate::error::{Error, Result};
use crate::svd::truncated_svd;
use crate::tensor::DenseTensor;

/// Bond rank cap: a fixed value or the exact (full) rank per bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Fixed(usize),
    Full,
}

impl Rank {
    pub fn is_full(&self) -> bool {
        matches!(self, Rank::Full)
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Fixed(r) => write!(f, "{r}"),
            Rank::Full => write!(f, "full"),
        }
    }
}

impl std::str::FromStr for Rank {
    type Err = Error;
    fn from_str(s: &str) -> Result<Rank> {
        if s.eq_ignore_ascii_case("full") {
            Ok(Rank::Full)
        } else {
            let r: usize = s
                .parse()
                .map_err(|_| Error::Argument(format!("rank must be a positive integer or 'full', got {s:?}")))?;
            if r == 0 {
                return Err(Error::Argument("rank must be at least 1".into()));
            }
            Ok(Rank::Fixed(r))
        }
    }
}

impl Serialize for Rank {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rank::Fixed(r) => s.serialize_u64(*r as u64),
            Rank::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Rank, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(D::Error::custom("rank must be at least 1")),
            Raw::Num(n) => Ok(Rank::Fixed(n as usize)),
            Raw::Text(t) => t.parse().map_err(D::Error::custom),
        }
    }
}

/// Sketching parameters: bond rank cap and the seed for the randomized
/// SVD path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub rank: Rank,
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(rank: Rank, seed: u64) -> SketchConfig {
        SketchConfig { rank, seed }
    }

    pub fn full(seed: u64) -> SketchConfig {
        SketchConfig { rank: Rank::Full, seed }
    }

    pub fn fixed(rank: usize, seed: u64) -> SketchConfig {
        SketchConfig { rank: Rank::Fixed(rank), seed }
    }
}

/// Tensor-train sketch: `d` three-way cores chained over bond ranks,
/// with the per-step truncation record.
#[derive(Debug, Clone)]
pub struct TTSketch {
    cores: Vec<DenseTensor>,
    ranks: Vec<usize>,
    truncation_errors: Vec<f64>,
    source_dims: Vec<usize>,
}

impl TTSketch {
    /// Assembles a sketch from parts, enforcing the chain invariants.
    pub fn from_parts(
        cores: Vec<DenseTensor>,
        truncation_errors: Vec<f64>,
        source_dims: Vec<usize>,
    ) -> Result<TTSketch> {
        if cores.is_empty() {
            return Err(Error::Argument("sketch needs at least one core".into()));
        }
        if cores.len() != source_dims.len() {
            return Err(Error::Argument(format!(
                "{} cores but {} source dims",
                cores.len(),
                source_dims.len()
            )));
        }
        if truncation_errors.len() + 1 != cores.len() {
            return Err(Error::Argument(format!(
                "{} truncation errors for {} cores",
                truncation_errors.len(),
                cores.len()
            )));
        }
        let mut ranks = Vec::with_capacity(cores.len() + 1);
        ranks.push(1usize);
        for (j, core) in cores.iter().enumerate() {
            if core.rank() != 3 {
                return Err(Error::Argument(format!("core {j} is not 3-way")));
            }
            let d = core.dims();
            if d[0] != *ranks.last().unwrap() {
                return Err(Error::Argument(format!(
                    "core {j} leading rank {} breaks the chain (expected {})",
                    d[0],
                    ranks.last().unwrap()
                )));
            }
            if d[1] != source_dims[j] {
                return Err(Error::Argument(format!(
                    "core {j} axis size {} != source dim {}",
                    d[1], source_dims[j]
                )));
            }
            ranks.push(d[2]);
        }
        if *ranks.last().unwrap() != 1 {
            return Err(Error::Argument("trailing bond rank must be 1".into()));
        }
        if truncation_errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Argument("truncation errors must be finite and nonnegative".into()));
        }
        Ok(TTSketch { cores, ranks, truncation_errors, source_dims })
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    /// Bond ranks r_0..r_d (both ends are 1).
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn truncation_errors(&self) -> &[f64] {
        &self.truncation_errors
    }

    pub fn source_dims(&self) -> &[usize] {
        &self.source_dims
    }

    /// Total number of stored core entries.
    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|c| c.len()).sum()
    }

    /// Upper bound on the dense reconstruction error:
    /// sqrt of the sum of squared per-step truncation errors.
    pub fn reconstruction_error_bound(&self) -> f64 {
        self.truncation_errors.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Dense reconstruction by chaining the cores over bond indices.
    /// Verification only; inference contracts cores directly.
    pub fn reconstruct(&self, budget: ElementBudget) -> Result<DenseTensor> {
        let total: u64 = self.source_dims.iter().map(|&d| d as u64).product();
        budget.check(total, "dense reconstruction")?;
        // acc: (prod of handled axes) x r_j
        let first = &self.cores[0];
        let (n1, r1) = (first.dims()[1], first.dims()[2]);
        let mut acc = first.data().to_vec(); // (1*n1) x r1
        let mut acc_rows = n1;
        let mut acc_cols = r1;
        for core in &self.cores[1..] {
            let (rl, n, rr) = (core.dims()[0], core.dims()[1], core.dims()[2]);
            debug_assert_eq!(rl, acc_cols);
            // (acc_rows x rl) * (rl x n*rr) -> acc_rows x (n*rr)
            let cd = core.data();
            let mut next = vec![0.0; acc_rows * n * rr];
            for i in 0..acc_rows {
                for x in 0..rl {
                    let av = acc[i * rl + x];
                    if av == 0.0 {
                        continue;
                    }
                    let crow = &cd[x * n * rr..(x + 1) * n * rr];
                    let dst = &mut next[i * n * rr..(i + 1) * n * rr];
                    for (d, &cv) in dst.iter_mut().zip(crow) {
                        *d += av * cv;
                    }
                }
            }
            acc = next;
            acc_rows *= n;
            acc_cols = rr;
        }
        debug_assert_eq!(acc_cols, 1);
        DenseTensor::new(self.source_dims.clone(), acc)
    }

    /// Writes `<stem>.json` (manifest) plus one CTS1 file per core.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut core_files = Vec::with_capacity(self.cores.len());
        for (j, core) in self.cores.iter().enumerate() {
            let fname = format!("{stem}.core{j}.cts");
            core.save_cts1(&dir.join(&fname))?;
            core_files.push(fname);
        }
        let manifest = SketchManifest {
            core_count: self.cores.len(),
            ranks: self.ranks.clone(),
            source_dims: self.source_dims.clone(),
            truncation_errors: self.truncation_errors.clone(),
            core_files,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Internal(format!("manifest encode: {e}")))?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }

    /// Loads a sketch previously written by [`TTSketch::save`].
    pub fn load(dir: &Path, stem: &str) -> Result<TTSketch> {
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path)?;
        let manifest: SketchManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.core_files.len() != manifest.core_count {
            return Err(Error::Format(format!("{}: core file list length mismatch", path.display())));
        }
        let mut cores = Vec::with_capacity(manifest.core_count);
        for fname in &manifest.core_files {
            cores.push(DenseTensor::load_cts1(&dir.join(fname))?);
        }
        let sketch = TTSketch::from_parts(cores, manifest.truncation_errors, manifest.source_dims)?;
        if sketch.ranks != manifest.ranks {
            return Err(Error::Format("manifest ranks disagree with core shapes".into()));
        }
        Ok(sketch)
    }
}

#[derive(Serialize, Deserialize)]
struct SketchManifest {
    core_count: usize,
    ranks: Vec<usize>,
    source_dims: Vec<usize>,
    truncation_errors: Vec<f64>,
    core_files: Vec<String>,
}

/// Exact bond rank at position `j` (between axes j-1 and j, 1-based):
/// the smaller of the products of preceding and succeeding axis sizes.
pub fn full_bond_rank(dims: &[usize], bond: usize) -> usize {
    let before: usize = dims[..bond].iter().product();
    let after: usize = dims[bond..].iter().product();
    before.min(after)
}

/// Sequential tensor-train SVD of a dense summary.
///
/// Bond `j` keeps at most `min(cfg.rank, full_bond_rank)` singular
/// vectors; with `Rank::Full` nothing is truncated and every recorded
/// step error is zero.
pub fn tt_svd(phi: &DenseTensor, cfg: &SketchConfig) -> Result<TTSketch> {
    if !phi.has_finite_entries() {
        return Err(Error::Numeric("summary tensor has non-finite entries".into()));
    }
    if let Rank::Fixed(0) = cfg.rank {
        return Err(Error::Argument("rank must be at least 1".into()));
    }
    let dims = phi.dims().to_vec();
    let d = dims.len();
    let mut cores = Vec::with_capacity(d);
    let mut errors = Vec::with_capacity(d.saturating_sub(1));
    let mut carry = phi.data().to_vec();
    let mut r_prev = 1usize;
    for j in 0..d.saturating_sub(1) {
        let n_j = dims[j];
        let rows = r_prev * n_j;
        let cols: usize = dims[j + 1..].iter().product();
        let cap = full_bond_rank(&dims, j + 1);
        let max_rank = match cfg.rank {
            Rank::Fixed(r) => r.min(cap),
            Rank::Full => cap,
        };
        let matrix = DenseTensor::new(vec![rows, cols], carry)?;
        let step_seed = cfg.seed.wrapping_add((j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let svd = truncated_svd(&matrix, max_rank, step_seed)?;
        let k = svd.rank();
        let core = DenseTensor::new(vec![r_prev, n_j, k], svd.left.into_data())?;
        cores.push(core);
        errors.push(svd.discarded_norm);
        // carry = diag(s) * right_t
        let mut next = svd.right_t.into_data();
        for (x, &s) in svd.singular_values.iter().enumerate() {
            for v in &mut next[x * cols..(x + 1) * cols] {
                *v *= s;
            }
        }
        carry = next;
        r_prev = k;
    }
    let n_last = dims[d - 1];
    cores.push(DenseTensor::new(vec![r_prev, n_last, 1], carry)?);
    TTSketch::from_parts(cores, errors, dims)
}
