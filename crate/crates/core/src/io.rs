//! Versioned file formats for the CLI: JSON state and UPB files, JSON-lines
//! run records, and CSV histograms.
//!
//! Floating-point values go through serde_json's shortest round-trip decimal
//! encoding, so write/read cycles reproduce every double bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::bipartite::{BipartiteDims, DensityMatrix, GeneralizedUPB, ProductVector};
use crate::herm::{CMat, CVec, HermitianMatrix};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

fn pack_complex(values: impl Iterator<Item = Complex<f64>>) -> Vec<[f64; 2]> {
    values.map(|z| [z.re, z.im]).collect()
}

/// A density matrix on disk: row-major complex entries as [re, im] pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub format_version: u32,
    pub dims: [usize; 2],
    pub matrix: Vec<[f64; 2]>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl StateFile {
    pub fn from_density(rho: &DensityMatrix, metadata: BTreeMap<String, String>) -> Self {
        let dims = rho.dims();
        let m = rho.mat();
        let mut matrix = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                matrix.push([m[(i, j)].re, m[(i, j)].im]);
            }
        }
        Self {
            format_version: FORMAT_VERSION,
            dims: [dims.na, dims.nb],
            matrix,
            metadata,
        }
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        let dims = BipartiteDims::new(self.dims[0], self.dims[1])?;
        let n = dims.total();
        if self.matrix.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "state file holds {} entries, dims {}x{} need {}",
                self.matrix.len(),
                self.dims[0],
                self.dims[1],
                n * n
            )));
        }
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let [re, im] = self.matrix[i * n + j];
                m[(i, j)] = Complex::new(re, im);
            }
        }
        DensityMatrix::new(HermitianMatrix::new(m)?, dims)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported state file version {}",
                file.format_version
            )));
        }
        Ok(file)
    }
}

/// A generalized UPB on disk, with optional expansion coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpbFile {
    pub format_version: u32,
    pub dims: [usize; 2],
    pub members: Vec<UpbMember>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpbMember {
    pub phi: Vec<[f64; 2]>,
    pub chi: Vec<[f64; 2]>,
}

impl UpbFile {
    pub fn from_upb(upb: &GeneralizedUPB, p: Option<Vec<f64>>) -> Self {
        let dims = upb.dims;
        let members = upb
            .members
            .iter()
            .map(|pv| UpbMember {
                phi: pack_complex(pv.phi.iter().cloned()),
                chi: pack_complex(pv.chi.iter().cloned()),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            dims: [dims.na, dims.nb],
            members,
            p,
        }
    }

    pub fn to_upb(&self) -> Result<GeneralizedUPB> {
        let dims = BipartiteDims::new(self.dims[0], self.dims[1])?;
        let unpack = |pairs: &[[f64; 2]], n: usize| -> Result<CVec> {
            if pairs.len() != n {
                return Err(Error::InvalidInput(format!(
                    "factor length {} does not match dimension {n}",
                    pairs.len()
                )));
            }
            Ok(CVec::from_iterator(
                n,
                pairs.iter().map(|&[re, im]| Complex::new(re, im)),
            ))
        };
        let members = self
            .members
            .iter()
            .map(|m| {
                ProductVector::new(unpack(&m.phi, dims.na)?, unpack(&m.chi, dims.nb)?)
            })
            .collect::<Result<Vec<_>>>()?;
        GeneralizedUPB::new(dims, members)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// One line of a JSON-lines run log. Records carry everything needed to
/// replay the run: the command, its configuration, and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub status: String,
    pub scalars: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, status: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config: BTreeMap::new(),
            seed,
            status: status.to_string(),
            scalars: BTreeMap::new(),
        }
    }
}

/// Append records to a JSON-lines log, one object per line.
pub fn append_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for record in records {
        let line = serde_json::to_string(record)?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// A histogram with explicit bin edges; `edges` has one more entry than
/// `counts`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub const DEFAULT_BINS: usize = 50;

/// Uniform-bin histogram over the observed range. The top edge is inclusive.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::InvalidInput(
            "histogram needs at least one value and one bin".into(),
        ));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite);
    }
    // degenerate range: widen symmetrically so every value lands in a bin
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    // the accumulated edge drifts by a few ulps; the top edge is the maximum
    edges[bins] = hi;
    Ok(Histogram { edges, counts })
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        out.push_str(&format!(
            "{:?},{:?},{}\n",
            hist.edges[i],
            hist.edges[i + 1],
            count
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_histogram_csv(path: &Path) -> Result<Histogram> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    let mut counts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "bin_low,bin_high,count" {
                return Err(Error::InvalidInput("bad histogram header".into()));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "bad histogram row: {line}"
            )));
        }
        let low: f64 = parts[0]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad number: {}", parts[0])))?;
        let high: f64 = parts[1]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad number: {}", parts[1])))?;
        let count: u64 = parts[2]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad count: {}", parts[2])))?;
        if edges.is_empty() {
            edges.push(low);
        }
        edges.push(high);
        counts.push(count);
    }
    if counts.is_empty() {
        return Err(Error::InvalidInput("empty histogram".into()));
    }
    Ok(Histogram { edges, counts })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ico::{build_state, IcoConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn state_file_round_trip_is_bit_exact() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rho = DensityMatrix::random_mixed(dims, 4, &mut rng);
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "17".to_string());
        let file = StateFile::from_density(&rho, meta);
        let dir = std::env::temp_dir().join("extppt-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        file.write(&path).unwrap();
        let back = StateFile::read(&path).unwrap();
        assert_eq!(back.matrix, file.matrix);
        assert_eq!(back.metadata["seed"], "17");
        let rho2 = back.to_density().unwrap();
        assert_eq!(rho2.mat(), rho.mat());
    }

    #[test]
    fn state_file_rejects_wrong_entry_count() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let mut file = StateFile::from_density(&state.rho, BTreeMap::new());
        file.matrix.pop();
        assert!(file.to_density().is_err());
    }

    #[test]
    fn upb_file_round_trip_preserves_members() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let p: Vec<f64> = state.p.clone();
        let file = UpbFile::from_upb(&state.upb, Some(p.clone()));
        let dir = std::env::temp_dir().join("extppt-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("upb.json");
        file.write(&path).unwrap();
        let back = UpbFile::read(&path).unwrap();
        assert_eq!(back.p.as_deref(), Some(p.as_slice()));
        let upb = back.to_upb().unwrap();
        assert_eq!(upb.members.len(), state.upb.members.len());
        for (a, b) in upb.members.iter().zip(state.upb.members.iter()) {
            assert_eq!(a.phi, b.phi);
            assert_eq!(a.chi, b.chi);
        }
    }

    #[test]
    fn run_records_append_and_read_back() {
        let dir = std::env::temp_dir().join("extppt-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("records.jsonl");
        let _ = fs::remove_file(&path);
        let mut a = RunRecord::new("search", 5, "converged");
        a.scalars.insert("residual".into(), 3.25e-11);
        let b = RunRecord::new("search", 6, "non_converged");
        append_records(&path, &[a.clone()]).unwrap();
        append_records(&path, std::slice::from_ref(&b)).unwrap();
        let records = read_records(&path).unwrap();
        assert_eq!(records, vec![a, b]);
    }

    #[test]
    fn histogram_bins_and_csv_round_trip() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let hist = histogram(&values, 50).unwrap();
        assert_eq!(hist.counts.len(), 50);
        assert_eq!(hist.edges.len(), 51);
        assert_eq!(hist.counts.iter().sum::<u64>(), 100);
        assert_eq!(hist.edges[0], 0.0);
        assert_eq!(*hist.edges.last().unwrap(), 0.99);
        let dir = std::env::temp_dir().join("extppt-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("hist.csv");
        write_histogram_csv(&path, &hist).unwrap();
        let back = read_histogram_csv(&path).unwrap();
        assert_eq!(back, hist);
    }

    #[test]
    fn histogram_handles_constant_values() {
        let hist = histogram(&[1.0 / 6.0; 20], 10).unwrap();
        assert_eq!(hist.counts.iter().sum::<u64>(), 20);
    }

    #[test]
    fn unparsable_json_is_an_error() {
        let dir = std::env::temp_dir().join("extppt-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.json");
        fs::write(&path, "not json").unwrap();
        assert!(StateFile::read(&path).is_err());
    }
}
