//! Codebook data model, CBK1 file I/O, nearest-token quantization, and
//! synthetic fixture generation.
//!
//! Embeddings are stored as `f32` (matching the on-disk format) and promoted
//! to `f64` for all arithmetic, so save/load round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CBK1";
const VERSION: u32 = 1;

/// A vector-quantization codebook: `n` embedding rows of dimension `d`.
/// Row order is the token index order; indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl Codebook {
    /// Builds a codebook from row-major `f32` data, rejecting non-finite
    /// entries and degenerate shapes.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n < 2 {
            return Err(Error::validation(format!("n must be >= 2, got {n}")));
        }
        if d < 1 {
            return Err(Error::validation("d must be >= 1"));
        }
        if data.len() != n * d {
            return Err(Error::validation(format!(
                "data length {} does not match n*d = {}",
                data.len(),
                n * d
            )));
        }
        for (i, chunk) in data.chunks_exact(d).enumerate() {
            if chunk.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite entry in row {i}"
                )));
            }
        }
        Ok(Codebook { n, d, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Row `i` as stored (`f32`).
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Row `i` promoted to `f64` for arithmetic.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn raw_data(&self) -> &[f32] {
        &self.data
    }

    /// Euclidean distance between rows `i` and `j`, accumulated in `f64`
    /// in index order.
    pub fn row_distance(&self, i: usize, j: usize) -> f64 {
        let a = self.row(i);
        let b = self.row(j);
        let mut acc = 0.0f64;
        for t in 0..self.d {
            let diff = a[t] as f64 - b[t] as f64;
            acc += diff * diff;
        }
        acc.sqrt()
    }
}

/// A query vector to be quantized against a codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature vector has non-finite entry"));
        }
        Ok(FeatureVector { values })
    }
}

/// Reads a CBK1 codebook file (little-endian: magic, u32 version, u64 N,
/// u64 d, then N*d f32 values row-major).
pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected \"CBK1\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported CBK1 version {version}"
        )));
    }
    let n = read_u64(&mut r, path)? as usize;
    let d = read_u64(&mut r, path)? as usize;
    if n < 2 {
        return Err(Error::validation(format!("codebook has N={n}, need N >= 2")));
    }
    if d < 1 {
        return Err(Error::validation("codebook has d=0, need d >= 1"));
    }
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::format("N*d overflows"))?;
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format("trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(count);
    for chunk in buf.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    for (i, row) in data.chunks_exact(d).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite entry in row {i}"
            )));
        }
    }
    Ok(Codebook { n, d, data })
}

/// Writes a codebook in the CBK1 format. `load_codebook` of the result
/// reproduces the input bit-exactly.
pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(cb.n as u64).to_le_bytes())?;
        w.write_all(&(cb.d as u64).to_le_bytes())?;
        for v in &cb.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Nearest-token quantization: `argmin_k ||z - v_k||_2`, ties broken by the
/// smallest index.
pub fn quantize(z: &FeatureVector, cb: &Codebook) -> Result<usize> {
    if z.values.len() != cb.d {
        return Err(Error::validation(format!(
            "query dimension {} does not match codebook d={}",
            z.values.len(),
            cb.d
        )));
    }
    let mut best = 0usize;
    let mut best_sq = f64::INFINITY;
    for k in 0..cb.n {
        let row = cb.row(k);
        let mut acc = 0.0f64;
        for t in 0..cb.d {
            let diff = z.values[t] - row[t] as f64;
            acc += diff * diff;
        }
        if acc < best_sq {
            best_sq = acc;
            best = k;
        }
    }
    Ok(best)
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(b))
}

/// Standard-normal sampling via Box-Muller, so fixture bytes depend only on
/// the ChaCha stream and not on an external distribution crate's internals.
struct StdNormal;

impl Distribution<f64> for StdNormal {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            if u1 > 0.0 {
                return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
        }
    }
}

/// Generates well-separated isotropic Gaussian blobs. Centers are placed
/// pairwise at least `separation * sigma` apart; labels give the generating
/// blob per row. Deterministic for a fixed seed.
pub fn synth_blobs(
    num_blobs: usize,
    points_per_blob: &[usize],
    d: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Codebook, Vec<usize>)> {
    if num_blobs == 0 {
        return Err(Error::validation("num_blobs must be positive"));
    }
    if points_per_blob.len() != num_blobs {
        return Err(Error::validation(format!(
            "points_per_blob has {} entries, expected {num_blobs}",
            points_per_blob.len()
        )));
    }
    if points_per_blob.iter().any(|&p| p == 0) {
        return Err(Error::validation("each blob needs at least one point"));
    }
    if !(separation > 0.0) {
        return Err(Error::validation("separation must be > 0"));
    }
    if !(sigma > 0.0) {
        return Err(Error::validation("sigma must be > 0"));
    }
    let total: usize = points_per_blob.iter().sum();
    if total < 2 {
        return Err(Error::validation("need at least 2 points total"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_gap = separation * sigma;
    // Centers sampled in a cube wide enough that placement rarely fails;
    // bounded retries guard the pathological cases.
    let side = min_gap * (num_blobs as f64 + 1.0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_blobs);
    for b in 0..num_blobs {
        let mut placed = false;
        for _ in 0..1000 {
            let cand: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * side).collect();
            let ok = centers.iter().all(|c| {
                let sq: f64 = c
                    .iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sq.sqrt() >= min_gap
            });
            if ok {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::resource(format!(
                "failed to place center {b} after 1000 retries (separation too tight)"
            )));
        }
    }

    let normal = StdNormal;
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (b, &count) in points_per_blob.iter().enumerate() {
        for _ in 0..count {
            for t in 0..d {
                let v = centers[b][t] + sigma * normal.sample(&mut rng);
                data.push(v as f32);
            }
            labels.push(b);
        }
    }
    Ok((Codebook::new(total, d, data)?, labels))
}

/// Two dense blobs joined by a sparse chain of bridge points (the classic
/// single-linkage chaining fixture). Labels are 0/1 for the blobs and 2 for
/// bridge points; see [`bridge_two_way_truth`] for the 2-way ground truth.
/// Parameters are frozen; only the seed varies.
pub fn synth_bridge(seed: u64) -> (Codebook, Vec<usize>) {
    const POINTS_PER_BLOB: usize = 120;
    const BRIDGE_POINTS: usize = 8;
    const SIGMA: f64 = 1.0;
    const BLOB_GAP: f64 = 24.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StdNormal;
    let centers = [[0.0f64, 0.0], [BLOB_GAP, 0.0]];
    let mut data: Vec<f32> = Vec::new();
    let mut labels = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..POINTS_PER_BLOB {
            data.push((c[0] + SIGMA * normal.sample(&mut rng)) as f32);
            data.push((c[1] + SIGMA * normal.sample(&mut rng)) as f32);
            labels.push(b);
        }
    }
    // Bridge: evenly spaced along the inter-center segment, slight jitter.
    let x0 = 4.0;
    let x1 = BLOB_GAP - 4.0;
    for i in 0..BRIDGE_POINTS {
        let frac = (i as f64 + 0.5) / BRIDGE_POINTS as f64;
        let x = x0 + frac * (x1 - x0);
        let y = 0.1 * normal.sample(&mut rng);
        data.push(x as f32);
        data.push(y as f32);
        labels.push(2);
    }
    let cb = Codebook::new(labels.len(), 2, data).expect("fixture is finite by construction");
    (cb, labels)
}

/// Collapses the bridge fixture's 3-way labels to the 2-way blob ground
/// truth: bridge points take the label of their nearest blob centroid.
pub fn bridge_two_way_truth(cb: &Codebook, labels: &[usize]) -> Vec<usize> {
    let mut centroids = [[0.0f64; 2]; 2];
    let mut counts = [0usize; 2];
    for (i, &l) in labels.iter().enumerate() {
        if l < 2 {
            let row = cb.row(i);
            centroids[l][0] += row[0] as f64;
            centroids[l][1] += row[1] as f64;
            counts[l] += 1;
        }
    }
    for l in 0..2 {
        centroids[l][0] /= counts[l] as f64;
        centroids[l][1] /= counts[l] as f64;
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l < 2 {
                l
            } else {
                let row = cb.row(i);
                let sq = |c: &[f64; 2]| {
                    let dx = row[0] as f64 - c[0];
                    let dy = row[1] as f64 - c[1];
                    dx * dx + dy * dy
                };
                if sq(&centroids[0]) <= sq(&centroids[1]) {
                    0
                } else {
                    1
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny() -> Codebook {
        Codebook::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]).unwrap()
    }

    #[test]
    fn roundtrip_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cb.cbk");
        let cb = tiny();
        save_codebook(&cb, &path).unwrap();
        let back = load_codebook(&path).unwrap();
        assert_eq!(cb, back);
    }

    #[test]
    fn file_size_matches_format() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cb.cbk");
        let cb = Codebook::new(2, 1, vec![0.0, 1.0]).unwrap();
        save_codebook(&cb, &path).unwrap();
        // magic(4) + version(4) + n(8) + d(8) + 2 f32 payload(8)
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 8);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.cbk");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        match load_codebook(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn nan_row_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.cbk");
        let mut data = vec![0.0f32; 10];
        data[7] = f32::NAN;
        // bypass the constructor to craft the bad file
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CBK1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&10u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        for v in &data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        match load_codebook(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("row 7"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trunc.cbk");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CBK1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]); // far too short
        std::fs::write(&path, bytes).unwrap();
        assert!(load_codebook(&path).is_err());
    }

    #[test]
    fn quantize_exact_match() {
        let cb = tiny();
        let z = FeatureVector::new(cb.row_f64(3)).unwrap();
        assert_eq!(quantize(&z, &cb).unwrap(), 3);
    }

    #[test]
    fn quantize_nearest() {
        let cb = Codebook::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let z = FeatureVector::new(vec![0.9, 0.1]).unwrap();
        assert_eq!(quantize(&z, &cb).unwrap(), 0);
    }

    #[test]
    fn quantize_tie_breaks_low() {
        let cb = Codebook::new(2, 1, vec![0.0, 2.0]).unwrap();
        let z = FeatureVector::new(vec![1.0]).unwrap();
        assert_eq!(quantize(&z, &cb).unwrap(), 0);
    }

    #[test]
    fn quantize_dim_mismatch() {
        let cb = tiny();
        let z = FeatureVector::new(vec![0.0; 3]).unwrap();
        assert!(matches!(quantize(&z, &cb), Err(Error::Validation(_))));
    }

    #[test]
    fn blobs_shape_and_determinism() {
        let (cb, labels) = synth_blobs(2, &[3, 3], 2, 20.0, 1.0, 1).unwrap();
        assert_eq!(cb.n(), 6);
        assert_eq!(cb.d(), 2);
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
        let (cb2, labels2) = synth_blobs(2, &[3, 3], 2, 20.0, 1.0, 1).unwrap();
        assert_eq!(cb, cb2);
        assert_eq!(labels, labels2);
    }

    #[test]
    fn blobs_reject_zero_separation() {
        assert!(matches!(
            synth_blobs(2, &[3, 3], 2, 0.0, 1.0, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bridge_determinism_and_totality() {
        let (cb, labels) = synth_bridge(7);
        let (cb2, labels2) = synth_bridge(7);
        assert_eq!(cb, cb2);
        assert_eq!(labels, labels2);
        assert_eq!(labels.len(), cb.n());
        assert!(labels.iter().filter(|&&l| l == 0).count() >= 100);
        assert!(labels.iter().filter(|&&l| l == 1).count() >= 100);
        let bridge = labels.iter().filter(|&&l| l == 2).count();
        assert!((5..=10).contains(&bridge));
        let truth = bridge_two_way_truth(&cb, &labels);
        assert!(truth.iter().all(|&l| l < 2));
    }
}
