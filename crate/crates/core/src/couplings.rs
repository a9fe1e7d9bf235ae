//! Disordered couplings: the complex quartic tensor, the Hermitian hopping
//! matrix, and per-realization random streams.

use std::io::{Read, Write};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};

/// Number of unordered pairs `i < j` among `n` sites.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

/// Lexicographic index of the pair `(i, j)`, `i < j`.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// Random quartic couplings `J̃_{ijkl}`.
///
/// Only canonical quadruples are stored: `i < j`, `k < l` and
/// `(i, j) <= (k, l)` lexicographically. Every other index order is recovered
/// through antisymmetry in each pair and `J̃_{ijkl} = conj(J̃_{klij})`.
/// The `1/(2N)^{3/2}` prefactor is not part of the stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    n_sites: usize,
    scale: f64,
    // packed upper triangle of the pair-by-pair Hermitian matrix
    entries: Vec<C64>,
}

impl CouplingTensor {
    /// Tensor with every coupling set to zero.
    pub fn zeros(n_sites: usize, scale: f64) -> Result<Self> {
        if n_sites < 4 {
            return domain(format!("quartic couplings need at least 4 sites, got {n_sites}"));
        }
        let p = pair_count(n_sites);
        Ok(Self { n_sites, scale, entries: vec![C64::new(0.0, 0.0); p * (p + 1) / 2] })
    }

    /// Draw a Gaussian ensemble member with `⟨|J̃|²⟩ = J²`.
    ///
    /// Off-diagonal pair blocks get independent real and imaginary parts of
    /// variance `J²/2`; entries with `{i,j} = {k,l}` are real with variance
    /// `J²`.
    pub fn sample<R: Rng + ?Sized>(n_sites: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let mut t = Self::zeros(n_sites, scale)?;
        let p = pair_count(n_sites);
        let half = scale * std::f64::consts::FRAC_1_SQRT_2;
        let mut idx = 0;
        for a in 0..p {
            for b in a..p {
                t.entries[idx] = if a == b {
                    let x: f64 = rng.sample(StandardNormal);
                    C64::new(scale * x, 0.0)
                } else {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(half * re, half * im)
                };
                idx += 1;
            }
        }
        Ok(t)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Disorder strength `J`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Stored value at canonical pair indices `a <= b`.
    #[inline]
    pub fn pair_entry(&self, a: usize, b: usize) -> C64 {
        if a <= b {
            self.entries[self.packed_index(a, b)]
        } else {
            self.entries[self.packed_index(b, a)].conj()
        }
    }

    #[inline]
    fn packed_index(&self, a: usize, b: usize) -> usize {
        let p = pair_count(self.n_sites);
        // rows 0..a of the upper triangle hold p + (p-1) + ... + (p-a+1) entries
        a * p - a * a.saturating_sub(1) / 2 + (b - a)
    }

    /// `J̃_{ijkl}` for arbitrary indices.
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        if i == j || k == l {
            return C64::new(0.0, 0.0);
        }
        let mut sign = 1.0;
        let (i, j) = if i < j { (i, j) } else { sign = -sign; (j, i) };
        let (k, l) = if k < l { (k, l) } else { sign = -sign; (l, k) };
        let a = pair_index(self.n_sites, i, j);
        let b = pair_index(self.n_sites, k, l);
        self.pair_entry(a, b) * sign
    }

    /// Overwrite the canonical entry for pairs `(i<j)`, `(k<l)` (and by
    /// implication its conjugate partner).
    pub fn set_canonical(&mut self, i: usize, j: usize, k: usize, l: usize, value: C64) -> Result<()> {
        if !(i < j && k < l && l < self.n_sites && j < self.n_sites) {
            return domain(format!("({i},{j},{k},{l}) is not a canonical quadruple"));
        }
        let a = pair_index(self.n_sites, i, j);
        let b = pair_index(self.n_sites, k, l);
        if a == b && value.im != 0.0 {
            return domain("entries with {i,j} = {k,l} must be real");
        }
        let (a, b, v) = if a <= b { (a, b, value) } else { (b, a, value.conj()) };
        let idx = self.packed_index(a, b);
        self.entries[idx] = v;
        Ok(())
    }

    /// Canonical entries as `(i, j, k, l, J̃)` with `(i,j) <= (k,l)`.
    pub fn canonical_entries(&self) -> Vec<(usize, usize, usize, usize, C64)> {
        let pairs = pairs(self.n_sites);
        let mut out = Vec::with_capacity(self.entries.len());
        for a in 0..pairs.len() {
            for b in a..pairs.len() {
                let (i, j) = pairs[a];
                let (k, l) = pairs[b];
                out.push((i, j, k, l, self.pair_entry(a, b)));
            }
        }
        out
    }

    /// Write the little-endian `SYKJ` binary layout.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SYKJ")?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_sites as u32).to_le_bytes())?;
        w.write_all(&self.scale.to_le_bytes())?;
        for (i, j, k, l, v) in self.canonical_entries() {
            w.write_all(&[i as u8, j as u8, k as u8, l as u8])?;
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a tensor written by [`CouplingTensor::dump`].
    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 20 || &buf[..4] != b"SYKJ" {
            return Err(Error::Format("missing SYKJ header".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let scale = f64::from_le_bytes(buf[12..20].try_into().unwrap());
        if n > 255 {
            return Err(Error::Format(format!("site count {n} does not fit the u8 index layout")));
        }
        let mut t = Self::zeros(n, scale)?;
        let body = &buf[20..];
        const REC: usize = 4 + 16;
        if body.len() % REC != 0 {
            return Err(Error::Format("truncated entry record".into()));
        }
        let expected = t.entries.len();
        if body.len() / REC != expected {
            return Err(Error::Format(format!(
                "expected {expected} canonical entries, found {}",
                body.len() / REC
            )));
        }
        for rec in body.chunks_exact(REC) {
            let (i, j, k, l) = (rec[0] as usize, rec[1] as usize, rec[2] as usize, rec[3] as usize);
            let re = f64::from_le_bytes(rec[4..12].try_into().unwrap());
            let im = f64::from_le_bytes(rec[12..20].try_into().unwrap());
            t.set_canonical(i, j, k, l, C64::new(re, im))
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(t)
    }
}

const DUMP_VERSION: u32 = 1;

/// All pairs `i < j` in lexicographic order.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(pair_count(n));
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Random Hermitian hopping amplitudes `t_{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoppingMatrix {
    n_sites: usize,
    scale: f64,
    entries: Vec<C64>,
}

impl HoppingMatrix {
    pub fn zeros(n_sites: usize, scale: f64) -> Self {
        Self { n_sites, scale, entries: vec![C64::new(0.0, 0.0); n_sites * n_sites] }
    }

    /// Diagonal real with variance `t²`, off-diagonal complex with
    /// `⟨|t_{ij}|²⟩ = t²`.
    pub fn sample<R: Rng + ?Sized>(n_sites: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if n_sites < 2 {
            return domain(format!("hopping needs at least 2 sites, got {n_sites}"));
        }
        let mut h = Self::zeros(n_sites, scale);
        let half = scale * std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..n_sites {
            for j in i..n_sites {
                let v = if i == j {
                    let x: f64 = rng.sample(StandardNormal);
                    C64::new(scale * x, 0.0)
                } else {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    C64::new(half * re, half * im)
                };
                h.entries[i * n_sites + j] = v;
                h.entries[j * n_sites + i] = v.conj();
            }
        }
        Ok(h)
    }

    pub fn from_entries(n_sites: usize, scale: f64, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != n_sites * n_sites {
            return domain("hopping entries must be N×N");
        }
        for i in 0..n_sites {
            for j in 0..n_sites {
                if entries[i * n_sites + j] != entries[j * n_sites + i].conj() {
                    return domain(format!("hopping matrix is not Hermitian at ({i},{j})"));
                }
            }
        }
        Ok(Self { n_sites, scale, entries })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.n_sites + j]
    }

    /// Dense copy as a `faer` matrix.
    pub fn to_mat(&self) -> faer::Mat<C64> {
        faer::Mat::from_fn(self.n_sites, self.n_sites, |i, j| self.get(i, j))
    }
}

/// Reproducible, order-independent random streams for a disorder ensemble.
///
/// Stream `r` is ChaCha20 keyed by the master seed and positioned on stream
/// id `r`, so its output depends only on `(master_seed, r)` and never on
/// which other streams were consumed or by which worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisorderEnsemble {
    pub master_seed: u64,
    pub realization_count: usize,
}

impl DisorderEnsemble {
    pub fn new(master_seed: u64, realization_count: usize) -> Result<Self> {
        if realization_count == 0 {
            return domain("an ensemble needs at least one realization");
        }
        Ok(Self { master_seed, realization_count })
    }

    /// Coupling stream for realization `r`.
    pub fn stream(&self, r: usize) -> ChaCha20Rng {
        self.lane(r, 0)
    }

    /// Independent auxiliary stream `lane` of realization `r` (lane 0 is the
    /// coupling stream).
    pub fn lane(&self, r: usize, lane: u16) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream(((lane as u64) << 48) | r as u64);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_is_lexicographic() {
        let n = 7;
        for (idx, (i, j)) in pairs(n).into_iter().enumerate() {
            assert_eq!(pair_index(n, i, j), idx);
        }
    }

    #[test]
    fn antisymmetry_and_conjugation() {
        let ens = DisorderEnsemble::new(3, 1).unwrap();
        let t = CouplingTensor::sample(6, 1.0, &mut ens.stream(0)).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    for l in 0..6 {
                        let v = t.get(i, j, k, l);
                        assert_eq!(v + t.get(j, i, k, l), C64::new(0.0, 0.0));
                        assert_eq!(v + t.get(i, j, l, k), C64::new(0.0, 0.0));
                        assert_eq!(v, t.get(k, l, i, j).conj());
                    }
                }
            }
        }
        assert_eq!(t.get(0, 1, 0, 1).im, 0.0);
    }

    #[test]
    fn too_few_sites() {
        let mut rng = DisorderEnsemble::new(0, 1).unwrap().stream(0);
        assert!(CouplingTensor::sample(3, 1.0, &mut rng).is_err());
        assert!(HoppingMatrix::sample(1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn hopping_is_exactly_hermitian() {
        let mut rng = DisorderEnsemble::new(9, 1).unwrap().stream(0);
        let h = HoppingMatrix::sample(8, 1.0, &mut rng).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(h.get(i, j), h.get(j, i).conj());
            }
        }
    }

    #[test]
    fn streams_are_order_independent() {
        let ens = DisorderEnsemble::new(42, 8).unwrap();
        let direct: Vec<u64> = {
            let mut s = ens.stream(3);
            (0..16).map(|_| s.random()).collect()
        };
        let after: Vec<u64> = {
            for r in 0..3 {
                let mut s = ens.stream(r);
                for _ in 0..100 {
                    let _: u64 = s.random();
                }
            }
            let mut s = ens.stream(3);
            (0..16).map(|_| s.random()).collect()
        };
        assert_eq!(direct, after);

        let other = DisorderEnsemble::new(43, 8).unwrap();
        let a: u64 = ens.stream(0).random();
        let b: u64 = other.stream(0).random();
        assert_ne!(a, b);
        let c: u64 = ens.lane(0, 1).random();
        assert_ne!(a, c);
    }

    #[test]
    fn dump_load_roundtrip() {
        let mut rng = DisorderEnsemble::new(5, 1).unwrap().stream(0);
        let t = CouplingTensor::sample(6, 1.3, &mut rng).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SYKJ");
        assert_eq!(CouplingTensor::load(&buf[..]).unwrap(), t);
        assert!(CouplingTensor::load(&buf[..buf.len() - 3]).is_err());
        assert!(CouplingTensor::load(&b"JKYS0000000000000000"[..]).is_err());
    }

    #[test]
    fn coupling_variance() {
        let ens = DisorderEnsemble::new(11, 100_000).unwrap();
        let (mut off, mut diag) = (0.0, 0.0);
        for r in 0..ens.realization_count {
            let t = CouplingTensor::sample(4, 1.0, &mut ens.stream(r)).unwrap();
            off += t.get(0, 1, 2, 3).norm_sqr();
            diag += t.get(0, 2, 0, 2).norm_sqr();
        }
        let n = ens.realization_count as f64;
        assert!((off / n - 1.0).abs() < 0.02, "{}", off / n);
        assert!((diag / n - 1.0).abs() < 0.02, "{}", diag / n);
    }

    #[test]
    fn hopping_variance() {
        let ens = DisorderEnsemble::new(12, 100_000).unwrap();
        let mut acc = 0.0;
        for r in 0..ens.realization_count {
            acc += HoppingMatrix::sample(2, 1.0, &mut ens.stream(r)).unwrap().get(0, 1).norm_sqr();
        }
        assert!((acc / ens.realization_count as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn accessor_matches_materialized_tensor() {
        let n = 6;
        let t = CouplingTensor::sample(n, 0.8, &mut DisorderEnsemble::new(13, 1).unwrap().stream(0)).unwrap();
        // fill N⁴ array from the canonical list alone
        let mut full = vec![C64::new(0.0, 0.0); n.pow(4)];
        let at = |i: usize, j: usize, k: usize, l: usize| ((i * n + j) * n + k) * n + l;
        for (i, j, k, l, v) in t.canonical_entries() {
            for (a, b, s1) in [(i, j, 1.0), (j, i, -1.0)] {
                for (c, d, s2) in [(k, l, 1.0), (l, k, -1.0)] {
                    full[at(a, b, c, d)] = v * (s1 * s2);
                    full[at(c, d, a, b)] = v.conj() * (s1 * s2);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        assert_eq!(t.get(i, j, k, l), full[at(i, j, k, l)]);
                    }
                }
            }
        }
    }
}
