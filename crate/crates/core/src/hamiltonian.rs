//! Sparse Hermitian matrices for every model in the laboratory.
//!
//! All builders share one assembly scheme: the operator is applied to each
//! basis state `|a⟩`, which yields column `a`; Hermiticity then gives row `a`
//! as its conjugate. Rows are therefore independent and assembled in
//! parallel without any merging across workers.

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::couplings::{pair_index, CouplingTensor, HoppingMatrix};
use crate::error::{domain, Error, Result};
use crate::fock::{annihilate, apply_bilinear, create, BasisState, FockSpace, FullSpace, MAX_DENSE_SITES};

/// Stored magnitudes at or below this are dropped.
pub const ZERO_CUTOFF: f64 = 1e-15;

/// Which space a matrix acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisTag {
    Sector { n_sites: usize, charge: usize },
    Full { n_sites: usize },
    Dicke { n_atoms: usize, photon_cutoff: usize },
}

/// Row-compressed Hermitian matrix; row `a` holds `(b, ⟨a|H|b⟩)` sorted by
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
    tag: BasisTag,
}

impl SparseHermitian {
    /// Compress unsorted rows, summing duplicate columns and dropping
    /// entries with `|v| <= ZERO_CUTOFF`.
    pub fn from_rows(tag: BasisTag, rows: Vec<Vec<(u32, C64)>>) -> Self {
        let dim = rows.len();
        let rows: Vec<Vec<(u32, C64)>> = rows
            .into_par_iter()
            .map(|mut row| {
                row.sort_unstable_by_key(|e| e.0);
                let mut merged: Vec<(u32, C64)> = Vec::with_capacity(row.len());
                for (c, v) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += v,
                        _ => merged.push((c, v)),
                    }
                }
                merged.retain(|e| e.1.norm() > ZERO_CUTOFF);
                merged.shrink_to_fit();
                merged
            })
            .collect();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals, tag }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn tag(&self) -> BasisTag {
        self.tag
    }

    /// Stored `(column, value)` pairs of row `a`.
    pub fn row(&self, a: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    /// `⟨a|H|b⟩`, zero when not stored.
    pub fn get(&self, a: usize, b: usize) -> C64 {
        let r = self.row_ptr[a]..self.row_ptr[a + 1];
        match self.cols[r.clone()].binary_search(&(b as u32)) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// `y = H x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        let row = |(a, ya): (usize, &mut C64)| {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[a]..self.row_ptr[a + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *ya = acc;
        };
        if self.nnz() > 1 << 16 {
            y.par_iter_mut().enumerate().for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.matvec(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.dim, self.dim);
        for a in 0..self.dim {
            for (b, v) in self.row(a) {
                m[(a, b)] = v;
            }
        }
        m
    }

    /// `max |H_ab − conj(H_ba)|` over stored entries.
    pub fn hermiticity_defect(&self) -> f64 {
        (0..self.dim)
            .map(|a| {
                self.row(a)
                    .map(|(b, v)| (v - self.get(b, a).conj()).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.get(a, a).re).collect()
    }

    /// `α·self + β·other` on the same basis.
    pub fn combine(&self, alpha: f64, other: &SparseHermitian, beta: f64) -> Result<Self> {
        if self.dim != other.dim || self.tag != other.tag {
            return domain("cannot combine matrices on different bases");
        }
        let rows = (0..self.dim)
            .map(|a| {
                self.row(a)
                    .map(|(b, v)| (b as u32, v * alpha))
                    .chain(other.row(a).map(|(b, v)| (b as u32, v * beta)))
                    .collect()
            })
            .collect();
        Ok(Self::from_rows(self.tag, rows))
    }
}

fn tag_of<S: FockSpace>(space: &S) -> BasisTag {
    let n = space.n_sites();
    if space.dim() == 1usize << n {
        BasisTag::Full { n_sites: n }
    } else {
        BasisTag::Sector { n_sites: n, charge: space.state(0).count_ones() as usize }
    }
}

/// Assemble from a column action: `action(bits, out)` pushes `(b, ⟨b|H|a⟩)`
/// for `|a⟩ = |bits⟩`. Targets outside the space are a logic error.
fn assemble<S, F>(space: &S, action: F) -> SparseHermitian
where
    S: FockSpace,
    F: Fn(u32, &mut Vec<(u32, C64)>) + Sync,
{
    let rows: Vec<Vec<(u32, C64)>> = (0..space.dim())
        .into_par_iter()
        .map_init(Vec::new, |buf, a| {
            buf.clear();
            action(space.state(a), buf);
            buf.iter()
                .map(|&(bits, amp)| {
                    let b = space.index_of(bits).expect("operator left the space");
                    (b as u32, amp.conj())
                })
                .collect()
        })
        .collect();
    SparseHermitian::from_rows(tag_of(space), rows)
}

fn check_sites<S: FockSpace>(n: usize, space: &S) -> Result<()> {
    if n != space.n_sites() {
        return domain(format!("couplings have {n} sites but the basis has {}", space.n_sites()));
    }
    Ok(())
}

fn syk_prefactor(n: usize) -> f64 {
    (2.0 * n as f64).powf(-1.5)
}

/// Occupied and empty site lists of `bits` over `n` sites.
fn split_sites(bits: u32, n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&s| bits >> s & 1 == 1)
}

/// Push the quartic part `Σ_{ijkl} J̃/(2N)^{3/2} c†_i c†_j c_k c_l` applied to
/// `|bits⟩`. The full sum is four times the sum over `i<j`, `k<l`.
fn quartic_column(t: &CouplingTensor, bits: u32, out: &mut Vec<(u32, C64)>, fermionic: bool) {
    let n = t.n_sites();
    let w = 4.0 * syk_prefactor(n);
    let (occ, _) = split_sites(bits, n);
    for (x, &k) in occ.iter().enumerate() {
        for &l in &occ[x + 1..] {
            // c_k c_l: annihilate l first
            let (b1, s1) = annihilate(l, bits).unwrap();
            let (b2, s2) = annihilate(k, b1).unwrap();
            let q = pair_index(n, k, l);
            for i in 0..n {
                if b2 >> i & 1 == 1 {
                    continue;
                }
                for j in i + 1..n {
                    if b2 >> j & 1 == 1 {
                        continue;
                    }
                    let (b3, s3) = create(j, b2).unwrap();
                    let (b4, s4) = create(i, b3).unwrap();
                    let v = t.pair_entry(pair_index(n, i, j), q);
                    let sign = if fermionic { s1 * s2 * s3 * s4 } else { 1.0 };
                    out.push((b4, v * (w * sign)));
                }
            }
        }
    }
}

/// `H = Σ J̃_{ijkl}/(2N)^{3/2} c†_i c†_j c_k c_l − μ Q̂` on `space`.
pub fn build_syk<S: FockSpace>(tensor: &CouplingTensor, mu: f64, space: &S) -> Result<SparseHermitian> {
    check_sites(tensor.n_sites(), space)?;
    Ok(assemble(space, |bits, out| {
        quartic_column(tensor, bits, out, true);
        if mu != 0.0 {
            out.push((bits, C64::new(-mu * bits.count_ones() as f64, 0.0)));
        }
    }))
}

/// One-body coefficients `B_{xy}` (prefactor included) of the four
/// Kronecker-delta terms that make the quartic particle-hole symmetric.
pub fn ph_bilinear(tensor: &CouplingTensor) -> Vec<Vec<C64>> {
    let n = tensor.n_sites();
    let w = 0.5 * syk_prefactor(n);
    let mut b = vec![vec![C64::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // δ_ik c†_j c_l with k = i, l free
                b[j][k] += tensor.get(i, j, i, k) * w;
                // −δ_il c†_j c_k
                b[j][k] -= tensor.get(i, j, k, i) * w;
                // −δ_jk c†_i c_l
                b[i][k] -= tensor.get(i, j, j, k) * w;
                // δ_jl c†_i c_k
                b[i][k] += tensor.get(i, j, k, j) * w;
            }
        }
    }
    b
}

/// SYK Hamiltonian with the particle-hole restoring one-body terms.
pub fn build_syk_ph<S: FockSpace>(tensor: &CouplingTensor, mu: f64, space: &S) -> Result<SparseHermitian> {
    check_sites(tensor.n_sites(), space)?;
    let b = ph_bilinear(tensor);
    let n = tensor.n_sites();
    Ok(assemble(space, |bits, out| {
        quartic_column(tensor, bits, out, true);
        bilinear_column(&b, n, bits, out, 1.0);
        if mu != 0.0 {
            out.push((bits, C64::new(-mu * bits.count_ones() as f64, 0.0)));
        }
    }))
}

fn bilinear_column(b: &[Vec<C64>], n: usize, bits: u32, out: &mut Vec<(u32, C64)>, scale: f64) {
    for j in 0..n {
        if bits >> j & 1 == 0 {
            continue;
        }
        for i in 0..n {
            if let Some((t, s)) = apply_bilinear(i, j, BasisState(bits)) {
                let v = b[i][j];
                if v != C64::new(0.0, 0.0) {
                    out.push((t.0, v * (s * scale)));
                }
            }
        }
    }
}

/// `H = (1/√N) Σ t_ij c†_i c_j`.
pub fn build_free_fermion<S: FockSpace>(hopping: &HoppingMatrix, space: &S) -> Result<SparseHermitian> {
    check_sites(hopping.n_sites(), space)?;
    let n = hopping.n_sites();
    let t: Vec<Vec<C64>> = (0..n).map(|i| (0..n).map(|j| hopping.get(i, j)).collect()).collect();
    let scale = 1.0 / (n as f64).sqrt();
    Ok(assemble(space, |bits, out| bilinear_column(&t, n, bits, out, scale)))
}

/// Hard-core boson quartic `4/(2N)^{3/2} Σ_{i<j, k<l} J̃_{ijkl} b†_i b†_j b_k b_l`.
///
/// The unrestricted sum vanishes identically for commuting operators, so the
/// canonical-pair form of the fermionic Hamiltonian is used with strings
/// removed.
pub fn build_bosonic_syk<S: FockSpace>(tensor: &CouplingTensor, space: &S) -> Result<SparseHermitian> {
    check_sites(tensor.n_sites(), space)?;
    Ok(assemble(space, |bits, out| quartic_column(tensor, bits, out, false)))
}

/// `Q̂ = Σ c†_i c_i` on `space`.
pub fn number_operator<S: FockSpace>(space: &S) -> SparseHermitian {
    assemble(space, |bits, out| out.push((bits, C64::new(bits.count_ones() as f64, 0.0))))
}

/// Battery reference `H₀ = ωJ^y = (ω/2) Σ σ^y_j` on the full space.
///
/// With bit value 1 read as spin up, `⟨↑|σ^y|↓⟩ = −i`.
pub fn build_battery_h0(n_sites: usize, omega: f64) -> Result<SparseHermitian> {
    let space = FullSpace::new(n_sites)?;
    let half = 0.5 * omega;
    Ok(assemble(&space, |bits, out| {
        for s in 0..n_sites {
            let flipped = bits ^ (1 << s);
            // ⟨flipped|σ^y|bits⟩
            let amp = if bits >> s & 1 == 0 { C64::new(0.0, -half) } else { C64::new(0.0, half) };
            out.push((flipped, amp));
        }
    }))
}

/// Symmetric `j = N/2` spin sector times a truncated photon mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DickeSpace {
    pub n_atoms: usize,
    pub photon_cutoff: usize,
}

impl DickeSpace {
    pub fn new(n_atoms: usize, photon_cutoff: usize) -> Result<Self> {
        if n_atoms == 0 {
            return domain("Dicke space needs at least one atom");
        }
        Ok(Self { n_atoms, photon_cutoff })
    }

    pub fn dim(&self) -> usize {
        (self.n_atoms + 1) * (self.photon_cutoff + 1)
    }

    /// Index of `(m + N/2, n_ph)`.
    #[inline]
    pub fn index(&self, m_shifted: usize, n_ph: usize) -> usize {
        m_shifted * (self.photon_cutoff + 1) + n_ph
    }

    /// `(m + N/2, n_ph)` of an index.
    #[inline]
    pub fn unpack(&self, idx: usize) -> (usize, usize) {
        (idx / (self.photon_cutoff + 1), idx % (self.photon_cutoff + 1))
    }

    /// Spin projection `m` of `m_shifted`.
    #[inline]
    pub fn m(&self, m_shifted: usize) -> f64 {
        m_shifted as f64 - 0.5 * self.n_atoms as f64
    }
}

/// `ω[a†a + J^z + g(J⁺ + J⁻)(a† + a)]` on `space`, counter-rotating terms
/// included.
pub fn build_spin_boson(space: DickeSpace, omega: f64, g: f64) -> SparseHermitian {
    let j = 0.5 * space.n_atoms as f64;
    let rows = (0..space.dim())
        .map(|a| {
            let (ms, n) = space.unpack(a);
            let m = space.m(ms);
            let mut row = vec![(a as u32, C64::new(omega * (n as f64 + m), 0.0))];
            if g != 0.0 {
                let mut spin = Vec::with_capacity(2);
                if ms < space.n_atoms {
                    spin.push((ms + 1, (j * (j + 1.0) - m * (m + 1.0)).sqrt()));
                }
                if ms > 0 {
                    spin.push((ms - 1, (j * (j + 1.0) - m * (m - 1.0)).sqrt()));
                }
                let mut photon = Vec::with_capacity(2);
                if n < space.photon_cutoff {
                    photon.push((n + 1, ((n + 1) as f64).sqrt()));
                }
                if n > 0 {
                    photon.push((n - 1, (n as f64).sqrt()));
                }
                for &(ms2, cs) in &spin {
                    for &(n2, cp) in &photon {
                        row.push((space.index(ms2, n2) as u32, C64::new(omega * g * cs * cp, 0.0)));
                    }
                }
            }
            row
        })
        .collect();
    SparseHermitian::from_rows(
        BasisTag::Dicke { n_atoms: space.n_atoms, photon_cutoff: space.photon_cutoff },
        rows,
    )
}

/// Dicke charging Hamiltonian with coupling `2λ'`, `λ' = λ` or `λ/√N`.
pub fn build_dicke(
    n_atoms: usize,
    omega: f64,
    lambda: f64,
    photon_cutoff: usize,
    rescale: bool,
) -> Result<SparseHermitian> {
    if photon_cutoff < n_atoms {
        return Err(Error::Domain(format!(
            "photon cutoff {photon_cutoff} cannot hold the initial {n_atoms}-photon Fock state"
        )));
    }
    let space = DickeSpace::new(n_atoms, photon_cutoff)?;
    let lam = if rescale { lambda / (n_atoms as f64).sqrt() } else { lambda };
    Ok(build_spin_boson(space, omega, 2.0 * lam))
}

/// Single atom in its own cavity, `ω[a†a + σ^z/2 + λ(σ⁺ + σ⁻)(a† + a)]`.
pub fn build_rabi_cell(omega: f64, lambda: f64, photon_cutoff: usize) -> Result<SparseHermitian> {
    if photon_cutoff < 1 {
        return domain("a single cell needs room for one photon");
    }
    Ok(build_spin_boson(DickeSpace::new(1, photon_cutoff)?, omega, lambda))
}

/// Refuse dense work beyond the site cap.
pub fn check_dense_sites(n: usize) -> Result<()> {
    if n > MAX_DENSE_SITES {
        return Err(Error::Resource(format!("N = {n} exceeds the dense cap of {MAX_DENSE_SITES} sites")));
    }
    Ok(())
}
