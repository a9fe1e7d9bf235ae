//! Occupation-number bookkeeping for spinless fermions on `N` sites.
//!
//! A basis state is a bitmask: bit `i` is the occupation of site `i`, bit 0
//! being the least significant. Fermionic signs follow the Jordan-Wigner
//! ordering in which the string attached to site `i` counts the occupied
//! sites `j < i`, so every sign is the parity of a masked popcount.
//!
//! Operators are applied one elementary step at a time, right to left, and
//! the sign is accumulated along the way. Multi-index operator identities
//! (coinciding indices, reordered pairs) therefore come out of the same code
//! path instead of being special-cased.

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{domain, Error, Result};

/// Largest site count accepted for basis enumeration.
pub const MAX_ENUM_SITES: usize = 24;
/// Largest site count accepted for full-space (2^N) dense work.
pub const MAX_DENSE_SITES: usize = 16;

/// Binomial coefficient `n choose k` (zero when `k > n`).
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc * (n - t) as u128 / (t + 1) as u128;
    }
    acc as usize
}

/// Occupation configuration of the `N` sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState(pub u32);

impl BasisState {
    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn occupied(self, site: usize) -> bool {
        self.0 >> site & 1 == 1
    }

    #[inline]
    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

/// Parity sign of the occupied sites strictly below `site`.
#[inline]
fn string_sign(bits: u32, site: usize) -> f64 {
    let below = bits & ((1u32 << site) - 1);
    if below.count_ones() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `c_site` acting on `bits`: `None` when the site is empty.
#[inline]
pub fn annihilate(site: usize, bits: u32) -> Option<(u32, f64)> {
    if bits >> site & 1 == 0 {
        return None;
    }
    Some((bits ^ (1 << site), string_sign(bits, site)))
}

/// `c†_site` acting on `bits`: `None` when the site is already filled.
#[inline]
pub fn create(site: usize, bits: u32) -> Option<(u32, f64)> {
    if bits >> site & 1 == 1 {
        return None;
    }
    Some((bits | (1 << site), string_sign(bits, site)))
}

/// Image of `c†_i c†_j c_k c_l |state⟩` with its fermionic sign.
pub fn apply_quartic(
    i: usize,
    j: usize,
    k: usize,
    l: usize,
    state: BasisState,
) -> Option<(BasisState, f64)> {
    let (b, s1) = annihilate(l, state.0)?;
    let (b, s2) = annihilate(k, b)?;
    let (b, s3) = create(j, b)?;
    let (b, s4) = create(i, b)?;
    Some((BasisState(b), s1 * s2 * s3 * s4))
}

/// Image of `c†_i c_j |state⟩` with its fermionic sign.
pub fn apply_bilinear(i: usize, j: usize, state: BasisState) -> Option<(BasisState, f64)> {
    let (b, s1) = annihilate(j, state.0)?;
    let (b, s2) = create(i, b)?;
    Some((BasisState(b), s1 * s2))
}

/// Hard-core boson version of [`apply_quartic`]: same occupation moves, no
/// string signs.
pub fn apply_quartic_hardcore(
    i: usize,
    j: usize,
    k: usize,
    l: usize,
    state: BasisState,
) -> Option<BasisState> {
    let mut b = state.0;
    for (site, fill) in [(l, false), (k, false), (j, true), (i, true)] {
        let occ = b >> site & 1 == 1;
        if occ == fill {
            return None;
        }
        b ^= 1 << site;
    }
    Some(BasisState(b))
}

/// Anything that enumerates occupation states with a dense index.
pub trait FockSpace: Sync {
    fn n_sites(&self) -> usize;
    fn dim(&self) -> usize;
    /// Bitmask of the state with dense index `idx`.
    fn state(&self, idx: usize) -> u32;
    /// Dense index of `bits`, or `None` if the state is outside the space.
    fn index_of(&self, bits: u32) -> Option<usize>;
}

/// Fixed-charge sector: all states with exactly `charge` particles, in
/// ascending integer order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectorBasis {
    n_sites: usize,
    charge: usize,
    states: Vec<u32>,
    // binom[n][k] for n <= n_sites, used by the combinatorial ranking
    binom: Vec<Vec<usize>>,
}

impl SectorBasis {
    /// Enumerate every bitmask of `n_sites` bits with `charge` bits set.
    pub fn enumerate(n_sites: usize, charge: usize) -> Result<Self> {
        if n_sites > MAX_ENUM_SITES {
            return domain(format!("n_sites = {n_sites} exceeds the cap of {MAX_ENUM_SITES}"));
        }
        if charge > n_sites {
            return domain(format!("charge {charge} outside 0..={n_sites}"));
        }
        let dim = binomial(n_sites, charge);
        let mut states = Vec::with_capacity(dim);
        if charge == 0 {
            states.push(0);
        } else {
            // Gosper's hack walks same-popcount words in increasing order.
            let limit: u64 = 1u64 << n_sites;
            let mut v: u64 = (1u64 << charge) - 1;
            while v < limit {
                states.push(v as u32);
                let t = v | (v - 1);
                v = (t + 1) | (((!t & (t + 1)) - 1) >> (v.trailing_zeros() + 1));
            }
        }
        debug_assert_eq!(states.len(), dim);
        let binom = (0..=n_sites)
            .map(|n| (0..=n_sites).map(|k| binomial(n, k)).collect())
            .collect();
        Ok(Self { n_sites, charge, states, binom })
    }

    pub fn charge(&self) -> usize {
        self.charge
    }

    pub fn states(&self) -> &[u32] {
        &self.states
    }

    /// Rank of a fixed-popcount word in ascending order (combinatorial
    /// number system), without a lookup table.
    fn rank(&self, bits: u32) -> usize {
        let mut rank = 0;
        let mut rest = bits;
        let mut t = 1;
        while rest != 0 {
            let pos = rest.trailing_zeros() as usize;
            rank += self.binom[pos][t];
            rest &= rest - 1;
            t += 1;
        }
        rank
    }
}

impl FockSpace for SectorBasis {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn dim(&self) -> usize {
        self.states.len()
    }

    #[inline]
    fn state(&self, idx: usize) -> u32 {
        self.states[idx]
    }

    #[inline]
    fn index_of(&self, bits: u32) -> Option<usize> {
        if bits.count_ones() as usize != self.charge || (bits as u64) >> self.n_sites != 0 {
            return None;
        }
        Some(self.rank(bits))
    }
}

/// The whole 2^N occupation space, indexed by the bitmask itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullSpace {
    pub n_sites: usize,
}

impl FullSpace {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites > MAX_DENSE_SITES {
            return Err(Error::Resource(format!(
                "full space over {n_sites} sites exceeds the {MAX_DENSE_SITES}-site cap"
            )));
        }
        Ok(Self { n_sites })
    }
}

impl FockSpace for FullSpace {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn dim(&self) -> usize {
        1 << self.n_sites
    }

    #[inline]
    fn state(&self, idx: usize) -> u32 {
        idx as u32
    }

    #[inline]
    fn index_of(&self, bits: u32) -> Option<usize> {
        ((bits as u64) >> self.n_sites == 0).then_some(bits as usize)
    }
}

/// Space a [`PureState`] lives in.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpace {
    Full(FullSpace),
    Sector(Arc<SectorBasis>),
}

impl StateSpace {
    pub fn dim(&self) -> usize {
        match self {
            StateSpace::Full(f) => f.dim(),
            StateSpace::Sector(s) => s.dim(),
        }
    }

    pub fn n_sites(&self) -> usize {
        match self {
            StateSpace::Full(f) => f.n_sites,
            StateSpace::Sector(s) => s.n_sites(),
        }
    }
}

/// State vector over a sector or the full space.
#[derive(Debug, Clone)]
pub struct PureState {
    pub space: StateSpace,
    pub amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(space: StateSpace, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return domain(format!(
                "amplitude length {} does not match space dimension {}",
                amplitudes.len(),
                space.dim()
            ));
        }
        Ok(Self { space, amplitudes })
    }

    /// Full-space basis state `|bits⟩`.
    pub fn basis_state(n_sites: usize, bits: u32) -> Result<Self> {
        let full = FullSpace::new(n_sites)?;
        let mut amplitudes = vec![C64::new(0.0, 0.0); full.dim()];
        let idx = full
            .index_of(bits)
            .ok_or_else(|| Error::Domain(format!("state {bits:#b} has bits beyond site {n_sites}")))?;
        amplitudes[idx] = C64::new(1.0, 0.0);
        Ok(Self { space: StateSpace::Full(full), amplitudes })
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    /// Embed a sector state into the full 2^N space.
    pub fn to_full(&self) -> Result<PureState> {
        match &self.space {
            StateSpace::Full(_) => Ok(self.clone()),
            StateSpace::Sector(sector) => {
                let full = FullSpace::new(sector.n_sites())?;
                let mut amplitudes = vec![C64::new(0.0, 0.0); full.dim()];
                for (idx, &bits) in sector.states().iter().enumerate() {
                    amplitudes[bits as usize] = self.amplitudes[idx];
                }
                Ok(PureState { space: StateSpace::Full(full), amplitudes })
            }
        }
    }
}

pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub elements: Mat<C64>,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.elements[(i, i)]).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..=i {
                worst = worst.max((self.elements[(i, j)] - self.elements[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut vals = self
            .elements
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::Divergence(format!("eigenvalue solver failed: {e:?}")))?;
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }
}

/// Reduced density matrix of sites `0..keep_sites` for a full-space state.
///
/// With the site-0-least-significant layout the amplitude array reshapes to a
/// `2^{N_A} × 2^{N-N_A}` matrix `Ψ`, and `ρ_A = Ψ Ψ†`.
pub fn partial_trace(state: &PureState, keep_sites: usize) -> Result<DensityMatrix> {
    let n = match &state.space {
        StateSpace::Full(f) => f.n_sites,
        StateSpace::Sector(_) => return partial_trace(&state.to_full()?, keep_sites),
    };
    if keep_sites >= n {
        return domain(format!("kept subsystem of {keep_sites} sites must be smaller than N = {n}"));
    }
    partial_trace_raw(&state.amplitudes, n, keep_sites)
}

pub(crate) fn partial_trace_raw(amps: &[C64], n_sites: usize, keep_sites: usize) -> Result<DensityMatrix> {
    let dim_a = 1usize << keep_sites;
    let dim_b = 1usize << (n_sites - keep_sites);
    debug_assert_eq!(amps.len(), dim_a * dim_b);
    let psi = Mat::<C64>::from_fn(dim_a, dim_b, |a, b| amps[a + b * dim_a]);
    let rho = &psi * psi.adjoint();
    Ok(DensityMatrix { elements: rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_4_2() {
        let s = SectorBasis::enumerate(4, 2).unwrap();
        assert_eq!(s.states(), &[0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]);
        for (i, &b) in s.states().iter().enumerate() {
            assert_eq!(s.index_of(b), Some(i));
        }
        assert_eq!(s.index_of(0b0111), None);
    }

    #[test]
    fn sector_sizes() {
        assert_eq!(SectorBasis::enumerate(2, 1).unwrap().states(), &[0b01, 0b10]);
        assert_eq!(SectorBasis::enumerate(16, 8).unwrap().dim(), 12870);
        assert_eq!(SectorBasis::enumerate(5, 0).unwrap().states(), &[0]);
        assert_eq!(SectorBasis::enumerate(5, 5).unwrap().states(), &[0b11111]);
        assert!(SectorBasis::enumerate(4, 5).is_err());
        assert!(SectorBasis::enumerate(25, 2).is_err());
    }

    #[test]
    fn ranking_inverts_enumeration_n12() {
        for q in 0..=12 {
            let s = SectorBasis::enumerate(12, q).unwrap();
            assert_eq!(s.dim(), binomial(12, q));
            assert!(s.states().windows(2).all(|w| w[0] < w[1]));
            for (i, &b) in s.states().iter().enumerate() {
                assert_eq!(s.index_of(b), Some(i));
            }
        }
    }

    #[test]
    fn number_operator_pair() {
        assert_eq!(apply_quartic(0, 1, 1, 0, BasisState(0b0011)), Some((BasisState(0b0011), 1.0)));
    }

    #[test]
    fn annihilating_empty_mode() {
        assert_eq!(annihilate(0, 0b0010), None);
        assert_eq!(apply_quartic(2, 3, 1, 0, BasisState(0b0010)), None);
        assert_eq!(apply_quartic(0, 0, 1, 2, BasisState(0b0110)), None);
    }

    #[test]
    fn bilinear_basics() {
        assert_eq!(apply_bilinear(1, 0, BasisState(0b01)), Some((BasisState(0b10), 1.0)));
        assert_eq!(apply_bilinear(0, 0, BasisState(0b01)), Some((BasisState(0b01), 1.0)));
        assert_eq!(apply_bilinear(1, 0, BasisState(0b10)), None);
    }

    #[test]
    fn hardcore_moves_match_fermionic_support() {
        for bits in 0u32..64 {
            for (i, j, k, l) in [(0, 1, 2, 3), (5, 2, 2, 4), (1, 3, 1, 0), (4, 4, 1, 2)] {
                let f = apply_quartic(i, j, k, l, BasisState(bits)).map(|x| x.0);
                let b = apply_quartic_hardcore(i, j, k, l, BasisState(bits));
                assert_eq!(f, b);
            }
        }
    }

    #[test]
    fn partial_trace_product_and_bell() {
        let prod = PureState::basis_state(2, 0).unwrap();
        let rho = partial_trace(&prod, 1).unwrap();
        assert!((rho.elements[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(rho.elements[(1, 1)].norm() < 1e-15);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = PureState::new(
            StateSpace::Full(FullSpace::new(2).unwrap()),
            vec![C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)],
        )
        .unwrap();
        let rho = partial_trace(&bell, 1).unwrap();
        assert!((rho.elements[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((rho.elements[(1, 1)].re - 0.5).abs() < 1e-15);
        assert!(rho.elements[(0, 1)].norm() < 1e-15);
        assert!(partial_trace(&bell, 2).is_err());
    }

    #[test]
    fn sector_embedding() {
        let s = Arc::new(SectorBasis::enumerate(3, 1).unwrap());
        let st = PureState::new(
            StateSpace::Sector(s),
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        )
        .unwrap();
        let full = st.to_full().unwrap();
        assert_eq!(full.amplitudes[1], C64::new(1.0, 0.0));
        assert_eq!(full.amplitudes.iter().filter(|a| a.norm() > 0.0).count(), 1);
    }
}
