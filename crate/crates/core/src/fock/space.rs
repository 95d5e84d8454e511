use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest Hilbert-space dimension [`FockSpace::new`] accepts.
pub const DEFAULT_DIM_BUDGET: usize = 20_000;

/// Truncated multi-mode bosonic Hilbert space.
///
/// Every mode keeps Fock levels `0..cutoff`. Basis states are ordered
/// big-endian in the mode index: the product index of occupations
/// `(n_0, ..., n_{M-1})` is `sum_j n_j * cutoff^(M-1-j)`, so mode 0 is the
/// most significant digit.
///
/// A space may additionally be capped in total excitation number. The
/// retained states keep the relative order of the product basis, so a capped
/// space is a subsequence of the uncapped one.
#[derive(Debug, Clone)]
pub struct FockSpace {
    n_modes: usize,
    cutoff: usize,
    max_excitation: Option<usize>,
    // local index -> product index, only for capped spaces
    retained: Option<Vec<u32>>,
    // product index -> local index (u32::MAX when dropped), only for capped spaces
    lookup: Option<Vec<u32>>,
}

impl PartialEq for FockSpace {
    fn eq(&self, other: &Self) -> bool {
        self.n_modes == other.n_modes
            && self.cutoff == other.cutoff
            && self.max_excitation == other.max_excitation
    }
}

impl Eq for FockSpace {}

fn product_dim(n_modes: usize, cutoff: usize) -> u128 {
    (cutoff as u128).saturating_pow(n_modes as u32)
}

impl FockSpace {
    /// Product space with `cutoff` levels per mode, within the default budget.
    pub fn new(n_modes: usize, cutoff: usize) -> Result<Arc<Self>> {
        Self::with_budget(n_modes, cutoff, DEFAULT_DIM_BUDGET)
    }

    pub fn with_budget(n_modes: usize, cutoff: usize, budget: usize) -> Result<Arc<Self>> {
        Self::check(n_modes, cutoff, budget)?;
        Ok(Arc::new(Self {
            n_modes,
            cutoff,
            max_excitation: None,
            retained: None,
            lookup: None,
        }))
    }

    /// Product space restricted to states with `sum_j n_j <= max_excitation`.
    ///
    /// A cap of `cutoff - 1` keeps exactly the excitation sectors that the
    /// per-mode truncation leaves complete.
    pub fn excitation_capped(n_modes: usize, cutoff: usize, max_excitation: usize) -> Result<Arc<Self>> {
        Self::check(n_modes, cutoff, DEFAULT_DIM_BUDGET)?;
        let full = product_dim(n_modes, cutoff) as usize;
        if max_excitation >= n_modes * (cutoff - 1) {
            return Self::new(n_modes, cutoff);
        }
        let mut retained = Vec::new();
        let mut lookup = vec![u32::MAX; full];
        for p in 0..full {
            let total: usize = (0..n_modes).map(|j| digit(p, j, n_modes, cutoff)).sum();
            if total <= max_excitation {
                lookup[p] = retained.len() as u32;
                retained.push(p as u32);
            }
        }
        Ok(Arc::new(Self {
            n_modes,
            cutoff,
            max_excitation: Some(max_excitation),
            retained: Some(retained),
            lookup: Some(lookup),
        }))
    }

    fn check(n_modes: usize, cutoff: usize, budget: usize) -> Result<()> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("a Fock space needs at least one mode".into()));
        }
        if cutoff < 2 {
            return Err(Error::InvalidArgument(format!("cutoff must be at least 2, got {cutoff}")));
        }
        let dim = product_dim(n_modes, cutoff);
        if dim > budget as u128 {
            return Err(Error::DimensionBudget {
                n_modes,
                cutoff,
                dim,
                budget,
            });
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn max_excitation(&self) -> Option<usize> {
        self.max_excitation
    }

    pub fn dim(&self) -> usize {
        match &self.retained {
            Some(r) => r.len(),
            None => product_dim(self.n_modes, self.cutoff) as usize,
        }
    }

    /// Product-basis index of local basis state `i`.
    pub fn product_index(&self, i: usize) -> usize {
        match &self.retained {
            Some(r) => r[i] as usize,
            None => i,
        }
    }

    /// Occupation of `mode` in local basis state `i`.
    #[inline]
    pub fn occupation(&self, i: usize, mode: usize) -> usize {
        digit(self.product_index(i), mode, self.n_modes, self.cutoff)
    }

    pub fn occupations(&self, i: usize) -> Vec<usize> {
        let p = self.product_index(i);
        (0..self.n_modes)
            .map(|j| digit(p, j, self.n_modes, self.cutoff))
            .collect()
    }

    pub fn total_excitation(&self, i: usize) -> usize {
        let p = self.product_index(i);
        (0..self.n_modes)
            .map(|j| digit(p, j, self.n_modes, self.cutoff))
            .sum()
    }

    /// Local index of the basis state with the given occupations, if retained.
    pub fn index_of(&self, occupations: &[usize]) -> Option<usize> {
        if occupations.len() != self.n_modes || occupations.iter().any(|&n| n >= self.cutoff) {
            return None;
        }
        let p = occupations.iter().fold(0usize, |acc, &n| acc * self.cutoff + n);
        self.local_of_product(p)
    }

    /// Local index of the state whose occupation of `mode` is shifted by
    /// `delta` relative to local state `i`.
    pub(crate) fn shifted(&self, i: usize, mode: usize, delta: isize) -> Option<usize> {
        let n = self.occupation(i, mode) as isize + delta;
        if n < 0 || n >= self.cutoff as isize {
            return None;
        }
        let stride = self.cutoff.pow((self.n_modes - 1 - mode) as u32) as isize;
        let p = self.product_index(i) as isize + delta * stride;
        self.local_of_product(p as usize)
    }

    fn local_of_product(&self, p: usize) -> Option<usize> {
        match &self.lookup {
            Some(l) => match l[p] {
                u32::MAX => None,
                k => Some(k as usize),
            },
            None => Some(p),
        }
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes {
            return Err(Error::ModeOutOfRange {
                mode,
                n_modes: self.n_modes,
            });
        }
        Ok(())
    }
}

#[inline]
fn digit(p: usize, mode: usize, n_modes: usize, cutoff: usize) -> usize {
    (p / cutoff.pow((n_modes - 1 - mode) as u32)) % cutoff
}

/// `make_space`: product space within the default dimension budget.
pub fn make_space(n_modes: usize, cutoff: usize) -> Result<Arc<FockSpace>> {
    FockSpace::new(n_modes, cutoff)
}
