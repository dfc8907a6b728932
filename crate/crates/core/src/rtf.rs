//! Relative transfer function vectors and covariance-whitening estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_sqrt, principal_eigenpair, HermitianMatrix, C64, REGULARIZATION};

/// Smallest admissible |reference| relative to the vector norm.
pub const DEGENERATE_REFERENCE: f64 = 1e-12;

/// Complex vector normalized so its reference entry is exactly `1 + 0i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfVector {
    values: Vec<C64>,
    reference: usize,
}

impl RtfVector {
    /// Divides `values` by its reference entry.
    pub fn normalize(mut values: Vec<C64>, reference: usize) -> Result<Self> {
        if reference >= values.len() {
            return Err(Error::Dimension(format!(
                "reference {reference} out of range for length {}",
                values.len()
            )));
        }
        let norm = values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let r = values[reference];
        if !(r.norm() > DEGENERATE_REFERENCE * norm) || !r.norm().is_finite() {
            return Err(Error::DegenerateReference { magnitude: r.norm(), bin: None });
        }
        let inv = r.inv();
        for z in values.iter_mut() {
            *z *= inv;
        }
        values[reference] = C64::new(1.0, 0.0);
        Ok(Self { values, reference })
    }

    /// Wraps values whose reference entry is already one.
    pub fn from_normalized(values: Vec<C64>, reference: usize) -> Result<Self> {
        match values.get(reference) {
            Some(&r) if r == C64::new(1.0, 0.0) => Ok(Self { values, reference }),
            Some(_) => Err(Error::Dimension("reference entry is not exactly one".into())),
            None => Err(Error::Dimension("reference index out of range".into())),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    /// Hearing aid microphones, the first `m_h` entries.
    H,
    /// External microphones, the last `m_e` entries.
    E,
}

/// Selects the hearing-aid or external block of an `m_h + m_e` vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionOperator {
    pub block: Block,
    pub m_h: usize,
    pub m_e: usize,
}

impl SelectionOperator {
    pub fn h(m_h: usize, m_e: usize) -> Self {
        Self { block: Block::H, m_h, m_e }
    }

    pub fn e(m_h: usize, m_e: usize) -> Self {
        Self { block: Block::E, m_h, m_e }
    }

    pub fn total(&self) -> usize {
        self.m_h + self.m_e
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        match self.block {
            Block::H => 0..self.m_h,
            Block::E => self.m_h..self.m_h + self.m_e,
        }
    }
}

/// H block: first `m_h` entries as-is. E block: last `m_e` entries divided by
/// the first of them.
pub fn extract_block(g: &RtfVector, sel: SelectionOperator) -> Result<RtfVector> {
    if g.len() != sel.total() {
        return Err(Error::Dimension(format!(
            "vector of length {} does not match M_H + M_E = {}",
            g.len(),
            sel.total()
        )));
    }
    let part = g.as_slice()[sel.range()].to_vec();
    match sel.block {
        Block::H => {
            if g.reference() >= sel.m_h {
                return Err(Error::Dimension("reference entry is not in the H block".into()));
            }
            RtfVector::from_normalized(part, g.reference())
        }
        Block::E => RtfVector::normalize(part, 0),
    }
}

/// `[g_h; g_e]`, keeping the H reference.
pub fn concat_estimated(g_h: &RtfVector, g_e: &RtfVector) -> RtfVector {
    let mut v = g_h.as_slice().to_vec();
    v.extend_from_slice(g_e.as_slice());
    RtfVector { values: v, reference: g_h.reference() }
}

/// Full output of covariance whitening.
#[derive(Debug, Clone)]
pub struct CwEstimate {
    pub rtf: RtfVector,
    /// Largest eigenvalue of the whitened noisy covariance.
    pub principal_value: f64,
}

impl CwEstimate {
    /// No speech dominance over the undesired component.
    pub fn low_confidence(&self) -> bool {
        self.principal_value <= 1.0
    }
}

/// Covariance whitening: `Φu^{1/2} · P{Φu^{-1/2} Φy Φu^{-H/2}}`, normalized
/// by its first entry.
pub fn cw_estimate_detailed(phi_y: &HermitianMatrix, phi_u: &HermitianMatrix) -> Result<CwEstimate> {
    if phi_y.order() != phi_u.order() {
        return Err(Error::Dimension(format!(
            "Φy order {} vs Φu order {}",
            phi_y.order(),
            phi_u.order()
        )));
    }
    let l = cholesky_sqrt(&phi_u.regularized(REGULARIZATION))?;
    let whitened = l.whiten(phi_y);
    let (principal_value, w) = principal_eigenpair(&whitened)?;
    let rtf = RtfVector::normalize(l.mul_vec(&w), 0)?;
    Ok(CwEstimate { rtf, principal_value })
}

pub fn cw_estimate(phi_y: &HermitianMatrix, phi_u: &HermitianMatrix) -> Result<RtfVector> {
    cw_estimate_detailed(phi_y, phi_u).map(|e| e.rtf)
}

/// CW on the hearing-aid sub-blocks only.
pub fn estimate_gh_cw(phi_y: &HermitianMatrix, phi_u: &HermitianMatrix, m_h: usize) -> Result<CwEstimate> {
    if phi_y.order() != phi_u.order() || m_h == 0 || m_h > phi_y.order() {
        return Err(Error::Dimension(format!(
            "cannot take an H block of {m_h} from orders {} / {}",
            phi_y.order(),
            phi_u.order()
        )));
    }
    cw_estimate_detailed(&phi_y.block(0..m_h)?, &phi_u.block(0..m_h)?)
}

/// CW over all microphones, split into its H and E parts.
#[derive(Debug, Clone)]
pub struct CweEstimate {
    pub full: CwEstimate,
    pub g_h: RtfVector,
    /// `None` when the E reference entry is degenerate.
    pub g_e: Option<RtfVector>,
}

impl CweEstimate {
    /// `[g_h; g_e]` when the E part is usable.
    pub fn concatenated(&self) -> Option<RtfVector> {
        self.g_e.as_ref().map(|e| concat_estimated(&self.g_h, e))
    }
}

pub fn estimate_g_cwe(phi_y: &HermitianMatrix, phi_u: &HermitianMatrix, m_h: usize) -> Result<CweEstimate> {
    let m = phi_y.order();
    if m_h == 0 || m_h >= m {
        return Err(Error::Dimension(format!("M_H = {m_h} invalid for order {m}")));
    }
    let full = cw_estimate_detailed(phi_y, phi_u)?;
    let m_e = m - m_h;
    let g_h = extract_block(&full.rtf, SelectionOperator::h(m_h, m_e))?;
    let g_e = match extract_block(&full.rtf, SelectionOperator::e(m_h, m_e)) {
        Ok(e) => Some(e),
        Err(Error::DegenerateReference { .. }) => None,
        Err(other) => return Err(other),
    };
    Ok(CweEstimate { full, g_h, g_e })
}
