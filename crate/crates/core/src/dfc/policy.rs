use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{spectral_norm, to_row_major};

/// Memory length, norm budget and dimensions of the policy class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyClassSpec {
    pub h: usize,
    pub g: f64,
    pub dx: usize,
    pub du: usize,
}

impl PolicyClassSpec {
    pub fn new(h: usize, g: f64, dx: usize, du: usize) -> Result<Self> {
        if h == 0 || dx == 0 || du == 0 {
            return Err(Error::InvalidArgument("memory and dimensions must be positive".into()));
        }
        if !(g > 0.0) {
            return Err(Error::InvalidArgument(format!("budget G must be positive, got {g}")));
        }
        Ok(Self { h, g, dx, du })
    }

    /// `ceil(c_h / γ · ln(T (d_x + d_u) hp_exponent))`, at least 1.
    pub fn default_memory(c_h: f64, gamma: f64, horizon: usize, dx: usize, du: usize, hp_exponent: f64) -> usize {
        let arg = (horizon.max(2) as f64) * (dx + du) as f64 * hp_exponent.max(1.0);
        ((c_h / gamma) * arg.ln()).ceil().max(1.0) as usize
    }

    /// Number of free parameters `d_x d_u H`.
    pub fn dim(&self) -> usize {
        self.dx * self.du * self.h
    }

    /// Block shapes `(d_u, d_x)`, one per memory slot.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.du, self.dx); self.h]
    }

    pub fn zero_policy(&self) -> DfcPolicy {
        DfcPolicy::zeros(self.h, self.dx, self.du)
    }
}

/// `M = (M^[0], ..., M^[H-1])`, each `d_u × d_x`; plays `u_t = Σ_i M^[i-1] ŵ_{t-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DfcPolicy {
    blocks: Vec<DMatrix<f64>>,
    dx: usize,
    du: usize,
}

/// Serialized form with row-major blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    #[serde(rename = "H")]
    pub h: usize,
    pub d_x: usize,
    pub d_u: usize,
    pub blocks: Vec<Vec<f64>>,
}

impl Serialize for DfcPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DfcPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = PolicyDoc::deserialize(d)?;
        DfcPolicy::from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

impl DfcPolicy {
    pub fn zeros(h: usize, dx: usize, du: usize) -> Self {
        Self { blocks: vec![DMatrix::zeros(du, dx); h], dx, du }
    }

    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::InvalidArgument("policy needs at least one block".into()))?;
        let (du, dx) = first.shape();
        for b in &blocks {
            if b.shape() != (du, dx) {
                return Err(Error::Dimension(format!("policy blocks must all be {du}x{dx}, got {:?}", b.shape())));
            }
        }
        Ok(Self { blocks, dx, du })
    }

    pub fn h(&self) -> usize {
        self.blocks.len()
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    pub fn du(&self) -> usize {
        self.du
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[i]
    }

    pub fn dim(&self) -> usize {
        self.dx * self.du * self.h()
    }

    /// Block-major, row-major within each block.
    pub fn flatten(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for b in &self.blocks {
            v.extend(to_row_major(b));
        }
        DVector::from_vec(v)
    }

    pub fn unflatten(h: usize, dx: usize, du: usize, v: &[f64]) -> Result<Self> {
        ensure_dim("flattened policy", v.len(), h * dx * du)?;
        let size = dx * du;
        let blocks = (0..h)
            .map(|i| DMatrix::from_row_slice(du, dx, &v[i * size..(i + 1) * size]))
            .collect();
        Ok(Self { blocks, dx, du })
    }

    pub fn unflatten_like(&self, v: &[f64]) -> Result<Self> {
        Self::unflatten(self.h(), self.dx, self.du, v)
    }

    /// `Σ_i ‖M^[i]‖` (spectral norms), the quantity bounded by `G`.
    pub fn norm_budget(&self) -> f64 {
        self.blocks.iter().map(spectral_norm).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { blocks: self.blocks.iter().map(|b| b * s).collect(), dx: self.dx, du: self.du }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b * s).collect(),
            dx: self.dx,
            du: self.du,
        }
    }

    /// `Σ_{i=1}^{H} M^[i-1] recent[i-1]`, where `recent[0]` is the most recent
    /// disturbance estimate. Missing entries count as zero.
    pub fn control(&self, recent: &[DVector<f64>]) -> DVector<f64> {
        let mut u = DVector::zeros(self.du);
        for (block, w) in self.blocks.iter().zip(recent) {
            u.gemv(1.0, block, w, 1.0);
        }
        u
    }

    /// Same as [`control`](Self::control) for a history stored oldest first.
    pub fn control_history(&self, history: &[DVector<f64>]) -> DVector<f64> {
        let mut u = DVector::zeros(self.du);
        for (block, w) in self.blocks.iter().zip(history.iter().rev()) {
            u.gemv(1.0, block, w, 1.0);
        }
        u
    }

    pub fn to_doc(&self) -> PolicyDoc {
        PolicyDoc {
            h: self.h(),
            d_x: self.dx,
            d_u: self.du,
            blocks: self.blocks.iter().map(to_row_major).collect(),
        }
    }

    pub fn from_doc(doc: &PolicyDoc) -> Result<Self> {
        ensure_dim("number of policy blocks", doc.blocks.len(), doc.h)?;
        let flat: Vec<f64> = doc.blocks.iter().flatten().copied().collect();
        for b in &doc.blocks {
            ensure_dim("policy block length", b.len(), doc.d_x * doc.d_u)?;
        }
        Self::unflatten(doc.h, doc.d_x, doc.d_u, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip_and_layout() {
        let m = DfcPolicy::from_blocks(vec![
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(m.flatten().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.unflatten_like(m.flatten().as_slice()).unwrap(), m);
        assert!(DfcPolicy::unflatten(2, 2, 1, &[1.0]).is_err());
    }

    #[test]
    fn doc_round_trip() {
        let m = DfcPolicy::unflatten(2, 2, 2, &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"H\":2"));
        let back: DfcPolicy = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn default_memory_formula() {
        // c_h = 2, γ = 0.5, T = 100, n = 2, hp = 2: ceil(4 ln 400) = 24.
        assert_eq!(PolicyClassSpec::default_memory(2.0, 0.5, 100, 1, 1, 2.0), 24);
    }

    #[test]
    fn control_uses_most_recent_first() {
        let m = DfcPolicy::unflatten(2, 1, 1, &[2.0, 10.0]).unwrap();
        let recent = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)];
        assert_eq!(m.control(&recent)[0], 2.0 + 5.0);
        assert_eq!(m.control(&recent[..1])[0], 2.0);
    }
}
