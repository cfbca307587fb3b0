//! Exact information quantities on small discrete joint distributions.
//!
//! Everything here operates on a three-variable probability table and is
//! computed by direct summation in `f64`, so the decomposition identities
//!
//! ```text
//! I(X;Y;Z) = I(X;Y) + I(X;Z) - I(X;{Y,Z})
//! I(X;Y;Z) = H(X) - H(X|Y) - H(X|Z) + H(X|Y,Z)
//! I(X;Y) - I(X;Y;Z) = H(X|Z) - H(X|Y,Z)
//! ```
//!
//! hold to rounding error and can be machine-verified on random tables.
//! All quantities are in nats; `0 * ln 0` is treated as 0.

use crate::error::{Error, Result};
use crate::math::plogp;
use crate::rng::SeedStream;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Per-axis cardinality cap; keeps brute-force verification sub-millisecond.
pub const MAX_CARDINALITY: usize = 64;

/// The three random variables housed by a [`JointTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
}

impl Var {
    fn axis(self) -> usize {
        match self {
            Var::X => 0,
            Var::Y => 1,
            Var::Z => 2,
        }
    }
}

/// An exact joint distribution p(x, y, z) over three discrete variables.
#[derive(Debug, Clone)]
pub struct JointTable {
    dims: [usize; 3],
    probs: Vec<f64>,
}

impl JointTable {
    /// Build a table from row-major `probs` indexed `(x, y, z)`.
    pub fn new(dims: [usize; 3], probs: Vec<f64>) -> Result<Self> {
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 || d > MAX_CARDINALITY {
                return Err(Error::Invalid(format!(
                    "cardinality of axis {i} must be in 1..={MAX_CARDINALITY}, got {d}"
                )));
            }
        }
        if probs.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "expected {} entries for dims {dims:?}, got {}",
                dims[0] * dims[1] * dims[2],
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !(p >= 0.0) {
                return Err(Error::Domain(format!("negative probability entry {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("entries sum to {sum}, not 1")));
        }
        Ok(JointTable { dims, probs })
    }

    /// A random table: i.i.d. uniform weights normalized to sum 1.
    pub fn random(dims: [usize; 3], rng: &mut SeedStream) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        let mut probs: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-6).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        // Renormalize once more to push the sum within 1e-12 of 1.
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        JointTable { dims, probs }
    }

    /// Uniform distribution over all cells.
    pub fn uniform(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        JointTable {
            dims,
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// The XOR table: X, Y independent uniform bits, Z = X xor Y.
    pub fn xor() -> Self {
        let mut probs = vec![0.0; 8];
        for x in 0..2usize {
            for y in 0..2usize {
                let z = x ^ y;
                probs[x * 4 + y * 2 + z] = 0.25;
            }
        }
        JointTable {
            dims: [2, 2, 2],
            probs,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn p(&self, x: usize, y: usize, z: usize) -> f64 {
        self.probs[(x * self.dims[1] + y) * self.dims[2] + z]
    }

    /// Sum out all axes not in `keep`; the result is indexed by the kept
    /// variables in canonical (X, Y, Z) order.
    pub fn marginalize(&self, keep: &[Var]) -> Result<Vec<f64>> {
        if keep.is_empty() {
            return Err(Error::Invalid("empty keep-set".into()));
        }
        let mut kept = [false; 3];
        for v in keep {
            kept[v.axis()] = true;
        }
        let out_dims: Vec<usize> = (0..3).filter(|&a| kept[a]).map(|a| self.dims[a]).collect();
        let mut out = vec![0.0; out_dims.iter().product()];
        for x in 0..self.dims[0] {
            for y in 0..self.dims[1] {
                for z in 0..self.dims[2] {
                    let idx = [x, y, z];
                    let mut flat = 0;
                    for a in 0..3 {
                        if kept[a] {
                            flat = flat * self.dims[a] + idx[a];
                        }
                    }
                    out[flat] += self.p(x, y, z);
                }
            }
        }
        Ok(out)
    }
}

/// Shannon entropy of a probability array, in nats.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &p in dist {
        if !(p >= 0.0) {
            return Err(Error::Domain(format!("negative probability entry {p}")));
        }
        h -= plogp(p);
    }
    Ok(h.max(0.0))
}

fn joint_entropy(table: &JointTable, vars: &[Var]) -> Result<f64> {
    if vars.is_empty() {
        return Ok(0.0);
    }
    entropy(&table.marginalize(vars)?)
}

/// H(target | given) via the chain rule H(target, given) - H(given).
pub fn conditional_entropy(table: &JointTable, target: Var, given: &[Var]) -> Result<f64> {
    if given.contains(&target) {
        return Err(Error::Invalid(format!(
            "target {target:?} appears in the given-set"
        )));
    }
    let mut joint: Vec<Var> = given.to_vec();
    joint.push(target);
    Ok(joint_entropy(table, &joint)? - joint_entropy(table, given)?)
}

fn mi_unclamped(table: &JointTable, a: Var, b: &[Var]) -> Result<f64> {
    if b.contains(&a) {
        return Err(Error::Invalid(format!(
            "variable {a:?} appears on both sides"
        )));
    }
    Ok(joint_entropy(table, &[a])? - conditional_entropy(table, a, b)?)
}

/// I(a; b) = H(a) - H(a|b). Tiny negatives from rounding (within -1e-12)
/// are clamped to 0.
pub fn mutual_information(table: &JointTable, a: Var, b: &[Var]) -> Result<f64> {
    let mi = mi_unclamped(table, a, b)?;
    if mi < 0.0 && mi >= -1e-12 {
        Ok(0.0)
    } else {
        Ok(mi)
    }
}

/// Interaction information I(X;Y;Z), computed directly as
/// `E[log (p(x,y) p(x,z) p(y,z)) / (p(x,y,z) p(x) p(y) p(z))]`.
///
/// May be negative (synergy, e.g. the XOR table).
pub fn trivariate_mi(table: &JointTable) -> Result<f64> {
    let pxy = table.marginalize(&[Var::X, Var::Y])?;
    let pxz = table.marginalize(&[Var::X, Var::Z])?;
    let pyz = table.marginalize(&[Var::Y, Var::Z])?;
    let px = table.marginalize(&[Var::X])?;
    let py = table.marginalize(&[Var::Y])?;
    let pz = table.marginalize(&[Var::Z])?;
    let [nx, ny, nz] = table.dims;
    let mut mi = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let pxyz = table.p(x, y, z);
                if pxyz > 0.0 {
                    let num = pxy[x * ny + y] * pxz[x * nz + z] * pyz[y * nz + z];
                    let den = pxyz * px[x] * py[y] * pz[z];
                    mi += pxyz * crate::math::ln(num / den);
                }
            }
        }
    }
    Ok(mi)
}

/// All quantities of the decomposition plus the identity residuals.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub i_xy: f64,
    pub i_xz: f64,
    pub i_x_yz: f64,
    pub i_xyz: f64,
    pub h_x: f64,
    pub h_x_given_y: f64,
    pub h_x_given_z: f64,
    pub h_x_given_yz: f64,
    /// I(X;Y;Z) - [I(X;Y) + I(X;Z) - I(X;{Y,Z})]
    pub residual_bivariate: f64,
    /// I(X;Y;Z) - [H(X) - H(X|Y) - H(X|Z) + H(X|Y,Z)]
    pub residual_entropy: f64,
    /// [I(X;Y) - I(X;Y;Z)] - [H(X|Z) - H(X|Y,Z)]
    pub residual_objective: f64,
}

impl DecompositionReport {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual_bivariate
            .abs()
            .max(self.residual_entropy.abs())
            .max(self.residual_objective.abs())
    }
}

/// Compute every quantity of the decomposition and the three identity
/// residuals. Residuals use unclamped MI values.
pub fn verify_decomposition(table: &JointTable) -> Result<DecompositionReport> {
    let i_xy = mi_unclamped(table, Var::X, &[Var::Y])?;
    let i_xz = mi_unclamped(table, Var::X, &[Var::Z])?;
    let i_x_yz = mi_unclamped(table, Var::X, &[Var::Y, Var::Z])?;
    let i_xyz = trivariate_mi(table)?;
    let h_x = joint_entropy(table, &[Var::X])?;
    let h_x_given_y = conditional_entropy(table, Var::X, &[Var::Y])?;
    let h_x_given_z = conditional_entropy(table, Var::X, &[Var::Z])?;
    let h_x_given_yz = conditional_entropy(table, Var::X, &[Var::Y, Var::Z])?;
    Ok(DecompositionReport {
        i_xy,
        i_xz,
        i_x_yz,
        i_xyz,
        h_x,
        h_x_given_y,
        h_x_given_z,
        h_x_given_yz,
        residual_bivariate: i_xyz - (i_xy + i_xz - i_x_yz),
        residual_entropy: i_xyz - (h_x - h_x_given_y - h_x_given_z + h_x_given_yz),
        residual_objective: (i_xy - i_xyz) - (h_x_given_z - h_x_given_yz),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = core::f64::consts::LN_2;

    fn seeded(dims: [usize; 3], seed: u64) -> JointTable {
        JointTable::random(dims, &mut SeedStream::new(seed))
    }

    #[test]
    fn marginalize_uniform_keeps_uniform() {
        let t = JointTable::uniform([2, 2, 2]);
        let px = t.marginalize(&[Var::X]).unwrap();
        assert_eq!(px.len(), 2);
        assert!((px[0] - 0.5).abs() < 1e-15);
        assert!((px[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marginalize_point_mass() {
        let mut probs = vec![0.0; 8];
        probs[0] = 1.0;
        let t = JointTable::new([2, 2, 2], probs).unwrap();
        let pxy = t.marginalize(&[Var::X, Var::Y]).unwrap();
        assert_eq!(pxy[0], 1.0);
        assert!(pxy[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn marginalize_matches_summation_oracle() {
        let t = seeded([3, 2, 2], 11);
        let pxz = t.marginalize(&[Var::X, Var::Z]).unwrap();
        // Independent oracle: sum over the dropped y axis by hand.
        for x in 0..3 {
            for z in 0..2 {
                let direct: f64 = (0..2).map(|y| t.p(x, y, z)).sum();
                assert!((pxz[x * 2 + z] - direct).abs() < 1e-15);
            }
        }
        let total: f64 = pxz.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginalize_empty_keep_rejected() {
        let t = JointTable::uniform([2, 2, 2]);
        assert!(t.marginalize(&[]).is_err());
    }

    #[test]
    fn entropy_known_values() {
        assert!((entropy(&[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        // Direct evaluation of -sum p ln p at (0.25, 0.75).
        assert!((entropy(&[0.25, 0.75]).unwrap() - 0.5623351446188083).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_negative_entries() {
        assert!(entropy(&[1.1, -0.1]).is_err());
    }

    #[test]
    fn conditional_entropy_independence_and_copy() {
        // X independent of Z, X uniform binary.
        let t = JointTable::uniform([2, 2, 2]);
        assert!((conditional_entropy(&t, Var::X, &[Var::Z]).unwrap() - LN2).abs() < 1e-12);
        // X = Z deterministic.
        let mut probs = vec![0.0; 8];
        probs[0 * 4 + 0 * 2 + 0] = 0.5;
        probs[1 * 4 + 0 * 2 + 1] = 0.5;
        let t = JointTable::new([2, 2, 2], probs).unwrap();
        assert!(conditional_entropy(&t, Var::X, &[Var::Z]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn conditional_entropy_chain_rule_oracle() {
        let t = seeded([2, 2, 2], 5);
        let h_xz = entropy(&t.marginalize(&[Var::X, Var::Z]).unwrap()).unwrap();
        let h_z = entropy(&t.marginalize(&[Var::Z]).unwrap()).unwrap();
        let got = conditional_entropy(&t, Var::X, &[Var::Z]).unwrap();
        assert!((got - (h_xz - h_z)).abs() < 1e-12);
    }

    #[test]
    fn conditional_entropy_rejects_overlap() {
        let t = JointTable::uniform([2, 2, 2]);
        assert!(conditional_entropy(&t, Var::X, &[Var::X]).is_err());
    }

    #[test]
    fn mutual_information_independence_and_copy() {
        let t = JointTable::uniform([2, 2, 2]);
        assert!(mutual_information(&t, Var::X, &[Var::Y]).unwrap().abs() < 1e-12);
        // X = Y uniform binary.
        let mut probs = vec![0.0; 8];
        probs[0 * 4 + 0 * 2 + 0] = 0.25;
        probs[0 * 4 + 0 * 2 + 1] = 0.25;
        probs[1 * 4 + 1 * 2 + 0] = 0.25;
        probs[1 * 4 + 1 * 2 + 1] = 0.25;
        let t = JointTable::new([2, 2, 2], probs).unwrap();
        assert!((mutual_information(&t, Var::X, &[Var::Y]).unwrap() - LN2).abs() < 1e-12);
    }

    #[test]
    fn mutual_information_matches_log_ratio_oracle() {
        let t = seeded([3, 4, 2], 17);
        // Independent oracle: direct sum of p(x,y) ln(p(x,y) / (p(x) p(y))).
        let pxy = t.marginalize(&[Var::X, Var::Y]).unwrap();
        let px = t.marginalize(&[Var::X]).unwrap();
        let py = t.marginalize(&[Var::Y]).unwrap();
        let mut oracle = 0.0;
        for x in 0..3 {
            for y in 0..4 {
                let p = pxy[x * 4 + y];
                if p > 0.0 {
                    oracle += p * crate::math::ln(p / (px[x] * py[y]));
                }
            }
        }
        let got = mutual_information(&t, Var::X, &[Var::Y]).unwrap();
        assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
    }

    #[test]
    fn mutual_information_rejects_overlap() {
        let t = JointTable::uniform([2, 2, 2]);
        assert!(mutual_information(&t, Var::X, &[Var::X, Var::Y]).is_err());
    }

    #[test]
    fn trivariate_mi_independent_is_zero() {
        let t = JointTable::uniform([2, 3, 2]);
        assert!(trivariate_mi(&t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn trivariate_mi_xor_is_minus_ln2() {
        let t = JointTable::xor();
        assert!((trivariate_mi(&t).unwrap() + LN2).abs() < 1e-12);
    }

    #[test]
    fn trivariate_mi_matches_bivariate_decomposition() {
        for seed in 0..20 {
            let t = seeded([3, 3, 3], seed);
            let lhs = trivariate_mi(&t).unwrap();
            let rhs = mi_unclamped(&t, Var::X, &[Var::Y]).unwrap()
                + mi_unclamped(&t, Var::X, &[Var::Z]).unwrap()
                - mi_unclamped(&t, Var::X, &[Var::Y, Var::Z]).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn verify_decomposition_uniform_all_zero() {
        let r = verify_decomposition(&JointTable::uniform([2, 2, 2])).unwrap();
        assert!(r.i_xy.abs() < 1e-12);
        assert!(r.i_xyz.abs() < 1e-12);
        assert!(r.max_abs_residual() < 1e-12);
    }

    #[test]
    fn verify_decomposition_xor() {
        let r = verify_decomposition(&JointTable::xor()).unwrap();
        assert!((r.i_xyz + LN2).abs() < 1e-12);
        assert!(r.i_xy.abs() < 1e-12);
        assert!((r.i_x_yz - LN2).abs() < 1e-12);
        assert!(r.max_abs_residual() < 1e-12);
    }

    #[test]
    fn entropy_ordering_under_conditioning() {
        for seed in 100..120 {
            let t = seeded([4, 3, 2], seed);
            let h_x = entropy(&t.marginalize(&[Var::X]).unwrap()).unwrap();
            let h_xz = conditional_entropy(&t, Var::X, &[Var::Z]).unwrap();
            let h_xyz = conditional_entropy(&t, Var::X, &[Var::Y, Var::Z]).unwrap();
            assert!(h_xyz <= h_xz + 1e-12);
            assert!(h_xz <= h_x + 1e-12);
            assert!(h_xyz >= -1e-12);
        }
    }
}
