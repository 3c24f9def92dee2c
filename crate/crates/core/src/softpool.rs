//! Exponentially weighted pooling of 2D feature maps.
//!
//! Every `k x k` kernel region is replaced by `sum_i w_i c_i` where
//! `w = softmax(region)`. The pooled map is what clients transmit, so the
//! kernel controls how much a prototype is compressed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::FeatureMap;

/// Kernel side length and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub k_hat: usize,
    pub stride: usize,
}

impl KernelSpec {
    /// Non-overlapping kernel (`stride == k_hat`).
    pub fn square(k_hat: usize) -> Self {
        Self { k_hat, stride: k_hat }
    }

    /// The 1x1 kernel, under which pooling is the identity.
    pub fn identity() -> Self {
        Self { k_hat: 1, stride: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_hat == 0 || self.stride == 0 {
            return Err(Error::Config("kernel size and stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Output dimensions for an input of `rows x cols`. Trailing rows or
    /// columns that cannot host a full kernel are dropped.
    pub fn output_dims(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if self.k_hat > rows || self.k_hat > cols {
            return Err(Error::Shape(format!(
                "kernel {k}x{k} does not fit a {rows}x{cols} map",
                k = self.k_hat
            )));
        }
        Ok(((rows - self.k_hat) / self.stride + 1, (cols - self.k_hat) / self.stride + 1))
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::square(2)
    }
}

/// Softmax weights of a region, computed after subtracting the maximum.
pub fn region_weights(region: &[f64]) -> Vec<f64> {
    let max = region.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = region.iter().map(|c| (c - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `sum_i w_i c_i` over one region.
pub fn pool_region(region: &[f64]) -> f64 {
    let out: f64 = region_weights(region).iter().zip(region).map(|(w, c)| w * c).sum();
    // Rounding can push a convex combination a hair outside its hull.
    let (lo, hi) = region
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    out.clamp(lo, hi)
}

fn gather_region(map: &FeatureMap, k: usize, r0: usize, c0: usize, buf: &mut Vec<f64>) {
    buf.clear();
    for r in r0..r0 + k {
        buf.extend_from_slice(&map.values[r * map.cols + c0..r * map.cols + c0 + k]);
    }
}

/// Pools every kernel position in row-major order.
pub fn softpool(map: &FeatureMap, spec: KernelSpec) -> Result<FeatureMap> {
    let (out_rows, out_cols) = spec.output_dims(map.rows, map.cols)?;
    if spec.k_hat == 1 && spec.stride == 1 {
        return Ok(map.clone());
    }
    let mut values = Vec::with_capacity(out_rows * out_cols);
    let mut region = Vec::with_capacity(spec.k_hat * spec.k_hat);
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            gather_region(map, spec.k_hat, orow * spec.stride, ocol * spec.stride, &mut region);
            values.push(pool_region(&region));
        }
    }
    FeatureMap::new(out_rows, out_cols, values)
}

/// Gradient of `sum(upstream * softpool(map))` with respect to `map`.
///
/// Within a region, `d out / d c_i = w_i (1 + c_i - out)`. Overlapping
/// regions accumulate.
pub fn softpool_backward(map: &FeatureMap, spec: KernelSpec, upstream: &FeatureMap) -> Result<FeatureMap> {
    let (out_rows, out_cols) = spec.output_dims(map.rows, map.cols)?;
    if upstream.rows != out_rows || upstream.cols != out_cols {
        return Err(Error::Shape(format!(
            "upstream gradient is {}x{}, pooled map is {out_rows}x{out_cols}",
            upstream.rows, upstream.cols
        )));
    }
    let mut grad = FeatureMap::zeros(map.rows, map.cols);
    let k = spec.k_hat;
    let mut region = Vec::with_capacity(k * k);
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let up = upstream.get(orow, ocol);
            if up == 0.0 {
                continue;
            }
            let (r0, c0) = (orow * spec.stride, ocol * spec.stride);
            gather_region(map, k, r0, c0, &mut region);
            let weights = region_weights(&region);
            let out: f64 = weights.iter().zip(&region).map(|(w, c)| w * c).sum();
            for (idx, (w, c)) in weights.iter().zip(&region).enumerate() {
                let (dr, dc) = (idx / k, idx % k);
                grad.values[(r0 + dr) * map.cols + c0 + dc] += up * w * (1.0 + c - out);
            }
        }
    }
    Ok(grad)
}

/// Lipschitz constant of region pooling with respect to the max-norm,
/// `k^2 - 1`.
pub fn lipschitz_constant(spec: KernelSpec) -> f64 {
    (spec.k_hat * spec.k_hat) as f64 - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_region_has_uniform_weights() {
        let w = region_weights(&[1.7; 9]);
        for v in w {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_entry_closed_form() {
        let w = region_weights(&[0.0, 3.0_f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-15);
        assert!((w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn weights_against_direct_evaluation() {
        // e^i / sum e^i for i = 1..4, evaluated without max subtraction.
        let region = [1.0, 2.0, 3.0, 4.0];
        let denom: f64 = region.iter().map(|c: &f64| c.exp()).sum();
        let w = region_weights(&region);
        for (wi, ci) in w.iter().zip(region) {
            assert!((wi - ci.exp() / denom).abs() < 1e-15);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pool_region_values() {
        assert_eq!(pool_region(&[2.5; 4]), 2.5);
        assert_eq!(pool_region(&[0.0; 4]), 0.0);
        // sum e^c c / sum e^c for (1, 2, 3, 4)
        assert!((pool_region(&[1.0, 2.0, 3.0, 4.0]) - 3.492_652_734_585_770).abs() < 1e-12);
    }

    #[test]
    fn whole_map_single_region() {
        let m = FeatureMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = softpool(&m, KernelSpec::square(2)).unwrap();
        assert_eq!((p.rows, p.cols), (1, 1));
        assert_eq!(p.values[0], pool_region(&[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn uniform_map_pools_to_itself() {
        let m = FeatureMap::new(4, 4, vec![-0.75; 16]).unwrap();
        let p = softpool(&m, KernelSpec::square(2)).unwrap();
        assert_eq!((p.rows, p.cols), (2, 2));
        assert!(p.values.iter().all(|&v| v == -0.75));
    }

    #[test]
    fn per_block_oracle() {
        let vals: Vec<f64> = (0..16).map(|i| ((i * 7919) % 23) as f64 / 5.0 - 2.0).collect();
        let m = FeatureMap::new(4, 4, vals.clone()).unwrap();
        let p = softpool(&m, KernelSpec::square(2)).unwrap();
        for br in 0..2 {
            for bc in 0..2 {
                let block: Vec<f64> = (0..2)
                    .flat_map(|dr| (0..2).map(move |dc| (2 * br + dr) * 4 + 2 * bc + dc))
                    .map(|i| vals[i])
                    .collect();
                assert_eq!(p.get(br, bc), pool_region(&block));
            }
        }
    }

    #[test]
    fn floor_semantics_drop_trailing_cells() {
        let m = FeatureMap::zeros(5, 7);
        let p = softpool(&m, KernelSpec::square(2)).unwrap();
        assert_eq!((p.rows, p.cols), (2, 3));
        let p = softpool(&m, KernelSpec { k_hat: 3, stride: 1 }).unwrap();
        assert_eq!((p.rows, p.cols), (3, 5));
    }

    #[test]
    fn kernel_larger_than_map_is_shape_error() {
        let m = FeatureMap::zeros(2, 2);
        assert!(matches!(softpool(&m, KernelSpec::square(3)), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_uniform_region() {
        let m = FeatureMap::new(2, 2, vec![0.4; 4]).unwrap();
        let up = FeatureMap::new(1, 1, vec![1.0]).unwrap();
        let g = softpool_backward(&m, KernelSpec::square(2), &up).unwrap();
        for v in g.values {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let g = softpool_backward(&m, KernelSpec::square(2), &FeatureMap::zeros(1, 1)).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_mismatch() {
        let m = FeatureMap::zeros(4, 4);
        let up = FeatureMap::zeros(1, 1);
        assert!(matches!(softpool_backward(&m, KernelSpec::square(2), &up), Err(Error::Shape(_))));
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(lipschitz_constant(KernelSpec::square(1)), 0.0);
        assert_eq!(lipschitz_constant(KernelSpec::square(2)), 3.0);
        assert_eq!(lipschitz_constant(KernelSpec::square(3)), 8.0);
    }
}
