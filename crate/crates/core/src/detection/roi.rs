//! Fixed-grid RoI max pooling and element-wise maximum fusion of pooled
//! context features.

use ndarray::{Array3, ArrayView3};

use crate::detection::{ContextConfig, ContextKind};
use crate::error::{Error, Result};
use crate::geometry::{mine_acm, mine_cm, should_mine, BoundingBox, ImageSize};

/// Pooled RoI feature of shape `(channels, grid_h, grid_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    pub values: Array3<f64>,
}

impl PooledFeature {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Bilinear read: four flat feature-map indices and their weights.
pub type Taps = [(usize, f64); 4];

/// A pooled feature plus, per element, the feature-map cells it was
/// interpolated from. Gradients are scattered back along this routing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedFeature {
    pub feature: PooledFeature,
    pub source: Vec<Taps>,
}

/// Samples per bin along each axis.
const SAMPLES: usize = 2;

/// Continuous feature-map coordinate of pixel `p`, clamped to the map.
/// Cell `i` is centred on pixel `(i + 0.5) * stride`.
fn to_cells(p: f64, stride: usize, cells: usize) -> (usize, usize, f64) {
    let u = (p / stride as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(cells - 1);
    (lo, hi, u - lo as f64)
}

/// Max-pools the region under `bbox` into a `grid x grid` layout. Each bin
/// takes the maximum of 2x2 bilinear samples, so the result moves smoothly
/// with the box instead of snapping to whole cells.
pub fn roi_pool_routed(
    feature_map: ArrayView3<'_, f64>,
    bbox: &BoundingBox,
    stride: usize,
    grid: usize,
) -> RoutedFeature {
    let (c, h, w) = feature_map.dim();
    let flat = feature_map.as_standard_layout();
    let flat = flat.as_slice().expect("standard layout");
    let bw = bbox.width() / grid as f64;
    let bh = bbox.height() / grid as f64;
    let offsets: Vec<f64> = (0..SAMPLES).map(|s| (s as f64 + 0.5) / SAMPLES as f64).collect();
    // sample positions are shared across channels
    let mut taps_per_bin: Vec<Vec<Taps>> = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        for gx in 0..grid {
            let mut taps = Vec::with_capacity(SAMPLES * SAMPLES);
            for &oy in &offsets {
                let (y0, y1, fy) = to_cells(bbox.y1 + (gy as f64 + oy) * bh, stride, h);
                for &ox in &offsets {
                    let (x0, x1, fx) = to_cells(bbox.x1 + (gx as f64 + ox) * bw, stride, w);
                    taps.push([
                        (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
                        (y0 * w + x1, (1.0 - fy) * fx),
                        (y1 * w + x0, fy * (1.0 - fx)),
                        (y1 * w + x1, fy * fx),
                    ]);
                }
            }
            taps_per_bin.push(taps);
        }
    }
    let mut values = Array3::zeros((c, grid, grid));
    let mut source = Vec::with_capacity(c * grid * grid);
    let vals = values.as_slice_mut().expect("standard layout");
    for ch in 0..c {
        let base = ch * h * w;
        for (bin, taps) in taps_per_bin.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = taps[0];
            for t in taps {
                let v: f64 = t.iter().map(|&(i, wt)| wt * flat[base + i]).sum();
                if v > best {
                    best = v;
                    arg = *t;
                }
            }
            vals[ch * grid * grid + bin] = best;
            source.push(arg.map(|(i, wt)| (base + i, wt)));
        }
    }
    RoutedFeature { feature: PooledFeature { values }, source }
}

/// Fixed-grid max pooling of the region under `bbox`.
pub fn roi_pool(
    feature_map: ArrayView3<'_, f64>,
    bbox: &BoundingBox,
    stride: usize,
    grid: usize,
) -> PooledFeature {
    roi_pool_routed(feature_map, bbox, stride, grid).feature
}

fn check_shapes(mut shapes: impl Iterator<Item = (usize, usize, usize)>) -> Result<(usize, usize, usize)> {
    let first = shapes.next().ok_or_else(|| Error::invalid("maxout needs at least one feature"))?;
    for s in shapes {
        if s != first {
            return Err(Error::ShapeMismatch {
                expected: vec![first.0, first.1, first.2],
                actual: vec![s.0, s.1, s.2],
            });
        }
    }
    Ok(first)
}

/// Element-wise maximum across equally shaped pooled features.
pub fn maxout_fuse(features: &[PooledFeature]) -> Result<PooledFeature> {
    check_shapes(features.iter().map(PooledFeature::shape))?;
    let mut out = features[0].values.clone();
    for f in &features[1..] {
        ndarray::Zip::from(&mut out).and(&f.values).for_each(|o, &v| *o = o.max(v));
    }
    Ok(PooledFeature { values: out })
}

/// Index of the input holding the maximum for every element (first wins on
/// ties), in row-major element order.
pub fn maxout_argmax(features: &[PooledFeature]) -> Result<Vec<usize>> {
    check_shapes(features.iter().map(PooledFeature::shape))?;
    let n = features[0].values.len();
    let slices: Vec<_> = features.iter().map(|f| f.values.iter().collect::<Vec<_>>()).collect();
    Ok((0..n)
        .map(|e| {
            let mut arg = 0;
            for (k, s) in slices.iter().enumerate().skip(1) {
                if *s[e] > *slices[arg][e] {
                    arg = k;
                }
            }
            arg
        })
        .collect())
}

/// Gradient of the fused output with respect to every input: each output
/// element's gradient goes to the input that supplied the maximum.
pub fn maxout_backward(features: &[PooledFeature], grad_out: &Array3<f64>) -> Result<Vec<Array3<f64>>> {
    let arg = maxout_argmax(features)?;
    let dim = features[0].values.raw_dim();
    let mut grads = vec![Array3::zeros(dim); features.len()];
    for ((e, g), &k) in grad_out.iter().enumerate().zip(&arg) {
        let view = grads[k].as_slice_mut().expect("standard layout");
        view[e] = *g;
    }
    Ok(grads)
}

fn maxout_routed(features: Vec<RoutedFeature>) -> RoutedFeature {
    let mut iter = features.into_iter();
    let mut acc = iter.next().expect("non-empty");
    for f in iter {
        let dst = acc.feature.values.as_slice_mut().expect("standard layout");
        let src = f.feature.values.as_slice().expect("standard layout");
        for e in 0..dst.len() {
            if src[e] > dst[e] {
                dst[e] = src[e];
                acc.source[e] = f.source[e];
            }
        }
    }
    acc
}

/// Pools `bbox`, fusing its context regions by element-wise maximum when
/// context mining is enabled and the box passes the area gate. With mining
/// disabled this is exactly [`roi_pool_routed`].
pub fn pool_with_context(
    feature_map: ArrayView3<'_, f64>,
    bbox: &BoundingBox,
    image: ImageSize,
    stride: usize,
    grid: usize,
    context: &ContextConfig,
) -> Result<RoutedFeature> {
    let origin = roi_pool_routed(feature_map, bbox, stride, grid);
    if context.mode == ContextKind::None || !should_mine(bbox, image.area(), context.alpha) {
        return Ok(origin);
    }
    let set = match context.mode {
        ContextKind::Cm => mine_cm(bbox, context.n_c, context.stride, image)?,
        ContextKind::Acm => mine_acm(bbox, context.m, context.n, context.stride, image)?,
        ContextKind::None => unreachable!(),
    };
    let mut pooled = Vec::with_capacity(set.len() + 1);
    pooled.push(origin);
    pooled.extend(set.contexts.iter().map(|c| roi_pool_routed(feature_map, c, stride, grid)));
    Ok(maxout_routed(pooled))
}

/// Adds `grad` (shaped like the pooled feature) into `feature_grad` along
/// the routing.
pub fn scatter_grad(routed: &RoutedFeature, grad: &[f64], feature_grad: &mut Array3<f64>) {
    let dst = feature_grad.as_slice_mut().expect("standard layout");
    for (taps, &g) in routed.source.iter().zip(grad) {
        for &(idx, wt) in taps {
            dst[idx] += g * wt;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |(c, y, x)| ((c * 37 + y * 11 + x * 5) % 17) as f64 - 3.0)
    }

    #[test]
    fn constant_map_pools_constant() {
        let fm = Array3::from_elem((2, 6, 8), 4.5);
        let b = BoundingBox::new(3.0, 5.0, 40.0, 30.0).unwrap();
        let p = roi_pool(fm.view(), &b, 8, 7);
        assert!(p.values.iter().all(|&v| (v - 4.5).abs() < 1e-12));
        assert_eq!(p.shape(), (2, 7, 7));
    }

    #[test]
    fn linear_map_reads_back_exactly() {
        // bilinear sampling is exact on a linear map, and the max sits at
        // the bottom-right sample of each bin
        let fm = Array3::from_shape_fn((1, 12, 12), |(_, y, x)| x as f64 + 10.0 * y as f64);
        let b = BoundingBox::new(16.0, 24.0, 72.0, 80.0).unwrap();
        let p = roi_pool(fm.view(), &b, 8, 7);
        for gy in 0..7 {
            for gx in 0..7 {
                let px = 16.0 + (gx as f64 + 0.75) * 8.0;
                let py = 24.0 + (gy as f64 + 0.75) * 8.0;
                let want = (px / 8.0 - 0.5) + 10.0 * (py / 8.0 - 0.5);
                assert!((p.values[[0, gy, gx]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_feature_moves_with_the_box() {
        let fm = map(2, 10, 10);
        let a = BoundingBox::new(17.0, 17.0, 30.0, 30.0).unwrap();
        let b = BoundingBox::new(18.0, 17.0, 31.0, 30.0).unwrap();
        assert_ne!(roi_pool(fm.view(), &a, 8, 7), roi_pool(fm.view(), &b, 8, 7));
        let tiny = BoundingBox::new(20.0, 20.0, 21.0, 21.0).unwrap();
        assert!(roi_pool(fm.view(), &tiny, 8, 7).values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn maxout_properties() {
        let a =
            PooledFeature { values: Array3::from_shape_fn((2, 3, 3), |(c, y, x)| (c + y) as f64 - x as f64) };
        let b = PooledFeature { values: a.values.mapv(|v| v + 1.0) };
        assert_eq!(maxout_fuse(&[a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(maxout_fuse(&[a.clone(), b.clone()]).unwrap(), b);
        let bad = PooledFeature { values: Array3::zeros((2, 2, 3)) };
        assert!(matches!(maxout_fuse(&[a.clone(), bad]), Err(Error::ShapeMismatch { .. })));
        assert!(maxout_fuse(&[]).is_err());
    }

    #[test]
    fn context_disabled_matches_plain_pooling() {
        let fm = map(2, 10, 12);
        let b = BoundingBox::new(30.0, 30.0, 36.0, 38.0).unwrap();
        let img = ImageSize::new(96, 80);
        let plain = roi_pool_routed(fm.view(), &b, 8, 7);
        let none = pool_with_context(fm.view(), &b, img, 8, 7, &ContextConfig::none()).unwrap();
        assert_eq!(plain, none);
        let gated = ContextConfig { alpha: 0.0, ..ContextConfig::cm(4, 4.0) };
        assert_eq!(plain, pool_with_context(fm.view(), &b, img, 8, 7, &gated).unwrap());
        let cm = pool_with_context(fm.view(), &b, img, 8, 7, &ContextConfig::cm(4, 4.0)).unwrap();
        assert!(ndarray::Zip::from(&cm.feature.values).and(&plain.feature.values).all(|a, b| a >= b));
        // routing reads the fused values back out of the map
        let flat = fm.as_slice().unwrap();
        for (v, taps) in cm.feature.values.iter().zip(&cm.source) {
            let back: f64 = taps.iter().map(|&(i, w)| w * flat[i]).sum();
            assert!((v - back).abs() < 1e-12);
        }
    }
}
