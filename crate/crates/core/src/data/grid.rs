use super::FieldTensor;
use crate::{Error, Result};

/// Block-average every `factor x factor` tile. Accumulates in `f64`.
pub fn coarsen(hr: &FieldTensor, factor: usize) -> Result<FieldTensor> {
    let [t, c, h, w] = hr.shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!("grid {h}x{w} is not divisible by factor {factor}")));
    }
    let (ho, wo) = (h / factor, w / factor);
    let mut out = hr.zeros_like_with_grid(ho, wo);
    let inv = 1.0 / (factor * factor) as f64;
    for ti in 0..t {
        for ci in 0..c {
            let src = hr.plane(ti, ci);
            let dst = out.plane_mut(ti, ci);
            for bi in 0..ho {
                for bj in 0..wo {
                    let mut acc = 0.0f64;
                    for i in bi * factor..(bi + 1) * factor {
                        acc += src[i * w + bj * factor..i * w + (bj + 1) * factor]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    dst[bi * wo + bj] = (acc * inv) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Replicate each coarse value over a `factor x factor` block.
pub fn upsample_nn(lr: &FieldTensor, factor: usize) -> Result<FieldTensor> {
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be at least 1".into()));
    }
    let [t, c, h, w] = lr.shape();
    let (ho, wo) = (h * factor, w * factor);
    let mut out = lr.zeros_like_with_grid(ho, wo);
    for ti in 0..t {
        for ci in 0..c {
            let src = lr.plane(ti, ci);
            let dst = out.plane_mut(ti, ci);
            for i in 0..ho {
                let row = &src[(i / factor) * w..(i / factor + 1) * w];
                for (j, d) in dst[i * wo..(i + 1) * wo].iter_mut().enumerate() {
                    *d = row[j / factor];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(h: usize, w: usize, values: Vec<f32>) -> FieldTensor {
        FieldTensor::new(values, [1, 1, h, w], vec!["pr".into()], vec!["mm/day".into()], "e", vec![0]).unwrap()
    }

    #[test]
    fn block_mean_of_two_by_two() {
        let t = tensor(2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(coarsen(&t, 2).unwrap().values(), &[4.0]);
    }

    #[test]
    fn paper_geometry() {
        let hr = tensor(128, 128, (0..128 * 128).map(|i| (i % 97) as f32).collect());
        let lr = coarsen(&hr, 16).unwrap();
        assert_eq!(lr.grid_size(), (8, 8));
        assert_eq!(upsample_nn(&lr, 16).unwrap().grid_size(), (128, 128));
    }

    #[test]
    fn constant_field_stays_constant() {
        let t = tensor(8, 8, vec![2.5; 64]);
        assert!(coarsen(&t, 4).unwrap().values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        let t = tensor(6, 6, vec![0.0; 36]);
        assert!(matches!(coarsen(&t, 4), Err(Error::Config(_))));
    }

    #[test]
    fn factor_one_is_identity() {
        let t = tensor(3, 2, vec![1.0, -2.0, 3.5, 0.0, 7.0, 9.0]);
        assert_eq!(upsample_nn(&t, 1).unwrap(), t);
    }
}
