use crate::error::{Error, Result};
use crate::volume::{ImageVolume, LabelVolume};

/// Pearson correlation of two equally long samples.
pub fn cc_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    let n = a.len() as f64;
    if a.len() < 2 || a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("need >= 2 paired samples, got {} and {}", a.len(), b.len())));
    }
    let (mut sa, mut sb) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sa += x as f64;
        sb += y as f64;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero intensity variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn bin_index(v: f32, lo: f32, width: f32, bins: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    (((v - lo) / width) as usize).min(bins - 1)
}

/// Mutual information (nats) from a row-major `na x nb` table of counts.
pub fn mi_from_counts(counts: &[f64], na: usize, nb: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for i in 0..na {
        for j in 0..nb {
            let c = counts[i * nb + j] / total;
            pa[i] += c;
            pb[j] += c;
        }
    }
    let mut mi = 0.0;
    for i in 0..na {
        for j in 0..nb {
            let p = counts[i * nb + j] / total;
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// MI of two samples using `bins` equal-width bins per image over each
/// sample's min-max range. A constant sample gives 0.
pub fn mi_slices(a: &[f32], b: &[f32], bins: usize) -> f64 {
    let range = |v: &[f32]| v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (alo, ahi) = range(a);
    let (blo, bhi) = range(b);
    let (aw, bw) = ((ahi - alo) / bins as f32, (bhi - blo) / bins as f32);
    let mut counts = vec![0.0; bins * bins];
    for (&x, &y) in a.iter().zip(b) {
        counts[bin_index(x, alo, aw, bins) * bins + bin_index(y, blo, bw, bins)] += 1.0;
    }
    mi_from_counts(&counts, bins, bins)
}

fn masked_pairs(a: &ImageVolume, b: &ImageVolume, mask: Option<&LabelVolume>) -> Result<(Vec<f32>, Vec<f32>)> {
    a.grid().check_same(b.grid(), "metric inputs")?;
    match mask {
        None => Ok((a.data().to_vec(), b.data().to_vec())),
        Some(m) => {
            a.grid().check_same(m.grid(), "metric mask")?;
            let keep = |v: &ImageVolume| {
                v.data().iter().zip(m.data()).filter(|(_, &k)| k != 0).map(|(x, _)| *x).collect::<Vec<_>>()
            };
            Ok((keep(a), keep(b)))
        }
    }
}

pub fn metric_cc(a: &ImageVolume, b: &ImageVolume, mask: Option<&LabelVolume>) -> Result<f64> {
    let (x, y) = masked_pairs(a, b, mask)?;
    cc_slices(&x, &y)
}

pub fn metric_mi(a: &ImageVolume, b: &ImageVolume, mask: Option<&LabelVolume>, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let (x, y) = masked_pairs(a, b, mask)?;
    if x.is_empty() {
        return Err(Error::Empty("metric mask is empty".into()));
    }
    Ok(mi_slices(&x, &y, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cc_cases() {
        assert!((cc_slices(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        let a: Vec<f32> = (0..50).map(|i| ((i * 37) % 11) as f32).collect();
        let neg: Vec<f32> = a.iter().map(|x| -x + 5.0).collect();
        assert!((cc_slices(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cc_slices(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cc_slices(&a, &[3.0; 50]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mi_cases() {
        // [[0.5, 0], [0, 0.5]] -> ln 2
        assert!((mi_from_counts(&[1.0, 0.0, 0.0, 1.0], 2, 2) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(mi_from_counts(&[1.0, 1.0, 1.0, 1.0], 2, 2), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f32> = (0..100_000).map(|_| rng.random()).collect();
        let b: Vec<f32> = (0..100_000).map(|_| rng.random()).collect();
        assert!(mi_slices(&a, &b, 32) < 0.05);

        // b = a: MI equals the entropy of a's binned distribution
        let (lo, hi) = a.iter().fold((1.0f32, 0.0f32), |(l, h), &x| (l.min(x), h.max(x)));
        let w = (hi - lo) / 32.0;
        let mut counts = [0.0f64; 32];
        for &x in &a {
            counts[bin_index(x, lo, w, 32)] += 1.0;
        }
        let h: f64 = counts.iter().filter(|&&c| c > 0.0).map(|c| -(c / 1e5) * (c / 1e5).ln()).sum();
        assert!((mi_slices(&a, &a, 32) - h).abs() < 1e-12);
        assert_eq!(mi_slices(&a, &vec![2.0; a.len()], 32), 0.0);
    }

    #[test]
    fn masked_volume_metrics() {
        let g = Grid::with_dims([4, 4, 1]);
        let a = ImageVolume::new(g.clone(), (0..16).map(|i| i as f32).collect()).unwrap();
        let mut bd: Vec<f32> = (0..16).map(|i| 2.0 * i as f32 + 1.0).collect();
        bd[15] = -100.0;
        let b = ImageVolume::new(g.clone(), bd).unwrap();
        let mut md = vec![1u8; 16];
        md[15] = 0;
        let m = LabelVolume::new(g.clone(), md).unwrap();
        assert!((metric_cc(&a, &b, Some(&m)).unwrap() - 1.0).abs() < 1e-12);
        assert!(metric_cc(&a, &b, None).unwrap() < 0.9);
        let empty = LabelVolume::zeros(g);
        assert!(matches!(metric_mi(&a, &b, Some(&empty), 32), Err(Error::Empty(_))));
    }
}
