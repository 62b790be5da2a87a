//! Evaluation metrics between a predicted cloud and a ground-truth cloud.

use alloc::vec::Vec;

use crate::cloud::Point3;
use crate::knn::KnnIndex;
use crate::{Error, Result};

/// Precision, coverage and CD-L2 are in squared units; UCD is squared and
/// UHD is a plain distance.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub cd_l2: f64,
    pub precision: f64,
    pub coverage: f64,
    pub ucd: f64,
    pub uhd: f64,
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &[Point3], to: &[Point3]) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = KnnIndex::build(to)?;
    Ok(from.iter().map(|&p| index.nearest(p).distance).collect())
}

pub fn ucd(from: &[Point3], to: &[Point3], squared: bool) -> Result<f64> {
    let d = nearest_distances(from, to)?;
    let sum: f64 = if squared {
        d.iter().map(|x| x * x).sum()
    } else {
        d.iter().sum()
    };
    Ok(sum / d.len() as f64)
}

/// Largest nearest-neighbor distance from `from` to `to`.
pub fn uhd(from: &[Point3], to: &[Point3]) -> Result<f64> {
    Ok(nearest_distances(from, to)?.into_iter().fold(0.0, f64::max))
}

pub fn evaluate(p_out: &[Point3], p_gt: &[Point3]) -> Result<MetricReport> {
    let forward = nearest_distances(p_out, p_gt)?;
    let backward = nearest_distances(p_gt, p_out)?;
    let mean_sq = |d: &[f64]| d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    let precision = mean_sq(&forward);
    let coverage = mean_sq(&backward);
    Ok(MetricReport {
        cd_l2: precision + coverage,
        precision,
        coverage,
        ucd: precision,
        uhd: forward.iter().copied().fold(0.0, f64::max),
    })
}

/// Metrics for data without ground truth, measured from the partial input
/// to the prediction.
pub fn evaluate_unpaired(p_in: &[Point3], p_out: &[Point3]) -> Result<(f64, f64)> {
    let d = nearest_distances(p_in, p_out)?;
    let ucd = d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
    Ok((ucd, d.iter().copied().fold(0.0, f64::max)))
}

/// Field-wise mean of a set of reports.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mut m = MetricReport::default();
    for r in reports {
        m.cd_l2 += r.cd_l2 / n;
        m.precision += r.precision / n;
        m.coverage += r.coverage / n;
        m.ucd += r.ucd / n;
        m.uhd += r.uhd / n;
    }
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::dist2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn loop_min(p: Point3, to: &[Point3]) -> f64 {
        let mut best = f64::INFINITY;
        for &q in to {
            best = best.min(dist2(p, q));
        }
        best
    }

    #[test]
    fn identical_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 50);
        assert_eq!(evaluate(&a, &a).unwrap(), MetricReport::default());
    }

    #[test]
    fn subset_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random(&mut rng, 40);
        let out = gt[..10].to_vec();
        let r = evaluate(&out, &gt).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.uhd, 0.0);
        assert!(r.coverage > 0.0);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&mut rng, 32);
            let b = random(&mut rng, 32);
            let r = evaluate(&a, &b).unwrap();
            let p: f64 = a.iter().map(|&x| loop_min(x, &b)).sum::<f64>() / 32.0;
            let c: f64 = b.iter().map(|&x| loop_min(x, &a)).sum::<f64>() / 32.0;
            let h = a.iter().map(|&x| loop_min(x, &b).sqrt()).fold(0.0, f64::max);
            assert!((r.precision - p).abs() < 1e-9);
            assert!((r.coverage - c).abs() < 1e-9);
            assert!((r.cd_l2 - p - c).abs() < 1e-9);
            assert!((r.uhd - h).abs() < 1e-9);
            assert!(r.uhd >= ucd(&a, &b, false).unwrap());
        }
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(evaluate(&[], &[[0.0; 3]]).unwrap_err(), Error::EmptyCloud);
    }

    #[test]
    fn mean_of_reports() {
        let a = MetricReport {
            cd_l2: 2.0,
            precision: 1.0,
            coverage: 1.0,
            ucd: 1.0,
            uhd: 4.0,
        };
        let m = mean_report(&[a, MetricReport::default()]).unwrap();
        assert_eq!(m.cd_l2, 1.0);
        assert_eq!(m.uhd, 2.0);
        assert!(mean_report(&[]).is_none());
    }
}
