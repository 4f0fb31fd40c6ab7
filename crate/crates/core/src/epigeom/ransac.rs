//! Normalized eight-point algorithm inside RANSAC.

use nalgebra::{Matrix3, SMatrix, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{epipole_of, Correspondence, EpigeomError, FundamentalMatrix, GeometrySource, PairGeometry, Side};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Sampson distance threshold in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub min_inlier_ratio: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 1.5,
            max_iterations: 2000,
            confidence: 0.999,
            min_inliers: 30,
            min_inlier_ratio: 0.2,
        }
    }
}

/// Similarity transform moving the centroid to the origin with mean distance
/// sqrt(2).
fn normalizing_transform(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 1e-12 {
        std::f64::consts::SQRT_2 / mean_d
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Hartley-normalized linear estimate from at least 8 correspondences.
pub fn eight_point(matches: &[Correspondence]) -> Result<FundamentalMatrix<f64>, EpigeomError> {
    if matches.len() < 8 {
        return Err(EpigeomError::TooFewMatches(matches.len()));
    }
    let p: Vec<_> = matches.iter().map(|m| m.reference()).collect();
    let q: Vec<_> = matches.iter().map(|m| m.support()).collect();
    let tp = normalizing_transform(&p);
    let tq = normalizing_transform(&q);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (a, b) in p.iter().zip(&q) {
        let x = tp * a.push(1.0);
        let y = tq * b.push(1.0);
        let row = SMatrix::<f64, 1, 9>::from_row_slice(&[
            y.x * x.x,
            y.x * x.y,
            y.x,
            y.y * x.x,
            y.y * x.y,
            y.y,
            x.x,
            x.y,
            1.0,
        ]);
        ata += row.transpose() * row;
    }
    let eig = ata.symmetric_eigen();
    let mut imin = 0;
    for i in 1..9 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let v = eig.eigenvectors.column(imin);
    let fn_ = Matrix3::from_row_slice(v.as_slice());
    // rank-2 projection happens in normalized coordinates, then again after
    // denormalization inside `new`
    let fn_ = FundamentalMatrix::new(fn_)?;
    FundamentalMatrix::new(tq.transpose() * fn_.matrix() * tp)
}

fn inliers_of(f: &FundamentalMatrix<f64>, matches: &[Correspondence], thr: f64) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter(|(_, m)| f.sampson_error(&m.reference(), &m.support()) <= thr)
        .map(|(i, _)| i)
        .collect()
}

/// Robust fundamental matrix for a (reference, support) pair.
///
/// The best hypothesis is re-estimated on its consensus set until the inlier
/// count stops growing. Fails when the acceptance rule (minimum inlier count
/// and ratio) is not met.
pub fn estimate_fundamental_ransac(
    matches: &[Correspondence],
    seed: u64,
    params: &RansacParams,
) -> Result<PairGeometry, EpigeomError> {
    let n = matches.len();
    if n < 8 {
        return Err(EpigeomError::TooFewMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut iter = 0;
    let mut sample_buf = Vec::with_capacity(8);
    while iter < needed.min(params.max_iterations) {
        iter += 1;
        sample_buf.clear();
        sample_buf.extend(sample(&mut rng, n, 8).into_iter().map(|i| matches[i]));
        let Ok(f) = eight_point(&sample_buf) else { continue };
        let inl = inliers_of(&f, matches, params.threshold);
        if inl.len() > best.len() {
            best = inl;
            let w = best.len() as f64 / n as f64;
            let denom = (1.0 - w.powi(8)).ln();
            if denom < 0.0 {
                let k = ((1.0 - params.confidence).ln() / denom).ceil();
                needed = if k.is_finite() {
                    k.max(1.0) as usize
                } else {
                    params.max_iterations
                };
            }
        }
    }
    if best.len() < 8 {
        return Err(EpigeomError::NoConsensus {
            inliers: best.len(),
            ratio: best.len() as f64 / n as f64,
        });
    }

    let mut f = eight_point(&best.iter().map(|&i| matches[i]).collect::<Vec<_>>())?;
    let mut inl = inliers_of(&f, matches, params.threshold);
    for _ in 0..5 {
        if inl.len() < 8 {
            break;
        }
        let f2 = eight_point(&inl.iter().map(|&i| matches[i]).collect::<Vec<_>>())?;
        let inl2 = inliers_of(&f2, matches, params.threshold);
        if inl2.len() <= inl.len() {
            break;
        }
        f = f2;
        inl = inl2;
    }

    let ratio = inl.len() as f64 / n as f64;
    if inl.len() < params.min_inliers || ratio < params.min_inlier_ratio {
        return Err(EpigeomError::NoConsensus {
            inliers: inl.len(),
            ratio,
        });
    }
    let inliers: Vec<Correspondence> = inl.iter().map(|&i| matches[i]).collect();
    let mean = inliers
        .iter()
        .map(|m| f.sampson_error(&m.reference(), &m.support()))
        .sum::<f64>()
        / inliers.len() as f64;
    Ok(PairGeometry {
        e_ref: epipole_of(&f, Side::Reference),
        e_sup: epipole_of(&f, Side::Support),
        f,
        inliers,
        inlier_ratio: ratio,
        mean_sampson_error: mean,
        source: GeometrySource::Estimated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    // Two cameras looking at a random point cloud.
    fn scene(n: usize) -> (FundamentalMatrix<f64>, Vec<Correspondence>) {
        let k = Matrix3::new(600.0, 0.0, 320.0, 0.0, 600.0, 240.0, 0.0, 0.0, 1.0);
        let r = Rotation3::from_euler_angles(0.03, -0.12, 0.02).into_inner();
        let t = Vector3::new(-1.0, 0.1, 0.05);
        let mut state = 12345u64;
        let mut rnd = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let mut out = Vec::new();
        while out.len() < n {
            let p = Vector3::new(rnd() * 8.0 - 4.0, rnd() * 6.0 - 3.0, 6.0 + rnd() * 8.0);
            let a = k * p;
            let b = k * (r * p + t);
            let (a, b) = (a.xy() / a.z, b.xy() / b.z);
            if a.x.abs() < 2000.0 && b.x.abs() < 2000.0 {
                out.push(Correspondence::new([a.x, a.y], [b.x, b.y], 1.0));
            }
        }
        let kinv = k.try_inverse().unwrap();
        let f = FundamentalMatrix::new(kinv.transpose() * t.cross_matrix() * r * kinv).unwrap();
        (f, out)
    }

    #[test]
    fn eight_point_recovers_exact_geometry() {
        let (f_true, m) = scene(50);
        let f = eight_point(&m).unwrap();
        for c in &m {
            assert!(f.sampson_error(&c.reference(), &c.support()) < 1e-6);
        }
        let d = (f.matrix() - f_true.matrix())
            .norm()
            .min((f.matrix() + f_true.matrix()).norm());
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn seven_matches_is_too_few() {
        let (_, m) = scene(7);
        assert_eq!(
            estimate_fundamental_ransac(&m, 0, &RansacParams::default()).unwrap_err(),
            EpigeomError::TooFewMatches(7)
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let (_, mut m) = scene(120);
        for (i, c) in m.iter_mut().enumerate().take(30) {
            c.x_sup[0] += 40.0 + i as f64;
        }
        let a = estimate_fundamental_ransac(&m, 7, &RansacParams::default()).unwrap();
        let b = estimate_fundamental_ransac(&m, 7, &RansacParams::default()).unwrap();
        assert_eq!(a, b);
        for c in &a.inliers {
            assert!(a.f.sampson_error(&c.reference(), &c.support()) <= 1.5);
        }
    }

    #[test]
    fn too_few_inliers_fails_acceptance() {
        let (_, m) = scene(20);
        assert!(matches!(
            estimate_fundamental_ransac(&m, 1, &RansacParams::default()),
            Err(EpigeomError::NoConsensus { inliers: 20, .. })
        ));
    }
}
