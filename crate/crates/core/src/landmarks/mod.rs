//! Landmark measurements and their fusion into virtual landmarks.

mod lme;

pub use lme::{default_ridge, lme_next_weights, lme_sequence, LmeDiagnostics, LmeInternals, LmeStep};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{symmetrize, SpdMatrix};
use crate::{Mat, Vector};

/// Fused covariances above this condition number are rejected.
pub const MAX_FUSION_CONDITION: f64 = 1e12;
const WEIGHT_SUM_TOL: f64 = 1e-8;

/// A fixed point whose displacement from the robot is measured with
/// zero-mean Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: String,
    pub position: Vector,
    pub covariance: SpdMatrix,
}

impl Landmark {
    pub fn new(id: impl Into<String>, position: Vector, covariance: SpdMatrix) -> Result<Self> {
        check_dim("landmark covariance", position.len(), covariance.dim())?;
        Ok(Self {
            id: id.into(),
            position,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }
}

/// Weighted combination of physical landmarks. The weights sum to the
/// identity so the fused measurement is again a displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualLandmark {
    pub weights: Vec<Mat>,
    pub position: Vector,
    pub covariance: SpdMatrix,
}

impl VirtualLandmark {
    /// Builds the virtual landmark induced by `weights` over `landmarks`.
    pub fn from_weights(landmarks: &[Landmark], weights: Vec<Mat>) -> Result<Self> {
        let n = common_dim(landmarks)?;
        check_dim("weight count", landmarks.len(), weights.len())?;
        let mut sum = Mat::zeros(n, n);
        let mut position = Vector::zeros(n);
        let mut cov = Mat::zeros(n, n);
        for (l, w) in landmarks.iter().zip(&weights) {
            check_dim("weight rows", n, w.nrows())?;
            check_dim("weight columns", n, w.ncols())?;
            sum += w;
            position += w * &l.position;
            cov += w * l.covariance.matrix() * w.transpose();
        }
        let err = (&sum - Mat::identity(n, n)).amax();
        let scale = weights.iter().map(|w| w.amax()).fold(1.0, f64::max);
        if err > WEIGHT_SUM_TOL * scale {
            return Err(Error::Domain(format!("virtual landmark weights sum to identity only within {err:.3e}")));
        }
        Ok(Self {
            weights,
            position,
            covariance: SpdMatrix::named(symmetrize(&cov), "virtual landmark covariance")?,
        })
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// The virtual landmark viewed as a single physical source.
    pub fn as_landmark(&self, id: impl Into<String>) -> Landmark {
        Landmark {
            id: id.into(),
            position: self.position.clone(),
            covariance: self.covariance.clone(),
        }
    }
}

fn common_dim(landmarks: &[Landmark]) -> Result<usize> {
    let first = landmarks
        .first()
        .ok_or_else(|| Error::Domain("at least one landmark is required".into()))?;
    let n = first.dim();
    for l in landmarks {
        check_dim(&format!("landmark `{}` dimension", l.id), n, l.dim())?;
    }
    Ok(n)
}

/// Noisy displacement `Y - x + noise` with noise drawn from the landmark's
/// covariance.
pub fn sample_measurement<R: Rng + ?Sized>(landmark: &Landmark, x: &Vector, rng: &mut R) -> Result<Vector> {
    check_dim("robot position", landmark.dim(), x.len())?;
    let z = Vector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(&landmark.position - x + landmark.covariance.cholesky_factor() * z)
}

/// Inverse-variance weighted fusion; the resulting covariance is the
/// smallest achievable in every direction.
pub fn fuse_min_variance(landmarks: &[Landmark]) -> Result<VirtualLandmark> {
    let n = common_dim(landmarks)?;
    if let [only] = landmarks {
        return Ok(VirtualLandmark {
            weights: vec![Mat::identity(n, n)],
            position: only.position.clone(),
            covariance: only.covariance.clone(),
        });
    }
    let mut info = Mat::zeros(n, n);
    let mut precisions = Vec::with_capacity(landmarks.len());
    for l in landmarks {
        let cond = l.covariance.condition_number();
        if cond > MAX_FUSION_CONDITION {
            return Err(Error::IllConditioned {
                what: format!("covariance of landmark `{}`", l.id),
                condition: cond,
            });
        }
        let p = l.covariance.inverse();
        info += &p;
        precisions.push(p);
    }
    let info = SpdMatrix::named(symmetrize(&info), "fused information")?;
    let fused = info.inverse();
    let weights: Vec<Mat> = precisions.iter().map(|p| &fused * p).collect();
    let position = weights
        .iter()
        .zip(landmarks)
        .fold(Vector::zeros(n), |acc, (w, l)| acc + w * &l.position);
    Ok(VirtualLandmark {
        weights,
        position,
        covariance: SpdMatrix::named(fused, "fused covariance")?,
    })
}

/// Fused displacement `sum_i W_i y_i`.
pub fn virtual_measurement(vl: &VirtualLandmark, measurements: &[Vector]) -> Result<Vector> {
    check_dim("measurement count", vl.weights.len(), measurements.len())?;
    let mut out = Vector::zeros(vl.dim());
    for (w, y) in vl.weights.iter().zip(measurements) {
        check_dim("measurement dimension", vl.dim(), y.len())?;
        out += w * y;
    }
    Ok(out)
}
