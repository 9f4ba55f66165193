use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::landmarks::{Landmark, VirtualLandmark};
use crate::numerics::{from_rows, to_rows};
use crate::{Mat, Vector};

/// Output feedback law `u = sum_i K_i y_i + k` over landmark displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFeedbackController {
    pub blocks: Vec<Mat>,
    pub bias: Vector,
    pub landmark_ids: Vec<String>,
}

impl OutputFeedbackController {
    pub fn new(blocks: Vec<Mat>, bias: Vector, landmark_ids: Vec<String>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::Domain("controller needs at least one block".into()))?;
        let (m, n) = first.shape();
        check_dim("controller landmark ids", blocks.len(), landmark_ids.len())?;
        check_dim("controller bias", m, bias.len())?;
        for b in &blocks {
            check_dim("controller block rows", m, b.nrows())?;
            check_dim("controller block columns", n, b.ncols())?;
        }
        Ok(Self {
            blocks,
            bias,
            landmark_ids,
        })
    }

    pub fn zero(m: usize, n: usize, landmark_ids: Vec<String>) -> Result<Self> {
        let blocks = vec![Mat::zeros(m, n); landmark_ids.len()];
        Self::new(blocks, Vector::zeros(m), landmark_ids)
    }

    pub fn input_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn state_dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `sum_i K_i`, the feedback on the state itself.
    pub fn gain_sum(&self) -> Mat {
        self.blocks
            .iter()
            .fold(Mat::zeros(self.input_dim(), self.state_dim()), |a, b| a + b)
    }

    /// `[K_1 ... K_N]`.
    pub fn stacked(&self) -> Mat {
        let (m, n) = (self.input_dim(), self.state_dim());
        let mut out = Mat::zeros(m, n * self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((0, i * n), (m, n)).copy_from(b);
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    /// Checks that blocks line up with `landmarks` by count and dimension.
    pub fn check_landmarks(&self, landmarks: &[Landmark]) -> Result<()> {
        check_dim("controller blocks vs landmarks", landmarks.len(), self.blocks.len())?;
        for l in landmarks {
            check_dim(&format!("landmark `{}` dimension", l.id), self.state_dim(), l.dim())?;
        }
        Ok(())
    }
}

/// `u = sum_i K_i y_i + k`.
pub fn compute_control(controller: &OutputFeedbackController, measurements: &[Vector]) -> Result<Vector> {
    check_dim("measurement count", controller.num_blocks(), measurements.len())?;
    let mut u = controller.bias.clone();
    for (k, y) in controller.blocks.iter().zip(measurements) {
        check_dim("measurement dimension", controller.state_dim(), y.len())?;
        u += k * y;
    }
    Ok(u)
}

/// Rewrites a controller over `sources` as a single block acting on the
/// virtual measurement of `target`. Noiseless outputs are unchanged.
pub fn remix_controller(
    controller: &OutputFeedbackController,
    sources: &[Landmark],
    target: &VirtualLandmark,
    target_id: &str,
) -> Result<OutputFeedbackController> {
    controller.check_landmarks(sources)?;
    check_dim("virtual landmark dimension", controller.state_dim(), target.dim())?;
    let mut bias = controller.bias.clone();
    for (k, l) in controller.blocks.iter().zip(sources) {
        bias += k * (&l.position - &target.position);
    }
    OutputFeedbackController::new(vec![controller.gain_sum()], bias, vec![target_id.to_string()])
}

#[derive(Serialize, Deserialize)]
struct ControllerRepr {
    input_dim: usize,
    state_dim: usize,
    landmark_ids: Vec<String>,
    blocks: Vec<Vec<Vec<f64>>>,
    bias: Vec<f64>,
}

impl Serialize for OutputFeedbackController {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ControllerRepr {
            input_dim: self.input_dim(),
            state_dim: self.state_dim(),
            landmark_ids: self.landmark_ids.clone(),
            blocks: self.blocks.iter().map(to_rows).collect(),
            bias: self.bias.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutputFeedbackController {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ControllerRepr::deserialize(d)?;
        let blocks = r
            .blocks
            .iter()
            .map(|b| from_rows(b))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let c = OutputFeedbackController::new(blocks, Vector::from_vec(r.bias), r.landmark_ids)
            .map_err(D::Error::custom)?;
        if c.input_dim() != r.input_dim || c.state_dim() != r.state_dim {
            return Err(D::Error::custom("controller dimensions disagree with its blocks"));
        }
        Ok(c)
    }
}
