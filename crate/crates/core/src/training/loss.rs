use serde::{Deserialize, Serialize};

use crate::complex::ComplexTensor;
use crate::error::{Error, Result};
use crate::kspace::Constraint;
use crate::tensor::{self, l1_loss, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub image: f64,
    pub kspace: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            image: 1.0,
            kspace: 1.0,
        }
    }
}

/// Mean absolute error over both parts of every element.
pub fn image_l1(x_pred: &ComplexTensor, x_f: &ComplexTensor) -> Result<Tensor> {
    if x_pred.shape() != x_f.shape() {
        return Err(Error::shape(
            "image_l1",
            format!("{:?} vs {:?}", x_pred.shape(), x_f.shape()),
        ));
    }
    Ok(tensor::scale(
        &tensor::add(&l1_loss(&x_pred.re, &x_f.re)?, &l1_loss(&x_pred.im, &x_f.im)?)?,
        0.5,
    ))
}

/// `w_img · ‖x_f − x_pred‖₁ + w_k · ‖k_u − M ⊙ F(x_pred)‖₁`, both terms as
/// means over elements.
pub fn combined_loss(
    x_pred: &ComplexTensor,
    x_f: &ComplexTensor,
    constraint: &Constraint,
    weights: LossWeights,
) -> Result<Tensor> {
    let img = tensor::scale(&image_l1(x_pred, x_f)?, weights.image);
    if weights.kspace == 0.0 {
        return Ok(img);
    }
    let k = tensor::scale(&constraint.consistency_loss(x_pred)?, weights.kspace);
    tensor::add(&img, &k)
}
