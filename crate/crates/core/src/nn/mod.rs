//! Dense tensors, parameter collections and the layer primitives the model
//! zoo is assembled from. Backprop is written out per layer; there is no tape.

mod loss;
mod ops;
mod params;
mod tensor;

pub use loss::{cross_entropy, cross_entropy_single, log_softmax_rows, mse, softmax_rows, LossOutput};
pub use ops::{
    dropout, global_grad_clip, global_norm, linear_backward, linear_forward, relu, relu_backward,
    LinearGrads,
};
pub use params::{GradSet, Param, ParamGroup, ParamRole, ParamSet, PARAMS_FORMAT, PARAMS_VERSION};
pub use tensor::{matmul, matmul_nt, matmul_tn, Precision, Tensor};
