//! Neural network pieces: a small convolutional encoder with global max
//! pooling, the ReLU projection and the cluster prediction head, softmax
//! cross-entropy, and the SGD / Adam optimizers. Backpropagation is written
//! out by hand over im2col + GEMM.

mod layers;
mod loss;
mod network;
mod optim;
mod scalar;

pub use layers::{Conv2d, Linear, Tensor3};
pub use loss::{cross_entropy, cross_entropy_grad, softmax};
pub use network::{
    argmax, encode_batch, Classifier, ConvBlockConfig, Encoder, InputNorm, ModelConfig, ParamSet,
    PretrainNet,
};
pub use optim::{Adam, Sgd};
pub use scalar::{gemm, Layout, Real};
