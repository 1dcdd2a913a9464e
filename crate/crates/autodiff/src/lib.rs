//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The operation set is the one needed by small encoder-decoder and
//! convolutional classifier networks: 2-d/3-d convolution and transposed
//! convolution, instance normalization, pointwise activations, channel
//! concatenation, spatial pooling, tiling and fully-connected layers.
//!
//! ```
//! use autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::new(&[3], vec![1.0, -2.0, 3.0]));
//! let y = g.square(x);
//! let loss = g.sum(y);
//! let grads = g.backward(loss);
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

pub mod conv;
mod gemm;
mod graph;
mod tensor;

pub use conv::ConvSpec;
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;
