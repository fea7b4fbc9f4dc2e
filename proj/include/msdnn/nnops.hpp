#ifndef MSDNN_NNOPS_HPP
#define MSDNN_NNOPS_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "msdnn/tensor.hpp"

namespace msdnn {

/// Plain convolution parameters. Weights [Cout, Cin, kh, kw], bias [Cout].
/// Cross-correlation convention (no kernel flip), zero padding.
struct ConvParams {
    Tensor weights;
    Tensor bias;
    int stride = 1;
    int padding = 0;
};

/// Transposed convolution parameters. Weights [Cin, Cout, kh, kw], bias [Cout].
/// Forward is the adjoint of a stride-s convolution: output (Hin-1)*stride + kh.
struct DeconvParams {
    Tensor weights;
    Tensor bias;
    int stride = 1;
};

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_weights;
    Tensor grad_bias;
};

struct DeconvGrads {
    Tensor grad_input;
    Tensor grad_weights;
    Tensor grad_bias;
};

struct FcGrads {
    Tensor grad_input;
    Tensor grad_weights;
    Tensor grad_bias;
};

struct MaxPoolResult {
    Tensor output;
    std::vector<std::int64_t> argmax; // flat input index per output element
};

Tensor conv2d(const Tensor& input, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out);

Tensor transposed_conv2d(const Tensor& input, const DeconvParams& p);
DeconvGrads transposed_conv2d_backward(const Tensor& input, const DeconvParams& p, const Tensor& grad_out);

/// 2x2 window, stride 2; H and W must be even. Ties go to the first index in
/// row-major window order.
MaxPoolResult max_pool2(const Tensor& input);
Tensor max_pool2_backward(const MaxPoolResult& cache, const Shape& input_shape, const Tensor& grad_out);

/// out[n,m] = sum_d w[m,d]*in[n,d] + b[m]; input [N,D], weights [M,D], bias [M].
Tensor fully_connected(const Tensor& input, const Tensor& weights, const Tensor& bias);
FcGrads fully_connected_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu(const Tensor& t);
/// Subgradient 0 at exactly 0; `input` is the forward input (its output works
/// too, the sign pattern is identical).
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor sigmoid(const Tensor& t);
/// `output` is the cached forward output; derivative y*(1-y).
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);

/// Channel concatenation of [N,Ci,H,W] tensors sharing N, H, W.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::vector<Tensor> split_channels(const Tensor& t, const std::vector<int>& channel_counts);

} // namespace msdnn

#endif
