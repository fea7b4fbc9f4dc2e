#ifndef MSDNN_RCL_HPP
#define MSDNN_RCL_HPP

#include <vector>

#include "msdnn/nnops.hpp"
#include "msdnn/tensor.hpp"

namespace msdnn {

/// Recurrent convolutional layer configuration. The kernel must be odd so
/// padding (k-1)/2 preserves spatial size across time steps.
struct RclConfig {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_size = 3;
    int timesteps = 3;
    int padding = 1;

    void validate() const;
};

/// Shared weights of the recurrence: feed-forward kernel w_f [Cout,Cin,k,k],
/// recurrent kernel w_r [Cout,Cout,k,k], bias b [Cout].
struct RclParams {
    Tensor w_f;
    Tensor w_r;
    Tensor b;
};

/// Everything backward needs: the layer input and all T+1 states.
struct RclCache {
    Tensor input;
    std::vector<Tensor> states; // x_0 .. x_T, post-activation
};

struct RclGrads {
    Tensor grad_input;
    Tensor grad_w_f;
    Tensor grad_w_r;
    Tensor grad_b;
};

/// x_0 = relu(conv(u; w_f) + b); x_t = relu(conv(u; w_f) + conv(x_{t-1}; w_r) + b).
/// Returns x_T plus the cached states.
RclCache rcl_forward(const Tensor& input, const RclParams& params, const RclConfig& cfg);

inline const Tensor& rcl_output(const RclCache& cache) { return cache.states.back(); }

/// Backpropagation through the unfolded graph. Weights are shared across time
/// steps, so the weight and bias gradients are sums of per-step contributions;
/// grad_input accumulates the feed-forward path of every step.
RclGrads rcl_backward(const RclCache& cache, const RclParams& params, const RclConfig& cfg,
                      const Tensor& grad_out);

/// Depth of the unfolded feed-forward network: n_blocks*(T+1) + 2.
int effective_depth(const RclConfig& cfg, int n_recurrent_blocks);

} // namespace msdnn

#endif
