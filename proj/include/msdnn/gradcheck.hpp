#ifndef MSDNN_GRADCHECK_HPP
#define MSDNN_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "msdnn/tensor.hpp"

namespace msdnn {

struct GradCheckReport {
    bool pass = true;
    double max_rel_error = 0.0;
    std::string worst; // "tensor 2, element 17"
    std::int64_t compared = 0;

    void merge(const GradCheckReport& other);
};

/// Scalar function of a list of tensors (inputs and/or parameters).
using ScalarFn = std::function<double(const std::vector<Tensor>&)>;

/// Central finite differences (f(x+e)-f(x-e))/2e against the supplied analytic
/// gradients. Relative error uses denominator max(|a|,|fd|,1e-8). Reports, does
/// not throw. `sample_stride` > 1 probes every k-th element of large tensors.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> point,
                           const std::vector<Tensor>& analytic, double epsilon = 1e-5,
                           double tolerance = 1e-4, std::int64_t sample_stride = 1);

struct KernelCheckResult {
    std::string kernel;
    GradCheckReport report;
};

/// Finite-difference suite over every differentiable kernel (conv2d,
/// transposed_conv2d, max_pool2, fully_connected, relu, sigmoid, concat,
/// RCL at T in {0,1,3}, sigmoid cross-entropy). One entry per kernel per seed.
std::vector<KernelCheckResult> kernel_grad_suite(const std::vector<std::uint64_t>& seeds,
                                                 double tolerance = 1e-4,
                                                 const std::vector<std::string>& filter = {});

struct NetworkConfig;

/// Whole-network check: finite differences of the training loss against the
/// accumulated parameter gradients, probing `samples_per_tensor` random
/// elements of every parameter tensor.
GradCheckReport model_grad_check(const NetworkConfig& cfg, std::uint64_t seed, int samples_per_tensor,
                                 double epsilon = 1e-5, double tolerance = 1e-3);

} // namespace msdnn

#endif
