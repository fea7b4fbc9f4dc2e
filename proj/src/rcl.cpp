#include "msdnn/rcl.hpp"

namespace msdnn {

void RclConfig::validate() const {
    if (in_channels < 1 || out_channels < 1) throw ShapeError("rcl: channels must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw ShapeError("rcl: kernel size must be odd, got " + std::to_string(kernel_size));
    if (timesteps < 0) throw ShapeError("rcl: negative timesteps");
    if (padding != (kernel_size - 1) / 2)
        throw ShapeError("rcl: padding must preserve spatial size ((k-1)/2)");
}

namespace {

void check_params(const RclParams& p, const RclConfig& cfg) {
    const Shape wf{cfg.out_channels, cfg.in_channels, cfg.kernel_size, cfg.kernel_size};
    const Shape wr{cfg.out_channels, cfg.out_channels, cfg.kernel_size, cfg.kernel_size};
    if (p.w_f.shape() != wf)
        throw ShapeError("rcl: w_f " + shape_str(p.w_f.shape()) + " expected " + shape_str(wf));
    if (p.w_r.shape() != wr)
        throw ShapeError("rcl: w_r " + shape_str(p.w_r.shape()) + " expected " + shape_str(wr));
    if (p.b.shape() != Shape{cfg.out_channels}) throw ShapeError("rcl: bias shape " + shape_str(p.b.shape()));
}

} // namespace

RclCache rcl_forward(const Tensor& input, const RclParams& params, const RclConfig& cfg) {
    cfg.validate();
    check_params(params, cfg);
    RclCache cache;
    cache.input = input;

    const ConvParams ff{params.w_f, params.b, 1, cfg.padding};
    const Tensor zero_bias({cfg.out_channels}, real(0));
    const ConvParams rec{params.w_r, zero_bias, 1, cfg.padding};

    // The feed-forward term conv(u; w_f) + b is identical at every step.
    const Tensor drive = conv2d(input, ff);
    cache.states.reserve(static_cast<std::size_t>(cfg.timesteps) + 1);
    cache.states.push_back(relu(drive));
    for (int t = 1; t <= cfg.timesteps; ++t) {
        Tensor z = add(drive, conv2d(cache.states.back(), rec));
        cache.states.push_back(relu(z));
    }
    return cache;
}

RclGrads rcl_backward(const RclCache& cache, const RclParams& params, const RclConfig& cfg,
                      const Tensor& grad_out) {
    cfg.validate();
    check_params(params, cfg);
    if (cache.states.size() != static_cast<std::size_t>(cfg.timesteps) + 1)
        throw ShapeError("rcl_backward: cache has " + std::to_string(cache.states.size()) + " states, expected " +
                         std::to_string(cfg.timesteps + 1));
    if (!grad_out.same_shape(cache.states.back()))
        throw ShapeError("rcl_backward: grad_out " + shape_str(grad_out.shape()) + " vs state " +
                         shape_str(cache.states.back().shape()));

    const ConvParams ff{params.w_f, params.b, 1, cfg.padding};
    const Tensor zero_bias({cfg.out_channels}, real(0));
    const ConvParams rec{params.w_r, zero_bias, 1, cfg.padding};

    RclGrads g;
    g.grad_input = Tensor(cache.input.shape());
    g.grad_w_f = Tensor(params.w_f.shape());
    g.grad_w_r = Tensor(params.w_r.shape());
    g.grad_b = Tensor(params.b.shape());

    // Walk the unfolded chain back from x_T; gx carries dL/dx_t along the
    // recurrent path, every step also drains into the shared parameters.
    Tensor gx = grad_out;
    for (int t = cfg.timesteps; t >= 1; --t) {
        const Tensor gz = relu_backward(cache.states[static_cast<std::size_t>(t)], gx);
        ConvGrads rg = conv2d_backward(cache.states[static_cast<std::size_t>(t) - 1], rec, gz);
        add_inplace(g.grad_w_r, rg.grad_weights);
        ConvGrads fg = conv2d_backward(cache.input, ff, gz);
        add_inplace(g.grad_w_f, fg.grad_weights);
        add_inplace(g.grad_b, fg.grad_bias);
        add_inplace(g.grad_input, fg.grad_input);
        gx = std::move(rg.grad_input);
    }
    const Tensor gz0 = relu_backward(cache.states[0], gx);
    ConvGrads fg = conv2d_backward(cache.input, ff, gz0);
    add_inplace(g.grad_w_f, fg.grad_weights);
    add_inplace(g.grad_b, fg.grad_bias);
    add_inplace(g.grad_input, fg.grad_input);
    return g;
}

int effective_depth(const RclConfig& cfg, int n_recurrent_blocks) {
    return n_recurrent_blocks * (cfg.timesteps + 1) + 2;
}

} // namespace msdnn
