#include "msdnn/model.hpp"

#include <cmath>

#include "msdnn/rng.hpp"

namespace msdnn {

int NetworkConfig::scaled(int channels) const {
    const int s = static_cast<int>(std::llround(channels * scale_factor));
    return s < 1 ? 1 : s;
}

void NetworkConfig::validate() const {
    if (input_size < 16 || input_size % 16 != 0)
        throw ConfigError("input_size must be a positive multiple of 16, got " + std::to_string(input_size));
    if (scale_factor <= 0) throw ConfigError("scale_factor must be positive");
    if (timesteps < 0) throw ConfigError("timesteps must be non-negative");
    if (enabled_scales.empty()) throw ConfigError("enabled_scales must be non-empty");
    for (int s : enabled_scales)
        if (s < 1 || s > 4) throw ConfigError("enabled scale out of range: " + std::to_string(s));
    if (deep_supervision_weight < 0) throw ConfigError("deep_supervision_weight must be non-negative");
    if (base_channels < 1 || rcl_channels < 1 || fm_channels < 1 || fc_reshape_channels < 1)
        throw ConfigError("channel widths must be positive");
}

MsdnnModel::MsdnnModel(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    register_params();
}

MsdnnModel::MsdnnModel(NetworkConfig cfg, std::uint64_t seed) : MsdnnModel(std::move(cfg)) {
    init_weights(seed);
}

void MsdnnModel::register_tensor(const std::string& path, Shape shape) {
    if (index_.count(path)) throw ConfigError("duplicate layer path " + path);
    index_[path] = params_.size();
    params_.push_back({path, Tensor(shape), Tensor(std::move(shape))});
}

void MsdnnModel::register_params() {
    const int B = cfg_.conv1_width();
    const int R = cfg_.rcl_width();
    const int F = cfg_.fm_width();
    const int C = cfg_.fc_channels();
    const int g = cfg_.grid();
    const int k = 3;

    register_tensor("encoder.conv1.0.weight", {B, 3, k, k});
    register_tensor("encoder.conv1.0.bias", {B});
    register_tensor("encoder.conv1.1.weight", {B, B, k, k});
    register_tensor("encoder.conv1.1.bias", {B});
    for (int i = 1; i <= 4; ++i) {
        const int cin = (i == 1) ? B : R;
        const std::string p = "encoder.rcl" + std::to_string(i);
        register_tensor(p + ".w_f", {R, cin, k, k});
        register_tensor(p + ".w_r", {R, R, k, k});
        register_tensor(p + ".b", {R});
    }
    register_tensor("encoder.fc.weight", {cfg_.fc_nodes(), R * g * g});
    register_tensor("encoder.fc.bias", {cfg_.fc_nodes()});
    register_tensor("encoder.fm5.weight", {F, C, k, k});
    register_tensor("encoder.fm5.bias", {F});

    // Decoder chain runs from Fm_4 down to the finest enabled scale.
    for (int i = 4; i >= cfg_.min_scale(); --i) {
        if (i < 4) {
            const std::string up = "decoder.up" + std::to_string(i);
            register_tensor(up + ".weight", {F, F, 2, 2}); // deconv [Cin,Cout,kh,kw]
            register_tensor(up + ".bias", {F});
        }
        const std::string p = "decoder.fm" + std::to_string(i);
        register_tensor(p + ".weight", {F, F + R, k, k});
        register_tensor(p + ".bias", {F});
    }
    for (auto it = cfg_.enabled_scales.rbegin(); it != cfg_.enabled_scales.rend(); ++it) {
        const int i = *it;
        const int ks = 1 << i; // head kernel and stride are both 2^i
        const std::string p = "head.sm" + std::to_string(i);
        register_tensor(p + ".weight", {F, 1, ks, ks});
        register_tensor(p + ".bias", {1});
    }
    const int n_maps = static_cast<int>(cfg_.enabled_scales.size());
    register_tensor("fcm.conv1.weight", {cfg_.fcm_width1(), n_maps, k, k});
    register_tensor("fcm.conv1.bias", {cfg_.fcm_width1()});
    register_tensor("fcm.conv2.weight", {cfg_.fcm_width2(), cfg_.fcm_width1(), k, k});
    register_tensor("fcm.conv2.bias", {cfg_.fcm_width2()});
    register_tensor("fcm.conv3.weight", {1, cfg_.fcm_width2(), k, k});
    register_tensor("fcm.conv3.bias", {1});
}

void MsdnnModel::init_weights(std::uint64_t seed) {
    Rng rng(seed);
    for (ParamEntry& e : params_) {
        if (e.path.ends_with(".bias") || e.path.ends_with(".b")) continue; // biases stay zero
        const Shape& s = e.value.shape();
        // fan_in: inputs feeding one output unit. Weight dim 0 is the output
        // channel count for conv/fc; for deconv [Cin,Cout,kh,kw] dim 0 is the
        // input channel count, which is what feeds each output either way.
        std::int64_t fan_in = 1;
        if (s.size() == 2) {
            fan_in = s[1];
        } else {
            fan_in = static_cast<std::int64_t>(e.path.starts_with("decoder.up") || e.path.starts_with("head.") ? s[0]
                                                                                                               : s[1]) *
                     s[2] * s[3];
        }
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (std::int64_t i = 0; i < e.value.size(); ++i)
            e.value[i] = static_cast<real>(rng.uniform(-a, a));
    }
}

const Tensor& MsdnnModel::param(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw ConfigError("unknown layer path " + path);
    return params_[it->second].value;
}

Tensor& MsdnnModel::param(const std::string& path) {
    return const_cast<Tensor&>(static_cast<const MsdnnModel&>(*this).param(path));
}

Tensor& MsdnnModel::grad(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw ConfigError("unknown layer path " + path);
    return params_[it->second].grad;
}

void MsdnnModel::zero_grads() {
    for (ParamEntry& e : params_) e.grad.fill(0);
}

void MsdnnModel::add_grad(const std::string& path, const Tensor& g) { add_inplace(grad(path), g); }

ConvParams MsdnnModel::conv_at(const std::string& prefix, int stride, int padding) const {
    return ConvParams{param(prefix + ".weight"), param(prefix + ".bias"), stride, padding};
}

DeconvParams MsdnnModel::deconv_at(const std::string& prefix, int stride) const {
    return DeconvParams{param(prefix + ".weight"), param(prefix + ".bias"), stride};
}

RclParams MsdnnModel::rcl_at(int block) const {
    const std::string p = "encoder.rcl" + std::to_string(block);
    return RclParams{param(p + ".w_f"), param(p + ".w_r"), param(p + ".b")};
}

RclConfig MsdnnModel::rcl_cfg(int block) const {
    RclConfig c;
    c.in_channels = (block == 1) ? cfg_.conv1_width() : cfg_.rcl_width();
    c.out_channels = cfg_.rcl_width();
    c.kernel_size = 3;
    c.timesteps = cfg_.timesteps;
    c.padding = 1;
    return c;
}

ForwardTrace MsdnnModel::forward(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.input_size || image.dim(3) != cfg_.input_size)
        throw ShapeError("forward: expected [N,3," + std::to_string(cfg_.input_size) + "," +
                         std::to_string(cfg_.input_size) + "], got " + shape_str(image.shape()));
    const int N = image.dim(0);
    const int g = cfg_.grid();
    ForwardTrace t;
    t.image = image;

    t.conv1_a = relu(conv2d(image, conv_at("encoder.conv1.0", 1, 1)));
    t.conv1_b = relu(conv2d(t.conv1_a, conv_at("encoder.conv1.1", 1, 1)));

    const Tensor* prev = &t.conv1_b;
    for (int i = 1; i <= 4; ++i) {
        t.pool[static_cast<std::size_t>(i) - 1] = max_pool2(*prev);
        t.rcl[static_cast<std::size_t>(i) - 1] =
            rcl_forward(t.pool[static_cast<std::size_t>(i) - 1].output, rcl_at(i), rcl_cfg(i));
        prev = &t.x(i);
    }

    const Tensor flat = t.x(4).reshape({N, cfg_.rcl_width() * g * g});
    t.fc_act = relu(fully_connected(flat, param("encoder.fc.weight"), param("encoder.fc.bias")));
    const Tensor lifted = t.fc_act.reshape({N, cfg_.fc_channels(), g, g});
    t.fm[5] = relu(conv2d(lifted, conv_at("encoder.fm5", 1, 1)));

    for (int i = 4; i >= cfg_.min_scale(); --i) {
        Tensor top = (i == 4) ? t.fm.at(5)
                              : transposed_conv2d(t.fm.at(i + 1), deconv_at("decoder.up" + std::to_string(i), 2));
        t.concat_in[i] = concat_channels(top, t.x(i));
        t.fm[i] = relu(conv2d(t.concat_in.at(i), conv_at("decoder.fm" + std::to_string(i), 1, 1)));
    }

    std::vector<Tensor> maps;
    for (auto it = cfg_.enabled_scales.rbegin(); it != cfg_.enabled_scales.rend(); ++it) {
        const int i = *it;
        t.head_logit[i] = transposed_conv2d(t.fm.at(i), deconv_at("head.sm" + std::to_string(i), 1 << i));
        t.sm[i] = sigmoid(t.head_logit.at(i));
        maps.push_back(t.sm.at(i));
    }

    t.fcm_in = concat_channels(maps);
    t.fcm_h1 = relu(conv2d(t.fcm_in, conv_at("fcm.conv1", 1, 1)));
    t.fcm_h2 = relu(conv2d(t.fcm_h1, conv_at("fcm.conv2", 1, 1)));
    t.final_logit = conv2d(t.fcm_h2, conv_at("fcm.conv3", 1, 1));
    t.final_map = sigmoid(t.final_logit);
    return t;
}

void MsdnnModel::backward(const ForwardTrace& t, const Tensor& grad_final_logit,
                          const std::map<int, Tensor>& grad_head_logits) {
    if (!grad_final_logit.same_shape(t.final_logit))
        throw ShapeError("backward: grad_final_logit " + shape_str(grad_final_logit.shape()) + " vs logit " +
                         shape_str(t.final_logit.shape()));
    for (const auto& [i, gh] : grad_head_logits) {
        if (!cfg_.enabled_scales.count(i)) throw ConfigError("backward: gradient for disabled scale " + std::to_string(i));
        if (!gh.same_shape(t.head_logit.at(i))) throw ShapeError("backward: head gradient shape mismatch at scale " + std::to_string(i));
    }
    const int N = t.image.dim(0);
    const int g = cfg_.grid();

    // FCM
    ConvGrads c3 = conv2d_backward(t.fcm_h2, conv_at("fcm.conv3", 1, 1), grad_final_logit);
    add_grad("fcm.conv3.weight", c3.grad_weights);
    add_grad("fcm.conv3.bias", c3.grad_bias);
    Tensor gh2 = relu_backward(t.fcm_h2, c3.grad_input);
    ConvGrads c2 = conv2d_backward(t.fcm_h1, conv_at("fcm.conv2", 1, 1), gh2);
    add_grad("fcm.conv2.weight", c2.grad_weights);
    add_grad("fcm.conv2.bias", c2.grad_bias);
    Tensor gh1 = relu_backward(t.fcm_h1, c2.grad_input);
    ConvGrads c1 = conv2d_backward(t.fcm_in, conv_at("fcm.conv1", 1, 1), gh1);
    add_grad("fcm.conv1.weight", c1.grad_weights);
    add_grad("fcm.conv1.bias", c1.grad_bias);

    std::vector<int> ones(cfg_.enabled_scales.size(), 1);
    std::vector<Tensor> g_sm = split_channels(c1.grad_input, ones);

    // Heads: fuse the FCM path (through the sigmoid) with any direct loss
    // gradient on the logit, then backprop into the decoder feature maps.
    std::map<int, Tensor> g_fm;
    std::size_t k = 0;
    for (auto it = cfg_.enabled_scales.rbegin(); it != cfg_.enabled_scales.rend(); ++it, ++k) {
        const int i = *it;
        Tensor g_logit = sigmoid_backward(t.sm.at(i), g_sm[k]);
        auto gh = grad_head_logits.find(i);
        if (gh != grad_head_logits.end()) add_inplace(g_logit, gh->second);
        const std::string p = "head.sm" + std::to_string(i);
        DeconvGrads dg = transposed_conv2d_backward(t.fm.at(i), deconv_at(p, 1 << i), g_logit);
        add_grad(p + ".weight", dg.grad_weights);
        add_grad(p + ".bias", dg.grad_bias);
        g_fm[i] = std::move(dg.grad_input);
    }

    // Decoder chain, finest level first so each g_fm[i] is complete when used.
    std::array<Tensor, 4> g_x;
    Tensor g_fm5;
    for (int i = cfg_.min_scale(); i <= 4; ++i) {
        auto found = g_fm.find(i);
        Tensor gi = (found != g_fm.end()) ? std::move(found->second)
                                          : Tensor(t.fm.at(i).shape());
        gi = relu_backward(t.fm.at(i), gi);
        const std::string p = "decoder.fm" + std::to_string(i);
        ConvGrads cg = conv2d_backward(t.concat_in.at(i), conv_at(p, 1, 1), gi);
        add_grad(p + ".weight", cg.grad_weights);
        add_grad(p + ".bias", cg.grad_bias);
        std::vector<Tensor> parts = split_channels(cg.grad_input, {cfg_.fm_width(), cfg_.rcl_width()});
        g_x[static_cast<std::size_t>(i) - 1] = std::move(parts[1]);
        if (i == 4) {
            g_fm5 = std::move(parts[0]);
        } else {
            const std::string up = "decoder.up" + std::to_string(i);
            DeconvGrads ug = transposed_conv2d_backward(t.fm.at(i + 1), deconv_at(up, 2), parts[0]);
            add_grad(up + ".weight", ug.grad_weights);
            add_grad(up + ".bias", ug.grad_bias);
            if (g_fm.count(i + 1))
                add_inplace(g_fm.at(i + 1), ug.grad_input);
            else
                g_fm[i + 1] = std::move(ug.grad_input);
        }
    }

    // Coarse global map back into fc
    g_fm5 = relu_backward(t.fm.at(5), g_fm5);
    const Tensor lifted = t.fc_act.reshape({N, cfg_.fc_channels(), g, g});
    ConvGrads lg = conv2d_backward(lifted, conv_at("encoder.fm5", 1, 1), g_fm5);
    add_grad("encoder.fm5.weight", lg.grad_weights);
    add_grad("encoder.fm5.bias", lg.grad_bias);
    Tensor g_fc = relu_backward(t.fc_act, lg.grad_input.reshape({N, cfg_.fc_nodes()}));
    const Tensor flat = t.x(4).reshape({N, cfg_.rcl_width() * g * g});
    FcGrads fg = fully_connected_backward(flat, param("encoder.fc.weight"), g_fc);
    add_grad("encoder.fc.weight", fg.grad_weights);
    add_grad("encoder.fc.bias", fg.grad_bias);
    add_inplace(g_x[3], fg.grad_input.reshape(t.x(4).shape()));

    // Encoder blocks
    Tensor g_prev;
    for (int i = 4; i >= 1; --i) {
        RclGrads rg = rcl_backward(t.rcl[static_cast<std::size_t>(i) - 1], rcl_at(i), rcl_cfg(i),
                                   g_x[static_cast<std::size_t>(i) - 1]);
        const std::string p = "encoder.rcl" + std::to_string(i);
        add_grad(p + ".w_f", rg.grad_w_f);
        add_grad(p + ".w_r", rg.grad_w_r);
        add_grad(p + ".b", rg.grad_b);
        const Shape& pool_in_shape =
            (i == 1) ? t.conv1_b.shape() : t.x(i - 1).shape();
        g_prev = max_pool2_backward(t.pool[static_cast<std::size_t>(i) - 1], pool_in_shape, rg.grad_input);
        if (i > 1) {
            // X_{i-1} may carry no decoder skip gradient when its scale is disabled
            Tensor& dst = g_x[static_cast<std::size_t>(i) - 2];
            if (dst.empty())
                dst = std::move(g_prev);
            else
                add_inplace(dst, g_prev);
        }
    }

    Tensor ga2 = relu_backward(t.conv1_b, g_prev);
    ConvGrads b1 = conv2d_backward(t.conv1_a, conv_at("encoder.conv1.1", 1, 1), ga2);
    add_grad("encoder.conv1.1.weight", b1.grad_weights);
    add_grad("encoder.conv1.1.bias", b1.grad_bias);
    Tensor ga1 = relu_backward(t.conv1_a, b1.grad_input);
    ConvGrads a1 = conv2d_backward(t.image, conv_at("encoder.conv1.0", 1, 1), ga1);
    add_grad("encoder.conv1.0.weight", a1.grad_weights);
    add_grad("encoder.conv1.0.bias", a1.grad_bias);
}

ArchSummary MsdnnModel::summary() const { return summarize(cfg_); }

ArchSummary summarize(const NetworkConfig& cfg) {
    cfg.validate();
    ArchSummary s;
    const int S = cfg.input_size;
    for (int i = 1; i <= 4; ++i)
        s.x_shapes[static_cast<std::size_t>(i) - 1] = {1, cfg.rcl_width(), S >> i, S >> i};
    s.fm5_shape = {1, cfg.fm_width(), cfg.grid(), cfg.grid()};
    s.fc_width = cfg.fc_nodes();
    for (int i : cfg.enabled_scales) {
        s.head_stride[i] = 1 << i;
        s.head_kernel[i] = 1 << i;
    }
    s.fcm_width1 = cfg.fcm_width1();
    s.fcm_width2 = cfg.fcm_width2();
    s.fcm_width_out = 1;
    s.map_shape = {1, 1, S, S};
    return s;
}

} // namespace msdnn
