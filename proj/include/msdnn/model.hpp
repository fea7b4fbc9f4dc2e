#ifndef MSDNN_MODEL_HPP
#define MSDNN_MODEL_HPP

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "msdnn/nnops.hpp"
#include "msdnn/rcl.hpp"
#include "msdnn/tensor.hpp"

namespace msdnn {

/// Complete architecture description. Channel widths are the full-size values;
/// scale_factor shrinks them uniformly for desk-scale runs (input size is set
/// directly). The fc width is derived: (input_size/16)^2 * fc_reshape_channels.
struct NetworkConfig {
    int input_size = 224;
    int base_channels = 64;      // conv1 block width
    int rcl_channels = 96;       // recurrent block width
    int fm_channels = 64;        // decoder feature width
    int fc_reshape_channels = 32;
    int fcm_channels1 = 32;
    int fcm_channels2 = 64;
    int timesteps = 3;
    double scale_factor = 1.0;
    std::set<int> enabled_scales = {1, 2, 3, 4};
    double deep_supervision_weight = 1.0;

    int scaled(int channels) const;
    int conv1_width() const { return scaled(base_channels); }
    int rcl_width() const { return scaled(rcl_channels); }
    int fm_width() const { return scaled(fm_channels); }
    int fc_channels() const { return scaled(fc_reshape_channels); }
    int fcm_width1() const { return scaled(fcm_channels1); }
    int fcm_width2() const { return scaled(fcm_channels2); }
    int grid() const { return input_size / 16; } // spatial size of X_4 and Fm_5
    int fc_nodes() const { return grid() * grid() * fc_channels(); }
    int min_scale() const { return *enabled_scales.begin(); }

    void validate() const; // throws ConfigError
};

struct ParamEntry {
    std::string path;
    Tensor value;
    Tensor grad;
};

/// All intermediate activations the backward pass needs, plus the saliency
/// maps themselves. Per-level tensors are keyed by scale index i in 1..4
/// (5 = the coarse global map).
struct ForwardTrace {
    Tensor image;
    Tensor conv1_a, conv1_b; // post-relu
    std::array<MaxPoolResult, 4> pool;
    std::array<RclCache, 4> rcl; // X_i = rcl[i-1].states.back()
    Tensor fc_act;               // [N, fc_nodes] post-relu
    std::map<int, Tensor> fm;    // 5 .. min_scale, post-relu
    std::map<int, Tensor> concat_in;
    std::map<int, Tensor> head_logit; // enabled scales only
    std::map<int, Tensor> sm;         // post-sigmoid
    Tensor fcm_in;
    Tensor fcm_h1, fcm_h2; // post-relu
    Tensor final_logit;
    Tensor final_map;

    const Tensor& x(int block) const { return rcl[static_cast<std::size_t>(block) - 1].states.back(); }
};

struct ArchSummary {
    std::array<Shape, 4> x_shapes; // X_1..X_4 for batch 1
    Shape fm5_shape;
    int fc_width = 0;
    std::map<int, int> head_stride;
    std::map<int, int> head_kernel;
    int fcm_width1 = 0, fcm_width2 = 0, fcm_width_out = 1;
    Shape map_shape; // final map, batch 1
};

/// The full network: recurrent-convolutional encoder, hierarchical decoder
/// with multi-scale saliency heads, and the fusion module. Owns every
/// learnable parameter and a same-shaped gradient slot per parameter.
class MsdnnModel {
public:
    MsdnnModel(NetworkConfig cfg, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }

    std::size_t param_count() const { return params_.size(); }
    const std::vector<ParamEntry>& entries() const { return params_; }
    std::vector<ParamEntry>& entries() { return params_; }
    bool has_param(const std::string& path) const { return index_.count(path) > 0; }
    const Tensor& param(const std::string& path) const;
    Tensor& param(const std::string& path);
    Tensor& grad(const std::string& path);
    void zero_grads();

    ForwardTrace forward(const Tensor& image) const;

    /// Backpropagates from the given logit gradients through the whole graph;
    /// gradients accumulate into the slots (call zero_grads first).
    void backward(const ForwardTrace& trace, const Tensor& grad_final_logit,
                  const std::map<int, Tensor>& grad_head_logits);

    /// Architecture arithmetic derived from the config (no forward needed).
    ArchSummary summary() const;

private:
    friend MsdnnModel load_checkpoint(const std::string& path);
    explicit MsdnnModel(NetworkConfig cfg); // zero-initialized, for loading

    void register_params();
    void register_tensor(const std::string& path, Shape shape);
    void init_weights(std::uint64_t seed);

    ConvParams conv_at(const std::string& prefix, int stride, int padding) const;
    DeconvParams deconv_at(const std::string& prefix, int stride) const;
    RclParams rcl_at(int block) const;
    RclConfig rcl_cfg(int block) const;
    void add_grad(const std::string& path, const Tensor& g);

    NetworkConfig cfg_;
    std::vector<ParamEntry> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Architecture arithmetic from the config alone (no parameter allocation;
/// the default 224 config holds ~1 GB of fc weights once materialized).
ArchSummary summarize(const NetworkConfig& cfg);

/// Checkpoint: 8-byte magic "MSDNNCK1", u64-LE JSON header length, UTF-8 JSON
/// header (config + ordered {path, shape} list), then raw little-endian f64
/// data per parameter in header order. Round trip is bit-exact.
void save_checkpoint(const MsdnnModel& model, const std::string& path);
MsdnnModel load_checkpoint(const std::string& path);

std::string config_to_json(const NetworkConfig& cfg);
NetworkConfig config_from_json(const std::string& json_text);

} // namespace msdnn

#endif
