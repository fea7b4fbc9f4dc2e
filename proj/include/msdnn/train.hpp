#ifndef MSDNN_TRAIN_HPP
#define MSDNN_TRAIN_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msdnn/data.hpp"
#include "msdnn/model.hpp"
#include "msdnn/tensor.hpp"

namespace msdnn {

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int batch_size = 8;
    int max_iterations = 1000;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;                // 0 = only the final checkpoint
    double deep_supervision_weight = 1.0;    // mirrors NetworkConfig
    double stop_loss = 0.0;                  // stop once final-map CE drops below; 0 = run all iterations
    bool two_stage = false;                  // stage 1 heads-only, stage 2 joint
    int lr_decay_every = 0;                  // 0 = constant learning rate
    double lr_decay_factor = 0.1;

    void validate() const;
};

/// One velocity tensor per parameter, zero-initialized, same order as the
/// model's parameter list.
struct OptimizerState {
    std::vector<Tensor> velocity;

    static OptimizerState for_model(const MsdnnModel& model);
};

struct LossResult {
    double loss = 0;       // final + lambda * sum of enabled head losses
    double final_loss = 0; // final-map cross-entropy
    double aux_loss = 0;   // sum of head cross-entropies (unweighted)
    Tensor grad_final_logit;
    std::map<int, Tensor> grad_head_logits;
};

/// Numerically stable sigmoid cross-entropy, mean over all elements:
/// max(z,0) - z*y + log(1 + exp(-|z|)); gradient (sigma(z) - y)/count.
/// Target must be binary.
std::pair<double, Tensor> sigmoid_ce_loss(const Tensor& logits, const Tensor& target);

/// Final-map CE plus lambda-weighted CE on every enabled head logit.
LossResult total_loss(const ForwardTrace& trace, const Tensor& target, double lambda,
                      const std::set<int>& enabled_scales);

/// Per parameter: g = grad + wd*w; v = mu*v + g; w -= lr*v. Grads then zeroed.
void sgd_step(MsdnnModel& model, OptimizerState& opt, const TrainConfig& cfg, double lr_override = -1);

struct LogRow {
    int iteration = 0;
    double loss = 0, final_loss = 0, aux_loss = 0, seconds = 0;
};

struct TrainLog {
    std::vector<LogRow> rows;

    std::string to_csv() const; // iteration,loss,final_loss,aux_loss,seconds
};

using TrainCallback = std::function<void(const LogRow&)>;

/// Deterministic given the seed: shuffling and batch assembly draw from one
/// seeded stream. Writes checkpoints through save_checkpoint when
/// checkpoint_dir is non-empty.
TrainLog train_loop(MsdnnModel& model, const std::vector<Sample>& dataset, const TrainConfig& cfg,
                    const std::string& checkpoint_dir = "", const TrainCallback& on_iteration = nullptr);

/// Stacks samples into image [B,3,S,S] and mask [B,1,S,S] batch tensors.
std::pair<Tensor, Tensor> make_batch(const std::vector<Sample>& dataset, const std::vector<int>& indices);

} // namespace msdnn

#endif
