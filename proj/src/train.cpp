#include "msdnn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "msdnn/rng.hpp"

namespace msdnn {

void TrainConfig::validate() const {
    if (learning_rate < 0) throw ConfigError("learning_rate must be non-negative");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
    if (deep_supervision_weight < 0) throw ConfigError("deep_supervision_weight must be non-negative");
}

OptimizerState OptimizerState::for_model(const MsdnnModel& model) {
    OptimizerState s;
    s.velocity.reserve(model.param_count());
    for (const ParamEntry& e : model.entries()) s.velocity.emplace_back(e.value.shape());
    return s;
}

std::pair<double, Tensor> sigmoid_ce_loss(const Tensor& logits, const Tensor& target) {
    if (!logits.same_shape(target))
        throw ShapeError("sigmoid_ce_loss: logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::int64_t n = logits.size();
    for (std::int64_t i = 0; i < n; ++i)
        if (target[i] != 0 && target[i] != 1)
            throw InputError("sigmoid_ce_loss: target element " + std::to_string(i) + " is not binary");

    double loss = 0;
    Tensor grad(logits.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = static_cast<double>(logits[i]);
        const double y = static_cast<double>(target[i]);
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        grad[i] = static_cast<real>((sig - y) * inv_n);
    }
    return {loss * inv_n, std::move(grad)};
}

LossResult total_loss(const ForwardTrace& trace, const Tensor& target, double lambda,
                      const std::set<int>& enabled_scales) {
    LossResult r;
    auto [lf, gf] = sigmoid_ce_loss(trace.final_logit, target);
    r.final_loss = lf;
    r.grad_final_logit = std::move(gf);
    for (int i : enabled_scales) {
        auto [lh, gh] = sigmoid_ce_loss(trace.head_logit.at(i), target);
        r.aux_loss += lh;
        if (lambda != 0) {
            for (std::int64_t k = 0; k < gh.size(); ++k) gh[k] *= static_cast<real>(lambda);
            r.grad_head_logits[i] = std::move(gh);
        }
    }
    r.loss = r.final_loss + lambda * r.aux_loss;
    return r;
}

void sgd_step(MsdnnModel& model, OptimizerState& opt, const TrainConfig& cfg, double lr_override) {
    const double lr = lr_override >= 0 ? lr_override : cfg.learning_rate;
    auto& entries = model.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
        Tensor& w = entries[p].value;
        Tensor& gr = entries[p].grad;
        Tensor& v = opt.velocity[p];
        for (std::int64_t i = 0; i < w.size(); ++i) {
            const real g = gr[i] + static_cast<real>(cfg.weight_decay) * w[i];
            v[i] = static_cast<real>(cfg.momentum) * v[i] + g;
            w[i] -= static_cast<real>(lr) * v[i];
        }
        gr.fill(0);
    }
}

std::pair<Tensor, Tensor> make_batch(const std::vector<Sample>& dataset, const std::vector<int>& indices) {
    if (indices.empty()) throw InputError("make_batch: empty index list");
    const Tensor& first = dataset[static_cast<std::size_t>(indices[0])].image;
    const int H = first.dim(1), W = first.dim(2);
    const int B = static_cast<int>(indices.size());
    Tensor images({B, 3, H, W});
    Tensor masks({B, 1, H, W});
    const std::int64_t ims = static_cast<std::int64_t>(3) * H * W;
    const std::int64_t msz = static_cast<std::int64_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        const Sample& s = dataset[static_cast<std::size_t>(indices[static_cast<std::size_t>(b)])];
        if (s.image.dim(1) != H || s.image.dim(2) != W)
            throw ShapeError("make_batch: sample " + s.id + " has mismatched size");
        std::copy(s.image.data(), s.image.data() + ims, images.data() + b * ims);
        std::copy(s.mask.data(), s.mask.data() + msz, masks.data() + b * msz);
    }
    return {std::move(images), std::move(masks)};
}

std::string TrainLog::to_csv() const {
    std::ostringstream os;
    os << "iteration,loss,final_loss,aux_loss,seconds\n";
    os.precision(17);
    for (const LogRow& r : rows)
        os << r.iteration << "," << r.loss << "," << r.final_loss << "," << r.aux_loss << "," << r.seconds << "\n";
    return os.str();
}

TrainLog train_loop(MsdnnModel& model, const std::vector<Sample>& dataset, const TrainConfig& cfg,
                    const std::string& checkpoint_dir, const TrainCallback& on_iteration) {
    cfg.validate();
    if (dataset.empty()) throw InputError("train_loop: empty dataset");

    OptimizerState opt = OptimizerState::for_model(model);
    Rng rng(mix_seed(cfg.seed, 0x7261696e)); // shuffle stream
    TrainLog log;
    log.rows.reserve(static_cast<std::size_t>(cfg.max_iterations));

    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::size_t cursor = order.size(); // force initial shuffle

    const double lambda = cfg.deep_supervision_weight;
    const int stage1_end = cfg.two_stage ? cfg.max_iterations / 2 : 0;
    const auto t0 = std::chrono::steady_clock::now();

    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        std::vector<int> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        while (batch.size() < static_cast<std::size_t>(cfg.batch_size)) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        // canonical within-batch order: the loss is a mean over the batch, so
        // only batch membership matters and summation order stays fixed
        std::sort(batch.begin(), batch.end());
        auto [images, masks] = make_batch(dataset, batch);

        model.zero_grads();
        ForwardTrace trace = model.forward(images);
        LossResult loss = total_loss(trace, masks, lambda, model.config().enabled_scales);
        if (cfg.two_stage && iter <= stage1_end) {
            // stage 1: heads only; the final-map path stays frozen
            Tensor zero(loss.grad_final_logit.shape());
            model.backward(trace, zero, loss.grad_head_logits);
        } else {
            model.backward(trace, loss.grad_final_logit, loss.grad_head_logits);
        }

        double lr = cfg.learning_rate;
        if (cfg.lr_decay_every > 0)
            lr *= std::pow(cfg.lr_decay_factor, (iter - 1) / cfg.lr_decay_every);
        sgd_step(model, opt, cfg, lr);

        LogRow row;
        row.iteration = iter;
        row.loss = loss.loss;
        row.final_loss = loss.final_loss;
        row.aux_loss = loss.aux_loss;
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.rows.push_back(row);
        if (on_iteration) on_iteration(row);

        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0)
            save_checkpoint(model, checkpoint_dir + "/checkpoint_iter" + std::to_string(iter) + ".ck");
        if (cfg.stop_loss > 0 && loss.final_loss < cfg.stop_loss) break;
    }
    if (!checkpoint_dir.empty()) save_checkpoint(model, checkpoint_dir + "/checkpoint_final.ck");
    return log;
}

} // namespace msdnn
