#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "chroma/data.hpp"
#include "chroma/metrics.hpp"
#include "chroma/model.hpp"
#include "chroma/ops.hpp"
#include "chroma/tape.hpp"

// Desk-scale training: Adam with bias correction, cosine learning-rate decay,
// and gradient accumulation that is arithmetically equivalent to one fused
// batch. One logical thread owns the parameters and optimizer state.
//
// Equivalence note: the per-pixel loss weight inside an optimizer window is
// the fixed 1 / (valid pixels in the window), passed to every micro-batch, so
// splitting a window into micro-batches changes only the grouping of gradient
// sums, never any multiplier. Accumulation buffers are double regardless of
// the model precision.

namespace chroma::train {

struct TrainConfig {
    double lr = 1e-3;
    double lr_min = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::int64_t batch = 8;        // patches per micro-batch
    std::int64_t accum_steps = 1;  // micro-batches per optimizer step
    std::int64_t epochs = 30;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;  // seed-stable tile subsample
    std::int64_t ma_window = 5;

    // patch sampling
    std::int64_t cell_side = 8;
    std::int64_t patch_cells = 4;
    std::int64_t patches_per_epoch = -1;  // -1 = every position

    void validate() const {
        if (lr <= 0.0 || lr_min <= 0.0 || lr_min > lr) throw ConfigError("need 0 < lr_min <= lr");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ConfigError("Adam betas must lie in [0, 1)");
        }
        if (adam_eps <= 0.0) throw ConfigError("Adam epsilon must be positive");
        if (batch < 1) throw ConfigError("batch must be at least 1");
        if (accum_steps < 1) throw ConfigError("accumulation steps must be at least 1");
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (data_fraction <= 0.0 || data_fraction > 1.0) throw ConfigError("data_fraction must lie in (0, 1]");
        if (ma_window < 1) throw ConfigError("ma_window must be at least 1");
    }
};

// Cosine decay from lr at step 0 to lr_min at the final step.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr, double lr_min) {
    if (total_steps <= 1) return lr;
    const double phase = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    std::map<std::string, AdamSlot> slots;
    std::int64_t t = 0;  // completed steps
};

// One bias-corrected Adam update. Internal math is double; a non-finite
// gradient aborts with the offending parameter named.
template <typename T>
void adam_step(const std::vector<std::pair<std::string, Tensor<T>*>>& params,
               const std::map<std::string, std::vector<double>>& grads, AdamState& state,
               const TrainConfig& config, double lr) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    static const std::vector<double> kNoGrad;
    for (const auto& [name, tensor] : params) {
        const std::size_t n = static_cast<std::size_t>(tensor->numel());
        AdamSlot& slot = state.slots[name];
        if (slot.m.empty()) {
            slot.m.assign(n, 0.0);
            slot.v.assign(n, 0.0);
        } else if (slot.m.size() != n) {
            throw ShapeError("Adam state for '" + name + "' does not match the parameter");
        }
        const auto it = grads.find(name);
        const std::vector<double>& g = it == grads.end() ? kNoGrad : it->second;
        if (!g.empty() && g.size() != n) {
            throw ShapeError("gradient for '" + name + "' does not match the parameter");
        }
        auto values = tensor->mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            if (!std::isfinite(gi)) {
                throw NumericError("non-finite gradient for parameter '" + name + "'");
            }
            slot.m[i] = config.beta1 * slot.m[i] + (1.0 - config.beta1) * gi;
            slot.v[i] = config.beta2 * slot.v[i] + (1.0 - config.beta2) * gi * gi;
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            values[i] = static_cast<T>(static_cast<double>(values[i]) -
                                       lr * m_hat / (std::sqrt(v_hat) + config.adam_eps));
        }
    }
}

struct TrainRun {
    std::vector<metrics::MetricsRecord> records;
    std::int64_t steps = 0;
    std::int64_t tiles_used = 0;
};

// Trains in place. Per epoch: a deterministic patch order, optimizer windows
// of batch * accum_steps patches, one Adam step per window, then validation.
// Non-finite losses or gradients raise NumericError (divergence guard).
template <typename T>
TrainRun train_model(Model<T>& model, const std::vector<data::SpectralTile>& train_tiles,
                     const std::vector<data::SpectralTile>& val_tiles, const TrainConfig& config,
                     const std::function<void(const metrics::MetricsRecord&)>& on_epoch = {}) {
    config.validate();
    if (train_tiles.empty()) throw ValueError("train: no training tiles");

    std::vector<data::SpectralTile> subset;
    const std::vector<data::SpectralTile>* active = &train_tiles;
    if (config.data_fraction < 1.0) {
        const auto keep = data::subsample_indices(train_tiles.size(), config.data_fraction, config.seed);
        if (keep.empty()) throw ConfigError("data_fraction keeps zero tiles");
        for (std::size_t index : keep) subset.push_back(train_tiles[index]);
        active = &subset;
    }

    data::SamplerConfig sampler_config;
    sampler_config.cell_side = config.cell_side;
    sampler_config.patch_cells = config.patch_cells;
    sampler_config.n_patches = config.patches_per_epoch;
    sampler_config.seed = config.seed;
    const data::GridPatchSampler sampler(*active, sampler_config);

    const std::int64_t window_patches = config.batch * config.accum_steps;
    const std::int64_t per_epoch = sampler.patches_per_epoch();
    const std::int64_t steps_per_epoch = (per_epoch + window_patches - 1) / window_patches;
    const std::int64_t total_steps = steps_per_epoch * config.epochs;

    auto params = model.parameters();
    AdamState state;
    TrainRun run;
    run.tiles_used = static_cast<std::int64_t>(active->size());
    std::vector<double> epoch_losses;
    std::int64_t samples_seen = 0;
    std::int64_t global_step = 0;

    for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto order = sampler.epoch_order(epoch);
        double loss_weighted = 0.0;
        std::int64_t loss_pixels = 0;

        for (std::int64_t start = 0; start < static_cast<std::int64_t>(order.size()); start += window_patches) {
            const std::int64_t end =
                std::min<std::int64_t>(start + window_patches, static_cast<std::int64_t>(order.size()));

            std::vector<std::pair<Tensor<T>, std::vector<std::int32_t>>> window;
            std::int64_t window_valid = 0;
            for (std::int64_t i = start; i < end; ++i) {
                const data::PatchRef& ref = order[static_cast<std::size_t>(i)];
                auto [image, labels] = data::extract_patch((*active)[ref.tile], ref);
                for (std::int32_t label : labels) {
                    if (label != data::kIgnoreLabel) ++window_valid;
                }
                window.emplace_back(image.template cast<T>(), std::move(labels));
            }
            samples_seen += static_cast<std::int64_t>(window.size());
            if (window_valid == 0) continue;  // nothing to learn from
            const double row_weight = 1.0 / static_cast<double>(window_valid);

            std::map<std::string, std::vector<double>> grad_acc;
            double window_loss = 0.0;
            for (std::size_t micro_start = 0; micro_start < window.size();
                 micro_start += static_cast<std::size_t>(config.batch)) {
                const std::size_t micro_end =
                    std::min(window.size(), micro_start + static_cast<std::size_t>(config.batch));
                Tape<T> tape;
                TapeScope<T> scope(tape);
                Tensor<T> micro_loss;
                for (std::size_t p = micro_start; p < micro_end; ++p) {
                    auto& [image, labels] = window[p];
                    bool any_valid = false;
                    for (std::int32_t label : labels) {
                        if (label != data::kIgnoreLabel) {
                            any_valid = true;
                            break;
                        }
                    }
                    if (!any_valid) continue;
                    const Tensor<T> logits = model.forward(image);
                    const std::int64_t k = logits.extent(0);
                    const std::int64_t hw = logits.extent(1) * logits.extent(2);
                    const Tensor<T> rows = ops::transpose(ops::reshape(logits, {k, hw}));
                    const Tensor<T> loss = ops::cross_entropy_logits(
                        rows, std::span<const std::int32_t>(labels), data::kIgnoreLabel, row_weight);
                    micro_loss = micro_loss.numel() == 0 ? loss : ops::add(micro_loss, loss);
                }
                if (micro_loss.numel() == 0) continue;
                window_loss += static_cast<double>(micro_loss.item());
                Gradients<T> grads = tape.backward(micro_loss);
                for (const auto& [name, tensor] : params) {
                    if (!grads.contains(*tensor)) continue;
                    const Tensor<T>& g = grads.at(*tensor);
                    auto& acc = grad_acc[name];
                    if (acc.empty()) acc.assign(static_cast<std::size_t>(tensor->numel()), 0.0);
                    const T* gv = g.raw();
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(gv[i]);
                }
            }

            if (!std::isfinite(window_loss)) {
                throw NumericError("training diverged: loss " + std::to_string(window_loss) + " at step " +
                                   std::to_string(global_step + 1) + " (epoch " + std::to_string(epoch) + ")");
            }
            const double lr = cosine_lr(global_step, total_steps, config.lr, config.lr_min);
            adam_step(params, grad_acc, state, config, lr);
            ++global_step;
            loss_weighted += window_loss * static_cast<double>(window_valid);
            loss_pixels += window_valid;
        }

        if (loss_pixels == 0) throw ValueError("epoch " + std::to_string(epoch) + " saw no labeled pixels");
        epoch_losses.push_back(loss_weighted / static_cast<double>(loss_pixels));

        metrics::MetricsRecord record;
        record.epoch = epoch;
        record.samples_seen = samples_seen;
        record.loss = epoch_losses.back();
        record.ma_loss = metrics::moving_average(epoch_losses, config.ma_window).back();
        record.val_oa = val_tiles.empty() ? 0.0 : metrics::evaluate(model, val_tiles).oa;
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        run.records.push_back(record);
        if (on_epoch) on_epoch(record);
    }
    run.steps = global_step;
    return run;
}

}  // namespace chroma::train
