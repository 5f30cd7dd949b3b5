#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chroma/data.hpp"
#include "chroma/env.hpp"
#include "chroma/error.hpp"
#include "chroma/model.hpp"

// Evaluation and reporting: confusion matrix / overall accuracy over tiles,
// the binomial error bar, trailing moving averages, and the CSV formats the
// training and evaluation commands emit.

namespace chroma::metrics {

// Rows are ground truth, columns are prediction.
struct ConfusionMatrix {
    std::int64_t classes = 0;
    std::vector<std::int64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::int64_t k)
        : classes(k), counts(static_cast<std::size_t>(k * k), 0) {
        if (k < 1) throw ValueError("confusion matrix needs at least one class");
    }

    std::int64_t& at(std::int64_t gt, std::int64_t pred) {
        return counts[static_cast<std::size_t>(gt * classes + pred)];
    }
    std::int64_t at(std::int64_t gt, std::int64_t pred) const {
        return counts[static_cast<std::size_t>(gt * classes + pred)];
    }

    std::int64_t total() const {
        std::int64_t sum = 0;
        for (std::int64_t c : counts) sum += c;
        return sum;
    }

    std::int64_t diagonal() const {
        std::int64_t sum = 0;
        for (std::int64_t k = 0; k < classes; ++k) sum += at(k, k);
        return sum;
    }

    void add(const ConfusionMatrix& other) {
        if (other.classes != classes) throw ShapeError("confusion matrix class counts disagree");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
};

inline double overall_accuracy(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw ValueError("overall accuracy of an empty confusion matrix");
    return static_cast<double>(cm.diagonal()) / static_cast<double>(total);
}

// 95% normal-approximation binomial half-width: 1.96 * sqrt(p(1-p)/n).
inline double binomial_ci_halfwidth(double p, std::int64_t n) {
    if (p < 0.0 || p > 1.0) throw ValueError("accuracy must lie in [0, 1]");
    if (n < 1) throw ValueError("sample count must be at least 1");
    return 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

// Trailing mean with warm-up truncation: entry i averages the last
// min(i+1, window) values.
inline std::vector<double> moving_average(const std::vector<double>& series, std::int64_t window) {
    if (window < 1) throw ValueError("moving average window must be at least 1");
    if (series.empty()) throw ValueError("moving average of an empty series");
    std::vector<double> out(series.size());
    double running = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        running += series[i];
        if (static_cast<std::int64_t>(i) >= window) running -= series[i - static_cast<std::size_t>(window)];
        const std::int64_t n = std::min<std::int64_t>(static_cast<std::int64_t>(i) + 1, window);
        out[i] = running / static_cast<double>(n);
    }
    return out;
}

struct MetricsRecord {
    std::int64_t epoch = 0;
    std::int64_t samples_seen = 0;
    double loss = 0.0;
    double ma_loss = 0.0;
    double val_oa = 0.0;
    double seconds = 0.0;
};

std::string render_metrics_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> parse_metrics_csv(const std::filesystem::path& file);

std::string render_confusion_csv(const std::vector<std::string>& class_names, const ConfusionMatrix& cm);

struct EvalResult {
    double oa = 0.0;
    ConfusionMatrix confusion;
    std::int64_t pixels = 0;
};

// Dense prediction over whole tiles; parallel over tiles with the per-tile
// matrices reduced in index order so the result is deterministic.
template <typename T>
EvalResult evaluate(Model<T>& model, const std::vector<data::SpectralTile>& tiles) {
    if (tiles.empty()) throw ValueError("evaluate: no tiles");
    const std::int64_t k = model.config().num_classes;
    std::vector<ConfusionMatrix> partial(tiles.size(), ConfusionMatrix(k));
    env::parallel_for(static_cast<std::int64_t>(tiles.size()), [&](std::int64_t i) {
        const data::SpectralTile& tile = tiles[static_cast<std::size_t>(i)];
        const Tensor<T> image = tile.image.template cast<T>();
        const Tensor<T> logits = model.forward(image);  // [K x H x W]
        const T* scores = logits.raw();
        const std::int64_t hw = tile.height() * tile.width();
        ConfusionMatrix& cm = partial[static_cast<std::size_t>(i)];
        for (std::int64_t p = 0; p < hw; ++p) {
            const std::uint8_t label = tile.labels[static_cast<std::size_t>(p)];
            if (label == data::kIgnoreLabel) continue;
            if (label >= k) {
                throw ValueError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
            }
            std::int64_t best = 0;
            T best_score = scores[p];
            for (std::int64_t c = 1; c < k; ++c) {
                const T s = scores[c * hw + p];
                if (s > best_score) {
                    best_score = s;
                    best = c;
                }
            }
            ++cm.at(label, best);
        }
    });
    EvalResult result;
    result.confusion = ConfusionMatrix(k);
    for (const ConfusionMatrix& cm : partial) result.confusion.add(cm);
    result.pixels = result.confusion.total();
    result.oa = overall_accuracy(result.confusion);
    return result;
}

}  // namespace chroma::metrics
