#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

// Central-difference verification of reverse-mode gradients. The loss
// callable is evaluated once under a fresh tape for the analytic gradients,
// then re-evaluated untaped at theta +/- eps per coordinate. Intended to run
// in double precision; float tapes lose too many digits for the tolerance
// used here.

namespace chroma {

struct GradCheckOptions {
    double eps = 1e-5;                       // clamped to [1e-7, 1e-3]
    double tolerance = 1e-4;                 // max relative error allowed
    std::int64_t max_coords_per_tensor = -1; // -1 checks every coordinate
    Rng* rng = nullptr;                      // required when subsampling
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    std::int64_t worst_coord = -1;
    std::int64_t coords_checked = 0;
    double tolerance = 1e-4;

    bool passed() const { return coords_checked > 0 && max_rel_err < tolerance; }
};

namespace detail {

// Evaluations at perturbed points must not record anywhere, even if the
// caller sits inside an active tape.
template <typename T>
struct TapeOff {
    Tape<T>* previous;
    TapeOff() : previous(Tape<T>::active()) { Tape<T>::active() = nullptr; }
    ~TapeOff() { Tape<T>::active() = previous; }
    TapeOff(const TapeOff&) = delete;
    TapeOff& operator=(const TapeOff&) = delete;
};

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
    return std::fabs(analytic - numeric) / denom;
}

}  // namespace detail

template <typename T, typename LossFn>
GradCheckReport finite_difference_check(LossFn&& loss_fn,
                                        const std::vector<std::pair<std::string, Tensor<T>*>>& params,
                                        GradCheckOptions opt = {}) {
    const T eps = static_cast<T>(std::clamp(opt.eps, 1e-7, 1e-3));
    if (params.empty()) throw ValueError("finite_difference_check: no parameters given");

    Tape<T> tape;
    Gradients<T> grads;
    {
        TapeScope<T> scope(tape);
        Tensor<T> loss = loss_fn();
        grads = tape.backward(loss);
    }

    GradCheckReport report;
    report.tolerance = opt.tolerance;
    detail::TapeOff<T> off;
    for (const auto& [name, param] : params) {
        if (!param->requires_grad()) {
            throw ValueError("finite_difference_check: parameter '" + name + "' does not require gradients");
        }
        const Tensor<T>& analytic = grads.at(*param);
        const std::int64_t n = param->numel();

        std::vector<std::int64_t> coords;
        if (opt.max_coords_per_tensor < 0 || opt.max_coords_per_tensor >= n) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            if (!opt.rng) throw ValueError("finite_difference_check: coordinate subsampling needs an rng");
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
            opt.rng->shuffle(coords);
            coords.resize(static_cast<std::size_t>(opt.max_coords_per_tensor));
        }

        auto data = param->mutable_data();
        for (const std::int64_t c : coords) {
            const T saved = data[static_cast<std::size_t>(c)];
            data[static_cast<std::size_t>(c)] = saved + eps;
            const double f_plus = static_cast<double>(loss_fn().item());
            data[static_cast<std::size_t>(c)] = saved - eps;
            const double f_minus = static_cast<double>(loss_fn().item());
            data[static_cast<std::size_t>(c)] = saved;

            const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(eps));
            const double a = static_cast<double>(analytic.data()[static_cast<std::size_t>(c)]);
            const double rel = detail::rel_err(a, numeric);
            const double abs = std::fabs(a - numeric);
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_coord = c;
            }
            report.max_abs_err = std::max(report.max_abs_err, abs);
            ++report.coords_checked;
        }
    }
    return report;
}

}  // namespace chroma
