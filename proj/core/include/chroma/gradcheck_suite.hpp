#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Curated finite-difference targets, from single ops up to a whole tiny
// network. Every target redraws parameters, inputs, and probed coordinates
// per seed, so a run with N seeds covers N independent configurations of the
// same computation. Composite targets add a small quadratic penalty on every
// parameter to the probe loss: central differences are exact for quadratics,
// and the penalty's 2*lambda*p term guarantees each coordinate a gradient
// large enough to resolve against the relative-error floor, including
// directions the network itself is invariant to (a key bias shifts all
// attention scores in a row equally, so softmax cancels it exactly and its
// true task gradient is zero).

namespace chroma::gradcheck {

struct SuiteOptions {
    int seeds = 100;         // independent draws per target
    double tolerance = 1e-4; // max relative error allowed per coordinate
};

struct TargetResult {
    std::string name;
    std::string scope;
    int seeds = 0;
    std::int64_t coords = 0; // coordinates probed across all seeds
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    double seconds = 0.0;
    std::string worst; // "<param>[coord] seed <n>" behind max_rel_err
    bool passed = false;
};

// Scopes in execution order: primitives, sdm, block, model.
std::vector<std::string> suite_scopes();

// scope is one of suite_scopes() or "all". Throws ConfigError otherwise.
std::vector<TargetResult> run_suite(const std::string& scope, const SuiteOptions& options = {});

// Proof that the harness can fail: gelu forward paired with a backward that
// overstates the gradient by 5%. Returns the relative error the checker
// reports, which must land far above any passing tolerance.
double negative_control_rel_err(std::uint64_t seed);

}  // namespace chroma::gradcheck
