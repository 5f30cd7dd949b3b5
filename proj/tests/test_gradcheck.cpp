#include <doctest.h>

#include "chroma/error.hpp"
#include "chroma/grad_check.hpp"
#include "chroma/gradcheck_suite.hpp"
#include "chroma/ops.hpp"
#include "chroma/tensor.hpp"

using namespace chroma;

TEST_SUITE("gradcheck") {

TEST_CASE("finite differences confirm a simple analytic gradient") {
    TensorD w = TensorD({2, 2}, {0.4, -0.7, 1.1, 0.2}).with_grad();
    auto loss = [&]() { return ops::sum_all(ops::mul(w, w)); };
    auto report = gradcheck::finite_difference_check<double>(loss, {{"w", &w}});
    CHECK(report.passed());
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("the harness rejects a deliberately skewed pullback") {
    // If this ever passes, the checker is comparing analytic to analytic.
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        CHECK(gradcheck::negative_control_rel_err(seed) > 1e-2);
    }
}

TEST_CASE("primitive targets pass on a few seeds") {
    auto results = gradcheck::run_suite("primitives", {.seeds = 3, .tolerance = 1e-4});
    CHECK(results.size() > 20);
    for (const auto& r : results) {
        INFO(r.name, " worst ", r.worst, " max_rel ", r.max_rel_err);
        CHECK(r.passed);
        CHECK(r.coords > 0);
    }
}

TEST_CASE("composite targets pass on a few seeds") {
    for (const char* scope : {"sdm", "block", "model"}) {
        auto results = gradcheck::run_suite(scope, {.seeds = 2, .tolerance = 1e-4});
        REQUIRE(results.size() == 1);
        INFO(scope, " worst ", results[0].worst, " max_rel ", results[0].max_rel_err);
        CHECK(results[0].passed);
    }
}

TEST_CASE("scope and option validation") {
    CHECK_THROWS_AS(gradcheck::run_suite("everything"), ConfigError);
    CHECK_THROWS_AS(gradcheck::run_suite("primitives", {.seeds = 0, .tolerance = 1e-4}), ConfigError);
    CHECK_THROWS_AS(gradcheck::run_suite("primitives", {.seeds = 1, .tolerance = -1.0}), ConfigError);
    CHECK(gradcheck::suite_scopes().size() == 4);
}

}  // TEST_SUITE
