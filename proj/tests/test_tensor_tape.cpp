#include <doctest.h>

#include <cmath>

#include "chroma/error.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

using namespace chroma;

TEST_SUITE("tensor") {

TEST_CASE("shape bookkeeping and element access") {
    TensorD t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.extent(0) == 2);
    CHECK(t.extent(1) == 3);
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK(shape_str(t.shape()) == "2x3");
}

TEST_CASE("factories produce the documented contents") {
    CHECK(TensorD::zeros({2, 2}).data()[3] == 0.0);
    CHECK(TensorD::full({3}, 7.5).data()[1] == 7.5);
    TensorD eye = TensorD::identity(3);
    CHECK(eye.at({1, 1}) == 1.0);
    CHECK(eye.at({1, 2}) == 0.0);
    CHECK(TensorD::scalar(4.0).item() == 4.0);
}

TEST_CASE("mismatched value count is rejected") {
    CHECK_THROWS_AS(TensorD({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("gaussian fill is reproducible per seed") {
    Rng a(42), b(42), c(43);
    TensorD ta = TensorD::gaussian({4, 4}, a);
    TensorD tb = TensorD::gaussian({4, 4}, b);
    TensorD tc = TensorD::gaussian({4, 4}, c);
    CHECK(ta.data()[0] == tb.data()[0]);
    CHECK(ta.data()[15] == tb.data()[15]);
    CHECK(ta.data()[0] != tc.data()[0]);
}

TEST_CASE("rng forks are independent streams") {
    Rng root(7);
    Rng s1 = root.fork(1);
    Rng s2 = root.fork(2);
    CHECK(s1.next_u64() != s2.next_u64());
    // forking is const: the parent stream is unaffected by forks
    Rng again(7);
    CHECK(root.next_u64() == again.next_u64());
}

TEST_CASE("uniform_index covers the range without bias artifacts") {
    Rng rng(11);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 5000; ++i) ++hits[static_cast<std::size_t>(rng.uniform_index(5))];
    for (int h : hits) CHECK(h > 800);  // ~1000 each
}

TEST_CASE("backward accumulates through a reused intermediate") {
    // y = (x + x) * x = 2x^2, dy/dx = 4x
    TensorD x = TensorD({2}, {1.5, -2.0}).with_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    TensorD s = ops::add(x, x);
    TensorD y = ops::sum_all(ops::mul(s, x));
    Gradients<double> grads = tape.backward(y);
    const TensorD& gx = grads.at(x);
    CHECK(gx.data()[0] == doctest::Approx(6.0));
    CHECK(gx.data()[1] == doctest::Approx(-8.0));
}

TEST_CASE("backward demands a scalar loss") {
    TensorD x = TensorD({2}, {1.0, 2.0}).with_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    TensorD y = ops::add(x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("tensors off the active tape contribute no gradient") {
    TensorD x = TensorD({2}, {1.0, 2.0}).with_grad();
    TensorD frozen({2}, {3.0, 4.0});  // no grad flag: treated as a constant
    Tape<double> tape;
    TapeScope<double> scope(tape);
    TensorD y = ops::sum_all(ops::mul(x, frozen));
    Gradients<double> grads = tape.backward(y);
    CHECK(grads.contains(x));
    CHECK_FALSE(grads.contains(frozen));
    CHECK(grads.at(x).data()[1] == doctest::Approx(4.0));
}

TEST_CASE("a fresh tape epoch invalidates stale node ids") {
    TensorD x = TensorD({2}, {1.0, 2.0}).with_grad();
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        TensorD y = ops::sum_all(ops::mul(x, x));
        tape.backward(y);
    }
    // same tensors on a new tape: must not reuse node ids from the old epoch
    Tape<double> tape2;
    TapeScope<double> scope2(tape2);
    TensorD y2 = ops::sum_all(ops::mul(x, x));
    Gradients<double> grads = tape2.backward(y2);
    CHECK(grads.at(x).data()[0] == doctest::Approx(2.0));
}

}  // TEST_SUITE
