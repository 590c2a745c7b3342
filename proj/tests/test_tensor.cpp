#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sarmatch/tensor.hpp"
#include "support/oracles.hpp"

using namespace sarmatch;

TEST_CASE("conv2d ones 3x3 full overlap sums to 9") {
    Tensor x = Tensor::full({1, 3, 3}, 1.0f);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y.at(0) == doctest::Approx(9.0f));
}

TEST_CASE("conv2d 1x1 identity kernel preserves input") {
    Rng rng(7);
    Tensor x = Tensor::uniform({2, 4, 5}, rng, -1, 1);
    Tensor k = Tensor::zeros({2, 2, 1, 1});
    k.raw_data()[0] = 1.0f;  // out0 <- in0
    k.raw_data()[3] = 1.0f;  // out1 <- in1
    Tensor y = conv2d(x, k, 1, 0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 4; ++trial) {
        const int stride = trial % 2 ? 2 : 1;
        const int pad = trial % 2;
        Tensor x = Tensor::uniform({2, 5, 5}, rng, -1, 1);
        Tensor k = Tensor::uniform({3, 2, 3, 3}, rng, -1, 1);
        Tensor y = conv2d(x, k, stride, pad);
        auto ref = oracles::conv2d_naive({x.data().begin(), x.data().end()}, 2, 5, 5,
                                         {k.data().begin(), k.data().end()}, 3, 3, stride, pad);
        REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y.at(i) - ref[i]) <= 1e-5);
    }
}

TEST_CASE("conv2d rejects bad shapes with axis info") {
    Tensor x = Tensor::zeros({2, 4, 4});
    Tensor k = Tensor::zeros({3, 1, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 1, 1), ShapeError);
    Tensor keven = Tensor::zeros({3, 2, 2, 2});
    CHECK_THROWS_AS(conv2d(x, keven, 1, 1), ArgumentError);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 3, 3}), 3, 1), ArgumentError);
}

TEST_CASE("softmax_flat uniform input gives 1/N") {
    Tensor x = Tensor::full({2, 3}, 0.7f);
    Tensor y = softmax_flat(x, 1.0f);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(1.0f / 6).epsilon(1e-6));
}

TEST_CASE("softmax_flat closed form {0, ln 3}") {
    Tensor x = Tensor::from_vector({2}, {0.0f, std::log(3.0f)});
    Tensor y = softmax_flat(x, 1.0f);
    CHECK(y.at(0) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(y.at(1) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax_flat sums to one and respects temperature") {
    Rng rng(3);
    Tensor x = Tensor::uniform({7, 3}, rng, -4, 4);
    for (float temp : {0.25f, 1.0f, 10.0f}) {
        Tensor y = softmax_flat(x, temp);
        double s = 0;
        for (int64_t i = 0; i < y.numel(); ++i) s += y.at(i);
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    CHECK_THROWS_AS(softmax_flat(x, 0.0f), ArgumentError);
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(5);
    Tensor x = Tensor::uniform({12}, rng, -1, 1, true);
    Tensor w = Tensor::uniform({12}, rng, -1, 1);
    auto f = [&](const Tensor& t) { return sum_all(mul(softmax_flat(t, 0.7f), w)); };
    CHECK(oracles::gradcheck(f, x, 1e-3f) <= 1e-3);
}

TEST_CASE("backward of sum gives ones; of sum of squares gives 2x") {
    Rng rng(9);
    Tensor x = Tensor::uniform({3, 4}, rng, -1, 1, true);
    sum_all(x).backward();
    for (float g : x.grad()) CHECK(g == doctest::Approx(1.0f));
    x.zero_grad();
    sum_all(mul(x, x)).backward();
    auto g = x.grad();
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(g[i] == doctest::Approx(2.0f * x.at(i)));
}

TEST_CASE("backward accumulates across calls without zeroing") {
    Tensor x = Tensor::full({4}, 2.0f, true);
    Tensor loss = sum_all(x);
    loss.backward();
    loss.backward();
    for (float g : x.grad()) CHECK(g == doctest::Approx(2.0f));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::full({3}, 1.0f, true);
    CHECK_THROWS_AS(add(x, x).backward(), ArgumentError);
}

TEST_CASE("composite conv-elu-sum gradient matches finite differences") {
    Rng rng(17);
    Tensor x = Tensor::uniform({2, 4, 4}, rng, -1, 1, true);
    Tensor k = Tensor::uniform({2, 2, 3, 3}, rng, -1, 1);
    auto f = [&](const Tensor& t) { return sum_all(elu(conv2d(t, k, 1, 1))); };
    CHECK(oracles::gradcheck(f, x, 1e-3f) <= 1e-3);

    Tensor kk = Tensor::uniform({2, 2, 3, 3}, rng, -1, 1, true);
    auto fk = [&](const Tensor& t) { return sum_all(elu(conv2d(x.detach(), t, 1, 1))); };
    CHECK(oracles::gradcheck(fk, kk, 1e-3f) <= 1e-3);
}

TEST_CASE("elementwise and structural op gradients") {
    Rng rng(21);
    Tensor x = Tensor::uniform({3, 4}, rng, 0.2f, 1.5f, true);
    Tensor y = Tensor::uniform({3, 4}, rng, 0.2f, 1.5f);
    auto f1 = [&](const Tensor& t) { return sum_all(div(mul(t, y), add_scalar(sqrt_t(t), 1.0f))); };
    CHECK(oracles::gradcheck(f1, x, 1e-3f) <= 1e-3);

    Tensor a = Tensor::uniform({3, 5}, rng, -1, 1, true);
    Tensor b = Tensor::uniform({5, 2}, rng, -1, 1);
    auto f2 = [&](const Tensor& t) { return sum_all(exp_t(scale(matmul(t, b), 0.3f))); };
    CHECK(oracles::gradcheck(f2, a, 1e-3f) <= 1e-3);

    Tensor c = Tensor::uniform({4, 6}, rng, -1, 1, true);
    auto f3 = [&](const Tensor& t) {
        Tensor left = slice_cols(t, 0, 3);
        Tensor right = slice_cols(t, 3, 6);
        return sum_all(mul(concat_cols({transpose2d(right), transpose2d(left)}),
                           Tensor::full({3, 8}, 0.5f)));
    };
    CHECK(oracles::gradcheck(f3, c, 1e-3f) <= 1e-3);

    Tensor d = Tensor::uniform({10}, rng, -1, 1, true);
    auto f4 = [&](const Tensor& t) { return variance_all(t); };
    CHECK(oracles::gradcheck(f4, d, 1e-3f) <= 1e-3);

    Tensor e = Tensor::uniform({6, 4}, rng, -1, 1, true);
    Tensor rv = Tensor::uniform({6}, rng, 0.5f, 1.5f);
    Tensor cv = Tensor::uniform({4}, rng, -1, 1);
    auto f5 = [&](const Tensor& t) {
        return sum_all(mul_rows(add_rowvec(t, cv), rv));
    };
    CHECK(oracles::gradcheck(f5, e, 1e-3f) <= 1e-3);
}

TEST_CASE("bilinear_resize and avg_pool2 gradients") {
    Rng rng(33);
    Tensor x = Tensor::uniform({2, 4, 6}, rng, -1, 1, true);
    Tensor w = Tensor::uniform({2, 7, 9}, rng, -1, 1);
    auto f = [&](const Tensor& t) { return sum_all(mul(bilinear_resize(t, 7, 9, true), w)); };
    CHECK(oracles::gradcheck(f, x, 1e-3f) <= 1e-3);

    Tensor w2 = Tensor::uniform({2, 2, 3}, rng, -1, 1);
    auto f2 = [&](const Tensor& t) { return sum_all(mul(avg_pool2(t), w2)); };
    CHECK(oracles::gradcheck(f2, x, 1e-3f) <= 1e-3);
}

TEST_CASE("reductions, pick, sample_stride behave and differentiate") {
    Tensor x = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(mean_all(x).item() == doctest::Approx(3.5f));
    CHECK(sum_axis0(x).at(1) == doctest::Approx(7.0f));
    CHECK(sum_axis1(x).at(1) == doctest::Approx(15.0f));
    CHECK(pick(x, 4).item() == doctest::Approx(5.0f));

    Tensor s = sample_stride(reshape(x, {6}), 3);
    CHECK(s.numel() == 3);
    CHECK(s.at(0) == 1.0f);
    CHECK(s.at(1) == 3.0f);
    CHECK(s.at(2) == 5.0f);

    Rng rng(2);
    Tensor g = Tensor::uniform({9}, rng, -1, 1, true);
    auto f = [&](const Tensor& t) { return sum_all(mul(sample_stride(t, 4), Tensor::full({3}, 2.0f))); };
    CHECK(oracles::gradcheck(f, g, 1e-3f) <= 1e-3);
}

TEST_CASE("shape mismatches raise with both shapes in the message") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    try {
        add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,2]") != std::string::npos);
    }
}

TEST_CASE("ops are bitwise deterministic on identical inputs") {
    Rng rng(77);
    Tensor x = Tensor::uniform({3, 17, 19}, rng, -1, 1);
    Tensor k = Tensor::uniform({4, 3, 3, 3}, rng, -1, 1);
    Tensor y1 = conv2d(x, k, 1, 1);
    Tensor y2 = conv2d(x, k, 1, 1);
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.at(i) == y2.at(i));

    Rng r1(123), r2(123);
    Tensor u1 = Tensor::randn({64}, r1);
    Tensor u2 = Tensor::randn({64}, r2);
    for (int64_t i = 0; i < u1.numel(); ++i) CHECK(u1.at(i) == u2.at(i));
}

TEST_CASE("no-grad scope keeps the tape empty") {
    Tensor x = Tensor::full({3}, 1.0f, true);
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("detach blocks gradient flow") {
    Tensor x = Tensor::full({3}, 2.0f, true);
    Tensor y = sum_all(mul(x.detach(), x));
    y.backward();
    for (float g : x.grad()) CHECK(g == doctest::Approx(2.0f));  // only the live path
}
