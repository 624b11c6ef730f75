#include <catch2/catch_amalgamated.hpp>

#include "alab/tensor.hpp"
#include "alab/testing/gradcheck_suite.hpp"
#include "alab/testing/gradcheck.hpp"

using namespace alab;
using alab::testing::random_param;

TEST_CASE("matmul against identity returns the operand", "[tensor]") {
    auto eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto m = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    auto out = matmul(eye, m);
    REQUIRE(out.data() == m.data());
}

TEST_CASE("shape mismatches carry both shapes in the message", "[tensor]") {
    auto a = Tensor<float>::zeros({2, 3});
    auto b = Tensor<float>::zeros({4, 2});
    REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                          Catch::Matchers::ContainsSubstring("[4x2]"));
    REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2x3]"));
}

TEST_CASE("concat_last_dim produces the combined width", "[tensor]") {
    const int t = 5;
    auto a = Tensor<float>::zeros({t, 64});
    auto b = Tensor<float>::zeros({t, 32});
    auto c = concat_last_dim(a, b);
    REQUIRE(c.shape() == Shape{t, 96});
}

TEST_CASE("layer_norm maps constant rows to the bias", "[tensor]") {
    auto x = Tensor<double>::full({2, 4}, 3.7);
    auto g = Tensor<double>::full({4}, 1.0);
    auto b = Tensor<double>::zeros({4});
    auto y = layer_norm(x, g, b, 1e-5);
    for (double v : y.data()) REQUIRE(std::abs(v) < 1e-9);
}

TEST_CASE("layer_norm of [1,-1] approaches [1,-1] as eps shrinks", "[tensor]") {
    // hand computation: mean 0, var 1, xhat = x / sqrt(1 + eps)
    auto x = Tensor<double>::from_data({1, 2}, {1.0, -1.0});
    auto g = Tensor<double>::full({2}, 1.0);
    auto b = Tensor<double>::zeros({2});
    auto y = layer_norm(x, g, b, 1e-12);
    REQUIRE(y.data()[0] == Catch::Approx(1.0).epsilon(1e-9));
    REQUIRE(y.data()[1] == Catch::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("softmax of a zero row is uniform and shift-invariant", "[tensor]") {
    auto x = Tensor<double>::zeros({1, 4});
    auto y = softmax_last_dim(x);
    for (double v : y.data()) REQUIRE(v == Catch::Approx(0.25));

    Rng rng(5);
    auto r = random_param({3, 6}, rng);
    auto shifted = Tensor<double>::from_data({3, 6}, r.data());
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) shifted.at(i, j) += 11.5;
    auto y1 = softmax_last_dim(r);
    auto y2 = softmax_last_dim(shifted);
    for (size_t i = 0; i < y1.size(); ++i) REQUIRE(y1.data()[i] == Catch::Approx(y2.data()[i]).margin(1e-12));
}

TEST_CASE("cross entropy of uniform logits is ln(V)", "[tensor]") {
    auto logits = Tensor<double>::zeros({4, 21});
    auto loss = cross_entropy(logits, {0, 5, 10, 20});
    REQUIRE(loss.scalar() == Catch::Approx(std::log(21.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy of a confident correct logit approaches zero", "[tensor]") {
    auto logits = Tensor<double>::zeros({1, 5});
    logits.at(0, 2) = 80.0;
    auto loss = cross_entropy(logits, {2});
    REQUIRE(loss.scalar() < 1e-12);
}

TEST_CASE("backward of a sum gives unit gradients", "[tensor]") {
    Rng rng(9);
    auto x = random_param({3, 4}, rng);
    auto loss = scale(mean_all(x), 12.0);  // == sum(x)
    backward(loss);
    for (double g : x.grad()) REQUIRE(g == Catch::Approx(1.0));
}

TEST_CASE("diamond graph accumulates both branch gradients", "[tensor]") {
    Rng rng(10);
    std::vector<Tensor<double>> in{random_param({3, 3}, rng)};
    double err = alab::testing::gradcheck(
        [](const std::vector<Tensor<double>>& x) {
            auto f = matmul(x[0], x[0]);  // both parents are the same node
            auto g = add(scale(x[0], 2.0), f);
            return mean_all(g);
        },
        in);
    REQUIRE(err < 1e-7);
}

TEST_CASE("backward twice without zeroing doubles leaf gradients", "[tensor]") {
    Rng rng(11);
    auto x = random_param({2, 2}, rng);
    auto loss = mean_all(x);
    backward(loss);
    auto first = x.grad();
    // fresh graph, same leaf
    auto loss2 = mean_all(x);
    backward(loss2);
    for (size_t i = 0; i < first.size(); ++i) REQUIRE(x.grad()[i] == Catch::Approx(2 * first[i]));
}

TEST_CASE("every op passes central-difference checks on random small shapes", "[tensor]") {
    auto worst = alab::testing::run_gradcheck_suite(20);
    REQUIRE(worst.size() >= 16);
    for (auto& [op, err] : worst) {
        INFO(op << " max rel err " << err);
        REQUIRE(err < 1e-4);
    }
}

TEST_CASE("forward is pure and no-grad matches grad mode bitwise", "[tensor]") {
    Rng rng(12);
    auto a = random_param({4, 5}, rng);
    auto b = random_param({5, 3}, rng);
    auto g1 = Tensor<double>::full({3}, 1.0);
    auto b1 = Tensor<double>::zeros({3});

    auto run = [&]() {
        auto y = softmax_last_dim(layer_norm(matmul(a, b), g1, b1, 1e-5));
        return y.data();
    };
    auto v1 = run();
    auto v2 = run();
    REQUIRE(v1 == v2);

    std::vector<double> v3;
    {
        NoGradGuard ng;
        v3 = run();
    }
    REQUIRE(v1 == v3);
}

TEST_CASE("no-grad mode records no graph", "[tensor]") {
    Rng rng(13);
    auto a = random_param({2, 2}, rng);
    NoGradGuard ng;
    auto y = matmul(a, a);
    REQUIRE_FALSE(y.requires_grad());
}
