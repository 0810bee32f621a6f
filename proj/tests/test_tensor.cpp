#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <eegart/tensor.hpp>

using namespace eegart::num;

namespace {

std::vector<double> random_vec(size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// central finite differences of a scalar-valued graph builder w.r.t. one input
void check_gradients(const std::function<TensorPtr()>& build,
                     const std::vector<TensorPtr>& inputs, double tol = 1e-6) {
    auto loss = build();
    backward(loss);
    const double h = 1e-5;
    for (const auto& input : inputs) {
        REQUIRE(input->grad.size() == input->size());
        for (size_t i = 0; i < input->size(); ++i) {
            const double saved = input->value[i];
            input->value[i] = saved + h;
            const double up = build()->value[0];
            input->value[i] = saved - h;
            const double down = build()->value[0];
            input->value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double scale = std::max({1.0, std::abs(fd), std::abs(input->grad[i])});
            CHECK(std::abs(input->grad[i] - fd) <= tol * scale);
        }
    }
}

// reduce any tensor to a scalar with fixed random weights, so gradients of
// every element get exercised
TensorPtr weighted_sum(const TensorPtr& t, const std::vector<double>& weights) {
    auto w = make_tensor({t->size(), 1}, weights);
    auto flat = reshape(t, {1, t->size()});
    return matmul(flat, w);
}

}  // namespace

TEST_CASE("sum of squares gradient") {
    auto theta = make_tensor({1, 4}, {1.0, -2.0, 3.0, 0.5}, true);
    auto loss = matmul(mul(theta, theta), make_tensor({4, 1}, {1, 1, 1, 1}));
    backward(loss);
    for (size_t i = 0; i < 4; ++i)
        CHECK(theta->grad[i] == doctest::Approx(2.0 * theta->value[i]));
}

TEST_CASE("disconnected parameter keeps zero gradient") {
    auto used = make_tensor({1, 2}, {1.0, 2.0}, true);
    auto unused = make_tensor({1, 2}, {5.0, 5.0}, true);
    unused->ensure_grad();
    auto loss = matmul(used, make_tensor({2, 1}, {1.0, 1.0}));
    backward(loss);
    CHECK(unused->grad[0] == 0.0);
    CHECK(unused->grad[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
    auto t = make_tensor({1, 2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(t), std::invalid_argument);
}

TEST_CASE("conv1d hand-computed values") {
    // x=[1,2,3,4], w=[1,0,-1]: cross-correlation with zero padding
    auto x = make_tensor({1, 4}, {1, 2, 3, 4});
    auto w = make_tensor({1, 1, 3}, {1, 0, -1});
    auto b = make_tensor({1}, std::vector<double>{0.0});
    auto y = conv1d(x, w, b);
    // y[t] = 1*x[t-1] + 0*x[t] + (-1)*x[t+1]
    CHECK(y->value[0] == doctest::Approx(-2.0));
    CHECK(y->value[1] == doctest::Approx(-2.0));
    CHECK(y->value[2] == doctest::Approx(-2.0));
    CHECK(y->value[3] == doctest::Approx(3.0));
}

TEST_CASE("conv1d identity kernel and output shape") {
    std::mt19937_64 rng(1);
    auto x = make_tensor({1, 8}, random_vec(8, rng));
    auto w = make_tensor({1, 1, 3}, {0, 1, 0});
    auto b = make_tensor({1}, std::vector<double>{0.0});
    auto y = conv1d(x, w, b);
    for (size_t i = 0; i < 8; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]));

    auto x64 = make_tensor({1, 64}, random_vec(64, rng));
    auto w8 = make_tensor({8, 1, 3}, random_vec(24, rng));
    auto b8 = make_tensor({8}, random_vec(8, rng));
    auto y8 = conv1d(x64, w8, b8);
    CHECK(y8->shape == std::vector<size_t>{8, 64});

    auto wbad = make_tensor({1, 2, 3}, random_vec(6, rng));
    CHECK_THROWS_AS(conv1d(x64, wbad, b), std::invalid_argument);
}

TEST_CASE("maxpool1d values and length cascade") {
    auto x = make_tensor({1, 4}, {1, 3, 2, 5});
    auto y = maxpool1d(x);
    CHECK(y->value == std::vector<double>{3, 5});

    auto c = make_tensor({1, 8}, std::vector<double>(8, 2.5));
    CHECK(maxpool1d(c)->value == std::vector<double>(4, 2.5));

    std::mt19937_64 rng(2);
    auto t = make_tensor({1, 64}, random_vec(64, rng));
    for (int i = 0; i < 5; ++i) t = maxpool1d(t);
    CHECK(t->shape == std::vector<size_t>{1, 2});

    auto odd = make_tensor({1, 5}, {1, 2, 3, 4, 5});
    CHECK_THROWS_AS(maxpool1d(odd), std::invalid_argument);
}

TEST_CASE("maxpool gradient goes to first maximal element on ties") {
    auto x = make_tensor({1, 2}, {4.0, 4.0}, true);
    auto loss = reshape(maxpool1d(x), {1, 1});
    backward(loss);
    CHECK(x->grad[0] == 1.0);
    CHECK(x->grad[1] == 0.0);
}

TEST_CASE("layer_norm closed forms") {
    auto g = make_tensor({2}, {1.0, 1.0});
    auto b = make_tensor({2}, {0.0, 0.0});
    auto x = make_tensor({1, 2}, {1.0, -1.0});
    auto y = layer_norm_rows(x, g, b);
    CHECK(y->value[0] == doctest::Approx(0.999995).epsilon(1e-9));
    CHECK(y->value[1] == doctest::Approx(-0.999995).epsilon(1e-9));

    auto beta = make_tensor({3}, {0.7, 0.8, 0.9});
    auto gamma = make_tensor({3}, {1.0, 1.0, 1.0});
    auto c = make_tensor({1, 3}, {5.0, 5.0, 5.0});
    auto yc = layer_norm_rows(c, gamma, beta);
    for (size_t i = 0; i < 3; ++i)
        CHECK(yc->value[i] == doctest::Approx(beta->value[i]).epsilon(1e-9));
}

TEST_CASE("layer_norm output is normalized") {
    std::mt19937_64 rng(3);
    const size_t d = 16;
    auto g = make_tensor({d}, std::vector<double>(d, 1.0));
    auto b = make_tensor({d}, std::vector<double>(d, 0.0));
    auto x = make_tensor({1, d}, random_vec(d, rng, 3.0));
    auto y = layer_norm_rows(x, g, b);
    double mean = 0.0;
    for (double v : y->value) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : y->value) var += (v - mean) * (v - mean);
    var /= d;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("softmax rows are stochastic") {
    std::mt19937_64 rng(4);
    auto x = make_tensor({3, 5}, random_vec(15, rng, 2.0));
    auto y = softmax_rows(x);
    for (size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (size_t c = 0; c < 5; ++c) sum += y->value[r * 5 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("finite-difference gradient checks per op") {
    std::mt19937_64 rng(5);
    const auto probe = random_vec(64, rng);

    SUBCASE("conv1d + relu") {
        auto x = make_tensor({2, 8}, random_vec(16, rng), true);
        auto w = make_tensor({4, 2, 3}, random_vec(24, rng), true);
        auto b = make_tensor({4}, random_vec(4, rng), true);
        auto builder = [&]() {
            return weighted_sum(relu(conv1d(x, w, b)),
                                std::vector<double>(probe.begin(), probe.begin() + 32));
        };
        check_gradients(builder, {x, w, b});
    }

    SUBCASE("maxpool1d") {
        auto x = make_tensor({2, 8}, random_vec(16, rng), true);
        auto builder = [&]() {
            return weighted_sum(maxpool1d(x),
                                std::vector<double>(probe.begin(), probe.begin() + 8));
        };
        check_gradients(builder, {x});
    }

    SUBCASE("matmul + add_row_broadcast") {
        auto a = make_tensor({3, 4}, random_vec(12, rng), true);
        auto w = make_tensor({4, 2}, random_vec(8, rng), true);
        auto b = make_tensor({2}, random_vec(2, rng), true);
        auto builder = [&]() {
            return weighted_sum(add_row_broadcast(matmul(a, w), b),
                                std::vector<double>(probe.begin(), probe.begin() + 6));
        };
        check_gradients(builder, {a, w, b});
    }

    SUBCASE("softmax_rows") {
        auto x = make_tensor({2, 5}, random_vec(10, rng), true);
        auto builder = [&]() {
            return weighted_sum(softmax_rows(x),
                                std::vector<double>(probe.begin(), probe.begin() + 10));
        };
        check_gradients(builder, {x});
    }

    SUBCASE("layer_norm_rows") {
        auto x = make_tensor({2, 6}, random_vec(12, rng), true);
        auto g = make_tensor({6}, random_vec(6, rng), true);
        auto b = make_tensor({6}, random_vec(6, rng), true);
        auto builder = [&]() {
            return weighted_sum(layer_norm_rows(x, g, b),
                                std::vector<double>(probe.begin(), probe.begin() + 12));
        };
        check_gradients(builder, {x, g, b}, 1e-5);
    }

    SUBCASE("mean_rows, transpose, slicing, exp, clamp") {
        auto x = make_tensor({4, 6}, random_vec(24, rng), true);
        auto builder = [&]() {
            auto t = col_concat({col_slice(x, 0, 3), col_slice(x, 3, 3)});
            t = matmul(t, transpose(t));        // [4,4]
            t = mean_rows(t);                   // [1,4]
            t = exp_op(scale(t, 0.1));
            t = clamp(t, -5.0, 5.0);
            return weighted_sum(t, std::vector<double>(probe.begin(), probe.begin() + 4));
        };
        check_gradients(builder, {x}, 1e-5);
    }
}

TEST_CASE("adam first step and zero-grad behavior") {
    ParamStore ps;
    auto theta = ps.add("theta", make_tensor({1, 3}, {1.0, 2.0, 3.0}));
    theta->ensure_grad();
    std::fill(theta->grad.begin(), theta->grad.end(), 1.0);
    AdamConfig cfg;
    adam_step(ps, cfg);
    // first step with g=1: delta = -lr * 1 / (1 + eps)
    for (size_t i = 0; i < 3; ++i) {
        const double expected = (i + 1.0) - cfg.lr / (1.0 + cfg.eps);
        CHECK(theta->value[i] == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(ps.step_count == 1);

    const auto before = theta->value;
    std::fill(theta->grad.begin(), theta->grad.end(), 0.0);
    adam_step(ps, cfg);
    // zero grad: m decays, parameters move only by the decayed momentum;
    // a fresh store with zero grad must leave parameters untouched
    ParamStore fresh;
    auto t2 = fresh.add("t", make_tensor({1, 2}, {1.0, 2.0}));
    t2->ensure_grad();
    adam_step(fresh);
    CHECK(t2->value[0] == doctest::Approx(1.0));
    CHECK(t2->value[1] == doctest::Approx(2.0));
}

TEST_CASE("adam constant-gradient steps shrink or hold") {
    ParamStore ps;
    auto theta = ps.add("theta", make_tensor({1, 1}, std::vector<double>{0.0}));
    AdamConfig cfg;
    theta->ensure_grad();
    theta->grad[0] = 0.7;
    adam_step(ps, cfg);
    const double d1 = std::abs(theta->value[0]);
    const double v1 = theta->value[0];
    theta->grad[0] = 0.7;
    adam_step(ps, cfg);
    const double d2 = std::abs(theta->value[0] - v1);
    CHECK(d2 <= d1 + 1e-12);
}

TEST_CASE("determinism: same seed gives identical updates") {
    auto run = [] {
        std::mt19937_64 rng(11);
        ParamStore ps;
        auto theta = ps.add("theta", make_tensor({1, 8}, random_vec(8, rng)));
        for (int step = 0; step < 5; ++step) {
            ps.zero_grad();
            auto w = make_tensor({8, 1}, random_vec(8, rng));
            auto loss = matmul(mul(theta, theta), w);
            backward(loss);
            adam_step(ps);
        }
        return theta->value;
    };
    CHECK(run() == run());
}
