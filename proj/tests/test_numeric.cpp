#include <doctest.h>

#include <cmath>
#include <vector>

#include "truemoe/fft.hpp"
#include "truemoe/gradcheck.hpp"
#include "truemoe/nn.hpp"
#include "truemoe/optim.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/sequential.hpp"

using namespace truemoe;

namespace {

template <class T>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    BasicTensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(normal(rng, 0.0, scale));
    return t;
}

// Direct definition of the DFT, independent of the transform under test.
std::pair<double, double> dft_bin(const Tensor& x, std::size_t u, std::size_t v) {
    const std::size_t H = x.dim(0), W = x.dim(1);
    double re = 0, im = 0;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
            const double a = -2.0 * M_PI * (double(u * y) / H + double(v * xx) / W);
            re += x[y * W + xx] * std::cos(a);
            im += x[y * W + xx] * std::sin(a);
        }
    return {re, im};
}

}  // namespace

TEST_SUITE("numeric") {
    TEST_CASE("tensor rejects mismatched data and non-finite values") {
        CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
        CHECK_THROWS_AS(Tensor::checked({1}, {std::nanf("")}), NumericError);
        CHECK_THROWS_AS(Tensor::checked({1}, {INFINITY}), NumericError);
        CHECK_NOTHROW(Tensor::checked({2}, {1.0f, 2.0f}));
    }

    TEST_CASE("conv2d identity kernel returns the input") {
        Rng rng(1);
        auto x = random_tensor<float>({1, 3, 3}, rng);
        Tensor k({1, 1, 1, 1}, 1.0f);
        CHECK(conv2d(x, k, 1, 0) == x);
    }

    TEST_CASE("conv2d box kernel spreads an impulse into a 3x3 block") {
        Tensor x({1, 5, 5});
        x.at(0, 2, 2) = 1.0f;
        Tensor k({1, 1, 3, 3}, 1.0f);
        const Tensor y = conv2d(x, k, 1, 1);
        REQUIRE(y.shape() == Shape{1, 5, 5});
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 5; ++c) {
                const bool inside = std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1;
                CHECK(y.at(0, r, c) == (inside ? 1.0f : 0.0f));
            }
    }

    TEST_CASE("conv2d shape law and channel errors") {
        Tensor x({2, 5, 5});
        Tensor k({4, 2, 3, 3});
        CHECK(conv2d(x, k, 2, 0).shape() == Shape{4, 2, 2});
        Tensor bad({4, 3, 3, 3});
        CHECK_THROWS_AS(conv2d(x, bad, 1, 1), DimensionError);
    }

    TEST_CASE("conv2d is linear") {
        Rng rng(7);
        for (int trial = 0; trial < 5; ++trial) {
            auto x = random_tensor<float>({3, 9, 11}, rng);
            auto y = random_tensor<float>({3, 9, 11}, rng);
            auto k = random_tensor<float>({4, 3, 3, 3}, rng);
            const float a = 0.7f, b = -1.3f;
            const Tensor lhs = conv2d(x * a + y * b, k, 2, 1);
            const Tensor rhs = conv2d(x, k, 2, 1) * a + conv2d(y, k, 2, 1) * b;
            CHECK(max_abs_diff(lhs, rhs) <= 1e-5);
        }
    }

    TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
        Rng rng(3);
        auto k = random_tensor<double>({5, 3, 3, 3}, rng);
        auto x = random_tensor<double>({3, 8, 8}, rng);
        auto y = random_tensor<double>({5, 4, 4}, rng);
        const auto cx = conv2d(x, k, 2, 1);
        const auto ty = conv_transpose2d(y, k, BasicTensor<double>{}, 2, 1, 1);
        REQUIRE(ty.shape() == x.shape());
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }

    TEST_CASE("sequential network gradients match central differences") {
        Rng rng(11);
        Sequential<double> net({LayerSpec::conv(2, 4, 2), LayerSpec::relu(), LayerSpec::conv(4, 3, 2),
                                LayerSpec::up(3, 4), LayerSpec::relu(), LayerSpec::up(4, 2)});
        net.init(rng);
        for (auto& p : net.params())
            for (auto& v : p.values()) v += 0.05 * normal(rng);
        const auto x = random_tensor<double>({2, 8, 8}, rng);
        const auto target = random_tensor<double>({2, 8, 8}, rng);
        auto loss_of = [&](const Sequential<double>& n, const BasicTensor<double>& in) {
            const auto out = n.forward(in);
            double s = 0;
            for (std::size_t i = 0; i < out.size(); ++i) s += 0.5 * (out[i] - target[i]) * (out[i] - target[i]);
            return s;
        };
        Sequential<double>::Trace trace;
        const auto out = net.forward(x, &trace);
        std::vector<BasicTensor<double>> grads;
        const auto gin = net.backward(trace, out - target, grads, true);
        auto fn = [&](std::span<const BasicTensor<double>> ps) {
            Sequential<double> n = net;
            for (std::size_t i = 0; i < ps.size(); ++i) n.params()[i] = ps[i];
            return loss_of(n, x);
        };
        CHECK(grad_check<double>(fn, net.params(), grads, 1e-5) <= 1e-3);
        std::vector<BasicTensor<double>> xin{x}, gx{gin};
        auto fx = [&](std::span<const BasicTensor<double>> ps) { return loss_of(net, ps[0]); };
        CHECK(grad_check<double>(fx, xin, gx, 1e-5) <= 1e-3);
    }

    TEST_CASE("fft2 of a constant has only a DC bin") {
        const std::size_t N = 16;
        const float c = 0.37f;
        const Spectrum s = fft2(Tensor({N, N}, c));
        CHECK(s.real[0] == doctest::Approx(c * N * N).epsilon(1e-6));
        for (std::size_t i = 1; i < N * N; ++i) {
            CHECK(std::abs(s.real[i]) <= 1e-4);
            CHECK(std::abs(s.imag[i]) <= 1e-4);
        }
    }

    TEST_CASE("fft2 round trip and Parseval") {
        Rng rng(5);
        for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 12u, 16u, 32u, 64u}) {
            const Tensor x = random_tensor<float>({n, n}, rng);
            const Spectrum back = ifft2(fft2(x));
            CHECK(max_abs_diff(back.real, x) <= 1e-5);
            CHECK(max_abs_diff(back.imag, Tensor({n, n})) <= 1e-5);
        }
        const Tensor x = random_tensor<float>({16, 16}, rng);
        const Spectrum X = fft2(x);
        const double lhs = sum_sq(x) * 256.0;
        const double rhs = sum_sq(X.real) + sum_sq(X.imag);
        CHECK(std::abs(lhs - rhs) / lhs <= 1e-5);
    }

    TEST_CASE("fft2 agrees with the direct DFT on power-of-two and odd sizes") {
        Rng rng(9);
        for (std::size_t n : {6u, 8u}) {
            const Tensor x = random_tensor<float>({n, n + 1}, rng);
            const Spectrum X = fft2(x);
            for (std::size_t u = 0; u < n; ++u)
                for (std::size_t v = 0; v < n + 1; ++v) {
                    auto [re, im] = dft_bin(x, u, v);
                    CHECK(X.real[u * (n + 1) + v] == doctest::Approx(re).epsilon(1e-4).scale(1.0));
                    CHECK(X.imag[u * (n + 1) + v] == doctest::Approx(im).epsilon(1e-4).scale(1.0));
                }
        }
    }

    TEST_CASE("sgd_step follows v <- mu v + g, theta <- theta - lr v") {
        std::vector<Tensor> params{Tensor({1}, 0.0f)};
        std::vector<Tensor> grads{Tensor({1}, 1.0f)};

        auto zero_lr = make_optimizer(params, 0.0f, 0.9f);
        sgd_step(params, grads, zero_lr);
        sgd_step(params, grads, zero_lr);
        CHECK(params[0][0] == 0.0f);
        CHECK(zero_lr.velocity[0][0] == doctest::Approx(1.9));

        auto plain = make_optimizer(params, 0.1f, 0.0f);
        sgd_step(params, grads, plain);
        CHECK(params[0][0] == doctest::Approx(-0.1));

        params[0][0] = 0.0f;
        auto mom = make_optimizer(params, 0.1f, 0.9f);
        sgd_step(params, grads, mom);
        sgd_step(params, grads, mom);
        CHECK(params[0][0] == doctest::Approx(-0.29).epsilon(1e-6));

        std::vector<Tensor> wrong{Tensor({2}, 1.0f)};
        CHECK_THROWS_AS(sgd_step(params, wrong, mom), DimensionError);
    }

    TEST_CASE("sgd with zero momentum is plain gradient descent") {
        Rng rng(2);
        std::vector<Tensor> a{random_tensor<float>({7}, rng)};
        std::vector<Tensor> b = a;
        auto st = make_optimizer(a, 0.05f, 0.0f);
        for (int step = 0; step < 4; ++step) {
            std::vector<Tensor> g{random_tensor<float>({7}, rng)};
            sgd_step(a, g, st);
            for (std::size_t i = 0; i < 7; ++i) b[0][i] -= 0.05f * g[0][i];
            CHECK(a[0] == b[0]);
        }
    }

    TEST_CASE("grad_check on closed forms") {
        using TD = BasicTensor<double>;
        auto sq = [](std::span<const TD> ps) {
            double s = 0;
            for (double v : ps[0].values()) s += v * v;
            return s;
        };
        std::vector<TD> theta{TD({2}, std::vector<double>{1, 2})};
        std::vector<TD> good{TD({2}, std::vector<double>{2, 4})};
        CHECK(grad_check<double>(sq, theta, good, 1e-3) <= 1e-5);

        std::vector<TD> doubled{TD({2}, std::vector<double>{4, 8})};
        CHECK(grad_check<double>(sq, theta, doubled, 1e-3) == doctest::Approx(1.0 / 3.0).epsilon(1e-4));

        auto constant = [](std::span<const TD>) { return 3.0; };
        std::vector<TD> zeros{TD({2})};
        CHECK(grad_check<double>(constant, theta, zeros, 1e-3) == 0.0);

        auto bad = [](std::span<const TD>) { return std::nan(""); };
        CHECK_THROWS_AS(grad_check<double>(bad, theta, zeros, 1e-3), NumericError);
    }
}
