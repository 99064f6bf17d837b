#include <doctest.h>

#include <cmath>
#include <vector>

#include "gradchecks.hpp"
#include "truemoe/experts.hpp"
#include "truemoe/forge.hpp"
#include "truemoe/training.hpp"

using namespace truemoe;

namespace {

AutoencoderPair frozen_pair(std::uint64_t seed) {
    AutoencoderPair p;
    Rng rng(seed);
    p.init(rng);
    p.freeze();
    return p;
}

double mse(const Tensor& a, const Tensor& b) { return sum_sq(a - b) / double(a.size()); }

}  // namespace

TEST_SUITE("experts") {
    TEST_CASE("HGE stage shapes and determinism") {
        const Hge hge;
        const Tensor x = synth_real(3, 21);
        const auto f = hge.features(x);
        REQUIRE(f.size() == 6);
        for (int j = 1; j <= 6; ++j) {
            CHECK(f[std::size_t(j - 1)].shape() == Shape{Hge::channels(j), Hge::resolution(j), Hge::resolution(j)});
        }
        CHECK(f[0].shape() == Shape{8, 64, 64});
        CHECK(f[5].shape() == Shape{48, 2, 2});
        CHECK(hge.features(x) == f);
        CHECK(Hge().digest() == hge.digest());
    }

    TEST_CASE("HGE stage 1 maps a constant image to constant channels") {
        const Hge hge;
        const Tensor x({3, 64, 64}, 0.37f);
        const Tensor s1 = hge.features(x)[0];
        for (std::size_t c = 0; c < s1.dim(0); ++c) {
            const float v = s1.at(c, 0, 0);
            for (std::size_t i = 0; i < 64 * 64; ++i) REQUIRE(s1[c * 64 * 64 + i] == v);
        }
    }

    TEST_CASE("GDF: zero on identical inputs, elementwise residual, antisymmetry") {
        const Hge hge;
        const Tensor x = synth_real(0, 3), y = synth_real(5, 4);
        for (int j = 1; j <= 6; ++j) {
            const auto z = gdf(hge, x, x, j);
            CHECK(sum_sq(z.map) == 0.0);
            const auto a = gdf(hge, x, y, j), b = gdf(hge, y, x, j);
            for (std::size_t i = 0; i < a.map.size(); ++i) REQUIRE(a.map[i] == -b.map[i]);
        }
        const std::vector<Tensor> A = {Tensor({1, 2, 2}, std::vector<float>{1, 2, 3, 4})};
        const std::vector<Tensor> B = {Tensor({1, 2, 2}, std::vector<float>{0, 2, 3, 3})};
        CHECK(gdf_from_features(A, B, 1).map == Tensor({1, 2, 2}, std::vector<float>{1, 0, 0, 1}));
        CHECK_THROWS_AS(gdf(hge, x, x, 0), DomainError);
        CHECK_THROWS_AS(gdf(hge, x, x, 7), DomainError);
    }

    TEST_CASE("autoencode: frozen contract, shape, clamp, determinism") {
        AutoencoderPair p;
        Rng rng(1);
        p.init(rng);
        const Tensor x = synth_real(1, 8);
        CHECK_THROWS_AS(autoencode(p, x), StateError);
        p.freeze();
        const Tensor y = autoencode(p, x);
        CHECK(y.shape() == Shape{3, 64, 64});
        for (float v : y.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
        CHECK(autoencode(p, x) == y);
    }

    TEST_CASE("expert grid is complete and addressable") {
        ExpertArray arr;
        CHECK(arr.size() == std::size_t(kNumManifolds * kNumLevels));
        std::vector<bool> seen(arr.size(), false);
        for (int i = 0; i < kNumManifolds; ++i)
            for (int j = 1; j <= kNumLevels; ++j) {
                const auto k = ExpertArray::index({i, j});
                REQUIRE(k < arr.size());
                CHECK(!seen[k]);
                seen[k] = true;
                CHECK(arr.head({i, j}).params[0].dim(1) == head_input_width(j, arr.mode));
            }
        CHECK(head_input_width(3, GdfMode::residual) == 24);
        CHECK(head_input_width(3, GdfMode::concat) == 48);
    }

    TEST_CASE("zero head predicts exactly 0.5; zero GDF sees only the bias path") {
        ExpertArray arr;
        for (auto& p : arr.autoencoders) p = frozen_pair(3);
        const Tensor x = synth_real(4, 2);
        for (int j = 1; j <= kNumLevels; ++j) CHECK(expert_predict(arr, {1, j}, x) == 0.5f);
        ExpertHead h(16);
        Rng rng(7);
        h.init(rng);
        for (auto& v : h.params[1].values()) v = float(normal(rng));
        h.params[3][0] = 0.3f;
        const std::vector<float> zero(16, 0.0f);
        Tensor hid = h.params[1];
        relu_inplace(hid);
        const float logit = linear<float>(h.params[2], h.params[3], hid.span())[0];
        CHECK(h.predict(zero) == doctest::Approx(sigmoid(logit)).epsilon(1e-6));
    }

    TEST_CASE("scaling the output layer moves predictions away from 0.5") {
        ExpertArray arr;
        for (auto& p : arr.autoencoders) p = frozen_pair(5);
        Rng rng(9);
        auto& h = arr.head({0, 2});
        h.init(rng);
        std::vector<float> before;
        for (int n = 0; n < 10; ++n) before.push_back(expert_predict(arr, {0, 2}, synth_real(n % 8, 100 + n)));
        h.params[2] *= 2.5f;
        h.params[3] *= 2.5f;
        for (int n = 0; n < 10; ++n) {
            const float after = expert_predict(arr, {0, 2}, synth_real(n % 8, 100 + n));
            CHECK(std::abs(after - 0.5f) >= std::abs(before[std::size_t(n)] - 0.5f) - 1e-7f);
        }
    }

    TEST_CASE("head gradients") {
        for (std::uint64_t s = 1; s <= 5; ++s) CHECK(gradchecks::head(s) <= 1e-3);
    }

    TEST_CASE("a pretrained family-A autoencoder fits A fakes better than reals") {
        std::array<AutoencoderPair, kNumManifolds> pairs;
        for (int i = 0; i < kNumManifolds; ++i) {
            Rng rng(40 + std::uint64_t(i));
            pairs[std::size_t(i)].init(rng);
        }
        std::array<std::vector<Tensor>, kNumManifolds> corpora;
        SplitCounts a;
        a.fake = {96, 0, 0};
        for (auto& im : generate_split(a, Split::train, 71)) corpora[0].push_back(im.pixels);
        corpora[1] = corpora[2] = std::vector<Tensor>(corpora[0].begin(), corpora[0].begin() + 4);
        pretrain_autoencoders(pairs, corpora, TrainPlan{4, 16, 0.2f, 0.9f, 3});
        for (const auto& p : pairs) CHECK(p.frozen());
        SplitCounts eval{100, {100, 0, 0}};
        double fake = 0, real = 0;
        for (const auto& im : generate_split(eval, Split::test, 72)) {
            const double e = mse(im.pixels, autoencode(pairs[0], im.pixels));
            (im.meta.label == Label::fake ? fake : real) += e / 100.0;
        }
        MESSAGE("family-A fakes " << fake << " vs reals " << real);
        CHECK(fake < real);
    }
}
