#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "truemoe/fft.hpp"
#include "truemoe/forge.hpp"
#include "truemoe/image_io.hpp"
#include "truemoe/signal.hpp"

using namespace truemoe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

double mean_pixel(const Tensor& t) {
    double s = 0;
    for (float v : t.values()) s += v;
    return s / double(t.size());
}

double signed_bin(std::size_t k) { return k < 32 ? double(k) : double(k) - 64.0; }

}  // namespace

TEST_SUITE("forge") {
    TEST_CASE("reals are deterministic, in range, and differ by category") {
        for (int c = 0; c < kNumCategories; ++c) {
            const Tensor a = synth_real(c, 42);
            CHECK(a == synth_real(c, 42));
            CHECK_NOTHROW(validate_pixels(a));
        }
        for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
            CHECK(std::abs(mean_pixel(synth_real(0, seed)) - mean_pixel(synth_real(1, seed))) > 0.01);
        }
        CHECK_THROWS_AS(synth_real(8, 0), DomainError);
    }

    TEST_CASE("family B residual peaks at the grid frequency") {
        const Tensor base = synth_real(5, 3);
        double previous = 1e9;
        for (int s = 1; s <= kNumScales; ++s) {
            const Tensor fake = synth_fake(base, Family::B, s, 17);
            const Spectrum sp = fft2(grayscale(fake - base));
            std::size_t best = 1;
            double best_mag = -1;
            for (std::size_t i = 1; i < sp.real.size(); ++i) {
                const double m = std::hypot(sp.real[i], sp.imag[i]);
                if (m > best_mag) {
                    best_mag = m;
                    best = i;
                }
            }
            const double u = signed_bin(best / 64), v = signed_bin(best % 64);
            const double expected = 64.0 / family_b_period(s);
            CHECK(std::abs(u) == expected);
            CHECK(std::abs(v) == expected);
            const double radius = std::hypot(u, v);
            CHECK(radius < previous);
            previous = radius;
        }
    }

    TEST_CASE("family C zeroes its spectral annulus") {
        for (int s = 1; s <= kNumScales; ++s) {
            const Tensor base = synth_real(s % 8, 100 + std::uint64_t(s));
            const Tensor fake = synth_fake(base, Family::C, s, 9);
            const auto [lo, hi] = family_c_band(s, 9);
            REQUIRE(lo < hi);
            double notched = 0, original = 0;
            int bins = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                Tensor pf({64, 64}), pb({64, 64});
                std::copy(fake.data() + c * 4096, fake.data() + (c + 1) * 4096, pf.data());
                std::copy(base.data() + c * 4096, base.data() + (c + 1) * 4096, pb.data());
                const Spectrum sf = fft2(pf), sb = fft2(pb);
                for (std::size_t i = 0; i < 4096; ++i) {
                    const double r = std::hypot(signed_bin(i / 64), signed_bin(i % 64));
                    if (r < lo || r > hi) continue;
                    ++bins;
                    notched += std::norm(std::complex<double>(sf.real[i], sf.imag[i]));
                    original += std::norm(std::complex<double>(sb.real[i], sb.imag[i]));
                }
            }
            CHECK(bins > 0);
            CHECK(notched <= 1e-6 * original);
        }
    }

    TEST_CASE("fakes are deterministic and differ from their base") {
        for (int f = 0; f < kNumFamilies; ++f)
            for (int s = 1; s <= kNumScales; ++s)
                for (std::uint64_t seed = 0; seed < 3; ++seed) {
                    const Tensor base = synth_real(int(seed + std::uint64_t(s)) % 8, seed * 13 + 1);
                    const Tensor fake = synth_fake(base, Family(f), s, seed);
                    CHECK(fake == synth_fake(base, Family(f), s, seed));
                    CHECK_NOTHROW(validate_pixels(fake));
                    double mad = 0;
                    for (std::size_t i = 0; i < fake.size(); ++i) mad += std::abs(fake[i] - base[i]);
                    CHECK(mad / double(fake.size()) > 1e-4);
                }
        CHECK_THROWS_AS(synth_fake(synth_real(0, 0), Family::A, 7, 0), DomainError);
        CHECK_THROWS_AS(parse_family("D"), ConfigError);
    }

    TEST_CASE("family A bottleneck narrows with scale") {
        for (int s = 1; s < kNumScales; ++s) CHECK(family_a_bottleneck(s) > family_a_bottleneck(s + 1));
        CHECK(family_b_period(1) == 2);
        CHECK(family_b_period(6) == 64);
    }

    TEST_CASE("family signatures are separable by a nearest-centroid oracle") {
        const auto r = oracle::family_oracle(2024, 150, 100);
        MESSAGE("family oracle accuracy " << r.accuracy);
        CHECK(r.accuracy >= 0.8);
    }

    TEST_CASE("build_dataset honours counts and is reproducible") {
        TempDir tmp("truemoe_forge_build");
        DatasetConfig cfg;
        cfg.root = tmp.path;
        cfg.seed = 5;
        cfg.splits[0].real = 64;
        cfg.splits[0].fake = {64, 0, 0};
        const auto ms = build_dataset(cfg);
        REQUIRE(ms.size() == 1);
        const auto& m = ms[0];
        CHECK(m.entries.size() == 128);
        int fakes = 0;
        for (const auto& e : m.entries) {
            fakes += e.meta.label == Label::fake;
            CHECK(fs::exists(m.resolve(e)));
            if (e.meta.label == Label::fake) CHECK(e.meta.family == Family::A);
        }
        CHECK(fakes == 64);
        const auto again = build_dataset(cfg);
        CHECK(again[0].content_hash == m.content_hash);

        const DatasetManifest loaded = load_manifest(tmp.path / "train" / "manifest.tsv");
        CHECK(loaded.content_hash == m.content_hash);
        CHECK(loaded.split == Split::train);
        REQUIRE(loaded.entries.size() == m.entries.size());
        CHECK(loaded.entries[70].meta == m.entries[70].meta);

        const Image img = load_image(loaded, loaded.entries[0]);
        CHECK(img.pixels.shape() == Shape{3, 64, 64});

        cfg.seed = 6;
        CHECK(build_dataset(cfg)[0].content_hash != m.content_hash);
    }

    TEST_CASE("pinned scale applies to every fake") {
        SplitCounts counts;
        counts.fake = {5, 5, 5};
        for (const auto& img : generate_split(counts, Split::val, 3, 4)) CHECK(img.meta.artifact_scale == 4);
    }

    TEST_CASE("tampered manifests are rejected") {
        TempDir tmp("truemoe_forge_tamper");
        DatasetConfig cfg;
        cfg.root = tmp.path;
        cfg.splits[2].real = 2;
        cfg.splits[2].fake = {0, 0, 2};
        build_dataset(cfg);
        const fs::path file = tmp.path / "test" / "manifest.tsv";
        std::ifstream in(file);
        std::string text((std::istreambuf_iterator<char>(in)), {});
        in.close();
        text.replace(text.find("\treal\t"), 6, "\tfake\t");
        std::ofstream(file) << text;
        CHECK_THROWS_AS(load_manifest(file), IoError);
        CHECK_THROWS_AS(load_manifest(tmp.path / "missing.tsv"), IoError);
    }

    TEST_CASE("unwritable output root is an I/O error") {
        DatasetConfig cfg;
        cfg.root = "/dev/null/truemoe";
        cfg.splits[0].real = 1;
        CHECK_THROWS_AS(build_dataset(cfg), IoError);
    }

    TEST_CASE("ingesting real/ and fake/ folders leaves fake families absent") {
        TempDir tmp("truemoe_forge_ingest");
        fs::create_directories(tmp.path / "real");
        fs::create_directories(tmp.path / "fake" / "whatever");
        write_ppm(tmp.path / "real" / "a.ppm", synth_real(0, 1));
        write_ppm(tmp.path / "fake" / "whatever" / "b.ppm", synth_real(1, 1));
        write_ppm(tmp.path / "fake" / "c.ppm", synth_real(2, 1));
        const DatasetManifest m = ingest_directory(tmp.path);
        REQUIRE(m.entries.size() == 3);
        int fakes = 0;
        for (const auto& e : m.entries) {
            if (e.meta.label == Label::fake) {
                ++fakes;
                CHECK_FALSE(e.meta.family.has_value());
                CHECK_FALSE(e.meta.artifact_scale.has_value());
            }
        }
        CHECK(fakes == 2);
        save_manifest(m, tmp.path / "manifest.tsv");
        CHECK(load_manifest(tmp.path / "manifest.tsv").content_hash == m.content_hash);
        CHECK(load_images(m).size() == 3);
    }
}
