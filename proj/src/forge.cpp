#include "truemoe/forge.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "truemoe/digest.hpp"
#include "truemoe/fft.hpp"
#include "truemoe/image_io.hpp"
#include "truemoe/rng.hpp"
#include "truemoe/signal.hpp"

namespace truemoe {
namespace {

constexpr std::size_t N = kImageSize;

using Rgb = std::array<double, 3>;

// Three colours per content category: background start, background end, shapes.
constexpr std::array<std::array<Rgb, 3>, kNumCategories> kPalettes = {{
    {{{0.15, 0.25, 0.55}, {0.55, 0.75, 0.95}, {0.95, 0.90, 0.60}}},  // sky
    {{{0.70, 0.25, 0.10}, {0.95, 0.65, 0.30}, {0.30, 0.10, 0.10}}},  // sunset
    {{{0.10, 0.35, 0.12}, {0.45, 0.70, 0.30}, {0.75, 0.55, 0.25}}},  // foliage
    {{{0.30, 0.15, 0.40}, {0.70, 0.50, 0.80}, {0.95, 0.95, 0.95}}},  // dusk
    {{{0.25, 0.25, 0.27}, {0.70, 0.70, 0.68}, {0.10, 0.10, 0.12}}},  // stone
    {{{0.55, 0.45, 0.15}, {0.90, 0.85, 0.50}, {0.35, 0.20, 0.10}}},  // sand
    {{{0.05, 0.45, 0.45}, {0.55, 0.85, 0.80}, {0.90, 0.40, 0.55}}},  // reef
    {{{0.05, 0.05, 0.08}, {0.35, 0.35, 0.45}, {0.95, 0.80, 0.20}}},  // night
}};

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice(std::uint64_t seed, long ix, long iy) {
    const std::uint64_t h = splitmix64(seed ^ splitmix64(std::uint64_t(ix) * 0x9E3779B1ull + std::uint64_t(iy)));
    return double(h >> 11) * (1.0 / 9007199254740992.0);
}

// Smoothly interpolated lattice noise in [0,1] with the given cell spacing.
double value_noise(std::uint64_t seed, double x, double y, double spacing) {
    const double fx = x / spacing, fy = y / spacing;
    const long ix = long(std::floor(fx)), iy = long(std::floor(fy));
    const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
    const double a = lattice(seed, ix, iy), b = lattice(seed, ix + 1, iy);
    const double c = lattice(seed, ix, iy + 1), d = lattice(seed, ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

struct Shape2d {
    bool circle = true;
    double cx = 0, cy = 0, rx = 0, ry = 0;
    Rgb color{};
    double alpha = 0.85;
};

// Coverage of a pixel by a shape, anti-aliased over one pixel of distance.
double coverage(const Shape2d& s, double x, double y) {
    double d;
    if (s.circle) {
        const double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
        d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(s.rx, s.ry);
    } else {
        d = std::max(std::abs(x - s.cx) - s.rx, std::abs(y - s.cy) - s.ry);
    }
    return std::clamp(0.5 - d, 0.0, 1.0);
}

struct PatchPca {
    static constexpr std::size_t kPatch = 8;
    static constexpr std::size_t kDim = kPatch * kPatch * 3;
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;  // columns sorted by decreasing variance
};

// Linear autoencoder fitted in closed form (PCA) on 8x8 patches of reals.
const PatchPca& patch_pca() {
    static const PatchPca pca = [] {
        constexpr std::size_t D = PatchPca::kDim, P = PatchPca::kPatch;
        std::vector<Eigen::VectorXd> patches;
        for (int i = 0; i < 64; ++i) {
            const Tensor img = synth_real(i % kNumCategories, 0xA11CE000ull + std::uint64_t(i));
            for (std::size_t y = 0; y + P <= N; y += 4)
                for (std::size_t x = 0; x + P <= N; x += 4) {
                    Eigen::VectorXd v(D);
                    std::size_t k = 0;
                    for (std::size_t c = 0; c < 3; ++c)
                        for (std::size_t dy = 0; dy < P; ++dy)
                            for (std::size_t dx = 0; dx < P; ++dx) v[k++] = img.at(c, y + dy, x + dx);
                    patches.push_back(std::move(v));
                }
        }
        PatchPca out;
        out.mean = Eigen::VectorXd::Zero(D);
        for (const auto& p : patches) out.mean += p;
        out.mean /= double(patches.size());
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
        for (const auto& p : patches) {
            const Eigen::VectorXd d = p - out.mean;
            cov.noalias() += d * d.transpose();
        }
        cov /= double(patches.size());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        out.components = eig.eigenvectors().rowwise().reverse();
        return out;
    }();
    return pca;
}

Tensor forge_family_a(const Tensor& base, int scale, Rng& rng) {
    const auto& pca = patch_pca();
    constexpr long P = long(PatchPca::kPatch);
    const int width = family_a_bottleneck(scale);
    const Eigen::MatrixXd basis = pca.components.leftCols(width);
    const long oy = uniform_int(rng, 0, P - 1), ox = uniform_int(rng, 0, P - 1);
    Tensor out(base.shape());
    Eigen::VectorXd v(PatchPca::kDim);
    for (long by = -oy; by < long(N); by += P)
        for (long bx = -ox; bx < long(N); bx += P) {
            std::size_t k = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (long dy = 0; dy < P; ++dy)
                    for (long dx = 0; dx < P; ++dx) {
                        const long y = std::clamp<long>(by + dy, 0, long(N) - 1);
                        const long x = std::clamp<long>(bx + dx, 0, long(N) - 1);
                        v[k++] = base.at(c, std::size_t(y), std::size_t(x));
                    }
            const Eigen::VectorXd code = basis.transpose() * (v - pca.mean);
            const Eigen::VectorXd rec = pca.mean + basis * code;
            k = 0;
            for (std::size_t c = 0; c < 3; ++c)
                for (long dy = 0; dy < P; ++dy)
                    for (long dx = 0; dx < P; ++dx, ++k) {
                        const long y = by + dy, x = bx + dx;
                        if (y < 0 || x < 0 || y >= long(N) || x >= long(N)) continue;
                        out.at(c, std::size_t(y), std::size_t(x)) = static_cast<float>(std::clamp(rec[k], 0.0, 1.0));
                    }
        }
    return out;
}

Tensor forge_family_b(const Tensor& base, int scale, Rng& rng) {
    const int period = family_b_period(scale);
    const int cell = period / 2;
    const double amplitude = uniform(rng, 0.025, 0.045);
    const int py = uniform_int(rng, 0, period - 1), px = uniform_int(rng, 0, period - 1);
    Tensor out(base.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < N; ++y)
            for (std::size_t x = 0; x < N; ++x) {
                const int parity = ((int(y) + py) / cell + (int(x) + px) / cell) & 1;
                const double v = base.at(c, y, x) + (parity ? amplitude : -amplitude);
                out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return out;
}

double signed_frequency(std::size_t k, std::size_t n) { return k < n / 2 ? double(k) : double(k) - double(n); }

Tensor forge_family_c(const Tensor& base, int scale, std::uint64_t seed) {
    const auto [lo, hi] = family_c_band(scale, seed);
    Tensor out(base.shape());
    for (std::size_t c = 0; c < 3; ++c) {
        Tensor plane({N, N});
        std::copy(base.data() + c * N * N, base.data() + (c + 1) * N * N, plane.data());
        Spectrum s = fft2(plane);
        for (std::size_t u = 0; u < N; ++u)
            for (std::size_t v = 0; v < N; ++v) {
                const double r = std::hypot(signed_frequency(u, N), signed_frequency(v, N));
                if (r >= lo && r <= hi) {
                    s.real[u * N + v] = 0.0f;
                    s.imag[u * N + v] = 0.0f;
                }
            }
        const Spectrum back = ifft2(s);
        // Contract towards the mean instead of clipping so the annulus stays empty.
        double mean = 0, lo_v = 1e9, hi_v = -1e9;
        for (float v : back.real.values()) {
            mean += v;
            lo_v = std::min(lo_v, double(v));
            hi_v = std::max(hi_v, double(v));
        }
        mean /= double(N * N);
        double k = 1.0;
        if (hi_v > 1.0) k = std::min(k, (1.0 - mean) / (hi_v - mean));
        if (lo_v < 0.0) k = std::min(k, mean / (mean - lo_v));
        for (std::size_t i = 0; i < N * N; ++i) {
            const double v = mean + k * (back.real[i] - mean);
            out[c * N * N + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

std::uint64_t family_tag(Family f) { return 0xFA000ull + std::uint64_t(f); }

std::string format_optional_family(const std::optional<Family>& f) { return f ? to_string(*f) : "-"; }

}  // namespace

Tensor synth_real(int category, std::uint64_t seed) {
    if (category < 0 || category >= kNumCategories) throw DomainError("category must lie in [0,7]");
    Rng rng(derive_seed(seed, 0x5EA1ull + std::uint64_t(category)));
    std::array<Rgb, 3> pal = kPalettes[std::size_t(category)];
    for (auto& col : pal)
        for (auto& ch : col) ch = std::clamp(ch + uniform(rng, -0.06, 0.06), 0.0, 1.0);

    const double angle = category * std::numbers::pi / 4.0 + uniform(rng, -0.4, 0.4);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double texture_amp = 0.10 + 0.03 * (category % 3);
    const std::uint64_t noise_seed = rng();
    const std::uint64_t grain_seed = rng();

    std::vector<Shape2d> shapes(std::size_t(1 + category % 3 + uniform_int(rng, 0, 1)));
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        auto& s = shapes[i];
        s.circle = (category + int(i)) % 2 == 0;
        s.cx = uniform(rng, 8, 56);
        s.cy = uniform(rng, 8, 56);
        s.rx = uniform(rng, 5, 16);
        s.ry = s.circle && category % 4 != 0 ? s.rx : uniform(rng, 5, 16);
        for (std::size_t ch = 0; ch < 3; ++ch) s.color[ch] = std::clamp(pal[2][ch] + uniform(rng, -0.1, 0.1), 0.0, 1.0);
        s.alpha = uniform(rng, 0.7, 0.95);
    }

    static constexpr double spacings[] = {16.0, 8.0, 4.0, 2.0};
    static constexpr double weights[] = {0.45, 0.28, 0.17, 0.10};
    Tensor img({3, N, N});
    for (std::size_t y = 0; y < N; ++y)
        for (std::size_t x = 0; x < N; ++x) {
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            const double t = std::clamp(0.5 + ((px - 32) * ca + (py - 32) * sa) / 64.0, 0.0, 1.0);
            Rgb col;
            for (std::size_t ch = 0; ch < 3; ++ch) col[ch] = pal[0][ch] * (1 - t) + pal[1][ch] * t;
            for (const auto& s : shapes) {
                const double a = s.alpha * coverage(s, px, py);
                for (std::size_t ch = 0; ch < 3; ++ch) col[ch] = col[ch] * (1 - a) + s.color[ch] * a;
            }
            double tex = 0;
            for (int o = 0; o < 4; ++o) tex += weights[o] * (value_noise(noise_seed + std::uint64_t(o), px, py, spacings[o]) - 0.5);
            const double grain = value_noise(grain_seed, px, py, 1.0) - 0.5;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = col[ch] * (1.0 + 2.0 * texture_amp * tex) + 0.03 * grain;
                img.at(ch, y, x) = static_cast<float>(0.06 + 0.88 * std::clamp(v, 0.0, 1.0));
            }
        }
    return img;
}

int family_a_bottleneck(int artifact_scale) {
    static constexpr int widths[] = {32, 16, 8, 4, 2, 1};
    if (artifact_scale < 1 || artifact_scale > kNumScales) throw DomainError("artifact scale must lie in [1,6]");
    return widths[artifact_scale - 1];
}

int family_b_period(int artifact_scale) {
    if (artifact_scale < 1 || artifact_scale > kNumScales) throw DomainError("artifact scale must lie in [1,6]");
    return (1 << (artifact_scale - 1)) * 2;
}

std::pair<double, double> family_c_band(int artifact_scale, std::uint64_t seed) {
    static constexpr double centres[] = {24.0, 12.0, 6.0, 3.0, 1.5, 1.0};
    if (artifact_scale < 1 || artifact_scale > kNumScales) throw DomainError("artifact scale must lie in [1,6]");
    Rng rng(derive_seed(seed, family_tag(Family::C)));
    const double c = centres[artifact_scale - 1] * uniform(rng, 0.95, 1.05);
    return {0.8 * c, 1.2 * c};
}

Tensor synth_fake(const Tensor& base, Family family, int artifact_scale, std::uint64_t seed) {
    validate_pixels(base);
    if (artifact_scale < 1 || artifact_scale > kNumScales) throw DomainError("artifact scale must lie in [1,6]");
    Rng rng(derive_seed(seed, family_tag(family)));
    switch (family) {
        case Family::A: return forge_family_a(base, artifact_scale, rng);
        case Family::B: return forge_family_b(base, artifact_scale, rng);
        case Family::C: return forge_family_c(base, artifact_scale, seed);
    }
    throw ConfigError("unknown generator family");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "'");
}

std::string format_manifest_record(const ManifestEntry& e) {
    const auto& m = e.meta;
    std::ostringstream os;
    os << e.path << '\t' << (m.label == Label::real ? "real" : "fake") << '\t' << format_optional_family(m.family) << '\t'
       << (m.artifact_scale ? std::to_string(*m.artifact_scale) : "-") << '\t' << m.content_category << '\t' << m.seed;
    return os.str();
}

std::uint64_t manifest_hash(const std::vector<ManifestEntry>& entries) {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : entries) {
        h = fnv1a(format_manifest_record(e), h);
        h = fnv1a("\n", h);
    }
    return h;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write manifest " + file.string());
    out << "#split=" << to_string(manifest.split) << '\n';
    for (const auto& e : manifest.entries) out << format_manifest_record(e) << '\n';
    out << "#hash=" << hex64(manifest_hash(manifest.entries)) << '\n';
    if (!out) throw IoError("short write to " + file.string());
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open manifest " + file.string());
    DatasetManifest m;
    m.directory = file.parent_path();
    std::string line;
    std::optional<std::uint64_t> stated;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("#split=", 0) == 0) {
            m.split = parse_split(line.substr(7));
            continue;
        }
        if (line.rfind("#hash=", 0) == 0) {
            stated = std::stoull(line.substr(6), nullptr, 16);
            continue;
        }
        if (line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, '\t')) f.push_back(tok);
        if (f.size() != 6) throw IoError("manifest line " + std::to_string(lineno) + ": expected 6 fields");
        ManifestEntry e;
        e.path = f[0];
        if (f[1] != "real" && f[1] != "fake") throw IoError("manifest line " + std::to_string(lineno) + ": bad label");
        e.meta.label = f[1] == "real" ? Label::real : Label::fake;
        if (f[2] != "-") e.meta.family = parse_family(f[2]);
        if (f[3] != "-") e.meta.artifact_scale = std::stoi(f[3]);
        e.meta.content_category = std::stoi(f[4]);
        e.meta.seed = std::stoull(f[5]);
        validate(e.meta, true);
        if (!seen.insert(e.path).second) throw IoError("duplicate manifest path " + e.path);
        m.entries.push_back(std::move(e));
    }
    m.content_hash = manifest_hash(m.entries);
    if (!stated) throw IoError("manifest " + file.string() + " has no #hash line");
    if (*stated != m.content_hash) throw IoError("manifest " + file.string() + " hash mismatch");
    return m;
}

namespace {

struct PlannedImage {
    Provenance meta;
    std::uint64_t base_seed = 0;
};

std::vector<PlannedImage> plan_split(const SplitCounts& counts, Split split, std::uint64_t seed,
                                     std::optional<int> pinned_scale) {
    Rng rng(derive_seed(seed, 0x5E1170ull + std::uint64_t(split)));
    std::vector<PlannedImage> plan;
    auto image_seed = [&] { return derive_seed(seed, rng()); };
    for (int i = 0; i < counts.real; ++i) {
        PlannedImage p;
        p.meta.label = Label::real;
        p.meta.content_category = uniform_int(rng, 0, kNumCategories - 1);
        p.meta.seed = image_seed();
        plan.push_back(p);
    }
    for (int f = 0; f < kNumFamilies; ++f) {
        for (int i = 0; i < counts.fake[std::size_t(f)]; ++i) {
            PlannedImage p;
            p.meta.label = Label::fake;
            p.meta.family = Family(f);
            p.meta.artifact_scale = pinned_scale ? *pinned_scale : uniform_int(rng, 1, kNumScales);
            p.meta.content_category = uniform_int(rng, 0, kNumCategories - 1);
            p.meta.seed = image_seed();
            p.base_seed = derive_seed(p.meta.seed, 0xBA5Eull);
            plan.push_back(p);
        }
    }
    return plan;
}

Tensor render(const PlannedImage& p) {
    if (p.meta.label == Label::real) return synth_real(p.meta.content_category, p.meta.seed);
    const Tensor base = synth_real(p.meta.content_category, p.base_seed);
    return synth_fake(base, *p.meta.family, *p.meta.artifact_scale, p.meta.seed);
}

}  // namespace

std::vector<Image> generate_split(const SplitCounts& counts, Split split, std::uint64_t seed,
                                  std::optional<int> pinned_scale) {
    std::vector<Image> out;
    for (const auto& p : plan_split(counts, split, seed, pinned_scale)) out.push_back(Image{render(p), p.meta});
    return out;
}

std::vector<DatasetManifest> build_dataset(const DatasetConfig& config) {
    namespace fs = std::filesystem;
    std::vector<DatasetManifest> manifests;
    if (config.pinned_scale && (*config.pinned_scale < 1 || *config.pinned_scale > kNumScales)) {
        throw ConfigError("pinned scale must lie in [1,6]");
    }
    for (int s = 0; s < 3; ++s) {
        const auto& counts = config.splits[std::size_t(s)];
        const int total = counts.real + counts.fake[0] + counts.fake[1] + counts.fake[2];
        if (total == 0) continue;
        if (counts.real < 0 || std::any_of(counts.fake.begin(), counts.fake.end(), [](int c) { return c < 0; })) {
            throw ConfigError("negative image count");
        }
        const Split split = Split(s);
        DatasetManifest m;
        m.split = split;
        m.directory = config.root / to_string(split);
        std::error_code ec;
        fs::create_directories(m.directory, ec);
        if (ec) throw IoError("cannot create " + m.directory.string() + ": " + ec.message());
        std::size_t index = 0;
        for (const auto& p : plan_split(counts, split, config.seed, config.pinned_scale)) {
            char name[32];
            std::snprintf(name, sizeof name, "%06zu.ppm", index++);
            fs::path rel = p.meta.label == Label::real ? fs::path("real") : fs::path("fake") / to_string(*p.meta.family);
            fs::create_directories(m.directory / rel, ec);
            if (ec) throw IoError("cannot create " + (m.directory / rel).string() + ": " + ec.message());
            rel /= name;
            write_ppm(m.directory / rel, render(p));
            m.entries.push_back({rel.generic_string(), p.meta});
        }
        m.content_hash = manifest_hash(m.entries);
        save_manifest(m, m.directory / "manifest.tsv");
        manifests.push_back(std::move(m));
    }
    return manifests;
}

DatasetManifest ingest_directory(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    DatasetManifest m;
    m.directory = dir;
    for (const char* sub : {"real", "fake"}) {
        const fs::path d = dir / sub;
        if (!fs::is_directory(d)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(d)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ManifestEntry e;
            e.path = fs::relative(f, dir).generic_string();
            e.meta.label = std::string(sub) == "real" ? Label::real : Label::fake;
            m.entries.push_back(std::move(e));
        }
    }
    if (m.entries.empty()) throw IoError("no images under " + dir.string() + "/{real,fake}");
    m.content_hash = manifest_hash(m.entries);
    return m;
}

Image load_image(const DatasetManifest& manifest, const ManifestEntry& entry) {
    Image img = preprocess(read_image_file(manifest.resolve(entry)));
    img.meta = entry.meta;
    return img;
}

std::vector<Image> load_images(const DatasetManifest& manifest) {
    std::vector<Image> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) out.push_back(load_image(manifest, e));
    return out;
}

}  // namespace truemoe
