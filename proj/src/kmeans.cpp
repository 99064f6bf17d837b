#include "truemoe/kmeans.hpp"

#include <cmath>
#include <limits>

#include "truemoe/errors.hpp"
#include "truemoe/rng.hpp"

namespace truemoe {
namespace {

double sq_dist(const std::vector<double>& c, const std::vector<float>& p) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double e = c[i] - double(p[i]);
        s += e * e;
    }
    return s;
}

}  // namespace

KMeansResult kmeans_cluster(const std::vector<std::vector<float>>& points, int k, std::uint64_t seed, int max_iter,
                            double tol) {
    if (k < 1) throw ConfigError("k-means needs k >= 1");
    if (points.size() < std::size_t(k)) {
        throw ConfigError("k-means needs at least k=" + std::to_string(k) + " points, got " +
                          std::to_string(points.size()));
    }
    const std::size_t N = points.size(), D = points[0].size(), K = std::size_t(k);
    for (const auto& p : points) {
        if (p.size() != D) throw DimensionError("k-means points differ in dimension");
    }

    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    {
        const auto& p = points[std::size_t(uniform_int(rng, 0, int(N) - 1))];
        centers.emplace_back(p.begin(), p.end());
    }
    std::vector<double> d2(N);
    while (centers.size() < K) {
        double total = 0;
        for (std::size_t n = 0; n < N; ++n) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, sq_dist(c, points[n]));
            d2[n] = best;
            total += best;
        }
        std::size_t chosen = 0;
        if (total > 0) {
            double r = uniform01(rng) * total;
            for (chosen = 0; chosen + 1 < N; ++chosen) {
                r -= d2[chosen];
                if (r < 0 && d2[chosen] > 0) break;
            }
        } else {
            chosen = std::size_t(uniform_int(rng, 0, int(N) - 1));
        }
        centers.emplace_back(points[chosen].begin(), points[chosen].end());
    }

    KMeansResult out;
    std::vector<int> assign(N, 0);
    std::vector<double> own(N);
    for (int it = 0; it < max_iter; ++it) {
        double objective = 0;
        for (std::size_t n = 0; n < N; ++n) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < K; ++c) {
                const double d = sq_dist(centers[c], points[n]);
                if (d < bd) {
                    bd = d;
                    best = int(c);
                }
            }
            assign[n] = best;
            own[n] = bd;
            objective += bd;
        }
        out.objective.push_back(objective);
        out.iterations = it + 1;

        std::vector<std::size_t> count(K, 0);
        for (int a : assign) ++count[std::size_t(a)];
        for (std::size_t c = 0; c < K; ++c) {
            if (count[c] > 0) continue;
            std::size_t far = 0;
            for (std::size_t n = 1; n < N; ++n) {
                if (own[n] > own[far]) far = n;
            }
            --count[std::size_t(assign[far])];
            assign[far] = int(c);
            own[far] = 0;
            count[c] = 1;
        }

        std::vector<std::vector<double>> next(K, std::vector<double>(D, 0.0));
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < D; ++i) next[std::size_t(assign[n])][i] += points[n][i];
        double moved = 0;
        for (std::size_t c = 0; c < K; ++c) {
            if (count[c] == 0) {
                next[c] = centers[c];
                continue;
            }
            for (auto& v : next[c]) v /= double(count[c]);
            double m = 0;
            for (std::size_t i = 0; i < D; ++i) m += (next[c][i] - centers[c][i]) * (next[c][i] - centers[c][i]);
            moved = std::max(moved, std::sqrt(m));
        }
        centers = std::move(next);
        if (moved < tol) break;
    }

    // Final assignment against the converged centers.
    out.clusters.centers = Tensor({K, D});
    for (std::size_t c = 0; c < K; ++c)
        for (std::size_t i = 0; i < D; ++i) out.clusters.centers[c * D + i] = static_cast<float>(centers[c][i]);
    out.clusters.assignment.resize(N);
    for (std::size_t n = 0; n < N; ++n) out.clusters.assignment[n] = nearest_center(out.clusters.centers, points[n]);
    return out;
}

}  // namespace truemoe
