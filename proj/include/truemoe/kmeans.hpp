#pragma once

#include <cstdint>
#include <vector>

#include "truemoe/routing.hpp"

namespace truemoe {

struct KMeansResult {
    GranularityClusters clusters;
    std::vector<double> objective;  // within-cluster sum of squares after each assignment step
    int iterations = 0;
};

// k-means++ seeding then Lloyd iterations until every center moves less than
// tol or max_iter is reached. An empty cluster takes the point farthest from
// its current center. Ties go to the lowest index throughout.
KMeansResult kmeans_cluster(const std::vector<std::vector<float>>& points, int k, std::uint64_t seed,
                            int max_iter = 100, double tol = 1e-6);

}  // namespace truemoe
