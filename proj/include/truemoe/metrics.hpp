#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "truemoe/image.hpp"

namespace truemoe {

// Fraction correct with score >= threshold read as fake. Throws DomainError on
// empty input, DimensionError on length mismatch.
double accuracy(std::span<const float> scores, std::span<const int> labels, double threshold = 0.5);

// Mean precision at the rank of each positive, scores sorted descending with
// ties kept in input order. Throws DomainError without positives.
double average_precision(std::span<const float> scores, std::span<const int> labels);

struct SourceMetrics {
    double acc = 0;
    double ap = 0;
    int n_real = 0;
    int n_fake = 0;
};

struct MetricsReport {
    std::string model = "truemoe";
    std::string perturbation = "none";
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;
    std::map<std::string, SourceMetrics> sources;  // "A", "B", "C", "unknown"
    double macc = 0;
    double map = 0;
};

// Groups by fake family (reals are shared by every source) and fills the
// unweighted means. Sources without fakes are omitted; throws DomainError when
// no source has both reals and fakes.
MetricsReport compute_report(std::span<const float> scores, std::span<const Provenance> meta);

// key<TAB>value lines, then a "#summary" line holding the same data as JSON.
std::string format_report(const MetricsReport& r);
MetricsReport parse_report(const std::string& text);
void write_report(const MetricsReport& r, const std::filesystem::path& file);

}  // namespace truemoe
