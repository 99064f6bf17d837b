#include "truemoe/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "truemoe/digest.hpp"
#include "truemoe/errors.hpp"

namespace truemoe {
namespace {

void check_lengths(std::size_t a, std::size_t b) {
    if (a != b) throw DimensionError("scores and labels differ in length");
    if (a == 0) throw DomainError("metric over an empty set");
}

// Round-trippable double text.
std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double accuracy(std::span<const float> scores, std::span<const int> labels, double threshold) {
    check_lengths(scores.size(), labels.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int pred = double(scores[i]) >= threshold ? 1 : 0;
        correct += pred == labels[i];
    }
    return double(correct) / double(scores.size());
}

double average_precision(std::span<const float> scores, std::span<const int> labels) {
    check_lengths(scores.size(), labels.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t tp = 0;
    double sum = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]] == 1) {
            ++tp;
            sum += double(tp) / double(r + 1);
        }
    }
    if (tp == 0) throw DomainError("average precision needs at least one positive");
    return sum / double(tp);
}

MetricsReport compute_report(std::span<const float> scores, std::span<const Provenance> meta) {
    if (scores.size() != meta.size()) throw DimensionError("scores and provenance differ in length");
    std::vector<std::size_t> reals;
    std::map<std::string, std::vector<std::size_t>> fakes;
    for (std::size_t i = 0; i < meta.size(); ++i) {
        if (meta[i].label == Label::real) {
            reals.push_back(i);
        } else {
            fakes[meta[i].family ? to_string(*meta[i].family) : "unknown"].push_back(i);
        }
    }
    if (reals.empty() || fakes.empty()) throw DomainError("evaluation needs both real and fake images");
    MetricsReport r;
    for (const auto& [name, idx] : fakes) {
        std::vector<float> s;
        std::vector<int> y;
        for (std::size_t i : reals) {
            s.push_back(scores[i]);
            y.push_back(0);
        }
        for (std::size_t i : idx) {
            s.push_back(scores[i]);
            y.push_back(1);
        }
        SourceMetrics m;
        m.acc = accuracy(s, y);
        m.ap = average_precision(s, y);
        m.n_real = int(reals.size());
        m.n_fake = int(idx.size());
        r.sources[name] = m;
    }
    for (const auto& [name, m] : r.sources) {
        r.macc += m.acc;
        r.map += m.ap;
    }
    r.macc /= double(r.sources.size());
    r.map /= double(r.sources.size());
    return r;
}

std::string format_report(const MetricsReport& r) {
    std::ostringstream os;
    os << "model\t" << r.model << '\n';
    os << "perturbation\t" << r.perturbation << '\n';
    os << "seed\t" << r.seed << '\n';
    os << "config_digest\t" << hex64(r.config_digest) << '\n';
    nlohmann::ordered_json js = {{"model", r.model},
                                 {"perturbation", r.perturbation},
                                 {"seed", r.seed},
                                 {"config_digest", hex64(r.config_digest)}};
    for (const auto& [name, m] : r.sources) {
        const std::string p = "source." + name + ".";
        os << p << "acc\t" << num(m.acc) << '\n';
        os << p << "ap\t" << num(m.ap) << '\n';
        os << p << "n_real\t" << m.n_real << '\n';
        os << p << "n_fake\t" << m.n_fake << '\n';
        js["sources"][name] = {{"acc", m.acc}, {"ap", m.ap}, {"n_real", m.n_real}, {"n_fake", m.n_fake}};
    }
    os << "macc\t" << num(r.macc) << '\n';
    os << "map\t" << num(r.map) << '\n';
    js["macc"] = r.macc;
    js["map"] = r.map;
    os << "#summary\t" << js.dump() << '\n';
    return os.str();
}

MetricsReport parse_report(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("#summary\t", 0) != 0) continue;
        try {
            const auto js = nlohmann::json::parse(line.substr(9));
            MetricsReport r;
            r.model = js.at("model").get<std::string>();
            r.perturbation = js.at("perturbation").get<std::string>();
            r.seed = js.at("seed").get<std::uint64_t>();
            r.config_digest = std::stoull(js.at("config_digest").get<std::string>(), nullptr, 16);
            for (const auto& [name, m] : js.at("sources").items()) {
                r.sources[name] = {m.at("acc").get<double>(), m.at("ap").get<double>(), m.at("n_real").get<int>(),
                                   m.at("n_fake").get<int>()};
            }
            r.macc = js.at("macc").get<double>();
            r.map = js.at("map").get<double>();
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("malformed report summary: ") + e.what());
        }
    }
    throw IoError("report has no #summary line");
}

void write_report(const MetricsReport& r, const std::filesystem::path& file) {
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write report " + file.string());
    out << format_report(r);
    if (!out) throw IoError("failed writing report " + file.string());
}

}  // namespace truemoe
