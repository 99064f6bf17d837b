#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "truemoe/checkpoint.hpp"
#include "truemoe/pipeline.hpp"

using namespace truemoe;
namespace fs = std::filesystem;

namespace {

Config tiny_config(const std::string& name) {
    Config c;
    c.work_dir = fs::temp_directory_path() / ("truemoe_pipeline_" + name);
    c.data_root = c.work_dir / "data";
    fs::remove_all(c.work_dir);
    c.seed = 5;
    c.splits = {{{32, {16, 16, 0}}, {16, {8, 8, 0}}, {16, {0, 0, 16}}}};
    c.ae_images_per_family = 16;
    c.ae_epochs = 1;
    c.mlre_images = 32;
    c.mlre_epochs = 1;
    c.gae_epochs = 1;
    c.epochs = 1;
    c.finetune_epochs = 1;
    c.router_epochs = 1;
    c.batch_size = 16;
    return c;
}

void load_generated(Session& s) {
    const auto& c = s.config();
    for (int k = 0; k < 3; ++k) {
        s.set_images(Split(k), generate_split(c.splits[std::size_t(k)], Split(k), derive_seed(c.seed, 0x7E57 + std::uint64_t(k))));
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t frozen_digest(const Model& m) {
    std::uint64_t h = m.experts.hge.digest();
    for (const auto& p : m.experts.autoencoders) h ^= p.digest() * 31;
    return h ^ mlre_encoder_digest(m.mlre) ^ (gae_digest(m.gae) * 7);
}

}  // namespace

TEST_SUITE("pipeline") {
    TEST_CASE("later phases refuse to run without their prerequisites") {
        Session s(tiny_config("order"));
        load_generated(s);
        try {
            s.run_phase(Phase::cluster);
            FAIL("expected StateError");
        } catch (const StateError& e) {
            CHECK(std::string(e.what()).find("pretrain_gae") != std::string::npos);
        }
        CHECK_THROWS_AS(s.evaluate(Split::test), StateError);
    }

    TEST_CASE("full tiny run: freezing, reproducibility, checkpoints, routes") {
        const Config c = tiny_config("full");
        Session s(c);
        load_generated(s);
        std::uint64_t frozen = 0;
        for (Phase p : kPhaseOrder) {
            s.run_phase(p);
            if (p == Phase::pretrain_gae) frozen = frozen_digest(s.model());
            if (phase_index(p) > phase_index(Phase::pretrain_gae)) CHECK(frozen_digest(s.model()) == frozen);
            CHECK(fs::exists(checkpoint_path(c, p)));
        }
        const auto ev = s.evaluate(Split::test);
        CHECK(ev.truemoe.sources.count("C") == 1);
        CHECK(ev.baseline.model == "baseline");

        // same config and seed from scratch gives the same report and checkpoint, bit for bit
        const auto first_ckpt = slurp(checkpoint_path(c, Phase::routers));
        fs::remove_all(c.work_dir);
        Session s2(c);
        load_generated(s2);
        s2.run_all();
        CHECK(format_report(s2.evaluate(Split::test).truemoe) == format_report(ev.truemoe));
        CHECK(slurp(checkpoint_path(c, Phase::routers)) == first_ckpt);

        // save -> load -> save
        const auto bytes = slurp(checkpoint_path(c, Phase::routers));
        const Model m = from_checkpoint(load_checkpoint(checkpoint_path(c, Phase::routers)));
        const auto again = serialize_checkpoint(to_checkpoint(m));
        CHECK(std::string(again.begin(), again.end()) == bytes);

        // a fresh session resumes from checkpoints and scores identically
        Session s3(c);
        load_generated(s3);
        s3.load(Phase::routers);
        CHECK(format_report(s3.evaluate(Split::test).truemoe) == format_report(ev.truemoe));

        // perturbation with probability 0 is the clean report
        auto spec = perturbation_from_config(c);
        CHECK(!spec);
        Config cj = c;
        cj.perturbation = "jpeg";
        cj.perturb_probability = 0.0;
        auto zero = perturbation_from_config(cj);
        REQUIRE(zero);
        auto pz = s.evaluate(Split::test, zero);
        pz.truemoe.perturbation = "none";
        CHECK(format_report(pz.truemoe) == format_report(ev.truemoe));

        // route records
        const auto file = c.work_dir / "routes.tsv";
        std::vector<std::string> paths;
        for (std::size_t i = 0; i < ev.scores.size(); ++i) paths.push_back("img" + std::to_string(i));
        write_routes(paths, ev.scores, file);
        std::ifstream in(file);
        std::string line;
        std::size_t records = 0;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            ++records;
            std::istringstream ls(line);
            std::string path;
            int t = 0;
            ls >> path >> t;
            CHECK((t >= 1 && t <= 6));
            double d, w, sum = 0;
            for (int k = 0; k < 6; ++k) ls >> d;
            for (int k = 0; k < 3; ++k) {
                ls >> w;
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        CHECK(records == ev.scores.size());

        // rerunning an early phase drops what was built on it
        s.run_phase(Phase::cluster);
        CHECK(!s.model().has(Phase::routers));
        CHECK_THROWS_AS(s.evaluate(Split::test), StateError);
        fs::remove_all(c.work_dir);
    }

    TEST_CASE("mode flags cannot change under a loaded model") {
        Session s(tiny_config("modes"));
        Config other = s.config();
        other.gdf_mode = GdfMode::concat;
        s.model().completed = 0;
        CHECK_THROWS_AS(s.set_config(other), ConfigError);
        Config beta = s.config();
        beta.beta = 0.0;
        CHECK_NOTHROW(s.set_config(beta));
    }
}
