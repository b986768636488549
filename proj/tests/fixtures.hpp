// Shared test fixture: a small synthetic dataset written to a temp
// directory plus matching oracle anchor tables.
#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "ulip/anchors.hpp"
#include "ulip/dataset.hpp"
#include "ulip/pointcloud.hpp"
#include "ulip/rng.hpp"

namespace fixture {

struct Bench {
    std::filesystem::path dir;
    ulip::Dataset data;
    ulip::OracleAnchors anchors;

    Bench() = default;
    Bench(const Bench&) = delete;
    Bench& operator=(const Bench&) = delete;
    Bench(Bench&& other) noexcept
        : dir(std::move(other.dir)), data(std::move(other.data)),
          anchors(std::move(other.anchors)) {
        other.dir.clear();
    }
    Bench& operator=(Bench&& other) noexcept {
        if (this != &other) {
            cleanup();
            dir = std::move(other.dir);
            data = std::move(other.data);
            anchors = std::move(other.anchors);
            other.dir.clear();
        }
        return *this;
    }
    ~Bench() { cleanup(); }

  private:
    void cleanup() {
        if (dir.empty()) return;
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
};

inline Bench make_bench(int categories, int per_class, int test_per_class, size_t stored_points,
                        int dim, uint64_t seed, float image_noise = 0.2f,
                        float prompt_jitter = 0.3f, const char* tag = "bench") {
    Bench b;
    b.dir = std::filesystem::temp_directory_path() /
            (std::string("ulip_fixture_") + tag + "_" + std::to_string(seed));
    std::filesystem::remove_all(b.dir);
    std::filesystem::create_directories(b.dir / "clouds");

    b.data.root = b.dir;
    for (int c = 0; c < categories; ++c) {
        auto cat = static_cast<ulip::ShapeCategory>(c);
        std::string name(ulip::shape_category_name(cat));
        b.data.categories.push_back(name);
        int total = per_class + test_per_class;
        for (int i = 0; i < total; ++i) {
            ulip::Rng rng = ulip::derived_rng(seed, "gen-shape", static_cast<uint64_t>(c),
                                             static_cast<uint64_t>(i));
            ulip::PointCloud pc = ulip::gen_shape(cat, stored_points, 0.02f, rng);
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%03d", name.c_str(), i);
            std::string rel = std::string("clouds/") + id + ".upc";
            ulip::save_pointcloud(b.dir / rel, pc);
            b.data.records.push_back({id, rel, c, {name}, i < per_class ? "train" : "test"});
        }
    }

    ulip::OracleAnchorConfig cfg;
    cfg.dim = dim;
    cfg.seed = seed + 1;
    cfg.image_noise = image_noise;
    cfg.prompt_jitter = prompt_jitter;
    b.anchors = ulip::oracle_anchor_gen(b.data.categories, cfg);
    return b;
}

} // namespace fixture
