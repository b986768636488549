#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ulip/pointcloud.hpp"

namespace ulip {

struct DatasetRecord {
    std::string id;
    std::string pc_path; // relative to the manifest directory
    int label = -1;
    std::vector<std::string> words;
    std::string split; // "train" | "test"
};

// Dataset manifest: JSON object {"records": [...], "categories": [...]} (a
// bare record array is also accepted; category names then come from each
// label's first record).
struct Dataset {
    std::filesystem::path root;
    std::vector<DatasetRecord> records;
    std::vector<std::string> categories; // index == label id

    std::vector<size_t> split_indices(std::string_view split) const;
    PointCloud load_cloud(const DatasetRecord& rec) const;
};

Dataset load_manifest(const std::filesystem::path& path);
void save_manifest(const Dataset& data, const std::filesystem::path& path);

} // namespace ulip
