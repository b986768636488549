#include "ulip/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "ulip/errors.hpp"

namespace ulip {

std::vector<size_t> Dataset::split_indices(std::string_view split) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].split == split) out.push_back(i);
    return out;
}

PointCloud Dataset::load_cloud(const DatasetRecord& rec) const {
    PointCloud pc = load_pointcloud(root / rec.pc_path);
    pc.label = rec.label;
    return pc;
}

Dataset load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_manifest: cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw BadManifest(std::string("load_manifest: bad json: ") + e.what());
    }

    Dataset data;
    data.root = path.parent_path();

    const nlohmann::json* records = nullptr;
    if (j.is_array()) {
        records = &j;
    } else if (j.is_object() && j.contains("records")) {
        records = &j.at("records");
        if (j.contains("categories"))
            data.categories = j.at("categories").get<std::vector<std::string>>();
    } else {
        throw BadManifest("load_manifest: expected a record array or {records: [...]}");
    }

    for (const auto& r : *records) {
        DatasetRecord rec;
        try {
            rec.id = r.at("id").get<std::string>();
            rec.pc_path = r.at("pc_path").get<std::string>();
            rec.label = r.at("label").get<int>();
            rec.words = r.at("words").get<std::vector<std::string>>();
            rec.split = r.at("split").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BadManifest(std::string("load_manifest: bad record: ") + e.what());
        }
        if (rec.label < 0) throw BadManifest("load_manifest: negative label for " + rec.id);
        if (rec.split != "train" && rec.split != "test")
            throw BadManifest("load_manifest: split must be train|test for " + rec.id);
        data.records.push_back(std::move(rec));
    }

    if (data.categories.empty()) {
        int max_label = -1;
        for (const DatasetRecord& r : data.records) max_label = std::max(max_label, r.label);
        data.categories.assign(static_cast<size_t>(max_label + 1), "");
        for (const DatasetRecord& r : data.records) {
            std::string& name = data.categories[static_cast<size_t>(r.label)];
            if (name.empty() && !r.words.empty()) name = r.words.front();
        }
    }
    return data;
}

void save_manifest(const Dataset& data, const std::filesystem::path& path) {
    nlohmann::json j;
    j["categories"] = data.categories;
    nlohmann::json records = nlohmann::json::array();
    for (const DatasetRecord& r : data.records) {
        records.push_back({{"id", r.id},
                           {"pc_path", r.pc_path},
                           {"label", r.label},
                           {"words", r.words},
                           {"split", r.split}});
    }
    j["records"] = records;
    std::ofstream f(path);
    if (!f) throw IoError("save_manifest: cannot open " + path.string());
    f << j.dump(2) << "\n";
}

} // namespace ulip
