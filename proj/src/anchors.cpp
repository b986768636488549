#include "ulip/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ulip {

namespace {

constexpr char kMagic[8] = {'U', 'L', 'I', 'P', 'E', 'M', 'B', '1'};

double norm_of(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += double(x) * double(x);
    return std::sqrt(s);
}

std::vector<float> normalized(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    double n = std::sqrt(s);
    if (n <= 1e-12) throw DegenerateEmbedding("normalize: vector norm below 1e-12");
    std::vector<float> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
}

} // namespace

// ---- prompt set ----

void PromptSet::validate() const {
    if (templates_.size() != kPromptCount)
        throw Error("prompt set: expected exactly 64 templates, got " +
                    std::to_string(templates_.size()));
    for (const std::string& t : templates_) {
        size_t first = t.find("[WORD]");
        if (first == std::string::npos || t.find("[WORD]", first + 1) != std::string::npos)
            throw Error("prompt set: template must contain [WORD] exactly once: " + t);
    }
}

const PromptSet& PromptSet::builtin() {
    static const PromptSet instance = [] {
        PromptSet p;
        p.templates_ = {
            "a picture of [WORD].",
            "a photo of a [WORD].",
            "a photo of the [WORD].",
            "a photo of one [WORD].",
            "a photo of many [WORD].",
            "a photo of a large [WORD].",
            "a photo of a small [WORD].",
            "a photo of a clean [WORD].",
            "a photo of a dirty [WORD].",
            "a photo of a nice [WORD].",
            "a photo of a weird [WORD].",
            "a photo of the large [WORD].",
            "a photo of the small [WORD].",
            "a photo of the clean [WORD].",
            "a photo of the dirty [WORD].",
            "a photo of the nice [WORD].",
            "a photo of the weird [WORD].",
            "a photo of my [WORD].",
            "a photo of the hard to see [WORD].",
            "a photo of a hard to see [WORD].",
            "a bad photo of a [WORD].",
            "a bad photo of the [WORD].",
            "a good photo of a [WORD].",
            "a good photo of the [WORD].",
            "a bright photo of a [WORD].",
            "a bright photo of the [WORD].",
            "a dark photo of a [WORD].",
            "a dark photo of the [WORD].",
            "a close-up photo of a [WORD].",
            "a close-up photo of the [WORD].",
            "a cropped photo of a [WORD].",
            "a cropped photo of the [WORD].",
            "a blurry photo of a [WORD].",
            "a blurry photo of the [WORD].",
            "a pixelated photo of a [WORD].",
            "a pixelated photo of the [WORD].",
            "a low resolution photo of a [WORD].",
            "a low resolution photo of the [WORD].",
            "a jpeg corrupted photo of a [WORD].",
            "a jpeg corrupted photo of the [WORD].",
            "a black and white photo of a [WORD].",
            "a black and white photo of the [WORD].",
            "a rendering of a [WORD].",
            "a rendering of the [WORD].",
            "a rendition of a [WORD].",
            "a rendition of the [WORD].",
            "a sculpture of a [WORD].",
            "a sculpture of the [WORD].",
            "a sketch of a [WORD].",
            "a sketch of the [WORD].",
            "a drawing of a [WORD].",
            "a drawing of the [WORD].",
            "a painting of a [WORD].",
            "a painting of the [WORD].",
            "a doodle of a [WORD].",
            "a doodle of the [WORD].",
            "a cartoon [WORD].",
            "the origami [WORD].",
            "a plastic [WORD].",
            "the toy [WORD].",
            "a plushie [WORD].",
            "art of a [WORD].",
            "a [WORD] in a video game.",
            "a point cloud model of [WORD].",
        };
        p.validate();
        return p;
    }();
    return instance;
}

PromptSet PromptSet::from_templates(std::vector<std::string> templates) {
    PromptSet p;
    p.templates_ = std::move(templates);
    p.validate();
    return p;
}

PromptSet PromptSet::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("prompt set: cannot open " + path.string());
    std::vector<std::string> templates;
    std::string line;
    while (std::getline(f, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) templates.push_back(line);
    }
    return from_templates(std::move(templates));
}

std::vector<std::string> PromptSet::instantiate(const std::string& word) const {
    if (word.empty()) throw EmptyWord("instantiate: word is empty");
    std::vector<std::string> out;
    out.reserve(templates_.size());
    for (const std::string& t : templates_) {
        std::string s = t;
        s.replace(s.find("[WORD]"), 6, word);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> build_prompt_set(const std::string& word) {
    return PromptSet::builtin().instantiate(word);
}

// ---- anchor table ----

AnchorTable::AnchorTable(int dim, std::string provenance)
    : dim_(dim), provenance_(std::move(provenance)) {
    if (dim <= 0) throw DimMismatch("anchor table: dim must be positive");
}

void AnchorTable::add_row(AnchorRowMeta meta, std::span<const float> values) {
    if (static_cast<int>(values.size()) != dim_)
        throw DimMismatch("anchor table: row width does not match table dim");
    double n = norm_of(values);
    if (std::abs(n - 1.0) > 1e-5)
        throw Error("anchor table: row '" + meta.id + "' is not unit-norm");
    if (index_.count(meta.id)) throw Error("anchor table: duplicate row id " + meta.id);
    index_[meta.id] = static_cast<int>(meta_.size());
    meta_.push_back(std::move(meta));
    values_.insert(values_.end(), values.begin(), values.end());
}

std::span<const float> AnchorTable::row(int index) const {
    return std::span<const float>(values_.data() + static_cast<size_t>(index) * dim_,
                                  static_cast<size_t>(dim_));
}

std::optional<int> AnchorTable::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const float> AnchorTable::row(const std::string& id) const {
    auto idx = find(id);
    if (!idx) throw Error("anchor table: no row with id " + id);
    return row(*idx);
}

namespace {

nlohmann::json meta_to_json(const AnchorRowMeta& m) {
    nlohmann::json j;
    j["id"] = m.id;
    j["kind"] = m.kind;
    if (m.word) j["word"] = *m.word;
    if (m.template_index) j["template_index"] = *m.template_index;
    if (m.object_id) j["object_id"] = *m.object_id;
    if (m.view_index) j["view_index"] = *m.view_index;
    return j;
}

AnchorRowMeta meta_from_json(const nlohmann::json& j) {
    AnchorRowMeta m;
    m.id = j.at("id").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    if (j.contains("word")) m.word = j.at("word").get<std::string>();
    if (j.contains("template_index")) m.template_index = j.at("template_index").get<int>();
    if (j.contains("object_id")) m.object_id = j.at("object_id").get<std::string>();
    if (j.contains("view_index")) m.view_index = j.at("view_index").get<int>();
    return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    std::filesystem::path p = path;
    p += ".json";
    return p;
}

} // namespace

void save_table(const AnchorTable& table, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_table: cannot open " + path.string());
    f.write(kMagic, sizeof(kMagic));
    uint32_t rows = static_cast<uint32_t>(table.row_count());
    uint32_t dim = static_cast<uint32_t>(table.dim());
    f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    f.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    std::span<const float> values = table.raw_values();
    f.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!f) throw IoError("save_table: write failed for " + path.string());

    nlohmann::json manifest;
    manifest["provenance"] = table.provenance();
    nlohmann::json rows_json = nlohmann::json::array();
    for (int i = 0; i < table.row_count(); ++i) rows_json.push_back(meta_to_json(table.meta(i)));
    manifest["rows"] = rows_json;
    std::ofstream sf(sidecar_path(path));
    if (!sf) throw IoError("save_table: cannot open sidecar for " + path.string());
    sf << manifest.dump(2) << "\n";
}

AnchorTable load_table(const std::filesystem::path& path, int expected_dim) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_table: cannot open " + path.string());
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw BadMagic("load_table: bad magic in " + path.string());
    uint32_t rows = 0, dim = 0;
    if (!f.read(reinterpret_cast<char*>(&rows), sizeof(rows)) ||
        !f.read(reinterpret_cast<char*>(&dim), sizeof(dim)))
        throw TruncatedFile("load_table: truncated header in " + path.string());
    if (dim == 0) throw DimMismatch("load_table: zero dim in " + path.string());
    if (expected_dim >= 0 && static_cast<int>(dim) != expected_dim)
        throw DimMismatch("load_table: table dim " + std::to_string(dim) + " does not match expected " +
                          std::to_string(expected_dim));

    std::vector<float> values(static_cast<size_t>(rows) * dim);
    if (!f.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float))))
        throw TruncatedFile("load_table: truncated payload in " + path.string());

    std::ifstream sf(sidecar_path(path));
    if (!sf) throw IoError("load_table: missing sidecar manifest for " + path.string());
    nlohmann::json manifest;
    try {
        sf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw BadHeader(std::string("load_table: bad sidecar json: ") + e.what());
    }
    const auto& rows_json = manifest.at("rows");
    if (rows_json.size() != rows)
        throw BadHeader("load_table: sidecar row count does not match table");

    AnchorTable table(static_cast<int>(dim),
                      manifest.value("provenance", std::string("ingested")));
    for (uint32_t i = 0; i < rows; ++i) {
        std::span<float> row(values.data() + static_cast<size_t>(i) * dim, dim);
        double n = norm_of(row);
        if (!std::isfinite(n) || n <= 1e-12)
            throw DegenerateEmbedding("load_table: degenerate row " + std::to_string(i));
        if (std::abs(n - 1.0) > 1e-5) {
            for (float& v : row) v = static_cast<float>(double(v) / n);
            table.renormalized_ += 1;
        }
        table.add_row(meta_from_json(rows_json[i]), row);
    }
    return table;
}

// ---- pooling / candidates / stand-ins ----

std::vector<float> text_anchor(const std::vector<std::vector<float>>& per_prompt_embeddings) {
    if (per_prompt_embeddings.empty())
        throw Error("text_anchor: empty embedding list");
    size_t dim = per_prompt_embeddings.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& row : per_prompt_embeddings) {
        if (row.size() != dim) throw DimMismatch("text_anchor: mixed embedding widths");
        double n = norm_of(row);
        if (std::abs(n - 1.0) > 1e-3)
            throw Error("text_anchor: input row is not unit-norm");
        for (size_t i = 0; i < dim; ++i) mean[i] += row[i];
    }
    double inv = 1.0 / static_cast<double>(per_prompt_embeddings.size());
    for (double& v : mean) v *= inv;
    return normalized(mean);
}

std::vector<float> word_anchor(const AnchorTable& text_table, const std::string& word) {
    std::vector<std::pair<int, int>> found; // (template_index, row)
    for (int i = 0; i < text_table.row_count(); ++i) {
        const AnchorRowMeta& m = text_table.meta(i);
        if (m.kind == "text" && m.word && *m.word == word)
            found.push_back({m.template_index.value_or(0), i});
    }
    if (found.empty())
        throw MissingModality("word_anchor: no text rows for word '" + word + "'");
    std::sort(found.begin(), found.end());
    std::vector<std::vector<float>> rows;
    rows.reserve(found.size());
    for (auto [t, i] : found) {
        std::span<const float> r = text_table.row(i);
        rows.emplace_back(r.begin(), r.end());
    }
    return text_anchor(rows);
}

ViewCandidateSet view_candidates(const AnchorTable& image_table, const std::string& object_id,
                                 const std::vector<std::string>& words) {
    std::vector<std::pair<int, int>> found;
    for (int i = 0; i < image_table.row_count(); ++i) {
        const AnchorRowMeta& m = image_table.meta(i);
        if (m.kind == "image" && m.object_id && *m.object_id == object_id)
            found.push_back({m.view_index.value_or(0), i});
    }
    if (found.empty()) {
        for (size_t wi = 0; wi < words.size() && found.empty(); ++wi) {
            for (int i = 0; i < image_table.row_count(); ++i) {
                const AnchorRowMeta& m = image_table.meta(i);
                if (m.kind == "image" && !m.object_id && m.word && *m.word == words[wi])
                    found.push_back({m.view_index.value_or(0), i});
            }
        }
    }
    ViewCandidateSet out;
    out.object_id = object_id;
    std::sort(found.begin(), found.end());
    for (auto [v, i] : found) out.candidate_ids.push_back(image_table.meta(i).id);
    if (out.candidate_ids.size() == 30) {
        // depth-only rendering: one bank of 30, duplicated into both slots
        std::vector<std::string> doubled = out.candidate_ids;
        doubled.insert(doubled.end(), out.candidate_ids.begin(), out.candidate_ids.end());
        out.candidate_ids = std::move(doubled);
    }
    out.partial = out.candidate_ids.size() != 60;
    return out;
}

const std::string& select_view(const ViewCandidateSet& candidates, Rng& rng) {
    if (candidates.candidate_ids.empty())
        throw NoCandidates("select_view: candidate list is empty for object " +
                           candidates.object_id);
    size_t idx = static_cast<size_t>(rng.below(candidates.candidate_ids.size()));
    return candidates.candidate_ids[idx];
}

std::vector<float> stand_in_text_embed(const std::string& text, int dim, uint64_t seed) {
    if (text.empty()) throw EmptyWord("stand_in_text_embed: empty text");
    if (dim < 1) throw DimMismatch("stand_in_text_embed: dim must be >= 1");
    Rng rng = derived_rng(seed, "standin-text", stream_id(text));
    std::vector<double> v(static_cast<size_t>(dim));
    for (double& x : v) x = rng.normal();
    return normalized(v);
}

OracleAnchors oracle_anchor_gen(const std::vector<std::string>& categories,
                                const OracleAnchorConfig& cfg) {
    if (categories.size() < 2) throw Error("oracle_anchor_gen: need at least 2 categories");
    if (cfg.dim < 2) throw DimMismatch("oracle_anchor_gen: dim must be >= 2");

    OracleAnchors out{AnchorTable(cfg.dim, "oracle"), AnchorTable(cfg.dim, "oracle"), {}};

    std::vector<std::vector<float>> dirs;
    for (size_t k = 0; k < categories.size(); ++k) {
        Rng rng = derived_rng(cfg.seed, "oracle-dir", k);
        std::vector<double> d(static_cast<size_t>(cfg.dim));
        for (double& x : d) x = rng.normal();
        dirs.push_back(normalized(d));
        out.directions.insert(out.directions.end(), dirs.back().begin(), dirs.back().end());
    }

    auto jittered = [&](const std::vector<float>& dir, float sigma, Rng& rng) {
        if (sigma <= 0.0f) return dir; // bit-exact copy of the direction
        std::vector<double> v(dir.size());
        for (size_t i = 0; i < dir.size(); ++i) v[i] = double(dir[i]) + rng.normal(0.0, sigma);
        return normalized(v);
    };

    for (size_t k = 0; k < categories.size(); ++k) {
        const std::string& name = categories[k];
        for (int t = 0; t < kPromptCount; ++t) {
            Rng rng = derived_rng(cfg.seed, "oracle-text", k, static_cast<uint64_t>(t));
            std::vector<float> row = jittered(dirs[k], cfg.prompt_jitter, rng);
            AnchorRowMeta m;
            m.id = "text:" + name + ":" + std::to_string(t);
            m.kind = "text";
            m.word = name;
            m.template_index = t;
            out.text.add_row(std::move(m), row);
        }
        for (int v = 0; v < cfg.views_per_category; ++v) {
            Rng rng = derived_rng(cfg.seed, "oracle-image", k, static_cast<uint64_t>(v));
            std::vector<float> row = jittered(dirs[k], cfg.image_noise, rng);
            AnchorRowMeta m;
            m.id = "img:" + name + ":" + std::to_string(v);
            m.kind = "image";
            m.word = name;
            m.view_index = v;
            out.image.add_row(std::move(m), row);
        }
    }
    return out;
}

} // namespace ulip
