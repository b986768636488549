#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ulip/anchors.hpp"
#include "ulip/contrastive.hpp"
#include "ulip/dataset.hpp"
#include "ulip/encoder.hpp"

namespace ulip {

// Per-category text anchors: pooled prompt-ensemble embeddings, one
// unit-norm row per candidate category.
struct CategoryAnchors {
    std::vector<std::string> names;
    int dim = 0;
    std::vector<float> rows; // [K, dim]

    static CategoryAnchors build(const AnchorTable& text_table,
                                 const std::vector<std::string>& names);

    std::span<const float> row(size_t k) const {
        return std::span<const float>(rows.data() + k * static_cast<size_t>(dim),
                                      static_cast<size_t>(dim));
    }
};

struct RankedCategory {
    int index = 0;
    float score = 0.0f;
};

// Categories ordered by descending cosine similarity (smallest distance
// first on unit vectors); ties resolve to the lowest category index.
std::vector<RankedCategory> zeroshot_classify(std::span<const float> embedding,
                                              const CategoryAnchors& anchors);

struct EvalReport {
    double overall_accuracy = 0.0;   // percent
    double class_mean_accuracy = 0.0; // percent
    std::map<int, double> topk_accuracy;
    std::vector<std::string> class_names;
    std::vector<int64_t> class_total;
    std::vector<int64_t> class_correct; // top-1
    nlohmann::json config_echo = nlohmann::json::object();

    nlohmann::json to_json() const;
};

// ranked_predictions[i] is a ranked candidate list for sample i (best first).
EvalReport compute_metrics(const std::vector<std::vector<int>>& ranked_predictions,
                           const std::vector<int>& labels, const std::vector<int>& k_list);

struct CategorySetFilter {
    std::string name;
    std::vector<std::string> retained;

    bool keeps(const std::string& category) const;
};

// "ALL" is the identity; "Medium" and "Hard" are the shipped ModelNet40
// category subsets (22 and 17 names, Hard within Medium within ALL).
CategorySetFilter filter_category_set(const std::vector<std::string>& all_names,
                                      const std::string& set_name);

const std::vector<std::string>& modelnet40_all();
const std::vector<std::string>& modelnet40_medium();
const std::vector<std::string>& modelnet40_hard();

struct EvalConfig {
    int n_points = 1024;
    uint64_t seed = 0;
    std::vector<int> top_k{1, 5};
};

// Encodes each test cloud (resampled, unit-normalized, no augmentation) and
// matches it against the category anchors.
EvalReport zeroshot_eval(const Encoder& encoder, const Dataset& data, std::string_view split,
                         const CategoryAnchors& anchors, const CategorySetFilter& filter,
                         const EvalConfig& cfg);

struct FinetuneConfig {
    int epochs = 60;
    int batch_size = 32;
    float learning_rate = 1e-3f;
    AdamWConfig optimizer;
    int n_points = 1024;
    uint64_t seed = 0;
    bool freeze_encoder = false;
    bool augment_enabled = true;
    AugmentConfig augment;
    std::vector<int> top_k{1, 5};
};

struct FinetuneResult {
    Encoder encoder;
    ClassifierHead head;
    EvalReport report; // test-split metrics
};

// Cross-entropy training of encoder (unfrozen by default) plus a linear
// head; train_subset restricts the train split to those record indices.
FinetuneResult finetune(const Encoder& init_encoder, const Dataset& data,
                        const FinetuneConfig& cfg,
                        const std::vector<size_t>* train_subset = nullptr);

struct RetrievalHit {
    std::string id;
    float score = 0.0f;
};

using Gallery = std::vector<std::pair<std::string, std::vector<float>>>;

// Top-k gallery entries by descending cosine similarity; ties resolve to
// the lowest object id; k is capped at the gallery size.
std::vector<RetrievalHit> retrieve(std::span<const float> query, const Gallery& gallery,
                                   size_t k);

struct AblationRow {
    std::string modalities; // "P+T" | "P+I" | "P+I+T"
    double top1 = 0.0;
    double top5 = 0.0;
};

struct AblationConfig {
    TrainConfig train;
    EvalConfig eval;
    std::vector<uint64_t> seeds{0, 1, 2};
};

// Pre-trains three times per seed with (beta,theta) in {(0,1),(1,0),(1,1)}
// and reports seed-averaged zero-shot accuracy per row.
std::vector<AblationRow> modality_ablation(const Dataset& data, const AnchorTable& text_table,
                                           const AnchorTable& image_table,
                                           const AblationConfig& cfg);

struct SweepRow {
    double fraction = 0.0;
    uint64_t seed = 0;
    std::string init; // "pretrained" | "random"
    double overall_accuracy = 0.0;
};

// Per (fraction, seed): stratified train subset, fine-tuned once from the
// pretrained encoder and once from random init.
std::vector<SweepRow> data_efficiency_sweep(const Encoder& pretrained, const Dataset& data,
                                            const std::vector<double>& fractions,
                                            const std::vector<uint64_t>& seeds,
                                            const FinetuneConfig& cfg);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

} // namespace ulip
