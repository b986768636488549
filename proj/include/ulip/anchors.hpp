#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ulip/errors.hpp"
#include "ulip/rng.hpp"

namespace ulip {

inline constexpr int kPromptCount = 64;

// The 64 sentence templates used for prompt ensembling (63 generic ones
// plus the dedicated point-cloud template). Each template contains the
// placeholder "[WORD]" exactly once.
class PromptSet {
  public:
    static const PromptSet& builtin();
    static PromptSet from_templates(std::vector<std::string> templates);
    static PromptSet load(const std::filesystem::path& path);

    const std::vector<std::string>& templates() const { return templates_; }

    // All 64 templates instantiated with the word, in stable order.
    std::vector<std::string> instantiate(const std::string& word) const;

  private:
    std::vector<std::string> templates_;
    void validate() const;
};

std::vector<std::string> build_prompt_set(const std::string& word);

struct AnchorRowMeta {
    std::string id;
    std::string kind; // "text" | "image"
    std::optional<std::string> word;
    std::optional<int> template_index;
    std::optional<std::string> object_id;
    std::optional<int> view_index;
};

// Frozen table of unit-norm embedding rows keyed by id. Binary layout:
// magic "ULIPEMB1", u32 row count, u32 dim, then rows of dim little-endian
// float32. Row metadata lives in a sidecar JSON manifest at <path>.json.
class AnchorTable {
  public:
    AnchorTable() = default;
    AnchorTable(int dim, std::string provenance);

    int dim() const { return dim_; }
    int row_count() const { return static_cast<int>(meta_.size()); }
    const std::string& provenance() const { return provenance_; }
    // rows renormalized while loading (non-unit on disk)
    int renormalized_on_load() const { return renormalized_; }

    // values must already be unit-norm (within 1e-5)
    void add_row(AnchorRowMeta meta, std::span<const float> values);

    std::span<const float> row(int index) const;
    const AnchorRowMeta& meta(int index) const { return meta_[static_cast<size_t>(index)]; }
    std::optional<int> find(const std::string& id) const;
    std::span<const float> row(const std::string& id) const;

    std::span<const float> raw_values() const { return values_; }

  private:
    friend AnchorTable load_table(const std::filesystem::path&, int);
    int dim_ = 0;
    std::string provenance_ = "ingested";
    std::vector<AnchorRowMeta> meta_;
    std::vector<float> values_;
    std::unordered_map<std::string, int> index_;
    int renormalized_ = 0;
};

void save_table(const AnchorTable& table, const std::filesystem::path& path);
// expected_dim < 0 accepts whatever the file declares.
AnchorTable load_table(const std::filesystem::path& path, int expected_dim = -1);

// Average pooling over per-prompt embeddings followed by renormalization.
// Every input row must be unit-norm and of equal width.
std::vector<float> text_anchor(const std::vector<std::vector<float>>& per_prompt_embeddings);

// Gathers the word's per-template rows from a text table (ordered by
// template index) and pools them.
std::vector<float> word_anchor(const AnchorTable& text_table, const std::string& word);

struct ViewCandidateSet {
    std::string object_id;
    std::vector<std::string> candidate_ids; // 60 when fully populated
    bool partial = false;
};

// Candidates for one object: the table's per-object rows when present,
// otherwise the per-category rows matching one of the object's words.
// 30 depth-only rows are duplicated across both 30-slot banks.
ViewCandidateSet view_candidates(const AnchorTable& image_table, const std::string& object_id,
                                 const std::vector<std::string>& words);

const std::string& select_view(const ViewCandidateSet& candidates, Rng& rng);

// Deterministic surrogate for a frozen text encoder: the string hash seeds
// a Gaussian draw that is then L2-normalized. Equal strings map to equal
// vectors on every platform.
std::vector<float> stand_in_text_embed(const std::string& text, int dim, uint64_t seed);

struct OracleAnchorConfig {
    int dim = 32;
    uint64_t seed = 0;
    float image_noise = 0.2f;   // sigma_I
    float prompt_jitter = 0.3f; // sigma_S
    int views_per_category = 60;
};

struct OracleAnchors {
    AnchorTable text;  // one row per (category, template)
    AnchorTable image; // one row per (category, view)
    // unit category directions, row-major [K, dim]
    std::vector<float> directions;
};

// Pre-aligned synthetic text/image space: every category gets one unit
// direction; text rows jitter it by prompt_jitter, image rows by
// image_noise. With zero noise the rows equal the direction bit-for-bit.
OracleAnchors oracle_anchor_gen(const std::vector<std::string>& categories,
                                const OracleAnchorConfig& cfg);

} // namespace ulip
