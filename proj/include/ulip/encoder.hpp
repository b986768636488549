#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ulip/pointcloud.hpp"
#include "ulip/tensor.hpp"

namespace ulip {

struct EncoderConfig {
    // hidden widths of the shared per-point MLP (input is xyz)
    std::vector<int> widths{64, 128, 256};
    int embed_dim = 512;

    void validate() const;
};

// Trainable slot handed to the optimizer; weight matrices get decoupled
// weight decay, biases and the temperature do not.
struct ParamSlot {
    ag::TensorPtr tensor;
    bool decay = false;
};

// Permutation-invariant point encoder: shared MLP with ReLU, max-pool over
// the point axis, linear projection into the shared embedding space, and
// row-wise L2 normalization. No batch norm, so a batch of one is exactly
// reproducible.
class Encoder {
  public:
    Encoder() = default;

    static Encoder init(uint64_t seed, const EncoderConfig& cfg);

    // Deep copy with fresh parameter tensors (copies share nothing).
    Encoder clone() const;

    const EncoderConfig& config() const { return cfg_; }

    // [N, D] unit-norm embeddings; all clouds must share one point count.
    ag::TensorPtr encode_batch(ag::Graph& g, std::span<const PointCloud> clouds) const;

    // Single-cloud convenience without gradient tracking.
    std::vector<float> encode(const PointCloud& pc) const;

    std::vector<ParamSlot> parameters() const;

    // raw access for checkpointing
    const std::vector<ag::TensorPtr>& mlp_weights() const { return w_; }
    const std::vector<ag::TensorPtr>& mlp_biases() const { return b_; }
    const ag::TensorPtr& proj_weight() const { return proj_w_; }
    const ag::TensorPtr& proj_bias() const { return proj_b_; }

  private:
    EncoderConfig cfg_;
    std::vector<ag::TensorPtr> w_; // [in, out] per layer
    std::vector<ag::TensorPtr> b_; // [out] per layer
    ag::TensorPtr proj_w_;         // [last_width, embed_dim]
    ag::TensorPtr proj_b_;         // [embed_dim]
};

// Linear classification head for fine-tuning: logits = e * W + b.
class ClassifierHead {
  public:
    ClassifierHead() = default;
    static ClassifierHead init(uint64_t seed, int embed_dim, int num_classes);
    static ClassifierHead from_values(std::vector<float> weight, std::vector<float> bias,
                                      int embed_dim, int num_classes);

    int num_classes() const { return num_classes_; }
    int embed_dim() const { return embed_dim_; }

    ag::TensorPtr classify(ag::Graph& g, const ag::TensorPtr& embeddings) const;
    std::vector<float> classify(std::span<const float> embedding) const;

    std::vector<ParamSlot> parameters() const;

    const ag::TensorPtr& weight() const { return w_; }
    const ag::TensorPtr& bias() const { return b_; }

  private:
    int embed_dim_ = 0;
    int num_classes_ = 0;
    ag::TensorPtr w_; // [embed_dim, num_classes]
    ag::TensorPtr b_; // [num_classes]
};

// Checkpoint file: magic "ULIPCKPT", u32 version, u32 header byte count,
// JSON header (widths, embed dim, temperature state, block table, metadata),
// then the raw little-endian float32 blocks in header order. Save/load is
// byte-exact round trip.
struct Checkpoint {
    Encoder encoder;
    std::optional<ClassifierHead> head;
    // log(1/tau), stored bit-exact in the header
    std::optional<float> temperature_s;
    nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace ulip
