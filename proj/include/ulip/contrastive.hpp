#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ulip/anchors.hpp"
#include "ulip/dataset.hpp"
#include "ulip/encoder.hpp"
#include "ulip/tensor.hpp"

namespace ulip {

// Learnable temperature stored as s = log(1/tau); 1/tau is clamped to
// clamp_max after every optimizer step.
class Temperature {
  public:
    Temperature() : Temperature(14.285f, 100.0f) {}
    static Temperature init(float inv_tau = 14.285f, float clamp_max = 100.0f);

    ag::TensorPtr inv_tau_node(ag::Graph& g) const;
    float inv_tau_value() const;
    float s_value() const { return s_->data()[0]; }
    void set_s(float s) { s_->data_mut()[0] = s; }

    const ag::TensorPtr& s() const { return s_; }
    float clamp_max() const { return clamp_max_; }

    // enforce 1/tau <= clamp_max (call after each optimizer step)
    void clamp();

  private:
    Temperature(float inv_tau, float clamp_max);
    ag::TensorPtr s_;
    float clamp_max_;
};

struct LossCoefficients {
    float alpha = 0.0f; // image-text (anchors only; 0 by default)
    float beta = 1.0f;  // image-pointcloud
    float theta = 1.0f; // pointcloud-text
};

// Symmetric InfoNCE over a precomputed logits matrix: for each diagonal
// positive, half the row-wise and half the column-wise cross-entropy,
// summed over the batch (or averaged with mean_reduction).
ag::TensorPtr symmetric_infonce(ag::Graph& g, const ag::TensorPtr& logits,
                                bool mean_reduction = false);

// InfoNCE between two unit-row embedding sets with diagonal positives;
// logits are (ha . hb^T) * exp(s).
ag::TensorPtr contrastive_loss(ag::Graph& g, const ag::TensorPtr& ha, const ag::TensorPtr& hb,
                               const Temperature& temp, bool mean_reduction = false);

struct LossParts {
    float l_is = 0.0f;
    float l_ip = 0.0f;
    float l_ps = 0.0f;
    float final = 0.0f;
};

// alpha*L(I,S) + beta*L(I,P) + theta*L(P,S); zero-coefficient terms are
// still evaluated for the trace but contribute no gradient.
ag::TensorPtr final_loss(ag::Graph& g, const ag::TensorPtr& h_image, const ag::TensorPtr& h_text,
                         const ag::TensorPtr& h_point, const LossCoefficients& coefs,
                         const Temperature& temp, bool mean_reduction = false,
                         LossParts* parts = nullptr);

struct AdamWConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;
};

// AdamW with decoupled multiplicative weight decay, applied only to slots
// flagged decay=true (weights; never biases or the temperature).
class AdamW {
  public:
    AdamW(std::vector<ParamSlot> params, const AdamWConfig& cfg);

    void step();
    void step_with_lr(float lr);
    void zero_grad();
    int64_t step_count() const { return t_; }

  private:
    std::vector<ParamSlot> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    int64_t t_ = 0;
};

struct TrainConfig {
    int batch_size = 64;
    float learning_rate = 1e-3f;
    int epochs = 250;
    AdamWConfig optimizer; // lr field is overridden by learning_rate
    int n_points = 1024;
    uint64_t seed = 0;
    LossCoefficients coefs;
    bool mean_reduction = false;
    bool cosine_lr = false;
    AugmentConfig augment;
    EncoderConfig encoder;
    float init_inv_tau = 14.285f;
    float temperature_clamp = 100.0f;
};

struct TraceRow {
    int64_t iteration = 0;
    int epoch = 0;
    float l_ip = 0.0f;
    float l_ps = 0.0f;
    float l_is = 0.0f;
    float l_final = 0.0f;
    float inv_temperature = 0.0f;
};

struct PretrainResult {
    Encoder encoder;
    Temperature temperature;
    std::vector<TraceRow> trace;
    int64_t skipped_records = 0; // missing modality, excluded with a warning
    int64_t iterations = 0;
};

// Aligns the point encoder to the frozen anchor tables. Anchor contents are
// never written to; per-record word and view choices, resampling,
// augmentation and batch order all derive from cfg.seed.
PretrainResult pretrain(const Dataset& data, const AnchorTable& text_table,
                        const AnchorTable& image_table, const TrainConfig& cfg);

// columns: iteration,epoch,L_IP,L_PS,L_IS,L_final,inv_temperature
void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace);

} // namespace ulip
