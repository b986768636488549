#include "ulip/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

namespace ulip {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require_unit_rows(const ag::TensorPtr& t, const char* side) {
    int64_t rows = t->dim(0), cols = t->dim(1);
    std::span<const float> v = t->data();
    for (int64_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            double x = v[static_cast<size_t>(i * cols + j)];
            sq += x * x;
        }
        if (std::abs(std::sqrt(sq) - 1.0) > 1e-3)
            throw NonUnitRows(std::string("contrastive_loss: ") + side + " row " +
                              std::to_string(i) + " is not unit-norm");
    }
}

} // namespace

Temperature::Temperature(float inv_tau, float clamp_max) : clamp_max_(clamp_max) {
    if (inv_tau <= 0.0f || clamp_max <= 0.0f)
        throw Error("temperature: 1/tau and clamp must be positive");
    s_ = ag::Tensor::scalar(std::log(inv_tau), true);
    clamp();
}

Temperature Temperature::init(float inv_tau, float clamp_max) {
    return Temperature(inv_tau, clamp_max);
}

ag::TensorPtr Temperature::inv_tau_node(ag::Graph& g) const {
    return ag::exp_op(g, s_);
}

float Temperature::inv_tau_value() const {
    return std::exp(s_->data()[0]);
}

void Temperature::clamp() {
    float ceiling = std::log(clamp_max_);
    if (s_->data()[0] > ceiling) s_->data_mut()[0] = ceiling;
}

ag::TensorPtr symmetric_infonce(ag::Graph& g, const ag::TensorPtr& logits, bool mean_reduction) {
    if (logits->rank() != 2 || logits->dim(0) != logits->dim(1))
        throw ShapeMismatch("symmetric_infonce: logits must be square");
    int64_t n = logits->dim(0);

    // per-positive negative log-likelihoods, kept small before the batch
    // sum (summing LSEs and subtracting the trace afterwards would cancel
    // catastrophically in float32 once the loss gets small)
    ag::TensorPtr positives = ag::diag_vector(g, logits);
    ag::TensorPtr row_nll = ag::sub(g, ag::logsumexp_rows(g, logits), positives);
    ag::TensorPtr col_nll =
        ag::sub(g, ag::logsumexp_rows(g, ag::transpose(g, logits)), positives);
    ag::TensorPtr loss =
        ag::scale_const(g, ag::add(g, ag::sum_all(g, row_nll), ag::sum_all(g, col_nll)), 0.5f);
    if (mean_reduction) loss = ag::scale_const(g, loss, 1.0f / static_cast<float>(n));
    return loss;
}

ag::TensorPtr contrastive_loss(ag::Graph& g, const ag::TensorPtr& ha, const ag::TensorPtr& hb,
                               const Temperature& temp, bool mean_reduction) {
    if (ha->rank() != 2 || hb->rank() != 2 || ha->shape() != hb->shape())
        throw ShapeMismatch("contrastive_loss: embedding matrices must share an [N,D] shape");
    if (ha->dim(0) < 1) throw ShapeMismatch("contrastive_loss: empty batch");
    require_unit_rows(ha, "left");
    require_unit_rows(hb, "right");

    ag::TensorPtr sim = ag::matmul_nt(g, ha, hb);
    ag::TensorPtr logits = ag::scale_by(g, sim, temp.inv_tau_node(g));
    return symmetric_infonce(g, logits, mean_reduction);
}

ag::TensorPtr final_loss(ag::Graph& g, const ag::TensorPtr& h_image, const ag::TensorPtr& h_text,
                         const ag::TensorPtr& h_point, const LossCoefficients& coefs,
                         const Temperature& temp, bool mean_reduction, LossParts* parts) {
    if (h_image->shape() != h_text->shape() || h_image->shape() != h_point->shape())
        throw ShapeMismatch("final_loss: modality embeddings must align row-for-row");
    if (coefs.alpha < 0.0f || coefs.beta < 0.0f || coefs.theta < 0.0f)
        throw Error("final_loss: coefficients must be non-negative");

    ag::TensorPtr l_is = contrastive_loss(g, h_image, h_text, temp, mean_reduction);
    ag::TensorPtr l_ip = contrastive_loss(g, h_image, h_point, temp, mean_reduction);
    ag::TensorPtr l_ps = contrastive_loss(g, h_point, h_text, temp, mean_reduction);

    ag::TensorPtr total;
    auto accumulate = [&](const ag::TensorPtr& term, float coef) {
        if (coef == 0.0f) return;
        ag::TensorPtr scaled = coef == 1.0f ? term : ag::scale_const(g, term, coef);
        total = total ? ag::add(g, total, scaled) : scaled;
    };
    accumulate(l_is, coefs.alpha);
    accumulate(l_ip, coefs.beta);
    accumulate(l_ps, coefs.theta);
    if (!total) total = ag::Tensor::scalar(0.0f);

    if (parts) {
        parts->l_is = l_is->item();
        parts->l_ip = l_ip->item();
        parts->l_ps = l_ps->item();
        parts->final = total->item();
    }
    return total;
}

AdamW::AdamW(std::vector<ParamSlot> params, const AdamWConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    for (const ParamSlot& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.tensor->size()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.tensor->size()), 0.0f);
    }
}

void AdamW::step() {
    step_with_lr(cfg_.lr);
}

void AdamW::step_with_lr(float lr) {
    t_ += 1;
    double bias1 = 1.0 - std::pow(double(cfg_.beta1), double(t_));
    double bias2 = 1.0 - std::pow(double(cfg_.beta2), double(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        ag::TensorPtr& p = params_[pi].tensor;
        std::span<float> w = p->data_mut();
        std::vector<float>& m = m_[pi];
        std::vector<float>& v = v_[pi];
        bool has_grad = p->has_grad();
        std::span<const float> grad = has_grad ? p->grad_view() : std::span<const float>();

        double decay = params_[pi].decay ? (1.0 - double(lr) * double(cfg_.weight_decay)) : 1.0;
        for (size_t i = 0; i < w.size(); ++i) {
            double g = has_grad ? double(grad[i]) : 0.0;
            double mi = double(cfg_.beta1) * m[i] + (1.0 - double(cfg_.beta1)) * g;
            double vi = double(cfg_.beta2) * v[i] + (1.0 - double(cfg_.beta2)) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double m_hat = mi / bias1;
            double v_hat = vi / bias2;
            double updated = double(w[i]) * decay - double(lr) * m_hat / (std::sqrt(v_hat) + double(cfg_.eps));
            w[i] = static_cast<float>(updated);
        }
    }
}

void AdamW::zero_grad() {
    for (ParamSlot& p : params_) p.tensor->zero_grad();
}

namespace {

struct TrainItem {
    size_t record_index = 0;
    PointCloud cloud; // stored cloud, loaded once
    std::vector<const std::vector<float>*> word_anchors;
    ViewCandidateSet candidates;
};

} // namespace

PretrainResult pretrain(const Dataset& data, const AnchorTable& text_table,
                        const AnchorTable& image_table, const TrainConfig& cfg) {
    if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.n_points < 1)
        throw Error("pretrain: bad batch size / epochs / point count");
    if (text_table.dim() != cfg.encoder.embed_dim || image_table.dim() != cfg.encoder.embed_dim)
        throw DimMismatch("pretrain: anchor tables and encoder embed dim differ");
    if (cfg.coefs.beta == 0.0f && cfg.coefs.theta == 0.0f && cfg.epochs > 0)
        throw Error("pretrain: beta and theta are both zero; the encoder would never train");

    PretrainResult result;
    result.encoder = Encoder::init(cfg.seed, cfg.encoder);
    result.temperature = Temperature::init(cfg.init_inv_tau, cfg.temperature_clamp);

    // anchors are pooled once per distinct word
    std::unordered_map<std::string, std::vector<float>> word_cache;
    auto pooled_word = [&](const std::string& w) -> const std::vector<float>* {
        auto it = word_cache.find(w);
        if (it != word_cache.end()) return it->second.empty() ? nullptr : &it->second;
        try {
            auto [ins, ok] = word_cache.emplace(w, word_anchor(text_table, w));
            return &ins->second;
        } catch (const MissingModality&) {
            word_cache.emplace(w, std::vector<float>{});
            return nullptr;
        }
    };

    std::vector<TrainItem> items;
    for (size_t idx : data.split_indices("train")) {
        const DatasetRecord& rec = data.records[idx];
        TrainItem item;
        item.record_index = idx;
        bool has_word = false;
        for (const std::string& w : rec.words) {
            const std::vector<float>* anchor = pooled_word(w);
            if (anchor) {
                item.word_anchors.push_back(anchor);
                has_word = true;
            }
        }
        item.candidates = view_candidates(image_table, rec.id, rec.words);
        if (!has_word || item.candidates.candidate_ids.empty()) {
            result.skipped_records += 1;
            continue;
        }
        item.cloud = data.load_cloud(rec);
        items.push_back(std::move(item));
    }
    if (items.empty() && cfg.epochs > 0)
        throw EmptySplit("pretrain: no usable training records");

    std::vector<ParamSlot> slots = result.encoder.parameters();
    slots.push_back({result.temperature.s(), false});
    AdamWConfig opt_cfg = cfg.optimizer;
    opt_cfg.lr = cfg.learning_rate;
    AdamW optimizer(slots, opt_cfg);

    int64_t n = static_cast<int64_t>(items.size());
    int64_t batches_per_epoch = cfg.epochs > 0 ? (n + cfg.batch_size - 1) / cfg.batch_size : 0;
    int64_t total_steps = batches_per_epoch * cfg.epochs;
    int64_t iteration = 0;
    int dim = cfg.encoder.embed_dim;

    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = derived_rng(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int64_t bsz = std::min<int64_t>(cfg.batch_size, n - start);

            std::vector<PointCloud> clouds;
            clouds.reserve(static_cast<size_t>(bsz));
            std::vector<float> text_rows, image_rows;
            text_rows.reserve(static_cast<size_t>(bsz * dim));
            image_rows.reserve(static_cast<size_t>(bsz * dim));

            for (int64_t j = 0; j < bsz; ++j) {
                uint64_t pos = static_cast<uint64_t>(start + j);
                const TrainItem& item = items[order[static_cast<size_t>(start + j)]];

                Rng word_rng = derived_rng(cfg.seed, "word", static_cast<uint64_t>(epoch), pos);
                const std::vector<float>& anchor =
                    *item.word_anchors[static_cast<size_t>(word_rng.below(item.word_anchors.size()))];
                text_rows.insert(text_rows.end(), anchor.begin(), anchor.end());

                Rng view_rng = derived_rng(cfg.seed, "view", static_cast<uint64_t>(epoch), pos);
                const std::string& view_id = select_view(item.candidates, view_rng);
                std::span<const float> image_row = image_table.row(view_id);
                image_rows.insert(image_rows.end(), image_row.begin(), image_row.end());

                Rng sample_rng = derived_rng(cfg.seed, "resample", static_cast<uint64_t>(epoch), pos);
                PointCloud pc = resample(item.cloud, static_cast<size_t>(cfg.n_points), sample_rng);
                pc = normalize_unit_sphere(pc);
                Rng aug_rng = derived_rng(cfg.seed, "augment", static_cast<uint64_t>(epoch), pos);
                clouds.push_back(augment(pc, cfg.augment, aug_rng));
            }

            ag::TensorPtr h_text = ag::Tensor::make({bsz, dim}, std::move(text_rows));
            ag::TensorPtr h_image = ag::Tensor::make({bsz, dim}, std::move(image_rows));

            ag::Graph graph;
            LossParts parts;
            float inv_tau = 0.0f;
            try {
                ag::TensorPtr h_point = result.encoder.encode_batch(graph, clouds);
                ag::TensorPtr loss = final_loss(graph, h_image, h_text, h_point, cfg.coefs,
                                                result.temperature, cfg.mean_reduction, &parts);
                if (!std::isfinite(parts.final))
                    throw NonFiniteValue("loss is not finite");
                graph.backward(loss);
            } catch (const NonFiniteValue& e) {
                throw DivergedLoss("pretrain: diverged at iteration " + std::to_string(iteration) +
                                   " (epoch " + std::to_string(epoch) + "): " + e.what());
            }

            if (cfg.cosine_lr && total_steps > 1) {
                double t = static_cast<double>(iteration) / static_cast<double>(total_steps);
                optimizer.step_with_lr(
                    static_cast<float>(cfg.learning_rate * 0.5 * (1.0 + std::cos(kPi * t))));
            } else {
                optimizer.step();
            }
            result.temperature.clamp();
            optimizer.zero_grad();
            inv_tau = result.temperature.inv_tau_value();

            result.trace.push_back(
                {iteration, epoch, parts.l_ip, parts.l_ps, parts.l_is, parts.final, inv_tau});
            iteration += 1;
        }
    }
    result.iterations = iteration;
    return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace) {
    std::ofstream f(path);
    if (!f) throw IoError("write_trace_csv: cannot open " + path.string());
    f << "iteration,epoch,L_IP,L_PS,L_IS,L_final,inv_temperature\n";
    char line[256];
    for (const TraceRow& r : trace) {
        std::snprintf(line, sizeof(line), "%lld,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<long long>(r.iteration), r.epoch, double(r.l_ip), double(r.l_ps),
                      double(r.l_is), double(r.l_final), double(r.inv_temperature));
        f << line;
    }
}

} // namespace ulip
