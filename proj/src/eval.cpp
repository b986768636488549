#include "ulip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

namespace ulip {

CategoryAnchors CategoryAnchors::build(const AnchorTable& text_table,
                                       const std::vector<std::string>& names) {
    if (names.empty()) throw Error("category anchors: empty name list");
    std::set<std::string> unique(names.begin(), names.end());
    if (unique.size() != names.size()) throw Error("category anchors: duplicate names");

    CategoryAnchors out;
    out.names = names;
    out.dim = text_table.dim();
    out.rows.reserve(names.size() * static_cast<size_t>(out.dim));
    for (const std::string& name : names) {
        std::vector<float> anchor = word_anchor(text_table, name);
        out.rows.insert(out.rows.end(), anchor.begin(), anchor.end());
    }
    return out;
}

std::vector<RankedCategory> zeroshot_classify(std::span<const float> embedding,
                                              const CategoryAnchors& anchors) {
    if (static_cast<int>(embedding.size()) != anchors.dim)
        throw DimMismatch("zeroshot_classify: embedding width does not match anchors");
    std::vector<RankedCategory> ranked;
    ranked.reserve(anchors.names.size());
    for (size_t k = 0; k < anchors.names.size(); ++k) {
        std::span<const float> row = anchors.row(k);
        double dot = 0.0;
        for (size_t i = 0; i < row.size(); ++i) dot += double(embedding[i]) * double(row[i]);
        ranked.push_back({static_cast<int>(k), static_cast<float>(dot)});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedCategory& a, const RankedCategory& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.index < b.index;
    });
    return ranked;
}

EvalReport compute_metrics(const std::vector<std::vector<int>>& ranked_predictions,
                           const std::vector<int>& labels, const std::vector<int>& k_list) {
    if (ranked_predictions.size() != labels.size())
        throw LengthMismatch("compute_metrics: predictions/labels length mismatch");
    if (labels.empty()) throw EmptySplit("compute_metrics: no samples");

    int num_classes = 0;
    for (int lab : labels) {
        if (lab < 0) throw Error("compute_metrics: negative label");
        num_classes = std::max(num_classes, lab + 1);
    }

    EvalReport rep;
    rep.class_total.assign(static_cast<size_t>(num_classes), 0);
    rep.class_correct.assign(static_cast<size_t>(num_classes), 0);

    std::map<int, int64_t> topk_hits;
    for (int k : k_list) topk_hits[k] = 0;

    int64_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const std::vector<int>& ranked = ranked_predictions[i];
        if (ranked.empty()) throw Error("compute_metrics: empty ranking");
        int lab = labels[i];
        rep.class_total[static_cast<size_t>(lab)] += 1;
        if (ranked.front() == lab) {
            correct += 1;
            rep.class_correct[static_cast<size_t>(lab)] += 1;
        }
        for (int k : k_list) {
            size_t depth = std::min<size_t>(static_cast<size_t>(k), ranked.size());
            for (size_t r = 0; r < depth; ++r) {
                if (ranked[r] == lab) {
                    topk_hits[k] += 1;
                    break;
                }
            }
        }
    }

    double total = static_cast<double>(labels.size());
    rep.overall_accuracy = 100.0 * static_cast<double>(correct) / total;

    double recall_sum = 0.0;
    int present = 0;
    for (size_t c = 0; c < rep.class_total.size(); ++c) {
        if (rep.class_total[c] == 0) continue;
        recall_sum += static_cast<double>(rep.class_correct[c]) /
                      static_cast<double>(rep.class_total[c]);
        present += 1;
    }
    rep.class_mean_accuracy = present > 0 ? 100.0 * recall_sum / present : 0.0;

    for (int k : k_list)
        rep.topk_accuracy[k] = 100.0 * static_cast<double>(topk_hits[k]) / total;
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["overall_accuracy"] = overall_accuracy;
    j["class_mean_accuracy"] = class_mean_accuracy;
    nlohmann::json topk = nlohmann::json::object();
    for (const auto& [k, v] : topk_accuracy) topk[std::to_string(k)] = v;
    j["topk_accuracy"] = topk;
    if (topk_accuracy.count(1)) j["top1"] = topk_accuracy.at(1);
    if (topk_accuracy.count(5)) j["top5"] = topk_accuracy.at(5);
    nlohmann::json per_class = nlohmann::json::array();
    for (size_t c = 0; c < class_total.size(); ++c) {
        nlohmann::json e;
        if (c < class_names.size()) e["name"] = class_names[c];
        e["total"] = class_total[c];
        e["correct"] = class_correct[c];
        per_class.push_back(e);
    }
    j["per_class"] = per_class;
    j["config"] = config_echo;
    return j;
}

// ---- category set filters ----

const std::vector<std::string>& modelnet40_all() {
    static const std::vector<std::string> names = {
        "airplane", "bathtub", "bed", "bench", "bookshelf", "bottle", "bowl", "car",
        "chair", "cone", "cup", "curtain", "desk", "door", "dresser", "flower_pot",
        "glass_box", "guitar", "keyboard", "lamp", "laptop", "mantel", "monitor",
        "night_stand", "person", "piano", "plant", "radio", "range_hood", "sink",
        "sofa", "stairs", "stool", "table", "tent", "toilet", "tv_stand", "vase",
        "wardrobe", "xbox"};
    return names;
}

const std::vector<std::string>& modelnet40_medium() {
    static const std::vector<std::string> names = {
        "cone", "cup", "curtain", "door", "dresser", "glass_box", "mantel", "monitor",
        "night_stand", "person", "plant", "radio", "range_hood", "sink", "stairs",
        "stool", "tent", "toilet", "tv_stand", "vase", "wardrobe", "xbox"};
    return names;
}

const std::vector<std::string>& modelnet40_hard() {
    static const std::vector<std::string> names = {
        "cone", "curtain", "door", "dresser", "glass_box", "mantel", "night_stand",
        "person", "plant", "radio", "range_hood", "sink", "stairs", "tent", "toilet",
        "tv_stand", "xbox"};
    return names;
}

bool CategorySetFilter::keeps(const std::string& category) const {
    return std::find(retained.begin(), retained.end(), category) != retained.end();
}

CategorySetFilter filter_category_set(const std::vector<std::string>& all_names,
                                      const std::string& set_name) {
    CategorySetFilter f;
    f.name = set_name;
    if (set_name == "ALL") {
        f.retained = all_names;
    } else if (set_name == "Medium") {
        f.retained = modelnet40_medium();
    } else if (set_name == "Hard") {
        f.retained = modelnet40_hard();
    } else {
        throw UnknownSetName("filter_category_set: unknown set '" + set_name +
                             "' (expected ALL, Medium or Hard)");
    }
    return f;
}

// ---- zero-shot evaluation ----

EvalReport zeroshot_eval(const Encoder& encoder, const Dataset& data, std::string_view split,
                         const CategoryAnchors& anchors, const CategorySetFilter& filter,
                         const EvalConfig& cfg) {
    // category candidates: anchors restricted to the filtered set
    std::vector<std::string> candidates;
    for (const std::string& name : anchors.names)
        if (filter.keeps(name)) candidates.push_back(name);
    if (candidates.empty()) throw EmptySplit("zeroshot_eval: filter removed every category");

    CategoryAnchors filtered;
    filtered.dim = anchors.dim;
    filtered.names = candidates;
    for (const std::string& name : candidates) {
        size_t k = static_cast<size_t>(
            std::find(anchors.names.begin(), anchors.names.end(), name) - anchors.names.begin());
        std::span<const float> row = anchors.row(k);
        filtered.rows.insert(filtered.rows.end(), row.begin(), row.end());
    }

    std::unordered_map<std::string, int> candidate_index;
    for (size_t i = 0; i < candidates.size(); ++i)
        candidate_index[candidates[i]] = static_cast<int>(i);

    std::vector<std::vector<int>> rankings;
    std::vector<int> labels;
    for (size_t idx : data.split_indices(split)) {
        const DatasetRecord& rec = data.records[idx];
        const std::string& category = data.categories.at(static_cast<size_t>(rec.label));
        auto it = candidate_index.find(category);
        if (it == candidate_index.end()) continue; // label filtered out

        Rng rng = derived_rng(cfg.seed, "eval-resample", stream_id(rec.id));
        PointCloud pc = resample(data.load_cloud(rec), static_cast<size_t>(cfg.n_points), rng);
        pc = normalize_unit_sphere(pc);
        std::vector<float> emb = encoder.encode(pc);

        std::vector<RankedCategory> ranked = zeroshot_classify(emb, filtered);
        std::vector<int> order;
        order.reserve(ranked.size());
        for (const RankedCategory& r : ranked) order.push_back(r.index);
        rankings.push_back(std::move(order));
        labels.push_back(it->second);
    }
    if (labels.empty()) throw EmptySplit("zeroshot_eval: no evaluable samples in split");

    EvalReport rep = compute_metrics(rankings, labels, cfg.top_k);
    rep.class_names = candidates;
    rep.config_echo = {{"protocol", "zeroshot"},
                       {"split", std::string(split)},
                       {"set", filter.name},
                       {"n_points", cfg.n_points},
                       {"seed", cfg.seed}};
    return rep;
}

// ---- fine-tuning ----

FinetuneResult finetune(const Encoder& init_encoder, const Dataset& data,
                        const FinetuneConfig& cfg, const std::vector<size_t>* train_subset) {
    std::vector<size_t> train_idx =
        train_subset ? *train_subset : data.split_indices("train");
    if (train_idx.empty()) throw EmptySplit("finetune: no training records");

    // labels used for training must be contiguous 0..C-1
    std::set<int> seen;
    for (size_t idx : train_idx) seen.insert(data.records[idx].label);
    int num_classes = *seen.rbegin() + 1;
    if (num_classes < 2) throw LabelGap("finetune: need at least two classes");
    for (int c = 0; c < num_classes; ++c)
        if (!seen.count(c))
            throw LabelGap("finetune: label " + std::to_string(c) + " missing from train split");

    FinetuneResult result;
    result.encoder = init_encoder.clone();
    result.head = ClassifierHead::init(derived_rng(cfg.seed, "head-seed").next_u64(),
                                       init_encoder.config().embed_dim, num_classes);

    std::vector<ParamSlot> slots;
    if (!cfg.freeze_encoder) {
        slots = result.encoder.parameters();
    } else {
        for (const ParamSlot& p : result.encoder.parameters())
            p.tensor->set_requires_grad(false);
    }
    for (const ParamSlot& p : result.head.parameters()) slots.push_back(p);

    AdamWConfig opt_cfg = cfg.optimizer;
    opt_cfg.lr = cfg.learning_rate;
    AdamW optimizer(slots, opt_cfg);

    std::vector<PointCloud> clouds_store;
    clouds_store.reserve(train_idx.size());
    std::vector<int> labels_store;
    for (size_t idx : train_idx) {
        clouds_store.push_back(data.load_cloud(data.records[idx]));
        labels_store.push_back(data.records[idx].label);
    }

    std::vector<size_t> order(train_idx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    int64_t n = static_cast<int64_t>(order.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = derived_rng(cfg.seed, "ft-shuffle", static_cast<uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int64_t bsz = std::min<int64_t>(cfg.batch_size, n - start);
            std::vector<PointCloud> batch;
            std::vector<int> labels;
            batch.reserve(static_cast<size_t>(bsz));
            for (int64_t j = 0; j < bsz; ++j) {
                uint64_t pos = static_cast<uint64_t>(start + j);
                size_t item = order[static_cast<size_t>(start + j)];
                Rng sample_rng = derived_rng(cfg.seed, "ft-resample", static_cast<uint64_t>(epoch), pos);
                PointCloud pc =
                    resample(clouds_store[item], static_cast<size_t>(cfg.n_points), sample_rng);
                pc = normalize_unit_sphere(pc);
                if (cfg.augment_enabled) {
                    Rng aug_rng = derived_rng(cfg.seed, "ft-augment", static_cast<uint64_t>(epoch), pos);
                    pc = augment(pc, cfg.augment, aug_rng);
                }
                batch.push_back(std::move(pc));
                labels.push_back(labels_store[item]);
            }
            ag::Graph graph;
            ag::TensorPtr emb = result.encoder.encode_batch(graph, batch);
            ag::TensorPtr logits = result.head.classify(graph, emb);
            ag::TensorPtr loss = ag::cross_entropy(graph, logits, labels);
            graph.backward(loss);
            optimizer.step();
            optimizer.zero_grad();
        }
    }
    if (cfg.freeze_encoder) {
        for (const ParamSlot& p : result.encoder.parameters()) p.tensor->set_requires_grad(true);
    }

    // test-split evaluation: resample + normalize, no augmentation
    std::vector<std::vector<int>> rankings;
    std::vector<int> labels;
    for (size_t idx : data.split_indices("test")) {
        const DatasetRecord& rec = data.records[idx];
        if (rec.label >= num_classes)
            throw LabelGap("finetune: test label outside the trained class range");
        Rng rng = derived_rng(cfg.seed, "ft-eval-resample", stream_id(rec.id));
        PointCloud pc = resample(data.load_cloud(rec), static_cast<size_t>(cfg.n_points), rng);
        pc = normalize_unit_sphere(pc);
        std::vector<float> logits = result.head.classify(result.encoder.encode(pc));

        std::vector<int> order_c(logits.size());
        for (size_t i = 0; i < order_c.size(); ++i) order_c[i] = static_cast<int>(i);
        std::stable_sort(order_c.begin(), order_c.end(), [&](int a, int b) {
            if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)])
                return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
            return a < b;
        });
        rankings.push_back(std::move(order_c));
        labels.push_back(rec.label);
    }
    if (labels.empty()) throw EmptySplit("finetune: no test records");

    result.report = compute_metrics(rankings, labels, cfg.top_k);
    for (int c = 0; c < num_classes; ++c)
        result.report.class_names.push_back(
            static_cast<size_t>(c) < data.categories.size() ? data.categories[static_cast<size_t>(c)]
                                                            : std::to_string(c));
    result.report.config_echo = {{"protocol", "finetune"},
                                 {"epochs", cfg.epochs},
                                 {"batch_size", cfg.batch_size},
                                 {"learning_rate", cfg.learning_rate},
                                 {"n_points", cfg.n_points},
                                 {"seed", cfg.seed},
                                 {"freeze_encoder", cfg.freeze_encoder},
                                 {"train_samples", train_idx.size()}};
    return result;
}

// ---- retrieval ----

std::vector<RetrievalHit> retrieve(std::span<const float> query, const Gallery& gallery,
                                   size_t k) {
    if (gallery.empty()) throw EmptyGallery("retrieve: empty gallery");
    std::vector<RetrievalHit> hits;
    hits.reserve(gallery.size());
    for (const auto& [id, emb] : gallery) {
        if (emb.size() != query.size())
            throw DimMismatch("retrieve: gallery embedding width differs from query");
        double dot = 0.0;
        for (size_t i = 0; i < emb.size(); ++i) dot += double(query[i]) * double(emb[i]);
        hits.push_back({id, static_cast<float>(dot)});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

// ---- ablation / sweep ----

std::vector<AblationRow> modality_ablation(const Dataset& data, const AnchorTable& text_table,
                                           const AnchorTable& image_table,
                                           const AblationConfig& cfg) {
    if (cfg.seeds.empty()) throw Error("modality_ablation: need at least one seed");

    struct Config {
        const char* name;
        float beta;
        float theta;
    };
    const Config configs[3] = {{"P+T", 0.0f, 1.0f}, {"P+I", 1.0f, 0.0f}, {"P+I+T", 1.0f, 1.0f}};

    CategoryAnchors anchors = CategoryAnchors::build(text_table, data.categories);
    CategorySetFilter all{"ALL", data.categories};

    std::vector<AblationRow> rows;
    for (const Config& c : configs) {
        AblationRow row;
        row.modalities = c.name;
        for (uint64_t seed : cfg.seeds) {
            TrainConfig train = cfg.train;
            train.seed = seed;
            train.coefs.alpha = 0.0f;
            train.coefs.beta = c.beta;
            train.coefs.theta = c.theta;
            PretrainResult pre = pretrain(data, text_table, image_table, train);

            EvalConfig ev = cfg.eval;
            ev.seed = seed;
            EvalReport rep = zeroshot_eval(pre.encoder, data, "test", anchors, all, ev);
            row.top1 += rep.topk_accuracy.at(1);
            row.top5 += rep.topk_accuracy.at(5);
        }
        row.top1 /= static_cast<double>(cfg.seeds.size());
        row.top5 /= static_cast<double>(cfg.seeds.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<SweepRow> data_efficiency_sweep(const Encoder& pretrained, const Dataset& data,
                                            const std::vector<double>& fractions,
                                            const std::vector<uint64_t>& seeds,
                                            const FinetuneConfig& cfg) {
    std::vector<size_t> train_idx = data.split_indices("train");
    if (train_idx.empty()) throw EmptySplit("data_efficiency_sweep: no training records");

    std::map<int, std::vector<size_t>> by_class;
    for (size_t idx : train_idx) by_class[data.records[idx].label].push_back(idx);

    std::vector<SweepRow> rows;
    for (double fraction : fractions) {
        if (!(fraction > 0.0) || fraction > 1.0)
            throw Error("data_efficiency_sweep: fractions must lie in (0, 1]");
        for (uint64_t seed : seeds) {
            // stratified subset: per-class shuffle, keep round(fraction * n)
            std::vector<size_t> subset;
            for (const auto& [label, members] : by_class) {
                size_t keep = static_cast<size_t>(
                    std::llround(fraction * static_cast<double>(members.size())));
                if (keep == 0)
                    throw FractionTooSmall("data_efficiency_sweep: fraction " +
                                           std::to_string(fraction) + " empties class " +
                                           std::to_string(label));
                std::vector<size_t> shuffled = members;
                Rng rng = derived_rng(seed, "sweep-subset", static_cast<uint64_t>(label));
                rng.shuffle(shuffled);
                subset.insert(subset.end(), shuffled.begin(), shuffled.begin() + static_cast<long>(keep));
            }
            std::sort(subset.begin(), subset.end());

            FinetuneConfig run = cfg;
            run.seed = seed;

            FinetuneResult from_pretrained = finetune(pretrained, data, run, &subset);
            rows.push_back({fraction, seed, "pretrained", from_pretrained.report.overall_accuracy});

            Encoder random_init = Encoder::init(derived_rng(seed, "sweep-random-init").next_u64(),
                                                pretrained.config());
            FinetuneResult from_random = finetune(random_init, data, run, &subset);
            rows.push_back({fraction, seed, "random", from_random.report.overall_accuracy});
        }
    }
    return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
    std::ofstream f(path);
    if (!f) throw IoError("write_ablation_csv: cannot open " + path.string());
    f << "modalities,top1,top5\n";
    char line[128];
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%.9g,%.9g\n", r.modalities.c_str(), r.top1, r.top5);
        f << line;
    }
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    std::ofstream f(path);
    if (!f) throw IoError("write_sweep_csv: cannot open " + path.string());
    f << "fraction,seed,init,overall_accuracy\n";
    char line[160];
    for (const SweepRow& r : rows) {
        std::snprintf(line, sizeof(line), "%.9g,%llu,%s,%.9g\n", r.fraction,
                      static_cast<unsigned long long>(r.seed), r.init.c_str(), r.overall_accuracy);
        f << line;
    }
}

} // namespace ulip
