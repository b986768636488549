// Command-line entry point: dataset generation, depth rendering, anchor
// construction, pre-training, evaluation, retrieval and diagnostics.
//
// Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ulip/anchors.hpp"
#include "ulip/contrastive.hpp"
#include "ulip/dataset.hpp"
#include "ulip/encoder.hpp"
#include "ulip/errors.hpp"
#include "ulip/eval.hpp"
#include "ulip/gradcheck.hpp"
#include "ulip/pointcloud.hpp"
#include "ulip/renderer.hpp"
#include "ulip/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config file: flat JSON object with dotted keys ("pretrain.epochs": 50).
// Command-line flags override file values.
struct ConfigMerge {
    json cfg = json::object();

    void load(const std::string& path) {
        if (path.empty()) return;
        std::ifstream f(path);
        if (!f) throw UsageError("cannot open config file: " + path);
        try {
            f >> cfg;
        } catch (const json::exception& e) {
            throw UsageError(std::string("bad config json: ") + e.what());
        }
        if (!cfg.is_object()) throw UsageError("config file must hold a flat JSON object");
    }

    template <typename T>
    void apply(const CLI::Option* opt, const std::string& key, T& var) const {
        if (opt != nullptr && opt->count() > 0) return;
        auto it = cfg.find(key);
        if (it == cfg.end()) return;
        try {
            var = it->get<T>();
        } catch (const json::exception&) {
            throw UsageError("config key has the wrong type: " + key);
        }
    }
};

fs::path resolve_out(const std::string& out_flag, const std::string& subcommand) {
    if (!out_flag.empty()) return fs::path(out_flag);
    if (const char* root = std::getenv("ULIP_OUT_ROOT"))
        return fs::path(root) / subcommand;
    throw UsageError("--out is required (or set ULIP_OUT_ROOT)");
}

fs::path prepare_out(const std::string& out_flag, const std::string& subcommand) {
    fs::path out = resolve_out(out_flag, subcommand);
    fs::create_directories(out);
    return out;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw ulip::IoError("cannot open " + path.string());
    f << j.dump(2) << "\n";
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw UsageError(std::string("bad ") + what + " list: " + csv);
        }
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<uint64_t> out;
    for (int v : parse_int_list(csv, "seed")) {
        if (v < 0) throw UsageError("seeds must be non-negative");
        out.push_back(static_cast<uint64_t>(v));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv, const char* what) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw UsageError(std::string("bad ") + what + " list: " + csv);
        }
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

// ---- gen-synthetic ----

struct GenOpts {
    std::string out, config;
    int categories = 8;
    int per_class = 40;
    int test_per_class = 10;
    int points = 1024;
    double noise = 0.02;
    uint64_t seed = 7;
};

int run_gen_synthetic(const GenOpts& o) {
    if (o.categories < 2 || o.categories > ulip::kShapeCategoryCount)
        throw UsageError("--categories must lie in [2, 8]");
    if (o.per_class < 1 || o.test_per_class < 0) throw UsageError("bad per-class counts");
    if (o.points < 8) throw UsageError("--points must be >= 8");

    fs::path out = prepare_out(o.out, "gen-synthetic");
    fs::create_directories(out / "clouds");

    ulip::Dataset data;
    data.root = out;
    for (int c = 0; c < o.categories; ++c) {
        auto cat = static_cast<ulip::ShapeCategory>(c);
        std::string name(ulip::shape_category_name(cat));
        data.categories.push_back(name);
        int total = o.per_class + o.test_per_class;
        for (int i = 0; i < total; ++i) {
            ulip::Rng rng = ulip::derived_rng(o.seed, "gen-shape", static_cast<uint64_t>(c),
                                             static_cast<uint64_t>(i));
            ulip::PointCloud pc =
                ulip::gen_shape(cat, static_cast<size_t>(o.points), static_cast<float>(o.noise), rng);
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%03d", name.c_str(), i);
            std::string rel = std::string("clouds/") + id + ".upc";
            ulip::save_pointcloud(out / rel, pc);
            data.records.push_back(
                {id, rel, c, {name}, i < o.per_class ? "train" : "test"});
        }
    }
    ulip::save_manifest(data, out / "manifest.json");

    write_json(out / "config.json", json{{"subcommand", "gen-synthetic"},
                                         {"categories", o.categories},
                                         {"per_class", o.per_class},
                                         {"test_per_class", o.test_per_class},
                                         {"points", o.points},
                                         {"noise", o.noise},
                                         {"seed", o.seed}});
    std::cout << "wrote " << data.records.size() << " clouds and manifest to " << out << "\n";
    return 0;
}

// ---- render ----

struct RenderOpts {
    std::string data, out, config, split;
    int views = 30;
    int res = 64;
    double elevation = 20.0;
    double radius = 2.5;
    int limit = 0;
};

int run_render(const RenderOpts& o) {
    fs::path out = prepare_out(o.out, "render");
    fs::create_directories(out / "depth");
    ulip::Dataset data = ulip::load_manifest(o.data);

    ulip::CameraRing ring;
    ring.view_count = o.views;
    ring.step_deg = 360.0 / o.views;
    ring.elevation_deg = o.elevation;
    ring.radius = o.radius;
    ring.validate();

    int done = 0;
    for (const ulip::DatasetRecord& rec : data.records) {
        if (!o.split.empty() && rec.split != o.split) continue;
        ulip::PointCloud pc = ulip::normalize_unit_sphere(data.load_cloud(rec));
        for (int v = 0; v < ring.view_count; ++v) {
            ulip::DepthMap map = ulip::render_depth(pc, ring, v, o.res);
            char name[96];
            std::snprintf(name, sizeof(name), "%s_v%02d.pgm", rec.id.c_str(), v);
            ulip::export_depth_pgm(map, out / "depth" / name);
        }
        if (++done == o.limit && o.limit > 0) break;
    }

    write_json(out / "config.json", json{{"subcommand", "render"},
                                         {"data", o.data},
                                         {"views", o.views},
                                         {"res", o.res},
                                         {"elevation", o.elevation},
                                         {"radius", o.radius},
                                         {"split", o.split},
                                         {"limit", o.limit}});
    std::cout << "rendered " << done << " objects x " << o.views << " views into " << out << "\n";
    return 0;
}

// ---- embed-anchors ----

struct EmbedOpts {
    std::string data, out, config, prompts;
    std::string mode = "standin"; // standin | oracle
    int dim = 32;
    uint64_t seed = 0;
    double image_noise = 0.2;
    double prompt_jitter = 0.3;
    int res = 64;
    int views = 30;
    double elevation = 20.0;
    double radius = 2.5;
};

int run_embed_anchors(const EmbedOpts& o) {
    if (o.mode != "standin" && o.mode != "oracle")
        throw UsageError("--mode must be standin or oracle");
    if (o.dim < 2) throw UsageError("--dim must be >= 2");

    fs::path out = prepare_out(o.out, "embed-anchors");
    ulip::Dataset data = ulip::load_manifest(o.data);

    if (o.mode == "oracle") {
        ulip::OracleAnchorConfig cfg;
        cfg.dim = o.dim;
        cfg.seed = o.seed;
        cfg.image_noise = static_cast<float>(o.image_noise);
        cfg.prompt_jitter = static_cast<float>(o.prompt_jitter);
        ulip::OracleAnchors oracle = ulip::oracle_anchor_gen(data.categories, cfg);
        ulip::save_table(oracle.text, out / "text_anchors.emb");
        ulip::save_table(oracle.image, out / "image_anchors.emb");
    } else {
        const ulip::PromptSet& prompts =
            o.prompts.empty() ? ulip::PromptSet::builtin() : ulip::PromptSet::load(o.prompts);

        std::vector<std::string> words;
        std::set<std::string> seen;
        for (const ulip::DatasetRecord& rec : data.records)
            for (const std::string& w : rec.words)
                if (seen.insert(w).second) words.push_back(w);

        ulip::AnchorTable text(o.dim, "stand-in");
        for (const std::string& w : words) {
            std::vector<std::string> instantiated = prompts.instantiate(w);
            for (int t = 0; t < static_cast<int>(instantiated.size()); ++t) {
                std::vector<float> row = ulip::stand_in_text_embed(instantiated[static_cast<size_t>(t)],
                                                                   o.dim, o.seed);
                ulip::AnchorRowMeta m;
                m.id = "text:" + w + ":" + std::to_string(t);
                m.kind = "text";
                m.word = w;
                m.template_index = t;
                text.add_row(std::move(m), row);
            }
        }

        ulip::CameraRing ring;
        ring.view_count = o.views;
        ring.step_deg = 360.0 / o.views;
        ring.elevation_deg = o.elevation;
        ring.radius = o.radius;
        ring.validate();

        ulip::StandInImageEncoder image_encoder(o.res, o.dim, o.seed);
        ulip::AnchorTable image(o.dim, "stand-in");
        for (const ulip::DatasetRecord& rec : data.records) {
            ulip::PointCloud pc = ulip::normalize_unit_sphere(data.load_cloud(rec));
            for (int v = 0; v < ring.view_count; ++v) {
                ulip::DepthMap map = ulip::render_depth(pc, ring, v, o.res);
                std::vector<float> row = image_encoder.embed(map);
                ulip::AnchorRowMeta m;
                m.id = "img:" + rec.id + ":" + std::to_string(v);
                m.kind = "image";
                m.object_id = rec.id;
                m.view_index = v;
                image.add_row(std::move(m), row);
            }
        }
        ulip::save_table(text, out / "text_anchors.emb");
        ulip::save_table(image, out / "image_anchors.emb");
    }

    write_json(out / "config.json", json{{"subcommand", "embed-anchors"},
                                         {"data", o.data},
                                         {"mode", o.mode},
                                         {"dim", o.dim},
                                         {"seed", o.seed},
                                         {"image_noise", o.image_noise},
                                         {"prompt_jitter", o.prompt_jitter},
                                         {"res", o.res},
                                         {"views", o.views}});
    std::cout << "anchor tables written to " << out << "\n";
    return 0;
}

// ---- pretrain ----

struct PretrainOpts {
    std::string data, text_anchors, image_anchors, out, config;
    int epochs = 250;
    int batch = 64;
    double lr = 1e-3;
    double weight_decay = 0.05;
    int points = 1024;
    uint64_t seed = 0;
    double alpha = 0.0, beta = 1.0, theta = 1.0;
    std::string widths = "64,128,256";
    bool mean_reduction = false;
    bool cosine_lr = false;
    bool no_augment = false;
    double init_inv_tau = 14.285;
    double clamp = 100.0;
};

ulip::TrainConfig make_train_config(const PretrainOpts& o, int embed_dim) {
    ulip::TrainConfig cfg;
    cfg.batch_size = o.batch;
    cfg.learning_rate = static_cast<float>(o.lr);
    cfg.epochs = o.epochs;
    cfg.optimizer.weight_decay = static_cast<float>(o.weight_decay);
    cfg.n_points = o.points;
    cfg.seed = o.seed;
    cfg.coefs = {static_cast<float>(o.alpha), static_cast<float>(o.beta),
                 static_cast<float>(o.theta)};
    cfg.mean_reduction = o.mean_reduction;
    cfg.cosine_lr = o.cosine_lr;
    if (o.no_augment) cfg.augment = ulip::AugmentConfig::disabled();
    cfg.encoder.widths = parse_int_list(o.widths, "widths");
    cfg.encoder.embed_dim = embed_dim;
    cfg.init_inv_tau = static_cast<float>(o.init_inv_tau);
    cfg.temperature_clamp = static_cast<float>(o.clamp);
    return cfg;
}

json pretrain_config_echo(const PretrainOpts& o, const char* subcommand) {
    return json{{"subcommand", subcommand}, {"data", o.data},
                {"text_anchors", o.text_anchors}, {"image_anchors", o.image_anchors},
                {"epochs", o.epochs},           {"batch", o.batch},
                {"lr", o.lr},                   {"weight_decay", o.weight_decay},
                {"points", o.points},           {"seed", o.seed},
                {"alpha", o.alpha},             {"beta", o.beta},
                {"theta", o.theta},             {"widths", o.widths},
                {"mean_reduction", o.mean_reduction}, {"cosine_lr", o.cosine_lr},
                {"no_augment", o.no_augment},   {"init_inv_tau", o.init_inv_tau},
                {"clamp", o.clamp}};
}

int run_pretrain(const PretrainOpts& o) {
    fs::path out = prepare_out(o.out, "pretrain");
    ulip::Dataset data = ulip::load_manifest(o.data);
    ulip::AnchorTable text = ulip::load_table(o.text_anchors);
    ulip::AnchorTable image = ulip::load_table(o.image_anchors, text.dim());

    ulip::TrainConfig cfg = make_train_config(o, text.dim());
    ulip::PretrainResult result = ulip::pretrain(data, text, image, cfg);

    ulip::Checkpoint ckpt;
    ckpt.encoder = std::move(result.encoder);
    ckpt.temperature_s = result.temperature.s_value();
    ckpt.metadata = {{"trained_epochs", o.epochs},
                     {"batch_size", o.batch},
                     {"learning_rate", o.lr},
                     {"n_points", o.points},
                     {"seed", o.seed},
                     {"iterations", result.iterations},
                     {"skipped_records", result.skipped_records}};
    ulip::save_checkpoint(out / "checkpoint.ulip", ckpt);
    ulip::write_trace_csv(out / "loss_trace.csv", result.trace);

    json report{{"iterations", result.iterations},
                {"skipped_records", result.skipped_records},
                {"final_inv_tau", result.temperature.inv_tau_value()}};
    if (!result.trace.empty()) {
        report["first_loss"] = result.trace.front().l_final;
        report["last_loss"] = result.trace.back().l_final;
    }
    write_json(out / "run_report.json", report);
    write_json(out / "config.json", pretrain_config_echo(o, "pretrain"));

    if (result.skipped_records > 0)
        std::cerr << "warning: skipped " << result.skipped_records
                  << " records with missing modalities\n";
    std::cout << "checkpoint and loss trace written to " << out << "\n";
    return 0;
}

// ---- zeroshot ----

struct ZeroshotOpts {
    std::string checkpoint, data, text_anchors, out, config;
    std::string set = "ALL";
    int points = 0; // 0: use checkpoint metadata
    uint64_t seed = 0;
};

int run_zeroshot(const ZeroshotOpts& o) {
    fs::path out = prepare_out(o.out, "zeroshot");
    ulip::Checkpoint ckpt = ulip::load_checkpoint(o.checkpoint);
    ulip::Dataset data = ulip::load_manifest(o.data);
    ulip::AnchorTable text = ulip::load_table(o.text_anchors, ckpt.encoder.config().embed_dim);

    ulip::EvalConfig cfg;
    cfg.seed = o.seed;
    cfg.n_points = o.points > 0 ? o.points
                                : ckpt.metadata.value("n_points", 1024);

    ulip::CategoryAnchors anchors = ulip::CategoryAnchors::build(text, data.categories);
    ulip::CategorySetFilter filter = ulip::filter_category_set(data.categories, o.set);
    ulip::EvalReport rep = ulip::zeroshot_eval(ckpt.encoder, data, "test", anchors, filter, cfg);

    write_json(out / "report.json", rep.to_json());
    write_json(out / "config.json", json{{"subcommand", "zeroshot"},
                                         {"checkpoint", o.checkpoint},
                                         {"data", o.data},
                                         {"text_anchors", o.text_anchors},
                                         {"set", o.set},
                                         {"points", cfg.n_points},
                                         {"seed", o.seed}});
    std::printf("zero-shot %s: top-1 %.2f%%  top-5 %.2f%%  (report in %s)\n", o.set.c_str(),
                rep.topk_accuracy.at(1), rep.topk_accuracy.at(5), out.string().c_str());
    return 0;
}

// ---- finetune ----

struct FinetuneOpts {
    std::string checkpoint, data, out, config;
    bool from_scratch = false;
    std::string widths = "64,128,256";
    int embed_dim = 512;
    int epochs = 60;
    int batch = 32;
    double lr = 1e-3;
    int points = 0;
    uint64_t seed = 0;
    double fraction = 1.0;
    bool freeze_encoder = false;
    bool no_augment = false;
};

int run_finetune(const FinetuneOpts& o) {
    if (o.checkpoint.empty() && !o.from_scratch)
        throw UsageError("finetune needs --checkpoint or --from-scratch");

    fs::path out = prepare_out(o.out, "finetune");
    ulip::Dataset data = ulip::load_manifest(o.data);

    ulip::Encoder encoder;
    int default_points = 1024;
    if (!o.checkpoint.empty()) {
        ulip::Checkpoint ckpt = ulip::load_checkpoint(o.checkpoint);
        encoder = std::move(ckpt.encoder);
        default_points = ckpt.metadata.value("n_points", 1024);
    } else {
        ulip::EncoderConfig cfg;
        cfg.widths = parse_int_list(o.widths, "widths");
        cfg.embed_dim = o.embed_dim;
        encoder = ulip::Encoder::init(ulip::derived_rng(o.seed, "scratch-init").next_u64(), cfg);
    }

    ulip::FinetuneConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.learning_rate = static_cast<float>(o.lr);
    cfg.n_points = o.points > 0 ? o.points : default_points;
    cfg.seed = o.seed;
    cfg.freeze_encoder = o.freeze_encoder;
    cfg.augment_enabled = !o.no_augment;

    std::optional<std::vector<size_t>> subset;
    if (o.fraction < 1.0) {
        if (!(o.fraction > 0.0)) throw UsageError("--fraction must lie in (0, 1]");
        std::map<int, std::vector<size_t>> by_class;
        for (size_t idx : data.split_indices("train"))
            by_class[data.records[idx].label].push_back(idx);
        std::vector<size_t> keep;
        for (auto& [label, members] : by_class) {
            size_t k = static_cast<size_t>(
                std::llround(o.fraction * static_cast<double>(members.size())));
            if (k == 0)
                throw ulip::FractionTooSmall("finetune: fraction empties class " +
                                             std::to_string(label));
            ulip::Rng rng = ulip::derived_rng(o.seed, "sweep-subset", static_cast<uint64_t>(label));
            rng.shuffle(members);
            keep.insert(keep.end(), members.begin(), members.begin() + static_cast<long>(k));
        }
        std::sort(keep.begin(), keep.end());
        subset = std::move(keep);
    }

    ulip::FinetuneResult result =
        ulip::finetune(encoder, data, cfg, subset ? &*subset : nullptr);

    ulip::Checkpoint out_ckpt;
    out_ckpt.encoder = std::move(result.encoder);
    out_ckpt.head = std::move(result.head);
    out_ckpt.metadata = {{"protocol", "finetune"},
                         {"epochs", o.epochs},
                         {"n_points", cfg.n_points},
                         {"seed", o.seed},
                         {"fraction", o.fraction}};
    ulip::save_checkpoint(out / "finetuned.ulip", out_ckpt);
    write_json(out / "report.json", result.report.to_json());
    write_json(out / "config.json", json{{"subcommand", "finetune"},
                                         {"checkpoint", o.checkpoint},
                                         {"from_scratch", o.from_scratch},
                                         {"data", o.data},
                                         {"epochs", o.epochs},
                                         {"batch", o.batch},
                                         {"lr", o.lr},
                                         {"points", cfg.n_points},
                                         {"seed", o.seed},
                                         {"fraction", o.fraction},
                                         {"freeze_encoder", o.freeze_encoder},
                                         {"no_augment", o.no_augment}});
    std::printf("finetune: OA %.2f%%  mAcc %.2f%%  (report in %s)\n",
                result.report.overall_accuracy, result.report.class_mean_accuracy,
                out.string().c_str());
    return 0;
}

// ---- retrieve ----

struct RetrieveOpts {
    std::string checkpoint, data, out, config;
    std::string query_object, query_row, anchors;
    std::string gallery_split = "test";
    int k = 5;
    int points = 0;
    uint64_t seed = 0;
};

int run_retrieve(const RetrieveOpts& o) {
    if (o.query_object.empty() == o.query_row.empty())
        throw UsageError("retrieve needs exactly one of --query-object or --query-row");
    if (!o.query_row.empty() && o.anchors.empty())
        throw UsageError("--query-row needs --anchors <table>");

    fs::path out = prepare_out(o.out, "retrieve");
    ulip::Checkpoint ckpt = ulip::load_checkpoint(o.checkpoint);
    ulip::Dataset data = ulip::load_manifest(o.data);
    int n_points = o.points > 0 ? o.points : ckpt.metadata.value("n_points", 1024);

    auto encode_record = [&](const ulip::DatasetRecord& rec) {
        ulip::Rng rng = ulip::derived_rng(o.seed, "eval-resample", ulip::stream_id(rec.id));
        ulip::PointCloud pc =
            ulip::resample(data.load_cloud(rec), static_cast<size_t>(n_points), rng);
        return ckpt.encoder.encode(ulip::normalize_unit_sphere(pc));
    };

    ulip::Gallery gallery;
    for (size_t idx : data.split_indices(o.gallery_split)) {
        const ulip::DatasetRecord& rec = data.records[idx];
        gallery.push_back({rec.id, encode_record(rec)});
    }

    std::vector<float> query;
    std::string query_desc;
    if (!o.query_object.empty()) {
        const ulip::DatasetRecord* found = nullptr;
        for (const ulip::DatasetRecord& rec : data.records)
            if (rec.id == o.query_object) found = &rec;
        if (!found) throw UsageError("no record with id " + o.query_object);
        query = encode_record(*found);
        query_desc = "object:" + o.query_object;
    } else {
        ulip::AnchorTable table = ulip::load_table(o.anchors, ckpt.encoder.config().embed_dim);
        std::span<const float> row = table.row(o.query_row);
        query.assign(row.begin(), row.end());
        query_desc = "row:" + o.query_row;
    }

    std::vector<ulip::RetrievalHit> hits =
        ulip::retrieve(query, gallery, static_cast<size_t>(o.k));

    json hits_json = json::array();
    for (const ulip::RetrievalHit& h : hits)
        hits_json.push_back({{"id", h.id}, {"score", h.score}});
    write_json(out / "retrieval.json",
               json{{"query", query_desc}, {"k", o.k}, {"hits", hits_json}});
    write_json(out / "config.json", json{{"subcommand", "retrieve"},
                                         {"checkpoint", o.checkpoint},
                                         {"data", o.data},
                                         {"query", query_desc},
                                         {"gallery_split", o.gallery_split},
                                         {"k", o.k},
                                         {"points", n_points},
                                         {"seed", o.seed}});
    for (const ulip::RetrievalHit& h : hits)
        std::printf("%-24s %.6f\n", h.id.c_str(), h.score);
    return 0;
}

// ---- ablate-modalities ----

struct AblateOpts {
    PretrainOpts train;
    std::string seeds = "0,1,2";
};

int run_ablate(const AblateOpts& o) {
    fs::path out = prepare_out(o.train.out, "ablate-modalities");
    ulip::Dataset data = ulip::load_manifest(o.train.data);
    ulip::AnchorTable text = ulip::load_table(o.train.text_anchors);
    ulip::AnchorTable image = ulip::load_table(o.train.image_anchors, text.dim());

    ulip::AblationConfig cfg;
    cfg.train = make_train_config(o.train, text.dim());
    cfg.eval.n_points = o.train.points;
    cfg.seeds = parse_seed_list(o.seeds);

    std::vector<ulip::AblationRow> rows = ulip::modality_ablation(data, text, image, cfg);
    ulip::write_ablation_csv(out / "ablation.csv", rows);

    json echo = pretrain_config_echo(o.train, "ablate-modalities");
    echo["seeds"] = o.seeds;
    write_json(out / "config.json", echo);

    std::printf("%-8s %8s %8s\n", "aligned", "top1", "top5");
    for (const ulip::AblationRow& r : rows)
        std::printf("%-8s %8.2f %8.2f\n", r.modalities.c_str(), r.top1, r.top5);
    return 0;
}

// ---- sweep-data-efficiency ----

struct SweepOpts {
    std::string checkpoint, data, out, config;
    std::string fractions = "0.1,0.25,0.5,1.0";
    std::string seeds = "0,1,2";
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    int points = 0;
};

int run_sweep(const SweepOpts& o) {
    fs::path out = prepare_out(o.out, "sweep-data-efficiency");
    ulip::Checkpoint ckpt = ulip::load_checkpoint(o.checkpoint);
    ulip::Dataset data = ulip::load_manifest(o.data);

    ulip::FinetuneConfig cfg;
    cfg.epochs = o.epochs;
    cfg.batch_size = o.batch;
    cfg.learning_rate = static_cast<float>(o.lr);
    cfg.n_points = o.points > 0 ? o.points : ckpt.metadata.value("n_points", 1024);

    std::vector<ulip::SweepRow> rows = ulip::data_efficiency_sweep(
        ckpt.encoder, data, parse_double_list(o.fractions, "fraction"), parse_seed_list(o.seeds),
        cfg);
    ulip::write_sweep_csv(out / "sweep.csv", rows);
    write_json(out / "config.json", json{{"subcommand", "sweep-data-efficiency"},
                                         {"checkpoint", o.checkpoint},
                                         {"data", o.data},
                                         {"fractions", o.fractions},
                                         {"seeds", o.seeds},
                                         {"epochs", o.epochs},
                                         {"batch", o.batch},
                                         {"lr", o.lr},
                                         {"points", cfg.n_points}});
    for (const ulip::SweepRow& r : rows)
        std::printf("fraction %.3f seed %llu %-10s OA %.2f%%\n", r.fraction,
                    static_cast<unsigned long long>(r.seed), r.init.c_str(), r.overall_accuracy);
    return 0;
}

// ---- gradcheck ----

struct GradcheckOpts {
    int seeds = 10;
};

int run_gradcheck(const GradcheckOpts& o) {
    ulip::GradCheckReport report = ulip::gradcheck_losses(o.seeds);
    std::printf("ran %zu gradient checks over %d seeds\n", report.entries.size(), o.seeds);
    std::printf("max relative error: %.3e (threshold 1e-3)\n", report.max_rel_error);
    if (report.max_rel_error >= 1e-3) {
        for (const ulip::GradCheckEntry& e : report.entries)
            if (e.rel_error >= 1e-3)
                std::fprintf(stderr, "FAIL %s: %.3e\n", e.name.c_str(), e.rel_error);
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tri-modal contrastive alignment toolkit for point clouds"};
    app.require_subcommand(1);

    GenOpts gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-synthetic", "generate a synthetic shape dataset");
    gen_cmd->add_option("--out", gen.out, "output directory");
    gen_cmd->add_option("--config", gen.config, "JSON config file (flat dotted keys)");
    auto* gen_categories = gen_cmd->add_option("--categories", gen.categories, "category count (<= 8)");
    auto* gen_per_class = gen_cmd->add_option("--per-class", gen.per_class, "train objects per class");
    auto* gen_test = gen_cmd->add_option("--test-per-class", gen.test_per_class, "test objects per class");
    auto* gen_points = gen_cmd->add_option("--points", gen.points, "points per cloud");
    auto* gen_noise = gen_cmd->add_option("--noise", gen.noise, "surface noise sigma");
    auto* gen_seed = gen_cmd->add_option("--seed", gen.seed, "top-level seed");

    RenderOpts render;
    CLI::App* render_cmd = app.add_subcommand("render", "export multi-view depth maps as PGM");
    render_cmd->add_option("--data", render.data, "dataset manifest")->required();
    render_cmd->add_option("--out", render.out, "output directory");
    render_cmd->add_option("--config", render.config, "JSON config file");
    render_cmd->add_option("--views", render.views, "views on the ring");
    render_cmd->add_option("--res", render.res, "image resolution");
    render_cmd->add_option("--elevation", render.elevation, "camera elevation (degrees)");
    render_cmd->add_option("--radius", render.radius, "camera distance");
    render_cmd->add_option("--split", render.split, "restrict to one split");
    render_cmd->add_option("--limit", render.limit, "stop after N objects");

    EmbedOpts embed;
    CLI::App* embed_cmd =
        app.add_subcommand("embed-anchors", "build frozen text/image anchor tables");
    embed_cmd->add_option("--data", embed.data, "dataset manifest")->required();
    embed_cmd->add_option("--out", embed.out, "output directory");
    embed_cmd->add_option("--config", embed.config, "JSON config file");
    embed_cmd->add_option("--mode", embed.mode, "standin | oracle");
    embed_cmd->add_option("--dim", embed.dim, "embedding dimension");
    embed_cmd->add_option("--seed", embed.seed, "anchor seed");
    embed_cmd->add_option("--image-noise", embed.image_noise, "oracle per-view noise sigma");
    embed_cmd->add_option("--prompt-jitter", embed.prompt_jitter, "oracle per-prompt jitter sigma");
    embed_cmd->add_option("--res", embed.res, "render resolution (standin)");
    embed_cmd->add_option("--views", embed.views, "views per object (standin)");
    embed_cmd->add_option("--elevation", embed.elevation, "camera elevation (standin)");
    embed_cmd->add_option("--radius", embed.radius, "camera distance (standin)");
    embed_cmd->add_option("--prompts", embed.prompts, "custom prompt template file");

    PretrainOpts pre;
    CLI::App* pre_cmd = app.add_subcommand("pretrain", "align the point encoder to frozen anchors");
    pre_cmd->add_option("--data", pre.data, "dataset manifest")->required();
    pre_cmd->add_option("--text-anchors", pre.text_anchors, "text anchor table")->required();
    pre_cmd->add_option("--image-anchors", pre.image_anchors, "image anchor table")->required();
    pre_cmd->add_option("--out", pre.out, "output directory");
    pre_cmd->add_option("--config", pre.config, "JSON config file");
    auto* pre_epochs = pre_cmd->add_option("--epochs", pre.epochs, "training epochs");
    auto* pre_batch = pre_cmd->add_option("--batch", pre.batch, "batch size");
    auto* pre_lr = pre_cmd->add_option("--lr", pre.lr, "learning rate");
    auto* pre_wd = pre_cmd->add_option("--weight-decay", pre.weight_decay, "decoupled weight decay");
    auto* pre_points = pre_cmd->add_option("--points", pre.points, "points per cloud");
    auto* pre_seed = pre_cmd->add_option("--seed", pre.seed, "top-level seed");
    auto* pre_alpha = pre_cmd->add_option("--alpha", pre.alpha, "image-text coefficient");
    auto* pre_beta = pre_cmd->add_option("--beta", pre.beta, "image-point coefficient");
    auto* pre_theta = pre_cmd->add_option("--theta", pre.theta, "point-text coefficient");
    auto* pre_widths = pre_cmd->add_option("--widths", pre.widths, "MLP widths, comma separated");
    pre_cmd->add_flag("--mean-reduction", pre.mean_reduction, "average the batch loss");
    pre_cmd->add_flag("--cosine-lr", pre.cosine_lr, "cosine learning-rate decay");
    pre_cmd->add_flag("--no-augment", pre.no_augment, "disable point augmentation");
    pre_cmd->add_option("--init-inv-tau", pre.init_inv_tau, "initial 1/tau");
    pre_cmd->add_option("--clamp", pre.clamp, "1/tau ceiling");

    ZeroshotOpts zs;
    CLI::App* zs_cmd = app.add_subcommand("zeroshot", "zero-shot classification of the test split");
    zs_cmd->add_option("--checkpoint", zs.checkpoint, "encoder checkpoint")->required();
    zs_cmd->add_option("--data", zs.data, "dataset manifest")->required();
    zs_cmd->add_option("--text-anchors", zs.text_anchors, "text anchor table")->required();
    zs_cmd->add_option("--out", zs.out, "output directory");
    zs_cmd->add_option("--config", zs.config, "JSON config file");
    zs_cmd->add_option("--set", zs.set, "category set: ALL | Medium | Hard");
    zs_cmd->add_option("--points", zs.points, "points per cloud (default: checkpoint)");
    zs_cmd->add_option("--seed", zs.seed, "evaluation seed");

    FinetuneOpts ft;
    CLI::App* ft_cmd = app.add_subcommand("finetune", "supervised classification fine-tuning");
    ft_cmd->add_option("--data", ft.data, "dataset manifest")->required();
    ft_cmd->add_option("--checkpoint", ft.checkpoint, "starting encoder checkpoint");
    ft_cmd->add_flag("--from-scratch", ft.from_scratch, "random encoder init");
    ft_cmd->add_option("--widths", ft.widths, "MLP widths for --from-scratch");
    ft_cmd->add_option("--embed-dim", ft.embed_dim, "embedding dim for --from-scratch");
    ft_cmd->add_option("--out", ft.out, "output directory");
    ft_cmd->add_option("--config", ft.config, "JSON config file");
    ft_cmd->add_option("--epochs", ft.epochs, "training epochs");
    ft_cmd->add_option("--batch", ft.batch, "batch size");
    ft_cmd->add_option("--lr", ft.lr, "learning rate");
    ft_cmd->add_option("--points", ft.points, "points per cloud");
    ft_cmd->add_option("--seed", ft.seed, "seed");
    ft_cmd->add_option("--fraction", ft.fraction, "stratified train fraction (0,1]");
    ft_cmd->add_flag("--freeze-encoder", ft.freeze_encoder, "linear probe only");
    ft_cmd->add_flag("--no-augment", ft.no_augment, "disable augmentation");

    RetrieveOpts ret;
    CLI::App* ret_cmd = app.add_subcommand("retrieve", "cross-modal / 3D-to-3D retrieval");
    ret_cmd->add_option("--checkpoint", ret.checkpoint, "encoder checkpoint")->required();
    ret_cmd->add_option("--data", ret.data, "dataset manifest")->required();
    ret_cmd->add_option("--out", ret.out, "output directory");
    ret_cmd->add_option("--config", ret.config, "JSON config file");
    ret_cmd->add_option("--query-object", ret.query_object, "encode this record as the query");
    ret_cmd->add_option("--query-row", ret.query_row, "take the query from an anchor table row");
    ret_cmd->add_option("--anchors", ret.anchors, "anchor table for --query-row");
    ret_cmd->add_option("--gallery-split", ret.gallery_split, "gallery split (default test)");
    ret_cmd->add_option("--k", ret.k, "results to return");
    ret_cmd->add_option("--points", ret.points, "points per cloud");
    ret_cmd->add_option("--seed", ret.seed, "seed");

    AblateOpts ab;
    CLI::App* ab_cmd = app.add_subcommand("ablate-modalities",
                                          "compare P+T / P+I / P+I+T pre-training");
    ab_cmd->add_option("--data", ab.train.data, "dataset manifest")->required();
    ab_cmd->add_option("--text-anchors", ab.train.text_anchors, "text anchor table")->required();
    ab_cmd->add_option("--image-anchors", ab.train.image_anchors, "image anchor table")->required();
    ab_cmd->add_option("--out", ab.train.out, "output directory");
    ab_cmd->add_option("--config", ab.train.config, "JSON config file");
    ab_cmd->add_option("--epochs", ab.train.epochs, "epochs per run");
    ab_cmd->add_option("--batch", ab.train.batch, "batch size");
    ab_cmd->add_option("--lr", ab.train.lr, "learning rate");
    ab_cmd->add_option("--points", ab.train.points, "points per cloud");
    ab_cmd->add_option("--widths", ab.train.widths, "MLP widths");
    ab_cmd->add_option("--seeds", ab.seeds, "comma-separated seeds");

    SweepOpts sw;
    CLI::App* sw_cmd = app.add_subcommand("sweep-data-efficiency",
                                          "fine-tune at several training fractions");
    sw_cmd->add_option("--checkpoint", sw.checkpoint, "pretrained checkpoint")->required();
    sw_cmd->add_option("--data", sw.data, "dataset manifest")->required();
    sw_cmd->add_option("--out", sw.out, "output directory");
    sw_cmd->add_option("--config", sw.config, "JSON config file");
    sw_cmd->add_option("--fractions", sw.fractions, "comma-separated fractions");
    sw_cmd->add_option("--seeds", sw.seeds, "comma-separated seeds");
    sw_cmd->add_option("--epochs", sw.epochs, "fine-tune epochs");
    sw_cmd->add_option("--batch", sw.batch, "batch size");
    sw_cmd->add_option("--lr", sw.lr, "learning rate");
    sw_cmd->add_option("--points", sw.points, "points per cloud");

    GradcheckOpts gc;
    CLI::App* gc_cmd = app.add_subcommand("gradcheck",
                                          "finite-difference check of the loss gradients");
    gc_cmd->add_option("--seeds", gc.seeds, "number of random batches");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (*gen_cmd) {
            ConfigMerge c;
            c.load(gen.config);
            c.apply(gen_categories, "gen-synthetic.categories", gen.categories);
            c.apply(gen_per_class, "gen-synthetic.per-class", gen.per_class);
            c.apply(gen_test, "gen-synthetic.test-per-class", gen.test_per_class);
            c.apply(gen_points, "gen-synthetic.points", gen.points);
            c.apply(gen_noise, "gen-synthetic.noise", gen.noise);
            c.apply(gen_seed, "gen-synthetic.seed", gen.seed);
            return run_gen_synthetic(gen);
        }
        if (*render_cmd) return run_render(render);
        if (*embed_cmd) return run_embed_anchors(embed);
        if (*pre_cmd) {
            ConfigMerge c;
            c.load(pre.config);
            c.apply(pre_epochs, "pretrain.epochs", pre.epochs);
            c.apply(pre_batch, "pretrain.batch", pre.batch);
            c.apply(pre_lr, "pretrain.lr", pre.lr);
            c.apply(pre_wd, "pretrain.weight-decay", pre.weight_decay);
            c.apply(pre_points, "pretrain.points", pre.points);
            c.apply(pre_seed, "pretrain.seed", pre.seed);
            c.apply(pre_alpha, "pretrain.alpha", pre.alpha);
            c.apply(pre_beta, "pretrain.beta", pre.beta);
            c.apply(pre_theta, "pretrain.theta", pre.theta);
            c.apply(pre_widths, "pretrain.widths", pre.widths);
            return run_pretrain(pre);
        }
        if (*zs_cmd) return run_zeroshot(zs);
        if (*ft_cmd) return run_finetune(ft);
        if (*ret_cmd) return run_retrieve(ret);
        if (*ab_cmd) return run_ablate(ab);
        if (*sw_cmd) return run_sweep(sw);
        if (*gc_cmd) return run_gradcheck(gc);
        std::cerr << "error: no subcommand selected\n" << app.help() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    } catch (const ulip::UnknownSetName& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    } catch (const ulip::BadArchitecture& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    } catch (const ulip::FractionTooSmall& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
        return 1;
    } catch (const ulip::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 2;
    }
}
