#include "ulip/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ulip/rng.hpp"

namespace ulip {

namespace {

constexpr char kMagic[8] = {'U', 'L', 'I', 'P', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr float kBiasInit = 0.01f;

ag::TensorPtr init_weight(int fan_in, int fan_out, Rng& rng) {
    // fan-in-scaled uniform: U(-sqrt(3/fan_in), sqrt(3/fan_in)), variance 1/fan_in
    double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<float> w(static_cast<size_t>(fan_in) * static_cast<size_t>(fan_out));
    for (float& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    return ag::Tensor::make({fan_in, fan_out}, std::move(w), true);
}

ag::TensorPtr init_bias(int n) {
    return ag::Tensor::make({n}, std::vector<float>(static_cast<size_t>(n), kBiasInit), true);
}

} // namespace

void EncoderConfig::validate() const {
    if (widths.empty()) throw BadArchitecture("encoder config: widths must be nonempty");
    for (int w : widths)
        if (w <= 0) throw BadArchitecture("encoder config: zero-width layer");
    if (embed_dim < 2) throw BadArchitecture("encoder config: embed_dim must be >= 2");
}

Encoder Encoder::init(uint64_t seed, const EncoderConfig& cfg) {
    cfg.validate();
    Encoder e;
    e.cfg_ = cfg;
    int in = 3;
    for (size_t li = 0; li < cfg.widths.size(); ++li) {
        Rng rng = derived_rng(seed, "encoder-init", li);
        int out = cfg.widths[li];
        e.w_.push_back(init_weight(in, out, rng));
        e.b_.push_back(init_bias(out));
        in = out;
    }
    Rng rng = derived_rng(seed, "encoder-init-proj");
    e.proj_w_ = init_weight(in, cfg.embed_dim, rng);
    e.proj_b_ = init_bias(cfg.embed_dim);
    return e;
}

Encoder Encoder::clone() const {
    auto copy_tensor = [](const ag::TensorPtr& t) {
        return ag::Tensor::make(t->shape(),
                                std::vector<float>(t->data().begin(), t->data().end()),
                                t->requires_grad());
    };
    Encoder e;
    e.cfg_ = cfg_;
    for (const ag::TensorPtr& w : w_) e.w_.push_back(copy_tensor(w));
    for (const ag::TensorPtr& b : b_) e.b_.push_back(copy_tensor(b));
    e.proj_w_ = copy_tensor(proj_w_);
    e.proj_b_ = copy_tensor(proj_b_);
    return e;
}

ag::TensorPtr Encoder::encode_batch(ag::Graph& g, std::span<const PointCloud> clouds) const {
    if (clouds.empty()) throw EmptyCloud("encode_batch: empty batch");
    size_t pts = clouds.front().points.size();
    if (pts == 0) throw EmptyCloud("encode_batch: cloud has no points");
    for (const PointCloud& pc : clouds)
        if (pc.points.size() != pts)
            throw RaggedBatch("encode_batch: clouds have mixed point counts");

    int64_t n = static_cast<int64_t>(clouds.size());
    int64_t p = static_cast<int64_t>(pts);
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(n * p * 3));
    for (const PointCloud& pc : clouds)
        for (const Vec3& v : pc.points) flat.insert(flat.end(), v.begin(), v.end());

    ag::TensorPtr x = ag::Tensor::make({n * p, 3}, std::move(flat), false);
    for (size_t li = 0; li < w_.size(); ++li) {
        x = ag::bias_add(g, ag::matmul(g, x, w_[li]), b_[li]);
        x = ag::relu(g, x);
    }
    x = ag::rowgroup_max(g, x, p);
    x = ag::bias_add(g, ag::matmul(g, x, proj_w_), proj_b_);
    return ag::l2_normalize_rows(g, x);
}

std::vector<float> Encoder::encode(const PointCloud& pc) const {
    ag::Graph g(false);
    ag::TensorPtr e = encode_batch(g, std::span<const PointCloud>(&pc, 1));
    return std::vector<float>(e->data().begin(), e->data().end());
}

std::vector<ParamSlot> Encoder::parameters() const {
    std::vector<ParamSlot> out;
    for (size_t i = 0; i < w_.size(); ++i) {
        out.push_back({w_[i], true});
        out.push_back({b_[i], false});
    }
    out.push_back({proj_w_, true});
    out.push_back({proj_b_, false});
    return out;
}

ClassifierHead ClassifierHead::init(uint64_t seed, int embed_dim, int num_classes) {
    if (num_classes < 2) throw BadArchitecture("classifier head: need at least 2 classes");
    if (embed_dim < 1) throw BadArchitecture("classifier head: bad embedding dim");
    ClassifierHead h;
    h.embed_dim_ = embed_dim;
    h.num_classes_ = num_classes;
    Rng rng = derived_rng(seed, "head-init");
    h.w_ = init_weight(embed_dim, num_classes, rng);
    h.b_ = ag::Tensor::zeros({num_classes}, true);
    return h;
}

ClassifierHead ClassifierHead::from_values(std::vector<float> weight, std::vector<float> bias,
                                           int embed_dim, int num_classes) {
    if (static_cast<int64_t>(weight.size()) != int64_t(embed_dim) * num_classes ||
        static_cast<int>(bias.size()) != num_classes)
        throw ShapeMismatch("classifier head: value sizes do not match dims");
    ClassifierHead h;
    h.embed_dim_ = embed_dim;
    h.num_classes_ = num_classes;
    h.w_ = ag::Tensor::make({embed_dim, num_classes}, std::move(weight), true);
    h.b_ = ag::Tensor::make({num_classes}, std::move(bias), true);
    return h;
}

ag::TensorPtr ClassifierHead::classify(ag::Graph& g, const ag::TensorPtr& embeddings) const {
    if (embeddings->rank() != 2 || embeddings->dim(1) != embed_dim_)
        throw ShapeMismatch("classify: embedding width does not match head");
    return ag::bias_add(g, ag::matmul(g, embeddings, w_), b_);
}

std::vector<float> ClassifierHead::classify(std::span<const float> embedding) const {
    if (static_cast<int>(embedding.size()) != embed_dim_)
        throw ShapeMismatch("classify: embedding width does not match head");
    ag::Graph g(false);
    ag::TensorPtr e = ag::Tensor::make({1, embed_dim_},
                                       std::vector<float>(embedding.begin(), embedding.end()));
    ag::TensorPtr logits = classify(g, e);
    return std::vector<float>(logits->data().begin(), logits->data().end());
}

std::vector<ParamSlot> ClassifierHead::parameters() const {
    return {{w_, true}, {b_, false}};
}

// ---- checkpoint io ----

namespace {

struct BlockRef {
    std::string name;
    std::vector<int64_t> shape;
    std::span<const float> values;
};

void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& f, const char* what) {
    uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw TruncatedFile(std::string("checkpoint: truncated ") + what);
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const Encoder& enc = ckpt.encoder;
    std::vector<BlockRef> blocks;
    for (size_t i = 0; i < enc.mlp_weights().size(); ++i) {
        std::string base = "mlp" + std::to_string(i);
        blocks.push_back({base + ".weight", enc.mlp_weights()[i]->shape(),
                          enc.mlp_weights()[i]->data()});
        blocks.push_back({base + ".bias", enc.mlp_biases()[i]->shape(),
                          enc.mlp_biases()[i]->data()});
    }
    blocks.push_back({"proj.weight", enc.proj_weight()->shape(), enc.proj_weight()->data()});
    blocks.push_back({"proj.bias", enc.proj_bias()->shape(), enc.proj_bias()->data()});
    if (ckpt.head) {
        blocks.push_back({"head.weight", ckpt.head->weight()->shape(), ckpt.head->weight()->data()});
        blocks.push_back({"head.bias", ckpt.head->bias()->shape(), ckpt.head->bias()->data()});
    }

    nlohmann::json header;
    header["widths"] = enc.config().widths;
    header["embed_dim"] = enc.config().embed_dim;
    if (ckpt.head) header["num_classes"] = ckpt.head->num_classes();
    if (ckpt.temperature_s) {
        header["temperature"] = {
            {"s_bits", std::bit_cast<uint32_t>(*ckpt.temperature_s)},
            {"inv_tau", std::exp(static_cast<double>(*ckpt.temperature_s))},
        };
    }
    header["metadata"] = ckpt.metadata;
    nlohmann::json block_list = nlohmann::json::array();
    for (const BlockRef& b : blocks) block_list.push_back({{"name", b.name}, {"shape", b.shape}});
    header["blocks"] = block_list;

    std::string header_str = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path.string());
    f.write(kMagic, sizeof(kMagic));
    write_u32(f, kVersion);
    write_u32(f, static_cast<uint32_t>(header_str.size()));
    f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const BlockRef& b : blocks)
        f.write(reinterpret_cast<const char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(float)));
    if (!f) throw IoError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path.string());
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw BadMagic("load_checkpoint: bad magic in " + path.string());
    uint32_t version = read_u32(f, "version");
    if (version != kVersion)
        throw BadHeader("load_checkpoint: unsupported version " + std::to_string(version));
    uint32_t header_len = read_u32(f, "header length");
    std::string header_str(header_len, '\0');
    if (!f.read(header_str.data(), header_len))
        throw TruncatedFile("load_checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw BadHeader(std::string("load_checkpoint: bad header json: ") + e.what());
    }

    EncoderConfig cfg;
    cfg.widths = header.at("widths").get<std::vector<int>>();
    cfg.embed_dim = header.at("embed_dim").get<int>();
    cfg.validate();

    std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>> loaded;
    for (const auto& b : header.at("blocks")) {
        std::string name = b.at("name").get<std::string>();
        std::vector<int64_t> shape = b.at("shape").get<std::vector<int64_t>>();
        int64_t count = 1;
        for (int64_t d : shape) count *= d;
        std::vector<float> values(static_cast<size_t>(count));
        if (!f.read(reinterpret_cast<char*>(values.data()),
                    static_cast<std::streamsize>(values.size() * sizeof(float))))
            throw TruncatedFile("load_checkpoint: truncated block " + name);
        loaded[name] = {std::move(shape), std::move(values)};
    }

    auto take = [&](const std::string& name) -> std::pair<std::vector<int64_t>, std::vector<float>> {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw BadHeader("load_checkpoint: missing block " + name);
        auto v = std::move(it->second);
        loaded.erase(it);
        return v;
    };

    Checkpoint ckpt;
    // rebuild the encoder with fresh tensors in declared order
    Encoder enc = Encoder::init(0, cfg);
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
        std::string base = "mlp" + std::to_string(i);
        auto [ws, wv] = take(base + ".weight");
        auto [bs, bv] = take(base + ".bias");
        if (ws != enc.mlp_weights()[i]->shape() || bs != enc.mlp_biases()[i]->shape())
            throw BadHeader("load_checkpoint: block shape mismatch at " + base);
        std::copy(wv.begin(), wv.end(), enc.mlp_weights()[i]->data_mut().begin());
        std::copy(bv.begin(), bv.end(), enc.mlp_biases()[i]->data_mut().begin());
    }
    {
        auto [ws, wv] = take("proj.weight");
        auto [bs, bv] = take("proj.bias");
        if (ws != enc.proj_weight()->shape() || bs != enc.proj_bias()->shape())
            throw BadHeader("load_checkpoint: projection block shape mismatch");
        std::copy(wv.begin(), wv.end(), enc.proj_weight()->data_mut().begin());
        std::copy(bv.begin(), bv.end(), enc.proj_bias()->data_mut().begin());
    }
    ckpt.encoder = std::move(enc);

    if (header.contains("num_classes")) {
        int c = header.at("num_classes").get<int>();
        auto [ws, wv] = take("head.weight");
        auto [bs, bv] = take("head.bias");
        (void)ws;
        (void)bs;
        ckpt.head = ClassifierHead::from_values(std::move(wv), std::move(bv), cfg.embed_dim, c);
    }
    if (header.contains("temperature"))
        ckpt.temperature_s =
            std::bit_cast<float>(header.at("temperature").at("s_bits").get<uint32_t>());
    if (header.contains("metadata")) ckpt.metadata = header.at("metadata");
    return ckpt;
}

} // namespace ulip
