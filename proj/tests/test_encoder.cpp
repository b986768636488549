#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "ulip/encoder.hpp"
#include "ulip/rng.hpp"

using namespace ulip;
namespace fs = std::filesystem;

namespace {

PointCloud random_cloud(size_t n, Rng& rng) {
    PointCloud pc;
    pc.points.reserve(n);
    for (size_t i = 0; i < n; ++i)
        pc.points.push_back({static_cast<float>(rng.uniform(-1.0, 1.0)),
                             static_cast<float>(rng.uniform(-1.0, 1.0)),
                             static_cast<float>(rng.uniform(-1.0, 1.0))});
    return pc;
}

bool params_equal(const Encoder& a, const Encoder& b) {
    auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
        std::span<const float> va = pa[i].tensor->data(), vb = pb[i].tensor->data();
        if (va.size() != vb.size()) return false;
        for (size_t j = 0; j < va.size(); ++j)
            if (va[j] != vb[j]) return false;
    }
    return true;
}

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.widths = {8, 12};
    cfg.embed_dim = 6;
    return cfg;
}

} // namespace

TEST_CASE("initialization is deterministic in the seed") {
    EncoderConfig cfg = small_config();
    Encoder a = Encoder::init(123, cfg);
    Encoder b = Encoder::init(123, cfg);
    CHECK(params_equal(a, b));

    Encoder c = Encoder::init(124, cfg);
    CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("weight variance follows the fan-in rule") {
    // uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) has variance 1/fan_in
    EncoderConfig cfg;
    cfg.widths = {64, 128};
    cfg.embed_dim = 32;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Encoder e = Encoder::init(seed, cfg);
        // second layer: fan_in 64, 64*128 samples
        std::span<const float> w = e.mlp_weights()[1]->data();
        double mean = 0.0;
        for (float v : w) mean += v;
        mean /= double(w.size());
        double var = 0.0;
        for (float v : w) var += (v - mean) * (v - mean);
        var /= double(w.size() - 1);
        double expected = 1.0 / 64.0;
        CHECK(var > expected * 0.8);
        CHECK(var < expected * 1.2);
    }
}

TEST_CASE("bad architectures are rejected") {
    EncoderConfig cfg;
    cfg.widths = {};
    CHECK_THROWS_AS(Encoder::init(0, cfg), BadArchitecture);
    cfg.widths = {16, 0};
    CHECK_THROWS_AS(Encoder::init(0, cfg), BadArchitecture);
    cfg.widths = {16};
    cfg.embed_dim = 1;
    CHECK_THROWS_AS(Encoder::init(0, cfg), BadArchitecture);
}

TEST_CASE("encoding is permutation invariant, unit-norm and pure") {
    EncoderConfig cfg = small_config();
    Rng gen(5, 0);
    for (uint64_t pset = 0; pset < 2; ++pset) {
        Encoder e = Encoder::init(pset, cfg);
        for (int trial = 0; trial < 10; ++trial) {
            PointCloud pc = random_cloud(64, gen);
            std::vector<float> emb = e.encode(pc);

            double norm = 0.0;
            for (float v : emb) norm += double(v) * v;
            CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);

            // purity
            CHECK(e.encode(pc) == emb);

            // shuffled copy encodes to bitwise-identical output
            PointCloud shuffled = pc;
            Rng sr(9, static_cast<uint64_t>(trial));
            sr.shuffle(shuffled.points);
            CHECK(e.encode(shuffled) == emb);
        }
    }
}

TEST_CASE("batched encoding matches per-sample encoding") {
    EncoderConfig cfg = small_config();
    Encoder e = Encoder::init(3, cfg);
    Rng gen(6, 0);

    std::vector<PointCloud> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(random_cloud(32, gen));

    ag::Graph g(false);
    ag::TensorPtr rows = e.encode_batch(g, batch);
    REQUIRE(rows->dim(0) == 8);
    for (int i = 0; i < 8; ++i) {
        std::vector<float> single = e.encode(batch[static_cast<size_t>(i)]);
        for (int j = 0; j < cfg.embed_dim; ++j)
            CHECK(std::abs(rows->data()[static_cast<size_t>(i * cfg.embed_dim + j)] -
                           single[static_cast<size_t>(j)]) < 1e-6);
    }

    // duplicate clouds produce identical rows
    std::vector<PointCloud> two = {batch[0], batch[0]};
    ag::TensorPtr pair = e.encode_batch(g, two);
    for (int j = 0; j < cfg.embed_dim; ++j) {
        CHECK(pair->data()[static_cast<size_t>(j)] ==
              pair->data()[static_cast<size_t>(cfg.embed_dim + j)]);
    }

    std::vector<PointCloud> ragged = {random_cloud(16, gen), random_cloud(17, gen)};
    CHECK_THROWS_AS(e.encode_batch(g, ragged), RaggedBatch);
    std::vector<PointCloud> empty;
    CHECK_THROWS_AS(e.encode_batch(g, empty), EmptyCloud);
}

TEST_CASE("encoder parameter JVPs match finite differences") {
    EncoderConfig cfg = small_config();
    Encoder e = Encoder::init(11, cfg);
    Rng gen(12, 0);
    PointCloud pc = random_cloud(16, gen);

    std::vector<ParamSlot> slots = e.parameters();

    // random unit direction over the whole parameter vector
    Rng dir_rng(13, 0);
    std::vector<std::vector<float>> direction;
    double dir_norm = 0.0;
    for (const ParamSlot& s : slots) {
        std::vector<float> d(static_cast<size_t>(s.tensor->size()));
        for (float& v : d) {
            v = static_cast<float>(dir_rng.normal());
            dir_norm += double(v) * v;
        }
        direction.push_back(std::move(d));
    }
    dir_norm = std::sqrt(dir_norm);
    for (auto& d : direction)
        for (float& v : d) v = static_cast<float>(double(v) / dir_norm);

    // analytic J*d via one backward pass per output coordinate
    int d_out = cfg.embed_dim;
    std::vector<double> analytic(static_cast<size_t>(d_out), 0.0);
    for (int k = 0; k < d_out; ++k) {
        ag::Graph g;
        ag::TensorPtr emb = e.encode_batch(g, std::span<const PointCloud>(&pc, 1));
        std::vector<float> onehot(static_cast<size_t>(d_out), 0.0f);
        onehot[static_cast<size_t>(k)] = 1.0f;
        ag::TensorPtr proj = ag::sum_all(g, ag::mul(g, emb, ag::Tensor::make({1, d_out}, onehot)));
        g.backward(proj);
        double acc = 0.0;
        for (size_t si = 0; si < slots.size(); ++si) {
            if (!slots[si].tensor->has_grad()) continue;
            std::span<const float> grad = slots[si].tensor->grad_view();
            for (size_t j = 0; j < grad.size(); ++j) acc += double(grad[j]) * direction[si][j];
        }
        analytic[static_cast<size_t>(k)] = acc;
        for (const ParamSlot& s : slots) s.tensor->zero_grad();
    }

    // central differences along the direction
    const double h = 1e-3;
    auto nudge = [&](double scale) {
        for (size_t si = 0; si < slots.size(); ++si) {
            std::span<float> w = slots[si].tensor->data_mut();
            for (size_t j = 0; j < w.size(); ++j)
                w[j] = static_cast<float>(double(w[j]) + scale * h * direction[si][j]);
        }
    };
    nudge(+1.0);
    std::vector<float> plus = e.encode(pc);
    nudge(-2.0);
    std::vector<float> minus = e.encode(pc);
    nudge(+1.0);

    double diff = 0.0, ref = 0.0;
    for (int k = 0; k < d_out; ++k) {
        double fd = (double(plus[static_cast<size_t>(k)]) - double(minus[static_cast<size_t>(k)])) / (2.0 * h);
        double delta = analytic[static_cast<size_t>(k)] - fd;
        diff += delta * delta;
        ref += fd * fd;
    }
    CHECK(std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12) < 1e-3);
}

TEST_CASE("embedding is stable under tiny parameter perturbations") {
    EncoderConfig cfg = small_config();
    Encoder e = Encoder::init(21, cfg);
    Rng gen(22, 0);
    PointCloud pc = random_cloud(64, gen);
    std::vector<float> base = e.encode(pc);

    for (const ParamSlot& s : e.parameters()) {
        std::span<float> w = s.tensor->data_mut();
        for (float& v : w) v = static_cast<float>(double(v) + 1e-6);
    }
    std::vector<float> moved = e.encode(pc);
    double change = 0.0;
    for (size_t i = 0; i < base.size(); ++i) {
        double d = double(base[i]) - moved[i];
        change += d * d;
    }
    CHECK(std::sqrt(change) <= 1e-3);
}

TEST_CASE("classifier head computes an affine map") {
    // zero weights: logits equal the bias
    {
        ClassifierHead head = ClassifierHead::from_values(std::vector<float>(4 * 3, 0.0f),
                                                          {0.5f, -1.0f, 2.0f}, 4, 3);
        std::vector<float> logits = head.classify(std::vector<float>{1, 2, 3, 4});
        CHECK(logits == std::vector<float>{0.5f, -1.0f, 2.0f});
    }
    // identity-like weight rows pick out the embedding prefix
    {
        std::vector<float> w(4 * 3, 0.0f);
        for (int j = 0; j < 3; ++j) w[static_cast<size_t>(j * 3 + j)] = 1.0f; // W[j][j] = 1
        ClassifierHead head = ClassifierHead::from_values(std::move(w), {0.1f, 0.2f, 0.3f}, 4, 3);
        std::vector<float> logits = head.classify(std::vector<float>{5, 6, 7, 8});
        CHECK(logits[0] == doctest::Approx(5.1).epsilon(1e-6));
        CHECK(logits[1] == doctest::Approx(6.2).epsilon(1e-6));
        CHECK(logits[2] == doctest::Approx(7.3).epsilon(1e-6));
    }
    // random case against a scalar dot-product oracle
    {
        Rng rng(31, 0);
        int d = 6, c = 4;
        std::vector<float> w(static_cast<size_t>(d * c)), b(static_cast<size_t>(c)),
            e(static_cast<size_t>(d));
        for (float& v : w) v = static_cast<float>(rng.uniform(-1, 1));
        for (float& v : b) v = static_cast<float>(rng.uniform(-1, 1));
        for (float& v : e) v = static_cast<float>(rng.uniform(-1, 1));
        ClassifierHead head = ClassifierHead::from_values(w, b, d, c);
        std::vector<float> logits = head.classify(e);
        for (int j = 0; j < c; ++j) {
            double acc = b[static_cast<size_t>(j)];
            for (int i = 0; i < d; ++i)
                acc += double(e[static_cast<size_t>(i)]) * double(w[static_cast<size_t>(i * c + j)]);
            CHECK(std::abs(double(logits[static_cast<size_t>(j)]) - acc) < 1e-6);
        }
        CHECK_THROWS_AS(head.classify(std::vector<float>{1.0f, 2.0f}), ShapeMismatch);
    }
}

TEST_CASE("checkpoints round-trip byte-exactly") {
    EncoderConfig cfg = small_config();
    Checkpoint ckpt;
    ckpt.encoder = Encoder::init(77, cfg);
    ckpt.head = ClassifierHead::init(78, cfg.embed_dim, 5);
    ckpt.temperature_s = 2.6593f;
    ckpt.metadata = {{"n_points", 256}, {"seed", 77}};

    fs::path dir = fs::temp_directory_path() / "ulip_ckpt_test";
    fs::create_directories(dir);
    fs::path f1 = dir / "a.ulip";
    fs::path f2 = dir / "b.ulip";

    save_checkpoint(f1, ckpt);
    Checkpoint loaded = load_checkpoint(f1);
    save_checkpoint(f2, loaded);

    std::ifstream s1(f1, std::ios::binary), s2(f2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(s1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(s2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    CHECK(params_equal(loaded.encoder, ckpt.encoder));
    REQUIRE(loaded.head.has_value());
    CHECK(loaded.head->num_classes() == 5);
    REQUIRE(loaded.temperature_s.has_value());
    CHECK(*loaded.temperature_s == 2.6593f);
    CHECK(loaded.metadata.at("n_points") == 256);

    // same inputs encode identically through a save/load cycle
    Rng gen(79, 0);
    PointCloud pc = random_cloud(32, gen);
    CHECK(ckpt.encoder.encode(pc) == loaded.encoder.encode(pc));

    fs::path bad = dir / "bad.ulip";
    std::ofstream bf(bad, std::ios::binary);
    bf << "WRONGMAG" << std::string(32, '\0');
    bf.close();
    CHECK_THROWS_AS(load_checkpoint(bad), BadMagic);

    fs::remove_all(dir);
}

TEST_CASE("clone gives an independent copy") {
    Encoder a = Encoder::init(91, small_config());
    Encoder b = a.clone();
    CHECK(params_equal(a, b));
    b.mlp_weights()[0]->data_mut()[0] += 1.0f;
    CHECK_FALSE(params_equal(a, b));
}
