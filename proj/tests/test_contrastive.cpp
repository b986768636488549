#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "ulip/contrastive.hpp"
#include "ulip/renderer.hpp"
#include "ulip/rng.hpp"

using namespace ulip;

namespace {

ag::TensorPtr unit_rows(int64_t n, int64_t d, Rng& rng, bool requires_grad = false) {
    std::vector<float> v(static_cast<size_t>(n * d));
    for (float& x : v) x = static_cast<float>(rng.normal());
    ag::Graph g(false);
    auto unit = ag::l2_normalize_rows(g, ag::Tensor::make({n, d}, std::move(v)));
    return ag::Tensor::make({n, d}, std::vector<float>(unit->data().begin(), unit->data().end()),
                            requires_grad);
}

// |a - b| <= tol * max(1, |b|): float32 cannot resolve 1e-6 absolutely
// once values exceed ~16, so the tolerance turns relative there
bool close_mixed(double a, double b, double tol = 1e-6) {
    return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

} // namespace

TEST_CASE("a single-pair batch has exactly zero loss") {
    Rng rng(1, 0);
    auto ha = unit_rows(1, 16, rng);
    auto hb = unit_rows(1, 16, rng);
    Temperature temp = Temperature::init();
    ag::Graph g(false);
    CHECK(contrastive_loss(g, ha, hb, temp)->item() == 0.0f);
}

TEST_CASE("the two loss halves make it symmetric in its arguments") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, 3);
        auto ha = unit_rows(6, 24, rng);
        auto hb = unit_rows(6, 24, rng);
        Temperature temp = Temperature::init();
        ag::Graph g(false);
        float ab = contrastive_loss(g, ha, hb, temp)->item();
        float ba = contrastive_loss(g, hb, ha, temp)->item();
        CHECK(close_mixed(ab, ba));
    }
}

TEST_CASE("vectorized loss equals the scalar double-loop reference") {
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(static_cast<uint64_t>(trial), 500);
        int64_t n = 1 + static_cast<int64_t>(rng.below(8));
        int64_t d = 2 + static_cast<int64_t>(rng.below(31));
        auto ha = unit_rows(n, d, rng);
        auto hb = unit_rows(n, d, rng);
        float inv_tau = static_cast<float>(rng.uniform(5.0, 30.0));
        Temperature temp = Temperature::init(inv_tau);

        ag::Graph g(false);
        float impl = contrastive_loss(g, ha, hb, temp)->item();
        double ref = oracle::infonce_pair(ha->data(), hb->data(), static_cast<int>(n),
                                          static_cast<int>(d), double(temp.inv_tau_value()));
        CHECK(close_mixed(impl, ref));

        float impl_mean = contrastive_loss(g, ha, hb, temp, true)->item();
        CHECK(close_mixed(impl_mean, ref / double(n)));
    }
}

TEST_CASE("adding a constant to every logit leaves the loss unchanged") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, 9);
        auto logits = unit_rows(5, 5, rng); // any square matrix works here
        ag::Graph g(false);
        float base = symmetric_infonce(g, logits)->item();

        std::vector<float> shifted_values(logits->data().begin(), logits->data().end());
        float c = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (float& v : shifted_values) v += c;
        auto shifted = ag::Tensor::make({5, 5}, std::move(shifted_values));
        float moved = symmetric_infonce(g, shifted)->item();
        CHECK(close_mixed(moved, base));
    }
}

TEST_CASE("loss rejects bad inputs") {
    Rng rng(4, 0);
    auto ha = unit_rows(4, 8, rng);
    auto hb = unit_rows(5, 8, rng);
    Temperature temp = Temperature::init();
    ag::Graph g(false);
    CHECK_THROWS_AS(contrastive_loss(g, ha, hb, temp), ShapeMismatch);

    std::vector<float> big(4 * 8, 0.5f);
    auto nonunit = ag::Tensor::make({4, 8}, std::move(big));
    CHECK_THROWS_AS(contrastive_loss(g, ha, nonunit, temp), NonUnitRows);
}

TEST_CASE("combined loss composes the three pairs") {
    Rng rng(6, 1);
    auto hi = unit_rows(4, 16, rng);
    auto hs = unit_rows(4, 16, rng);
    auto hp = unit_rows(4, 16, rng, true);
    Temperature temp = Temperature::init();

    // all coefficients zero: loss 0, zero gradients
    {
        ag::Graph g;
        LossParts parts;
        ag::TensorPtr loss = final_loss(g, hi, hs, hp, {0, 0, 0}, temp, false, &parts);
        CHECK(loss->item() == 0.0f);
        g.backward(loss);
        CHECK_FALSE(hp->has_grad());
        CHECK_FALSE(temp.s()->has_grad());
        hp->zero_grad();
        temp.s()->zero_grad();
    }
    // defaults: alpha 0, beta = theta = 1 equals the sum of the two parts
    {
        ag::Graph g(false);
        LossParts parts;
        float total = final_loss(g, hi, hs, hp, LossCoefficients{}, temp, false, &parts)->item();
        float ip = contrastive_loss(g, hi, hp, temp)->item();
        float ps = contrastive_loss(g, hp, hs, temp)->item();
        CHECK(close_mixed(total, double(ip) + double(ps)));
        CHECK(parts.l_ip == ip);
        CHECK(parts.l_ps == ps);
        CHECK(parts.l_is > 0.0f); // reported for the trace even with alpha 0
    }
    // alpha-only with frozen anchors: value present, no encoder gradient
    {
        ag::Graph g;
        LossParts parts;
        ag::TensorPtr loss = final_loss(g, hi, hs, hp, {1, 0, 0}, temp, false, &parts);
        CHECK(loss->item() > 0.0f);
        g.backward(loss);
        CHECK_FALSE(hp->has_grad());
        CHECK(temp.s()->has_grad()); // temperature still learns from L(I,S)
        temp.s()->zero_grad();
    }
}

TEST_CASE("combined-loss gradients match the double-loop oracle differences") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(seed, 700);
        auto hi = unit_rows(4, 16, rng, true);
        auto hs = unit_rows(4, 16, rng, true);
        auto hp = unit_rows(4, 16, rng, true);
        Temperature temp = Temperature::init(static_cast<float>(rng.uniform(5.0, 30.0)));

        ag::Graph g;
        ag::TensorPtr loss = final_loss(g, hi, hs, hp, {1, 1, 1}, temp);
        g.backward(loss);

        auto ref = [&]() {
            return oracle::combined_loss(hi->data(), hs->data(), hp->data(), 4, 16, 1.0, 1.0,
                                         1.0, double(temp.inv_tau_value()));
        };
        for (const ag::TensorPtr& t : {hi, hs, hp}) {
            std::vector<double> fd = oracle::fd_grad(t->data_mut(), 1e-3, ref);
            CHECK(oracle::norm_rel_error(t->grad_view(), fd) < 1e-3);
        }
        std::vector<double> fd_s = oracle::fd_grad(temp.s()->data_mut(), 1e-3, ref);
        CHECK(oracle::norm_rel_error(temp.s()->grad_view(), fd_s) < 1e-3);
    }
}

TEST_CASE("temperature state and clamping") {
    Temperature temp = Temperature::init(14.285f, 100.0f);
    CHECK(temp.inv_tau_value() == doctest::Approx(14.285).epsilon(1e-5));
    temp.set_s(std::log(500.0f));
    temp.clamp();
    CHECK(temp.inv_tau_value() <= 100.0f + 1e-4);
    CHECK(temp.inv_tau_value() > 0.0f);
    CHECK_THROWS_AS(Temperature::init(-1.0f), Error);
}

TEST_CASE("adamw update rules") {
    AdamWConfig cfg;
    cfg.lr = 0.01f;
    cfg.weight_decay = 0.0f;

    // zero gradient, zero decay: parameters are a fixed point
    {
        auto p = ag::Tensor::make({3}, {1.0f, -2.0f, 0.5f}, true);
        AdamW opt({{p, true}}, cfg);
        opt.step();
        CHECK(p->data()[0] == 1.0f);
        CHECK(p->data()[1] == -2.0f);
        CHECK(p->data()[2] == 0.5f);
    }
    // first step matches the closed form -lr * g / (|g| + eps)
    {
        auto p = ag::Tensor::make({2}, {0.3f, -0.7f}, true);
        std::span<float> grad = p->grad();
        grad[0] = 0.2f;
        grad[1] = -0.4f;
        AdamW opt({{p, false}}, cfg);
        opt.step();
        double e0 = 0.3 - 0.01 * 0.2 / (std::abs(0.2) + double(cfg.eps));
        double e1 = -0.7 - 0.01 * (-0.4) / (std::abs(-0.4) + double(cfg.eps));
        CHECK(double(p->data()[0]) == doctest::Approx(e0).epsilon(1e-5));
        CHECK(double(p->data()[1]) == doctest::Approx(e1).epsilon(1e-5));
    }
    // decoupled decay in isolation: scale by (1 - lr*wd), flagged slots only
    {
        AdamWConfig wd = cfg;
        wd.weight_decay = 0.1f;
        auto decayed = ag::Tensor::make({2}, {1.0f, -4.0f}, true);
        auto spared = ag::Tensor::make({1}, {2.0f}, true);
        AdamW opt({{decayed, true}, {spared, false}}, wd);
        opt.step();
        float scale = 1.0f - 0.01f * 0.1f;
        CHECK(decayed->data()[0] == doctest::Approx(1.0f * scale).epsilon(1e-6));
        CHECK(decayed->data()[1] == doctest::Approx(-4.0f * scale).epsilon(1e-6));
        CHECK(spared->data()[0] == 2.0f);
    }
}

TEST_CASE("pretrain with zero epochs returns the initialization bitwise") {
    fixture::Bench bench = fixture::make_bench(3, 4, 1, 128, 16, 42, 0.2f, 0.3f, "noop");

    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 4;
    cfg.n_points = 64;
    cfg.seed = 11;
    cfg.encoder.widths = {8, 12};
    cfg.encoder.embed_dim = 16;

    PretrainResult run = pretrain(bench.data, bench.anchors.text, bench.anchors.image, cfg);
    Encoder fresh = Encoder::init(cfg.seed, cfg.encoder);
    auto pa = run.encoder.parameters();
    auto pb = fresh.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        std::span<const float> va = pa[i].tensor->data(), vb = pb[i].tensor->data();
        REQUIRE(va.size() == vb.size());
        for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
    }
    CHECK(run.trace.empty());
    CHECK(run.temperature.inv_tau_value() == doctest::Approx(14.285).epsilon(1e-5));
}

TEST_CASE("pretrain is deterministic and leaves anchors untouched") {
    fixture::Bench bench = fixture::make_bench(3, 6, 2, 128, 16, 77, 0.2f, 0.3f, "det");

    std::vector<float> text_before(bench.anchors.text.raw_values().begin(),
                                   bench.anchors.text.raw_values().end());
    std::vector<float> image_before(bench.anchors.image.raw_values().begin(),
                                    bench.anchors.image.raw_values().end());

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.n_points = 64;
    cfg.learning_rate = 1e-3f;
    cfg.seed = 5;
    cfg.encoder.widths = {8, 12};
    cfg.encoder.embed_dim = 16;

    PretrainResult a = pretrain(bench.data, bench.anchors.text, bench.anchors.image, cfg);
    PretrainResult b = pretrain(bench.data, bench.anchors.text, bench.anchors.image, cfg);

    REQUIRE(a.trace.size() == b.trace.size());
    REQUIRE(!a.trace.empty());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(std::abs(a.trace[i].l_final - b.trace[i].l_final) <= 1e-6);
        CHECK(a.trace[i].iteration == b.trace[i].iteration);
        CHECK(a.trace[i].epoch == b.trace[i].epoch);
    }

    // the frozen contract: anchor rows byte-identical after training
    std::span<const float> text_after = bench.anchors.text.raw_values();
    std::span<const float> image_after = bench.anchors.image.raw_values();
    REQUIRE(text_after.size() == text_before.size());
    for (size_t i = 0; i < text_after.size(); ++i) CHECK(text_after[i] == text_before[i]);
    for (size_t i = 0; i < image_after.size(); ++i) CHECK(image_after[i] == image_before[i]);

    // the loss should be moving downward even in a tiny run
    CHECK(a.trace.back().l_final < a.trace.front().l_final);
}

TEST_CASE("pretrain skips records with missing modalities") {
    fixture::Bench bench = fixture::make_bench(3, 4, 1, 128, 16, 99, 0.2f, 0.3f, "skip");
    // one record references a word with no anchor rows anywhere
    bench.data.records[0].words = {"unheard_of_thing"};

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.n_points = 64;
    cfg.seed = 2;
    cfg.encoder.widths = {8, 12};
    cfg.encoder.embed_dim = 16;

    PretrainResult run = pretrain(bench.data, bench.anchors.text, bench.anchors.image, cfg);
    CHECK(run.skipped_records == 1);
    CHECK(run.iterations > 0);
}

TEST_CASE("training defaults are pinned") {
    TrainConfig cfg;
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.learning_rate == 1e-3f);
    CHECK(cfg.epochs == 250);
    CHECK(cfg.n_points == 1024);
    CHECK(cfg.optimizer.beta1 == 0.9f);
    CHECK(cfg.optimizer.beta2 == 0.999f);
    CHECK(cfg.optimizer.eps == 1e-8f);
    CHECK(cfg.optimizer.weight_decay == 0.05f);
    CHECK(cfg.coefs.alpha == 0.0f);
    CHECK(cfg.coefs.beta == 1.0f);
    CHECK(cfg.coefs.theta == 1.0f);
    CHECK(cfg.init_inv_tau == 14.285f);
    CHECK(cfg.temperature_clamp == 100.0f);
    CHECK_FALSE(cfg.mean_reduction);
    CHECK_FALSE(cfg.cosine_lr);

    AugmentConfig aug;
    CHECK(aug.drop_max_ratio == 0.4f);
    CHECK(aug.scale_lo == 0.8f);
    CHECK(aug.scale_hi == 1.25f);
    CHECK(aug.shift_max == 0.1f);
    CHECK(aug.rot_sigma == 0.06f);
    CHECK(aug.rot_clip == 0.18f);

    EncoderConfig enc;
    CHECK(enc.widths == std::vector<int>{64, 128, 256});
    CHECK(enc.embed_dim == 512);

    CameraRing ring;
    CHECK(ring.view_count == 30);
    CHECK(ring.step_deg == 12.0);
}

TEST_CASE("trace csv carries the declared columns") {
    std::vector<TraceRow> trace = {{0, 0, 1.5f, 2.5f, 3.5f, 4.0f, 14.0f}};
    std::filesystem::path file = std::filesystem::temp_directory_path() / "ulip_trace_test.csv";
    write_trace_csv(file, trace);
    std::ifstream f(file);
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    CHECK(header == "iteration,epoch,L_IP,L_PS,L_IS,L_final,inv_temperature");
    CHECK(row.substr(0, 4) == "0,0,");
    std::filesystem::remove(file);
}
