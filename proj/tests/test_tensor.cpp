#include <doctest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "ulip/rng.hpp"
#include "ulip/tensor.hpp"

using namespace ulip;
using ag::TensorPtr;

namespace {

TensorPtr rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo, double hi,
                      bool requires_grad = true) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<float> v(static_cast<size_t>(n));
    for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return ag::Tensor::make(std::move(shape), std::move(v), requires_grad);
}

// weighted scalar projection so every op reduces to a scalar loss
std::vector<float> rand_weights(size_t n, Rng& rng) {
    std::vector<float> w(n);
    for (float& x : w) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return w;
}

double weighted(const std::vector<double>& y, const std::vector<float>& w) {
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) acc += y[i] * double(w[i]);
    return acc;
}

void expect_grad_close(const std::vector<TensorPtr>& inputs,
                       const std::function<TensorPtr(ag::Graph&)>& forward,
                       const std::function<double()>& reference, double tol = 1e-3) {
    ag::Graph g;
    TensorPtr loss = forward(g);
    g.backward(loss);
    for (const TensorPtr& t : inputs) {
        std::vector<double> fd = oracle::fd_grad(t->data_mut(), 1e-3, reference);
        CHECK(oracle::norm_rel_error(t->grad_view(), fd) < tol);
    }
}

std::vector<double> to_double(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

} // namespace

TEST_CASE("matmul basics") {
    ag::Graph g(false);
    auto eye = ag::Tensor::make({2, 2}, {1, 0, 0, 1});
    auto v = ag::Tensor::make({2, 1}, {3, 4});
    auto out = ag::matmul(g, eye, v);
    CHECK(out->data()[0] == 3.0f);
    CHECK(out->data()[1] == 4.0f);

    auto a = ag::Tensor::make({1, 1}, {2});
    auto b = ag::Tensor::make({1, 1}, {3});
    CHECK(ag::matmul(g, a, b)->item() == 6.0f);

    CHECK_THROWS_AS(ag::matmul(g, eye, ag::Tensor::make({3, 1}, {1, 2, 3})), ShapeMismatch);
}

TEST_CASE("matmul agrees with the triple-loop reference") {
    for (int seed = 0; seed < 5; ++seed) {
        Rng rng(static_cast<uint64_t>(seed), 11);
        auto a = rand_tensor({3, 3}, rng, -1.0, 1.0, false);
        auto b = rand_tensor({3, 3}, rng, -1.0, 1.0, false);
        ag::Graph g(false);
        auto c = ag::matmul(g, a, b);
        std::vector<double> ref = oracle::matmul(a->data(), b->data(), 3, 3, 3);
        for (int i = 0; i < 9; ++i)
            CHECK(std::abs(double(c->data()[static_cast<size_t>(i)]) - ref[static_cast<size_t>(i)]) < 1e-6);
    }
}

TEST_CASE("l2 normalization") {
    ag::Graph g(false);
    auto v = ag::Tensor::make({2}, {3, 4});
    auto unit = ag::l2_normalize_rows(g, v);
    CHECK(unit->data()[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(unit->data()[1] == doctest::Approx(0.8).epsilon(1e-6));

    // idempotence on an already-unit vector
    auto again = ag::l2_normalize_rows(g, unit);
    for (int i = 0; i < 2; ++i)
        CHECK(std::abs(again->data()[static_cast<size_t>(i)] - unit->data()[static_cast<size_t>(i)]) < 1e-7);

    Rng rng(7, 0);
    auto big = rand_tensor({512}, rng, -1.0, 1.0, false);
    auto n = ag::l2_normalize_rows(g, big);
    double norm = 0.0;
    for (float x : n->data()) norm += double(x) * x;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);

    CHECK_THROWS_AS(ag::l2_normalize_rows(g, ag::Tensor::make({3}, {0, 0, 0})),
                    DegenerateEmbedding);
}

TEST_CASE("backward fundamentals") {
    // d(x*x)/dx at 3 is 6
    {
        ag::Graph g;
        auto x = ag::Tensor::scalar(3.0f, true);
        auto y = ag::mul(g, x, x);
        g.backward(y);
        CHECK(x->grad_view()[0] == doctest::Approx(6.0).epsilon(1e-6));
    }
    // logsumexp of n equal logits: gradient 1/n each
    {
        ag::Graph g;
        auto x = ag::Tensor::make({1, 4}, {0.7f, 0.7f, 0.7f, 0.7f}, true);
        auto y = ag::sum_all(g, ag::logsumexp_rows(g, x));
        g.backward(y);
        for (float gv : x->grad_view()) CHECK(gv == doctest::Approx(0.25).epsilon(1e-6));
    }
    // loss must be scalar; a consumed graph cannot run twice
    {
        ag::Graph g;
        auto x = ag::Tensor::make({2}, {1, 2}, true);
        auto y = ag::scale_const(g, x, 2.0f);
        CHECK_THROWS_AS(g.backward(y), NonScalarLoss);
        auto s = ag::sum_all(g, y);
        g.backward(s);
        CHECK_THROWS_AS(g.backward(s), GraphAlreadyConsumed);
        g.reset();
    }
}

TEST_CASE("ops only record nodes when gradients are needed") {
    ag::Graph g;
    auto a = ag::Tensor::make({2, 2}, {1, 2, 3, 4}, false);
    auto b = ag::Tensor::make({2, 2}, {5, 6, 7, 8}, false);
    ag::matmul(g, a, b);
    CHECK(g.node_count() == 0);
    auto c = ag::Tensor::make({2, 2}, {1, 1, 1, 1}, true);
    ag::matmul(g, a, c);
    CHECK(g.node_count() == 1);
}

TEST_CASE("finite checks at op boundaries") {
    CHECK_THROWS_AS(ag::Tensor::make({1}, {std::numeric_limits<float>::quiet_NaN()}),
                    NonFiniteValue);
    ag::Graph g(false);
    auto big = ag::Tensor::make({1}, {200.0f});
    CHECK_THROWS_AS(ag::exp_op(g, big), NonFiniteValue); // exp(200) overflows float32
}

TEST_CASE("forward passes are pure") {
    Rng rng(3, 5);
    auto a = rand_tensor({4, 8}, rng, -2.0, 2.0, false);
    auto b = rand_tensor({8, 4}, rng, -2.0, 2.0, false);
    ag::Graph g(false);
    auto y1 = ag::relu(g, ag::matmul(g, a, b));
    auto y2 = ag::relu(g, ag::matmul(g, a, b));
    REQUIRE(y1->size() == y2->size());
    for (int64_t i = 0; i < y1->size(); ++i)
        CHECK(y1->data()[static_cast<size_t>(i)] == y2->data()[static_cast<size_t>(i)]);
}

TEST_CASE("rowgroup_max is bitwise invariant under row permutation and ties go low") {
    Rng rng(9, 2);
    auto x = rand_tensor({12, 5}, rng, -1.0, 1.0, false);
    ag::Graph g(false);
    auto base = ag::rowgroup_max(g, x, 4);

    // permute rows inside each group of 4
    std::vector<float> permuted(x->data().begin(), x->data().end());
    for (int grp = 0; grp < 3; ++grp) {
        std::vector<int> perm = {2, 0, 3, 1};
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 5; ++c)
                permuted[static_cast<size_t>((grp * 4 + r) * 5 + c)] =
                    x->data()[static_cast<size_t>((grp * 4 + perm[static_cast<size_t>(r)]) * 5 + c)];
    }
    auto shuffled = ag::Tensor::make({12, 5}, std::move(permuted));
    auto out = ag::rowgroup_max(g, shuffled, 4);
    for (int64_t i = 0; i < base->size(); ++i)
        CHECK(base->data()[static_cast<size_t>(i)] == out->data()[static_cast<size_t>(i)]);

    // tie: gradient routes to the lowest row index
    ag::Graph tg;
    auto tied = ag::Tensor::make({3, 1}, {0.5f, 0.5f, 0.2f}, true);
    auto m = ag::rowgroup_max(tg, tied, 3);
    tg.backward(ag::sum_all(tg, m));
    CHECK(tied->grad_view()[0] == 1.0f);
    CHECK(tied->grad_view()[1] == 0.0f);
    CHECK(tied->grad_view()[2] == 0.0f);
}

TEST_CASE("finite differences validate every primitive") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(static_cast<uint64_t>(seed), 77);

        // matmul
        {
            auto a = rand_tensor({3, 4}, rng, -1.0, 1.0);
            auto b = rand_tensor({4, 5}, rng, -1.0, 1.0);
            auto w = rand_weights(15, rng);
            expect_grad_close(
                {a, b},
                [&](ag::Graph& g) {
                    return ag::sum_all(g, ag::mul(g, ag::matmul(g, a, b),
                                                  ag::Tensor::make({3, 5}, w)));
                },
                [&]() { return weighted(oracle::matmul(a->data(), b->data(), 3, 4, 5), w); });
        }
        // matmul_nt (row dot products)
        {
            auto a = rand_tensor({3, 6}, rng, -1.0, 1.0);
            auto b = rand_tensor({4, 6}, rng, -1.0, 1.0);
            auto w = rand_weights(12, rng);
            expect_grad_close(
                {a, b},
                [&](ag::Graph& g) {
                    return ag::sum_all(g, ag::mul(g, ag::matmul_nt(g, a, b),
                                                  ag::Tensor::make({3, 4}, w)));
                },
                [&]() {
                    std::vector<double> y(12);
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 4; ++j) {
                            double acc = 0.0;
                            for (int c = 0; c < 6; ++c)
                                acc += double(a->data()[static_cast<size_t>(i * 6 + c)]) *
                                       double(b->data()[static_cast<size_t>(j * 6 + c)]);
                            y[static_cast<size_t>(i * 4 + j)] = acc;
                        }
                    return weighted(y, w);
                });
        }
        // add / sub / mul / scale_by / scale_const / bias_add
        {
            auto a = rand_tensor({4, 3}, rng, -1.0, 1.0);
            auto b = rand_tensor({4, 3}, rng, -1.0, 1.0);
            auto s = rand_tensor({1}, rng, 0.5, 2.0);
            auto bias = rand_tensor({3}, rng, -1.0, 1.0);
            auto w = rand_weights(12, rng);
            expect_grad_close(
                {a, b, s, bias},
                [&](ag::Graph& g) {
                    auto mixed = ag::add(g, ag::mul(g, a, b), ag::sub(g, a, b));
                    auto scaled = ag::scale_const(g, ag::scale_by(g, mixed, s), 0.75f);
                    return ag::sum_all(g, ag::mul(g, ag::bias_add(g, scaled, bias),
                                                  ag::Tensor::make({4, 3}, w)));
                },
                [&]() {
                    std::vector<double> y(12);
                    for (int i = 0; i < 12; ++i) {
                        double av = a->data()[static_cast<size_t>(i)];
                        double bv = b->data()[static_cast<size_t>(i)];
                        double val = (av * bv + (av - bv)) * double(s->data()[0]) * 0.75;
                        y[static_cast<size_t>(i)] = val + double(bias->data()[static_cast<size_t>(i % 3)]);
                    }
                    return weighted(y, w);
                });
        }
        // relu (inputs kept away from the kink), exp, log
        {
            auto x = rand_tensor({3, 4}, rng, 0.2, 1.5);
            std::span<float> xv = x->data_mut();
            for (size_t i = 0; i < xv.size(); ++i)
                if (i % 2 == 0) xv[i] = -xv[i]; // mixed signs, |x| >= 0.2
            auto pos = rand_tensor({3, 4}, rng, 0.3, 2.0);
            auto w = rand_weights(12, rng);
            expect_grad_close(
                {x, pos},
                [&](ag::Graph& g) {
                    auto y = ag::add(g, ag::relu(g, x), ag::log_op(g, ag::exp_op(g, pos)));
                    return ag::sum_all(g, ag::mul(g, y, ag::Tensor::make({3, 4}, w)));
                },
                [&]() {
                    std::vector<double> y(12);
                    for (int i = 0; i < 12; ++i) {
                        double xv2 = x->data()[static_cast<size_t>(i)];
                        double pv = pos->data()[static_cast<size_t>(i)];
                        y[static_cast<size_t>(i)] = (xv2 > 0.0 ? xv2 : 0.0) + std::log(std::exp(pv));
                    }
                    return weighted(y, w);
                });
        }
        // rowgroup_max (margins enforced), mean_all
        {
            auto x = rand_tensor({8, 3}, rng, -1.0, 1.0);
            std::span<float> xv = x->data_mut();
            // spread each group column so the max has a clear margin
            for (int grp = 0; grp < 2; ++grp)
                for (int c = 0; c < 3; ++c)
                    for (int r = 0; r < 4; ++r)
                        xv[static_cast<size_t>((grp * 4 + r) * 3 + c)] +=
                            static_cast<float>(0.3 * r);
            expect_grad_close(
                {x},
                [&](ag::Graph& g) { return ag::mean_all(g, ag::rowgroup_max(g, x, 4)); },
                [&]() {
                    double acc = 0.0;
                    for (int grp = 0; grp < 2; ++grp)
                        for (int c = 0; c < 3; ++c) {
                            double best = -1e300;
                            for (int r = 0; r < 4; ++r)
                                best = std::max(best,
                                                double(x->data()[static_cast<size_t>((grp * 4 + r) * 3 + c)]));
                            acc += best;
                        }
                    return acc / 6.0;
                });
        }
        // l2_normalize_rows
        {
            auto x = rand_tensor({3, 5}, rng, 0.3, 1.5);
            auto w = rand_weights(15, rng);
            expect_grad_close(
                {x},
                [&](ag::Graph& g) {
                    return ag::sum_all(g, ag::mul(g, ag::l2_normalize_rows(g, x),
                                                  ag::Tensor::make({3, 5}, w)));
                },
                [&]() {
                    std::vector<double> y(15);
                    for (int i = 0; i < 3; ++i) {
                        double norm = 0.0;
                        for (int c = 0; c < 5; ++c) {
                            double v = x->data()[static_cast<size_t>(i * 5 + c)];
                            norm += v * v;
                        }
                        norm = std::sqrt(norm);
                        for (int c = 0; c < 5; ++c)
                            y[static_cast<size_t>(i * 5 + c)] =
                                double(x->data()[static_cast<size_t>(i * 5 + c)]) / norm;
                    }
                    return weighted(y, w);
                });
        }
        // logsumexp_rows, transpose, trace_sum
        {
            auto x = rand_tensor({4, 4}, rng, -2.0, 2.0);
            auto w = rand_weights(4, rng);
            expect_grad_close(
                {x},
                [&](ag::Graph& g) {
                    auto lse = ag::logsumexp_rows(g, ag::transpose(g, x));
                    auto proj = ag::sum_all(g, ag::mul(g, lse, ag::Tensor::make({4}, w)));
                    return ag::add(g, proj, ag::trace_sum(g, x));
                },
                [&]() {
                    std::vector<double> y(4);
                    for (int i = 0; i < 4; ++i) {
                        std::vector<double> col(4);
                        for (int r = 0; r < 4; ++r)
                            col[static_cast<size_t>(r)] = x->data()[static_cast<size_t>(r * 4 + i)];
                        y[static_cast<size_t>(i)] = oracle::logsumexp(col);
                    }
                    double tr = 0.0;
                    for (int i = 0; i < 4; ++i) tr += x->data()[static_cast<size_t>(i * 4 + i)];
                    return weighted(y, w) + tr;
                });
        }
        // cross_entropy
        {
            auto logits = rand_tensor({5, 4}, rng, -2.0, 2.0);
            std::vector<int> labels;
            for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.below(4)));
            expect_grad_close(
                {logits},
                [&](ag::Graph& g) { return ag::cross_entropy(g, logits, labels); },
                [&]() {
                    double acc = 0.0;
                    for (int i = 0; i < 5; ++i) {
                        std::vector<double> row = to_double(
                            logits->data().subspan(static_cast<size_t>(i) * 4, 4));
                        acc += oracle::logsumexp(row) - row[static_cast<size_t>(labels[static_cast<size_t>(i)])];
                    }
                    return acc / 5.0;
                });
        }
    }
}
