#include "ulip/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "ulip/contrastive.hpp"
#include "ulip/rng.hpp"
#include "ulip/tensor.hpp"

namespace ulip {

namespace {

ag::TensorPtr random_unit_rows(int64_t n, int64_t d, Rng& rng, bool requires_grad) {
    std::vector<float> v(static_cast<size_t>(n * d));
    for (float& x : v) x = static_cast<float>(rng.normal());
    ag::Graph g(false);
    ag::TensorPtr raw = ag::Tensor::make({n, d}, std::move(v));
    ag::TensorPtr unit = ag::l2_normalize_rows(g, raw);
    return ag::Tensor::make({n, d}, std::vector<float>(unit->data().begin(), unit->data().end()),
                            requires_grad);
}

// central differences of `forward` w.r.t. every coordinate of `t`
std::vector<double> fd_grad(const ag::TensorPtr& t, double h,
                            const std::function<double()>& forward) {
    std::vector<double> out(static_cast<size_t>(t->size()));
    std::span<float> data = t->data_mut();
    for (size_t i = 0; i < data.size(); ++i) {
        float saved = data[i];
        float plus = static_cast<float>(double(saved) + h);
        float minus = static_cast<float>(double(saved) - h);
        data[i] = plus;
        double f_plus = forward();
        data[i] = minus;
        double f_minus = forward();
        data[i] = saved;
        out[i] = (f_plus - f_minus) / (double(plus) - double(minus));
    }
    return out;
}

double norm_rel_error(std::span<const float> analytic, std::span<const double> fd) {
    double diff = 0.0, ref = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
        double d = double(analytic[i]) - fd[i];
        diff += d * d;
        ref += fd[i] * fd[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

} // namespace

GradCheckReport gradcheck_losses(int num_seeds, double h) {
    GradCheckReport report;
    auto note = [&](const std::string& name, double err) {
        report.entries.push_back({name, err});
        report.max_rel_error = std::max(report.max_rel_error, err);
    };

    for (int seed = 0; seed < num_seeds; ++seed) {
        Rng rng(static_cast<uint64_t>(seed), stream_id("gradcheck"));
        const int64_t n = 4, d = 16;

        // pairwise loss: inputs ha, hb and the temperature
        {
            ag::TensorPtr ha = random_unit_rows(n, d, rng, true);
            ag::TensorPtr hb = random_unit_rows(n, d, rng, true);
            Temperature temp = Temperature::init(static_cast<float>(rng.uniform(5.0, 30.0)));

            ag::Graph g;
            ag::TensorPtr loss = contrastive_loss(g, ha, hb, temp);
            g.backward(loss);

            auto forward = [&]() {
                ag::Graph ng(false);
                return double(contrastive_loss(ng, ha, hb, temp)->item());
            };
            std::string tag = "pair/seed" + std::to_string(seed);
            note(tag + "/left", norm_rel_error(ha->grad_view(), fd_grad(ha, h, forward)));
            note(tag + "/right", norm_rel_error(hb->grad_view(), fd_grad(hb, h, forward)));
            note(tag + "/temperature",
                 norm_rel_error(temp.s()->grad_view(), fd_grad(temp.s(), h, forward)));
        }

        // combined loss over three modalities, all pairs active
        {
            ag::TensorPtr hi = random_unit_rows(n, d, rng, true);
            ag::TensorPtr hs = random_unit_rows(n, d, rng, true);
            ag::TensorPtr hp = random_unit_rows(n, d, rng, true);
            Temperature temp = Temperature::init(static_cast<float>(rng.uniform(5.0, 30.0)));
            LossCoefficients coefs{1.0f, 1.0f, 1.0f};

            ag::Graph g;
            ag::TensorPtr loss = final_loss(g, hi, hs, hp, coefs, temp);
            g.backward(loss);

            auto forward = [&]() {
                ag::Graph ng(false);
                return double(final_loss(ng, hi, hs, hp, coefs, temp)->item());
            };
            std::string tag = "combined/seed" + std::to_string(seed);
            note(tag + "/image", norm_rel_error(hi->grad_view(), fd_grad(hi, h, forward)));
            note(tag + "/text", norm_rel_error(hs->grad_view(), fd_grad(hs, h, forward)));
            note(tag + "/point", norm_rel_error(hp->grad_view(), fd_grad(hp, h, forward)));
            note(tag + "/temperature",
                 norm_rel_error(temp.s()->grad_view(), fd_grad(temp.s(), h, forward)));
        }
    }
    return report;
}

} // namespace ulip
