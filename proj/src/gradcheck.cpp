#include "aila/gradcheck.hpp"

#include <cmath>

#include "aila/model.hpp"
#include "aila/train.hpp"

namespace aila {

double max_grad_error(const std::function<Tensor()>& forward, std::span<Tensor> inspect,
                      double step) {
    for (Tensor& t : inspect) {
        t.set_requires_grad(true);
        t.ensure_grad();
        t.zero_grad();
    }

    std::vector<std::vector<double>> autodiff;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = forward();
        tape.backward(loss);
    }
    for (Tensor& t : inspect) autodiff.push_back(t.grad());

    double worst = 0.0;
    for (std::size_t ti = 0; ti < inspect.size(); ++ti) {
        Tensor& t = inspect[ti];
        for (std::size_t e = 0; e < t.numel(); ++e) {
            const double saved = t.values()[e];
            t.values()[e] = saved + step;
            const double f_plus = forward().item();
            t.values()[e] = saved - step;
            const double f_minus = forward().item();
            t.values()[e] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double ad = autodiff[ti][e];
            const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

namespace {

constexpr double kOpTol = 1e-5;
constexpr double kLayerNormTol = 1e-4;
constexpr double kModelTol = 1e-4;

// uniform values with |v| >= 0.2, keeping relu/select kinks away from the
// finite-difference step
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> mag(0.2, 1.2);
    std::uniform_int_distribution<int> sign(0, 1);
    for (double& v : t.values()) v = (sign(rng) ? 1.0 : -1.0) * mag(rng);
    return t;
}

GradCheckResult run_case(const std::string& name, double tol,
                         const std::function<Tensor()>& forward, std::span<Tensor> inspect) {
    GradCheckResult r;
    r.name = name;
    r.tol = tol;
    r.max_err = max_grad_error(forward, inspect);
    r.pass = r.max_err <= tol;
    return r;
}

}  // namespace

std::vector<GradCheckResult> gradcheck_ops(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;

    {
        Tensor a = away_from_zero({3, 4}, rng);
        Tensor b = away_from_zero({4, 2}, rng);
        Tensor w = away_from_zero({3, 2}, rng);
        Tensor ins[] = {a, b};
        out.push_back(run_case("matmul", kOpTol,
                               [&] { return sum_all(mul(matmul(a, b), w)); }, ins));
    }
    {
        Tensor a = away_from_zero({2, 5}, rng);
        Tensor b = away_from_zero({2, 5}, rng);
        Tensor w = away_from_zero({2, 5}, rng);
        Tensor ins[] = {a, b};
        out.push_back(run_case("add", kOpTol, [&] { return sum_all(mul(add(a, b), w)); }, ins));
        out.push_back(run_case("sub", kOpTol, [&] { return sum_all(mul(sub(a, b), w)); }, ins));
        out.push_back(run_case("mul", kOpTol, [&] { return sum_all(mul(mul(a, b), w)); }, ins));
        Tensor one[] = {a};
        out.push_back(
            run_case("scale", kOpTol, [&] { return sum_all(mul(scale(a, -1.7), w)); }, one));
        out.push_back(run_case("relu", kOpTol, [&] { return sum_all(mul(relu(a), w)); }, one));
        out.push_back(
            run_case("sigmoid", kOpTol, [&] { return sum_all(mul(sigmoid(a), w)); }, one));
        out.push_back(run_case("tanh", kOpTol, [&] { return sum_all(mul(tanh(a), w)); }, one));
        out.push_back(
            run_case("softmax", kOpTol, [&] { return sum_all(mul(softmax(a, 1), w)); }, one));
        out.push_back(run_case("mean_all", kOpTol, [&] { return mean_all(mul(a, w)); }, one));
    }
    {
        Tensor a = away_from_zero({3, 4}, rng);
        Tensor bias = away_from_zero({4}, rng);
        Tensor w = away_from_zero({3, 4}, rng);
        Tensor ins[] = {a, bias};
        out.push_back(run_case("add_bias", kOpTol,
                               [&] { return sum_all(mul(add(a, bias), w)); }, ins));
    }
    {
        Tensor x = away_from_zero({4, 8}, rng);
        Tensor gain = away_from_zero({8}, rng);
        Tensor bias = away_from_zero({8}, rng);
        Tensor w = away_from_zero({4, 8}, rng);
        Tensor ins[] = {x, gain, bias};
        out.push_back(run_case("layer_norm", kLayerNormTol,
                               [&] { return sum_all(mul(layer_norm(x, gain, bias), w)); }, ins));
    }
    {
        Tensor a = away_from_zero({2, 3}, rng);
        Tensor b = away_from_zero({2, 2}, rng);
        Tensor w = away_from_zero({2, 5}, rng);
        Tensor ins[] = {a, b};
        out.push_back(run_case("concat", kOpTol,
                               [&] { return sum_all(mul(concat(a, b, 1), w)); }, ins));
        Tensor ws = away_from_zero({2, 2}, rng);
        Tensor one[] = {a};
        out.push_back(run_case("slice", kOpTol,
                               [&] { return sum_all(mul(slice(a, 1, 1, 2), ws)); }, one));
    }
    {
        Tensor a = away_from_zero({3, 4}, rng);
        Tensor w0 = away_from_zero({4}, rng);
        Tensor w1 = away_from_zero({3, 1}, rng);
        Tensor one[] = {a};
        out.push_back(run_case("sum_axis", kOpTol,
                               [&] { return sum_all(mul(sum_axis(a, 0), w0)); }, one));
        out.push_back(run_case("mean_axis", kOpTol,
                               [&] { return sum_all(mul(mean_axis(a, 1, true), w1)); }, one));
    }
    {
        Tensor a = away_from_zero({3, 1}, rng);
        Tensor w = away_from_zero({3, 4}, rng);
        Tensor one[] = {a};
        out.push_back(run_case("expand_last", kOpTol,
                               [&] { return sum_all(mul(expand_last(a, 4), w)); }, one));
    }
    {
        Tensor a = away_from_zero({1, 5}, rng);
        Tensor w = away_from_zero({4, 5}, rng);
        Tensor one[] = {a};
        out.push_back(run_case("repeat_rows", kOpTol,
                               [&] { return sum_all(mul(repeat_rows(a, 4), w)); }, one));
    }
    {
        Tensor a = away_from_zero({2, 3, 4}, rng);
        Tensor w = away_from_zero({2, 4}, rng);
        const std::vector<std::size_t> steps = {0, 2};
        Tensor one[] = {a};
        out.push_back(run_case("select_time", kOpTol,
                               [&] { return sum_all(mul(select_time(a, steps), w)); }, one));
    }
    {
        Tensor a = away_from_zero({2, 6}, rng);
        Tensor w = away_from_zero({3, 4}, rng);
        Tensor one[] = {a};
        out.push_back(run_case("reshape", kOpTol,
                               [&] { return sum_all(mul(reshape(a, {3, 4}), w)); }, one));
    }
    {
        // three chained cell steps, per the composite-recurrence contract
        const std::size_t b = 2, in = 3, h = 4;
        LstmParams p;
        p.hidden = h;
        p.w = away_from_zero({in + h, 4 * h}, rng);
        p.b = away_from_zero({4 * h}, rng);
        Tensor x1 = away_from_zero({b, in}, rng);
        Tensor x2 = away_from_zero({b, in}, rng);
        Tensor x3 = away_from_zero({b, in}, rng);
        Tensor w = away_from_zero({b, h}, rng);
        Tensor ins[] = {p.w, p.b, x1, x2, x3};
        out.push_back(run_case("lstm_cell_step", kOpTol,
                               [&] {
                                   Tensor h_t(Shape{b, h}, 0.0);
                                   Tensor c_t(Shape{b, h}, 0.0);
                                   for (const Tensor& x : {x1, x2, x3}) {
                                       auto [hn, cn] = lstm_cell_step(x, h_t, c_t, p);
                                       h_t = hn;
                                       c_t = cn;
                                   }
                                   return sum_all(mul(h_t, w));
                               },
                               ins));
    }
    {
        Tensor pred = away_from_zero({4, 1}, rng);
        Tensor target = away_from_zero({4, 1}, rng);
        Tensor one[] = {pred};
        out.push_back(run_case("mse_loss", kOpTol, [&] { return mse_loss(pred, target); }, one));

        Tensor labels(Shape{4, 1}, {1.0, 0.0, 1.0, 1.0});
        out.push_back(
            run_case("binary_ce", kOpTol, [&] { return binary_ce(pred, labels); }, one));

        Tensor logits = away_from_zero({4, 3}, rng);
        Tensor cls(Shape{4, 1}, {0.0, 2.0, 1.0, 2.0});
        Tensor lone[] = {logits};
        out.push_back(run_case("multiclass_ce", kOpTol,
                               [&] { return multiclass_ce(logits, cls); }, lone));
    }
    return out;
}

namespace {

GradCheckResult model_case(const std::string& name, const ModelConfig& cfg, std::uint64_t seed,
                           std::mt19937_64& rng) {
    Model model = Model::build(cfg, seed);
    const std::size_t batch = 2, t = 3;
    Tensor x = cfg.base == BaseKind::lstm ? away_from_zero({batch, t, cfg.input_dim}, rng)
                                          : away_from_zero({batch, cfg.input_dim}, rng);
    Tensor y = away_from_zero({batch, 1}, rng);

    std::vector<Tensor> params;
    for (auto& [pname, tensor] : model.registry()) params.push_back(tensor);
    return run_case(name, kModelTol,
                    [&] { return mse_loss(model.forward(x), y); }, params);
}

}  // namespace

std::vector<GradCheckResult> gradcheck_models(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;
    for (const Variant variant : {Variant::aila1, Variant::aila2}) {
        for (const std::size_t heads : {std::size_t{1}, std::size_t{2}}) {
            ModelConfig cfg;
            cfg.variant = variant;
            cfg.num_layers = 2;
            cfg.hidden = 4;
            cfg.d_k = 4;
            cfg.d_v = 4;
            cfg.heads = heads;
            cfg.base = BaseKind::lstm;
            cfg.input_dim = 2;
            out.push_back(model_case("model " + to_string(variant) + " heads=" +
                                         std::to_string(heads),
                                     cfg, seed + heads, rng));
        }
    }
    return out;
}

std::vector<GradCheckResult> gradcheck_extended(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;

    for (const Variant variant : {Variant::plain, Variant::residual_sum, Variant::dense_concat}) {
        ModelConfig cfg;
        cfg.variant = variant;
        cfg.num_layers = 3;
        cfg.hidden = 4;
        cfg.d_k = 4;
        cfg.d_v = 4;
        cfg.base = BaseKind::lstm;
        cfg.input_dim = 2;
        out.push_back(model_case("model " + to_string(variant), cfg, seed, rng));
    }
    {
        ModelConfig cfg;
        cfg.variant = Variant::aila1;
        cfg.num_layers = 2;
        cfg.hidden = 4;
        cfg.d_k = 4;
        cfg.d_v = 4;
        cfg.base = BaseKind::mlp;
        cfg.input_dim = 3;
        cfg.task_dim = 3;
        out.push_back(model_case("model aila1 mlp task_embedding", cfg, seed + 7, rng));
    }
    {
        ModelConfig cfg;
        cfg.variant = Variant::aila2;
        cfg.num_layers = 4;
        cfg.hidden = 6;
        cfg.d_k = 6;
        cfg.d_v = 6;
        cfg.heads = 3;
        cfg.base = BaseKind::mlp;
        cfg.input_dim = 5;
        out.push_back(model_case("model aila2 mlp depth=4 heads=3", cfg, seed + 11, rng));
    }
    return out;
}

std::vector<GradCheckResult> gradcheck_suite(bool full, std::uint64_t seed) {
    std::vector<GradCheckResult> out = gradcheck_ops(seed);
    auto models = gradcheck_models(seed);
    out.insert(out.end(), models.begin(), models.end());
    if (full) {
        auto extra = gradcheck_extended(seed);
        out.insert(out.end(), extra.begin(), extra.end());
    }
    return out;
}

}  // namespace aila
