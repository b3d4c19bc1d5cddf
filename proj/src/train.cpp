#include "aila/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace aila {

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::mse: return "mse";
        case LossKind::binary_ce: return "binary_ce";
        case LossKind::multiclass_ce: return "multiclass_ce";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "binary_ce") return LossKind::binary_ce;
    if (s == "multiclass_ce") return LossKind::multiclass_ce;
    throw ConfigError("unknown loss kind '" + s + "'");
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (patience < 1) throw ConfigError("early-stop patience must be >= 1");
    if (seeds.empty()) throw ConfigError("seed list must be non-empty");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (grad_clip && *grad_clip <= 0.0) throw ConfigError("grad clip must be positive when set");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j{{"lr", lr},           {"beta1", beta1},
                     {"beta2", beta2},     {"adam_eps", adam_eps},
                     {"epochs", epochs},   {"batch", batch_size},
                     {"patience", patience}, {"seeds", seeds},
                     {"loss", to_string(loss)}};
    if (grad_clip) j["clip"] = *grad_clip;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("clip")) c.grad_clip = j.at("clip").get<double>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    Tensor diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

Tensor binary_ce(const Tensor& logits, const Tensor& labels) {
    if (logits.shape() != labels.shape()) {
        throw ShapeError("binary_ce: shape mismatch " + shape_str(logits.shape()) + " vs " +
                         shape_str(labels.shape()));
    }
    const std::size_t n = logits.numel();
    const auto& z = logits.values();
    const auto& y = labels.values();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) {
            throw DataError("binary_ce: label " + std::to_string(y[i]) + " is not 0 or 1");
        }
        // softplus(z) - z*y, stable for large |z|
        total += std::max(z[i], 0.0) + std::log1p(std::exp(-std::abs(z[i]))) - z[i] * y[i];
    }
    const Tensor ins[] = {logits};
    return custom_op({1}, {total / static_cast<double>(n)}, ins,
                     [logits, labels, n](const Tensor& out) mutable {
                         const double g = out.grad()[0] / static_cast<double>(n);
                         if (!logits.requires_grad()) return;
                         auto& gz = logits.grad();
                         const auto& z = logits.values();
                         const auto& y = labels.values();
                         for (std::size_t i = 0; i < n; ++i) {
                             const double p = z[i] >= 0.0
                                                  ? 1.0 / (1.0 + std::exp(-z[i]))
                                                  : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                             gz[i] += g * (p - y[i]);
                         }
                     });
}

Tensor multiclass_ce(const Tensor& logits, const Tensor& labels) {
    if (logits.rank() != 2) {
        throw ShapeError("multiclass_ce: logits must be (batch x classes), got " +
                         shape_str(logits.shape()));
    }
    const std::size_t b = logits.size(0), k = logits.size(1);
    if (labels.numel() != b) {
        throw ShapeError("multiclass_ce: " + std::to_string(labels.numel()) + " labels for batch " +
                         std::to_string(b));
    }
    const auto& z = logits.values();
    const auto& y = labels.values();
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const double yl = y[r];
        if (yl != std::floor(yl) || yl < 0.0 || yl >= static_cast<double>(k)) {
            throw DataError("multiclass_ce: label " + std::to_string(yl) +
                            " out of range for " + std::to_string(k) + " classes");
        }
        const double* row = z.data() + r * k;
        double mx = row[0];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
        total += mx + std::log(sum) - row[static_cast<std::size_t>(yl)];
    }
    const Tensor ins[] = {logits};
    return custom_op({1}, {total / static_cast<double>(b)}, ins,
                     [logits, labels, b, k](const Tensor& out) mutable {
                         if (!logits.requires_grad()) return;
                         const double g = out.grad()[0] / static_cast<double>(b);
                         auto& gz = logits.grad();
                         const auto& z = logits.values();
                         const auto& y = labels.values();
                         for (std::size_t r = 0; r < b; ++r) {
                             const double* row = z.data() + r * k;
                             double mx = row[0];
                             for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
                             double sum = 0.0;
                             for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
                             const auto label = static_cast<std::size_t>(y[r]);
                             for (std::size_t c = 0; c < k; ++c) {
                                 const double p = std::exp(row[c] - mx) / sum;
                                 gz[r * k + c] += g * (p - (c == label ? 1.0 : 0.0));
                             }
                         }
                     });
}

Tensor loss_of(LossKind kind, const Tensor& pred, const Tensor& target) {
    switch (kind) {
        case LossKind::mse: return mse_loss(pred, target);
        case LossKind::binary_ce: return binary_ce(pred, target);
        case LossKind::multiclass_ce: return multiclass_ce(pred, target);
    }
    throw ConfigError("unknown loss kind");
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, Tensor>>& params, const TrainConfig& cfg)
    : params_(&params), cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, t] : params) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : *params_) t.zero_grad();
}

void Adam::step() {
    ++t_;
    if (cfg_.grad_clip) {
        double norm_sq = 0.0;
        for (auto& [name, t] : *params_) {
            if (!t.has_grad()) continue;
            for (double g : t.grad()) norm_sq += g * g;
        }
        const double norm = std::sqrt(norm_sq);
        if (norm > *cfg_.grad_clip) {
            const double s = *cfg_.grad_clip / norm;
            for (auto& [name, t] : *params_) {
                if (!t.has_grad()) continue;
                for (double& g : t.grad()) g *= s;
            }
        }
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_->size(); ++i) {
        auto& [name, t] = (*params_)[i];
        if (!t.has_grad()) continue;  // parameter untouched by this graph
        auto& vals = t.values();
        const auto& g = t.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t e = 0; e < vals.size(); ++e) {
            if (!std::isfinite(g[e])) {
                throw DivergedError("non-finite gradient in parameter '" + name + "'");
            }
            m[e] = cfg_.beta1 * m[e] + (1.0 - cfg_.beta1) * g[e];
            v[e] = cfg_.beta2 * v[e] + (1.0 - cfg_.beta2) * g[e] * g[e];
            const double m_hat = m[e] / bc1;
            const double v_hat = v[e] / bc2;
            vals[e] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

Tensor ModelAdapter::predict(const Batch& batch) const {
    return model_->forward(batch.x, nullptr, nullptr,
                           batch.lengths.empty() ? nullptr : &batch.lengths);
}

namespace {

constexpr std::size_t kEvalBatch = 256;

std::vector<std::size_t> iota_indices(std::size_t first, std::size_t count) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
    return idx;
}

template <typename Fn>
double batched_mean(const BatchSource& src, Fn per_batch) {
    const std::size_t n = src.size();
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += kEvalBatch) {
        const std::size_t count = std::min(kEvalBatch, n - start);
        const Batch batch = src.gather(iota_indices(start, count));
        total += per_batch(batch) * static_cast<double>(count);
    }
    return total / static_cast<double>(n);
}

}  // namespace

double evaluate_loss(const TrainableModel& model, const BatchSource& src, LossKind kind) {
    return batched_mean(src, [&](const Batch& batch) {
        return loss_of(kind, model.predict(batch), batch.y).item();
    });
}

double evaluate_metric(const TrainableModel& model, const BatchSource& src, LossKind kind) {
    if (kind == LossKind::mse) return evaluate_loss(model, src, kind);
    return batched_mean(src, [&](const Batch& batch) {
        const Tensor pred = model.predict(batch);
        const auto& y = batch.y.values();
        std::size_t correct = 0;
        if (kind == LossKind::binary_ce) {
            for (std::size_t i = 0; i < y.size(); ++i) {
                correct += (pred.values()[i] > 0.0) == (y[i] > 0.5) ? 1 : 0;
            }
        } else {
            const std::size_t k = pred.size(1);
            for (std::size_t i = 0; i < y.size(); ++i) {
                const double* row = pred.values().data() + i * k;
                std::size_t best = 0;
                for (std::size_t c = 1; c < k; ++c) {
                    if (row[c] > row[best]) best = c;
                }
                correct += best == static_cast<std::size_t>(y[i]) ? 1 : 0;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(y.size());
    });
}

std::string metric_name_of(LossKind kind) {
    return kind == LossKind::mse ? "mse" : "accuracy";
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

std::uint64_t epoch_shuffle_seed(std::uint64_t seed, std::size_t epoch) {
    return seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1));
}

std::vector<Tensor> snapshot(const std::vector<std::pair<std::string, Tensor>>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t.clone());
    return out;
}

void restore(std::vector<std::pair<std::string, Tensor>>& params,
             const std::vector<Tensor>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].second.values() = snap[i].values();
}

}  // namespace

RunReport train(TrainableModel& model, const BatchSource& train_src, const BatchSource& val_src,
                const BatchSource& test_src, const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (train_src.size() == 0 || val_src.size() == 0 || test_src.size() == 0) {
        throw DataError("train/val/test splits must all be non-empty");
    }

    RunReport report;
    report.seed = seed;
    report.metric_name = metric_name_of(cfg.loss);

    Adam opt(model.params(), cfg);
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;
    std::size_t bad_epochs = 0;

    const auto train_start = std::chrono::steady_clock::now();
    try {
        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            double loss_sum = 0.0;
            std::size_t seen = 0;
            for (const auto& idx :
                 batch_indices(train_src.size(), cfg.batch_size, epoch_shuffle_seed(seed, epoch))) {
                const Batch batch = train_src.gather(idx);
                Tape tape;
                TapeScope scope(tape);
                const Tensor loss = loss_of(cfg.loss, model.predict(batch), batch.y);
                const double loss_val = loss.item();
                if (!std::isfinite(loss_val)) throw DivergedError("non-finite training loss");
                tape.backward(loss);
                opt.step();
                opt.zero_grad();
                loss_sum += loss_val * static_cast<double>(idx.size());
                seen += idx.size();
            }
            const double train_loss = loss_sum / static_cast<double>(seen);
            const double val_loss = evaluate_loss(model, val_src, cfg.loss);
            if (!std::isfinite(val_loss)) throw DivergedError("non-finite validation loss");
            report.epochs.push_back({epoch, train_loss, val_loss});

            if (val_loss < best_val) {
                best_val = val_loss;
                report.best_epoch = epoch;
                best_params = snapshot(model.params());
                bad_epochs = 0;
            } else {
                ++bad_epochs;
                if (bad_epochs >= cfg.patience) break;
            }
        }
    } catch (const DivergedError& e) {
        report.diverged = true;
        report.diverged_reason = e.what();
    } catch (const ContractError& e) {
        // non-finite activations surface here when debug checks are on
        report.diverged = true;
        report.diverged_reason = e.what();
    }
    report.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - train_start).count();

    if (!best_params.empty()) restore(model.params(), best_params);
    report.best_val = best_val;

    if (!report.diverged) {
        const auto infer_start = std::chrono::steady_clock::now();
        report.test_metric = evaluate_metric(model, test_src, cfg.loss);
        report.inference_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - infer_start).count();
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

void write_report_jsonl(const RunReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open report for writing: " + path);
    f << nlohmann::json{{"type", "header"}, {"schema", "aila.run/1"}}.dump() << "\n";
    for (const auto& e : report.epochs) {
        f << nlohmann::json{{"type", "epoch"},
                            {"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val_loss", e.val_loss}}
                 .dump()
          << "\n";
    }
    nlohmann::json summary{{"type", "summary"},
                           {"seed", report.seed},
                           {"epochs_run", report.epochs.size()},
                           {"best_epoch", report.best_epoch},
                           {"best_val", report.best_val},
                           {"test_metric", report.test_metric},
                           {"metric", report.metric_name},
                           {"diverged", report.diverged}};
    if (report.diverged) summary["diverged_reason"] = report.diverged_reason;
    if (!report.config_echo.is_null()) summary["config"] = report.config_echo;
    f << summary.dump() << "\n";
    if (!f) throw DataError("short write on report: " + path);
}

void write_timing_json(const RunReport& report, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open timing file for writing: " + path);
    f << nlohmann::json{{"train_seconds", report.train_seconds},
                        {"inference_seconds", report.inference_seconds}}
             .dump(2)
      << "\n";
}

SeedAggregate aggregate_metrics(const std::vector<double>& per_seed) {
    SeedAggregate agg;
    agg.per_seed = per_seed;
    if (per_seed.empty()) return agg;
    double sum = 0.0;
    for (double v : per_seed) sum += v;
    agg.mean = sum / static_cast<double>(per_seed.size());
    if (per_seed.size() > 1) {
        double sq = 0.0;
        for (double v : per_seed) sq += (v - agg.mean) * (v - agg.mean);
        agg.stddev = std::sqrt(sq / static_cast<double>(per_seed.size() - 1));
    }
    return agg;
}

// ---------------------------------------------------------------------------
// Single-run driver
// ---------------------------------------------------------------------------

nlohmann::json RunContext::echo(std::uint64_t seed) const {
    return nlohmann::json{{"model", model.to_json()},
                          {"train", train.to_json()},
                          {"data", data.to_json()},
                          {"seed", seed}};
}

RunReport run_single(const RunContext& ctx, const BuiltData& data, std::uint64_t seed,
                     Model* trained) {
    ModelConfig mc = ctx.model;
    if (!data.is_series()) {
        mc.vocab = data.tokens->vocab;
        mc.embed_dim = data.tokens->embed_dim;
    }
    Model model = Model::build(mc, seed);
    if (!data.is_series()) {
        // the dataset carries the initial embedding table; the model trains a copy
        for (auto& [name, t] : model.registry()) {
            if (name == "embed.table") t.values() = data.tokens->embedding.values();
        }
    }

    ModelAdapter adapter(model);
    const auto train_view = data.view(Split::train);
    const auto val_view = data.view(Split::val);
    const auto test_view = data.view(Split::test);
    RunReport report = train(adapter, *train_view, *val_view, *test_view, ctx.train, seed);
    report.config_echo = ctx.echo(seed);
    if (trained) *trained = std::move(model);
    return report;
}

}  // namespace aila
