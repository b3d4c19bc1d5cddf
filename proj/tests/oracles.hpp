#pragma once

// Straight-line re-implementations used as oracles: plain double loops, no
// Tensor ops, reading model parameters by registry name only.

#include <cmath>
#include <string>
#include <vector>

#include "aila/data.hpp"
#include "aila/model.hpp"

namespace oracles {

inline const std::vector<double>& param(const aila::Model& m, const std::string& name) {
    for (const auto& [n, t] : m.registry()) {
        if (n == name) return t.values();
    }
    throw std::runtime_error("oracle: no parameter named " + name);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// x: (T * in) row-major, returns (T * hidden)
inline std::vector<double> lstm_sequence(const std::vector<double>& x, std::size_t t_steps,
                                         std::size_t in, std::size_t hidden,
                                         const std::vector<double>& w,
                                         const std::vector<double>& b) {
    std::vector<double> out(t_steps * hidden);
    std::vector<double> h(hidden, 0.0), c(hidden, 0.0);
    const std::size_t cols = 4 * hidden;
    for (std::size_t t = 0; t < t_steps; ++t) {
        std::vector<double> pre(b);
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = x[t * in + k];
            for (std::size_t j = 0; j < cols; ++j) pre[j] += xv * w[k * cols + j];
        }
        for (std::size_t k = 0; k < hidden; ++k) {
            const double hv = h[k];
            for (std::size_t j = 0; j < cols; ++j) pre[j] += hv * w[(in + k) * cols + j];
        }
        for (std::size_t k = 0; k < hidden; ++k) {
            const double gi = sigmoid(pre[k]);
            const double gf = sigmoid(pre[hidden + k]);
            const double gg = std::tanh(pre[2 * hidden + k]);
            const double go = sigmoid(pre[3 * hidden + k]);
            c[k] = gf * c[k] + gi * gg;
            h[k] = go * std::tanh(c[k]);
            out[t * hidden + k] = h[k];
        }
    }
    return out;
}

inline std::vector<double> layer_norm_row(const std::vector<double>& v,
                                          const std::vector<double>& gain,
                                          const std::vector<double>& bias, double eps) {
    const std::size_t d = v.size();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = gain[i] * (v[i] - mean) * istd + bias[i];
    return out;
}

inline std::vector<double> matvec_rowmajor(const std::vector<double>& v,
                                           const std::vector<double>& w, std::size_t in,
                                           std::size_t out_dim) {
    std::vector<double> out(out_dim, 0.0);
    for (std::size_t k = 0; k < in; ++k) {
        for (std::size_t j = 0; j < out_dim; ++j) out[j] += v[k] * w[k * out_dim + j];
    }
    return out;
}

inline std::vector<double> softmax_vec(const std::vector<double>& s) {
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    double denom = 0.0;
    std::vector<double> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        out[i] = std::exp(s[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

/// Independent re-evaluation of a whole forward pass for plain/residual_sum/
/// aila1/aila2 models (LSTM or MLP base, no task embedding, scalar head).
/// Returns one prediction per batch row.
inline std::vector<double> predict(const aila::Model& m, const aila::Tensor& x) {
    using aila::BaseKind;
    using aila::Variant;
    const aila::ModelConfig& cfg = m.config();
    const std::size_t d = cfg.hidden;
    const std::size_t batch = x.size(0);
    const bool seq = cfg.base == BaseKind::lstm;
    const std::size_t t_steps = seq ? x.size(1) : 1;
    const std::size_t in0 = cfg.input_dim;
    const double eps = 1e-5;

    std::vector<double> preds(batch);
    for (std::size_t row = 0; row < batch; ++row) {
        // per-layer outputs, each (t_steps * d)
        std::vector<std::vector<double>> outputs;
        std::vector<double> input(t_steps * in0);
        for (std::size_t i = 0; i < input.size(); ++i) {
            input[i] = x.values()[row * t_steps * in0 + i];
        }

        for (std::size_t j = 1; j <= cfg.num_layers; ++j) {
            const std::string prefix = "layer" + std::to_string(j) + ".";
            const std::size_t in_dim = j == 1 ? in0 : d;
            const std::vector<double>& cur = j == 1 ? input : outputs[j - 2];

            std::vector<double> h_tilde;
            if (seq) {
                h_tilde = lstm_sequence(cur, t_steps, in_dim, d, param(m, prefix + "base.w"),
                                        param(m, prefix + "base.b"));
            } else {
                h_tilde = matvec_rowmajor(cur, param(m, prefix + "base.w"), in_dim, d);
                const auto& bb = param(m, prefix + "base.b");
                for (std::size_t i = 0; i < d; ++i) {
                    h_tilde[i] = std::max(0.0, h_tilde[i] + bb[i]);
                }
            }

            std::vector<double> h_j(t_steps * d);
            for (std::size_t t = 0; t < t_steps; ++t) {
                std::vector<double> ht(h_tilde.begin() + t * d, h_tilde.begin() + (t + 1) * d);
                std::vector<double> agg(d, 0.0);

                if (cfg.variant == Variant::residual_sum && j >= 2) {
                    for (std::size_t i = 0; i < d; ++i) agg[i] = outputs[j - 2][t * d + i];
                } else if (cfg.variant == Variant::aila2 && j >= 2) {
                    const auto& wq = param(m, prefix + "arch2.wq");
                    const auto& wk = param(m, prefix + "arch2.wk");
                    const auto& wv = param(m, prefix + "arch2.wv");
                    const std::size_t dk = cfg.d_k, dv = cfg.d_v, heads = cfg.heads;
                    const std::size_t dkh = dk / heads, dvh = dv / heads;
                    const std::vector<double> q = matvec_rowmajor(ht, wq, d, dk);
                    std::vector<std::vector<double>> keys, vals;
                    for (std::size_t i = 0; i + 1 < j; ++i) {
                        std::vector<double> hi(outputs[i].begin() + t * d,
                                               outputs[i].begin() + (t + 1) * d);
                        keys.push_back(matvec_rowmajor(hi, wk, d, dk));
                        vals.push_back(matvec_rowmajor(hi, wv, d, dv));
                    }
                    for (std::size_t head = 0; head < heads; ++head) {
                        std::vector<double> scores(keys.size(), 0.0);
                        for (std::size_t i = 0; i < keys.size(); ++i) {
                            for (std::size_t e = 0; e < dkh; ++e) {
                                scores[i] += q[head * dkh + e] * keys[i][head * dkh + e];
                            }
                            scores[i] /= std::sqrt(static_cast<double>(dkh));
                        }
                        const std::vector<double> alpha = softmax_vec(scores);
                        for (std::size_t i = 0; i < keys.size(); ++i) {
                            for (std::size_t e = 0; e < dvh; ++e) {
                                agg[head * dvh + e] += alpha[i] * vals[i][head * dvh + e];
                            }
                        }
                    }
                } else if (cfg.variant == Variant::aila1 && j >= 2) {
                    const std::size_t heads = cfg.heads, dh = d / heads;
                    std::vector<std::vector<double>> cands;
                    cands.push_back(ht);
                    for (std::size_t i = 0; i + 1 < j; ++i) {
                        std::vector<double> hi(outputs[i].begin() + t * d,
                                               outputs[i].begin() + (t + 1) * d);
                        cands.push_back(matvec_rowmajor(
                            hi, param(m, prefix + "arch1.proj" + std::to_string(i + 1)), d, d));
                    }
                    for (std::size_t head = 0; head < heads; ++head) {
                        const auto& scorer =
                            param(m, prefix + "arch1.scorer" + std::to_string(head + 1));
                        std::vector<double> scores(cands.size(), 0.0);
                        for (std::size_t c = 0; c < cands.size(); ++c) {
                            for (std::size_t e = 0; e < dh; ++e) {
                                scores[c] += cands[c][head * dh + e] * scorer[c * dh + e];
                            }
                        }
                        const std::vector<double> alpha = softmax_vec(scores);
                        for (std::size_t c = 0; c < cands.size(); ++c) {
                            for (std::size_t e = 0; e < d; ++e) {
                                agg[e] += alpha[c] * cands[c][e] / static_cast<double>(heads);
                            }
                        }
                    }
                }

                std::vector<double> pre(d);
                for (std::size_t i = 0; i < d; ++i) pre[i] = std::max(0.0, ht[i] + agg[i]);
                const std::vector<double> normed = layer_norm_row(
                    pre, param(m, prefix + "ln.gain"), param(m, prefix + "ln.bias"), eps);
                for (std::size_t i = 0; i < d; ++i) h_j[t * d + i] = normed[i];
            }
            outputs.push_back(std::move(h_j));
        }

        const std::vector<double>& last = outputs.back();
        std::vector<double> feat(last.begin() + (t_steps - 1) * d, last.end());
        const auto& hw = param(m, "head.w");
        const auto& hb = param(m, "head.b");
        double p = hb[0];
        for (std::size_t i = 0; i < d; ++i) p += feat[i] * hw[i];
        preds[row] = p;
    }
    return preds;
}

/// Ordinary least squares of target on (1, last input step); returns the
/// fitted coefficients applied as a predictor.
struct LastStepLeastSquares {
    double intercept = 0.0;
    double slope = 0.0;

    static LastStepLeastSquares fit(const aila::SeriesDataset& ds, std::size_t first,
                                    std::size_t count) {
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        const std::size_t t = ds.window;
        for (std::size_t i = first; i < first + count; ++i) {
            const double x = ds.inputs[i * t + (t - 1)];
            const double y = ds.targets[i];
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double n = static_cast<double>(count);
        LastStepLeastSquares ls;
        const double denom = n * sxx - sx * sx;
        ls.slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
        ls.intercept = (sy - ls.slope * sx) / n;
        return ls;
    }

    double mse(const aila::SeriesDataset& ds, std::size_t first, std::size_t count) const {
        double total = 0.0;
        const std::size_t t = ds.window;
        for (std::size_t i = first; i < first + count; ++i) {
            const double x = ds.inputs[i * t + (t - 1)];
            const double r = ds.targets[i] - (intercept + slope * x);
            total += r * r;
        }
        return total / static_cast<double>(count);
    }
};

}  // namespace oracles
