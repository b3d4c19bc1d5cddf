#include "aila/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aila {

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor shape has zero extent: " + shape_str(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    validate_shape(shape);
    rec_ = std::make_shared<detail::TensorRec>();
    rec_->values.assign(numel_of(shape), fill);
    rec_->shape = std::move(shape);
    rec_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    validate_shape(shape);
    if (numel_of(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    rec_ = std::make_shared<detail::TensorRec>();
    rec_->shape = std::move(shape);
    rec_->values = std::move(values);
    rec_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                       bool requires_grad) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Tensor Tensor::normal(Shape shape, std::mt19937_64& rng, double mean, double stddev,
                      bool requires_grad) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    std::normal_distribution<double> dist(mean, stddev);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

detail::TensorRec& Tensor::rec() const {
    if (!rec_) throw ContractError("use of default-constructed tensor");
    return *rec_;
}

const Shape& Tensor::shape() const { return rec().shape; }
std::size_t Tensor::numel() const { return rec().values.size(); }

std::size_t Tensor::size(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::vector<double>& Tensor::values() const { return rec().values; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return values()[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) {
        throw ShapeError("index rank " + std::to_string(index.size()) + " vs tensor " +
                         shape_str(s));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return values()[flat];
}

bool Tensor::requires_grad() const { return rec().requires_grad; }
void Tensor::set_requires_grad(bool on) const { rec().requires_grad = on; }

void Tensor::ensure_grad() const {
    auto& r = rec();
    if (r.grad.size() != r.values.size()) r.grad.assign(r.values.size(), 0.0);
}

bool Tensor::has_grad() const { return rec().grad.size() == rec().values.size(); }

std::vector<double>& Tensor::grad() const {
    ensure_grad();
    return rec().grad;
}

void Tensor::zero_grad() const {
    auto& r = rec();
    std::fill(r.grad.begin(), r.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t(shape(), values(), requires_grad());
    return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
bool g_debug_checks = true;
}  // namespace

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> step) { steps_.push_back(std::move(step)); }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss");
    }
    if (steps_.empty()) throw ContractError("backward on empty tape");
    Tensor seed = loss;
    seed.grad()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void set_debug_checks(bool on) { g_debug_checks = on; }
bool debug_checks() { return g_debug_checks; }

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace {

void check_finite(const Tensor& t, const char* op) {
    if (!g_debug_checks) return;
    for (double v : t.values()) {
        if (!std::isfinite(v)) {
            throw ContractError(std::string(op) + " produced a non-finite value");
        }
    }
}

bool any_requires_grad(std::span<const Tensor> ts) {
    for (const auto& t : ts) {
        if (t.requires_grad()) return true;
    }
    return false;
}

// Marks the output differentiable and hands the backward step to the tape.
// Returns false when recording is off, so ops can skip closure setup.
bool maybe_record(Tensor& out, std::span<const Tensor> inputs, std::function<void()> step) {
    Tape* tape = Tape::active();
    if (!tape || !any_requires_grad(inputs)) return false;
    out.set_requires_grad(true);
    out.ensure_grad();
    for (const Tensor& in : inputs) {
        if (in.requires_grad()) in.ensure_grad();
    }
    tape->record(std::move(step));
    return true;
}

// outer/inner decomposition for per-axis iteration
struct AxisSplit {
    std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void matmul_kernel(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* out_row = out + i * n;
        const double* a_row = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a_row[l];
            const double* b_row = b + l * n;
            for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
    Tensor out(Shape{m, n});
    matmul_kernel(a.values().data(), b.values().data(), out.values().data(), m, k, n);
    check_finite(out, "matmul");

    const Tensor ins[] = {a, b};
    maybe_record(out, ins, [a, b, out, m, k, n]() mutable {
        const double* g = out.grad().data();
        if (a.requires_grad()) {
            // ga += g . b^T
            double* ga = a.grad().data();
            const double* bv = b.values().data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t l = 0; l < k; ++l) {
                    double acc = 0.0;
                    const double* g_row = g + i * n;
                    const double* b_row = bv + l * n;
                    for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
                    ga[i * k + l] += acc;
                }
            }
        }
        if (b.requires_grad()) {
            // gb += a^T . g
            double* gb = b.grad().data();
            const double* av = a.values().data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* g_row = g + i * n;
                const double* a_row = av + i * k;
                for (std::size_t l = 0; l < k; ++l) {
                    const double alv = a_row[l];
                    double* gb_row = gb + l * n;
                    for (std::size_t j = 0; j < n; ++j) gb_row[j] += alv * g_row[j];
                }
            }
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    const bool bias_mode = b.rank() == 1 && a.shape() != b.shape();
    if (bias_mode) {
        if (a.shape().back() != b.size(0)) {
            throw ShapeError("add: bias length " + shape_str(b.shape()) +
                             " does not match trailing axis of " + shape_str(a.shape()));
        }
    } else {
        require_same_shape(a, b, "add");
    }
    Tensor out(a.shape());
    const std::size_t n = a.numel(), d = b.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.values()[i] = a.values()[i] + (bias_mode ? b.values()[i % d] : b.values()[i]);
    }
    check_finite(out, "add");

    const Tensor ins[] = {a, b};
    maybe_record(out, ins, [a, b, out, bias_mode, n, d]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            if (bias_mode) {
                for (std::size_t i = 0; i < n; ++i) gb[i % d] += g[i];
            } else {
                for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
    check_finite(out, "sub");

    const Tensor ins[] = {a, b};
    maybe_record(out, ins, [a, b, out, n]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
    check_finite(out, "mul");

    const Tensor ins[] = {a, b};
    maybe_record(out, ins, [a, b, out, n]() mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            const auto& bv = b.values();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            const auto& av = a.values();
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * c;
    check_finite(out, "scale");

    const Tensor ins[] = {a};
    maybe_record(out, ins, [a, out, c, n]() mutable {
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, n]() mutable {
        const auto& g = out.grad();
        const auto& xv = x.values();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) gx[i] += xv[i] > 0.0 ? g[i] : 0.0;
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x.values()[i];
        // split forms avoid overflow in exp for large |v|
        out.values()[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                   : std::exp(v) / (1.0 + std::exp(v));
    }
    check_finite(out, "sigmoid");

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, n]() mutable {
        const auto& g = out.grad();
        const auto& y = out.values();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return out;
}

Tensor tanh(const Tensor& x) {
    Tensor out(x.shape());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) out.values()[i] = std::tanh(x.values()[i]);
    check_finite(out, "tanh");

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, n]() mutable {
        const auto& g = out.grad();
        const auto& y = out.values();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& yv = out.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double mx = xv[base];
            for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[base + k * s.inner]);
            double sum = 0.0;
            for (std::size_t k = 0; k < s.n; ++k) {
                const double e = std::exp(xv[base + k * s.inner] - mx);
                yv[base + k * s.inner] = e;
                sum += e;
            }
            for (std::size_t k = 0; k < s.n; ++k) yv[base + k * s.inner] /= sum;
        }
    }
    check_finite(out, "softmax");

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, s]() mutable {
        const auto& g = out.grad();
        const auto& y = out.values();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.n * s.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < s.n; ++k) {
                    const std::size_t idx = base + k * s.inner;
                    dot += g[idx] * y[idx];
                }
                for (std::size_t k = 0; k < s.n; ++k) {
                    const std::size_t idx = base + k * s.inner;
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.size(0) != d || bias.size(0) != d) {
        throw ShapeError("layer_norm: gain/bias must be rank-1 of length " + std::to_string(d) +
                         ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");

    const std::size_t rows = x.numel() / d;
    Tensor out(x.shape());
    // cached per-row statistics for the backward step
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);

    const auto& xv = x.values();
    auto& yv = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += row[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (std::size_t i = 0; i < d; ++i) {
            const double xh = (row[i] - mean) * istd;
            (*xhat)[r * d + i] = xh;
            yv[r * d + i] = gain.values()[i] * xh + bias.values()[i];
        }
    }
    check_finite(out, "layer_norm");

    const Tensor ins[] = {x, gain, bias};
    maybe_record(out, ins, [x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
        const auto& g = out.grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double istd = (*inv_std)[r];
            const double* xh = xhat->data() + r * d;
            const double* grow = g.data() + r * d;
            if (x.requires_grad()) {
                // dxhat = gain * g; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double dxh = gain.values()[i] * grow[i];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[i];
                }
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xh /= static_cast<double>(d);
                double* gx = x.grad().data() + r * d;
                for (std::size_t i = 0; i < d; ++i) {
                    const double dxh = gain.values()[i] * grow[i];
                    gx[i] += istd * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                }
            }
            if (gain.requires_grad()) {
                auto& gg = gain.grad();
                for (std::size_t i = 0; i < d; ++i) gg[i] += grow[i] * xh[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad();
                for (std::size_t i = 0; i < d; ++i) gb[i] += grow[i];
            }
        }
    });
    return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
    }
    Shape out_shape = first;
    std::size_t total = first[axis];
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Shape& s = parts[p].shape();
        if (s.size() != first.size()) {
            throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " +
                                 shape_str(s));
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    Tensor out(out_shape);

    const AxisSplit os = split_axis(out_shape, axis);
    std::size_t offset = 0;
    for (const Tensor& part : parts) {
        const std::size_t pn = part.shape()[axis];
        const auto& pv = part.values();
        for (std::size_t o = 0; o < os.outer; ++o) {
            const double* src = pv.data() + o * pn * os.inner;
            double* dst = out.values().data() + (o * os.n + offset) * os.inner;
            std::copy(src, src + pn * os.inner, dst);
        }
        offset += pn;
    }

    std::vector<Tensor> held(parts.begin(), parts.end());
    maybe_record(out, parts, [held = std::move(held), out, os, axis]() mutable {
        const auto& g = out.grad();
        std::size_t offset = 0;
        for (Tensor& part : held) {
            const std::size_t pn = part.shape()[axis];
            if (part.requires_grad()) {
                auto& gp = part.grad();
                for (std::size_t o = 0; o < os.outer; ++o) {
                    const double* src = g.data() + (o * os.n + offset) * os.inner;
                    double* dst = gp.data() + o * pn * os.inner;
                    for (std::size_t i = 0; i < pn * os.inner; ++i) dst[i] += src[i];
                }
            }
            offset += pn;
        }
    });
    return out;
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
    const Tensor parts[] = {a, b};
    return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    const AxisSplit s = split_axis(x.shape(), axis);
    if (len == 0 || start + len > s.n) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    Tensor out(out_shape);
    for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = x.values().data() + (o * s.n + start) * s.inner;
        double* dst = out.values().data() + o * len * s.inner;
        std::copy(src, src + len * s.inner, dst);
    }

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, s, start, len]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = g.data() + o * len * s.inner;
            double* dst = gx.data() + (o * s.n + start) * s.inner;
            for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    validate_shape(shape);
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out(std::move(shape), x.values());

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[axis] = 1;
    } else if (out_shape.size() == 1) {
        out_shape = {1};
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    Tensor out(out_shape);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            double acc = 0.0;
            for (std::size_t k = 0; k < s.n; ++k) acc += xv[(o * s.n + k) * s.inner + in];
            out.values()[o * s.inner + in] = acc;
        }
    }
    check_finite(out, "sum_axis");

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, s]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const double gv = g[o * s.inner + in];
                for (std::size_t k = 0; k < s.n; ++k) gx[(o * s.n + k) * s.inner + in] += gv;
            }
        }
    });
    return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_axis(x.shape(), axis);
    return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(s.n));
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    check_finite(out, "sum_all");

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out]() mutable {
        const double g = out.grad()[0];
        auto& gx = x.grad();
        for (double& v : gx) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor expand_last(const Tensor& x, std::size_t n) {
    if (x.shape().back() != 1) {
        throw ShapeError("expand_last: trailing axis must be 1, got " + shape_str(x.shape()));
    }
    if (n == 0) throw ShapeError("expand_last: zero target extent");
    Shape out_shape = x.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    const std::size_t rows = x.numel();
    for (std::size_t r = 0; r < rows; ++r) {
        const double v = x.values()[r];
        double* dst = out.values().data() + r * n;
        std::fill(dst, dst + n, v);
    }

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, rows, n]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            const double* src = g.data() + r * n;
            for (std::size_t i = 0; i < n; ++i) acc += src[i];
            gx[r] += acc;
        }
    });
    return out;
}

Tensor repeat_rows(const Tensor& x, std::size_t rows) {
    if (x.rank() != 2 || x.size(0) != 1) {
        throw ShapeError("repeat_rows: expected (1 x d), got " + shape_str(x.shape()));
    }
    if (rows == 0) throw ShapeError("repeat_rows: zero target extent");
    const std::size_t d = x.size(1);
    Tensor out(Shape{rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(x.values().begin(), x.values().end(), out.values().begin() + r * d);
    }

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, rows, d]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) gx[i] += g[r * d + i];
        }
    });
    return out;
}

Tensor select_time(const Tensor& x, std::span<const std::size_t> steps) {
    if (x.rank() != 3) {
        throw ShapeError("select_time: expected (batch x time x d), got " + shape_str(x.shape()));
    }
    const std::size_t b = x.size(0), t = x.size(1), d = x.size(2);
    if (steps.size() != b) {
        throw ShapeError("select_time: got " + std::to_string(steps.size()) + " steps for batch " +
                         std::to_string(b));
    }
    for (std::size_t r = 0; r < b; ++r) {
        if (steps[r] >= t) {
            throw ShapeError("select_time: step " + std::to_string(steps[r]) +
                             " out of range for T=" + std::to_string(t));
        }
    }
    Tensor out(Shape{b, d});
    auto idx = std::make_shared<std::vector<std::size_t>>(steps.begin(), steps.end());
    for (std::size_t r = 0; r < b; ++r) {
        const double* src = x.values().data() + (r * t + (*idx)[r]) * d;
        std::copy(src, src + d, out.values().begin() + r * d);
    }

    const Tensor ins[] = {x};
    maybe_record(out, ins, [x, out, idx, b, t, d]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (std::size_t r = 0; r < b; ++r) {
            double* dst = gx.data() + (r * t + (*idx)[r]) * d;
            for (std::size_t i = 0; i < d; ++i) dst[i] += g[r * d + i];
        }
    });
    return out;
}

Tensor custom_op(Shape out_shape, std::vector<double> out_values, std::span<const Tensor> inputs,
                 std::function<void(const Tensor& out)> backward) {
    Tensor out(std::move(out_shape), std::move(out_values));
    check_finite(out, "custom_op");
    maybe_record(out, inputs, [out, backward = std::move(backward)]() { backward(out); });
    return out;
}

std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x_t, const Tensor& h_prev,
                                         const Tensor& c_prev, const LstmParams& params) {
    const std::size_t h = params.hidden;
    if (x_t.rank() != 2 || h_prev.rank() != 2 || c_prev.rank() != 2) {
        throw ShapeError("lstm_cell_step: inputs must be rank 2");
    }
    if (h_prev.size(1) != h || c_prev.size(1) != h || h_prev.size(0) != x_t.size(0) ||
        c_prev.size(0) != x_t.size(0)) {
        throw ShapeError("lstm_cell_step: state shapes " + shape_str(h_prev.shape()) + "/" +
                         shape_str(c_prev.shape()) + " do not match batch " +
                         shape_str(x_t.shape()) + " with hidden " + std::to_string(h));
    }
    if (params.w.rank() != 2 || params.w.size(0) != x_t.size(1) + h || params.w.size(1) != 4 * h) {
        throw ShapeError("lstm_cell_step: weight shape " + shape_str(params.w.shape()) +
                         " does not match input " + shape_str(x_t.shape()) + " with hidden " +
                         std::to_string(h));
    }

    Tensor z = concat(x_t, h_prev, 1);
    Tensor pre = add(matmul(z, params.w), params.b);
    Tensor gate_in = sigmoid(slice(pre, 1, 0, h));
    Tensor gate_forget = sigmoid(slice(pre, 1, h, h));
    Tensor candidate = tanh(slice(pre, 1, 2 * h, h));
    Tensor gate_out = sigmoid(slice(pre, 1, 3 * h, h));
    Tensor c_t = add(mul(gate_forget, c_prev), mul(gate_in, candidate));
    Tensor h_t = mul(gate_out, tanh(c_t));
    return {h_t, c_t};
}

}  // namespace aila
