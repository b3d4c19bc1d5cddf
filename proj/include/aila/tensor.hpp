#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aila {

// Error taxonomy. The CLI maps each class to a distinct exit code.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorRec {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until ensure_grad()
    bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major tensor of doubles. A Tensor is a cheap handle sharing one
/// underlying record; clone() deep-copies. Gradients live next to the values
/// and are filled in by Tape::backward.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi,
                          bool requires_grad = false);
    static Tensor normal(Shape shape, std::mt19937_64& rng, double mean, double stddev,
                         bool requires_grad = false);

    bool defined() const { return rec_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::size_t size(std::size_t axis) const;

    // Const here is shallow, as on a shared_ptr: a const Tensor handle still
    // reaches the mutable shared record. Backward closures rely on this.
    std::vector<double>& values() const;
    double item() const;  // scalar tensors only
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    void set_requires_grad(bool on) const;
    void ensure_grad() const;  // allocate zero grad buffer if missing
    bool has_grad() const;
    std::vector<double>& grad() const;
    void zero_grad() const;

    Tensor clone() const;  // deep copy of values (and requires_grad flag)

  private:
    std::shared_ptr<detail::TensorRec> rec_;
    detail::TensorRec& rec() const;
};

/// Reverse-mode tape. Ops executed while a TapeScope is active append one
/// backward step each; backward() replays them once, in reverse. Tapes are
/// single-threaded; concurrent evaluations each need their own tape.
class Tape {
  public:
    void record(std::function<void()> step);
    void backward(const Tensor& loss);
    std::size_t size() const { return steps_.size(); }
    static Tape* active();

  private:
    std::vector<std::function<void()>> steps_;
    friend class TapeScope;
};

class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// Finite-value checks on op outputs (debug aid, runtime switchable).
void set_debug_checks(bool on);
bool debug_checks();

// ---------------------------------------------------------------------------
// Ops. All record backward steps on the active tape when any input requires
// grad. Shape mismatches throw ShapeError naming the offending shapes.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // (m x k) * (k x n)
Tensor add(const Tensor& a, const Tensor& b);     // same shape, or rank-1 b broadcast over leading axes
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor expand_last(const Tensor& x, std::size_t n);     // (... x 1) -> (... x n)
Tensor repeat_rows(const Tensor& x, std::size_t rows);  // (1 x d) -> (rows x d)
Tensor select_time(const Tensor& x, std::span<const std::size_t> steps);  // (B,T,d) -> (B,d)

/// Escape hatch for fused ops (losses): caller supplies forward result and a
/// backward step that reads out.grad() and accumulates into captured inputs.
Tensor custom_op(Shape out_shape, std::vector<double> out_values, std::span<const Tensor> inputs,
                 std::function<void(const Tensor& out)> backward);

/// Standard 4-gate LSTM cell parameters: w is (in+hidden) x 4*hidden with
/// gate blocks packed [input | forget | candidate | output], b is 4*hidden.
struct LstmParams {
    Tensor w;
    Tensor b;
    std::size_t hidden = 0;
};

std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x_t, const Tensor& h_prev,
                                         const Tensor& c_prev, const LstmParams& params);

}  // namespace aila
