#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aila/tensor.hpp"

namespace aila {

struct GradCheckResult {
    std::string name;
    double max_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

/// Compares tape gradients of the scalar produced by `forward` against
/// central finite differences over every element of `inspect`. `forward`
/// must rebuild its graph on each call. Error is |ad - fd| relative to
/// max(1, |ad|, |fd|).
double max_grad_error(const std::function<Tensor()>& forward, std::span<Tensor> inspect,
                      double step = 1e-5);

/// Per-primitive checks (matmul, softmax, layer_norm, elementwise and shape
/// ops, LSTM cell, losses).
std::vector<GradCheckResult> gradcheck_ops(std::uint64_t seed);

/// End-to-end checks on 2-layer aila1/aila2 instances (d=4, T=3, batch 2,
/// heads 1 and 2), every registered parameter inspected.
std::vector<GradCheckResult> gradcheck_models(std::uint64_t seed);

/// Extra coverage behind `--scale full`: baselines, MLP bases, task
/// embedding, larger shapes.
std::vector<GradCheckResult> gradcheck_extended(std::uint64_t seed);

std::vector<GradCheckResult> gradcheck_suite(bool full, std::uint64_t seed = 20240501);

}  // namespace aila
