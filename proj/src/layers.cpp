#include "aila/layers.hpp"

#include <cmath>

namespace aila {

namespace {

// Positions become rows: (B,T,d) -> (B*T, d); (B,d) passes through.
Tensor flatten_positions(const Tensor& x) {
    if (x.rank() == 2) return x;
    if (x.rank() == 3) return reshape(x, Shape{x.size(0) * x.size(1), x.size(2)});
    throw ShapeError("expected rank-2 or rank-3 activations, got " + shape_str(x.shape()));
}

Tensor unflatten_positions(const Tensor& flat, const Shape& like) {
    if (like.size() == 2) return flat;
    return reshape(flat, Shape{like[0], like[1], flat.size(1)});
}

void check_state_shapes(const Tensor& h_tilde, const LayerState& state) {
    for (const Tensor& h : state.outputs) {
        if (h.shape() != h_tilde.shape()) {
            throw ShapeError("layer state entry shape " + shape_str(h.shape()) +
                             " does not match current layer " + shape_str(h_tilde.shape()));
        }
    }
}

}  // namespace

Tensor arch1_integrate(const Tensor& h_tilde, const LayerState& state,
                       const Arch1Integrator& integ, const TaskEmbedding& task) {
    check_state_shapes(h_tilde, state);
    if (state.empty() && !task.present) return Tensor(h_tilde.shape(), 0.0);

    const std::size_t d = h_tilde.shape().back();
    if (d != integ.width) {
        throw ShapeError("arch1: candidate feature dim " + std::to_string(d) +
                         " does not match integrator width " + std::to_string(integ.width));
    }
    if (state.size() != integ.proj.size()) {
        throw ShapeError("arch1: " + std::to_string(state.size()) + " predecessors but " +
                         std::to_string(integ.proj.size()) + " projections");
    }
    const std::size_t heads = integ.num_heads;
    if (d % heads != 0) {
        throw ShapeError("arch1: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;

    Tensor flat = flatten_positions(h_tilde);
    const std::size_t rows = flat.size(0);

    // Candidate order fixed: own preliminary output, task embedding, then
    // predecessors oldest first. Scorer segments follow the same order.
    std::vector<Tensor> cands;
    cands.push_back(flat);
    if (task.present) {
        Tensor projected = matmul(reshape(task.t, Shape{1, task.t.numel()}), integ.task_proj);
        cands.push_back(repeat_rows(projected, rows));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        cands.push_back(matmul(flatten_positions(state.outputs[i]), integ.proj[i]));
    }
    const std::size_t num_c = cands.size();

    Tensor mean_heads;
    for (std::size_t k = 0; k < heads; ++k) {
        const Tensor& scorer = integ.head_scorers[k];
        if (scorer.numel() != num_c * dh) {
            throw ShapeError("arch1: head scorer length " + std::to_string(scorer.numel()) +
                             " != candidates*" + std::to_string(dh));
        }
        std::vector<Tensor> scores;
        scores.reserve(num_c);
        for (std::size_t c = 0; c < num_c; ++c) {
            Tensor cand_slice = slice(cands[c], 1, k * dh, dh);
            Tensor w_slice = reshape(slice(scorer, 0, c * dh, dh), Shape{dh, 1});
            scores.push_back(matmul(cand_slice, w_slice));  // (rows x 1)
        }
        Tensor alpha = softmax(concat(scores, 1), 1);  // (rows x candidates)
        Tensor head_out;
        for (std::size_t c = 0; c < num_c; ++c) {
            Tensor weighted = mul(expand_last(slice(alpha, 1, c, 1), d), cands[c]);
            head_out = head_out.defined() ? add(head_out, weighted) : weighted;
        }
        mean_heads = mean_heads.defined() ? add(mean_heads, head_out) : head_out;
    }
    Tensor out = scale(mean_heads, 1.0 / static_cast<double>(heads));
    return unflatten_positions(out, h_tilde.shape());
}

Tensor arch2_integrate(const Tensor& h_tilde, const LayerState& state,
                       const Arch2Integrator& integ, std::size_t layer_index, AttnTrace* trace) {
    check_state_shapes(h_tilde, state);
    const std::size_t d_v = integ.w_value.size(1);
    if (state.empty()) {
        Shape out_shape = h_tilde.shape();
        out_shape.back() = d_v;
        return Tensor(out_shape, 0.0);
    }

    const std::size_t d = h_tilde.shape().back();
    if (integ.w_query.size(0) != d || integ.w_key.size(0) != d || integ.w_value.size(0) != d) {
        throw ShapeError("arch2: projection input dim does not match activations of width " +
                         std::to_string(d));
    }
    const std::size_t d_k = integ.w_query.size(1);
    const std::size_t heads = integ.num_heads;
    if (d_k % heads != 0 || d_v % heads != 0) {
        throw ShapeError("arch2: d_k/d_v must be divisible by heads");
    }
    const std::size_t dk_h = d_k / heads;
    const std::size_t dv_h = d_v / heads;
    const std::size_t num_p = state.size();

    Tensor q = matmul(flatten_positions(h_tilde), integ.w_query);
    std::vector<Tensor> keys, vals;
    keys.reserve(num_p);
    vals.reserve(num_p);
    for (const Tensor& h : state.outputs) {
        Tensor hf = flatten_positions(h);
        keys.push_back(matmul(hf, integ.w_key));
        vals.push_back(matmul(hf, integ.w_value));
    }

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk_h));
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (std::size_t k = 0; k < heads; ++k) {
        Tensor q_h = slice(q, 1, k * dk_h, dk_h);
        std::vector<Tensor> scores;
        scores.reserve(num_p);
        for (std::size_t i = 0; i < num_p; ++i) {
            Tensor k_h = slice(keys[i], 1, k * dk_h, dk_h);
            scores.push_back(scale(sum_axis(mul(q_h, k_h), 1, true), inv_scale));
        }
        Tensor alpha = softmax(concat(scores, 1), 1);  // (rows x predecessors)
        if (trace) trace->push_back({layer_index, k, alpha});
        Tensor head_out;
        for (std::size_t i = 0; i < num_p; ++i) {
            Tensor v_h = slice(vals[i], 1, k * dv_h, dv_h);
            Tensor weighted = mul(expand_last(slice(alpha, 1, i, 1), dv_h), v_h);
            head_out = head_out.defined() ? add(head_out, weighted) : weighted;
        }
        head_outs.push_back(head_out);
    }
    Tensor out = heads == 1 ? head_outs[0] : concat(head_outs, 1);
    Shape like = h_tilde.shape();
    like.back() = d_v;
    return unflatten_positions(out, like);
}

Tensor layer_update(const Tensor& h_tilde, const Tensor& aggregate, const LayerNormParams& ln) {
    Tensor pre = h_tilde;
    if (aggregate.defined()) {
        if (aggregate.shape() != h_tilde.shape()) {
            throw ShapeError("layer_update: aggregate shape " + shape_str(aggregate.shape()) +
                             " does not match layer output " + shape_str(h_tilde.shape()));
        }
        pre = add(h_tilde, aggregate);
    }
    return layer_norm(relu(pre), ln.gain, ln.bias, ln.eps);
}

Tensor base_forward(const Tensor& x, const BaseParams& params) {
    switch (params.kind) {
        case BaseKind::mlp:
            if (x.rank() != 2) {
                throw ShapeError("mlp base expects (batch x features), got " +
                                 shape_str(x.shape()));
            }
            return relu(add(matmul(x, params.mlp.w), params.mlp.b));
        case BaseKind::lstm: {
            if (x.rank() != 3) {
                throw ShapeError("lstm base expects (batch x time x features), got " +
                                 shape_str(x.shape()));
            }
            const std::size_t b = x.size(0), t = x.size(1);
            const std::size_t h = params.lstm.hidden;
            Tensor h_t(Shape{b, h}, 0.0);
            Tensor c_t(Shape{b, h}, 0.0);
            std::vector<Tensor> steps;
            steps.reserve(t);
            for (std::size_t step = 0; step < t; ++step) {
                Tensor x_t = reshape(slice(x, 1, step, 1), Shape{b, x.size(2)});
                auto [h_next, c_next] = lstm_cell_step(x_t, h_t, c_t, params.lstm);
                h_t = h_next;
                c_t = c_next;
                steps.push_back(reshape(h_t, Shape{b, 1, h}));
            }
            return concat(steps, 1);
        }
    }
    throw ConfigError("unknown base kind");
}

}  // namespace aila
