#include "aila/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace aila {

// ---------------------------------------------------------------------------
// enum names
// ---------------------------------------------------------------------------

std::string to_string(Variant v) {
    switch (v) {
        case Variant::aila1: return "aila1";
        case Variant::aila2: return "aila2";
        case Variant::plain: return "plain";
        case Variant::residual_sum: return "residual_sum";
        case Variant::dense_concat: return "dense_concat";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    if (s == "aila1") return Variant::aila1;
    if (s == "aila2") return Variant::aila2;
    if (s == "plain") return Variant::plain;
    if (s == "residual_sum") return Variant::residual_sum;
    if (s == "dense_concat") return Variant::dense_concat;
    throw ConfigError("unknown variant '" + s + "'");
}

std::string to_string(BaseKind b) { return b == BaseKind::lstm ? "lstm" : "mlp"; }

BaseKind base_kind_from_string(const std::string& s) {
    if (s == "lstm") return BaseKind::lstm;
    if (s == "mlp") return BaseKind::mlp;
    throw ConfigError("unknown base kind '" + s + "'");
}

std::string to_string(HeadKind h) {
    switch (h) {
        case HeadKind::regression: return "regression";
        case HeadKind::binary_classification: return "binary";
        case HeadKind::multiclass: return "multiclass";
    }
    return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "regression") return HeadKind::regression;
    if (s == "binary") return HeadKind::binary_classification;
    if (s == "multiclass") return HeadKind::multiclass;
    throw ConfigError("unknown head kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// ModelConfig
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (hidden < 1) throw ConfigError("hidden width must be >= 1");
    if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
    if (heads < 1) throw ConfigError("heads must be >= 1");
    if (variant == Variant::aila1 && hidden % heads != 0) {
        throw ConfigError("hidden width " + std::to_string(hidden) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (variant == Variant::aila2) {
        if (d_k % heads != 0 || d_v % heads != 0) {
            throw ConfigError("d_k and d_v must be divisible by heads");
        }
        if (d_v != hidden) {
            throw ConfigError("d_v (" + std::to_string(d_v) + ") must equal hidden width (" +
                              std::to_string(hidden) + ") for the residual update");
        }
    }
    if (head == HeadKind::multiclass && num_classes < 2) {
        throw ConfigError("multiclass head needs num_classes >= 2");
    }
    if (task_dim && *task_dim < 1) throw ConfigError("task_dim must be >= 1 when set");
    if (vocab > 0 && embed_dim == 0) throw ConfigError("token models need embed_dim > 0");
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j{{"variant", to_string(variant)}, {"layers", num_layers},
                     {"hidden", hidden},              {"dk", d_k},
                     {"dv", d_v},                     {"heads", heads},
                     {"base", to_string(base)},       {"head", to_string(head)},
                     {"classes", num_classes},        {"input_dim", input_dim},
                     {"vocab", vocab},                {"emb", embed_dim}};
    if (task_dim) j["task_dim"] = *task_dim;
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.num_layers = j.at("layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.d_k = j.at("dk").get<std::size_t>();
    c.d_v = j.at("dv").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.base = base_kind_from_string(j.at("base").get<std::string>());
    c.head = head_kind_from_string(j.at("head").get<std::string>());
    c.num_classes = j.at("classes").get<std::size_t>();
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.embed_dim = j.at("emb").get<std::size_t>();
    if (j.contains("task_dim")) c.task_dim = j.at("task_dim").get<std::size_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

void Model::register_param(const std::string& name, const Tensor& t) {
    registry_.emplace_back(name, t);
}

namespace {

Tensor init_uniform(Shape shape, std::mt19937_64& rng, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound, true);
}

}  // namespace

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    std::mt19937_64 rng(seed);

    if (config.vocab > 0) {
        m.embed_ = init_uniform({config.vocab, config.embed_dim}, rng, config.vocab);
        m.register_param("embed.table", m.embed_);
    }
    if (config.task_dim) {
        m.task_.t = init_uniform({*config.task_dim}, rng, *config.task_dim);
        m.task_.present = true;
        m.register_param("task.t", m.task_.t);
    }

    const std::size_t d = config.hidden;
    const std::size_t first_in = config.vocab > 0 ? config.embed_dim : config.input_dim;
    for (std::size_t j = 1; j <= config.num_layers; ++j) {
        Layer layer;
        const std::string prefix = "layer" + std::to_string(j) + ".";
        const std::size_t in_dim = j == 1 ? first_in : d;

        layer.base.kind = config.base;
        if (config.base == BaseKind::lstm) {
            layer.base.lstm.hidden = d;
            layer.base.lstm.w = init_uniform({in_dim + d, 4 * d}, rng, in_dim + d);
            layer.base.lstm.b = init_uniform({4 * d}, rng, in_dim + d);
            m.register_param(prefix + "base.w", layer.base.lstm.w);
            m.register_param(prefix + "base.b", layer.base.lstm.b);
        } else {
            layer.base.mlp.w = init_uniform({in_dim, d}, rng, in_dim);
            layer.base.mlp.b = init_uniform({d}, rng, in_dim);
            m.register_param(prefix + "base.w", layer.base.mlp.w);
            m.register_param(prefix + "base.b", layer.base.mlp.b);
        }

        switch (config.variant) {
            case Variant::aila1: {
                const bool has_task = m.task_.present;
                if (j >= 2 || has_task) {
                    Arch1Integrator integ;
                    integ.width = d;
                    integ.num_heads = config.heads;
                    for (std::size_t i = 1; i < j; ++i) {
                        Tensor w = init_uniform({d, d}, rng, d);
                        integ.proj.push_back(w);
                        m.register_param(prefix + "arch1.proj" + std::to_string(i), w);
                    }
                    if (has_task) {
                        integ.task_proj = init_uniform({*config.task_dim, d}, rng, *config.task_dim);
                        m.register_param(prefix + "arch1.task_proj", integ.task_proj);
                    }
                    const std::size_t dh = d / config.heads;
                    const std::size_t cands = integ.candidates(has_task);
                    for (std::size_t k = 1; k <= config.heads; ++k) {
                        Tensor w = init_uniform({cands * dh}, rng, dh);
                        integ.head_scorers.push_back(w);
                        m.register_param(prefix + "arch1.scorer" + std::to_string(k), w);
                    }
                    layer.arch1 = std::move(integ);
                }
                break;
            }
            case Variant::aila2: {
                if (j >= 2) {
                    Arch2Integrator integ;
                    integ.num_heads = config.heads;
                    integ.w_query = init_uniform({d, config.d_k}, rng, d);
                    integ.w_key = init_uniform({d, config.d_k}, rng, d);
                    integ.w_value = init_uniform({d, config.d_v}, rng, d);
                    m.register_param(prefix + "arch2.wq", integ.w_query);
                    m.register_param(prefix + "arch2.wk", integ.w_key);
                    m.register_param(prefix + "arch2.wv", integ.w_value);
                    layer.arch2 = std::move(integ);
                }
                break;
            }
            case Variant::dense_concat: {
                if (j >= 2) {
                    layer.dense_proj = init_uniform({(j - 1) * d, d}, rng, (j - 1) * d);
                    m.register_param(prefix + "dense.proj", layer.dense_proj);
                }
                break;
            }
            case Variant::plain:
            case Variant::residual_sum:
                break;
        }

        layer.ln.gain = Tensor(Shape{d}, 1.0, true);
        layer.ln.bias = Tensor(Shape{d}, 0.0, true);
        m.register_param(prefix + "ln.gain", layer.ln.gain);
        m.register_param(prefix + "ln.bias", layer.ln.bias);
        m.layers_.push_back(std::move(layer));
    }

    const std::size_t out_dim = config.head == HeadKind::multiclass ? config.num_classes : 1;
    m.head_w_ = init_uniform({d, out_dim}, rng, d);
    m.head_b_ = init_uniform({out_dim}, rng, d);
    m.register_param("head.w", m.head_w_);
    m.register_param("head.b", m.head_b_);
    return m;
}

Model build_baseline(Variant variant, const ModelConfig& config, std::uint64_t seed) {
    if (variant != Variant::plain && variant != Variant::residual_sum &&
        variant != Variant::dense_concat) {
        throw ConfigError("build_baseline expects a fixed-skip variant, got " + to_string(variant));
    }
    ModelConfig c = config;
    c.variant = variant;
    return Model::build(c, seed);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

Tensor Model::forward(const Tensor& x, const std::set<std::size_t>* knockout, ForwardTrace* trace,
                      const std::vector<std::size_t>* lengths) const {
    const std::size_t n = config_.num_layers;
    if (knockout) {
        for (std::size_t idx : *knockout) {
            if (idx >= n) {
                throw ConfigError("knockout index " + std::to_string(idx) +
                                  " out of range for " + std::to_string(n) + " layers");
            }
        }
    }

    Tensor cur = x;
    if (config_.vocab > 0) {
        if (x.rank() != 3 || x.size(2) != config_.vocab) {
            throw ShapeError("token input must be one-hot (batch x time x vocab), got " +
                             shape_str(x.shape()));
        }
        const std::size_t b = x.size(0), t = x.size(1);
        Tensor flat = matmul(reshape(x, Shape{b * t, config_.vocab}), embed_);
        cur = reshape(flat, Shape{b, t, config_.embed_dim});
    }

    LayerState state;
    Tensor h_prev;
    for (std::size_t j = 1; j <= n; ++j) {
        const Layer& layer = layers_[j - 1];

        Tensor input;
        if (j == 1) {
            input = cur;
        } else if (config_.variant == Variant::dense_concat) {
            const std::size_t feat_axis = state.outputs[0].rank() - 1;
            Tensor stacked = concat(state.outputs, feat_axis);
            if (stacked.rank() == 3) {
                const std::size_t b = stacked.size(0), t = stacked.size(1);
                Tensor flat = matmul(reshape(stacked, Shape{b * t, stacked.size(2)}),
                                     layer.dense_proj);
                input = reshape(flat, Shape{b, t, config_.hidden});
            } else {
                input = matmul(stacked, layer.dense_proj);
            }
        } else {
            input = h_prev;
        }

        Tensor h_tilde = base_forward(input, layer.base);

        Tensor aggregate;
        switch (config_.variant) {
            case Variant::aila1:
                if (layer.arch1) aggregate = arch1_integrate(h_tilde, state, *layer.arch1, task_);
                break;
            case Variant::aila2:
                if (layer.arch2) {
                    aggregate = arch2_integrate(h_tilde, state, *layer.arch2, j,
                                                trace ? &trace->attn : nullptr);
                }
                break;
            case Variant::residual_sum:
                if (j >= 2) aggregate = h_prev;
                break;
            case Variant::plain:
            case Variant::dense_concat:
                break;
        }

        Tensor h_j = layer_update(h_tilde, aggregate, layer.ln);
        if (knockout && knockout->count(j - 1)) h_j = scale(h_j, 0.0);
        state.push(h_j);
        h_prev = h_j;
    }

    Tensor feats;
    if (h_prev.rank() == 3) {
        const std::size_t b = h_prev.size(0), t = h_prev.size(1);
        std::vector<std::size_t> steps;
        if (lengths) {
            if (lengths->size() != b) {
                throw ShapeError("lengths size " + std::to_string(lengths->size()) +
                                 " does not match batch " + std::to_string(b));
            }
            for (std::size_t len : *lengths) {
                if (len == 0 || len > t) throw DataError("sequence length out of range");
                steps.push_back(len - 1);
            }
        } else {
            steps.assign(b, t - 1);
        }
        feats = select_time(h_prev, steps);
    } else {
        feats = h_prev;
    }

    Tensor pred = add(matmul(feats, head_w_), head_b_);
    if (trace) trace->state = std::move(state);
    return pred;
}

// ---------------------------------------------------------------------------
// Registry helpers
// ---------------------------------------------------------------------------

std::size_t Model::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : registry_) n += t.numel();
    return n;
}

std::uint64_t Model::param_checksum() const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : registry_) {
        mix(reinterpret_cast<const unsigned char*>(name.data()), name.size());
        for (double v : t.values()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            unsigned char bytes[8];
            std::memcpy(bytes, &bits, 8);
            mix(bytes, 8);
        }
    }
    return h;
}

std::vector<Tensor> Model::snapshot_params() const {
    std::vector<Tensor> snap;
    snap.reserve(registry_.size());
    for (const auto& [name, t] : registry_) snap.push_back(t.clone());
    return snap;
}

void Model::restore_params(const std::vector<Tensor>& snapshot) {
    if (snapshot.size() != registry_.size()) {
        throw ContractError("snapshot size does not match registry");
    }
    for (std::size_t i = 0; i < snapshot.size(); ++i) {
        registry_[i].second.values() = snapshot[i].values();
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, config echo, named f64 payloads.
// All integers and doubles little-endian.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'I', 'L', 'A', 'C', 'K', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void Model::save_checkpoint(const std::string& path, const nlohmann::json& run_echo) const {
    nlohmann::json echo{{"model", config_.to_json()}};
    if (!run_echo.is_null() && !run_echo.empty()) echo["run"] = run_echo;
    const std::string echo_str = echo.dump();

    std::string out(kMagic, 8);
    put_u32(out, 1);
    put_u64(out, echo_str.size());
    out += echo_str;
    put_u32(out, static_cast<std::uint32_t>(registry_.size()));
    for (const auto& [name, t] : registry_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) put_u64(out, e);
        for (double v : t.values()) put_f64(out, v);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write on checkpoint: " + path);
}

Model Model::load_checkpoint(const std::string& path, nlohmann::json* run_echo) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(8) != std::string(kMagic, 8)) throw DataError("not a checkpoint file: " + path);
    const std::uint32_t version = r.u32();
    if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));

    const std::uint64_t echo_len = r.u64();
    nlohmann::json echo = nlohmann::json::parse(r.bytes(echo_len));
    Model m = Model::build(ModelConfig::from_json(echo.at("model")), 0);
    if (run_echo) *run_echo = echo.contains("run") ? echo.at("run") : nlohmann::json{};

    const std::uint32_t n = r.u32();
    if (n != m.registry_.size()) {
        throw ContractError("checkpoint has " + std::to_string(n) + " tensors, model expects " +
                            std::to_string(m.registry_.size()));
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string name = r.bytes(r.u32());
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (auto& e : shape) e = r.u64();
        auto& [expect_name, t] = m.registry_[i];
        if (name != expect_name) {
            throw ContractError("checkpoint tensor '" + name + "' does not match model '" +
                                expect_name + "'");
        }
        if (shape != t.shape()) {
            throw ContractError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                                ", model expects " + shape_str(t.shape()));
        }
        for (double& v : t.values()) v = r.f64();
    }
    return m;
}

}  // namespace aila
