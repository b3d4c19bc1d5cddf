#include "aila/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace aila {

namespace {

struct Entry {
    std::string section;  // empty for top-level keys
    std::string key;
    std::string value;
    std::string where;  // "file:line" for messages
};

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::vector<Entry> tokenize(const std::string& text, const std::string& filename) {
    std::vector<Entry> entries;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::string section;
    while (std::getline(in, line)) {
        ++line_no;
        if (const std::size_t hash = line.find('#'); hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        if (strip(line).empty()) continue;
        const std::string where = filename + ":" + std::to_string(line_no);

        const bool indented = line.size() >= 2 && line[0] == ' ';
        const std::size_t colon = line.find(':');
        if (colon == std::string::npos) {
            throw ConfigError(where + ": expected 'key: value'");
        }
        const std::string key = strip(line.substr(0, colon));
        const std::string value = strip(line.substr(colon + 1));
        if (key.empty()) throw ConfigError(where + ": empty key");

        if (!indented) {
            if (value.empty()) {
                section = key;  // section header
                entries.push_back({"", "__section__" + key, "", where});
            } else {
                section.clear();
                entries.push_back({"", key, value, where});
            }
        } else {
            if (section.empty()) {
                throw ConfigError(where + ": indented key '" + key + "' outside any section");
            }
            if (value.empty()) throw ConfigError(where + ": key '" + key + "' has no value");
            entries.push_back({section, key, value, where});
        }
    }
    return entries;
}

std::size_t parse_size(const Entry& e) {
    try {
        const long long v = std::stoll(e.value);
        if (v < 0) throw std::out_of_range("negative");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(e.where + ": '" + e.key + "' expects a non-negative integer, got '" +
                          e.value + "'");
    }
}

double parse_double(const Entry& e) {
    try {
        std::size_t used = 0;
        const double v = std::stod(e.value, &used);
        if (used != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(e.where + ": '" + e.key + "' expects a number, got '" + e.value + "'");
    }
}

bool parse_bool(const Entry& e) {
    if (e.value == "true" || e.value == "yes" || e.value == "on") return true;
    if (e.value == "false" || e.value == "no" || e.value == "off") return false;
    throw ConfigError(e.where + ": '" + e.key + "' expects true/false, got '" + e.value + "'");
}

std::vector<std::string> parse_list(const Entry& e) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : e.value) {
        if (c == ',') {
            const std::string v = strip(cur);
            if (!v.empty()) out.push_back(v);
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string v = strip(cur);
    if (!v.empty()) out.push_back(v);
    if (out.empty()) throw ConfigError(e.where + ": '" + e.key + "' expects a non-empty list");
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const Entry& e) {
    std::vector<std::uint64_t> out;
    for (const std::string& s : parse_list(e)) {
        try {
            out.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw ConfigError(e.where + ": seed '" + s + "' is not an integer");
        }
    }
    return out;
}

void wrap_config_error(const Entry& e, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const ConfigError& err) {
        const std::string msg = err.what();
        if (msg.rfind(e.where, 0) == 0) throw;  // already located
        throw ConfigError(e.where + ": " + msg);
    }
}

void apply_entry(RunConfigFile& cfg, const Entry& e) {
    // top level --------------------------------------------------------
    if (e.section.empty()) {
        if (e.key.rfind("__section__", 0) == 0) {
            const std::string name = e.key.substr(11);
            if (name == "model" || name == "train" || name == "data") return;
            if (name == "ablation") {
                cfg.has_ablation = true;
                return;
            }
            throw ConfigError(e.where + ": unknown key '" + name + "'");
        }
        if (e.key == "output_dir") {
            cfg.output_dir = e.value;
            return;
        }
        throw ConfigError(e.where + ": unknown key '" + e.key + "'");
    }

    // model -------------------------------------------------------------
    if (e.section == "model") {
        ModelConfig& m = cfg.ctx.model;
        if (e.key == "variant") {
            wrap_config_error(e, [&] { m.variant = variant_from_string(e.value); });
        } else if (e.key == "layers") {
            m.num_layers = parse_size(e);
        } else if (e.key == "hidden") {
            m.hidden = parse_size(e);
        } else if (e.key == "dk") {
            m.d_k = parse_size(e);
        } else if (e.key == "dv") {
            m.d_v = parse_size(e);
        } else if (e.key == "heads") {
            m.heads = parse_size(e);
        } else if (e.key == "base") {
            wrap_config_error(e, [&] { m.base = base_kind_from_string(e.value); });
        } else if (e.key == "head") {
            wrap_config_error(e, [&] { m.head = head_kind_from_string(e.value); });
        } else if (e.key == "classes") {
            m.num_classes = parse_size(e);
        } else if (e.key == "task_dim") {
            m.task_dim = parse_size(e);
        } else {
            throw ConfigError(e.where + ": unknown key '" + e.key + "' in section model");
        }
        return;
    }

    // train ---------------------------------------------------------------
    if (e.section == "train") {
        TrainConfig& t = cfg.ctx.train;
        if (e.key == "lr") {
            t.lr = parse_double(e);
        } else if (e.key == "epochs") {
            t.epochs = parse_size(e);
        } else if (e.key == "batch") {
            t.batch_size = parse_size(e);
        } else if (e.key == "patience") {
            t.patience = parse_size(e);
        } else if (e.key == "seeds") {
            t.seeds = parse_seed_list(e);
        } else if (e.key == "loss") {
            wrap_config_error(e, [&] { t.loss = loss_kind_from_string(e.value); });
        } else if (e.key == "clip") {
            t.grad_clip = parse_double(e);
        } else if (e.key == "beta1") {
            t.beta1 = parse_double(e);
        } else if (e.key == "beta2") {
            t.beta2 = parse_double(e);
        } else {
            throw ConfigError(e.where + ": unknown key '" + e.key + "' in section train");
        }
        return;
    }

    // data ----------------------------------------------------------------
    if (e.section == "data") {
        DataSpec& d = cfg.ctx.data;
        if (e.key == "kind") {
            if (e.value != "csv" && e.value != "synth_long_memory" && e.value != "synth_token") {
                throw ConfigError(e.where + ": unknown data kind '" + e.value + "'");
            }
            d.kind = e.value;
        } else if (e.key == "path") {
            d.path = e.value;
        } else if (e.key == "column") {
            d.value_column = e.value;
        } else if (e.key == "monthly") {
            d.monthly = parse_bool(e);
        } else if (e.key == "window") {
            d.window = parse_size(e);
        } else if (e.key == "horizon") {
            d.horizon = parse_size(e);
        } else if (e.key == "examples") {
            d.examples = parse_size(e);
        } else if (e.key == "lag") {
            d.lag = parse_size(e);
        } else if (e.key == "noise") {
            d.noise = parse_double(e);
        } else if (e.key == "seed") {
            d.seed = parse_size(e);
        } else if (e.key == "length") {
            d.length = parse_size(e);
        } else if (e.key == "vocab") {
            d.vocab = parse_size(e);
        } else if (e.key == "emb") {
            d.embed_dim = parse_size(e);
        } else {
            throw ConfigError(e.where + ": unknown key '" + e.key + "' in section data");
        }
        return;
    }

    // ablation --------------------------------------------------------------
    if (e.section == "ablation") {
        cfg.has_ablation = true;
        if (e.key == "axis") {
            wrap_config_error(e, [&] { cfg.axis = ablation_axis_from_string(e.value); });
        } else if (e.key == "values") {
            cfg.values = parse_list(e);
        } else if (e.key == "retrain") {
            cfg.retrain_knockout = parse_bool(e);
        } else {
            throw ConfigError(e.where + ": unknown key '" + e.key + "' in section ablation");
        }
        return;
    }

    throw ConfigError(e.where + ": unknown key '" + e.section + "'");
}

}  // namespace

RunConfigFile parse_run_config_text(const std::string& text, const std::string& filename) {
    RunConfigFile cfg;
    for (const Entry& e : tokenize(text, filename)) apply_entry(cfg, e);
    if (cfg.ctx.data.kind.empty()) {
        throw ConfigError(filename + ": data section must set 'kind'");
    }
    return cfg;
}

RunConfigFile parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config_text(ss.str(), path);
}

void apply_override(RunConfigFile& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    const std::size_t dot = path.find('.');
    Entry e;
    e.where = "--set " + path;
    e.value = value;
    if (dot == std::string::npos) {
        e.key = path;
    } else {
        e.section = path.substr(0, dot);
        e.key = path.substr(dot + 1);
    }
    apply_entry(cfg, e);
}

void check_compatibility(const RunConfigFile& cfg) {
    const HeadKind head = cfg.ctx.model.head;
    const LossKind loss = cfg.ctx.train.loss;
    const bool ok = (head == HeadKind::regression && loss == LossKind::mse) ||
                    (head == HeadKind::binary_classification && loss == LossKind::binary_ce) ||
                    (head == HeadKind::multiclass && loss == LossKind::multiclass_ce);
    if (!ok) {
        throw ConfigError("head kind '" + to_string(head) + "' is incompatible with loss '" +
                          to_string(loss) + "'");
    }
    if (cfg.ctx.data.kind == "synth_token" && cfg.ctx.model.head == HeadKind::regression) {
        throw ConfigError("token data needs a classification head");
    }
    cfg.ctx.model.validate();
    cfg.ctx.train.validate();
}

std::string render_run_config(const RunConfigFile& cfg) {
    std::ostringstream os;
    const ModelConfig& m = cfg.ctx.model;
    os << "model:\n";
    os << "  variant: " << to_string(m.variant) << "\n";
    os << "  layers: " << m.num_layers << "\n";
    os << "  hidden: " << m.hidden << "\n";
    os << "  dk: " << m.d_k << "\n";
    os << "  dv: " << m.d_v << "\n";
    os << "  heads: " << m.heads << "\n";
    os << "  base: " << to_string(m.base) << "\n";
    os << "  head: " << to_string(m.head) << "\n";
    os << "  classes: " << m.num_classes << "\n";
    if (m.task_dim) os << "  task_dim: " << *m.task_dim << "\n";

    const TrainConfig& t = cfg.ctx.train;
    os << "train:\n";
    os << "  lr: " << t.lr << "\n";
    os << "  epochs: " << t.epochs << "\n";
    os << "  batch: " << t.batch_size << "\n";
    os << "  patience: " << t.patience << "\n";
    os << "  seeds: ";
    for (std::size_t i = 0; i < t.seeds.size(); ++i) os << (i ? "," : "") << t.seeds[i];
    os << "\n";
    os << "  loss: " << to_string(t.loss) << "\n";
    if (t.grad_clip) os << "  clip: " << *t.grad_clip << "\n";

    const DataSpec& d = cfg.ctx.data;
    os << "data:\n";
    os << "  kind: " << d.kind << "\n";
    if (d.kind == "csv") {
        os << "  path: " << d.path << "\n";
        os << "  column: " << d.value_column << "\n";
        os << "  monthly: " << (d.monthly ? "true" : "false") << "\n";
        os << "  window: " << d.window << "\n";
        os << "  horizon: " << d.horizon << "\n";
    } else if (d.kind == "synth_long_memory") {
        os << "  examples: " << d.examples << "\n";
        os << "  window: " << d.window << "\n";
        os << "  lag: " << d.lag << "\n";
        os << "  noise: " << d.noise << "\n";
        os << "  seed: " << d.seed << "\n";
    } else if (d.kind == "synth_token") {
        os << "  examples: " << d.examples << "\n";
        os << "  length: " << d.length << "\n";
        os << "  vocab: " << d.vocab << "\n";
        os << "  seed: " << d.seed << "\n";
        os << "  emb: " << d.embed_dim << "\n";
    }

    if (cfg.has_ablation) {
        os << "ablation:\n";
        os << "  axis: " << to_string(cfg.axis) << "\n";
        os << "  values: ";
        for (std::size_t i = 0; i < cfg.values.size(); ++i) os << (i ? "," : "") << cfg.values[i];
        os << "\n";
        if (cfg.retrain_knockout) os << "  retrain: true\n";
    }
    os << "output_dir: " << cfg.output_dir << "\n";
    return os.str();
}

}  // namespace aila
