#include "aila/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace aila {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a_doubles(std::uint64_t h, const std::vector<double>& v) {
    for (double d : v) {
        const auto bits = std::bit_cast<std::uint64_t>(d);
        unsigned char bytes[8];
        std::memcpy(bytes, &bits, 8);
        h = fnv1a(h, bytes, 8);
    }
    return h;
}

// 70/15/15 over example indices; every split non-empty when n >= 3
void assign_splits(std::size_t n, std::size_t& train_end, std::size_t& val_end) {
    train_end = std::max<std::size_t>(1, (n * 70) / 100);
    val_end = std::max(train_end + 1, (n * 85) / 100);
    if (val_end > n) val_end = n;
    if (train_end > n) train_end = n;
}

struct SplitRange {
    std::size_t first, count;
};

SplitRange split_range(Split s, std::size_t train_end, std::size_t val_end, std::size_t n) {
    switch (s) {
        case Split::train: return {0, train_end};
        case Split::val: return {train_end, val_end - train_end};
        case Split::test: return {val_end, n - val_end};
    }
    return {0, 0};
}

class SeriesView final : public BatchSource {
  public:
    SeriesView(const SeriesDataset& ds, SplitRange r) : ds_(&ds), r_(r) {}

    std::size_t size() const override { return r_.count; }

    Batch gather(std::span<const std::size_t> idx) const override {
        const std::size_t b = idx.size();
        const std::size_t t = ds_->window, d = ds_->input_dim;
        Tensor x(Shape{b, t, d});
        Tensor y(Shape{b, 1});
        for (std::size_t r = 0; r < b; ++r) {
            const std::size_t ex = r_.first + idx[r];
            if (idx[r] >= r_.count) throw ContractError("batch index out of split range");
            const double* src = ds_->inputs.data() + ex * t * d;
            std::copy(src, src + t * d, x.values().begin() + r * t * d);
            y.values()[r] = ds_->targets[ex];
        }
        return {std::move(x), std::move(y), {}};
    }

  private:
    const SeriesDataset* ds_;
    SplitRange r_;
};

class TokenView final : public BatchSource {
  public:
    TokenView(const TokenDataset& ds, SplitRange r) : ds_(&ds), r_(r) {}

    std::size_t size() const override { return r_.count; }

    Batch gather(std::span<const std::size_t> idx) const override {
        const std::size_t b = idx.size();
        const std::size_t l = ds_->length, v = ds_->vocab;
        Tensor x(Shape{b, l, v});  // one-hot rows feed the embedding matmul
        Tensor y(Shape{b, 1});
        std::vector<std::size_t> lengths(b);
        for (std::size_t r = 0; r < b; ++r) {
            const std::size_t ex = r_.first + idx[r];
            if (idx[r] >= r_.count) throw ContractError("batch index out of split range");
            for (std::size_t p = 0; p < l; ++p) {
                const int tok = ds_->tokens[ex * l + p];
                x.values()[(r * l + p) * v + static_cast<std::size_t>(tok)] = 1.0;
            }
            y.values()[r] = static_cast<double>(ds_->labels[ex]);
            lengths[r] = ds_->lengths[ex];
        }
        return {std::move(x), std::move(y), std::move(lengths)};
    }

  private:
    const TokenDataset* ds_;
    SplitRange r_;
};

}  // namespace

std::unique_ptr<BatchSource> SeriesDataset::view(Split s) const {
    return std::make_unique<SeriesView>(*this, split_range(s, train_end, val_end, size()));
}

std::unique_ptr<BatchSource> TokenDataset::view(Split s) const {
    return std::make_unique<TokenView>(*this, split_range(s, train_end, val_end, size()));
}

std::uint64_t SeriesDataset::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    h = fnv1a_doubles(h, inputs);
    h = fnv1a_doubles(h, targets);
    return h;
}

std::uint64_t TokenDataset::fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    h = fnv1a(h, reinterpret_cast<const unsigned char*>(tokens.data()),
              tokens.size() * sizeof(int));
    h = fnv1a(h, reinterpret_cast<const unsigned char*>(labels.data()),
              labels.size() * sizeof(int));
    return h;
}

// ---------------------------------------------------------------------------
// CSV pipeline
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

SeriesDataset windows_from_values(const std::vector<double>& log_values, std::size_t window,
                                  std::size_t horizon) {
    if (window < 1) throw ConfigError("window must be >= 1");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (log_values.size() < window + horizon) {
        throw DataError("series has " + std::to_string(log_values.size()) +
                        " rows, needs at least " + std::to_string(window + horizon) +
                        " for one window");
    }
    const std::size_t n = log_values.size() - window - horizon + 1;
    SeriesDataset ds;
    ds.window = window;
    ds.horizon = horizon;
    assign_splits(n, ds.train_end, ds.val_end);

    // normalization statistics from the region visible to training windows
    const std::size_t train_visible = (ds.train_end - 1) + window + horizon;  // exclusive
    double mean = 0.0;
    for (std::size_t i = 0; i < train_visible; ++i) mean += log_values[i];
    mean /= static_cast<double>(train_visible);
    double var = 0.0;
    for (std::size_t i = 0; i < train_visible; ++i) {
        var += (log_values[i] - mean) * (log_values[i] - mean);
    }
    var /= static_cast<double>(train_visible);
    ds.norm.mean = mean;
    ds.norm.stddev = std::max(std::sqrt(var), 1e-8);

    ds.inputs.resize(n * window);
    ds.targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < window; ++k) {
            ds.inputs[i * window + k] = ds.norm.normalize(log_values[i + k]);
        }
        ds.targets[i] = ds.norm.normalize(log_values[i + window - 1 + horizon]);
    }
    return ds;
}

}  // namespace

SeriesDataset load_csv_series(const std::string& path, const std::string& value_column,
                              std::size_t window, std::size_t horizon, bool monthly) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open csv: " + path);
    std::string line;
    if (!std::getline(f, line)) throw DataError("empty csv: " + path);

    const std::vector<std::string> header = split_csv_line(line);
    std::size_t date_col = header.size(), value_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "date") date_col = i;
        if (header[i] == value_column) value_col = i;
    }
    if (value_col == header.size()) {
        throw DataError("csv has no column '" + value_column + "': " + path);
    }
    if (date_col == header.size()) throw DataError("csv has no 'date' column: " + path);

    std::vector<std::pair<std::string, double>> rows;  // (date, value)
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() <= std::max(date_col, value_col)) {
            throw DataError("csv row " + std::to_string(line_no) + " has too few columns");
        }
        double v = 0.0;
        try {
            v = std::stod(cells[value_col]);
        } catch (const std::exception&) {
            throw DataError("csv row " + std::to_string(line_no) + " has non-numeric value '" +
                            cells[value_col] + "'");
        }
        if (v <= 0.0) {
            throw DataError("csv row " + std::to_string(line_no) +
                            " has non-positive value; log transform requires values > 0");
        }
        rows.emplace_back(cells[date_col], v);
    }
    if (rows.empty()) throw DataError("csv has no data rows: " + path);

    std::vector<double> values;
    if (monthly) {
        // month-end close: last value seen per YYYY-MM, in order of first appearance
        std::vector<std::string> order;
        std::map<std::string, double> by_month;
        for (const auto& [date, v] : rows) {
            if (date.size() < 7) throw DataError("date '" + date + "' is not ISO-8601");
            const std::string month = date.substr(0, 7);
            if (!by_month.count(month)) order.push_back(month);
            by_month[month] = v;
        }
        for (const auto& m : order) values.push_back(by_month[m]);
    } else {
        for (const auto& [date, v] : rows) values.push_back(v);
    }

    for (double& v : values) v = std::log(v);
    return windows_from_values(values, window, horizon);
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

double long_memory_target_fn(double x) { return 1.5 + std::tanh(2.0 * x); }

SeriesDataset synth_long_memory(std::size_t num_examples, std::size_t window, std::size_t lag,
                                std::uint64_t seed, double noise_scale) {
    if (lag >= window) {
        throw ConfigError("lag " + std::to_string(lag) + " must be < window " +
                          std::to_string(window));
    }
    if (num_examples < 3) throw ConfigError("need at least 3 examples for the splits");

    SeriesDataset ds;
    ds.window = window;
    ds.horizon = 1;
    assign_splits(num_examples, ds.train_end, ds.val_end);
    ds.inputs.resize(num_examples * window);
    ds.targets.resize(num_examples);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < num_examples; ++i) {
        for (std::size_t t = 0; t < window; ++t) ds.inputs[i * window + t] = gauss(rng);
        const double key = ds.inputs[i * window + (window - 1 - lag)];
        ds.targets[i] = long_memory_target_fn(key) + noise_scale * gauss(rng);
    }
    return ds;
}

TokenDataset synth_token_task(std::size_t num_examples, std::size_t length, std::size_t vocab,
                              std::uint64_t seed, std::size_t embed_dim) {
    if (vocab < 4) {
        throw ConfigError("vocab " + std::to_string(vocab) +
                          " too small: need pad, two markers and at least one filler");
    }
    if (length < 2) throw ConfigError("sequence length must be >= 2");
    if (num_examples < 3) throw ConfigError("need at least 3 examples for the splits");

    constexpr int kMarkerA = 1, kMarkerB = 2;
    TokenDataset ds;
    ds.length = length;
    ds.vocab = vocab;
    ds.pad_id = 0;
    ds.embed_dim = embed_dim;
    assign_splits(num_examples, ds.train_end, ds.val_end);
    ds.tokens.assign(num_examples * length, 0);
    ds.lengths.resize(num_examples);
    ds.labels.resize(num_examples);

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len_dist(std::max<std::size_t>(2, length / 2),
                                                        length);
    std::uniform_int_distribution<int> filler(3, static_cast<int>(vocab) - 1);
    for (std::size_t i = 0; i < num_examples; ++i) {
        const int label = static_cast<int>(i % 2);  // alternation keeps classes balanced
        const std::size_t len = len_dist(rng);
        for (std::size_t p = 0; p < len; ++p) ds.tokens[i * length + p] = filler(rng);
        std::uniform_int_distribution<std::size_t> pos_dist(0, len - 1);
        std::size_t p1 = pos_dist(rng), p2 = pos_dist(rng);
        while (p2 == p1) p2 = pos_dist(rng);
        if (p1 > p2) std::swap(p1, p2);
        ds.tokens[i * length + p1] = label == 1 ? kMarkerA : kMarkerB;
        ds.tokens[i * length + p2] = label == 1 ? kMarkerB : kMarkerA;
        ds.lengths[i] = len;
        ds.labels[i] = label;
    }
    ds.embedding = Tensor::uniform({vocab, embed_dim}, rng, -1.0 / std::sqrt(double(vocab)),
                                   1.0 / std::sqrt(double(vocab)), true);
    return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed) {
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

std::vector<Batch> batches(const BatchSource& src, std::size_t batch_size,
                           std::uint64_t shuffle_seed) {
    std::vector<Batch> out;
    for (const auto& idx : batch_indices(src.size(), batch_size, shuffle_seed)) {
        out.push_back(src.gather(idx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Series cache file
// ---------------------------------------------------------------------------

namespace {

constexpr char kCacheMagic[8] = {'A', 'I', 'L', 'A', 'D', 'A', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t get_u64(const std::string& buf, std::size_t& pos) {
    if (pos + 8 > buf.size()) throw DataError("dataset cache truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
}

double get_f64(const std::string& buf, std::size_t& pos) {
    return std::bit_cast<double>(get_u64(buf, pos));
}

}  // namespace

void SeriesDataset::save_cache(const std::string& path) const {
    std::string out(kCacheMagic, 8);
    put_u64(out, 1);  // version
    put_u64(out, window);
    put_u64(out, horizon);
    put_u64(out, input_dim);
    put_u64(out, size());
    put_u64(out, train_end);
    put_u64(out, val_end);
    put_f64(out, norm.mean);
    put_f64(out, norm.stddev);
    for (double v : inputs) put_f64(out, v);
    for (double v : targets) put_f64(out, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open dataset cache for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write on dataset cache: " + path);
}

SeriesDataset SeriesDataset::load_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open dataset cache: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kCacheMagic, 8) != 0) {
        throw DataError("not a dataset cache file: " + path);
    }
    std::size_t pos = 8;
    const std::uint64_t version = get_u64(buf, pos);
    if (version != 1) throw DataError("unsupported dataset cache version");

    SeriesDataset ds;
    ds.window = get_u64(buf, pos);
    ds.horizon = get_u64(buf, pos);
    ds.input_dim = get_u64(buf, pos);
    const std::uint64_t n = get_u64(buf, pos);
    ds.train_end = get_u64(buf, pos);
    ds.val_end = get_u64(buf, pos);
    ds.norm.mean = get_f64(buf, pos);
    ds.norm.stddev = get_f64(buf, pos);
    ds.inputs.resize(n * ds.window * ds.input_dim);
    for (double& v : ds.inputs) v = get_f64(buf, pos);
    ds.targets.resize(n);
    for (double& v : ds.targets) v = get_f64(buf, pos);
    return ds;
}

// ---------------------------------------------------------------------------
// DataSpec
// ---------------------------------------------------------------------------

nlohmann::json DataSpec::to_json() const {
    nlohmann::json j{{"kind", kind}};
    if (kind == "csv") {
        j["path"] = path;
        j["column"] = value_column;
        j["monthly"] = monthly;
        j["window"] = window;
        j["horizon"] = horizon;
    } else if (kind == "synth_long_memory") {
        j["examples"] = examples;
        j["window"] = window;
        j["lag"] = lag;
        j["noise"] = noise;
        j["seed"] = seed;
    } else if (kind == "synth_token") {
        j["examples"] = examples;
        j["length"] = length;
        j["vocab"] = vocab;
        j["seed"] = seed;
        j["emb"] = embed_dim;
    }
    return j;
}

DataSpec DataSpec::from_json(const nlohmann::json& j) {
    DataSpec s;
    s.kind = j.at("kind").get<std::string>();
    if (s.kind == "csv") {
        s.path = j.at("path").get<std::string>();
        s.value_column = j.at("column").get<std::string>();
        s.monthly = j.value("monthly", false);
        s.window = j.at("window").get<std::size_t>();
        s.horizon = j.at("horizon").get<std::size_t>();
    } else if (s.kind == "synth_long_memory") {
        s.examples = j.at("examples").get<std::size_t>();
        s.window = j.at("window").get<std::size_t>();
        s.lag = j.at("lag").get<std::size_t>();
        s.noise = j.at("noise").get<double>();
        s.seed = j.at("seed").get<std::uint64_t>();
    } else if (s.kind == "synth_token") {
        s.examples = j.at("examples").get<std::size_t>();
        s.length = j.at("length").get<std::size_t>();
        s.vocab = j.at("vocab").get<std::size_t>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.embed_dim = j.at("emb").get<std::size_t>();
    } else {
        throw ConfigError("unknown data kind '" + s.kind + "'");
    }
    return s;
}

std::unique_ptr<BatchSource> BuiltData::view(Split s) const {
    if (series) return series->view(s);
    if (tokens) return tokens->view(s);
    throw ContractError("BuiltData holds no dataset");
}

std::uint64_t BuiltData::fingerprint() const {
    if (series) return series->fingerprint();
    if (tokens) return tokens->fingerprint();
    throw ContractError("BuiltData holds no dataset");
}

BuiltData make_dataset(const DataSpec& spec) {
    BuiltData out;
    if (spec.kind == "csv") {
        out.series = load_csv_series(spec.path, spec.value_column, spec.window, spec.horizon,
                                     spec.monthly);
    } else if (spec.kind == "synth_long_memory") {
        out.series = synth_long_memory(spec.examples, spec.window, spec.lag, spec.seed, spec.noise);
    } else if (spec.kind == "synth_token") {
        out.tokens = synth_token_task(spec.examples, spec.length, spec.vocab, spec.seed,
                                      spec.embed_dim);
    } else {
        throw ConfigError("unknown data kind '" + spec.kind + "'");
    }
    return out;
}

}  // namespace aila
