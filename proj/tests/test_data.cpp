#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "aila/data.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aila;
using testutil::bit_identical;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream f(path, std::ios::trunc);
    f << content;
    return path;
}

}  // namespace

TEST_CASE("csv windows are built over the log series") {
    std::string csv = "date,price\n";
    for (int i = 0; i < 4; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "2020-0%d-01,%.17g\n", i + 1, std::exp(double(i)));
        csv += buf;
    }
    const std::string path = write_temp("aila_series.csv", csv);
    SeriesDataset ds = load_csv_series(path, "price", 2, 1);
    REQUIRE(ds.size() == 2);

    // first window holds log values [0, 1] and targets 2, before normalization
    CHECK(ds.norm.denormalize(ds.inputs[0]) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(ds.norm.denormalize(ds.inputs[1]) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(ds.norm.denormalize(ds.targets[0]) == doctest::Approx(2.0).epsilon(1e-9));
    std::remove(path.c_str());
}

TEST_CASE("normalize and denormalize are inverse") {
    NormRecord norm{3.2, 1.7};
    for (double v : {0.0, -2.5, 7.75, 1e-3}) {
        CHECK(std::abs(norm.denormalize(norm.normalize(v)) - v) < 1e-12);
    }
}

TEST_CASE("constant series hits the sigma floor and maps to zero") {
    std::string csv = "date,price\n";
    for (int i = 0; i < 10; ++i) csv += "2021-01-0" + std::to_string(i % 9 + 1) + ",5.0\n";
    const std::string path = write_temp("aila_const.csv", csv);
    SeriesDataset ds = load_csv_series(path, "price", 3, 1);
    CHECK(ds.norm.stddev == doctest::Approx(1e-8));
    // the sigma floor keeps outputs at zero up to summation rounding
    for (double v : ds.inputs) CHECK(std::abs(v) < 1e-6);
    for (double v : ds.targets) CHECK(std::abs(v) < 1e-6);
    std::remove(path.c_str());
}

TEST_CASE("csv errors name the offending row") {
    const std::string path =
        write_temp("aila_bad.csv", "date,price\n2020-01-01,2.0\n2020-01-02,-1.0\n");
    try {
        load_csv_series(path, "price", 1, 1);
        FAIL("expected DataError");
    } catch (const DataError& err) {
        CHECK(std::string(err.what()).find("row 3") != std::string::npos);
    }
    std::remove(path.c_str());

    const std::string tiny = write_temp("aila_tiny.csv", "date,price\n2020-01-01,2.0\n");
    CHECK_THROWS_AS(load_csv_series(tiny, "price", 5, 1), DataError);
    std::remove(tiny.c_str());

    const std::string nocol = write_temp("aila_nocol.csv", "date,price\n2020-01-01,2.0\n");
    CHECK_THROWS_AS(load_csv_series(nocol, "close", 1, 1), DataError);
    std::remove(nocol.c_str());
}

TEST_CASE("monthly aggregation keeps the month-end value") {
    const std::string path = write_temp("aila_monthly.csv",
                                        "date,price\n"
                                        "2020-01-03,1.0\n2020-01-28,2.0\n"
                                        "2020-02-02,3.0\n2020-02-27,4.0\n"
                                        "2020-03-05,5.0\n2020-03-30,6.0\n"
                                        "2020-04-01,7.0\n2020-04-30,8.0\n");
    SeriesDataset ds = load_csv_series(path, "price", 2, 1, true);
    REQUIRE(ds.size() == 2);  // 4 monthly values
    CHECK(ds.norm.denormalize(ds.inputs[0]) == doctest::Approx(std::log(2.0)));
    CHECK(ds.norm.denormalize(ds.inputs[1]) == doctest::Approx(std::log(4.0)));
    std::remove(path.c_str());
}

TEST_CASE("normalization uses training-visible values only") {
    std::string csv = "date,price\n";
    for (int i = 0; i < 60; ++i) {
        csv += "2020-01-01," + std::to_string(1.0 + 0.1 * i + (i > 45 ? 100.0 : 0.0)) + "\n";
    }
    const std::string path = write_temp("aila_leak.csv", csv);
    const std::size_t window = 4, horizon = 1;
    SeriesDataset ds = load_csv_series(path, "price", window, horizon);

    // recompute the statistics from the training-visible prefix alone
    std::vector<double> logs;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        logs.push_back(std::log(std::stod(line.substr(line.find(',') + 1))));
    }
    const std::size_t visible = (ds.train_end - 1) + window + horizon;
    double mean = 0.0;
    for (std::size_t i = 0; i < visible; ++i) mean += logs[i];
    mean /= static_cast<double>(visible);
    double var = 0.0;
    for (std::size_t i = 0; i < visible; ++i) var += (logs[i] - mean) * (logs[i] - mean);
    var /= static_cast<double>(visible);

    CHECK(ds.norm.mean == mean);  // bit-exact: same inputs, same arithmetic
    CHECK(ds.norm.stddev == std::max(std::sqrt(var), 1e-8));
    CHECK(visible < logs.size());  // the jump after row 45 stays out of the stats
    std::remove(path.c_str());
}

TEST_CASE("windows never look at or past the target time") {
    // series value at time t is e^t, so log values recover the time index
    std::string csv = "date,price\n";
    for (int i = 0; i < 30; ++i) csv += "2020-01-01," + std::to_string(std::exp(double(i))) + "\n";
    const std::string path = write_temp("aila_time.csv", csv);
    SeriesDataset ds = load_csv_series(path, "price", 5, 2);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double target_time = ds.norm.denormalize(ds.targets[i]);
        for (std::size_t k = 0; k < ds.window; ++k) {
            CHECK(ds.norm.denormalize(ds.inputs[i * ds.window + k]) < target_time);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("splits are chronological and disjoint") {
    SeriesDataset ds = synth_long_memory(100, 8, 3, 5);
    CHECK(ds.train_end == 70);
    CHECK(ds.val_end == 85);
    CHECK(ds.view(Split::train)->size() == 70);
    CHECK(ds.view(Split::val)->size() == 15);
    CHECK(ds.view(Split::test)->size() == 15);
}

TEST_CASE("long-memory task is exactly solvable through the teacher at zero noise") {
    SeriesDataset ds = synth_long_memory(50, 10, 4, 7, 0.0);
    double mse = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double key = ds.inputs[i * 10 + (10 - 1 - 4)];
        const double r = ds.targets[i] - long_memory_target_fn(key);
        mse += r * r;
    }
    CHECK(mse == 0.0);
}

TEST_CASE("long-memory generation is a pure function of the seed") {
    SeriesDataset a = synth_long_memory(40, 12, 5, 99);
    SeriesDataset b = synth_long_memory(40, 12, 5, 99);
    CHECK(bit_identical(a.inputs, b.inputs));
    CHECK(bit_identical(a.targets, b.targets));
    CHECK(a.fingerprint() == b.fingerprint());
    SeriesDataset c = synth_long_memory(40, 12, 5, 100);
    CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("long-memory rejects lag >= window") {
    CHECK_THROWS_AS(synth_long_memory(10, 8, 8, 1), ConfigError);
}

TEST_CASE("last-step regression fails on the long-memory task") {
    SeriesDataset ds = synth_long_memory(2000, 24, 12, 7);
    const auto ls = oracles::LastStepLeastSquares::fit(ds, 0, ds.train_end);
    const double oracle_mse = ls.mse(ds, ds.train_end, ds.val_end - ds.train_end);

    // variance of the validation targets
    double mean = 0.0;
    for (std::size_t i = ds.train_end; i < ds.val_end; ++i) mean += ds.targets[i];
    mean /= static_cast<double>(ds.val_end - ds.train_end);
    double var = 0.0;
    for (std::size_t i = ds.train_end; i < ds.val_end; ++i) {
        var += (ds.targets[i] - mean) * (ds.targets[i] - mean);
    }
    var /= static_cast<double>(ds.val_end - ds.train_end);

    CHECK(oracle_mse > 0.9 * var);  // the last step carries no signal
}

TEST_CASE("token task satisfies its construction oracles") {
    TokenDataset ds = synth_token_task(201, 16, 12, 3);
    REQUIRE(ds.size() == 201);

    // order-of-markers oracle labels every example correctly
    std::size_t ones = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int first_a = -1, first_b = -1;
        for (std::size_t p = 0; p < ds.lengths[i]; ++p) {
            const int tok = ds.tokens[i * 16 + p];
            if (tok == 1 && first_a < 0) first_a = static_cast<int>(p);
            if (tok == 2 && first_b < 0) first_b = static_cast<int>(p);
        }
        REQUIRE(first_a >= 0);
        REQUIRE(first_b >= 0);
        const int predicted = first_a < first_b ? 1 : 0;
        CHECK(predicted == ds.labels[i]);
        ones += static_cast<std::size_t>(ds.labels[i]);
        CHECK(ds.lengths[i] <= 16);
        for (std::size_t p = ds.lengths[i]; p < 16; ++p) CHECK(ds.tokens[i * 16 + p] == 0);
        for (std::size_t p = 0; p < ds.lengths[i]; ++p) {
            CHECK(ds.tokens[i * 16 + p] < 12);
        }
    }
    // balanced within one example; majority baseline is chance level
    CHECK(std::abs(static_cast<double>(ones) - 201.0 / 2) <= 0.5 + 1e-9);
    const double majority = std::max(ones, ds.size() - ones) / static_cast<double>(ds.size());
    CHECK(majority <= 0.5 + 1.0 / static_cast<double>(ds.size()));

    CHECK_THROWS_AS(synth_token_task(10, 16, 3, 1), ConfigError);
}

TEST_CASE("batching covers every index exactly once") {
    SeriesDataset ds = synth_long_memory(53, 6, 2, 11);
    const auto groups = batch_indices(53, 8, 77);
    CHECK(groups.size() == 7);  // last partial batch included
    std::set<std::size_t> seen;
    for (const auto& g : groups) {
        for (std::size_t idx : g) CHECK(seen.insert(idx).second);
    }
    CHECK(seen.size() == 53);

    const auto again = batch_indices(53, 8, 77);
    CHECK(groups == again);
    const auto other = batch_indices(53, 8, 78);
    CHECK(groups != other);

    const auto single = batch_indices(5, 100, 1);
    CHECK(single.size() == 1);
    CHECK(single[0].size() == 5);
}

TEST_CASE("batch tensors carry window shapes and targets") {
    SeriesDataset ds = synth_long_memory(20, 6, 2, 13);
    const auto view = ds.view(Split::train);
    const auto bs = batches(*view, 4, 5);
    CHECK(bs.front().x.shape() == Shape{4, 6, 1});
    CHECK(bs.front().y.shape() == Shape{4, 1});

    TokenDataset toks = synth_token_task(20, 8, 8, 13);
    const auto tview = toks.view(Split::train);
    const auto tb = batches(*tview, 4, 5);
    CHECK(tb.front().x.shape() == Shape{4, 8, 8});
    CHECK(tb.front().lengths.size() == 4);
}

TEST_CASE("series cache round-trips bit-exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "aila_cache.bin").string();
    SeriesDataset ds = synth_long_memory(30, 10, 3, 21);
    ds.save_cache(path);
    SeriesDataset loaded = SeriesDataset::load_cache(path);
    CHECK(bit_identical(ds.inputs, loaded.inputs));
    CHECK(bit_identical(ds.targets, loaded.targets));
    CHECK(ds.norm.mean == loaded.norm.mean);
    CHECK(ds.norm.stddev == loaded.norm.stddev);
    CHECK(ds.train_end == loaded.train_end);
    CHECK(ds.val_end == loaded.val_end);
    std::remove(path.c_str());
}

TEST_CASE("data spec round-trips through json") {
    DataSpec spec;
    spec.kind = "synth_long_memory";
    spec.examples = 123;
    spec.window = 9;
    spec.lag = 4;
    spec.noise = 0.01;
    spec.seed = 5;
    const DataSpec back = DataSpec::from_json(spec.to_json());
    CHECK(back.kind == spec.kind);
    CHECK(back.examples == spec.examples);
    CHECK(back.lag == spec.lag);

    BuiltData data = make_dataset(spec);
    CHECK(data.is_series());
    CHECK(data.view(Split::train)->size() > 0);
}
