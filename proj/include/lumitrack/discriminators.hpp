#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lumitrack/nn.hpp"
#include "lumitrack/reshape.hpp"
#include "lumitrack/sensor_io.hpp"

namespace lumitrack {

// softmax channel holding the matched-window probability
inline constexpr int kMatchClass = 1;

inline NetworkSpec light_discriminator_spec() {
    NetworkSpec s;
    s.in_ch = 1;
    s.in_len = kCurveLen;
    s.layers = {LayerSpec::conv(8, 5),  LayerSpec::batchnorm(),   LayerSpec::relu(),
                LayerSpec::maxpool(2),  LayerSpec::conv(16, 5),   LayerSpec::batchnorm(),
                LayerSpec::relu(),      LayerSpec::maxpool(2),    LayerSpec::conv(32, 5),
                LayerSpec::batchnorm(), LayerSpec::relu(),        LayerSpec::maxpool(2),
                LayerSpec::dense(128),  LayerSpec::dropout(0.25), LayerSpec::dense(32),
                LayerSpec::dense(2),    LayerSpec::softmax()};
    return s;
}

inline NetworkSpec temp_discriminator_spec() {
    NetworkSpec s;
    s.in_ch = 1;
    s.in_len = 2 * kTempLen;
    s.layers = {LayerSpec::dense(64), LayerSpec::dropout(0.25), LayerSpec::relu(),
                LayerSpec::dense(16), LayerSpec::relu(),        LayerSpec::dense(2),
                LayerSpec::softmax()};
    return s;
}

struct Discriminator {
    NetworkSpec spec;
    NetworkParams params;

    bool trained() const { return !params.layers.empty(); }
};

// ---- scoring -------------------------------------------------------------------------

namespace disc_detail {

inline BatchT row_batch(const NetworkSpec& spec, const double* row) {
    BatchT x(1, spec.in_ch, spec.in_len);
    std::copy(row, row + x.v.size(), x.v.begin());
    return x;
}

}  // namespace disc_detail

inline double score_row(const Discriminator& d, const double* row) {
    if (!d.trained()) throw input_error("discriminator has no trained parameters");
    const auto probs = forward(d.spec, d.params, disc_detail::row_batch(d.spec, row), Mode::infer);
    return probs.at(0, kMatchClass, 0);
}

inline double score_light(const Discriminator& d, const NormalizedLightCurve& curve) {
    if (d.spec.in_ch * d.spec.in_len != kCurveLen)
        throw input_error("network does not accept a light curve");
    return score_row(d, curve.values.data());
}

inline double score_temp(const Discriminator& d, const TempPairVector& pair) {
    if (d.spec.in_ch * d.spec.in_len != 2 * kTempLen)
        throw input_error("network does not accept a temperature pair");
    if (!d.trained()) throw input_error("discriminator has no trained parameters");
    BatchT x(1, 1, 2 * kTempLen);
    std::copy(pair.sensor_part.begin(), pair.sensor_part.end(), x.v.begin());
    std::copy(pair.station_part.begin(), pair.station_part.end(), x.v.begin() + kTempLen);
    return forward(d.spec, d.params, x, Mode::infer).at(0, kMatchClass, 0);
}

// Match probabilities for n rows of spec-sized input, evaluated in chunks.
inline std::vector<double> match_probabilities(const Discriminator& d,
                                               const std::vector<double>& X) {
    if (!d.trained()) throw input_error("discriminator has no trained parameters");
    const auto dim = static_cast<std::size_t>(d.spec.in_ch) * d.spec.in_len;
    if (dim == 0 || X.size() % dim != 0)
        throw input_error("row size does not match network input");
    const std::size_t n = X.size() / dim;
    constexpr std::size_t kChunk = 256;
    std::vector<double> out(n);
    for (std::size_t at = 0; at < n; at += kChunk) {
        const auto m = std::min(kChunk, n - at);
        BatchT x(static_cast<int>(m), d.spec.in_ch, d.spec.in_len);
        std::copy(X.begin() + at * dim, X.begin() + (at + m) * dim, x.v.begin());
        const auto probs = forward(d.spec, d.params, x, Mode::infer);
        for (std::size_t b = 0; b < m; ++b)
            out[at + b] = probs.at(static_cast<int>(b), kMatchClass, 0);
    }
    return out;
}

// ---- training ------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 20;
    int batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    double val_fraction = 0.10;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double val_balanced_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
    std::vector<EpochStats> history;
    bool diverged = false;
    int last_good_epoch = 0;  // 0 = initial parameters survived
    std::size_t n_train = 0, n_val = 0;
};

struct TrainResult {
    Discriminator model;
    TrainReport report;
};

namespace disc_detail {

// mean of per-class recalls at the argmax decision
inline double balanced_accuracy(const std::vector<double>& match_prob,
                                const std::vector<int>& labels) {
    double correct[2] = {0, 0}, total[2] = {0, 0};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = match_prob[i] >= 0.5 ? 1 : 0;
        total[labels[i]] += 1;
        if (pred == labels[i]) correct[labels[i]] += 1;
    }
    double acc = 0.0;
    int classes = 0;
    for (int c = 0; c < 2; ++c)
        if (total[c] > 0) {
            acc += correct[c] / total[c];
            ++classes;
        }
    if (classes == 0) return std::numeric_limits<double>::quiet_NaN();
    return acc / classes;
}

inline BatchT gather_batch(const NetworkSpec& spec, const std::vector<double>& X,
                           const std::vector<std::size_t>& rows) {
    const auto dim = static_cast<std::size_t>(spec.in_ch) * spec.in_len;
    BatchT x(static_cast<int>(rows.size()), spec.in_ch, spec.in_len);
    for (std::size_t b = 0; b < rows.size(); ++b)
        std::copy(X.begin() + rows[b] * dim, X.begin() + (rows[b] + 1) * dim,
                  x.v.begin() + b * dim);
    return x;
}

}  // namespace disc_detail

// Trains a fresh network on rows of X. `groups` ties examples that must stay
// on one side of the validation split (sensor ids); pass one group per row.
// On a non-finite loss or gradient the parameters roll back to the last
// completed epoch and training stops with the diverged flag set.
inline TrainResult train_discriminator(const NetworkSpec& spec, const std::vector<double>& X,
                                       const std::vector<int>& y,
                                       const std::vector<std::string>& groups,
                                       const TrainConfig& cfg, std::ostream* log = nullptr) {
    const auto dim = static_cast<std::size_t>(spec.in_ch) * spec.in_len;
    if (y.empty() || X.size() != dim * y.size())
        throw input_error("train: row matrix does not match labels");
    if (groups.size() != y.size()) throw input_error("train: one group per row required");
    if (cfg.epochs < 1 || cfg.batch_size < 2 || !(cfg.lr > 0.0))
        throw input_error("train: bad hyperparameters");
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
        throw input_error("train: validation fraction outside [0,1)");
    for (int label : y)
        if (label != 0 && label != 1) throw input_error("train: labels must be 0 or 1");

    // held-out slice: whole groups until ~val_fraction of the rows are set aside
    std::map<std::string, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < y.size(); ++i) by_group[groups[i]].push_back(i);
    std::vector<std::string> group_ids;
    for (const auto& [id, rows] : by_group) group_ids.push_back(id);
    if (cfg.val_fraction > 0.0 && group_ids.size() < 2)
        throw input_error("train: validation split needs at least two groups");
    Rng split_rng(derive_seed(cfg.seed, "val-split"));
    for (std::size_t i = group_ids.size(); i > 1; --i)
        std::swap(group_ids[i - 1],
                  group_ids[static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    const auto val_target =
        static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(y.size()) + 0.5);
    std::vector<std::size_t> train_rows, val_rows;
    for (std::size_t gi = 0; gi < group_ids.size(); ++gi) {
        const auto& rows = by_group[group_ids[gi]];
        // the final group falls back to training so validation cannot swallow everything
        const bool must_train = train_rows.empty() && gi + 1 == group_ids.size();
        auto& side = (val_rows.size() < val_target && !must_train) ? val_rows : train_rows;
        side.insert(side.end(), rows.begin(), rows.end());
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());

    std::vector<int> train_labels(train_rows.size());
    for (std::size_t i = 0; i < train_rows.size(); ++i) train_labels[i] = y[train_rows[i]];
    std::vector<int> val_labels(val_rows.size());
    std::vector<double> val_X(val_rows.size() * dim);
    for (std::size_t i = 0; i < val_rows.size(); ++i) {
        val_labels[i] = y[val_rows[i]];
        std::copy(X.begin() + val_rows[i] * dim, X.begin() + (val_rows[i] + 1) * dim,
                  val_X.begin() + i * dim);
    }

    TrainResult out;
    out.model.spec = spec;
    out.model.params = init_params(spec, cfg.seed);
    out.report.n_train = train_rows.size();
    out.report.n_val = val_rows.size();

    NetworkParams checkpoint = out.model.params;
    AdamState adam;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng epoch_rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
        const auto batches = balanced_batches(train_labels, cfg.batch_size, epoch_rng);
        double loss_sum = 0.0;
        bool bad = false;
        for (std::size_t bi = 0; bi < batches.size() && !bad; ++bi) {
            std::vector<std::size_t> rows;
            std::vector<int> labels;
            rows.reserve(batches[bi].size());
            for (int local : batches[bi]) {
                rows.push_back(train_rows[static_cast<std::size_t>(local)]);
                labels.push_back(train_labels[static_cast<std::size_t>(local)]);
            }
            const auto xb = disc_detail::gather_batch(spec, X, rows);
            ForwardCache cache;
            const auto drop_seed = derive_seed(
                cfg.seed, "batch:" + std::to_string(epoch) + ":" + std::to_string(bi));
            try {
                const auto probs = forward(spec, out.model.params, xb, Mode::train, &cache,
                                           drop_seed);
                const double loss = xent_loss(probs, labels);
                if (!std::isfinite(loss)) {
                    bad = true;
                    break;
                }
                loss_sum += loss;
                commit_batch_stats(spec, out.model.params, cache);
                const auto grads = backward(spec, out.model.params, cache, labels);
                adam_step(spec, out.model.params, grads, adam, cfg.lr);
            } catch (const numeric_error&) {
                bad = true;
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
        if (!bad && !val_rows.empty()) {
            try {
                stats.val_balanced_accuracy = disc_detail::balanced_accuracy(
                    match_probabilities(out.model, val_X), val_labels);
            } catch (const numeric_error&) {
                bad = true;
            }
        }

        if (bad) {
            out.model.params = checkpoint;
            out.report.diverged = true;
            if (log) *log << "epoch " << epoch << " diverged; rolled back to epoch "
                          << out.report.last_good_epoch << "\n";
            break;
        }
        out.report.history.push_back(stats);
        checkpoint = out.model.params;
        out.report.last_good_epoch = epoch;
        if (log) {
            *log << "epoch " << epoch << " loss " << stats.loss;
            if (!val_rows.empty()) *log << " val " << stats.val_balanced_accuracy;
            *log << "\n";
        }
    }
    return out;
}

inline void write_train_report(std::ostream& out, const NetworkSpec& spec,
                               const TrainConfig& cfg, const TrainReport& r) {
    out << "{\n";
    out << "  \"network\": \"" << spec.canonical() << "\",\n";
    out << "  \"epochs\": " << cfg.epochs << ",\n";
    out << "  \"batch_size\": " << cfg.batch_size << ",\n";
    out << "  \"lr\": " << detail::fmt_double(cfg.lr) << ",\n";
    out << "  \"seed\": " << cfg.seed << ",\n";
    out << "  \"val_fraction\": " << detail::fmt_double(cfg.val_fraction) << ",\n";
    out << "  \"n_train\": " << r.n_train << ",\n";
    out << "  \"n_val\": " << r.n_val << ",\n";
    out << "  \"diverged\": " << (r.diverged ? "true" : "false") << ",\n";
    out << "  \"last_good_epoch\": " << r.last_good_epoch << ",\n";
    out << "  \"history\": [\n";
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        const auto& e = r.history[i];
        out << "    {\"epoch\": " << e.epoch << ", \"loss\": " << detail::fmt_double(e.loss)
            << ", \"val_balanced_accuracy\": ";
        if (std::isfinite(e.val_balanced_accuracy))
            out << detail::fmt_double(e.val_balanced_accuracy);
        else
            out << "null";
        out << "}" << (i + 1 < r.history.size() ? "," : "") << "\n";
    }
    out << "  ]\n}\n";
}

inline void save_discriminator(const std::filesystem::path& path, const Discriminator& d) {
    if (!d.trained()) throw input_error("refusing to save an untrained discriminator");
    write_stream_atomic(path, [&](std::ostream& out) { save_params(out, d.spec, d.params); });
}

inline Discriminator load_discriminator(const std::filesystem::path& path,
                                        const NetworkSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open model file: " + path.string());
    return {spec, load_params(in, spec)};
}

}  // namespace lumitrack
