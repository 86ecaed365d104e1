#pragma once

// Joint objective: source cross-entropy plus lambda times the biased MK-MMD
// between source and target activations at each adapted layer, trained by
// minibatch SGD on paired per-domain batches.

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dapol/error.hpp"
#include "dapol/io.hpp"
#include "dapol/kernel_mmd.hpp"
#include "dapol/matrix.hpp"
#include "dapol/net.hpp"
#include "dapol/rng.hpp"

namespace dapol::dan {

/// per_batch_median: median-heuristic bank on every step's pooled activations.
/// first_batch: per-layer median bank from the first step, then held fixed.
/// fixed: `fixed_bank` at every layer.
enum class BankPolicy { per_batch_median, first_batch, fixed };

struct DanConfig {
    double lambda = 0.3;
    std::size_t batch_size = 32;
    std::size_t steps = 2000;
    double base_lr = 0.05;
    nn::RoleMultipliers roles{};
    /// Inclusive layer-index range [first, last]; both ends must be adapt layers.
    /// Unset means every adapt layer of the network.
    std::optional<std::pair<std::size_t, std::size_t>> adapt_range;
    BankPolicy bank_policy = BankPolicy::per_batch_median;
    std::optional<mmd::KernelBank> fixed_bank;
    std::uint64_t seed = 0;
};

/// Labeled source data: one sample per row, class index per row.
struct LabeledData {
    Matrix x;
    std::vector<std::size_t> labels;
};

/// Adapt-layer indices that carry the regularizer under `cfg`.
inline std::vector<std::size_t> regularized_layers(const nn::Network& net, const DanConfig& cfg) {
    const auto adapt = net.adapt_layers();
    if (!cfg.adapt_range) return adapt;
    const auto [first, last] = *cfg.adapt_range;
    auto is_adapt = [&](std::size_t l) { return std::find(adapt.begin(), adapt.end(), l) != adapt.end(); };
    if (first > last || !is_adapt(first) || !is_adapt(last))
        throw invalid_argument("DanConfig: adapt range must satisfy first <= last with both ends adapt layers");
    std::vector<std::size_t> out;
    for (auto l : adapt)
        if (l >= first && l <= last) out.push_back(l);
    return out;
}

inline void validate(const DanConfig& cfg) {
    if (!(cfg.lambda >= 0.0)) throw invalid_argument("DanConfig: lambda must be non-negative");
    if (cfg.batch_size < 2) throw invalid_argument("DanConfig: batch_size must be at least 2");
    if (!(cfg.base_lr >= 0.0)) throw invalid_argument("DanConfig: base_lr must be non-negative");
    if (cfg.bank_policy == BankPolicy::fixed && !cfg.fixed_bank)
        throw invalid_argument("DanConfig: fixed bank policy requires a bank");
}

/// Kernel banks carried between steps; used when a layer's pooled activations
/// have no spread and the median heuristic is undefined.
struct BankState {
    std::vector<std::optional<mmd::KernelBank>> last;  ///< indexed by layer
};

struct DanLoss {
    double total = 0.0;
    double ce = 0.0;
    std::vector<double> mmd;            ///< one per regularized layer
    std::vector<std::size_t> layers;    ///< layer index of each mmd entry
    bool fallback_bank = false;         ///< a degenerate layer reused an earlier bank

    double mmd_total() const {
        double s = 0.0;
        for (double v : mmd) s += v;
        return s;
    }
};

namespace detail {

inline const mmd::KernelBank& bank_for(const Matrix& pooled, std::size_t layer, const DanConfig& cfg, BankState& state,
                                       bool& fallback, std::optional<mmd::KernelBank>& scratch) {
    if (cfg.bank_policy == BankPolicy::fixed) return *cfg.fixed_bank;
    if (state.last.size() <= layer) state.last.resize(layer + 1);
    if (cfg.bank_policy == BankPolicy::first_batch && state.last[layer]) {
        scratch = state.last[layer];
        return *scratch;
    }
    try {
        scratch = mmd::default_bank(mmd::SampleSet(pooled));
        state.last[layer] = scratch;
        return *scratch;
    } catch (const degenerate_sample_error&) {
        fallback = true;
        if (!state.last[layer]) scratch = mmd::KernelBank::single(1.0);
        else scratch = state.last[layer];
        return *scratch;
    }
}

}  // namespace detail

/// Evaluates the joint objective on one pair of batches. Source and target
/// pass through the network separately; the MMD at each regularized layer is
/// the biased estimate between the two activation sets.
inline DanLoss dan_loss(const nn::Network& net, const LabeledData& source, const Matrix& target, const DanConfig& cfg,
                        BankState& state) {
    validate(cfg);
    if (source.x.rows() == 0 || target.rows() == 0) throw invalid_argument("dan_loss: empty batch");
    if (source.x.cols() != target.cols()) throw invalid_argument("dan_loss: source and target feature dimensions differ");
    const auto ts = nn::forward(net, source.x);
    const auto tt = nn::forward(net, target);
    DanLoss out;
    out.ce = nn::cross_entropy(ts.output(), source.labels);
    out.layers = regularized_layers(net, cfg);
    for (auto l : out.layers) {
        std::optional<mmd::KernelBank> scratch;
        const auto& bank = detail::bank_for(Matrix::vstack(ts.outputs[l], tt.outputs[l]), l, cfg, state,
                                            out.fallback_bank, scratch);
        out.mmd.push_back(mmd::mmd2_biased(mmd::SampleSet(ts.outputs[l]), mmd::SampleSet(tt.outputs[l]), bank));
    }
    out.total = out.ce + cfg.lambda * out.mmd_total();
    return out;
}

inline DanLoss dan_loss(const nn::Network& net, const LabeledData& source, const Matrix& target, const DanConfig& cfg) {
    BankState state;
    return dan_loss(net, source, target, cfg, state);
}

struct StepRecord {
    std::size_t step = 0;
    double ce = 0.0;
    std::vector<double> mmd;
    double total = 0.0;
    bool fallback_bank = false;

    double mmd_total() const {
        double s = 0.0;
        for (double v : mmd) s += v;
        return s;
    }
};

struct TrainHistory {
    std::vector<std::size_t> layers;  ///< regularized layer indices (column order of mmd)
    std::vector<StepRecord> records;

    /// CSV: step, ce, mmd_total, mmd_l<idx>..., total_loss.
    void write_csv(std::ostream& os) const {
        io::CsvWriter w(os);
        std::vector<std::string> cols{"step", "ce", "mmd_total"};
        for (auto l : layers) cols.push_back("mmd_l" + std::to_string(l));
        cols.push_back("total_loss");
        w.header(cols);
        for (const auto& r : records) {
            std::vector<std::string> f{std::to_string(r.step), io::fmt(r.ce), io::fmt(r.mmd_total())};
            for (double m : r.mmd) f.push_back(io::fmt(m));
            f.push_back(io::fmt(r.total));
            w.row_strings(f);
        }
    }
};

/// Gradients of the joint objective for one pair of batches, plus the loss
/// record. CE flows through the source path only; the regularizer gradient
/// is injected at each regularized layer on both paths.
inline std::pair<nn::Gradients, DanLoss> dan_gradients(const nn::Network& net, const LabeledData& source,
                                                        const Matrix& target, const DanConfig& cfg, BankState& state) {
    if (source.x.cols() != target.cols()) throw invalid_argument("dan_step: source and target feature dimensions differ");
    const auto ts = nn::forward(net, source.x);
    const auto tt = nn::forward(net, target);
    DanLoss loss;
    loss.ce = nn::cross_entropy(ts.output(), source.labels);
    loss.layers = regularized_layers(net, cfg);

    const bool regularize = cfg.lambda > 0.0;
    nn::ActivationGrads inject_s, inject_t;
    if (regularize) {
        inject_s.resize(net.layers.size());
        inject_t.resize(net.layers.size());
    }
    for (auto l : loss.layers) {
        std::optional<mmd::KernelBank> scratch;
        const auto& bank = detail::bank_for(Matrix::vstack(ts.outputs[l], tt.outputs[l]), l, cfg, state,
                                            loss.fallback_bank, scratch);
        const mmd::SampleSet s(ts.outputs[l]), t(tt.outputs[l]);
        if (regularize) {
            auto g = mmd::mmd2_biased_grad(s, t, bank);
            for (auto& v : g.source.data()) v *= cfg.lambda;
            for (auto& v : g.target.data()) v *= cfg.lambda;
            loss.mmd.push_back(g.value);
            inject_s[l] = std::move(g.source);
            inject_t[l] = std::move(g.target);
        } else {
            loss.mmd.push_back(mmd::mmd2_biased(s, t, bank));
        }
    }
    loss.total = loss.ce + cfg.lambda * loss.mmd_total();

    auto grads = nn::backward(net, ts, nn::cross_entropy_grad(ts.output(), source.labels), inject_s);
    if (regularize) grads += nn::backward(net, tt, Matrix(target.rows(), net.output_dim()), inject_t);
    return {std::move(grads), std::move(loss)};
}

/// One SGD step on the joint objective.
inline std::pair<nn::Network, StepRecord> dan_step(nn::Network net, const LabeledData& source, const Matrix& target,
                                                   const DanConfig& cfg, BankState& state, std::size_t step_index = 0) {
    validate(cfg);
    auto [grads, loss] = dan_gradients(net, source, target, cfg, state);
    if (!grads.all_finite()) throw diverged_training_error(step_index, "non-finite gradient");
    net = nn::sgd_step(std::move(net), grads, cfg.base_lr, cfg.roles);
    if (!net.all_finite()) throw diverged_training_error(step_index, "non-finite parameters after update");
    return {std::move(net), StepRecord{step_index, loss.ce, loss.mmd, loss.total, loss.fallback_bank}};
}

/// Endless stream of shuffled minibatch indices; reshuffles at each epoch
/// boundary and wraps mid-batch when the data is smaller than a batch.
class BatchStream {
public:
    BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed) {
        if (n == 0) throw invalid_argument("BatchStream: empty dataset");
        for (std::size_t i = 0; i < n; ++i) order_[i] = i;
        rng_.shuffle(order_);
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> out;
        out.reserve(batch_);
        while (out.size() < batch_) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    Rng rng_;
};

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy(m.row(idx[i]).begin(), m.row(idx[i]).end(), out.row(i).begin());
    return out;
}

inline LabeledData gather(const LabeledData& d, const std::vector<std::size_t>& idx) {
    LabeledData out{gather_rows(d.x, idx), {}};
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(d.labels[i]);
    return out;
}

inline std::uint64_t source_stream_seed(std::uint64_t seed) { return derive_seed(seed, {0x5eedULL, 1}); }
inline std::uint64_t target_stream_seed(std::uint64_t seed) { return derive_seed(seed, {0x5eedULL, 2}); }

/// Runs cfg.steps joint steps with independent per-domain batch streams.
inline std::pair<nn::Network, TrainHistory> train_dan(nn::Network net, const LabeledData& source, const Matrix& target,
                                                      const DanConfig& cfg) {
    validate(cfg);
    if (source.x.rows() == 0 || target.rows() == 0) throw invalid_argument("train_dan: empty dataset");
    if (source.labels.size() != source.x.rows()) throw invalid_argument("train_dan: label count mismatch");
    TrainHistory hist{regularized_layers(net, cfg), {}};
    if (cfg.steps == 0) return {std::move(net), std::move(hist)};
    hist.records.reserve(cfg.steps);
    BatchStream src(source.x.rows(), cfg.batch_size, source_stream_seed(cfg.seed));
    BatchStream tgt(target.rows(), cfg.batch_size, target_stream_seed(cfg.seed));
    BankState state;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto sb = gather(source, src.next());
        const auto tb = gather_rows(target, tgt.next());
        auto [next, rec] = dan_step(std::move(net), sb, tb, cfg, state, step);
        net = std::move(next);
        hist.records.push_back(std::move(rec));
    }
    return {std::move(net), std::move(hist)};
}

/// Cross-entropy-only training on the source stream; the reference path that
/// lambda = 0 joint training must reproduce exactly.
inline nn::Network train_supervised(nn::Network net, const LabeledData& source, const DanConfig& cfg) {
    validate(cfg);
    if (cfg.steps == 0) return net;
    BatchStream src(source.x.rows(), cfg.batch_size, source_stream_seed(cfg.seed));
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto sb = gather(source, src.next());
        const auto trace = nn::forward(net, sb.x);
        const auto grads = nn::backward(net, trace, nn::cross_entropy_grad(trace.output(), sb.labels));
        if (!grads.all_finite()) throw diverged_training_error(step, "non-finite gradient");
        net = nn::sgd_step(std::move(net), grads, cfg.base_lr, cfg.roles);
    }
    return net;
}

/// Fraction of rows whose arg-max class equals the label.
inline double accuracy(const nn::Network& net, const LabeledData& data) {
    const auto probs = nn::forward(net, data.x).output();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (arg == data.labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace dapol::dan
