#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mood/dataset.hpp"
#include "mood/errors.hpp"
#include "mood/image.hpp"
#include "mood/models.hpp"

namespace mood {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

// Sample standard deviation (n-1); 0 for fewer than two values.
inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

struct ChunkPrediction {
    std::string video_id;
    int start_frame = 0;
    int predicted = 0;  // label in {-1,0,+1}
    std::array<double, 3> probs{};
    int truth = 0;

    bool operator==(const ChunkPrediction&) const = default;
};

// Runs the model over the selected chunks in eval mode. A delta-trained
// 1-CNN predicts emotion-change classes, so its ground truth is the delta
// label; every other architecture is scored on mood.
inline std::vector<ChunkPrediction> collect_predictions(const TrainedModel& model,
                                                        const ChunkDataset& ds,
                                                        const std::vector<int>& indices,
                                                        int eval_batch = 256) {
    const bool delta_truth = model.cfg.arch == "1cnn_delta";
    std::vector<ChunkPrediction> preds;
    preds.reserve(indices.size());
    for (size_t at = 0; at < indices.size(); at += size_t(eval_batch)) {
        const size_t end = std::min(indices.size(), at + size_t(eval_batch));
        const std::vector<int> batch(indices.begin() + int64_t(at), indices.begin() + int64_t(end));
        const Tensor probs = predict_batch(model, ds.gather(batch));
        for (size_t i = 0; i < batch.size(); ++i) {
            const LabeledChunk& c = ds.chunks[size_t(batch[i])];
            ChunkPrediction p;
            p.video_id = c.video_id;
            p.start_frame = c.start_frame;
            p.truth = delta_truth ? c.delta_label : c.mood_label;
            p.probs = {probs.at(int(i), 0), probs.at(int(i), 1), probs.at(int(i), 2)};
            int best = 0;
            for (int j = 1; j < 3; ++j)
                if (p.probs[size_t(j)] > p.probs[size_t(best)]) best = j;
            p.predicted = index_to_label(best);
            preds.push_back(std::move(p));
        }
    }
    return preds;
}

// ---------------------------------------------------------------------------
// Accuracy reports
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string granularity;  // "chunk" or "video"
    double accuracy = 0.0;
    std::array<std::array<int64_t, 3>, 3> confusion{};  // [truth][predicted]
    int64_t n_items = 0;
};

inline EvalReport chunk_accuracy(const std::vector<ChunkPrediction>& preds) {
    if (preds.empty()) throw DataError("chunk_accuracy: no predictions");
    EvalReport rep;
    rep.granularity = "chunk";
    rep.n_items = int64_t(preds.size());
    int64_t correct = 0;
    for (const auto& p : preds) {
        rep.confusion[size_t(label_to_index(p.truth))][size_t(label_to_index(p.predicted))]++;
        if (p.truth == p.predicted) ++correct;
    }
    rep.accuracy = double(correct) / double(rep.n_items);
    return rep;
}

// Majority vote over a video's chunk predictions; ties resolve to the tied
// class with the highest mean softmax probability, then to the lower class
// index.
inline int aggregate_video_label(const std::vector<const ChunkPrediction*>& chunk_preds) {
    int votes[3] = {0, 0, 0};
    double prob_sum[3] = {0.0, 0.0, 0.0};
    for (const auto* p : chunk_preds) {
        votes[label_to_index(p->predicted)]++;
        for (int j = 0; j < 3; ++j) prob_sum[j] += p->probs[size_t(j)];
    }
    const int top = std::max({votes[0], votes[1], votes[2]});
    int best = -1;
    for (int j = 0; j < 3; ++j) {
        if (votes[j] != top) continue;
        if (best < 0 || prob_sum[j] > prob_sum[best]) best = j;
    }
    return index_to_label(best);
}

inline EvalReport video_accuracy(const std::vector<ChunkPrediction>& preds,
                                 const std::map<std::string, int>& video_truths) {
    if (preds.empty()) throw DataError("video_accuracy: no predictions");
    std::map<std::string, std::vector<const ChunkPrediction*>> by_video;
    for (const auto& p : preds) by_video[p.video_id].push_back(&p);
    EvalReport rep;
    rep.granularity = "video";
    int64_t correct = 0;
    for (const auto& [vid, chunk_preds] : by_video) {
        auto it = video_truths.find(vid);
        if (it == video_truths.end())
            throw DataError("video_accuracy: missing truth for video " + vid);
        const int predicted = aggregate_video_label(chunk_preds);
        rep.confusion[size_t(label_to_index(it->second))][size_t(label_to_index(predicted))]++;
        if (predicted == it->second) ++correct;
        rep.n_items++;
    }
    rep.accuracy = double(correct) / double(rep.n_items);
    return rep;
}

// Video-level ground truth of a dataset: the modal chunk truth per video,
// same recency tie-break as chunk labeling. External datasets built from
// video-level moods have constant chunk truth, so this is exact for them.
inline std::map<std::string, int> video_truths_of(const ChunkDataset& ds) {
    std::map<std::string, std::vector<int>> by_video;
    for (const auto& c : ds.chunks) by_video[c.video_id].push_back(c.mood_label);
    std::map<std::string, int> out;
    for (const auto& [vid, labels] : by_video) out[vid] = chunk_mood_label(labels);
    return out;
}

// ---------------------------------------------------------------------------
// Cross-dataset protocol: evaluate all fold models on one external corpus
// ---------------------------------------------------------------------------

struct CrossDatasetReport {
    std::vector<EvalReport> chunk_reports;  // one per fold model
    std::vector<EvalReport> video_reports;
    double chunk_mean = 0.0, chunk_std = 0.0;
    double video_mean = 0.0, video_std = 0.0;
};

inline CrossDatasetReport cross_dataset_eval(const std::vector<TrainedModel>& fold_models,
                                             const ChunkDataset& external) {
    if (fold_models.empty()) throw DataError("cross_dataset_eval: no models");
    if (external.chunks.empty()) throw DataError("cross_dataset_eval: empty external dataset");
    std::vector<int> all(external.chunks.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    const auto truths = video_truths_of(external);

    CrossDatasetReport rep;
    std::vector<double> chunk_accs, video_accs;
    for (const auto& model : fold_models) {
        const auto preds = collect_predictions(model, external, all);
        rep.chunk_reports.push_back(chunk_accuracy(preds));
        rep.video_reports.push_back(video_accuracy(preds, truths));
        chunk_accs.push_back(rep.chunk_reports.back().accuracy);
        video_accs.push_back(rep.video_reports.back().accuracy);
    }
    rep.chunk_mean = mean_of(chunk_accs);
    rep.chunk_std = stddev_of(chunk_accs);
    rep.video_mean = mean_of(video_accs);
    rep.video_std = stddev_of(video_accs);
    return rep;
}

// ---------------------------------------------------------------------------
// Two-sample pooled-variance t-test (df = n + m - 2)
// ---------------------------------------------------------------------------

namespace detail {

// Regularized incomplete beta via Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 200;
    constexpr double kEps = 3e-14, kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

inline double student_t_two_sided_p(double t, double df) {
    if (!std::isfinite(t)) return 0.0;
    return detail::reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
    double t = 0.0;
    int df = 0;
    double p = 1.0;
    // Zero pooled variance with unequal means: |t| is unbounded.
    bool infinite_t = false;
};

inline TTestResult compare_models(const std::vector<double>& accs_a,
                                  const std::vector<double>& accs_b) {
    if (accs_a.size() < 2 || accs_b.size() < 2)
        throw DataError("compare_models needs at least two folds per sample");
    const int n = int(accs_a.size()), m = int(accs_b.size());
    TTestResult res;
    res.df = n + m - 2;
    const double mean_a = mean_of(accs_a), mean_b = mean_of(accs_b);
    double ss = 0.0;
    for (double x : accs_a) ss += (x - mean_a) * (x - mean_a);
    for (double x : accs_b) ss += (x - mean_b) * (x - mean_b);
    const double pooled_var = ss / double(res.df);
    if (pooled_var <= 0.0) {
        if (mean_a == mean_b) {
            res.t = 0.0;
            res.p = 1.0;
        } else {
            res.infinite_t = true;
            res.t = mean_a > mean_b ? std::numeric_limits<double>::infinity()
                                    : -std::numeric_limits<double>::infinity();
            res.p = 0.0;
        }
        return res;
    }
    res.t = (mean_a - mean_b) / std::sqrt(pooled_var * (1.0 / n + 1.0 / m));
    res.p = student_t_two_sided_p(res.t, double(res.df));
    return res;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void write_predictions(const std::string& path,
                              const std::vector<ChunkPrediction>& preds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write predictions: " + path);
    for (const auto& p : preds) {
        nlohmann::ordered_json j;
        j["video_id"] = p.video_id;
        j["start_frame"] = p.start_frame;
        j["predicted"] = p.predicted;
        j["probs"] = p.probs;
        j["truth"] = p.truth;
        out << j.dump() << "\n";
    }
}

inline std::vector<ChunkPrediction> read_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("predictions file not found: " + path);
    std::vector<ChunkPrediction> preds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        ChunkPrediction p;
        p.video_id = j.at("video_id").get<std::string>();
        p.start_frame = j.at("start_frame").get<int>();
        p.predicted = j.at("predicted").get<int>();
        for (int i = 0; i < 3; ++i) p.probs[size_t(i)] = j.at("probs")[size_t(i)].get<double>();
        p.truth = j.at("truth").get<int>();
        preds.push_back(std::move(p));
    }
    return preds;
}

inline nlohmann::ordered_json report_json(const EvalReport& rep) {
    nlohmann::ordered_json j;
    j["granularity"] = rep.granularity;
    j["accuracy"] = rep.accuracy;
    j["n_items"] = rep.n_items;
    j["class_ordering"] = {-1, 0, 1};
    j["confusion"] = rep.confusion;
    return j;
}

// ---------------------------------------------------------------------------
// Plots (simple raster renderings)
// ---------------------------------------------------------------------------

// Bar chart of labeled accuracies in [0,1].
inline void write_accuracy_bars(const std::string& path,
                                const std::vector<std::pair<std::string, double>>& bars) {
    const int w = 60 * int(bars.size()) + 20, h = 120;
    Tensor img({h, w, 3}, 1.0);
    for (size_t i = 0; i < bars.size(); ++i) {
        const int x0 = 20 + int(i) * 60, x1 = x0 + 40;
        const int top = 10 + int((1.0 - std::clamp(bars[i].second, 0.0, 1.0)) * 100);
        for (int y = top; y < 110; ++y)
            for (int x = x0; x < x1; ++x) {
                img.at(y, x, 0) = 0.2;
                img.at(y, x, 1) = 0.4;
                img.at(y, x, 2) = 0.8;
            }
    }
    write_png(path, img);
}

// 3x3 confusion heatmap, row-normalized shading.
inline void write_confusion_heatmap(const std::string& path, const EvalReport& rep) {
    const int cell = 40, w = 3 * cell, h = 3 * cell;
    Tensor img({h, w, 3}, 1.0);
    for (int r = 0; r < 3; ++r) {
        int64_t row_total = 0;
        for (int c = 0; c < 3; ++c) row_total += rep.confusion[size_t(r)][size_t(c)];
        for (int c = 0; c < 3; ++c) {
            const double frac =
                row_total > 0 ? double(rep.confusion[size_t(r)][size_t(c)]) / double(row_total)
                              : 0.0;
            double rgb[3];
            heat_color(frac, rgb);
            for (int y = r * cell; y < (r + 1) * cell; ++y)
                for (int x = c * cell; x < (c + 1) * cell; ++x)
                    for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
        }
    }
    write_png(path, img);
}

}  // namespace mood
