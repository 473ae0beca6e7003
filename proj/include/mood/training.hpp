#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mood/dataset.hpp"
#include "mood/errors.hpp"
#include "mood/evaluation.hpp"
#include "mood/models.hpp"
#include "mood/nn.hpp"

namespace mood {

// ---------------------------------------------------------------------------
// Fold planning
// ---------------------------------------------------------------------------

struct FoldPlan {
    int num_folds = 5;
    std::map<std::string, int> fold_of;  // subject_id -> fold index

    int fold_of_subject(const std::string& subject) const {
        auto it = fold_of.find(subject);
        if (it == fold_of.end()) throw DataError("subject missing from fold plan: " + subject);
        return it->second;
    }
};

// Deterministic subject-level partition, stratified by each subject's
// majority mood label: subjects are grouped per label, shuffled within the
// group, and dealt cyclically so fold sizes differ by at most one.
inline FoldPlan plan_folds(const std::vector<std::pair<std::string, int>>& subject_majorities,
                           int num_folds, uint64_t seed) {
    std::set<std::string> distinct;
    for (const auto& [s, label] : subject_majorities) distinct.insert(s);
    if (int(distinct.size()) < num_folds)
        throw DataError("fold planning needs at least " + std::to_string(num_folds) +
                        " distinct subjects, got " + std::to_string(distinct.size()));

    std::map<int, std::vector<std::string>> strata;
    for (const auto& [s, label] : subject_majorities) strata[label].push_back(s);

    FoldPlan plan;
    plan.num_folds = num_folds;
    int next_fold = 0;
    for (auto& [label, subjects] : strata) {
        std::sort(subjects.begin(), subjects.end());
        Rng rng(derive_seed(seed, "folds", uint64_t(label + 8)));
        rng.shuffle(subjects);
        for (const auto& s : subjects) {
            plan.fold_of[s] = next_fold;
            next_fold = (next_fold + 1) % num_folds;
        }
    }
    return plan;
}

// Majority mood label per subject, for stratification. Ties resolve to the
// smaller label for determinism.
inline std::vector<std::pair<std::string, int>> subject_majorities(const ChunkDataset& ds) {
    std::map<std::string, std::array<int, 3>> counts;
    for (const auto& c : ds.chunks) counts[c.subject_id][size_t(label_to_index(c.mood_label))]++;
    std::vector<std::pair<std::string, int>> out;
    for (const auto& [subject, n] : counts) {
        int best = 0;
        for (int j = 1; j < 3; ++j)
            if (n[size_t(j)] > n[size_t(best)]) best = j;
        out.emplace_back(subject, index_to_label(best));
    }
    return out;
}

inline std::pair<std::vector<int>, std::vector<int>> split_fold(const ChunkDataset& ds,
                                                                const FoldPlan& plan, int fold) {
    std::vector<int> train_idx, test_idx;
    for (size_t i = 0; i < ds.chunks.size(); ++i) {
        if (plan.fold_of_subject(ds.chunks[i].subject_id) == fold)
            test_idx.push_back(int(i));
        else
            train_idx.push_back(int(i));
    }
    return {train_idx, test_idx};
}

// ---------------------------------------------------------------------------
// Hyper-parameter grids
// ---------------------------------------------------------------------------

struct HyperGrid {
    std::vector<double> learning_rates{1e-3, 1e-5};
    std::vector<int> batch_sizes{64, 128, 256};
    std::vector<double> dropout_rates{0.4, 0.5};
    std::vector<double> temperatures{3.0, 5.0, 7.0};         // tsnet only
    std::vector<double> alphas{0.05, 0.1, 0.15, 0.2, 0.25, 0.3};  // tsnet only

    static HyperGrid paper_default(const std::string& arch) {
        HyperGrid g;
        if (arch == "tsnet") g.batch_sizes = {16, 64, 128};
        return g;
    }

    std::vector<HyperParams> expand(const std::string& arch) const {
        if (learning_rates.empty() || batch_sizes.empty() || dropout_rates.empty())
            throw ConfigError("hyper grid has an empty axis");
        const bool distilling = arch == "tsnet";
        if (distilling && (temperatures.empty() || alphas.empty()))
            throw ConfigError("tsnet grid needs temperatures and alphas");
        std::vector<HyperParams> out;
        for (double lr : learning_rates)
            for (int bs : batch_sizes)
                for (double drop : dropout_rates) {
                    if (!distilling) {
                        HyperParams h;
                        h.learning_rate = lr;
                        h.batch_size = bs;
                        h.dropout = drop;
                        out.push_back(h);
                        continue;
                    }
                    for (double T : temperatures)
                        for (double a : alphas) {
                            HyperParams h;
                            h.learning_rate = lr;
                            h.batch_size = bs;
                            h.dropout = drop;
                            h.temperature = T;
                            h.alpha = a;
                            out.push_back(h);
                        }
                }
        return out;
    }
};

inline std::string gridpoint_tag(const std::string& arch, const HyperParams& h) {
    char buf[96];
    if (arch == "tsnet")
        std::snprintf(buf, sizeof buf, "lr%.0e_bs%d_do%.2f_T%g_a%.2f", h.learning_rate,
                      h.batch_size, h.dropout, h.temperature, h.alpha);
    else
        std::snprintf(buf, sizeof buf, "lr%.0e_bs%d_do%.2f", h.learning_rate, h.batch_size,
                      h.dropout);
    return buf;
}

// ---------------------------------------------------------------------------
// Phase trainer
// ---------------------------------------------------------------------------

struct TrainOptions {
    int epochs = 50;
    int patience = 10;  // early stop when train loss stalls this many epochs
    int eval_batch = 256;
};

// Builds the scalar loss node for one batch. `drop_rng` drives dropout masks.
using LossBuilder = std::function<int(Tape&, Binder&, int x, const std::vector<int>& batch,
                                      Rng* drop_rng)>;

// Epoch loop over one loss. Shuffling, dropout and initialization all derive
// from `seed`, so identical inputs give bit-identical parameter trajectories.
inline std::vector<double> train_phase(TrainedModel& model, const ChunkDataset& ds,
                                       const std::vector<int>& train_idx, double learning_rate,
                                       int batch_size, uint64_t seed, const TrainOptions& opt,
                                       const LossBuilder& loss_builder,
                                       const std::vector<std::string>& frozen_prefixes,
                                       const std::string& phase_tag) {
    if (train_idx.empty()) throw DataError("empty training split");
    Adam adam(learning_rate);
    std::vector<double> curve;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(seed, "shuffle:" + phase_tag, uint64_t(epoch)));
        Rng drop_rng(derive_seed(seed, "dropout:" + phase_tag, uint64_t(epoch)));
        std::vector<int> order = train_idx;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t at = 0; at < order.size(); at += size_t(batch_size)) {
            const size_t end = std::min(order.size(), at + size_t(batch_size));
            const std::vector<int> batch(order.begin() + int64_t(at),
                                         order.begin() + int64_t(end));
            Tape tape;
            Binder bind(tape, model.store, true);
            for (const auto& p : frozen_prefixes) bind.freeze_prefix(p);
            const int x = tape.leaf(ds.gather(batch));
            const int loss = loss_builder(tape, bind, x, batch, &drop_rng);
            const double loss_value = tape.val(loss)[0];
            if (!std::isfinite(loss_value))
                throw DivergenceError("non-finite loss in phase " + phase_tag + " at epoch " +
                                          std::to_string(epoch),
                                      epoch);
            tape.backward(loss);
            adam.step(tape, model.store, bind.bound());
            epoch_loss += loss_value;
            ++batches;
        }
        epoch_loss /= batches;
        curve.push_back(epoch_loss);
        if (epoch_loss < best_loss - 1e-12) {
            best_loss = epoch_loss;
            best_epoch = epoch;
        } else if (epoch - best_epoch >= opt.patience) {
            break;
        }
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Per-architecture training protocols
// ---------------------------------------------------------------------------

struct FoldTrainResult {
    TrainedModel model;
    int fold = -1;
    double train_accuracy = 0.0;
    double fold_accuracy = 0.0;  // held-out chunk accuracy
    std::vector<double> loss_curve;  // final phase
    std::map<std::string, std::vector<double>> phase_curves;
};

namespace detail {

inline void check_class_presence(const ChunkDataset& ds, const std::vector<int>& train_idx,
                                 bool needs_mood, bool needs_delta) {
    std::array<bool, 3> mood_seen{}, delta_seen{};
    for (int i : train_idx) {
        mood_seen[size_t(label_to_index(ds.chunks[size_t(i)].mood_label))] = true;
        delta_seen[size_t(label_to_index(ds.chunks[size_t(i)].delta_label))] = true;
    }
    for (int j = 0; j < 3; ++j) {
        if (needs_mood && !mood_seen[size_t(j)])
            throw DataError("mood class " + std::to_string(index_to_label(j)) +
                            " absent from training fold");
        if (needs_delta && !delta_seen[size_t(j)])
            throw DataError("delta class " + std::to_string(index_to_label(j)) +
                            " absent from training fold");
    }
}

inline void check_no_leakage(const ChunkDataset& ds, const std::vector<int>& train_idx,
                             const std::vector<int>& test_idx) {
    std::set<std::string> train_subjects, test_subjects;
    for (int i : train_idx) train_subjects.insert(ds.chunks[size_t(i)].subject_id);
    for (int i : test_idx) test_subjects.insert(ds.chunks[size_t(i)].subject_id);
    for (const auto& s : test_subjects)
        if (train_subjects.count(s))
            throw DataError("subject leakage across fold boundary: " + s);
}

inline double accuracy_on(const TrainedModel& model, const ChunkDataset& ds,
                          const std::vector<int>& idx, int eval_batch) {
    if (idx.empty()) return 0.0;
    return chunk_accuracy(collect_predictions(model, ds, idx, eval_batch)).accuracy;
}

// Precomputed frozen-teacher logits for every training chunk (teacher output
// is constant across epochs).
inline Tensor teacher_logits_for(const TrainedModel& tsnet, const ChunkDataset& ds,
                                 const std::vector<int>& idx, int eval_batch) {
    Tensor out({int(idx.size()), 3});
    ParamStore store = tsnet.store;
    for (size_t at = 0; at < idx.size(); at += size_t(eval_batch)) {
        const size_t end = std::min(idx.size(), at + size_t(eval_batch));
        const std::vector<int> batch(idx.begin() + int64_t(at), idx.begin() + int64_t(end));
        Tape tape;
        Binder bind(tape, store, false);
        const int x = tape.leaf(ds.gather(batch));
        const int logits = tsnet_teacher_logits(tape, bind, tsnet.cfg, x);
        const Tensor& lv = tape.val(logits);
        for (size_t i = 0; i < batch.size(); ++i)
            for (int j = 0; j < 3; ++j) out.at(int(at + i), j) = lv.at(int(i), j);
    }
    return out;
}

}  // namespace detail

// Trains one architecture x attention combination on one fold. 2cnn_mlp and
// tsnet run their multi-phase protocols (branch pre-training, teacher
// distillation) internally.
inline FoldTrainResult train_model(const ModelConfig& base_cfg, const ChunkDataset& ds,
                                   const FoldPlan& plan, int fold, const HyperParams& hyper,
                                   uint64_t seed, const TrainOptions& opt = {}) {
    ModelConfig cfg = base_cfg;
    cfg.hyper = hyper;
    cfg.branch.dropout_rate = hyper.dropout;
    cfg.distill.temperature = hyper.temperature;
    cfg.distill.alpha = hyper.alpha;
    cfg.seed = derive_seed(seed, "run:" + cfg.arch + ":" + cfg.attention.tag, uint64_t(fold));
    validate_model_config(cfg);

    auto [train_idx, test_idx] = split_fold(ds, plan, fold);
    detail::check_no_leakage(ds, train_idx, test_idx);
    const bool needs_mood = cfg.arch != "1cnn_delta";
    const bool needs_delta = cfg.arch != "1cnn";
    detail::check_class_presence(ds, train_idx, needs_mood, needs_delta);

    FoldTrainResult result;
    result.fold = fold;

    const std::string run_tag = cfg.arch;
    if (cfg.arch == "1cnn" || cfg.arch == "1cnn_delta") {
        TrainedModel model;
        model.cfg = cfg;
        model.store = init_model(cfg);
        const bool use_delta = cfg.arch == "1cnn_delta";
        LossBuilder lb = [&cfg, &ds, use_delta](Tape& t, Binder& b, int x,
                                                const std::vector<int>& batch, Rng* drop) {
            const ModelForward fwd = model_forward(t, b, cfg, x, drop);
            return softmax_cross_entropy(
                t, fwd.logits, use_delta ? ds.delta_indices(batch) : ds.mood_indices(batch));
        };
        result.phase_curves["main"] = train_phase(model, ds, train_idx, hyper.learning_rate,
                                                  hyper.batch_size, cfg.seed, opt, lb, {}, "main");
        model.trained = true;
        result.model = std::move(model);
    } else if (cfg.arch == "2cnn") {
        TrainedModel model;
        model.cfg = cfg;
        model.store = init_model(cfg);
        LossBuilder lb = [&cfg, &ds](Tape& t, Binder& b, int x, const std::vector<int>& batch,
                                     Rng* drop) {
            const ModelForward fwd = model_forward(t, b, cfg, x, drop);
            return summed_branch_loss(t, fwd.logits, fwd.delta_logits, ds.mood_indices(batch),
                                      ds.delta_indices(batch));
        };
        result.phase_curves["main"] = train_phase(model, ds, train_idx, hyper.learning_rate,
                                                  hyper.batch_size, cfg.seed, opt, lb, {}, "main");
        model.trained = true;
        result.model = std::move(model);
    } else if (cfg.arch == "2cnn_mlp") {
        // Phase 1+2: independent mood and delta 1-CNN branches.
        ModelConfig branch_cfg = cfg;
        branch_cfg.arch = "1cnn";
        branch_cfg.seed = derive_seed(cfg.seed, "branch_m");
        TrainedModel mood_branch;
        mood_branch.cfg = branch_cfg;
        mood_branch.store = init_model(branch_cfg);
        LossBuilder lb_m = [&branch_cfg, &ds](Tape& t, Binder& b, int x,
                                              const std::vector<int>& batch, Rng* drop) {
            const ModelForward fwd = model_forward(t, b, branch_cfg, x, drop);
            return softmax_cross_entropy(t, fwd.logits, ds.mood_indices(batch));
        };
        result.phase_curves["branch_mood"] =
            train_phase(mood_branch, ds, train_idx, hyper.learning_rate, hyper.batch_size,
                        branch_cfg.seed, opt, lb_m, {}, "branch_m");
        mood_branch.trained = true;

        ModelConfig delta_cfg = branch_cfg;
        delta_cfg.arch = "1cnn_delta";
        delta_cfg.seed = derive_seed(cfg.seed, "branch_d");
        TrainedModel delta_branch;
        delta_branch.cfg = delta_cfg;
        delta_branch.store = init_model(delta_cfg);
        LossBuilder lb_d = [&delta_cfg, &ds](Tape& t, Binder& b, int x,
                                             const std::vector<int>& batch, Rng* drop) {
            const ModelForward fwd = model_forward(t, b, delta_cfg, x, drop);
            return softmax_cross_entropy(t, fwd.logits, ds.delta_indices(batch));
        };
        result.phase_curves["branch_delta"] =
            train_phase(delta_branch, ds, train_idx, hyper.learning_rate, hyper.batch_size,
                        delta_cfg.seed, opt, lb_d, {}, "branch_d");
        delta_branch.trained = true;

        // Phase 3: MLP over frozen concatenated features.
        TrainedModel fused = build_2cnn_mlp(mood_branch, delta_branch, cfg.fusion,
                                            derive_seed(cfg.seed, "mlp"));
        fused.cfg.attention = cfg.attention;
        fused.cfg.hyper = hyper;
        LossBuilder lb_mlp = [&fused, &ds](Tape& t, Binder& b, int x,
                                           const std::vector<int>& batch, Rng* drop) {
            const ModelForward fwd = model_forward(t, b, fused.cfg, x, drop);
            return softmax_cross_entropy(t, fwd.logits, ds.mood_indices(batch));
        };
        result.phase_curves["mlp"] =
            train_phase(fused, ds, train_idx, hyper.learning_rate, hyper.batch_size,
                        derive_seed(cfg.seed, "mlp"), opt, lb_mlp, {"net_m/", "net_d/"}, "mlp");
        fused.trained = true;
        result.model = std::move(fused);
    } else {  // tsnet
        // Teacher: the full 2cnn_mlp protocol on this fold, then a distilled
        // 1-CNN student. The teacher reuses the gridpoint's lr and dropout
        // with the architecture's default batch size.
        ModelConfig teacher_cfg = cfg;
        teacher_cfg.arch = "2cnn_mlp";
        HyperParams teacher_hyper = hyper;
        teacher_hyper.batch_size = 64;
        const FoldTrainResult teacher_result =
            train_model(teacher_cfg, ds, plan, fold, teacher_hyper, derive_seed(seed, "teacher"),
                        opt);
        TrainedModel model = build_tsnet(teacher_result.model, cfg.branch, cfg.distill,
                                         cfg.attention, cfg.seed);
        model.cfg.hyper = hyper;

        const Tensor teacher_logits =
            detail::teacher_logits_for(model, ds, train_idx, opt.eval_batch);
        std::map<int, int> row_of;
        for (size_t i = 0; i < train_idx.size(); ++i) row_of[train_idx[i]] = int(i);

        LossBuilder lb = [&model, &ds, &teacher_logits, &row_of](
                             Tape& t, Binder& b, int x, const std::vector<int>& batch,
                             Rng* drop) {
            const ModelForward fwd = model_forward(t, b, model.cfg, x, drop);
            Tensor batch_teacher({int(batch.size()), 3});
            for (size_t i = 0; i < batch.size(); ++i) {
                const int row = row_of.at(batch[size_t(i)]);
                for (int j = 0; j < 3; ++j) batch_teacher.at(int(i), j) = teacher_logits.at(row, j);
            }
            return distillation_loss(t, fwd.logits, batch_teacher, ds.mood_indices(batch),
                                     model.cfg.distill);
        };
        result.phase_curves["student"] =
            train_phase(model, ds, train_idx, hyper.learning_rate, hyper.batch_size, cfg.seed,
                        opt, lb, {"teacher/"}, "student");
        model.trained = true;
        result.model = std::move(model);
    }

    result.model.fold = fold;
    result.model.data_fingerprint = ds.fingerprint();
    for (const char* tag : {"main", "mlp", "student"})
        if (result.phase_curves.count(tag)) result.loss_curve = result.phase_curves[tag];
    result.train_accuracy = detail::accuracy_on(result.model, ds, train_idx, opt.eval_batch);
    result.fold_accuracy = detail::accuracy_on(result.model, ds, test_idx, opt.eval_batch);
    return result;
}

// ---------------------------------------------------------------------------
// Grid search over folds
// ---------------------------------------------------------------------------

struct RunRecord {
    std::string arch;
    std::string attention;
    HyperParams hyper;
    uint64_t seed = 0;
    std::vector<double> fold_accuracies;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

struct GridResult {
    std::vector<RunRecord> records;
    int best_index = -1;
    // fold results per gridpoint, same order as records
    std::vector<std::vector<FoldTrainResult>> fold_results;
};

inline nlohmann::ordered_json run_record_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    j["architecture"] = r.arch;
    j["attention"] = r.attention;
    j["hyperparameters"] = {{"learning_rate", r.hyper.learning_rate},
                            {"batch_size", r.hyper.batch_size},
                            {"dropout", r.hyper.dropout},
                            {"temperature", r.hyper.temperature},
                            {"alpha", r.hyper.alpha}};
    j["seed"] = r.seed;
    j["fold_accuracies"] = r.fold_accuracies;
    j["mean_accuracy"] = r.mean_accuracy;
    j["std_accuracy"] = r.std_accuracy;
    return j;
}

// Trains every grid point on every fold. Grid points x folds run as
// independent jobs (optionally in parallel); selection is by mean fold
// accuracy with deterministic tie-breaks (lower learning rate, then smaller
// batch).
inline GridResult run_grid(const ModelConfig& base_cfg, const ChunkDataset& ds,
                           const HyperGrid& grid, const FoldPlan& plan, uint64_t seed,
                           const TrainOptions& opt = {}, int jobs = 1,
                           const std::string& output_dir = "") {
    const std::vector<HyperParams> points = grid.expand(base_cfg.arch);
    GridResult result;
    result.records.resize(points.size());
    result.fold_results.resize(points.size());
    for (auto& fr : result.fold_results) fr.resize(size_t(plan.num_folds));

    struct Job {
        int point;
        int fold;
    };
    std::vector<Job> jobs_list;
    for (int p = 0; p < int(points.size()); ++p)
        for (int f = 0; f < plan.num_folds; ++f) jobs_list.push_back({p, f});

    std::atomic<size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs_list.size()) return;
            const Job job = jobs_list[i];
            try {
                result.fold_results[size_t(job.point)][size_t(job.fold)] = train_model(
                    base_cfg, ds, plan, job.fold, points[size_t(job.point)], seed, opt);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    for (int p = 0; p < int(points.size()); ++p) {
        RunRecord& rec = result.records[size_t(p)];
        rec.arch = base_cfg.arch;
        rec.attention = base_cfg.attention.tag;
        rec.hyper = points[size_t(p)];
        rec.seed = seed;
        for (int f = 0; f < plan.num_folds; ++f)
            rec.fold_accuracies.push_back(result.fold_results[size_t(p)][size_t(f)].fold_accuracy);
        rec.mean_accuracy = mean_of(rec.fold_accuracies);
        rec.std_accuracy = stddev_of(rec.fold_accuracies);
    }

    result.best_index = 0;
    for (int p = 1; p < int(points.size()); ++p) {
        const RunRecord& a = result.records[size_t(p)];
        const RunRecord& b = result.records[size_t(result.best_index)];
        const bool better =
            a.mean_accuracy > b.mean_accuracy ||
            (a.mean_accuracy == b.mean_accuracy &&
             (a.hyper.learning_rate < b.hyper.learning_rate ||
              (a.hyper.learning_rate == b.hyper.learning_rate &&
               a.hyper.batch_size < b.hyper.batch_size)));
        if (better) result.best_index = p;
    }

    if (!output_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path root =
            fs::path(output_dir) / (base_cfg.arch + "_" + base_cfg.attention.tag);
        for (int p = 0; p < int(points.size()); ++p) {
            const fs::path point_dir = root / gridpoint_tag(base_cfg.arch, points[size_t(p)]);
            for (int f = 0; f < plan.num_folds; ++f) {
                const FoldTrainResult& fr = result.fold_results[size_t(p)][size_t(f)];
                const fs::path fold_dir = point_dir / ("fold" + std::to_string(f));
                fs::create_directories(fold_dir);
                save_checkpoint((fold_dir / "checkpoint").string(), fr.model);
                nlohmann::ordered_json metrics;
                metrics["fold"] = f;
                metrics["train_accuracy"] = fr.train_accuracy;
                metrics["fold_accuracy"] = fr.fold_accuracy;
                metrics["phase_loss_curves"] = fr.phase_curves;
                std::ofstream mout(fold_dir / "metrics.json");
                mout << metrics.dump(2) << "\n";
            }
        }
        nlohmann::ordered_json manifest;
        manifest["architecture"] = base_cfg.arch;
        manifest["attention"] = base_cfg.attention.tag;
        manifest["seed"] = seed;
        manifest["records"] = nlohmann::ordered_json::array();
        for (const auto& r : result.records) manifest["records"].push_back(run_record_json(r));
        manifest["best"] = run_record_json(result.records[size_t(result.best_index)]);
        manifest["best_gridpoint"] =
            gridpoint_tag(base_cfg.arch, result.records[size_t(result.best_index)].hyper);
        fs::create_directories(root);
        std::ofstream mout(root / "run_manifest.json");
        mout << manifest.dump(2) << "\n";
    }
    return result;
}

}  // namespace mood
