#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mood/attention.hpp"
#include "mood/autodiff.hpp"
#include "mood/errors.hpp"
#include "mood/ingest.hpp"
#include "mood/nn.hpp"

namespace mood {

// ---------------------------------------------------------------------------
// Specifications
// ---------------------------------------------------------------------------

struct CnnBranchSpec {
    std::array<int, 3> conv_channels{16, 32, 32};
    int kernel = 3;       // 3x3x3
    int conv_stride = 3;
    int pool_stride = 2;  // average pooling, window == stride
    int dense_units = 512;
    int classes = 3;
    double dropout_rate = 0.4;
};

struct FusionSpec {
    int fused_feature_width = 1024;
    int mlp_hidden = 512;
    int classes = 3;
};

struct DistillationConfig {
    double temperature = 3.0;
    double alpha = 0.1;
    // Eq.-literal loss omits the conventional T^2 rescaling of the
    // distillation term; this flag turns it back on.
    bool t_squared_scaling = false;
};

struct HyperParams {
    double learning_rate = 1e-3;
    int batch_size = 64;
    double dropout = 0.4;
    double temperature = 3.0;  // TS-Net only
    double alpha = 0.1;        // TS-Net only
};

inline const std::vector<std::string>& architecture_tags() {
    static const std::vector<std::string> tags = {"1cnn", "1cnn_delta", "2cnn", "2cnn_mlp",
                                                  "tsnet"};
    return tags;
}

inline void validate_branch_spec(const CnnBranchSpec& spec) {
    for (int c : spec.conv_channels)
        if (c < 1) throw ModelError("conv channel counts must be positive");
    if (spec.kernel < 1 || spec.conv_stride < 1 || spec.pool_stride < 1)
        throw ModelError("kernel and strides must be positive");
    if (spec.dense_units < 1) throw ModelError("dense width must be positive");
    if (spec.classes != 3) throw ModelError("mood classifiers are 3-way");
    if (spec.dropout_rate < 0.0 || spec.dropout_rate >= 1.0)
        throw ModelError("dropout rate must lie in [0,1)");
}

inline void validate_distillation(const DistillationConfig& cfg) {
    if (cfg.temperature <= 0.0) throw ModelError("distillation temperature must be positive");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw ModelError("alpha must lie in [0,1]");
}

struct ModelConfig {
    std::string arch = "1cnn";
    AttentionConfig attention;
    CnnBranchSpec branch;
    FusionSpec fusion;
    DistillationConfig distill;
    HyperParams hyper;
    uint64_t seed = 0;
    // tsnet only: the absorbed teacher's own arrangement, needed to rebuild
    // its forward pass.
    AttentionConfig teacher_attention;
    CnnBranchSpec teacher_branch;
};

inline void validate_model_config(const ModelConfig& cfg) {
    bool known = false;
    for (const auto& tag : architecture_tags()) known = known || tag == cfg.arch;
    if (!known) throw ConfigError("unknown architecture tag: " + cfg.arch);
    validate_attention(cfg.attention);
    validate_branch_spec(cfg.branch);
    validate_distillation(cfg.distill);
    if (cfg.arch == "2cnn_mlp" || cfg.arch == "tsnet") {
        if (cfg.fusion.fused_feature_width != 2 * cfg.branch.dense_units && cfg.arch == "2cnn_mlp")
            throw ModelError("fused feature width must be twice the branch penultimate width");
        if (cfg.fusion.mlp_hidden < 1) throw ModelError("MLP hidden width must be positive");
    }
}

struct TrainedModel {
    ModelConfig cfg;
    ParamStore store;
    bool trained = false;
    int fold = -1;
    uint64_t data_fingerprint = 0;
};

// ---------------------------------------------------------------------------
// Shape arithmetic
// ---------------------------------------------------------------------------

struct ShapeTrace {
    // (T,H,W,C) after each stage: conv1, pool1, conv2, pool2, conv3, pool3.
    std::vector<std::array<int, 4>> stages;
    int flatten_width = 0;
};

inline ShapeTrace branch_shape_trace(const CnnBranchSpec& spec, int frames = kClipFrames,
                                     int height = kFrameHeight, int width = kFrameWidth) {
    ShapeTrace tr;
    int t = frames, h = height, w = width;
    for (int stage = 0; stage < 3; ++stage) {
        t = detail::same_out(t, spec.conv_stride);
        h = detail::same_out(h, spec.conv_stride);
        w = detail::same_out(w, spec.conv_stride);
        tr.stages.push_back({t, h, w, spec.conv_channels[size_t(stage)]});
        t = detail::same_out(t, spec.pool_stride);
        h = detail::same_out(h, spec.pool_stride);
        w = detail::same_out(w, spec.pool_stride);
        tr.stages.push_back({t, h, w, spec.conv_channels[size_t(stage)]});
    }
    tr.flatten_width = t * h * w * spec.conv_channels[2];
    return tr;
}

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

inline int attention_channels(const ModelConfig& cfg) {
    return cfg.attention.site == "post_conv1" ? cfg.branch.conv_channels[0] : 3;
}

// One classifier branch: optional attention block, three conv+avgpool
// stages, flatten, batch-norm, dense, dropout, classifier head.
inline void init_branch(ParamStore& ps, const std::string& prefix, const ModelConfig& cfg,
                        Rng& rng) {
    const CnnBranchSpec& spec = cfg.branch;
    init_attention(ps, prefix + "/att", cfg.attention, attention_channels(cfg), rng);
    int cin = 3;
    for (int stage = 0; stage < 3; ++stage) {
        init_conv(ps, prefix + "/conv" + std::to_string(stage + 1), spec.kernel, spec.kernel,
                  spec.kernel, cin, spec.conv_channels[size_t(stage)], rng);
        cin = spec.conv_channels[size_t(stage)];
    }
    const ShapeTrace tr = branch_shape_trace(spec);
    init_batchnorm(ps, prefix + "/bn", tr.flatten_width);
    init_dense(ps, prefix + "/fc1", tr.flatten_width, spec.dense_units, rng);
    init_dense(ps, prefix + "/fc2", spec.dense_units, spec.classes, rng);
}

inline void init_mlp(ParamStore& ps, const std::string& prefix, const FusionSpec& fusion,
                     Rng& rng) {
    init_dense(ps, prefix + "/fc1", fusion.fused_feature_width, fusion.mlp_hidden, rng);
    init_dense(ps, prefix + "/fc2", fusion.mlp_hidden, fusion.classes, rng);
}

// Fresh parameter store for an architecture. Two-branch models initialize
// both branches here; tsnet expects its teacher to be absorbed afterwards
// (see build_tsnet).
inline ParamStore init_model(const ModelConfig& cfg) {
    validate_model_config(cfg);
    Rng rng(derive_seed(cfg.seed, "init:" + cfg.arch));
    ParamStore ps;
    if (cfg.arch == "1cnn" || cfg.arch == "1cnn_delta") {
        init_branch(ps, "net", cfg, rng);
    } else if (cfg.arch == "2cnn") {
        init_branch(ps, "net_m", cfg, rng);
        init_branch(ps, "net_d", cfg, rng);
    } else if (cfg.arch == "2cnn_mlp") {
        init_branch(ps, "net_m", cfg, rng);
        init_branch(ps, "net_d", cfg, rng);
        init_mlp(ps, "mlp", cfg.fusion, rng);
    } else {  // tsnet: student only; teacher parameters are absorbed frozen
        init_branch(ps, "student", cfg, rng);
    }
    return ps;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct BranchForward {
    int logits = -1;
    int penult = -1;  // post-activation dense features, before dropout
    std::map<std::string, int> taps;
};

inline void check_clip_batch(const Tensor& x) {
    if (x.rank() != 5 || x.shape[1] != kClipFrames || x.shape[2] != kFrameHeight ||
        x.shape[3] != kFrameWidth || x.shape[4] != 3)
        throw ModelError("input must be a (N,5,32,32,3) clip batch");
}

inline BranchForward branch_forward(Tape& t, Binder& bind, const std::string& prefix,
                                    const ModelConfig& cfg, int x, Rng* drop_rng) {
    const CnnBranchSpec& spec = cfg.branch;
    BranchForward out;
    int h = x;
    if (cfg.attention.site == "input") {
        const AttentionMaps att = apply_attention(t, bind, prefix + "/att", cfg.attention, h);
        h = att.attended;
        out.taps["attended"] = att.attended;
        if (att.spatial_map >= 0) out.taps["spatial_map"] = att.spatial_map;
        if (att.temporal_map >= 0) out.taps["temporal_map"] = att.temporal_map;
    }
    for (int stage = 0; stage < 3; ++stage) {
        h = conv_layer(t, bind, prefix + "/conv" + std::to_string(stage + 1), h,
                       spec.conv_stride);
        h = relu(t, h);
        out.taps["conv" + std::to_string(stage + 1)] = h;
        if (stage == 0 && cfg.attention.site == "post_conv1") {
            const AttentionMaps att = apply_attention(t, bind, prefix + "/att", cfg.attention, h);
            h = att.attended;
            out.taps["attended"] = att.attended;
            if (att.spatial_map >= 0) out.taps["spatial_map"] = att.spatial_map;
            if (att.temporal_map >= 0) out.taps["temporal_map"] = att.temporal_map;
        }
        h = avgpool3d(t, h, spec.pool_stride);
    }
    const Tensor& hv = t.val(h);
    const int n = hv.shape[0];
    const int flat_width = int(hv.numel() / n);
    // A frozen branch acts as a fixed feature extractor: batch-norm runs on
    // running statistics and dropout is disabled.
    const bool branch_training = bind.trainable(prefix + "/fc2/w");
    h = reshape(t, h, {n, flat_width});
    h = batchnorm_layer(t, bind, prefix + "/bn", h, branch_training);
    h = relu(t, dense(t, bind, prefix + "/fc1", h));
    out.penult = h;
    h = dropout(t, h, spec.dropout_rate, drop_rng, branch_training);
    out.logits = dense(t, bind, prefix + "/fc2", h);
    return out;
}

struct ModelForward {
    int logits = -1;        // mood logits used at inference
    int delta_logits = -1;  // 2cnn auxiliary head
    std::map<std::string, int> taps;
};

// Forward pass of the architecture selected by cfg.arch. For tsnet this is
// the student; the trainer evaluates the frozen teacher separately.
inline ModelForward model_forward(Tape& t, Binder& bind, const ModelConfig& cfg, int x,
                                  Rng* drop_rng = nullptr) {
    ModelForward out;
    if (cfg.arch == "1cnn" || cfg.arch == "1cnn_delta") {
        BranchForward b = branch_forward(t, bind, "net", cfg, x, drop_rng);
        out.logits = b.logits;
        out.taps = std::move(b.taps);
    } else if (cfg.arch == "2cnn") {
        BranchForward bm = branch_forward(t, bind, "net_m", cfg, x, drop_rng);
        BranchForward bd = branch_forward(t, bind, "net_d", cfg, x, drop_rng);
        out.logits = bm.logits;
        out.delta_logits = bd.logits;
        out.taps = std::move(bm.taps);  // explanation maps read the mood branch
    } else if (cfg.arch == "2cnn_mlp") {
        BranchForward bm = branch_forward(t, bind, "net_m", cfg, x, drop_rng);
        BranchForward bd = branch_forward(t, bind, "net_d", cfg, x, drop_rng);
        const int fused = concat_last(t, bm.penult, bd.penult);
        int h = relu(t, dense(t, bind, "mlp/fc1", fused));
        h = dropout(t, h, cfg.branch.dropout_rate, drop_rng, bind.trainable("mlp/fc2/w"));
        out.logits = dense(t, bind, "mlp/fc2", h);
        out.taps = std::move(bm.taps);
        out.taps["fused"] = fused;
    } else {  // tsnet
        BranchForward b = branch_forward(t, bind, "student", cfg, x, drop_rng);
        out.logits = b.logits;
        out.taps = std::move(b.taps);
    }
    return out;
}

// Teacher-side forward of a tsnet model: the absorbed 2-CNN+MLP under the
// "teacher/" prefix, always evaluated frozen.
inline int tsnet_teacher_logits(Tape& t, Binder& bind, const ModelConfig& cfg, int x) {
    ModelConfig teacher_cfg = cfg;
    teacher_cfg.arch = "2cnn_mlp";
    teacher_cfg.attention = cfg.teacher_attention;
    teacher_cfg.branch = cfg.teacher_branch;
    BranchForward bm = branch_forward(t, bind, "teacher/net_m", teacher_cfg, x, nullptr);
    BranchForward bd = branch_forward(t, bind, "teacher/net_d", teacher_cfg, x, nullptr);
    const int fused = concat_last(t, bm.penult, bd.penult);
    const int h = relu(t, dense(t, bind, "teacher/mlp/fc1", fused));
    return dense(t, bind, "teacher/mlp/fc2", h);
}

// ---------------------------------------------------------------------------
// Builders (spec operations)
// ---------------------------------------------------------------------------

inline TrainedModel build_1cnn(const CnnBranchSpec& spec, const AttentionConfig& attention = {},
                               uint64_t seed = 0, bool delta_branch = false) {
    TrainedModel m;
    m.cfg.arch = delta_branch ? "1cnn_delta" : "1cnn";
    m.cfg.attention = attention;
    m.cfg.branch = spec;
    m.cfg.seed = seed;
    m.store = init_model(m.cfg);
    return m;
}

inline TrainedModel build_2cnn(const CnnBranchSpec& spec, const AttentionConfig& attention = {},
                               uint64_t seed = 0) {
    TrainedModel m;
    m.cfg.arch = "2cnn";
    m.cfg.attention = attention;
    m.cfg.branch = spec;
    m.cfg.seed = seed;
    m.store = init_model(m.cfg);
    return m;
}

// Fuses two trained 1-CNN branches (mood first, delta second) behind a fresh
// MLP. Branch parameters are copied in and are meant to stay frozen while
// the MLP trains.
inline TrainedModel build_2cnn_mlp(const TrainedModel& mood_branch,
                                   const TrainedModel& delta_branch, const FusionSpec& fusion,
                                   uint64_t seed = 0) {
    if (!mood_branch.trained || !delta_branch.trained)
        throw ModelError("2cnn_mlp requires both branches to be trained");
    if (mood_branch.cfg.branch.dense_units != fusion.fused_feature_width / 2 ||
        delta_branch.cfg.branch.dense_units != fusion.fused_feature_width / 2)
        throw ModelError("branch penultimate width incompatible with fusion width");
    TrainedModel m;
    m.cfg = mood_branch.cfg;
    m.cfg.arch = "2cnn_mlp";
    m.cfg.fusion = fusion;
    m.cfg.seed = seed;
    auto rename_in = [&m](const TrainedModel& src, const std::string& dst_prefix) {
        for (const auto& [k, v] : src.store.params)
            if (k.rfind("net/", 0) == 0) m.store.params[dst_prefix + k.substr(4)] = v;
        for (const auto& [k, v] : src.store.state)
            if (k.rfind("net/", 0) == 0) m.store.state[dst_prefix + k.substr(4)] = v;
    };
    rename_in(mood_branch, "net_m/");
    rename_in(delta_branch, "net_d/");
    Rng rng(derive_seed(seed, "init:mlp"));
    init_mlp(m.store, "mlp", fusion, rng);
    return m;
}

// Student 1-CNN plus frozen teacher (a trained 2-CNN+MLP) for distillation.
inline TrainedModel build_tsnet(const TrainedModel& teacher, const CnnBranchSpec& student_spec,
                                const DistillationConfig& distill,
                                const AttentionConfig& attention = {}, uint64_t seed = 0) {
    if (!teacher.trained || teacher.cfg.arch != "2cnn_mlp")
        throw ModelError("tsnet requires a trained 2cnn_mlp teacher");
    validate_distillation(distill);
    TrainedModel m;
    m.cfg.arch = "tsnet";
    m.cfg.attention = attention;
    m.cfg.branch = student_spec;
    m.cfg.fusion = teacher.cfg.fusion;
    m.cfg.distill = distill;
    m.cfg.seed = seed;
    m.cfg.teacher_attention = teacher.cfg.attention;
    m.cfg.teacher_branch = teacher.cfg.branch;
    m.store = init_model(m.cfg);
    m.store.absorb(teacher.store, "teacher/");
    return m;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// End-to-end two-branch loss: L = L_m + L_delta, both categorical
// cross-entropy.
inline int summed_branch_loss(Tape& t, int mood_logits, int delta_logits,
                              const std::vector<int>& mood_labels,
                              const std::vector<int>& delta_labels) {
    const int lm = softmax_cross_entropy(t, mood_logits, mood_labels);
    const int ld = softmax_cross_entropy(t, delta_logits, delta_labels);
    return affine_combine(t, lm, 1.0, ld, 1.0);
}

// L_TS = alpha * L_stu + (1 - alpha) * L_dis. The student term is hard-label
// cross-entropy at T=1; the distillation term is KL(teacher || student) with
// both distributions softened at the same temperature.
inline int distillation_loss(Tape& t, int student_logits, const Tensor& teacher_logits,
                             const std::vector<int>& labels, const DistillationConfig& cfg) {
    validate_distillation(cfg);
    Tensor teacher_probs(teacher_logits.shape);
    const int n = teacher_logits.shape[0], k = teacher_logits.shape[1];
    for (int i = 0; i < n; ++i)
        softmax_row(&teacher_logits.data[size_t(i) * k], k, &teacher_probs.data[size_t(i) * k],
                    cfg.temperature);
    const int l_stu = softmax_cross_entropy(t, student_logits, labels);
    const int l_dis =
        distill_kl(t, student_logits, teacher_probs, cfg.temperature, cfg.t_squared_scaling);
    return affine_combine(t, l_stu, cfg.alpha, l_dis, 1.0 - cfg.alpha);
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

inline Tensor softmax_batch(const Tensor& logits, double temperature = 1.0) {
    Tensor probs(logits.shape);
    const int n = logits.shape[0], k = logits.shape[1];
    for (int i = 0; i < n; ++i)
        softmax_row(&logits.data[size_t(i) * k], k, &probs.data[size_t(i) * k], temperature);
    return probs;
}

// (N,5,32,32,3) clip batch -> (N,3) class probabilities in the fixed
// (-1,0,+1) class order. Pure: no parameter or state mutation.
inline Tensor predict_batch(const TrainedModel& model, const Tensor& clips) {
    check_clip_batch(clips);
    Tape t;
    ParamStore store = model.store;  // eval must not touch running stats
    Binder bind(t, store, false);
    const int x = t.leaf(clips);
    const ModelForward fwd = model_forward(t, bind, model.cfg, x);
    return softmax_batch(t.val(fwd.logits));
}

inline std::array<double, 3> predict(const TrainedModel& model, const FrameClip& clip) {
    Tensor batch({1, kClipFrames, kFrameHeight, kFrameWidth, 3});
    if (clip.pixels.shape != std::vector<int>{kClipFrames, kFrameHeight, kFrameWidth, 3})
        throw ModelError("clip shape mismatch");
    batch.data = clip.pixels.data;
    const Tensor probs = predict_batch(model, batch);
    return {probs[0], probs[1], probs[2]};
}

// ---------------------------------------------------------------------------
// Checkpoints: params.bin + sidecar.json per directory
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json model_config_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["architecture"] = cfg.arch;
    j["attention"] = {{"tag", cfg.attention.tag},
                      {"literal_product", cfg.attention.literal_product},
                      {"site", cfg.attention.site}};
    j["class_ordering"] = {-1, 0, 1};
    j["branch"] = {{"conv_channels", cfg.branch.conv_channels},
                   {"kernel", cfg.branch.kernel},
                   {"conv_stride", cfg.branch.conv_stride},
                   {"pool_stride", cfg.branch.pool_stride},
                   {"dense_units", cfg.branch.dense_units},
                   {"classes", cfg.branch.classes},
                   {"dropout_rate", cfg.branch.dropout_rate}};
    j["fusion"] = {{"fused_feature_width", cfg.fusion.fused_feature_width},
                   {"mlp_hidden", cfg.fusion.mlp_hidden},
                   {"classes", cfg.fusion.classes}};
    j["distillation"] = {{"temperature", cfg.distill.temperature},
                         {"alpha", cfg.distill.alpha},
                         {"t_squared_scaling", cfg.distill.t_squared_scaling}};
    j["hyperparameters"] = {{"learning_rate", cfg.hyper.learning_rate},
                            {"batch_size", cfg.hyper.batch_size},
                            {"dropout", cfg.hyper.dropout},
                            {"temperature", cfg.hyper.temperature},
                            {"alpha", cfg.hyper.alpha}};
    j["seed"] = cfg.seed;
    if (cfg.arch == "tsnet") {
        j["teacher_attention"] = {{"tag", cfg.teacher_attention.tag},
                                  {"literal_product", cfg.teacher_attention.literal_product},
                                  {"site", cfg.teacher_attention.site}};
        j["teacher_branch"] = {{"conv_channels", cfg.teacher_branch.conv_channels},
                               {"kernel", cfg.teacher_branch.kernel},
                               {"conv_stride", cfg.teacher_branch.conv_stride},
                               {"pool_stride", cfg.teacher_branch.pool_stride},
                               {"dense_units", cfg.teacher_branch.dense_units},
                               {"classes", cfg.teacher_branch.classes},
                               {"dropout_rate", cfg.teacher_branch.dropout_rate}};
    }
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.arch = j.at("architecture").get<std::string>();
    cfg.attention.tag = j.at("attention").at("tag").get<std::string>();
    cfg.attention.literal_product = j.at("attention").at("literal_product").get<bool>();
    cfg.attention.site = j.at("attention").at("site").get<std::string>();
    const auto& b = j.at("branch");
    cfg.branch.conv_channels = {b.at("conv_channels")[0].get<int>(),
                                b.at("conv_channels")[1].get<int>(),
                                b.at("conv_channels")[2].get<int>()};
    cfg.branch.kernel = b.at("kernel").get<int>();
    cfg.branch.conv_stride = b.at("conv_stride").get<int>();
    cfg.branch.pool_stride = b.at("pool_stride").get<int>();
    cfg.branch.dense_units = b.at("dense_units").get<int>();
    cfg.branch.classes = b.at("classes").get<int>();
    cfg.branch.dropout_rate = b.at("dropout_rate").get<double>();
    const auto& f = j.at("fusion");
    cfg.fusion.fused_feature_width = f.at("fused_feature_width").get<int>();
    cfg.fusion.mlp_hidden = f.at("mlp_hidden").get<int>();
    cfg.fusion.classes = f.at("classes").get<int>();
    const auto& d = j.at("distillation");
    cfg.distill.temperature = d.at("temperature").get<double>();
    cfg.distill.alpha = d.at("alpha").get<double>();
    cfg.distill.t_squared_scaling = d.at("t_squared_scaling").get<bool>();
    const auto& h = j.at("hyperparameters");
    cfg.hyper.learning_rate = h.at("learning_rate").get<double>();
    cfg.hyper.batch_size = h.at("batch_size").get<int>();
    cfg.hyper.dropout = h.at("dropout").get<double>();
    cfg.hyper.temperature = h.at("temperature").get<double>();
    cfg.hyper.alpha = h.at("alpha").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("teacher_attention")) {
        cfg.teacher_attention.tag = j["teacher_attention"].at("tag").get<std::string>();
        cfg.teacher_attention.literal_product =
            j["teacher_attention"].at("literal_product").get<bool>();
        cfg.teacher_attention.site = j["teacher_attention"].at("site").get<std::string>();
        const auto& tb = j.at("teacher_branch");
        cfg.teacher_branch.conv_channels = {tb.at("conv_channels")[0].get<int>(),
                                            tb.at("conv_channels")[1].get<int>(),
                                            tb.at("conv_channels")[2].get<int>()};
        cfg.teacher_branch.kernel = tb.at("kernel").get<int>();
        cfg.teacher_branch.conv_stride = tb.at("conv_stride").get<int>();
        cfg.teacher_branch.pool_stride = tb.at("pool_stride").get<int>();
        cfg.teacher_branch.dense_units = tb.at("dense_units").get<int>();
        cfg.teacher_branch.classes = tb.at("classes").get<int>();
        cfg.teacher_branch.dropout_rate = tb.at("dropout_rate").get<double>();
    }
    return cfg;
}

inline void save_checkpoint(const std::string& dir, const TrainedModel& model,
                            const std::string& created_at = "") {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    model.store.save((fs::path(dir) / "params.bin").string());
    nlohmann::ordered_json side = model_config_json(model.cfg);
    side["schema"] = "mood-checkpoint-v1";
    side["trained"] = model.trained;
    side["fold"] = model.fold;
    char fp[32];
    std::snprintf(fp, sizeof fp, "%016llx", (unsigned long long)model.data_fingerprint);
    side["data_fingerprint"] = fp;
    side["created_at"] = created_at;  // only non-deterministic field, isolated
    std::ofstream out(fs::path(dir) / "sidecar.json");
    if (!out) throw DataError("cannot write checkpoint sidecar in " + dir);
    out << side.dump(2) << "\n";
}

inline TrainedModel load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path side_path = fs::path(dir) / "sidecar.json";
    if (!fs::exists(side_path)) throw DataError("checkpoint sidecar not found: " + side_path.string());
    std::ifstream in(side_path);
    nlohmann::json side;
    try {
        in >> side;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint sidecar: " + std::string(e.what()));
    }
    TrainedModel m;
    m.cfg = model_config_from_json(side);
    m.trained = side.value("trained", false);
    m.fold = side.value("fold", -1);
    if (side.contains("data_fingerprint"))
        m.data_fingerprint =
            std::stoull(side["data_fingerprint"].get<std::string>(), nullptr, 16);
    m.store = ParamStore::load((fs::path(dir) / "params.bin").string());
    return m;
}

}  // namespace mood
