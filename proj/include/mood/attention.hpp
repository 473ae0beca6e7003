#pragma once

#include <string>

#include "mood/autodiff.hpp"
#include "mood/errors.hpp"
#include "mood/nn.hpp"

namespace mood {

constexpr int kTemporalHiddenUnits = 128;

// Attention placement and combination options. `site` chooses whether the
// gates act on the raw clip or on the first conv stage's feature map;
// `literal_product` selects the PST variant that multiplies the two attended
// clips (applying the input twice) instead of gating the input once.
struct AttentionConfig {
    std::string tag = "none";  // none | spatial | temporal | sst | pst
    bool literal_product = false;
    std::string site = "input";  // input | post_conv1
};

inline void validate_attention(const AttentionConfig& cfg) {
    if (cfg.tag != "none" && cfg.tag != "spatial" && cfg.tag != "temporal" && cfg.tag != "sst" &&
        cfg.tag != "pst")
        throw ConfigError("unknown attention tag: " + cfg.tag);
    if (cfg.site != "input" && cfg.site != "post_conv1")
        throw ConfigError("unknown attention site: " + cfg.site);
}

struct AttentionMaps {
    int attended = -1;      // gated clip node, same shape as the input
    int spatial_map = -1;   // (N,T,H,W,1) in (0,1), -1 when unused
    int temporal_map = -1;  // (N,T,1) in (0,1), -1 when unused
};

inline void init_spatial_attention(ParamStore& ps, const std::string& prefix, Rng& rng) {
    init_conv(ps, prefix + "/conv", 3, 3, 3, 2, 1, rng);
}

inline void init_temporal_attention(ParamStore& ps, const std::string& prefix, int channels,
                                    Rng& rng) {
    init_lstm(ps, prefix + "/lstm1", channels, kTemporalHiddenUnits, rng);
    init_lstm(ps, prefix + "/lstm2", kTemporalHiddenUnits, kTemporalHiddenUnits, rng);
    init_dense(ps, prefix + "/score", kTemporalHiddenUnits, 1, rng);
}

inline void init_attention(ParamStore& ps, const std::string& prefix, const AttentionConfig& cfg,
                           int channels, Rng& rng) {
    validate_attention(cfg);
    if (cfg.tag == "spatial" || cfg.tag == "sst" || cfg.tag == "pst")
        init_spatial_attention(ps, prefix + "/spatial", rng);
    if (cfg.tag == "temporal" || cfg.tag == "sst" || cfg.tag == "pst")
        init_temporal_attention(ps, prefix + "/temporal", channels, rng);
}

// Channel max-pool and mean-pool planes, concatenated and convolved down to
// a single sigmoid-gated plane; the gate multiplies the input everywhere.
inline std::pair<int, int> spatial_attention(Tape& t, Binder& bind, const std::string& prefix,
                                             int x) {
    const int pooled = concat_last(t, channel_max(t, x), channel_avg(t, x));
    const int pre = conv3d(t, pooled, bind(prefix + "/conv/w"), bind(prefix + "/conv/b"), 1);
    const int gate = sigmoid(t, pre);
    return {gate, mul_bcast(t, x, gate)};
}

// Frames collapse to per-frame channel descriptors (spatial global average
// pooling), run through two stacked LSTM layers, and a per-step single-unit
// dense head produces one sigmoid weight per frame.
inline std::pair<int, int> temporal_attention(Tape& t, Binder& bind, const std::string& prefix,
                                              int x) {
    const Tensor& xv = t.val(x);
    const int n = xv.shape[0], frames = xv.shape[1];
    const int desc = frame_gap(t, x);  // (N,T,C)
    const int h1 = lstm_seq(t, bind, prefix + "/lstm1", desc);
    const int h2 = lstm_seq(t, bind, prefix + "/lstm2", h1);
    const int flat = reshape(t, h2, {n * frames, kTemporalHiddenUnits});
    const int scores = dense(t, bind, prefix + "/score", flat);  // (N*T,1)
    const int gate = sigmoid(t, reshape(t, scores, {n, frames, 1}));
    const int gate5 = reshape(t, gate, {n, frames, 1, 1, 1});
    return {gate, mul_bcast(t, x, gate5)};
}

// Applies the configured attention arrangement to a clip node.
inline AttentionMaps apply_attention(Tape& t, Binder& bind, const std::string& prefix,
                                     const AttentionConfig& cfg, int x) {
    validate_attention(cfg);
    AttentionMaps out;
    if (cfg.tag == "none") {
        out.attended = x;
        return out;
    }
    if (cfg.tag == "spatial") {
        auto [gate, attended] = spatial_attention(t, bind, prefix + "/spatial", x);
        out.spatial_map = gate;
        out.attended = attended;
        return out;
    }
    if (cfg.tag == "temporal") {
        auto [gate, attended] = temporal_attention(t, bind, prefix + "/temporal", x);
        out.temporal_map = gate;
        out.attended = attended;
        return out;
    }
    if (cfg.tag == "sst") {
        // Spatial first; the temporal gate is computed from the spatially
        // attended clip.
        auto [sgate, spatially] = spatial_attention(t, bind, prefix + "/spatial", x);
        auto [tgate, attended] = temporal_attention(t, bind, prefix + "/temporal", spatially);
        out.spatial_map = sgate;
        out.temporal_map = tgate;
        out.attended = attended;
        return out;
    }
    // pst: both gates come from the original clip.
    auto [sgate, spatially] = spatial_attention(t, bind, prefix + "/spatial", x);
    auto [tgate, temporally] = temporal_attention(t, bind, prefix + "/temporal", x);
    out.spatial_map = sgate;
    out.temporal_map = tgate;
    if (cfg.literal_product) {
        // I_s element-wise times I_t: the input participates twice.
        out.attended = mul(t, spatially, temporally);
    } else {
        const Tensor& xv = t.val(x);
        const int tgate5 = reshape(t, tgate, {xv.shape[0], xv.shape[1], 1, 1, 1});
        out.attended = mul_bcast(t, spatially, tgate5);
    }
    return out;
}

}  // namespace mood
