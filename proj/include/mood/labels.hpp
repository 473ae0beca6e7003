#pragma once

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mood/errors.hpp"
#include "mood/ingest.hpp"

namespace mood {

struct ChunkingConfig {
    int window_k = 5;
    int stride = 1;
};

inline void validate_chunking(const ChunkingConfig& cfg) {
    if (cfg.window_k < 2) throw ConfigError("chunking window must be >= 2 frames");
    if (cfg.stride < 1) throw ConfigError("chunking stride must be >= 1");
}

struct LabeledChunk {
    std::string video_id;
    std::string subject_id;
    int start_frame = 0;
    int mood_label = 0;   // in {-1,0,+1}
    int delta_label = 0;  // in {-1,0,+1}

    bool operator==(const LabeledChunk&) const = default;
};

// Class order is fixed globally as (-1, 0, +1).
inline int label_to_index(int label) { return label + 1; }
inline int index_to_label(int index) { return index - 1; }

// Per-frame mood banding: positive on (3,10], neutral on [-3,3], negative on
// [-10,-3). Both band edges at |v|=3 are neutral.
inline int mood_of_valence(int v) {
    if (v < kValenceMin || v > kValenceMax)
        throw DataError("valence out of range [-10,10]: " + std::to_string(v));
    if (v > 3) return 1;
    if (v < -3) return -1;
    return 0;
}

// Mode of the per-frame mood labels. Ties resolve to the label of the latest
// frame whose label belongs to the tied set.
inline int chunk_mood_label(std::span<const int> per_frame_moods) {
    if (per_frame_moods.empty()) throw DataError("chunk_mood_label: empty window");
    int counts[3] = {0, 0, 0};
    for (int m : per_frame_moods) ++counts[label_to_index(m)];
    const int best = std::max({counts[0], counts[1], counts[2]});
    for (size_t i = per_frame_moods.size(); i-- > 0;) {
        const int m = per_frame_moods[i];
        if (counts[label_to_index(m)] == best) return m;
    }
    return per_frame_moods.back();  // unreachable
}

// Emotion-change label over a k-frame window ending at frame t (0-based):
// sign of v_t - v_{t-k+1}.
inline int delta_label(const std::vector<int>& valences, int t, int k) {
    if (k < 2) throw ConfigError("delta window must span at least 2 frames");
    if (t - k + 1 < 0 || t >= int(valences.size()))
        throw DataError("delta window [" + std::to_string(t - k + 1) + "," + std::to_string(t) +
                        "] exceeds track bounds");
    const int delta = valences[size_t(t)] - valences[size_t(t - k + 1)];
    return delta < 0 ? -1 : (delta > 0 ? 1 : 0);
}

struct ChunkingResult {
    std::vector<LabeledChunk> chunks;
    std::vector<std::string> warnings;
};

// Overlapping windows of window_k contiguous frames; each carries the modal
// mood of its frames and the valence-change sign over the same window.
// Tracks shorter than the window produce no chunks and a diagnostic.
inline ChunkingResult make_chunks(const ValenceTrack& track, const ChunkingConfig& cfg) {
    validate_chunking(cfg);
    ChunkingResult result;
    const int n = int(track.valence.size());
    if (n < cfg.window_k) {
        result.warnings.push_back("video " + track.video_id + " skipped: " + std::to_string(n) +
                                  " frames < window " + std::to_string(cfg.window_k));
        return result;
    }
    std::vector<int> moods(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) moods[size_t(i)] = mood_of_valence(track.valence[size_t(i)]);
    for (int start = 0; start + cfg.window_k <= n; start += cfg.stride) {
        LabeledChunk c;
        c.video_id = track.video_id;
        c.subject_id = track.subject_id;
        c.start_frame = start;
        c.mood_label = chunk_mood_label(
            std::span<const int>(moods.data() + start, size_t(cfg.window_k)));
        c.delta_label = delta_label(track.valence, start + cfg.window_k - 1, cfg.window_k);
        result.chunks.push_back(std::move(c));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Chunk manifest (JSON-lines, one record per chunk)
// ---------------------------------------------------------------------------

inline void write_chunk_manifest(const std::string& path, const std::vector<LabeledChunk>& chunks) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write chunk manifest: " + path);
    for (const auto& c : chunks) {
        nlohmann::ordered_json j;
        j["video_id"] = c.video_id;
        j["subject_id"] = c.subject_id;
        j["start_frame"] = c.start_frame;
        j["mood_label"] = c.mood_label;
        j["delta_label"] = c.delta_label;
        out << j.dump() << "\n";
    }
}

inline std::vector<LabeledChunk> read_chunk_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("chunk manifest not found: " + path);
    std::vector<LabeledChunk> chunks;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        LabeledChunk c;
        c.video_id = j.at("video_id").get<std::string>();
        c.subject_id = j.at("subject_id").get<std::string>();
        c.start_frame = j.at("start_frame").get<int>();
        c.mood_label = j.at("mood_label").get<int>();
        c.delta_label = j.at("delta_label").get<int>();
        if (c.mood_label < -1 || c.mood_label > 1 || c.delta_label < -1 || c.delta_label > 1)
            throw DataError("label outside {-1,0,+1} at manifest line " + std::to_string(lineno));
        chunks.push_back(std::move(c));
    }
    return chunks;
}

}  // namespace mood
