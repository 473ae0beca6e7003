#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mood/errors.hpp"
#include "mood/image.hpp"
#include "mood/rng.hpp"
#include "mood/tensor.hpp"

namespace mood {

constexpr int kClipFrames = 5;
constexpr int kFrameHeight = 32;
constexpr int kFrameWidth = 32;
constexpr int kValenceMin = -10;
constexpr int kValenceMax = 10;

// Per-frame integer valence annotation for one video.
struct ValenceTrack {
    std::string video_id;
    std::string subject_id;
    std::vector<int> valence;  // one entry per frame, frame 0 first

    bool operator==(const ValenceTrack&) const = default;
};

// A 5-frame input sample.
struct FrameClip {
    std::string video_id;
    int start_frame = 0;
    Tensor pixels;  // (5, 32, 32, 3), values in [0,1]
};

struct SyntheticDatasetSpec {
    int num_subjects = 5;
    int videos_per_subject = 4;
    int frames_per_video = 20;
    int valence_walk_step = 2;
    uint64_t seed = 0;
    // Cyclic RGB channel permutation of the synthetic color code; nonzero
    // values make a shifted "external" domain for cross-dataset runs.
    int channel_rotation = 0;
};

// Video-level mood annotation (EMMA-style external datasets carry a single
// mood label per video instead of per-frame valence).
struct MoodTrack {
    std::string video_id;
    std::string subject_id;
    int mood = 0;  // in {-1,0,+1}
    int num_frames = 0;
};

using FrameStore = std::map<std::string, std::vector<Tensor>>;

// ---------------------------------------------------------------------------
// Annotation files
// ---------------------------------------------------------------------------

inline std::vector<ValenceTrack> load_annotations(const std::string& path) {
    if (!std::filesystem::exists(path)) throw DataError("annotation file not found: " + path);
    std::ifstream in(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotation JSON (" + path + "): " + e.what());
    }
    if (!doc.contains("videos") || !doc["videos"].is_array())
        throw DataError("annotation file missing 'videos' array: " + path);

    std::vector<ValenceTrack> tracks;
    for (const auto& v : doc["videos"]) {
        ValenceTrack tr;
        try {
            tr.video_id = v.at("video_id").get<std::string>();
            tr.subject_id = v.at("subject_id").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError(std::string("malformed video record: ") + e.what());
        }
        const auto& frames = v.at("frames");
        tr.valence.resize(frames.size());
        std::vector<bool> seen(frames.size(), false);
        for (const auto& f : frames) {
            int idx, val;
            try {
                idx = f.at("index").get<int>();
                val = f.at("valence").get<int>();
            } catch (const nlohmann::json::exception& e) {
                throw DataError("malformed frame record in video " + tr.video_id + ": " +
                                e.what());
            }
            if (idx < 0 || idx >= int(frames.size()) || seen[size_t(idx)])
                throw DataError("non-contiguous frame indices in video " + tr.video_id +
                                " at frame " + std::to_string(idx));
            if (val < kValenceMin || val > kValenceMax)
                throw DataError("valence out of range [-10,10] in video " + tr.video_id +
                                " frame " + std::to_string(idx) + ": " + std::to_string(val));
            seen[size_t(idx)] = true;
            tr.valence[size_t(idx)] = val;
        }
        if (tr.valence.empty())
            throw DataError("video " + tr.video_id + " has no frames");
        tracks.push_back(std::move(tr));
    }
    return tracks;
}

inline void save_annotations(const std::string& path, const std::vector<ValenceTrack>& tracks) {
    nlohmann::ordered_json doc;
    doc["videos"] = nlohmann::ordered_json::array();
    for (const auto& tr : tracks) {
        nlohmann::ordered_json v;
        v["video_id"] = tr.video_id;
        v["subject_id"] = tr.subject_id;
        v["frames"] = nlohmann::ordered_json::array();
        for (size_t i = 0; i < tr.valence.size(); ++i)
            v["frames"].push_back({{"index", int(i)}, {"valence", tr.valence[i]}});
        doc["videos"].push_back(std::move(v));
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write annotation file: " + path);
    out << doc.dump(2) << "\n";
}

// External datasets: one categorical mood per video, translated to {-1,0,+1}
// through a user-supplied mapping table (no hardcoded category names).
inline std::vector<MoodTrack> load_mood_annotations(const std::string& path,
                                                    const std::map<std::string, int>& mapping) {
    if (!std::filesystem::exists(path)) throw DataError("annotation file not found: " + path);
    std::ifstream in(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed annotation JSON (" + path + "): " + e.what());
    }
    std::vector<MoodTrack> tracks;
    for (const auto& v : doc.at("videos")) {
        MoodTrack tr;
        tr.video_id = v.at("video_id").get<std::string>();
        tr.subject_id = v.value("subject_id", std::string("unknown"));
        tr.num_frames = v.at("num_frames").get<int>();
        const auto& mood = v.at("mood");
        if (mood.is_string()) {
            auto it = mapping.find(mood.get<std::string>());
            if (it == mapping.end())
                throw DataError("mood category '" + mood.get<std::string>() +
                                "' missing from mapping table (video " + tr.video_id + ")");
            tr.mood = it->second;
        } else {
            tr.mood = mood.get<int>();
        }
        if (tr.mood < -1 || tr.mood > 1)
            throw DataError("mapped mood outside {-1,0,+1} for video " + tr.video_id);
        if (tr.num_frames < 1)
            throw DataError("video " + tr.video_id + " has no frames");
        tracks.push_back(std::move(tr));
    }
    return tracks;
}

// ---------------------------------------------------------------------------
// Frame stores
// ---------------------------------------------------------------------------

inline std::string frame_file_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05d.ppm", index);
    return buf;
}

// Reads the index-named frames of one video, bilinearly resized to
// (height,width). Frames must be contiguous from 0.
inline std::vector<Tensor> load_frames(const std::string& root, const std::string& video_id,
                                       int height = kFrameHeight, int width = kFrameWidth) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(root) / video_id;
    if (!fs::is_directory(dir)) throw DataError("frame directory not found: " + dir.string());

    std::vector<int> indices;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string stem = entry.path().stem().string();
        if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) continue;
        indices.push_back(std::stoi(stem));
    }
    if (indices.empty()) throw DataError("no frame files in " + dir.string());
    std::sort(indices.begin(), indices.end());
    for (int i = 0; i < int(indices.size()); ++i)
        if (indices[size_t(i)] != i)
            throw DataError("frame gap in video " + video_id + ": missing index " +
                            std::to_string(i));

    std::vector<Tensor> frames;
    frames.reserve(indices.size());
    for (int i = 0; i < int(indices.size()); ++i) {
        Tensor img = read_ppm((dir / frame_file_name(i)).string());
        frames.push_back(resize_bilinear(img, height, width));
    }
    return frames;
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

inline void validate_spec(const SyntheticDatasetSpec& spec) {
    if (spec.num_subjects < 1 || spec.videos_per_subject < 1 || spec.frames_per_video < 1 ||
        spec.valence_walk_step < 1)
        throw ConfigError("synthetic dataset spec: all counts must be >= 1");
    if (spec.channel_rotation < 0 || spec.channel_rotation > 2)
        throw ConfigError("synthetic dataset spec: channel_rotation must be 0, 1 or 2");
}

// Renders one synthetic frame. Pure in (seed, video_id, frame_index,
// valence): the mood band selects a color channel, the in-band intensity and
// the patch position vary monotonically with valence, and a top meter bar
// encodes the raw valence so that emotion *change* is visually recoverable.
inline Tensor synthetic_frame(uint64_t seed, const std::string& video_id, int frame_index,
                              int valence, int channel_rotation = 0) {
    const int h = kFrameHeight, w = kFrameWidth;
    Tensor img({h, w, 3}, 0.5);
    Rng noise(derive_seed(seed, "noise:" + video_id, uint64_t(frame_index)));
    for (double& v : img.data) v += noise.uniform(-0.05, 0.05);

    const double vfrac = double(valence - kValenceMin) / (kValenceMax - kValenceMin);

    // Valence meter: white bar across the top rows, length proportional to v.
    const int bar = int(std::lround(vfrac * (w - 1)));
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x <= bar; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;

    // Mood patch: band-colored square whose horizontal position tracks v.
    int band;  // 0 negative, 1 neutral, 2 positive
    double in_band;
    if (valence > 3) {
        band = 2;
        in_band = double(valence - 3) / 7.0;
    } else if (valence < -3) {
        band = 0;
        in_band = double(-valence - 3) / 7.0;
    } else {
        band = 1;
        in_band = double(valence + 3) / 6.0;
    }
    const int channel = (band + channel_rotation) % 3;
    const double intensity = 0.55 + 0.45 * in_band;
    const int patch = 14;
    const int px = int(std::lround(vfrac * (w - patch)));
    const int py = 12;
    for (int y = py; y < py + patch; ++y)
        for (int x = px; x < px + patch; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = (c == channel) ? intensity : 0.08;

    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
    return img;
}

inline std::string synthetic_video_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "v%04d", index);
    return buf;
}

inline std::string synthetic_subject_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%02d", index);
    return buf;
}

// Seeded bounded random-walk valence tracks plus rendered frames. Identical
// specs produce bit-identical outputs.
inline std::pair<std::vector<ValenceTrack>, FrameStore> generate_synthetic(
    const SyntheticDatasetSpec& spec) {
    validate_spec(spec);
    std::vector<ValenceTrack> tracks;
    FrameStore frames;
    const int total = spec.num_subjects * spec.videos_per_subject;
    for (int i = 0; i < total; ++i) {
        ValenceTrack tr;
        tr.video_id = synthetic_video_id(i);
        tr.subject_id = synthetic_subject_id(i % spec.num_subjects);
        Rng walk(derive_seed(spec.seed, "walk:" + tr.video_id));
        // Start bands cycle negative/neutral/positive so small datasets still
        // cover all three classes.
        const int base = std::array<int, 3>{-7, 0, 7}[size_t(i % 3)];
        int v = std::clamp(base + walk.uniform_int(-2, 2), kValenceMin, kValenceMax);
        tr.valence.reserve(size_t(spec.frames_per_video));
        std::vector<Tensor>& vid_frames = frames[tr.video_id];
        for (int f = 0; f < spec.frames_per_video; ++f) {
            tr.valence.push_back(v);
            vid_frames.push_back(
                synthetic_frame(spec.seed, tr.video_id, f, v, spec.channel_rotation));
            v = std::clamp(v + walk.uniform_int(-spec.valence_walk_step, spec.valence_walk_step),
                           kValenceMin, kValenceMax);
        }
        tracks.push_back(std::move(tr));
    }
    return {std::move(tracks), std::move(frames)};
}

// Writes annotations.json + frames/<video>/<index>.ppm + dataset.json.
inline void write_synthetic_dataset(const SyntheticDatasetSpec& spec, const std::string& out_dir) {
    namespace fs = std::filesystem;
    auto [tracks, frames] = generate_synthetic(spec);
    fs::create_directories(out_dir);
    save_annotations((fs::path(out_dir) / "annotations.json").string(), tracks);
    for (const auto& [vid, imgs] : frames) {
        const fs::path dir = fs::path(out_dir) / "frames" / vid;
        fs::create_directories(dir);
        for (size_t i = 0; i < imgs.size(); ++i)
            write_ppm((dir / frame_file_name(int(i))).string(), imgs[i]);
    }
    nlohmann::ordered_json meta;
    meta["generator"] = "synthetic";
    meta["num_subjects"] = spec.num_subjects;
    meta["videos_per_subject"] = spec.videos_per_subject;
    meta["frames_per_video"] = spec.frames_per_video;
    meta["valence_walk_step"] = spec.valence_walk_step;
    meta["seed"] = spec.seed;
    meta["channel_rotation"] = spec.channel_rotation;
    std::ofstream meta_out(fs::path(out_dir) / "dataset.json");
    meta_out << meta.dump(2) << "\n";
}

}  // namespace mood
