#pragma once

#include <map>
#include <string>
#include <vector>

#include "mood/errors.hpp"
#include "mood/ingest.hpp"
#include "mood/labels.hpp"
#include "mood/tensor.hpp"

namespace mood {

// In-memory training/eval corpus: labeled chunks plus the frames they index
// into. Frames are stored once per video; clip batches are materialized on
// demand.
struct ChunkDataset {
    std::vector<LabeledChunk> chunks;
    FrameStore frames;
    ChunkingConfig chunking;
    std::vector<std::string> warnings;

    int64_t size() const { return int64_t(chunks.size()); }

    // (B, k, 32, 32, 3) batch for the given chunk indices.
    Tensor gather(const std::vector<int>& indices) const {
        const int k = chunking.window_k;
        Tensor batch({int(indices.size()), k, kFrameHeight, kFrameWidth, 3});
        int64_t offset = 0;
        const int64_t frame_elems = int64_t(kFrameHeight) * kFrameWidth * 3;
        for (int idx : indices) {
            const LabeledChunk& c = chunks[size_t(idx)];
            const auto& vid_frames = frames.at(c.video_id);
            for (int f = 0; f < k; ++f) {
                const Tensor& img = vid_frames[size_t(c.start_frame + f)];
                std::copy(img.data.begin(), img.data.end(), batch.data.begin() + offset);
                offset += frame_elems;
            }
        }
        return batch;
    }

    std::vector<int> mood_indices(const std::vector<int>& indices) const {
        std::vector<int> out;
        out.reserve(indices.size());
        for (int i : indices) out.push_back(label_to_index(chunks[size_t(i)].mood_label));
        return out;
    }

    std::vector<int> delta_indices(const std::vector<int>& indices) const {
        std::vector<int> out;
        out.reserve(indices.size());
        for (int i : indices) out.push_back(label_to_index(chunks[size_t(i)].delta_label));
        return out;
    }

    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        for (const auto& c : chunks)
            if (std::find(out.begin(), out.end(), c.subject_id) == out.end())
                out.push_back(c.subject_id);
        return out;
    }

    // Stable content hash recorded in checkpoints.
    uint64_t fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& c : chunks) {
            h = fnv1a(c.video_id, h);
            h = fnv1a(c.subject_id, h);
            h = mix64(h ^ uint64_t(uint32_t(c.start_frame)));
            h = mix64(h ^ uint64_t(uint32_t(c.mood_label + 1)));
            h = mix64(h ^ uint64_t(uint32_t(c.delta_label + 1)));
        }
        return h;
    }
};

// Chunks valence tracks and pairs them with an in-memory frame store.
inline ChunkDataset build_dataset(const std::vector<ValenceTrack>& tracks, FrameStore frames,
                                  const ChunkingConfig& chunking) {
    ChunkDataset ds;
    ds.chunking = chunking;
    ds.frames = std::move(frames);
    for (const auto& tr : tracks) {
        if (!ds.frames.count(tr.video_id))
            throw DataError("no frames for annotated video " + tr.video_id);
        if (ds.frames.at(tr.video_id).size() < tr.valence.size())
            throw DataError("video " + tr.video_id + " has fewer frames than annotations");
        ChunkingResult res = make_chunks(tr, chunking);
        for (auto& w : res.warnings) ds.warnings.push_back(std::move(w));
        for (auto& c : res.chunks) ds.chunks.push_back(std::move(c));
    }
    return ds;
}

// Disk-backed variant: annotations.json + frames/<video>/ tree.
inline ChunkDataset load_dataset(const std::string& annotations_path,
                                 const std::string& frames_root, const ChunkingConfig& chunking) {
    const auto tracks = load_annotations(annotations_path);
    FrameStore frames;
    for (const auto& tr : tracks) frames[tr.video_id] = load_frames(frames_root, tr.video_id);
    return build_dataset(tracks, std::move(frames), chunking);
}

// External dataset with video-level mood labels: every window inherits the
// video's mood; delta labels are not defined and are stored as 0.
inline ChunkDataset build_external_dataset(const std::vector<MoodTrack>& tracks,
                                           FrameStore frames, const ChunkingConfig& chunking) {
    validate_chunking(chunking);
    ChunkDataset ds;
    ds.chunking = chunking;
    ds.frames = std::move(frames);
    for (const auto& tr : tracks) {
        if (!ds.frames.count(tr.video_id))
            throw DataError("no frames for annotated video " + tr.video_id);
        if (tr.num_frames < chunking.window_k) {
            ds.warnings.push_back("video " + tr.video_id + " skipped: shorter than window");
            continue;
        }
        for (int start = 0; start + chunking.window_k <= tr.num_frames;
             start += chunking.stride) {
            LabeledChunk c;
            c.video_id = tr.video_id;
            c.subject_id = tr.subject_id;
            c.start_frame = start;
            c.mood_label = tr.mood;
            c.delta_label = 0;
            ds.chunks.push_back(std::move(c));
        }
    }
    return ds;
}

}  // namespace mood
