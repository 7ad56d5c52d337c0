#pragma once

#include <filesystem>
#include <vector>

#include "uspose/dsp/preprocess.hpp"

namespace uspose::bench {

// On-disk layout: <root>/<subject_id>/<session_id>/{meta.json, rf.f32,
// labels.txt}. rf.f32 is little-endian float32 in [frame][channel][sample]
// order; labels.txt has one class id per line.
void save_recording(const std::filesystem::path& root, const dsp::RFRecording& rec);
dsp::RFRecording load_recording(const std::filesystem::path& session_dir);

// All sessions under root, sorted by (subject_id, session_id).
std::vector<dsp::RFRecording> load_dataset(const std::filesystem::path& root);

enum class Split { Train, Val, Test };

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;

    void validate() const;
};

// Class-stratified contiguous blocks in temporal order: per class, the first
// frames train, then val, then test, so no test frame precedes a train frame
// of the same class.
std::vector<Split> split_frames(const std::vector<int>& labels, int classes, const SplitRatios& ratios);

struct SessionDataset {
    std::string subject_id, session_id;
    std::vector<dsp::NetworkInput> inputs;
    std::vector<Split> assignment;  // parallel to inputs

    std::vector<dsp::NetworkInput> subset(Split s) const;
};

// Preprocesses the recording and assigns splits. The seed is unused by the
// contiguous strategy but kept so randomized strategies stay drop-in.
SessionDataset split_session(const dsp::RFRecording& rec, const dsp::PreprocConfig& cfg,
                             const SplitRatios& ratios, uint64_t seed);

}  // namespace uspose::bench
