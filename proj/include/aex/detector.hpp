#pragma once

#include <optional>
#include <vector>

#include "aex/world.hpp"

namespace aex {

/// Where the detector localized a subject (continuous template placement
/// plus its pixel mask at the image resolution).
struct SubjectLocation {
    int shape_id = -1;
    int color_id = -1;
    double cx = 0, cy = 0, radius = 0;
    std::vector<uint8_t> mask;
};

struct SubjectDetection {
    int shape_id = -1;
    bool present = false;
    /// Set only when the prompt named a color for this subject.
    std::optional<bool> color_match;
    /// Best template/blob overlap (IoU) among blobs classified as this
    /// shape; 0 when no such blob exists.
    double coverage = 0.0;
    std::optional<SubjectLocation> location;
};

struct DetectionResult {
    std::vector<SubjectDetection> subjects;

    bool all_present() const {
        for (const auto& s : subjects)
            if (!s.present) return false;
        return !subjects.empty();
    }
    bool any_binding_error() const {
        for (const auto& s : subjects)
            if (s.present && s.color_match && !*s.color_match) return true;
        return false;
    }
};

struct DetectorOptions {
    /// Max RGB distance for a pixel to be attributed to a palette color.
    double color_tolerance = 1.1;
    /// Blob/template IoU needed to call a subject present.
    double presence_threshold = 0.5;
    /// Blobs below this pixel count are ignored as noise.
    int min_blob_area = 8;
    /// One pass of 3x3 majority smoothing on the label map.
    bool majority_smoothing = true;
};

/// A subject requested by a prompt: shape token id plus optional color id.
struct RequestedSubject {
    int shape_id = -1;
    int color_id = -1;  // -1 when the prompt names no color
};

/// Extracts (shape, color) requests from an encoded prompt: every subject
/// token, paired with an attribute token immediately preceding it.
std::vector<RequestedSubject> requested_subjects(const Vocabulary& vocab,
                                                 const TokenPrompt& prompt);

/// Oracle detector: classifies pixels to the palette, segments blobs, and
/// fits shape templates by IoU. Exact on renderer output.
DetectionResult detect_subjects(const Image& img, const TokenPrompt& prompt,
                                const Vocabulary& vocab,
                                const DetectorOptions& opts = {});

/// Detection sweep over every shape in the vocabulary (prompt-independent);
/// used by the oracle embedding backend.
std::vector<SubjectDetection> detect_all_shapes(const Image& img,
                                                const Vocabulary& vocab,
                                                const DetectorOptions& opts = {});

}  // namespace aex
