#include "aex/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace aex {

std::vector<RequestedSubject> requested_subjects(const Vocabulary& vocab,
                                                 const TokenPrompt& prompt) {
    std::vector<RequestedSubject> out;
    for (size_t i = 0; i < prompt.ids.size(); ++i) {
        int id = prompt.ids[i];
        if (!vocab.is_subject(id)) continue;
        RequestedSubject rs;
        rs.shape_id = id;
        if (i > 0 && vocab.is_attribute(prompt.ids[i - 1]))
            rs.color_id = prompt.ids[i - 1];
        out.push_back(rs);
    }
    return out;
}

namespace {

struct Blob {
    int color_id = -1;
    std::vector<uint8_t> mask;  // full-resolution binary mask
    int area = 0;
    double centroid_x = 0, centroid_y = 0;
    int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
    // Best template fit.
    int best_shape = -1;
    double best_iou = 0.0;
    double fit_cx = 0, fit_cy = 0, fit_r = 0;
};

std::vector<int> label_pixels(const Image& img, const Vocabulary& vocab,
                              const DetectorOptions& opts) {
    const int R = img.height;
    std::vector<int> labels(static_cast<size_t>(R) * R, -1);
    auto bg = background_color();
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            double px[3] = {img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
            double best_d = 0;
            for (int c = 0; c < 3; ++c) {
                double d = px[c] - bg[c];
                best_d += d * d;
            }
            int best = -1;
            for (int cid : vocab.attribute_tokens) {
                auto col = color_value(vocab, cid);
                double d2 = 0;
                for (int c = 0; c < 3; ++c) {
                    double d = px[c] - col[c];
                    d2 += d * d;
                }
                if (d2 < best_d) {
                    best_d = d2;
                    best = cid;
                }
            }
            if (best >= 0 && std::sqrt(best_d) <= opts.color_tolerance)
                labels[static_cast<size_t>(y) * R + x] = best;
        }
    return labels;
}

void majority_smooth(std::vector<int>& labels, int R) {
    std::vector<int> out = labels;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            std::map<int, int> counts;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= R || nx < 0 || nx >= R) continue;
                    counts[labels[static_cast<size_t>(ny) * R + nx]]++;
                }
            int cur = labels[static_cast<size_t>(y) * R + x];
            for (auto& [lab, cnt] : counts)
                if (cnt >= 6 && lab != cur)
                    out[static_cast<size_t>(y) * R + x] = lab;
        }
    labels = std::move(out);
}

double shape_area_factor(const Vocabulary& vocab, int shape_id) {
    // Pixel area of a shape ~= factor * (radius * resolution)^2, measured
    // once by rasterizing at high resolution.
    static std::map<std::string, double> cache;
    const std::string& name = vocab.tokens[shape_id];
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    const int R = 128;
    const double r = 0.3;
    int count = 0;
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x)
            if (shape_contains(name, 0.5, 0.5, r, R, x, y)) ++count;
    double f = count / ((r * R) * (r * R));
    cache[name] = f;
    return f;
}

void fit_blob(Blob& blob, const Vocabulary& vocab, int R) {
    const int margin = 3;
    int x0 = std::max(0, blob.min_x - margin);
    int x1 = std::min(R - 1, blob.max_x + margin);
    int y0 = std::max(0, blob.min_y - margin);
    int y1 = std::min(R - 1, blob.max_y + margin);

    // Count of blob pixels outside the window is zero by construction, so
    // IoU can be computed inside the window only.
    static const double offsets[] = {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
    static const double radius_scales[] = {0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2};

    for (int shape_id : vocab.subject_tokens) {
        double factor = shape_area_factor(vocab, shape_id);
        double r0 = std::sqrt(blob.area / factor) / R;
        const std::string& name = vocab.tokens[shape_id];
        for (double oy : offsets)
            for (double ox : offsets) {
                double cx = (blob.centroid_x + ox) / R;
                double cy = (blob.centroid_y + oy) / R;
                for (double rs : radius_scales) {
                    double r = r0 * rs;
                    if (r <= 0) continue;
                    int inter = 0, uni = 0;
                    for (int y = y0; y <= y1; ++y)
                        for (int x = x0; x <= x1; ++x) {
                            bool in_t =
                                shape_contains(name, cx, cy, r, R, x, y);
                            bool in_b =
                                blob.mask[static_cast<size_t>(y) * R + x] != 0;
                            inter += (in_t && in_b);
                            uni += (in_t || in_b);
                        }
                    if (uni == 0) continue;
                    double iou = static_cast<double>(inter) / uni;
                    if (iou > blob.best_iou) {
                        blob.best_iou = iou;
                        blob.best_shape = shape_id;
                        blob.fit_cx = cx;
                        blob.fit_cy = cy;
                        blob.fit_r = r;
                    }
                }
            }
    }
}

std::vector<Blob> extract_blobs(const Image& img, const Vocabulary& vocab,
                                const DetectorOptions& opts) {
    const int R = img.height;
    std::vector<int> labels = label_pixels(img, vocab, opts);
    if (opts.majority_smoothing) majority_smooth(labels, R);

    std::vector<Blob> blobs;
    std::vector<int> visited(labels.size(), 0);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            size_t idx = static_cast<size_t>(y) * R + x;
            if (visited[idx] || labels[idx] < 0) continue;
            // Flood fill (4-connectivity).
            Blob b;
            b.color_id = labels[idx];
            b.mask.assign(labels.size(), 0);
            b.min_x = b.max_x = x;
            b.min_y = b.max_y = y;
            std::vector<std::pair<int, int>> stack = {{x, y}};
            visited[idx] = 1;
            double sx = 0, sy = 0;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                size_t ci = static_cast<size_t>(cy) * R + cx;
                b.mask[ci] = 1;
                b.area++;
                sx += cx + 0.5;
                sy += cy + 0.5;
                b.min_x = std::min(b.min_x, cx);
                b.max_x = std::max(b.max_x, cx);
                b.min_y = std::min(b.min_y, cy);
                b.max_y = std::max(b.max_y, cy);
                const int dxs[] = {1, -1, 0, 0}, dys[] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    int nx = cx + dxs[d], ny = cy + dys[d];
                    if (nx < 0 || nx >= R || ny < 0 || ny >= R) continue;
                    size_t ni = static_cast<size_t>(ny) * R + nx;
                    if (!visited[ni] && labels[ni] == b.color_id) {
                        visited[ni] = 1;
                        stack.push_back({nx, ny});
                    }
                }
            }
            b.centroid_x = sx / b.area;
            b.centroid_y = sy / b.area;
            if (b.area >= opts.min_blob_area) blobs.push_back(std::move(b));
        }
    for (Blob& b : blobs) fit_blob(b, vocab, R);
    return blobs;
}

SubjectDetection judge(const std::vector<Blob>& blobs, int R,
                       const RequestedSubject& req,
                       const DetectorOptions& opts) {
    SubjectDetection det;
    det.shape_id = req.shape_id;
    const Blob* best = nullptr;
    for (const Blob& b : blobs) {
        if (b.best_shape != req.shape_id) continue;
        if (b.best_iou > det.coverage) {
            det.coverage = b.best_iou;
            best = &b;
        }
    }
    det.present = det.coverage >= opts.presence_threshold;
    if (req.color_id >= 0)
        det.color_match = det.present && best && best->color_id == req.color_id;
    if (best) {
        SubjectLocation loc;
        loc.shape_id = best->best_shape;
        loc.color_id = best->color_id;
        loc.cx = best->fit_cx;
        loc.cy = best->fit_cy;
        loc.radius = best->fit_r;
        loc.mask = best->mask;
        det.location = std::move(loc);
    }
    (void)R;
    return det;
}

}  // namespace

DetectionResult detect_subjects(const Image& img, const TokenPrompt& prompt,
                                const Vocabulary& vocab,
                                const DetectorOptions& opts) {
    for (int idx : prompt.subject_indices) {
        if (idx < 0 || idx >= prompt.length())
            throw std::invalid_argument("subject index out of range");
        if (!vocab.is_subject(prompt.ids[idx]))
            throw std::invalid_argument("token at subject index is not a subject");
    }
    auto reqs = requested_subjects(vocab, prompt);
    if (reqs.empty())
        throw std::invalid_argument("prompt names no known subject");
    auto blobs = extract_blobs(img, vocab, opts);
    DetectionResult res;
    for (const auto& req : reqs)
        res.subjects.push_back(judge(blobs, img.height, req, opts));
    return res;
}

std::vector<SubjectDetection> detect_all_shapes(const Image& img,
                                                const Vocabulary& vocab,
                                                const DetectorOptions& opts) {
    auto blobs = extract_blobs(img, vocab, opts);
    std::vector<SubjectDetection> out;
    for (int shape_id : vocab.subject_tokens) {
        RequestedSubject req;
        req.shape_id = shape_id;
        out.push_back(judge(blobs, img.height, req, opts));
    }
    return out;
}

}  // namespace aex
