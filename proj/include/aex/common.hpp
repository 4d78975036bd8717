#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace aex {

/// H x W x C raster with values in [-1, 1], stored (y, x, channel).
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, 0.0) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// Latents are pixel-space grids stored as (P*P) x C matrices, row index
/// y * P + x.
struct LatentState {
    Eigen::MatrixXd z;  // (P*P) x C
    int resolution = 0;
    int t = 0;
};

inline Eigen::MatrixXd image_to_latent(const Image& img) {
    Eigen::MatrixXd z(img.height * img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                z(y * img.width + x, c) = img.at(y, x, c);
    return z;
}

inline Image latent_to_image(const Eigen::MatrixXd& z, int resolution,
                             bool clamp = true) {
    Image img(resolution, resolution, static_cast<int>(z.cols()));
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double v = z(y * resolution + x, c);
                if (clamp) v = std::max(-1.0, std::min(1.0, v));
                img.at(y, x, c) = v;
            }
    return img;
}

using Rng = std::mt19937_64;

inline Eigen::MatrixXd random_normal(Rng& rng, int rows, int cols,
                                     double stddev = 1.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    Eigen::MatrixXd m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = dist(rng);
    return m;
}

/// FNV-1a over a string, used to fingerprint vocabularies in checkpoints.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace aex
