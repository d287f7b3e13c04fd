#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resadapt/tensor.hpp"

namespace resadapt {

/// Images (N x H x W x C, single precision) with one label per image.
struct Dataset {
    std::string name;
    std::size_t num_classes = 0;
    Tensor<float> images;
    std::vector<std::uint32_t> labels;

    std::size_t size() const { return labels.size(); }
    void validate() const;
    std::vector<std::size_t> class_counts() const;
};

/// Oriented sinusoidal gratings, one orientation per class, tinted per channel
/// by a rotating palette, plus Gaussian pixel noise.
struct SyntheticDomainSpec {
    std::string name = "synthetic";
    std::uint64_t seed = 0;
    std::size_t num_classes = 5;
    std::size_t images_per_class = 100;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 3;
    double palette_rotation = 0.0;  // radians; also rotates every class orientation
    double frequency = 3.0;         // grating periods across the image
    double noise_sigma = 0.1;
    double phase_jitter = 0.0;  // per-image uniform phase offset in [-j, j]

    void validate() const;
};

/// Image i has label i % num_classes. Draw order per image: one uniform for the
/// phase jitter, then one Gaussian per pixel in H, W, C order.
Dataset generate_domain(const SyntheticDomainSpec& spec);

/// Directory layout: images.mdtb, labels.mdtb, meta.txt (name, num_classes).
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Keeps round(fraction * n_c) images of every class c, chosen by a seeded
/// shuffle, in their original order. fraction 1 returns the dataset unchanged.
Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed);

Dataset take(const Dataset& ds, std::span<const std::size_t> indices);

/// Gathers a batch and converts it to T.
template <typename T>
Tensor<T> gather_images(const Dataset& ds, std::span<const std::size_t> indices);

/// Minimal key=value reader shared by meta files and CLI configs. Blank lines
/// and '#' comments are skipped; whitespace around keys and values is trimmed.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin);

}  // namespace resadapt
