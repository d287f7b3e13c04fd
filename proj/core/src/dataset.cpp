#include "resadapt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "resadapt/errors.hpp"
#include "resadapt/rng.hpp"
#include "resadapt/tensor_io.hpp"

namespace resadapt {

void Dataset::validate() const {
    if (images.rank() != 4) {
        throw FormatError("dataset '" + name + "': images must be N x H x W x C, got " + images.shape().str());
    }
    if (images.dim(0) != labels.size()) {
        throw FormatError("dataset '" + name + "': " + std::to_string(images.dim(0)) + " images but " +
                          std::to_string(labels.size()) + " labels");
    }
    if (num_classes < 2) {
        throw FormatError("dataset '" + name + "': needs at least 2 classes");
    }
    for (auto l : labels) {
        if (l >= num_classes) {
            throw FormatError("dataset '" + name + "': label " + std::to_string(l) + " out of range");
        }
    }
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (auto l : labels) {
        ++counts.at(l);
    }
    return counts;
}

void SyntheticDomainSpec::validate() const {
    if (num_classes < 2) {
        throw ConfigError("synthetic domain needs at least 2 classes");
    }
    if (images_per_class == 0 || height == 0 || width == 0 || channels == 0) {
        throw ConfigError("synthetic domain extents must be positive");
    }
    if (!(noise_sigma >= 0.0) || !(phase_jitter >= 0.0) || !std::isfinite(frequency)) {
        throw ConfigError("synthetic domain style parameters must be finite and non-negative");
    }
}

Dataset generate_domain(const SyntheticDomainSpec& spec) {
    spec.validate();
    const std::size_t n = spec.num_classes * spec.images_per_class;
    const std::size_t h = spec.height, w = spec.width, c = spec.channels;
    const double size = double(std::max(h, w));
    constexpr double pi = std::numbers::pi;

    std::vector<double> palette(c);
    for (std::size_t k = 0; k < c; ++k) {
        palette[k] = 0.5 + 0.5 * std::cos(spec.palette_rotation + 2.0 * pi * double(k) / 3.0);
    }

    Dataset ds;
    ds.name = spec.name;
    ds.num_classes = spec.num_classes;
    ds.images = Tensor<float>(Shape{n, h, w, c});
    ds.labels.resize(n);
    CounterRng rng(spec.seed);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % spec.num_classes;
        ds.labels[i] = std::uint32_t(label);
        const double theta = double(label) * pi / double(spec.num_classes) + spec.palette_rotation;
        const double jitter = (2.0 * rng.next_uniform() - 1.0) * spec.phase_jitter;
        const double phase = 0.5 * double(label) + jitter;
        const double kx = 2.0 * pi * spec.frequency * std::cos(theta) / size;
        const double ky = 2.0 * pi * spec.frequency * std::sin(theta) / size;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double g = 0.5 + 0.5 * std::sin(kx * double(x) + ky * double(y) + phase);
                for (std::size_t k = 0; k < c; ++k) {
                    const double noise = spec.noise_sigma * rng.next_gaussian();
                    ds.images.at(i, y, x, k) = float(palette[k] * g + noise);
                }
            }
        }
    }
    return ds;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& origin) {
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) {
            return std::string();
        }
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        }
        out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
    }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    ds.validate();
    std::filesystem::create_directories(dir);
    save_tensor(dir / "images.mdtb", ds.images);
    save_labels(dir / "labels.mdtb", ds.labels);
    const std::string meta = "name = " + ds.name + "\nnum_classes = " + std::to_string(ds.num_classes) + "\n";
    write_file_atomic(dir / "meta.txt", std::span(reinterpret_cast<const std::uint8_t*>(meta.data()), meta.size()));
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.images = load_tensor<float>(dir / "images.mdtb");
    ds.labels = load_labels(dir / "labels.mdtb");
    ds.name = dir.filename().string();
    const auto bytes = read_file(dir / "meta.txt");
    for (const auto& [k, v] : parse_key_values(std::string(bytes.begin(), bytes.end()), (dir / "meta.txt").string())) {
        if (k == "name") {
            ds.name = v;
        } else if (k == "num_classes") {
            ds.num_classes = std::stoul(v);
        }
    }
    if (ds.num_classes == 0) {
        for (auto l : ds.labels) {
            ds.num_classes = std::max<std::size_t>(ds.num_classes, l + 1);
        }
    }
    ds.validate();
    return ds;
}

Dataset take(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.name = ds.name;
    out.num_classes = ds.num_classes;
    out.images = gather_images<float>(ds, indices);
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("subsample fraction must lie in (0, 1]");
    }
    if (fraction == 1.0) {
        return ds;
    }
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[ds.labels[i]].push_back(i);
    }
    const CounterRng base(seed);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        const auto& members = by_class[c];
        CounterRng rng = base.fork(c);
        const auto order = shuffled_indices(members.size(), rng);
        const auto count = std::size_t(std::llround(fraction * double(members.size())));
        for (std::size_t k = 0; k < count; ++k) {
            keep.push_back(members[order[k]]);
        }
    }
    std::sort(keep.begin(), keep.end());
    return take(ds, keep);
}

template <typename T>
Tensor<T> gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
    const auto& s = ds.images.shape();
    const std::size_t stride = s[1] * s[2] * s[3];
    Tensor<T> out(Shape{indices.size(), s[1], s[2], s[3]});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= s[0]) {
            throw ConfigError("gather_images: index out of range");
        }
        const float* src = ds.images.data() + indices[b] * stride;
        std::copy(src, src + stride, out.data() + b * stride);
    }
    return out;
}

template Tensor<float> gather_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> gather_images<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace resadapt
