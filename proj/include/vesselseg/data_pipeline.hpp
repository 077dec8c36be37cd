#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/image.hpp"
#include "vesselseg/image_io.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

enum class InputMode { green, gray, rgb };

inline const char* to_string(InputMode m) {
    switch (m) {
        case InputMode::green: return "green";
        case InputMode::gray: return "gray";
        default: return "rgb";
    }
}

inline InputMode input_mode_from_string(const std::string& s) {
    if (s == "green") return InputMode::green;
    if (s == "gray") return InputMode::gray;
    if (s == "rgb") return InputMode::rgb;
    throw Error("unknown input mode: " + s);
}

inline int input_mode_channels(InputMode m) { return m == InputMode::rgb ? 3 : 1; }

/// One dataset entry: RGB image, binary label, optional binary FOV mask.
struct FundusSample {
    Image8 image;                // 3 channels
    Image8 label;                // 1 channel, values {0,1}
    std::optional<Image8> fov;   // 1 channel, values {0,1}

    int height() const { return image.height; }
    int width() const { return image.width; }
};

namespace detail {

inline Image8 to_rgb(const Image8& img) {
    if (img.channels == 3) return img;
    Image8 out(img.width, img.height, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        out.pixels[3 * i] = img.pixels[i];
        out.pixels[3 * i + 1] = img.pixels[i];
        out.pixels[3 * i + 2] = img.pixels[i];
    }
    return out;
}

inline Image8 binarize(const Image8& img, int threshold = 128) {
    Image8 out(img.width, img.height, 1);
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < count; ++i) {
        int v;
        if (img.channels == 1) {
            v = img.pixels[i];
        } else {
            // luminance of an RGB-coded mask
            const std::uint8_t* p = img.pixels.data() + 3 * i;
            v = static_cast<int>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
        }
        out.pixels[i] = v >= threshold ? 1 : 0;
    }
    return out;
}

}  // namespace detail

/// Loads and validates one sample; the label (and mask, when given) is
/// binarized at 128.
inline FundusSample load_sample(const std::string& image_path, const std::string& label_path,
                                const std::string& mask_path = "") {
    FundusSample s;
    s.image = detail::to_rgb(read_png(image_path));
    const Image8 raw_label = read_png(label_path);
    if (raw_label.width != s.image.width || raw_label.height != s.image.height)
        throw ShapeError("label size does not match image: " + label_path);
    s.label = detail::binarize(raw_label);
    if (!mask_path.empty()) {
        const Image8 raw_mask = read_png(mask_path);
        if (raw_mask.width != s.image.width || raw_mask.height != s.image.height)
            throw ShapeError("mask size does not match image: " + mask_path);
        s.fov = detail::binarize(raw_mask);
    }
    return s;
}

/// Planar network input in [0,1]: the green channel, Rec.601 luminance, or
/// all three channels.
template <typename T>
std::vector<T> to_input_plane(const Image8& image, InputMode mode) {
    const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    const Image8 rgb = detail::to_rgb(image);
    if (mode == InputMode::rgb) {
        std::vector<T> out(3 * count);
        for (std::size_t i = 0; i < count; ++i)
            for (int ch = 0; ch < 3; ++ch)
                out[ch * count + i] = static_cast<T>(rgb.pixels[3 * i + ch]) / T(255);
        return out;
    }
    std::vector<T> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t* p = rgb.pixels.data() + 3 * i;
        if (mode == InputMode::green)
            out[i] = static_cast<T>(p[1]) / T(255);
        else
            out[i] = static_cast<T>(T(0.299) * p[0] + T(0.587) * p[1] + T(0.114) * p[2]) / T(255);
    }
    return out;
}

/// Image prepared for training/evaluation: planar input channels, real
/// label plane, optional mask bytes.
template <typename T>
struct PreparedImage {
    int height = 0, width = 0, channels = 1;
    std::vector<T> planes;        // channels * height * width
    std::vector<T> label;         // height * width, values {0,1}
    std::vector<std::uint8_t> mask;  // empty when absent
};

template <typename T>
PreparedImage<T> prepare_image(const FundusSample& s, InputMode mode) {
    PreparedImage<T> p;
    p.height = s.height();
    p.width = s.width();
    p.channels = input_mode_channels(mode);
    p.planes = to_input_plane<T>(s.image, mode);
    const std::size_t count = static_cast<std::size_t>(p.height) * p.width;
    p.label.resize(count);
    for (std::size_t i = 0; i < count; ++i) p.label[i] = static_cast<T>(s.label.pixels[i]);
    if (s.fov) p.mask = s.fov->pixels;
    return p;
}

struct AugmentFlags {
    bool flips = false;       // horizontal/vertical mirroring
    bool rotations = false;   // multiples of 90 degrees
};

/// One 48x48 (by default) training pair cut from a full image.
template <typename T>
struct PatchPair {
    int channels = 1;
    int size = 0;
    std::vector<T> input;   // channels * size * size, planar
    std::vector<T> target;  // size * size
    int image_id = 0;
    int row = 0;
    int col = 0;
};

namespace detail {

template <typename T>
void flip_square_h(std::vector<T>& v, int channels, int size) {
    for (int ch = 0; ch < channels; ++ch)
        for (int r = 0; r < size; ++r) {
            T* row = v.data() + (static_cast<std::size_t>(ch) * size + r) * size;
            std::reverse(row, row + size);
        }
}

template <typename T>
void flip_square_v(std::vector<T>& v, int channels, int size) {
    for (int ch = 0; ch < channels; ++ch)
        for (int r = 0; r < size / 2; ++r) {
            T* a = v.data() + (static_cast<std::size_t>(ch) * size + r) * size;
            T* b = v.data() + (static_cast<std::size_t>(ch) * size + (size - 1 - r)) * size;
            std::swap_ranges(a, a + size, b);
        }
}

template <typename T>
void rot90_square(std::vector<T>& v, int channels, int size, int quarter_turns) {
    quarter_turns &= 3;
    if (quarter_turns == 0) return;
    std::vector<T> tmp(static_cast<std::size_t>(size) * size);
    for (int ch = 0; ch < channels; ++ch) {
        T* plane = v.data() + static_cast<std::size_t>(ch) * size * size;
        for (int t = 0; t < quarter_turns; ++t) {
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c)
                    tmp[static_cast<std::size_t>(c) * size + (size - 1 - r)] =
                        plane[static_cast<std::size_t>(r) * size + c];
            std::copy(tmp.begin(), tmp.end(), plane);
        }
    }
}

}  // namespace detail

template <typename T>
void flip_patch_h(PatchPair<T>& p) {
    detail::flip_square_h(p.input, p.channels, p.size);
    detail::flip_square_h(p.target, 1, p.size);
}

template <typename T>
void flip_patch_v(PatchPair<T>& p) {
    detail::flip_square_v(p.input, p.channels, p.size);
    detail::flip_square_v(p.target, 1, p.size);
}

template <typename T>
void rotate_patch(PatchPair<T>& p, int quarter_turns) {
    detail::rot90_square(p.input, p.channels, p.size, quarter_turns);
    detail::rot90_square(p.target, 1, p.size, quarter_turns);
}

/// Cuts one patch at a uniform random position fully inside the image; with
/// a FOV mask present the patch center must lie inside it. Augmentations are
/// drawn from `rng` and applied to input and target identically.
template <typename T>
PatchPair<T> sample_one_patch(const PreparedImage<T>& img, int size, Rng& rng,
                              const AugmentFlags& aug, int image_id = 0) {
    if (img.height < size || img.width < size)
        throw ShapeError("sample_one_patch: image smaller than patch");
    const std::size_t count = static_cast<std::size_t>(img.height) * img.width;
    int row = 0, col = 0;
    for (int attempt = 0;; ++attempt) {
        row = static_cast<int>(rng.uniform_index(img.height - size + 1));
        col = static_cast<int>(rng.uniform_index(img.width - size + 1));
        if (img.mask.empty()) break;
        const std::size_t center =
            static_cast<std::size_t>(row + size / 2) * img.width + (col + size / 2);
        if (img.mask[center] != 0) break;
        if (attempt >= 10000)
            throw Error("sample_one_patch: no patch center inside the FOV mask");
    }
    PatchPair<T> p;
    p.channels = img.channels;
    p.size = size;
    p.image_id = image_id;
    p.row = row;
    p.col = col;
    p.input.resize(static_cast<std::size_t>(img.channels) * size * size);
    p.target.resize(static_cast<std::size_t>(size) * size);
    for (int ch = 0; ch < img.channels; ++ch) {
        const T* plane = img.planes.data() + static_cast<std::size_t>(ch) * count;
        for (int r = 0; r < size; ++r) {
            const T* src = plane + static_cast<std::size_t>(row + r) * img.width + col;
            T* dst = p.input.data() + (static_cast<std::size_t>(ch) * size + r) * size;
            std::copy(src, src + size, dst);
        }
    }
    for (int r = 0; r < size; ++r) {
        const T* src = img.label.data() + static_cast<std::size_t>(row + r) * img.width + col;
        std::copy(src, src + size, p.target.data() + static_cast<std::size_t>(r) * size);
    }
    if (aug.flips) {
        if (rng.uniform() < 0.5) flip_patch_h(p);
        if (rng.uniform() < 0.5) flip_patch_v(p);
    }
    if (aug.rotations) rotate_patch(p, static_cast<int>(rng.uniform_index(4)));
    return p;
}

template <typename T>
std::vector<PatchPair<T>> sample_patches(const FundusSample& sample, int n, int size, Rng& rng,
                                         const AugmentFlags& aug = {},
                                         InputMode mode = InputMode::green, int image_id = 0) {
    const PreparedImage<T> img = prepare_image<T>(sample, mode);
    std::vector<PatchPair<T>> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(sample_one_patch(img, size, rng, aug, image_id));
    return out;
}

inline constexpr int kDefaultSynthSize = 256;
inline constexpr int kDefaultSynthVessels = 12;
inline constexpr double kDefaultSynthNoise = 8.0;

/// Renders vessel-like random-walk curves (1-3 px wide, darker than the
/// background) onto a noisy background. The label is exactly the rendered
/// support.
inline FundusSample synth_vessel_sample(Rng& rng, int width = kDefaultSynthSize,
                                        int height = kDefaultSynthSize,
                                        int vessel_count = kDefaultSynthVessels,
                                        double noise_level = kDefaultSynthNoise) {
    if (width < 64 || height < 64)
        throw ShapeError("synth_vessel_sample: dimensions must be >= 64");
    FundusSample s;
    s.image = Image8(width, height, 3);
    s.label = Image8(width, height, 1);

    // background: gentle illumination ramp plus Gaussian noise
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const double ramp = 20.0 * (static_cast<double>(r) / height +
                                        static_cast<double>(c) / width) / 2.0;
            const double base = 175.0 + ramp + noise_level * rng.normal();
            const double channel_scale[3] = {0.88, 1.0, 0.80};
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(base * channel_scale[ch], 0.0, 255.0);
                s.image.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }

    auto stamp = [&](double cy, double cx, double radius) {
        const int reach = static_cast<int>(std::ceil(radius));
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                if (dx * dx + dy * dy > radius * radius + 0.01) continue;
                const int y = static_cast<int>(std::lround(cy)) + dy;
                const int x = static_cast<int>(std::lround(cx)) + dx;
                if (y < 0 || y >= height || x < 0 || x >= width) continue;
                if (s.label.at(y, x) != 0) continue;
                s.label.at(y, x) = 1;
                for (int ch = 0; ch < 3; ++ch)
                    s.image.at(y, x, ch) =
                        static_cast<std::uint8_t>(std::lround(s.image.at(y, x, ch) * 0.55));
            }
        }
    };

    for (int v = 0; v < vessel_count; ++v) {
        double y = 8.0 + rng.uniform() * (height - 16);
        double x = 8.0 + rng.uniform() * (width - 16);
        double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double radius = 0.5 * (1 + static_cast<int>(rng.uniform_index(3)));  // widths 1-3
        const int steps = static_cast<int>((0.6 + 0.6 * rng.uniform()) * std::min(width, height));
        for (int step = 0; step < steps; ++step) {
            stamp(y, x, radius);
            y += std::sin(theta);
            x += std::cos(theta);
            theta += 0.18 * rng.normal();
            if (y < 2.0) { y = 2.0; theta = -theta; }
            if (y > height - 3.0) { y = height - 3.0; theta = -theta; }
            if (x < 2.0) { x = 2.0; theta = std::numbers::pi - theta; }
            if (x > width - 3.0) { x = width - 3.0; theta = std::numbers::pi - theta; }
        }
    }
    return s;
}

struct ManifestEntry {
    std::string image;
    std::string label;
    std::string mask;  // empty when absent
};

/// Manifest format: one `image,label[,mask]` line per sample; paths are
/// resolved against the manifest's directory.
inline std::vector<ManifestEntry> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty()) return p;
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ManifestEntry e;
        const auto c1 = line.find(',');
        if (c1 == std::string::npos)
            throw IoError("manifest line needs at least image,label: " + line);
        const auto c2 = line.find(',', c1 + 1);
        e.image = resolve(line.substr(0, c1));
        if (c2 == std::string::npos) {
            e.label = resolve(line.substr(c1 + 1));
        } else {
            e.label = resolve(line.substr(c1 + 1, c2 - c1 - 1));
            e.mask = resolve(line.substr(c2 + 1));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    for (const auto& e : entries) {
        out << e.image << ',' << e.label;
        if (!e.mask.empty()) out << ',' << e.mask;
        out << '\n';
    }
}

inline std::vector<FundusSample> load_dataset(const std::string& manifest_path) {
    std::vector<FundusSample> samples;
    for (const auto& e : parse_manifest(manifest_path))
        samples.push_back(load_sample(e.image, e.label, e.mask));
    if (samples.empty()) throw Error("dataset is empty: " + manifest_path);
    return samples;
}

/// Tile origins covering [0, extent - size] at the given stride, with a
/// final tile clamped to the edge.
inline std::vector<int> grid_positions(int extent, int size, int stride) {
    std::vector<int> pos;
    for (int p = 0; p + size <= extent; p += stride) pos.push_back(p);
    if (pos.empty() || pos.back() + size < extent) pos.push_back(extent - size);
    return pos;
}

}  // namespace vesselseg
