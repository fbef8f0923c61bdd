#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mialab/rng.hpp"
#include "mialab/tensor.hpp"

namespace mialab {

// Write-temp-then-rename so concurrent readers never observe partial output.
inline void atomic_write(const std::string& path, const std::string& payload) {
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!os) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, target);
}

struct Bounds {
    std::vector<double> min, max;
};

// Labeled examples sharing one shape, plus per-feature empirical bounds.
// Values are quantized to f32 precision at synthesis/load time so the MIAD
// on-disk format round-trips bit-identically.
struct Dataset {
    std::vector<Tensor> xs;
    std::vector<std::uint16_t> ys;
    std::size_t classes = 0;
    std::vector<std::size_t> example_shape;
    Bounds bounds;

    std::size_t size() const { return xs.size(); }

    void validate() const {
        if (classes < 2) throw std::invalid_argument("Dataset: classes must be >= 2");
        if (xs.size() != ys.size()) throw std::invalid_argument("Dataset: xs/ys length mismatch");
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (xs[i].shape != example_shape)
                throw std::invalid_argument("Dataset: example " + std::to_string(i) + " shape mismatch");
            if (ys[i] >= classes)
                throw std::invalid_argument("Dataset: label " + std::to_string(ys[i]) + " out of range");
        }
        std::size_t d = shape_numel(example_shape);
        if (bounds.min.size() != d || bounds.max.size() != d)
            throw std::invalid_argument("Dataset: bounds length mismatch");
        for (const Tensor& x : xs)
            for (std::size_t f = 0; f < d; ++f)
                if (x[f] < bounds.min[f] || x[f] > bounds.max[f])
                    throw std::invalid_argument("Dataset: value outside stored bounds");
    }
};

// Tight per-feature min/max; every bound is attained by some example.
inline Bounds empirical_bounds(const Dataset& ds) {
    if (ds.xs.empty()) throw std::invalid_argument("empirical_bounds: empty dataset");
    std::size_t d = shape_numel(ds.example_shape);
    Bounds b;
    b.min.assign(d, std::numeric_limits<double>::infinity());
    b.max.assign(d, -std::numeric_limits<double>::infinity());
    for (const Tensor& x : ds.xs)
        for (std::size_t f = 0; f < d; ++f) {
            b.min[f] = std::min(b.min[f], x[f]);
            b.max[f] = std::max(b.max[f], x[f]);
        }
    return b;
}

// Seeded Gaussian class clusters: class means are standard normal per
// feature, examples are mean + spread * noise. Labels come out exactly
// balanced and examples are grouped by class (ids 0..per_class-1 are class
// 0, and so on).
inline Dataset synth_blobs(std::size_t classes, std::size_t per_class,
                           const std::vector<std::size_t>& shape, double spread, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("synth_blobs: classes must be >= 2");
    if (per_class < 10) throw std::invalid_argument("synth_blobs: per_class must be >= 10");
    if (!(spread > 0.0)) throw std::invalid_argument("synth_blobs: spread must be positive");
    std::size_t d = shape_numel(shape);
    if (d == 0) throw std::invalid_argument("synth_blobs: empty shape");

    Dataset ds;
    ds.classes = classes;
    ds.example_shape = shape;
    Rng mean_rng(derive_seed(seed, "blob-means"));
    std::vector<std::vector<double>> means(classes, std::vector<double>(d));
    for (auto& mu : means)
        for (double& v : mu) v = mean_rng.gaussian();

    for (std::size_t c = 0; c < classes; ++c) {
        Rng rng(derive_seed(seed, "blob-class", c));
        for (std::size_t k = 0; k < per_class; ++k) {
            Tensor x = Tensor::zeros(shape);
            for (std::size_t f = 0; f < d; ++f)
                x[f] = static_cast<double>(static_cast<float>(means[c][f] + spread * rng.gaussian()));
            ds.xs.push_back(std::move(x));
            ds.ys.push_back(static_cast<std::uint16_t>(c));
        }
    }
    ds.bounds = empirical_bounds(ds);
    return ds;
}

// Horizontal mirror of a [C x H x W] image; identity when apply is false.
inline Tensor augment_flip(const Tensor& x, bool apply) {
    if (x.shape.size() != 3)
        throw std::invalid_argument("augment_flip: expected [C x H x W] image, got " + shape_str(x.shape));
    if (!apply) return x;
    std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor y = x;
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t yi = 0; yi < h; ++yi)
            for (std::size_t xi = 0; xi < w; ++xi)
                y.data[(ci * h + yi) * w + xi] = x.data[(ci * h + yi) * w + (w - 1 - xi)];
    return y;
}

// ---- MIAD dataset file -------------------------------------------------
// little-endian: magic "MIAD", version u32=1, n u32, C u32, ndim u32,
// dims u32*ndim, labels u16*n, data f32*(n*prod(dims)) row-major per example.

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    // this project targets little-endian hosts; serialize native bytes
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error(std::string("dataset file truncated reading ") + what);
    return v;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ostringstream os(std::ios::binary);
    os.write("MIAD", 4);
    detail::write_le<std::uint32_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.classes));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.example_shape.size()));
    for (std::size_t dim : ds.example_shape) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim));
    for (std::uint16_t y : ds.ys) detail::write_le<std::uint16_t>(os, y);
    for (const Tensor& x : ds.xs)
        for (double v : x.data) detail::write_le<float>(os, static_cast<float>(v));
    atomic_write(path, os.str());
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MIAD", 4) != 0)
        throw std::runtime_error("'" + path + "' is not a MIAD dataset (bad magic)");
    std::uint32_t version = detail::read_le<std::uint32_t>(is, "version");
    if (version != 1) throw std::runtime_error("unsupported MIAD version " + std::to_string(version));
    std::uint32_t n = detail::read_le<std::uint32_t>(is, "count");
    std::uint32_t classes = detail::read_le<std::uint32_t>(is, "classes");
    std::uint32_t ndim = detail::read_le<std::uint32_t>(is, "ndim");
    if (ndim == 0 || ndim > 8) throw std::runtime_error("MIAD: implausible ndim " + std::to_string(ndim));

    Dataset ds;
    ds.classes = classes;
    for (std::uint32_t i = 0; i < ndim; ++i)
        ds.example_shape.push_back(detail::read_le<std::uint32_t>(is, "dims"));
    std::size_t d = shape_numel(ds.example_shape);

    ds.ys.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) ds.ys[i] = detail::read_le<std::uint16_t>(is, "labels");
    ds.xs.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Tensor x = Tensor::zeros(ds.example_shape);
        for (std::size_t f = 0; f < d; ++f) x[f] = static_cast<double>(detail::read_le<float>(is, "data"));
        ds.xs.push_back(std::move(x));
    }
    is.peek();
    if (!is.eof()) throw std::runtime_error("'" + path + "': trailing bytes after MIAD payload");
    ds.bounds = empirical_bounds(ds);
    ds.validate();
    return ds;
}

}  // namespace mialab
