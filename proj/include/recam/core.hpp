#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace recam {

// Machine-readable failure categories; the CLI maps them to exit codes.
enum class ErrorCode { configuration, contract, dependency, divergence, io };

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::configuration: return "CONFIG";
    case ErrorCode::contract: return "CONTRACT";
    case ErrorCode::dependency: return "DEPENDENCY";
    case ErrorCode::divergence: return "DIVERGENCE";
    case ErrorCode::io: return "IO";
    }
    return "UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCode::configuration, what) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(ErrorCode::contract, what) {}
};

struct DependencyError : Error {
    explicit DependencyError(const std::string& path)
        : Error(ErrorCode::dependency, "missing upstream artifact: " + path), path(path) {}
    std::string path;
};

struct DivergenceError : Error {
    DivergenceError(long step, const std::string& what)
        : Error(ErrorCode::divergence, what + " at step " + std::to_string(step)), step(step) {}
    long step;
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCode::io, what) {}
};

inline void require(bool cond, const char* what) {
    if (!cond) throw ContractError(what);
}

/// Planar C×H×W array. Images and feature blocks both use this layout so that
/// convolutions can run as one matrix product per layer.
template <typename T>
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    T& operator()(int c, int i, int j) { return data[(static_cast<std::size_t>(c) * height + i) * width + j]; }
    const T& operator()(int c, int i, int j) const {
        return data[(static_cast<std::size_t>(c) * height + i) * width + j];
    }

    int plane_size() const { return height * width; }
    std::span<T> plane(int c) { return {data.data() + static_cast<std::size_t>(c) * plane_size(), static_cast<std::size_t>(plane_size())}; }
    std::span<const T> plane(int c) const {
        return {data.data() + static_cast<std::size_t>(c) * plane_size(), static_cast<std::size_t>(plane_size())};
    }
    bool same_shape(const Tensor3& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    template <typename U>
    Tensor3<U> cast() const {
        Tensor3<U> out(channels, height, width);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

/// Row-major H×W grid.
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T(0)) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * width + j]; }
    const T& operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * width + j]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }

    template <typename U>
    Grid<U> cast() const {
        Grid<U> out(height, width);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

/// Row-major dense matrix used for the linear heads (rows = classes).
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c, T fill = T(0)) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const T> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    template <typename U>
    Matrix<U> cast() const {
        Matrix<U> out(rows, cols);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

// splitmix64; used to derive independent streams from (seed, index) pairs.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

/// Small portable PRNG (xoshiro256**). std::uniform_*_distribution output is
/// library-specific, so all sampling goes through these helpers instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = mix_seed(s);
            w = s;
        }
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi].
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next() % span);
    }

    double normal() {
        // Box-Muller, one sample per call.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            const auto j = static_cast<decltype(i)>(next() % static_cast<std::uint64_t>(i + 1));
            std::swap(first[i], first[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> state_{};
};

template <typename T>
bool all_finite(std::span<const T> values) {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

} // namespace recam
