#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cda {

// Project-wide scalar. All tolerances in the test suites assume 64-bit floats.
using Real = double;

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Mat = MatT<Real>;
using VecI = Eigen::VectorXi;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by the training loop when a loss goes non-finite. Carries the path of
// the most recent checkpoint so callers can report a restart point.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::string checkpoint)
        : Error(msg), checkpoint_path(std::move(checkpoint)) {}
    std::string checkpoint_path;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename S>
std::string shape_str(const MatT<S>& m) {
    return shape_str(m.rows(), m.cols());
}

// Locale-independent float formatting. precision <= 0 selects the shortest
// representation that round-trips.
inline std::string format_real(double v, int precision = -1) {
    char buf[64];
    std::to_chars_result res =
        precision > 0
            ? std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, precision)
            : std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// splitmix64; used to derive independent sub-seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix_seed(seed ^ mix_seed(stream));
}

// FNV-1a over a string; stable across runs, used for config hashes.
inline std::uint64_t fnv1a_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace cda
