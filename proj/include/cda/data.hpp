#pragma once

// Dataset construction: synthetic domain-shift generators (two moons, blobs),
// IDX image files for small real-digit subsets, CSV import/export, and the
// paired source/target batching the trainer consumes.
//
// Target labels, when known, ride along as hidden_Y for evaluation only.
// PairedBatch carries no target labels at all, so the training path cannot
// touch them even by accident.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cda/types.hpp"

namespace cda {

struct LabeledDataset {
    Mat X;  // [n x in_dim]
    VecI Y;  // [n], values in [0, num_classes)
    int num_classes = 0;
    std::string domain_tag;
};

struct UnlabeledDataset {
    Mat X;
    std::optional<VecI> hidden_Y;  // evaluation only; never enters a batch
};

struct PairedBatch {
    Mat x_s;
    VecI y_s;
    Mat x_t;
};

// The shuffled index chunks behind one epoch's batches. Exposed separately so
// the trainer can map batch rows back to dataset rows (e.g. to score pseudo-
// labels against held-out truth) without labels ever entering PairedBatch.
struct BatchPlan {
    std::vector<VecI> src_idx;
    std::vector<VecI> tgt_idx;
};

inline void validate_labeled(const LabeledDataset& ds, const std::string& who) {
    require(ds.X.allFinite(), who + ": non-finite features");
    require(ds.Y.size() == ds.X.rows(),
            who + ": " + std::to_string(ds.Y.size()) + " labels for " +
                std::to_string(ds.X.rows()) + " rows");
    require(ds.num_classes >= 1, who + ": num_classes must be >= 1");
    std::vector<bool> seen(static_cast<size_t>(ds.num_classes), false);
    for (Eigen::Index i = 0; i < ds.Y.size(); ++i) {
        require(ds.Y[i] >= 0 && ds.Y[i] < ds.num_classes,
                who + ": label " + std::to_string(ds.Y[i]) + " at row " + std::to_string(i) +
                    " outside [0, " + std::to_string(ds.num_classes) + ")");
        seen[static_cast<size_t>(ds.Y[i])] = true;
    }
    for (int c = 0; c < ds.num_classes; ++c)
        require(seen[static_cast<size_t>(c)],
                who + ": class " + std::to_string(c) + " has no samples");
}

inline UnlabeledDataset to_unlabeled(const LabeledDataset& ds, bool keep_hidden_labels) {
    UnlabeledDataset out;
    out.X = ds.X;
    if (keep_hidden_labels) out.hidden_Y = ds.Y;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

// Two interleaved half-circles with Gaussian noise, then rotated about the
// origin by rotation_deg and translated. Class 0 is the upper unit arc,
// class 1 the lower offset arc.
inline LabeledDataset gen_two_moons(Eigen::Index n, Real noise_sd, Real rotation_deg,
                                    Real translate_x, Real translate_y,
                                    std::uint64_t seed) {
    require(n >= 2, "gen_two_moons: n must be >= 2, got " + std::to_string(n));
    require(noise_sd >= 0, "gen_two_moons: noise_sd must be >= 0");
    Eigen::Index n_out = n / 2;
    Eigen::Index n_in = n - n_out;
    Mat x(n, 2);
    VecI y(n);
    auto arc_t = [](Eigen::Index i, Eigen::Index count) {
        return count > 1 ? M_PI * static_cast<Real>(i) / static_cast<Real>(count - 1)
                         : Real(0);
    };
    for (Eigen::Index i = 0; i < n_out; ++i) {
        Real t = arc_t(i, n_out);
        x(i, 0) = std::cos(t);
        x(i, 1) = std::sin(t);
        y[i] = 0;
    }
    for (Eigen::Index i = 0; i < n_in; ++i) {
        Real t = arc_t(i, n_in);
        x(n_out + i, 0) = Real(1) - std::cos(t);
        x(n_out + i, 1) = Real(0.5) - std::sin(t);
        y[n_out + i] = 1;
    }
    std::mt19937_64 rng(mix_seed(seed, 0x6d6f6f6e73ULL));  // "moons" stream
    if (noise_sd > 0) {
        std::normal_distribution<Real> noise(0.0, noise_sd);
        for (Eigen::Index i = 0; i < n; ++i) {
            x(i, 0) += noise(rng);
            x(i, 1) += noise(rng);
        }
    }
    Real rad = rotation_deg * M_PI / Real(180);
    Real c = std::cos(rad), s = std::sin(rad);
    for (Eigen::Index i = 0; i < n; ++i) {
        Real px = x(i, 0), py = x(i, 1);
        x(i, 0) = c * px - s * py + translate_x;
        x(i, 1) = s * px + c * py + translate_y;
    }
    LabeledDataset ds{std::move(x), std::move(y), 2, "two_moons"};
    validate_labeled(ds, "gen_two_moons");
    return ds;
}

struct BlobCenter {
    std::vector<Real> mean;
    Real sd = 1.0;
};

// Isotropic Gaussian clusters, one class per center, all samples shifted by
// shift_vector. n samples are split as evenly as possible across centers.
inline LabeledDataset gen_blobs(Eigen::Index n, const std::vector<BlobCenter>& centers,
                                const std::vector<Real>& shift_vector, std::uint64_t seed) {
    require(centers.size() >= 2, "gen_blobs: need at least 2 centers, got " +
                                     std::to_string(centers.size()));
    size_t dim = centers.front().mean.size();
    require(dim >= 1, "gen_blobs: empty center mean");
    for (const auto& c : centers)
        require(c.mean.size() == dim, "gen_blobs: centers have mixed dimensions");
    require(shift_vector.size() == dim, "gen_blobs: shift dimension " +
                                            std::to_string(shift_vector.size()) +
                                            " does not match centers " + std::to_string(dim));
    require(n >= static_cast<Eigen::Index>(centers.size()),
            "gen_blobs: need at least one sample per center");

    Mat x(n, static_cast<Eigen::Index>(dim));
    VecI y(n);
    std::mt19937_64 rng(mix_seed(seed, 0x626c6f6273ULL));  // "blobs" stream
    std::normal_distribution<Real> unit(0.0, 1.0);
    Eigen::Index row = 0;
    for (size_t c = 0; c < centers.size(); ++c) {
        Eigen::Index count = n / static_cast<Eigen::Index>(centers.size()) +
                             (static_cast<Eigen::Index>(c) <
                                      n % static_cast<Eigen::Index>(centers.size())
                                  ? 1
                                  : 0);
        for (Eigen::Index i = 0; i < count; ++i, ++row) {
            for (size_t j = 0; j < dim; ++j)
                x(row, static_cast<Eigen::Index>(j)) =
                    centers[c].mean[j] + centers[c].sd * unit(rng) + shift_vector[j];
            y[row] = static_cast<int>(c);
        }
    }
    LabeledDataset ds{std::move(x), std::move(y), static_cast<int>(centers.size()),
                      "blobs"};
    validate_labeled(ds, "gen_blobs");
    return ds;
}

// ---------------------------------------------------------------------------
// IDX image files (big-endian, as published)
// ---------------------------------------------------------------------------

namespace detail {

struct FileHandle {
    std::FILE* f = nullptr;
    explicit FileHandle(std::FILE* fp) : f(fp) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

inline std::uint32_t read_be32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    require(std::fread(b, 1, 4, f) == 4, "load_idx: truncated file " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::FILE* f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    require(std::fwrite(b, 1, 4, f) == 4, "save_idx: short write");
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads up to `limit` images (from the front) as rows of [0,1] features,
// flattened row-major.
inline Mat load_idx_images(const std::string& path, Eigen::Index limit) {
    require(limit != 0, "load_idx: empty dataset (limit=0)");
    require(limit > 0, "load_idx: limit must be positive");
    detail::FileHandle fh(std::fopen(path.c_str(), "rb"));
    require(fh.f != nullptr, "load_idx: cannot open " + path);
    std::uint32_t magic = detail::read_be32(fh.f, path);
    require(magic == kIdxImagesMagic, "load_idx: not an IDX file (bad magic in " + path + ")");
    Eigen::Index n = static_cast<Eigen::Index>(detail::read_be32(fh.f, path));
    Eigen::Index rows = static_cast<Eigen::Index>(detail::read_be32(fh.f, path));
    Eigen::Index cols = static_cast<Eigen::Index>(detail::read_be32(fh.f, path));
    require(n >= 1 && rows >= 1 && cols >= 1, "load_idx: degenerate dimensions in " + path);
    Eigen::Index take = std::min(limit, n);
    Eigen::Index pixels = rows * cols;
    std::vector<unsigned char> buf(static_cast<size_t>(take * pixels));
    require(std::fread(buf.data(), 1, buf.size(), fh.f) == buf.size(),
            "load_idx: truncated file " + path);
    Mat x(take, pixels);
    for (Eigen::Index i = 0; i < take; ++i)
        for (Eigen::Index j = 0; j < pixels; ++j)
            x(i, j) = static_cast<Real>(buf[static_cast<size_t>(i * pixels + j)]) / Real(255);
    return x;
}

inline VecI load_idx_labels(const std::string& path, Eigen::Index limit) {
    require(limit != 0, "load_idx: empty dataset (limit=0)");
    require(limit > 0, "load_idx: limit must be positive");
    detail::FileHandle fh(std::fopen(path.c_str(), "rb"));
    require(fh.f != nullptr, "load_idx: cannot open " + path);
    std::uint32_t magic = detail::read_be32(fh.f, path);
    require(magic == kIdxLabelsMagic, "load_idx: not an IDX file (bad magic in " + path + ")");
    Eigen::Index n = static_cast<Eigen::Index>(detail::read_be32(fh.f, path));
    require(n >= 1, "load_idx: degenerate dimensions in " + path);
    Eigen::Index take = std::min(limit, n);
    std::vector<unsigned char> buf(static_cast<size_t>(take));
    require(std::fread(buf.data(), 1, buf.size(), fh.f) == buf.size(),
            "load_idx: truncated file " + path);
    VecI y(take);
    for (Eigen::Index i = 0; i < take; ++i) y[i] = static_cast<int>(buf[static_cast<size_t>(i)]);
    return y;
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               Eigen::Index limit) {
    Mat x = load_idx_images(images_path, limit);
    VecI y = load_idx_labels(labels_path, limit);
    require(x.rows() == y.size(), "load_idx: " + std::to_string(x.rows()) + " images but " +
                                      std::to_string(y.size()) + " labels");
    LabeledDataset ds{std::move(x), std::move(y), 0, "idx"};
    ds.num_classes = ds.Y.maxCoeff() + 1;
    validate_labeled(ds, "load_idx");
    return ds;
}

inline UnlabeledDataset load_idx_unlabeled(const std::string& images_path,
                                           Eigen::Index limit) {
    UnlabeledDataset ds;
    ds.X = load_idx_images(images_path, limit);
    return ds;
}

// Writes features as one IDX image file (n x img_rows x img_cols, values
// quantized back to bytes) and labels as the matching IDX label file.
// Exact round-trip holds for features that came from bytes.
inline void save_idx(const Mat& x, const VecI& y, const std::string& images_path,
                     const std::string& labels_path, Eigen::Index img_rows,
                     Eigen::Index img_cols) {
    require(img_rows * img_cols == x.cols(),
            "save_idx: image shape " + shape_str(img_rows, img_cols) +
                " does not match feature width " + std::to_string(x.cols()));
    require(y.size() == x.rows(), "save_idx: label count mismatch");
    {
        detail::FileHandle fh(std::fopen(images_path.c_str(), "wb"));
        require(fh.f != nullptr, "save_idx: cannot open " + images_path);
        detail::write_be32(fh.f, kIdxImagesMagic);
        detail::write_be32(fh.f, static_cast<std::uint32_t>(x.rows()));
        detail::write_be32(fh.f, static_cast<std::uint32_t>(img_rows));
        detail::write_be32(fh.f, static_cast<std::uint32_t>(img_cols));
        std::vector<unsigned char> buf(static_cast<size_t>(x.size()));
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                Real v = x(i, j);
                require(v >= 0 && v <= 1, "save_idx: feature " + format_real(v) +
                                              " outside [0,1] at row " + std::to_string(i));
                buf[static_cast<size_t>(i * x.cols() + j)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        require(std::fwrite(buf.data(), 1, buf.size(), fh.f) == buf.size(),
                "save_idx: short write");
    }
    detail::FileHandle fh(std::fopen(labels_path.c_str(), "wb"));
    require(fh.f != nullptr, "save_idx: cannot open " + labels_path);
    detail::write_be32(fh.f, kIdxLabelsMagic);
    detail::write_be32(fh.f, static_cast<std::uint32_t>(y.size()));
    std::vector<unsigned char> buf(static_cast<size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        require(y[i] >= 0 && y[i] <= 255, "save_idx: label out of byte range");
        buf[static_cast<size_t>(i)] = static_cast<unsigned char>(y[i]);
    }
    require(std::fwrite(buf.data(), 1, buf.size(), fh.f) == buf.size(),
            "save_idx: short write");
}

// ---------------------------------------------------------------------------
// Domain-shift transforms for image data
// ---------------------------------------------------------------------------

// Expands grayscale features to three planar channels, blending each channel
// with a per-image uniform random tint at fixed 0.5 opacity. Labels are
// untouched; in_dim triples.
inline LabeledDataset colorize_shift(const LabeledDataset& ds, std::uint64_t seed) {
    require(ds.X.minCoeff() >= 0 && ds.X.maxCoeff() <= 1,
            "colorize_shift: non-grayscale input (features outside [0,1])");
    std::mt19937_64 rng(mix_seed(seed, 0x74696e74ULL));  // "tint" stream
    std::uniform_real_distribution<Real> tint(0.0, 1.0);
    Eigen::Index n = ds.X.rows(), d = ds.X.cols();
    Mat out(n, 3 * d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) {
            Real t = tint(rng);
            for (Eigen::Index j = 0; j < d; ++j)
                out(i, c * d + j) = Real(0.5) * ds.X(i, j) + Real(0.5) * t;
        }
    LabeledDataset shifted{std::move(out), ds.Y, ds.num_classes, ds.domain_tag + "_color"};
    validate_labeled(shifted, "colorize_shift");
    return shifted;
}

// Source-side counterpart of colorize_shift: repeats the grayscale plane
// three times so both domains share an input width.
inline LabeledDataset replicate_channels(const LabeledDataset& ds) {
    Eigen::Index n = ds.X.rows(), d = ds.X.cols();
    Mat out(n, 3 * d);
    for (int c = 0; c < 3; ++c) out.middleCols(c * d, d) = ds.X;
    return LabeledDataset{std::move(out), ds.Y, ds.num_classes, ds.domain_tag + "_rgb"};
}

// ---------------------------------------------------------------------------
// Paired batching
// ---------------------------------------------------------------------------

inline BatchPlan plan_batches(Eigen::Index n_s, Eigen::Index n_t, Eigen::Index batch_size,
                              std::uint64_t seed, int epoch) {
    require(batch_size >= 2, "batches: batch_size must be >= 2, got " +
                                 std::to_string(batch_size));
    Eigen::Index shorter = std::min(n_s, n_t);
    require(batch_size <= shorter, "batches: batch_size " + std::to_string(batch_size) +
                                       " exceeds dataset size " + std::to_string(shorter));
    auto shuffled = [&](Eigen::Index n, std::uint64_t stream) {
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(
            mix_seed(mix_seed(seed, stream), static_cast<std::uint64_t>(epoch)));
        std::shuffle(idx.begin(), idx.end(), rng);
        return idx;
    };
    std::vector<int> src = shuffled(n_s, 0x73726355ULL);
    std::vector<int> tgt = shuffled(n_t, 0x74677455ULL);
    Eigen::Index k = shorter / batch_size;
    BatchPlan plan;
    for (Eigen::Index b = 0; b < k; ++b) {
        VecI si(batch_size), ti(batch_size);
        for (Eigen::Index i = 0; i < batch_size; ++i) {
            si[i] = src[static_cast<size_t>(b * batch_size + i)];
            ti[i] = tgt[static_cast<size_t>(b * batch_size + i)];
        }
        plan.src_idx.push_back(std::move(si));
        plan.tgt_idx.push_back(std::move(ti));
    }
    return plan;
}

inline PairedBatch materialize_batch(const LabeledDataset& source,
                                     const UnlabeledDataset& target, const VecI& src_idx,
                                     const VecI& tgt_idx) {
    PairedBatch b;
    b.x_s = source.X(src_idx, Eigen::all);
    b.y_s = source.Y(src_idx);
    b.x_t = target.X(tgt_idx, Eigen::all);
    return b;
}

inline std::vector<PairedBatch> batches(const LabeledDataset& source,
                                        const UnlabeledDataset& target,
                                        Eigen::Index batch_size, std::uint64_t seed,
                                        int epoch) {
    BatchPlan plan = plan_batches(source.X.rows(), target.X.rows(), batch_size, seed, epoch);
    std::vector<PairedBatch> out;
    for (size_t b = 0; b < plan.src_idx.size(); ++b)
        out.push_back(materialize_batch(source, target, plan.src_idx[b], plan.tgt_idx[b]));
    return out;
}

// ---------------------------------------------------------------------------
// CSV import/export: header f0,...,fk,label; label -1 marks unlabeled rows
// ---------------------------------------------------------------------------

inline void save_csv(const Mat& x, const VecI* y, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_csv: cannot open " + path);
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << "f" << j << ",";
    out << "label\n";
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) out << format_real(x(i, j)) << ",";
        out << (y ? (*y)[i] : -1) << "\n";
    }
    require(out.good(), "save_csv: write failed for " + path);
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
    save_csv(ds.X, &ds.Y, path);
}

inline void save_csv(const UnlabeledDataset& ds, const std::string& path) {
    save_csv(ds.X, ds.hidden_Y ? &*ds.hidden_Y : nullptr, path);
}

struct CsvData {
    Mat X;
    VecI Y;          // -1 where unlabeled
    bool labeled = false;  // true iff every row has a label
};

inline CsvData load_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_csv: cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "load_csv: empty file " + path);
    Eigen::Index cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
    require(cols >= 1, "load_csv: header needs at least one feature column in " + path);
    std::vector<std::vector<Real>> rows;
    std::vector<int> labels;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<Real> row;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (Eigen::Index j = 0; j <= cols; ++j) {
            const char* stop = p;
            while (stop != end && *stop != ',') ++stop;
            if (j < cols) {
                Real v;
                auto res = std::from_chars(p, stop, v);
                require(res.ec == std::errc() && res.ptr == stop,
                        "load_csv: bad number in row " + std::to_string(rows.size()) +
                            " of " + path);
                row.push_back(v);
            } else {
                int lab;
                auto res = std::from_chars(p, stop, lab);
                require(res.ec == std::errc() && res.ptr == stop,
                        "load_csv: bad label in row " + std::to_string(rows.size()) +
                            " of " + path);
                labels.push_back(lab);
            }
            require(stop != end || j == cols,
                    "load_csv: short row " + std::to_string(rows.size()) + " in " + path);
            p = stop == end ? end : stop + 1;
        }
        rows.push_back(std::move(row));
    }
    require(!rows.empty(), "load_csv: no data rows in " + path);
    CsvData out;
    out.X = Mat(static_cast<Eigen::Index>(rows.size()), cols);
    out.Y = VecI(static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        for (Eigen::Index j = 0; j < cols; ++j)
            out.X(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<size_t>(j)];
        out.Y[static_cast<Eigen::Index>(i)] = labels[i];
    }
    out.labeled = (out.Y.array() >= 0).all();
    bool all_unlabeled = (out.Y.array() == -1).all();
    require(out.labeled || all_unlabeled,
            "load_csv: mixed labeled and unlabeled rows in " + path);
    return out;
}

inline LabeledDataset load_csv_labeled(const std::string& path, const std::string& tag) {
    CsvData raw = load_csv(path);
    require(raw.labeled, "load_csv: " + path + " has unlabeled rows");
    LabeledDataset ds{std::move(raw.X), std::move(raw.Y), 0, tag};
    ds.num_classes = ds.Y.maxCoeff() + 1;
    validate_labeled(ds, "load_csv");
    return ds;
}

// Unlabeled view of a CSV; labels present in the file are kept as hidden_Y.
inline UnlabeledDataset load_csv_unlabeled(const std::string& path) {
    CsvData raw = load_csv(path);
    UnlabeledDataset ds;
    ds.X = std::move(raw.X);
    if (raw.labeled) ds.hidden_Y = std::move(raw.Y);
    return ds;
}

}  // namespace cda
