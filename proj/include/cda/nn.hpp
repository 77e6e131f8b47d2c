#pragma once

// Dense building blocks and the three-network model: feature generator G,
// N-way classifier C, and binary domain discriminator D. C and D read the raw
// embedding; the contrastive losses read its row-normalized form.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cda/autodiff.hpp"
#include "cda/types.hpp"

namespace cda {

enum class Act : std::uint8_t { kNone = 0, kRelu = 1 };

template <typename S>
struct DenseLayerT {
    MatT<S> weight;  // [in x out]
    MatT<S> bias;    // [1 x out]
    Act act = Act::kNone;
    S dropout_rate = S(0);  // applied after the activation when training
};

template <typename S>
struct CdaModelT {
    std::vector<DenseLayerT<S>> generator;
    std::vector<DenseLayerT<S>> classifier;
    std::vector<DenseLayerT<S>> discriminator;
    Eigen::Index in_dim = 0;
    Eigen::Index embed_dim = 0;
    Eigen::Index num_classes = 0;

    // Canonical parameter order: G, C, D stacks; weight before bias per layer.
    // Optimizer state and checkpoints both key off this order.
    std::vector<MatT<S>*> params() {
        std::vector<MatT<S>*> out;
        for (auto* stack : {&generator, &classifier, &discriminator})
            for (auto& l : *stack) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        return out;
    }
    std::vector<const MatT<S>*> params() const {
        std::vector<const MatT<S>*> out;
        for (auto* stack : {&generator, &classifier, &discriminator})
            for (const auto& l : *stack) {
                out.push_back(&l.weight);
                out.push_back(&l.bias);
            }
        return out;
    }
};

namespace detail {

template <typename S>
DenseLayerT<S> init_layer(Eigen::Index in, Eigen::Index out, Act act, S dropout_rate,
                          std::mt19937_64& rng) {
    require(in > 0 && out > 0, "init_model: layer dims must be positive, got " +
                                   shape_str(in, out));
    // fan-in scaled uniform; relu layers get the sqrt(2) gain
    S gain = act == Act::kRelu ? std::sqrt(S(2)) : S(1);
    S bound = gain * std::sqrt(S(3) / static_cast<S>(in));
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                                static_cast<double>(bound));
    DenseLayerT<S> l;
    l.weight = MatT<S>(in, out);
    for (Eigen::Index j = 0; j < out; ++j)
        for (Eigen::Index i = 0; i < in; ++i) l.weight(i, j) = static_cast<S>(dist(rng));
    l.bias = MatT<S>::Zero(1, out);
    l.act = act;
    l.dropout_rate = dropout_rate;
    return l;
}

// Head stack [d -> hidden... -> out]: relu on hidden layers, linear output,
// dropout after the second-to-last dense layer.
template <typename S>
std::vector<DenseLayerT<S>> init_head(Eigen::Index d, const std::vector<Eigen::Index>& hidden,
                                      Eigen::Index out, S dropout_rate,
                                      std::mt19937_64& rng) {
    std::vector<Eigen::Index> dims;
    dims.push_back(d);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    std::vector<DenseLayerT<S>> stack;
    size_t n = dims.size() - 1;
    for (size_t i = 0; i < n; ++i) {
        Act act = (i + 1 < n) ? Act::kRelu : Act::kNone;
        S rate = (n >= 2 && i == n - 2) ? dropout_rate : S(0);
        stack.push_back(init_layer(dims[i], dims[i + 1], act, rate, rng));
    }
    return stack;
}

}  // namespace detail

// layer_dims gives the generator's input and hidden widths; the generator
// ends in a linear embed_dim output. Heads share the hidden shape
// [embed_dim -> head_hidden... -> out].
template <typename S>
CdaModelT<S> init_model(const std::vector<Eigen::Index>& layer_dims, Eigen::Index embed_dim,
                        Eigen::Index num_classes, std::uint64_t seed,
                        const std::vector<Eigen::Index>& head_hidden = {64, 32},
                        S dropout_rate = S(0.3)) {
    require(!layer_dims.empty(), "init_model: layer_dims must not be empty");
    for (Eigen::Index d : layer_dims)
        require(d > 0, "init_model: layer dims must be positive, got " + std::to_string(d));
    require(embed_dim > 0, "init_model: embed_dim must be positive");
    require(num_classes > 0, "init_model: num_classes must be positive");
    require(dropout_rate >= S(0) && dropout_rate <= S(0.5),
            "init_model: dropout_rate must be in [0, 0.5], got " +
                format_real(static_cast<double>(dropout_rate)));

    std::mt19937_64 rng(mix_seed(seed, 0x6d6f64656cULL));  // "model" stream
    CdaModelT<S> m;
    m.in_dim = layer_dims.front();
    m.embed_dim = embed_dim;
    m.num_classes = num_classes;
    for (size_t i = 0; i + 1 < layer_dims.size(); ++i)
        m.generator.push_back(
            detail::init_layer(layer_dims[i], layer_dims[i + 1], Act::kRelu, S(0), rng));
    m.generator.push_back(
        detail::init_layer(layer_dims.back(), embed_dim, Act::kNone, S(0), rng));
    m.classifier = detail::init_head(embed_dim, head_hidden, num_classes, dropout_rate, rng);
    m.discriminator = detail::init_head(embed_dim, head_hidden, Eigen::Index(1),
                                        dropout_rate, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Eval-mode forward passes (plain matrices, dropout off, no graph)
// ---------------------------------------------------------------------------

template <typename S>
MatT<S> stack_eval(const std::vector<DenseLayerT<S>>& stack, MatT<S> x) {
    for (const auto& l : stack) {
        require(x.cols() == l.weight.rows(), "forward: input " + shape_str(x) +
                                                 " does not match layer weight " +
                                                 shape_str(l.weight));
        x = (x * l.weight).rowwise() + l.bias.row(0);
        if (l.act == Act::kRelu) x = x.cwiseMax(S(0));
    }
    return x;
}

template <typename S>
MatT<S> forward_embed(const CdaModelT<S>& m, const MatT<S>& x) {
    require(x.allFinite(), "forward_embed: non-finite input " + shape_str(x));
    return stack_eval(m.generator, x);
}

template <typename S>
MatT<S> forward_classify(const CdaModelT<S>& m, const MatT<S>& z_raw) {
    return stack_eval(m.classifier, z_raw);
}

template <typename S>
MatT<S> forward_discriminate(const CdaModelT<S>& m, const MatT<S>& z) {
    return stack_eval(m.discriminator, z);
}

// Row-wise l2 normalization on plain matrices (tape op lives in autodiff).
template <typename S>
MatT<S> l2_normalize(const MatT<S>& z) {
    MatT<S> out(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        S n = z.row(r).norm();
        require(std::isfinite(n),
                "l2_normalize: row " + std::to_string(r) + " has non-finite norm");
        require(n > S(1e-12), "l2_normalize: row " + std::to_string(r) + " has near-zero norm");
        out.row(r) = z.row(r) / n;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Train-mode forward passes on a tape
// ---------------------------------------------------------------------------

// Model parameters bound onto one step's tape, in CdaModelT::params() order.
template <typename S>
struct BoundModelT {
    const CdaModelT<S>* model = nullptr;
    TapeT<S>* tape = nullptr;
    std::vector<VarT<S>> vars;
    size_t gen_begin = 0, cls_begin = 0, dis_begin = 0;  // offsets into vars
};

template <typename S>
BoundModelT<S> bind_model(TapeT<S>& tape, const CdaModelT<S>& m) {
    BoundModelT<S> bm;
    bm.model = &m;
    bm.tape = &tape;
    bm.gen_begin = 0;
    bm.cls_begin = 2 * m.generator.size();
    bm.dis_begin = bm.cls_begin + 2 * m.classifier.size();
    for (const MatT<S>* p : m.params()) bm.vars.push_back(tape.input(*p));
    return bm;
}

namespace detail {

template <typename S>
VarT<S> stack_forward(BoundModelT<S>& bm, const std::vector<DenseLayerT<S>>& stack,
                      size_t var_begin, VarT<S> x, bool train_mode, std::mt19937_64* rng) {
    for (size_t i = 0; i < stack.size(); ++i) {
        const auto& l = stack[i];
        require(x.cols() == l.weight.rows(), "forward: input " + shape_str(x.value()) +
                                                 " does not match layer weight " +
                                                 shape_str(l.weight));
        VarT<S> w = bm.vars[var_begin + 2 * i];
        VarT<S> b = bm.vars[var_begin + 2 * i + 1];
        x = add_rowvec(matmul(x, w), b);
        if (l.act == Act::kRelu) x = relu(x);
        if (train_mode && l.dropout_rate > S(0)) {
            require(rng != nullptr, "forward: dropout in train mode needs an rng");
            std::bernoulli_distribution keep(1.0 - static_cast<double>(l.dropout_rate));
            MatT<S> mask(x.rows(), x.cols());
            for (Eigen::Index cc = 0; cc < mask.cols(); ++cc)
                for (Eigen::Index rr = 0; rr < mask.rows(); ++rr)
                    mask(rr, cc) = keep(*rng) ? S(1) : S(0);
            x = dropout_apply(x, bm.tape->constant(std::move(mask)),
                              S(1) / (S(1) - l.dropout_rate));
        }
    }
    return x;
}

}  // namespace detail

template <typename S>
VarT<S> embed_on_tape(BoundModelT<S>& bm, VarT<S> x, bool train_mode = true,
                      std::mt19937_64* rng = nullptr) {
    return detail::stack_forward(bm, bm.model->generator, bm.gen_begin, x, train_mode, rng);
}

template <typename S>
VarT<S> classify_on_tape(BoundModelT<S>& bm, VarT<S> z_raw, bool train_mode = true,
                         std::mt19937_64* rng = nullptr) {
    return detail::stack_forward(bm, bm.model->classifier, bm.cls_begin, z_raw, train_mode,
                                 rng);
}

template <typename S>
VarT<S> discriminate_on_tape(BoundModelT<S>& bm, VarT<S> z, bool train_mode = true,
                             std::mt19937_64* rng = nullptr) {
    return detail::stack_forward(bm, bm.model->discriminator, bm.dis_begin, z, train_mode,
                                 rng);
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary container, bit-exact round trip
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCkptMagic[8] = {'C', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

template <typename T>
void write_raw(std::FILE* f, const T& v) {
    require(std::fwrite(&v, sizeof(T), 1, f) == 1, "checkpoint: short write");
}

template <typename T>
T read_raw(std::FILE* f, const std::string& path) {
    T v;
    require(std::fread(&v, sizeof(T), 1, f) == 1,
            "checkpoint: truncated file " + path);
    return v;
}

template <typename S>
void write_stack(std::FILE* f, const std::vector<DenseLayerT<S>>& stack) {
    write_raw(f, static_cast<std::uint32_t>(stack.size()));
    for (const auto& l : stack) {
        write_raw(f, static_cast<std::uint64_t>(l.weight.rows()));
        write_raw(f, static_cast<std::uint64_t>(l.weight.cols()));
        write_raw(f, static_cast<std::uint8_t>(l.act));
        write_raw(f, static_cast<double>(l.dropout_rate));
        size_t wn = static_cast<size_t>(l.weight.size());
        size_t bn = static_cast<size_t>(l.bias.size());
        require(std::fwrite(l.weight.data(), sizeof(S), wn, f) == wn,
                "checkpoint: short write");
        require(std::fwrite(l.bias.data(), sizeof(S), bn, f) == bn,
                "checkpoint: short write");
    }
}

template <typename S>
std::vector<DenseLayerT<S>> read_stack(std::FILE* f, const std::string& path) {
    auto n = read_raw<std::uint32_t>(f, path);
    require(n <= 64, "checkpoint: implausible layer count in " + path);
    std::vector<DenseLayerT<S>> stack;
    for (std::uint32_t i = 0; i < n; ++i) {
        auto rows = static_cast<Eigen::Index>(read_raw<std::uint64_t>(f, path));
        auto cols = static_cast<Eigen::Index>(read_raw<std::uint64_t>(f, path));
        require(rows > 0 && cols > 0 && rows < (1 << 20) && cols < (1 << 20),
                "checkpoint: implausible layer shape in " + path);
        DenseLayerT<S> l;
        l.act = static_cast<Act>(read_raw<std::uint8_t>(f, path));
        require(l.act == Act::kNone || l.act == Act::kRelu,
                "checkpoint: unknown activation code in " + path);
        l.dropout_rate = static_cast<S>(read_raw<double>(f, path));
        l.weight = MatT<S>(rows, cols);
        l.bias = MatT<S>(1, cols);
        size_t wn = static_cast<size_t>(l.weight.size());
        size_t bn = static_cast<size_t>(l.bias.size());
        require(std::fread(l.weight.data(), sizeof(S), wn, f) == wn,
                "checkpoint: truncated file " + path);
        require(std::fread(l.bias.data(), sizeof(S), bn, f) == bn,
                "checkpoint: truncated file " + path);
        stack.push_back(std::move(l));
    }
    return stack;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const CdaModelT<S>& m, const std::string& path,
                     std::uint64_t config_hash) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "wb"));
    require(f != nullptr, "checkpoint: cannot open for writing: " + path);
    require(std::fwrite(detail::kCkptMagic, 1, 8, f.get()) == 8, "checkpoint: short write");
    detail::write_raw(f.get(), config_hash);
    detail::write_raw(f.get(), static_cast<std::uint64_t>(m.in_dim));
    detail::write_raw(f.get(), static_cast<std::uint64_t>(m.embed_dim));
    detail::write_raw(f.get(), static_cast<std::uint64_t>(m.num_classes));
    detail::write_stack(f.get(), m.generator);
    detail::write_stack(f.get(), m.classifier);
    detail::write_stack(f.get(), m.discriminator);
}

template <typename S>
CdaModelT<S> load_checkpoint(const std::string& path, std::uint64_t* config_hash = nullptr) {
    std::unique_ptr<std::FILE, detail::FileCloser> f(std::fopen(path.c_str(), "rb"));
    require(f != nullptr, "checkpoint: cannot open: " + path);
    char magic[8];
    require(std::fread(magic, 1, 8, f.get()) == 8, "checkpoint: truncated file " + path);
    require(std::memcmp(magic, detail::kCkptMagic, 8) == 0,
            "checkpoint: bad magic in " + path);
    std::uint64_t hash = detail::read_raw<std::uint64_t>(f.get(), path);
    if (config_hash) *config_hash = hash;
    CdaModelT<S> m;
    m.in_dim = static_cast<Eigen::Index>(detail::read_raw<std::uint64_t>(f.get(), path));
    m.embed_dim = static_cast<Eigen::Index>(detail::read_raw<std::uint64_t>(f.get(), path));
    m.num_classes =
        static_cast<Eigen::Index>(detail::read_raw<std::uint64_t>(f.get(), path));
    m.generator = detail::read_stack<S>(f.get(), path);
    m.classifier = detail::read_stack<S>(f.get(), path);
    m.discriminator = detail::read_stack<S>(f.get(), path);
    return m;
}

using DenseLayer = DenseLayerT<Real>;
using CdaModel = CdaModelT<Real>;
using BoundModel = BoundModelT<Real>;

}  // namespace cda
