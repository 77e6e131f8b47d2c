#pragma once

// Run instrumentation: per-epoch history CSV (flushed incrementally so a
// killed run keeps its partial output), PCA projection to 2-D, and SVG
// scatter rendering of embeddings colored by class and shaped by domain.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "cda/schedule.hpp"
#include "cda/types.hpp"

namespace cda {

struct EpochRecord {
    int epoch = 0;
    Stage stage = Stage::kSourceOnly;
    Real lambda = 0;
    Real beta = 0;
    Real l_ce = 0;
    Real l_supcl = 0;
    Real l_adv = 0;
    Real l_crosscl = 0;
    Real src_acc = 0;
    Real tgt_acc = 0;
    Real pseudo_acc = 0;
    Real lr = 0;
    int crosscl_skips = 0;  // iterations whose batch had no cross-domain anchors
};

inline constexpr const char* kHistoryHeader =
    "epoch,stage,lambda,beta,l_ce,l_supcl,l_adv,l_crosscl,src_acc,tgt_acc,pseudo_acc,lr";

namespace detail {

inline std::string history_row(const EpochRecord& r) {
    require(std::isfinite(r.l_ce) && std::isfinite(r.l_supcl) && std::isfinite(r.l_adv) &&
                std::isfinite(r.l_crosscl),
            "history: non-finite loss in epoch " + std::to_string(r.epoch));
    auto acc_ok = [](Real a) { return a >= 0 && a <= 1; };
    require(acc_ok(r.src_acc) && acc_ok(r.tgt_acc) && acc_ok(r.pseudo_acc),
            "history: accuracy outside [0,1] in epoch " + std::to_string(r.epoch));
    std::string row = std::to_string(r.epoch);
    row += ",";
    row += stage_name(r.stage);
    for (Real v : {r.lambda, r.beta, r.l_ce, r.l_supcl, r.l_adv, r.l_crosscl, r.src_acc,
                   r.tgt_acc, r.pseudo_acc, r.lr}) {
        row += ",";
        row += format_real(v, 6);
    }
    return row;
}

}  // namespace detail

// Streams history rows as they arrive; header goes out on construction.
class HistoryWriter {
   public:
    explicit HistoryWriter(const std::string& path) : out_(path) {
        require(out_.good(), "history: cannot open " + path);
        out_ << kHistoryHeader << "\n";
        out_.flush();
        require(out_.good(), "history: write failed for " + path);
    }

    void append(const EpochRecord& r) {
        out_ << detail::history_row(r) << "\n";
        out_.flush();
        require(out_.good(), "history: write failed");
    }

   private:
    std::ofstream out_;
};

inline void export_history(const std::vector<EpochRecord>& history, const std::string& path) {
    require(!history.empty(), "export_history: empty history");
    HistoryWriter w(path);
    for (const EpochRecord& r : history) w.append(r);
}

// Centers columns and projects onto the top-k eigenvectors of the sample
// covariance. Eigenvector sign is fixed so the first component with magnitude
// above 1e-12 is positive, making the projection unique.
inline Mat pca_project(const Mat& embeddings, Eigen::Index k = 2) {
    Eigen::Index n = embeddings.rows(), d = embeddings.cols();
    require(k >= 1, "pca: k must be >= 1");
    require(n > k, "pca: need more than " + std::to_string(k) + " rows, got " +
                       std::to_string(n));
    require(d >= k, "pca: dimension " + std::to_string(d) + " below k=" + std::to_string(k));
    require(embeddings.allFinite(), "pca: non-finite input");
    Mat centered = embeddings.rowwise() - embeddings.colwise().mean();
    require(centered.cwiseAbs().maxCoeff() > 1e-12,
            "pca: degenerate input (all rows identical)");
    Mat cov = centered.transpose() * centered / Real(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
    require(eig.info() == Eigen::Success, "pca: eigendecomposition failed");
    // eigenvalues ascend; take the last k columns in descending order
    Mat basis(d, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - j);
        for (Eigen::Index i = 0; i < d; ++i)
            if (std::abs(v[i]) > 1e-12) {
                if (v[i] < 0) v = -v;
                break;
            }
        basis.col(j) = v;
    }
    return centered * basis;
}

namespace detail {

inline const std::vector<std::string>& class_palette() {
    static const std::vector<std::string> colors = {
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
        "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors;
}

inline std::string svg_num(Real v) { return format_real(v, 6); }

}  // namespace detail

// Standalone SVG scatter: one marker per row, color by label (-1 renders
// gray), marker shape by domain tag in order of first appearance (circle,
// then square). Byte-identical output for identical input.
inline void render_scatter(const Mat& coords, const VecI& labels,
                           const std::vector<std::string>& domain_tags,
                           const std::string& path) {
    Eigen::Index n = coords.rows();
    require(coords.cols() == 2 || n == 0, "render_scatter: coords must be [n x 2], got " +
                                              shape_str(coords));
    require(labels.size() == n, "render_scatter: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " points");
    require(static_cast<Eigen::Index>(domain_tags.size()) == n,
            "render_scatter: " + std::to_string(domain_tags.size()) + " domain tags for " +
                std::to_string(n) + " points");
    require(n == 0 || coords.allFinite(), "render_scatter: non-finite coordinates");

    std::vector<std::string> tags;  // distinct, in first-appearance order
    for (const auto& t : domain_tags)
        if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
    require(tags.size() <= 2, "render_scatter: at most 2 domains supported, got " +
                                  std::to_string(tags.size()));
    std::vector<int> classes;
    for (Eigen::Index i = 0; i < n; ++i) {
        require(labels[i] >= -1, "render_scatter: label below -1 at row " + std::to_string(i));
        if (labels[i] >= 0 && std::find(classes.begin(), classes.end(), labels[i]) ==
                                  classes.end())
            classes.push_back(labels[i]);
    }
    std::sort(classes.begin(), classes.end());

    const Real width = 640, height = 480, margin = 40, legend_w = 130;
    Real x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (n > 0) {
        x0 = coords.col(0).minCoeff();
        x1 = coords.col(0).maxCoeff();
        y0 = coords.col(1).minCoeff();
        y1 = coords.col(1).maxCoeff();
        if (x1 - x0 < 1e-12) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if (y1 - y0 < 1e-12) {
            y0 -= 0.5;
            y1 += 0.5;
        }
    }
    Real plot_w = width - 2 * margin - legend_w, plot_h = height - 2 * margin;
    auto px = [&](Real x) { return margin + (x - x0) / (x1 - x0) * plot_w; };
    auto py = [&](Real y) { return margin + (1 - (y - y0) / (y1 - y0)) * plot_h; };
    auto color_of = [&](int label) -> std::string {
        if (label < 0) return "#999999";
        const auto& pal = detail::class_palette();
        return pal[static_cast<size_t>(label) % pal.size()];
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"640\" "
           "height=\"480\" viewBox=\"0 0 640 480\">\n";
    svg += "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"#ffffff\"/>\n";
    svg += "<rect x=\"" + detail::svg_num(margin) + "\" y=\"" + detail::svg_num(margin) +
           "\" width=\"" + detail::svg_num(plot_w) + "\" height=\"" + detail::svg_num(plot_h) +
           "\" fill=\"none\" stroke=\"#333333\"/>\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        size_t shape = 0;
        for (size_t t = 0; t < tags.size(); ++t)
            if (tags[t] == domain_tags[static_cast<size_t>(i)]) shape = t;
        std::string fill = color_of(labels[i]);
        Real cx = px(coords(i, 0)), cy = py(coords(i, 1));
        if (shape == 0)
            svg += "<circle class=\"pt\" cx=\"" + detail::svg_num(cx) + "\" cy=\"" +
                   detail::svg_num(cy) + "\" r=\"3\" fill=\"" + fill +
                   "\" fill-opacity=\"0.75\"/>\n";
        else
            svg += "<rect class=\"pt\" x=\"" + detail::svg_num(cx - 2.7) + "\" y=\"" +
                   detail::svg_num(cy - 2.7) + "\" width=\"5.4\" height=\"5.4\" fill=\"" +
                   fill + "\" fill-opacity=\"0.75\"/>\n";
    }
    // legend: domain shapes, then class colors
    Real lx = width - legend_w - margin / 2, ly = margin + 10;
    for (size_t t = 0; t < tags.size(); ++t) {
        if (t == 0)
            svg += "<circle cx=\"" + detail::svg_num(lx) + "\" cy=\"" + detail::svg_num(ly) +
                   "\" r=\"4\" fill=\"#555555\"/>\n";
        else
            svg += "<rect x=\"" + detail::svg_num(lx - 4) + "\" y=\"" +
                   detail::svg_num(ly - 4) + "\" width=\"8\" height=\"8\" fill=\"#555555\"/>\n";
        svg += "<text x=\"" + detail::svg_num(lx + 10) + "\" y=\"" + detail::svg_num(ly + 4) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + tags[t] + "</text>\n";
        ly += 18;
    }
    for (int c : classes) {
        svg += "<rect x=\"" + detail::svg_num(lx - 4) + "\" y=\"" + detail::svg_num(ly - 4) +
               "\" width=\"8\" height=\"8\" fill=\"" + color_of(c) + "\"/>\n";
        svg += "<text x=\"" + detail::svg_num(lx + 10) + "\" y=\"" + detail::svg_num(ly + 4) +
               "\" font-family=\"sans-serif\" font-size=\"12\">class " + std::to_string(c) +
               "</text>\n";
        ly += 18;
    }
    svg += "</svg>\n";

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "render_scatter: cannot open " + path);
    out.write(svg.data(), static_cast<std::streamsize>(svg.size()));
    require(out.good(), "render_scatter: write failed for " + path);
}

struct EmbeddingDump {
    std::vector<std::string> domains;
    VecI labels;  // -1 where only pseudo/unknown
    Mat embeddings;
    int epoch = 0;
    std::uint64_t config_hash = 0;
};

// CSV schema: domain,label,e0,...,ed
inline void export_embeddings(const EmbeddingDump& dump, const std::string& path) {
    Eigen::Index n = dump.embeddings.rows();
    require(dump.labels.size() == n && static_cast<Eigen::Index>(dump.domains.size()) == n,
            "export_embeddings: row count mismatch");
    require(n == 0 || dump.embeddings.allFinite(), "export_embeddings: non-finite embedding");
    std::ofstream out(path);
    require(out.good(), "export_embeddings: cannot open " + path);
    out << "domain,label";
    for (Eigen::Index j = 0; j < dump.embeddings.cols(); ++j) out << ",e" << j;
    out << "\n";
    for (Eigen::Index i = 0; i < n; ++i) {
        require(dump.labels[i] >= -1, "export_embeddings: label below -1");
        out << dump.domains[static_cast<size_t>(i)] << "," << dump.labels[i];
        for (Eigen::Index j = 0; j < dump.embeddings.cols(); ++j)
            out << "," << format_real(dump.embeddings(i, j));
        out << "\n";
    }
    require(out.good(), "export_embeddings: write failed for " + path);
}

}  // namespace cda
