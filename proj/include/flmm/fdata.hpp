#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace flmm {

// One scalar observation y of curve `curve` at argument t. g1 is the first
// grouping level (speaker-like), g2 the second (word-like, -1 when absent),
// rep the repetition index within the (g1, g2) cell.
struct ObsPoint {
    int curve = 0;
    int g1 = 0;
    int g2 = -1;
    int rep = 0;
    double t = 0.0;
    double y = 0.0;
};

struct GroupingDesign {
    enum class Kind { SingleFri, Crossed };
    Kind kind = Kind::Crossed;
    int levels_g1 = 0;
    int levels_g2 = 0;  // 0 for single-fRI designs
    int n_curves = 0;
};

// Irregularly sampled curves with crossed grouping structure. Points are
// stored sorted by (g1, g2, rep) with per-curve contiguous runs; covariates
// are constant within a curve.
class CurveSet {
public:
    std::vector<ObsPoint> points;
    Eigen::MatrixXd covariates;               // n_curves x P
    std::vector<std::string> covariate_names;
    double t_lo = 0.0, t_hi = 1.0;
    bool has_g2 = false;

    std::vector<std::string> curve_labels, g1_labels, g2_labels;
    std::vector<int> curve_g1, curve_g2, curve_rep;
    std::vector<std::size_t> curve_offset;    // n_curves + 1 entries into points

    int n_curves() const { return static_cast<int>(curve_offset.size()) - 1; }
    int n_g1() const { return static_cast<int>(g1_labels.size()); }
    int n_g2() const { return static_cast<int>(g2_labels.size()); }
    std::size_t n_points() const { return points.size(); }

    GroupingDesign design() const {
        GroupingDesign d;
        d.kind = has_g2 ? GroupingDesign::Kind::Crossed : GroupingDesign::Kind::SingleFri;
        d.levels_g1 = n_g1();
        d.levels_g2 = n_g2();
        d.n_curves = n_curves();
        return d;
    }

    int covariate_index(const std::string& name) const {
        for (size_t i = 0; i < covariate_names.size(); ++i)
            if (covariate_names[i] == name) return static_cast<int>(i);
        return -1;
    }

    // Fills offsets and label-free index fields from already sorted points.
    void finalize() {
        curve_offset.assign(1, 0);
        for (std::size_t i = 1; i < points.size(); ++i)
            if (points[i].curve != points[i - 1].curve) curve_offset.push_back(i);
        curve_offset.push_back(points.size());
        validate();
    }

    void validate() const {
        if (points.empty()) throw std::runtime_error("CurveSet: no observations");
        const int n = n_curves();
        if (covariates.rows() != 0 && covariates.rows() != n)
            throw std::runtime_error("CurveSet: covariate rows do not match curve count");
        if (static_cast<int>(curve_g1.size()) != n)
            throw std::runtime_error("CurveSet: curve index tables inconsistent");
        for (const auto& p : points) {
            if (!std::isfinite(p.y) || !std::isfinite(p.t))
                throw std::runtime_error("CurveSet: non-finite value");
            if (p.t < t_lo - 1e-12 || p.t > t_hi + 1e-12)
                throw std::runtime_error("CurveSet: observation outside domain");
            if (has_g2 && p.g2 < 0)
                throw std::runtime_error("CurveSet: crossed design requires g2 on every point");
        }
    }
};

struct CsvSchema {
    std::string curve_id = "curve_id";
    std::string g1 = "g1";
    std::string g2 = "g2";
    std::string rep = "rep";
    std::string t = "t";
    std::string y = "y";
    // Explicit covariate columns; when empty every unclaimed column is used.
    std::vector<std::string> covariates;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') { out.push_back(cur); cur.clear(); }
        else if (c != '\r') cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, std::size_t line_no, const std::string& col) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("row " + std::to_string(line_no) + ": cannot parse '" + s +
                                 "' in column " + col);
    }
}

}  // namespace detail

// Reads a comma-separated file with a header row. Identifiers may be
// arbitrary strings; dense 0-based indices are assigned in order of first
// appearance and the original labels kept for reporting. Curves are sorted
// by (g1, g2, rep).
inline CurveSet load_curveset(const std::string& path, const CsvSchema& schema = {},
                              std::optional<std::pair<double, double>> domain = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    const std::vector<std::string> header = detail::split_csv_line(line);

    auto col_of = [&](const std::string& name) {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int c_curve = col_of(schema.curve_id);
    const int c_g1 = col_of(schema.g1);
    const int c_g2 = col_of(schema.g2);
    const int c_rep = col_of(schema.rep);
    const int c_t = col_of(schema.t);
    const int c_y = col_of(schema.y);
    if (c_curve < 0 || c_g1 < 0 || c_t < 0 || c_y < 0)
        throw std::runtime_error(path + ": missing required column (need " + schema.curve_id +
                                 ", " + schema.g1 + ", " + schema.t + ", " + schema.y + ")");

    std::vector<int> cov_cols;
    std::vector<std::string> cov_names;
    if (!schema.covariates.empty()) {
        for (const auto& name : schema.covariates) {
            const int c = col_of(name);
            if (c < 0) throw std::runtime_error(path + ": missing covariate column " + name);
            cov_cols.push_back(c);
            cov_names.push_back(name);
        }
    } else {
        for (size_t i = 0; i < header.size(); ++i) {
            const int c = static_cast<int>(i);
            if (c == c_curve || c == c_g1 || c == c_g2 || c == c_rep || c == c_t || c == c_y)
                continue;
            cov_cols.push_back(c);
            cov_names.push_back(header[i]);
        }
    }

    struct RawRow {
        std::string curve, g1, g2;
        int rep = 0;
        bool has_rep = false;
        double t, y;
        std::vector<double> cov;
        std::size_t line_no;
    };
    std::vector<RawRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                     " has " + std::to_string(f.size()) + " fields, expected " +
                                     std::to_string(header.size()));
        RawRow r;
        r.line_no = line_no;
        r.curve = f[c_curve];
        r.g1 = f[c_g1];
        r.g2 = c_g2 >= 0 ? f[c_g2] : std::string();
        if (c_rep >= 0 && !f[c_rep].empty()) {
            r.rep = static_cast<int>(detail::parse_double(f[c_rep], line_no, schema.rep));
            r.has_rep = true;
        }
        r.t = detail::parse_double(f[c_t], line_no, schema.t);
        r.y = detail::parse_double(f[c_y], line_no, schema.y);
        if (!std::isfinite(r.t) || !std::isfinite(r.y))
            throw std::runtime_error(path + ": row " + std::to_string(line_no) +
                                     ": non-finite t or y");
        for (int c : cov_cols) r.cov.push_back(detail::parse_double(f[c], line_no, header[c]));
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data rows");

    CurveSet cs;
    cs.covariate_names = cov_names;
    cs.has_g2 = c_g2 >= 0;

    std::map<std::string, int> curve_ix, g1_ix, g2_ix;
    auto intern = [](std::map<std::string, int>& m, std::vector<std::string>& labels,
                     const std::string& s) {
        auto it = m.find(s);
        if (it != m.end()) return it->second;
        const int id = static_cast<int>(labels.size());
        m.emplace(s, id);
        labels.push_back(s);
        return id;
    };

    struct CurveMeta { int g1 = -1, g2 = -1, rep = 0; bool rep_known = false; std::vector<double> cov; };
    std::vector<CurveMeta> meta;
    std::vector<ObsPoint> pts;
    pts.reserve(rows.size());
    for (const auto& r : rows) {
        ObsPoint p;
        p.curve = intern(curve_ix, cs.curve_labels, r.curve);
        p.g1 = intern(g1_ix, cs.g1_labels, r.g1);
        p.g2 = cs.has_g2 ? intern(g2_ix, cs.g2_labels, r.g2) : -1;
        p.t = r.t;
        p.y = r.y;
        if (p.curve == static_cast<int>(meta.size())) {
            CurveMeta m;
            m.g1 = p.g1;
            m.g2 = p.g2;
            m.rep = r.rep;
            m.rep_known = r.has_rep;
            m.cov = r.cov;
            meta.push_back(std::move(m));
        } else {
            const CurveMeta& m = meta[p.curve];
            if (m.g1 != p.g1 || m.g2 != p.g2 || (r.has_rep && m.rep_known && m.rep != r.rep) ||
                m.cov != r.cov)
                throw std::runtime_error(path + ": row " + std::to_string(r.line_no) +
                                         ": curve " + r.curve +
                                         " maps to conflicting grouping or covariates");
        }
        p.rep = meta[p.curve].rep;
        pts.push_back(p);
    }

    // Repetition indices: keep declared ones, otherwise number curves of each
    // (g1, g2) cell in file order.
    std::map<std::pair<int, int>, int> cell_counter;
    for (size_t c = 0; c < meta.size(); ++c) {
        if (!meta[c].rep_known)
            meta[c].rep = cell_counter[{meta[c].g1, meta[c].g2}]++;
    }
    for (auto& p : pts) p.rep = meta[p.curve].rep;

    // Sort curves by (g1, g2, rep), then re-index densely in that order.
    std::vector<int> curve_order(meta.size());
    std::iota(curve_order.begin(), curve_order.end(), 0);
    std::stable_sort(curve_order.begin(), curve_order.end(), [&](int a, int b) {
        const auto& ma = meta[a];
        const auto& mb = meta[b];
        return std::tie(ma.g1, ma.g2, ma.rep) < std::tie(mb.g1, mb.g2, mb.rep);
    });
    std::vector<int> new_id(meta.size());
    for (size_t k = 0; k < curve_order.size(); ++k) new_id[curve_order[k]] = static_cast<int>(k);

    std::vector<std::string> sorted_labels(meta.size());
    cs.curve_g1.resize(meta.size());
    cs.curve_g2.resize(meta.size());
    cs.curve_rep.resize(meta.size());
    cs.covariates.resize(meta.size(), static_cast<int>(cov_names.size()));
    for (size_t old = 0; old < meta.size(); ++old) {
        const int nw = new_id[old];
        sorted_labels[nw] = cs.curve_labels[old];
        cs.curve_g1[nw] = meta[old].g1;
        cs.curve_g2[nw] = meta[old].g2;
        cs.curve_rep[nw] = meta[old].rep;
        for (size_t j = 0; j < meta[old].cov.size(); ++j)
            cs.covariates(nw, static_cast<int>(j)) = meta[old].cov[j];
    }
    cs.curve_labels = std::move(sorted_labels);
    for (auto& p : pts) {
        p.curve = new_id[p.curve];
        p.rep = cs.curve_rep[p.curve];
    }
    std::stable_sort(pts.begin(), pts.end(),
                     [](const ObsPoint& a, const ObsPoint& b) { return a.curve < b.curve; });
    cs.points = std::move(pts);

    double tmin = cs.points.front().t, tmax = cs.points.front().t;
    for (const auto& p : cs.points) {
        tmin = std::min(tmin, p.t);
        tmax = std::max(tmax, p.t);
    }
    if (domain) {
        cs.t_lo = domain->first;
        cs.t_hi = domain->second;
        if (tmin < cs.t_lo || tmax > cs.t_hi) {
            for (const auto& p : cs.points)
                if (p.t < cs.t_lo || p.t > cs.t_hi)
                    throw std::runtime_error(path + ": observation t=" + std::to_string(p.t) +
                                             " outside declared domain");
        }
    } else {
        cs.t_lo = tmin;
        cs.t_hi = tmax;
    }

    cs.finalize();
    return cs;
}

inline void save_curveset(const CurveSet& cs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "curve_id,g1";
    if (cs.has_g2) out << ",g2";
    out << ",rep,t,y";
    for (const auto& name : cs.covariate_names) out << "," << name;
    out << "\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& p : cs.points) {
        out << cs.curve_labels[p.curve] << "," << cs.g1_labels[p.g1];
        if (cs.has_g2) out << "," << cs.g2_labels[p.g2];
        out << "," << p.rep << "," << num(p.t) << "," << num(p.y);
        for (int j = 0; j < cs.covariates.cols(); ++j) out << "," << num(cs.covariates(p.curve, j));
        out << "\n";
    }
}

}  // namespace flmm
