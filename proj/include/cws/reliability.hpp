#pragma once

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cws/image.hpp"

namespace cws {

// n subjects x k raters, ordinal ratings 1..5, missing where a rater declined.
struct RatingsMatrix {
    std::vector<std::string> subjects;
    std::vector<std::string> raters;
    std::vector<std::vector<std::optional<int>>> cells;  // [subject][rater]

    int n() const { return static_cast<int>(subjects.size()); }
    int k() const { return static_cast<int>(raters.size()); }
};

// CSV schema: image_id,rater_id,rating with rating in 1..5 or empty.
inline RatingsMatrix load_ratings_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open ratings csv: " + path);
    RatingsMatrix r;
    std::map<std::string, size_t> subj_idx, rater_idx;
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string img, rater, rating;
        std::getline(ss, img, ',');
        std::getline(ss, rater, ',');
        std::getline(ss, rating);
        if (first && img == "image_id") {
            first = false;
            continue;
        }
        first = false;
        if (img.empty() || rater.empty())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed ratings row");
        if (!subj_idx.count(img)) {
            subj_idx[img] = r.subjects.size();
            r.subjects.push_back(img);
        }
        if (!rater_idx.count(rater)) {
            rater_idx[rater] = r.raters.size();
            r.raters.push_back(rater);
        }
        r.cells.resize(r.subjects.size());
        for (auto& row : r.cells) row.resize(r.raters.size());
        if (!rating.empty()) {
            int v = std::stoi(rating);
            if (v < 1 || v > 9)
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unparseable rating");
            // 1..5 is the star scale; out-of-band ordinals are tolerated for
            // reliability analysis but flagged
            if (v > 5)
                std::cerr << "warning: " << path << ":" << lineno << ": rating " << v
                          << " outside the 1-5 star range\n";
            r.cells[subj_idx[img]][rater_idx[rater]] = v;
        }
    }
    for (auto& row : r.cells) row.resize(r.raters.size());
    return r;
}

// Listwise deletion: drop subjects any rater declined to rate.
inline RatingsMatrix complete_cases(const RatingsMatrix& r) {
    RatingsMatrix out;
    out.raters = r.raters;
    for (int i = 0; i < r.n(); ++i) {
        bool complete = true;
        for (int j = 0; j < r.k(); ++j)
            if (!r.cells[static_cast<size_t>(i)][static_cast<size_t>(j)]) complete = false;
        if (complete) {
            out.subjects.push_back(r.subjects[static_cast<size_t>(i)]);
            out.cells.push_back(r.cells[static_cast<size_t>(i)]);
        }
    }
    return out;
}

struct AnovaTable {
    double ms_r = 0.0;  // rows (subjects)
    double ms_c = 0.0;  // columns (raters)
    double ms_e = 0.0;  // residual
    int n = 0;
    int k = 0;
};

// Two-way random-effects ANOVA decomposition of a complete ratings matrix.
inline AnovaTable anova_two_way(const RatingsMatrix& complete) {
    int n = complete.n(), k = complete.k();
    if (n < 2 || k < 2)
        throw std::invalid_argument("anova_two_way: need at least 2 subjects and 2 raters after deletion");
    double grand = 0.0;
    std::vector<double> row_mean(static_cast<size_t>(n), 0.0), col_mean(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            const auto& cell = complete.cells[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (!cell) throw std::invalid_argument("anova_two_way: matrix has missing cells");
            double v = *cell;
            grand += v;
            row_mean[static_cast<size_t>(i)] += v;
            col_mean[static_cast<size_t>(j)] += v;
        }
    grand /= n * k;
    for (auto& v : row_mean) v /= k;
    for (auto& v : col_mean) v /= n;

    double ss_rows = 0, ss_cols = 0, ss_total = 0;
    for (int i = 0; i < n; ++i) ss_rows += (row_mean[static_cast<size_t>(i)] - grand) * (row_mean[static_cast<size_t>(i)] - grand);
    ss_rows *= k;
    for (int j = 0; j < k; ++j) ss_cols += (col_mean[static_cast<size_t>(j)] - grand) * (col_mean[static_cast<size_t>(j)] - grand);
    ss_cols *= n;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            double v = *complete.cells[static_cast<size_t>(i)][static_cast<size_t>(j)];
            ss_total += (v - grand) * (v - grand);
        }
    double ss_err = ss_total - ss_rows - ss_cols;

    AnovaTable t;
    t.n = n;
    t.k = k;
    t.ms_r = ss_rows / (n - 1);
    t.ms_c = ss_cols / (k - 1);
    t.ms_e = std::max(0.0, ss_err) / ((n - 1) * (k - 1));
    if (t.ms_r <= 0.0)
        throw std::invalid_argument("anova_two_way: zero subject variance, ICC is undefined");
    return t;
}

enum class IccBand { poor, moderate, excellent };

inline std::string band_name(IccBand b) {
    switch (b) {
        case IccBand::poor: return "poor";
        case IccBand::moderate: return "moderate";
        case IccBand::excellent: return "excellent";
    }
    return "?";
}

// Bands: 0-0.39 poor, 0.4-0.74 moderate, 0.75-1 excellent. Negative values
// (possible for ICC) fall into the poor band.
inline IccBand interpret_icc(double v) {
    if (v < -1.0 || v > 1.0) throw std::invalid_argument("interpret_icc: value outside [-1,1]");
    if (v < 0.4) return IccBand::poor;
    if (v < 0.75) return IccBand::moderate;
    return IccBand::excellent;
}

struct ReliabilityResult {
    double icc = 0.0;
    IccBand band = IccBand::poor;
    double lo95 = 0.0;
    double hi95 = 0.0;
};

namespace detail {

inline double f_upper_quantile(double p, double df1, double df2) {
    boost::math::fisher_f dist(df1, df2);
    return boost::math::quantile(dist, p);
}

inline double clamp_icc(double v) { return std::clamp(v, -1.0, 1.0); }

// Spearman-Brown step from single-measure to average-measure ICC.
inline double average_form(double single, int k) {
    return single * k / (1.0 + (k - 1) * single);
}

}  // namespace detail

// Average-measures consistency: ICC = (MS_R - MS_E) / MS_R. The 95% CI is
// the standard F-bound construction for the two-way model.
inline ReliabilityResult icc_consistency(const AnovaTable& t, double alpha = 0.05) {
    if (t.ms_r <= 0.0) throw std::invalid_argument("icc_consistency: MS_R must be positive");
    ReliabilityResult r;
    r.icc = (t.ms_r - t.ms_e) / t.ms_r;
    r.band = interpret_icc(detail::clamp_icc(r.icc));
    if (t.ms_e <= 0.0) {
        r.lo95 = r.hi95 = r.icc;
        return r;
    }
    double df1 = t.n - 1, df2 = static_cast<double>(t.n - 1) * (t.k - 1);
    double fobs = t.ms_r / t.ms_e;
    double fl = fobs / detail::f_upper_quantile(1.0 - alpha / 2.0, df1, df2);
    double fu = fobs * detail::f_upper_quantile(1.0 - alpha / 2.0, df2, df1);
    r.lo95 = detail::clamp_icc(1.0 - 1.0 / fl);
    r.hi95 = detail::clamp_icc(1.0 - 1.0 / fu);
    return r;
}

// Average-measures agreement: ICC = (MS_R - MS_E)/(MS_R + (MS_C - MS_E)/n).
// CI bounds follow the single-measure F construction with a Satterthwaite
// degrees-of-freedom estimate, then the Spearman-Brown step up to the
// average-measures form.
inline ReliabilityResult icc_agreement(const AnovaTable& t, double alpha = 0.05) {
    if (t.ms_r <= 0.0) throw std::invalid_argument("icc_agreement: MS_R must be positive");
    ReliabilityResult r;
    r.icc = (t.ms_r - t.ms_e) / (t.ms_r + (t.ms_c - t.ms_e) / t.n);
    r.band = interpret_icc(detail::clamp_icc(r.icc));

    int n = t.n, k = t.k;
    double single = (t.ms_r - t.ms_e) /
                    (t.ms_r + (k - 1) * t.ms_e + (static_cast<double>(k) / n) * (t.ms_c - t.ms_e));
    if (t.ms_e <= 0.0 && t.ms_c <= 0.0) {
        r.lo95 = r.hi95 = r.icc;
        return r;
    }
    double denom_guard = 1.0 - single;
    if (std::abs(denom_guard) < 1e-12) {
        r.lo95 = r.hi95 = r.icc;
        return r;
    }
    double a = k * single / (n * denom_guard);
    double b = 1.0 + k * single * (n - 1) / (n * denom_guard);
    double num = a * t.ms_c + b * t.ms_e;
    double den = (a * t.ms_c) * (a * t.ms_c) / (k - 1) +
                 (b * t.ms_e) * (b * t.ms_e) / (static_cast<double>(n - 1) * (k - 1));
    if (den <= 0.0) {
        r.lo95 = r.hi95 = r.icc;
        return r;
    }
    double v = num * num / den;
    double fl = detail::f_upper_quantile(1.0 - alpha / 2.0, n - 1, v);
    double fu = detail::f_upper_quantile(1.0 - alpha / 2.0, v, n - 1);
    double lo1 = n * (t.ms_r - fl * t.ms_e) /
                 (fl * (k * t.ms_c + (static_cast<double>(k) * n - k - n) * t.ms_e) + n * t.ms_r);
    double hi1 = n * (fu * t.ms_r - t.ms_e) /
                 (k * t.ms_c + (static_cast<double>(k) * n - k - n) * t.ms_e + n * fu * t.ms_r);
    r.lo95 = detail::clamp_icc(detail::average_form(lo1, k));
    r.hi95 = detail::clamp_icc(detail::average_form(hi1, k));
    return r;
}

struct PairAgreement {
    std::string rater_a, rater_b;
    int exact = 0;
    int off_by_one = 0;
    int larger = 0;
    int rated = 0;  // subjects both raters scored
};

struct DistributionReport {
    std::vector<std::string> raters;
    std::vector<double> band_percent;   // per rater, % of ratings within the band
    std::vector<int> band_count;
    std::vector<int> rated_count;
    std::vector<PairAgreement> pairs;
};

// Percentage of ratings within the given star band per rater, plus exact and
// off-by-one agreement counts for every rater pair.
inline DistributionReport rating_distribution(const RatingsMatrix& r, const std::set<int>& band) {
    if (r.n() == 0 || r.k() == 0) throw std::invalid_argument("rating_distribution: empty matrix");
    DistributionReport rep;
    rep.raters = r.raters;
    for (int j = 0; j < r.k(); ++j) {
        int in_band = 0, rated = 0;
        for (int i = 0; i < r.n(); ++i) {
            const auto& c = r.cells[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (!c) continue;
            ++rated;
            if (band.count(*c)) ++in_band;
        }
        rep.band_count.push_back(in_band);
        rep.rated_count.push_back(rated);
        rep.band_percent.push_back(rated ? 100.0 * in_band / rated : 0.0);
    }
    for (int a = 0; a < r.k(); ++a)
        for (int b = a + 1; b < r.k(); ++b) {
            PairAgreement pa;
            pa.rater_a = r.raters[static_cast<size_t>(a)];
            pa.rater_b = r.raters[static_cast<size_t>(b)];
            for (int i = 0; i < r.n(); ++i) {
                const auto& ca = r.cells[static_cast<size_t>(i)][static_cast<size_t>(a)];
                const auto& cb = r.cells[static_cast<size_t>(i)][static_cast<size_t>(b)];
                if (!ca || !cb) continue;
                ++pa.rated;
                int d = std::abs(*ca - *cb);
                if (d == 0) ++pa.exact;
                else if (d == 1) ++pa.off_by_one;
                else ++pa.larger;
            }
            rep.pairs.push_back(pa);
        }
    return rep;
}

}  // namespace cws
