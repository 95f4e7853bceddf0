#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cws/image.hpp"

namespace cws {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    int64_t total() const { return tp + fp + fn + tn; }
};

inline ConfusionCounts confusion(const MaskBin& gt, const MaskBin& pred) {
    if (!gt.same_size(pred)) throw std::invalid_argument("confusion: mask size mismatch");
    ConfusionCounts c;
    for (int64_t i = 0; i < gt.size(); ++i) {
        bool g = gt.data[static_cast<size_t>(i)] != 0;
        bool p = pred.data[static_cast<size_t>(i)] != 0;
        if (g && p) ++c.tp;
        else if (!g && p) ++c.fp;
        else if (g && !p) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// Per-image metrics. The both-empty convention scores IoU = DSC = 1 (a
// correct "no wound" prediction is perfect). FNE is undefined when the
// ground truth has no positives, FPE when it has no negatives; undefined
// entries are excluded from dataset means with an explicit skip count.
struct SegMetrics {
    double iou = 0.0;
    double dsc = 0.0;
    std::optional<double> fpe;
    std::optional<double> fne;
};

inline SegMetrics metrics(const ConfusionCounts& c) {
    SegMetrics m;
    int64_t iou_den = c.tp + c.fp + c.fn;
    if (iou_den == 0) {
        m.iou = 1.0;
        m.dsc = 1.0;
    } else {
        m.iou = static_cast<double>(c.tp) / static_cast<double>(iou_den);
        m.dsc = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
    }
    if (c.fp + c.tn > 0) m.fpe = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
    if (c.fn + c.tp > 0) m.fne = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
    return m;
}

struct EvalRecord {
    std::string id;
    ConfusionCounts counts;
    SegMetrics m;
    bool blank_gt_nonempty_pred = false;  // the blank-mask audit flag
};

struct EvalSummary {
    std::vector<EvalRecord> records;
    double mean_iou = 0.0, mean_dsc = 0.0, mean_fpe = 0.0, mean_fne = 0.0;
    int fpe_skipped = 0, fne_skipped = 0;
    std::vector<std::string> blank_audit;  // gt empty but prediction not
};

inline EvalSummary evaluate_set(const std::vector<std::tuple<std::string, MaskBin, MaskBin>>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_set: empty pair list");
    EvalSummary s;
    double fpe_sum = 0, fne_sum = 0;
    int fpe_n = 0, fne_n = 0;
    for (const auto& [id, gt, pred] : pairs) {
        EvalRecord r;
        r.id = id;
        r.counts = confusion(gt, pred);
        r.m = metrics(r.counts);
        r.blank_gt_nonempty_pred = gt.empty_mask() && !pred.empty_mask();
        if (r.blank_gt_nonempty_pred) s.blank_audit.push_back(id);
        s.mean_iou += r.m.iou;
        s.mean_dsc += r.m.dsc;
        if (r.m.fpe) {
            fpe_sum += *r.m.fpe;
            ++fpe_n;
        }
        if (r.m.fne) {
            fne_sum += *r.m.fne;
            ++fne_n;
        }
        s.records.push_back(std::move(r));
    }
    double n = static_cast<double>(s.records.size());
    s.mean_iou /= n;
    s.mean_dsc /= n;
    s.mean_fpe = fpe_n ? fpe_sum / fpe_n : 0.0;
    s.mean_fne = fne_n ? fne_sum / fne_n : 0.0;
    s.fpe_skipped = static_cast<int>(s.records.size()) - fpe_n;
    s.fne_skipped = static_cast<int>(s.records.size()) - fne_n;
    return s;
}

inline std::string format_metric(const std::optional<double>& v) {
    if (!v) return "undefined";
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << *v;
    return os.str();
}

inline void write_eval_csv(const std::string& path, const EvalSummary& s) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write eval csv: " + path);
    out << "image_id,tp,fp,fn,tn,iou,dsc,fpe,fne,blank_gt_nonempty_pred\n";
    out << std::fixed << std::setprecision(6);
    for (const auto& r : s.records) {
        out << r.id << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.fn << ','
            << r.counts.tn << ',' << r.m.iou << ',' << r.m.dsc << ',' << format_metric(r.m.fpe) << ','
            << format_metric(r.m.fne) << ',' << (r.blank_gt_nonempty_pred ? 1 : 0) << '\n';
    }
    out << "mean,,,,," << s.mean_iou << ',' << s.mean_dsc << ',' << s.mean_fpe << ',' << s.mean_fne
        << ",\n";
    out << "# fpe_skipped=" << s.fpe_skipped << " fne_skipped=" << s.fne_skipped
        << " blank_audit=" << s.blank_audit.size() << '\n';
}

// Binarise a probability map (values in [0,1]) at the given threshold.
inline MaskBin binarize(const Plane& prob, double threshold = 0.5) {
    MaskBin m(prob.height, prob.width);
    for (int64_t i = 0; i < prob.size(); ++i)
        m.data[static_cast<size_t>(i)] = prob.data[static_cast<size_t>(i)] >= threshold ? 1 : 0;
    return m;
}

}  // namespace cws
