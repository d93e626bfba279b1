#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgsan/json_io.hpp"
#include "rgsan/rws.hpp"
#include "rgsan/scene.hpp"

namespace rgsan {

enum class Stratum { unique, multiple };

inline std::string to_string(Stratum s) { return s == Stratum::unique ? "unique" : "multiple"; }

struct EvalRecord {
    std::string sample_id;
    double iou = 0.0;
    Stratum stratum = Stratum::multiple;
};

/// Point-level IoU; both-empty counts as a perfect match.
inline double point_iou(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("point_iou: length mismatch");
    return binary_iou(pred, gt);
}

struct StratumStats {
    int count = 0;
    double miou = 0.0;
    double acc_25 = 0.0;  // fraction with IoU >= 0.25 (inclusive)
    double acc_50 = 0.0;
};

struct EvalSummary {
    StratumStats unique;
    StratumStats multiple;
    StratumStats overall;
};

inline EvalSummary aggregate(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    EvalSummary out;
    auto fold = [](StratumStats& s, double iou) {
        ++s.count;
        s.miou += iou;
        if (iou >= 0.25) s.acc_25 += 1;
        if (iou >= 0.5) s.acc_50 += 1;
    };
    for (const auto& r : records) {
        if (r.iou < 0.0 || r.iou > 1.0) throw std::invalid_argument("aggregate: IoU outside [0,1]");
        fold(out.overall, r.iou);
        fold(r.stratum == Stratum::unique ? out.unique : out.multiple, r.iou);
    }
    auto finish = [](StratumStats& s) {
        if (s.count == 0) return;
        s.miou /= s.count;
        s.acc_25 /= s.count;
        s.acc_50 /= s.count;
    };
    finish(out.unique);
    finish(out.multiple);
    finish(out.overall);
    return out;
}

/// Unique iff the target instance is the only one of its class in the scene.
inline Stratum stratify(const PointCloudScene& scene, int target_instance) {
    if (target_instance < 0 || target_instance >= static_cast<int>(scene.instance_classes.size()))
        throw std::invalid_argument("stratify: unknown target instance");
    const std::string& cls = scene.instance_classes[target_instance];
    int same = 0;
    for (const auto& c : scene.instance_classes)
        if (c == cls) ++same;
    return same > 1 ? Stratum::multiple : Stratum::unique;
}

inline json summary_to_json(const EvalSummary& s) {
    auto stratum = [](const StratumStats& st) {
        return json{{"count", st.count}, {"acc@0.25", st.acc_25}, {"acc@0.5", st.acc_50}, {"miou", st.miou}};
    };
    return json{{"unique", stratum(s.unique)}, {"multiple", stratum(s.multiple)}, {"overall", stratum(s.overall)}};
}

/// Aligned table with the benchmark's column layout (0.25 / 0.5 / mIoU per
/// stratum and overall).
inline std::string summary_table(const EvalSummary& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(10) << "" << std::right << std::setw(8) << "0.25" << std::setw(8)
       << "0.5" << std::setw(8) << "mIoU" << std::setw(8) << "n" << '\n';
    auto row = [&](const char* name, const StratumStats& st) {
        os << std::left << std::setw(10) << name << std::right;
        if (st.count == 0) {
            os << std::setw(8) << "-" << std::setw(8) << "-" << std::setw(8) << "-";
        } else {
            os << std::setw(8) << st.acc_25 << std::setw(8) << st.acc_50 << std::setw(8) << st.miou;
        }
        os << std::setw(8) << st.count << '\n';
    };
    row("Unique", s.unique);
    row("Multiple", s.multiple);
    row("Overall", s.overall);
    return os.str();
}

}  // namespace rgsan
