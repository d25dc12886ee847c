#include "serialcorr/summary.hpp"

#include <cmath>

namespace serialcorr::summary {

OrderDistribution order_distribution(const std::vector<std::vector<std::size_t>>& order_maps, const io::Mask& rois,
                                     std::size_t max_order, Notices* notices) {
    if (order_maps.empty()) throw ValidationError("order_distribution: no runs");
    if (max_order == 0) throw ValidationError("order_distribution: max_order must be positive");
    rois.validate();
    for (const auto& m : order_maps)
        if (m.size() != rois.voxels()) throw ValidationError("order_distribution: order map and ROI mask differ in size");

    OrderDistribution dist;
    dist.max_order = max_order;
    dist.runs = order_maps.size();
    const double R = static_cast<double>(order_maps.size());
    for (int label = 1; label <= rois.max_label(); ++label) {
        const auto voxels = rois.indices(label);
        RoiDistribution roi;
        roi.label = label;
        roi.name = rois.label_name(label);
        bool empty = false;
        for (const auto& map : order_maps) {
            std::vector<std::size_t> counts(max_order, 0);
            std::size_t n = 0;
            for (auto v : voxels) {
                const auto p = map[v];
                if (p == 0) continue;
                if (p > max_order) throw ValidationError("order_distribution: order exceeds max_order");
                ++counts[p - 1];
                ++n;
            }
            if (n == 0) {
                empty = true;
                break;
            }
            std::vector<double> pct(max_order);
            for (std::size_t o = 0; o < max_order; ++o)
                pct[o] = 100.0 * static_cast<double>(counts[o]) / static_cast<double>(n);
            roi.run_percent.push_back(std::move(pct));
            roi.n_voxels.push_back(n);
        }
        if (empty) {
            if (notices) notices->push_back("ROI '" + roi.name + "' has no voxels in at least one run; excluded");
            continue;
        }
        roi.mean_percent.assign(max_order, 0.0);
        roi.std_percent.assign(max_order, 0.0);
        for (std::size_t o = 0; o < max_order; ++o) {
            double s = 0.0;
            for (const auto& run : roi.run_percent) s += run[o];
            const double mean = s / R;
            double ss = 0.0;
            for (const auto& run : roi.run_percent) ss += (run[o] - mean) * (run[o] - mean);
            roi.mean_percent[o] = mean;
            roi.std_percent[o] = R > 1.0 ? std::sqrt(ss / (R - 1.0)) : 0.0;
        }
        dist.rois.push_back(std::move(roi));
    }
    return dist;
}

std::string OrderDistribution::to_csv() const {
    std::string out = "roi,order,mean_percent,std_percent,n_voxels\n";
    for (const auto& r : rois) {
        std::size_t total = 0;
        for (auto v : r.n_voxels) total += v;
        for (std::size_t o = 0; o < max_order; ++o)
            out += r.name + "," + std::to_string(o + 1) + "," + io::format_number(r.mean_percent[o]) + "," +
                   io::format_number(r.std_percent[o]) + "," + std::to_string(total) + "\n";
    }
    return out;
}

std::vector<ThresholdRow> threshold_summary(const OrderDistribution& dist, std::size_t cutoff) {
    if (cutoff > dist.max_order) throw ValidationError("threshold_summary: cutoff exceeds the largest order");
    std::vector<ThresholdRow> out;
    for (const auto& r : dist.rois) {
        double s = 0.0;
        for (std::size_t o = cutoff; o < dist.max_order; ++o) s += r.mean_percent[o];
        out.push_back({r.name, s});
    }
    return out;
}

}  // namespace serialcorr::summary
