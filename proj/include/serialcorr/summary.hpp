#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "serialcorr/common.hpp"
#include "serialcorr/dataio.hpp"

namespace serialcorr::summary {

struct RoiDistribution {
    int label = 0;
    std::string name;
    std::vector<std::vector<double>> run_percent;  // [run][order - 1]
    std::vector<double> mean_percent;              // per order 1..P
    std::vector<double> std_percent;               // sample std across runs, 0 for a single run
    std::vector<std::size_t> n_voxels;             // per run
};

struct OrderDistribution {
    std::size_t max_order = 0;
    std::size_t runs = 0;
    std::vector<RoiDistribution> rois;

    /// roi, order, mean_percent, std_percent, n_voxels (summed over runs).
    std::string to_csv() const;
};

/// Winning-order maps are full-grid vectors (0 = outside the analysis mask).
/// Voxels of an ROI without a valid order are left out of its histogram.
OrderDistribution order_distribution(const std::vector<std::vector<std::size_t>>& order_maps, const io::Mask& rois,
                                     std::size_t max_order, Notices* notices = nullptr);

struct ThresholdRow {
    std::string roi;
    double percent_above = 0.0;
};

/// Per ROI, the mean percentage of voxels with order > cutoff.
std::vector<ThresholdRow> threshold_summary(const OrderDistribution& dist, std::size_t cutoff);

}  // namespace serialcorr::summary
