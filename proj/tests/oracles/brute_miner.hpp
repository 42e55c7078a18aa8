#pragma once

#include <cstddef>
#include <vector>

#include "ccr/contrastive.hpp"
#include "ccr/tasks.hpp"
#include "ccr/tensor.hpp"

namespace ccr::oracle {

// Reference partition by exhaustive scans: repeated minimum/maximum
// selection instead of sorting.
Partition brute_partition(const LabelMap& labels, std::size_t anchor, std::size_t k, LabelMetric metric);

// Reference semi-hard miner over the given anchors. Builds the full
// hw x hw feature distance matrix straight from the NCHW map.
TripletBatch brute_mine(const Tensor& projected, std::size_t image, const LabelMap& labels,
                        LabelMetric metric, const std::vector<std::size_t>& anchors, std::size_t k,
                        std::size_t c_neg, DistanceKind distance);

}  // namespace ccr::oracle
