#pragma once

#include "megc/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace megc {

/// Static skeleton: joint count plus physical bone list. Edges are stored
/// canonically (sorted, low index first, no self loops, no duplicates) so
/// two graphs with reordered edge lists compare equal.
struct SkeletonGraph {
    int joints = 0;
    std::vector<std::pair<int, int>> edges;
    std::string preset;

    SkeletonGraph() = default;
    SkeletonGraph(int joints_, std::vector<std::pair<int, int>> edges_, std::string preset_ = "");

    bool connected() const;
};

/// D^(-1/2) (A_bin + I) D^(-1/2) with D the degree matrix of A_bin + I.
/// Symmetric; isolated joints keep a unit self weight. Returns [1,N,N].
Tensor static_adjacency(const SkeletonGraph& g);

/// Named joint presets:
///   ntu25  - 25-joint body tree (24 edges), Kinect v2 ordering with
///            base-of-spine 0, spine 1, neck 2, head 3, left arm 4-7,
///            right arm 8-11, left leg 12-15, right leg 16-19, spine-shoulder
///            20, left/right hand tips and thumbs 21-24.
///   hand21 - 21-joint hand tree (20 edges): wrist 0, four bones per finger,
///            thumb 1-4, index 5-8, middle 9-12, ring 13-16, pinky 17-20.
///   chain<N> - path graph over N joints (N >= 2), used by the synthetic
///            generator where no anatomical tree applies.
SkeletonGraph preset_graph(const std::string& name);

}  // namespace megc
