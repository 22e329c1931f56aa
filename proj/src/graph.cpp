#include "megc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace megc {

SkeletonGraph::SkeletonGraph(int joints_, std::vector<std::pair<int, int>> edges_,
                             std::string preset_)
    : joints(joints_), preset(std::move(preset_)) {
    if (joints < 1) throw std::invalid_argument("SkeletonGraph: joint count must be >= 1");
    edges.reserve(edges_.size());
    for (auto [a, b] : edges_) {
        if (a < 0 || b < 0 || a >= joints || b >= joints) {
            throw std::invalid_argument("SkeletonGraph: edge (" + std::to_string(a) + "," +
                                        std::to_string(b) + ") outside joint range 0.." +
                                        std::to_string(joints - 1));
        }
        if (a == b) throw std::invalid_argument("SkeletonGraph: self loop at joint " +
                                                std::to_string(a));
        edges.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

bool SkeletonGraph::connected() const {
    std::vector<int> root(static_cast<size_t>(joints));
    std::iota(root.begin(), root.end(), 0);
    auto find = [&](int x) {
        while (root[static_cast<size_t>(x)] != x) {
            root[static_cast<size_t>(x)] = root[static_cast<size_t>(root[static_cast<size_t>(x)])];
            x = root[static_cast<size_t>(x)];
        }
        return x;
    };
    for (auto [a, b] : edges) root[static_cast<size_t>(find(a))] = find(b);
    for (int i = 0; i < joints; ++i) {
        if (find(i) != find(0)) return false;
    }
    return true;
}

Tensor static_adjacency(const SkeletonGraph& g) {
    const int n = g.joints;
    Tensor a({1, n, n});
    auto m = a.matrix(n, n);
    m.setIdentity();
    for (auto [i, j] : g.edges) {
        m(i, j) = 1.0;
        m(j, i) = 1.0;
    }
    Eigen::VectorXd dinv_sqrt(n);
    for (int i = 0; i < n; ++i) dinv_sqrt(i) = 1.0 / std::sqrt(m.row(i).sum());
    m = dinv_sqrt.asDiagonal() * m * dinv_sqrt.asDiagonal();
    return a;
}

namespace {

SkeletonGraph tree(int joints, std::vector<std::pair<int, int>> edges, std::string name) {
    return SkeletonGraph(joints, std::move(edges), std::move(name));
}

}  // namespace

SkeletonGraph preset_graph(const std::string& name) {
    if (name == "ntu25") {
        return tree(25,
                    {{0, 1},   {1, 20},  {2, 20},  {2, 3},   {4, 20},  {4, 5},
                     {5, 6},   {6, 7},   {8, 20},  {8, 9},   {9, 10},  {10, 11},
                     {0, 12},  {12, 13}, {13, 14}, {14, 15}, {0, 16},  {16, 17},
                     {17, 18}, {18, 19}, {7, 21},  {7, 22},  {11, 23}, {11, 24}},
                    name);
    }
    if (name == "hand21") {
        std::vector<std::pair<int, int>> edges;
        for (int finger = 0; finger < 5; ++finger) {
            const int base = 1 + finger * 4;
            edges.emplace_back(0, base);
            for (int bone = 0; bone < 3; ++bone) edges.emplace_back(base + bone, base + bone + 1);
        }
        return tree(21, std::move(edges), name);
    }
    if (name.rfind("chain", 0) == 0) {
        const std::string count = name.substr(5);
        int n = 0;
        try {
            n = std::stoi(count);
        } catch (const std::exception&) {
            n = 0;
        }
        if (n >= 2) {
            std::vector<std::pair<int, int>> edges;
            for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
            return tree(n, std::move(edges), name);
        }
    }
    throw std::invalid_argument("unknown joint preset '" + name +
                                "' (expected ntu25, hand21 or chain<N>)");
}

}  // namespace megc
