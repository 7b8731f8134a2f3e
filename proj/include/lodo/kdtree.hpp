// Array-based 3D kd-tree for nearest-neighbor and radius queries.
// Built once, immutable afterwards; safe for concurrent read-only queries.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace lodo {

class KdTree3 {
 public:
  struct Neighbor {
    int index = -1;        // index into the input point array
    float dist_sq = std::numeric_limits<float>::max();
  };

  KdTree3() = default;

  template <typename PointRange, typename GetXyz>
  KdTree3(const PointRange& pts, GetXyz&& xyz) {
    pts_.reserve(pts.size());
    for (const auto& p : pts) pts_.push_back(xyz(p));
    index_.resize(pts_.size());
    std::iota(index_.begin(), index_.end(), 0);
    if (!pts_.empty()) {
      nodes_.reserve(2 * pts_.size() / kLeafSize + 2);
      build(0, static_cast<int>(pts_.size()));
    }
  }

  explicit KdTree3(const std::vector<Eigen::Vector3f>& pts)
      : KdTree3(pts, [](const Eigen::Vector3f& p) { return p; }) {}

  std::size_t size() const { return pts_.size(); }
  bool empty() const { return pts_.empty(); }

  /// Single nearest neighbor; index -1 when the tree is empty.
  Neighbor nearest(const Eigen::Vector3f& q) const {
    Neighbor best;
    if (!empty()) search_nn(0, q, best);
    return best;
  }

  /// k nearest neighbors within max_radius, ordered by increasing distance.
  std::vector<Neighbor> knn(const Eigen::Vector3f& q, int k,
                            float max_radius =
                                std::numeric_limits<float>::max()) const {
    std::vector<Neighbor> heap;  // max-heap on dist_sq
    if (empty() || k <= 0) return heap;
    heap.reserve(static_cast<std::size_t>(k) + 1);
    float bound = max_radius < std::numeric_limits<float>::max()
                      ? max_radius * max_radius
                      : std::numeric_limits<float>::max();
    search_knn(0, q, k, bound, heap);
    std::sort_heap(heap.begin(), heap.end(), heap_cmp);
    return heap;
  }

  /// All neighbors within radius, unordered.
  std::vector<Neighbor> radius(const Eigen::Vector3f& q, float r) const {
    std::vector<Neighbor> out;
    if (!empty() && r > 0.0f) search_radius(0, q, r * r, out);
    return out;
  }

 private:
  static constexpr int kLeafSize = 16;

  struct Node {
    float split = 0.0f;
    std::int32_t dim = -1;     // -1 marks a leaf
    std::int32_t left = -1;    // child node ids
    std::int32_t right = -1;
    std::int32_t begin = 0;    // leaf range into index_
    std::int32_t end = 0;
  };

  static bool heap_cmp(const Neighbor& a, const Neighbor& b) {
    return a.dist_sq < b.dist_sq;
  }

  int build(int begin, int end) {
    int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    Eigen::Vector3f lo = pts_[index_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(pts_[index_[i]]);
      hi = hi.cwiseMax(pts_[index_[i]]);
    }
    int dim;
    (hi - lo).maxCoeff(&dim);
    int mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid,
                     index_.begin() + end, [&](int a, int b) {
                       return pts_[a][dim] < pts_[b][dim];
                     });
    float split = pts_[index_[mid]][dim];
    nodes_[id].dim = dim;
    nodes_[id].split = split;
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search_nn(int id, const Eigen::Vector3f& q, Neighbor& best) const {
    const Node& n = nodes_[id];
    if (n.dim < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        float d = (pts_[index_[i]] - q).squaredNorm();
        if (d < best.dist_sq) best = {index_[i], d};
      }
      return;
    }
    float delta = q[n.dim] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_nn(near, q, best);
    if (delta * delta < best.dist_sq) search_nn(far, q, best);
  }

  void search_knn(int id, const Eigen::Vector3f& q, int k, float bound,
                  std::vector<Neighbor>& heap) const {
    const Node& n = nodes_[id];
    float worst = heap.size() == static_cast<std::size_t>(k)
                      ? heap.front().dist_sq
                      : bound;
    if (n.dim < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        float d = (pts_[index_[i]] - q).squaredNorm();
        if (d >= worst && heap.size() == static_cast<std::size_t>(k)) continue;
        if (d > bound) continue;
        heap.push_back({index_[i], d});
        std::push_heap(heap.begin(), heap.end(), heap_cmp);
        if (heap.size() > static_cast<std::size_t>(k)) {
          std::pop_heap(heap.begin(), heap.end(), heap_cmp);
          heap.pop_back();
        }
        if (heap.size() == static_cast<std::size_t>(k))
          worst = heap.front().dist_sq;
      }
      return;
    }
    float delta = q[n.dim] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_knn(near, q, k, bound, heap);
    float limit = heap.size() == static_cast<std::size_t>(k)
                      ? heap.front().dist_sq
                      : bound;
    if (delta * delta < limit) search_knn(far, q, k, bound, heap);
  }

  void search_radius(int id, const Eigen::Vector3f& q, float r_sq,
                     std::vector<Neighbor>& out) const {
    const Node& n = nodes_[id];
    if (n.dim < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        float d = (pts_[index_[i]] - q).squaredNorm();
        if (d <= r_sq) out.push_back({index_[i], d});
      }
      return;
    }
    float delta = q[n.dim] - n.split;
    int near = delta < 0 ? n.left : n.right;
    int far = delta < 0 ? n.right : n.left;
    search_radius(near, q, r_sq, out);
    if (delta * delta <= r_sq) search_radius(far, q, r_sq, out);
  }

  std::vector<Eigen::Vector3f> pts_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
};

}  // namespace lodo
