#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bnngp/error.hpp"

namespace bnngp {

struct Coord {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Coord&, const Coord&) = default;
};

inline double distance(const Coord& a, const Coord& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

struct BoundingBox {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;

  bool contains(const Coord& c) const {
    return c.x >= xmin && c.x <= xmax && c.y >= ymin && c.y <= ymax;
  }
};

/// Ordered set of distinct 2-D locations. Index i is the stable id of coords()[i].
class LocationSet {
 public:
  LocationSet() = default;

  explicit LocationSet(std::vector<Coord> coords) : coords_(std::move(coords)) {
    if (coords_.empty()) throw Error("location set is empty");
    if (auto dup = find_duplicate(coords_))
      throw Error("duplicate location at indices " + std::to_string(dup->first) + "," +
                  std::to_string(dup->second));
  }

  /// Returns the first pair (i, j), i < j, of identical coordinates, if any.
  static std::optional<std::pair<int, int>> find_duplicate(std::span<const Coord> coords) {
    std::vector<int> order(coords.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (coords[a].x != coords[b].x) return coords[a].x < coords[b].x;
      if (coords[a].y != coords[b].y) return coords[a].y < coords[b].y;
      return a < b;
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
      if (coords[order[k - 1]] == coords[order[k]])
        return std::pair{std::min(order[k - 1], order[k]), std::max(order[k - 1], order[k])};
    }
    return std::nullopt;
  }

  int size() const { return static_cast<int>(coords_.size()); }
  bool empty() const { return coords_.empty(); }
  const Coord& operator[](int i) const { return coords_[static_cast<std::size_t>(i)]; }
  const std::vector<Coord>& coords() const { return coords_; }

  BoundingBox bounding_box() const {
    BoundingBox box{coords_[0].x, coords_[0].x, coords_[0].y, coords_[0].y};
    for (const auto& c : coords_) {
      box.xmin = std::min(box.xmin, c.x);
      box.xmax = std::max(box.xmax, c.x);
      box.ymin = std::min(box.ymin, c.y);
      box.ymax = std::max(box.ymax, c.y);
    }
    return box;
  }

  LocationSet subset(std::span<const int> indices) const {
    std::vector<Coord> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back((*this)[i]);
    return LocationSet(std::move(out));
  }

 private:
  std::vector<Coord> coords_;
};

/// Rows x cols grid over a bounding box; cell_block[row * cols + col] is -1 for dropped cells.
struct GridLocator {
  BoundingBox box;
  int rows = 1;
  int cols = 1;
  std::vector<int> cell_block;

  std::pair<int, int> cell_of(const Coord& c) const {
    auto bin = [](double v, double lo, double hi, int count) {
      if (!(hi > lo)) return 0;
      const int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * count));
      return std::clamp(k, 0, count - 1);
    };
    return {bin(c.y, box.ymin, box.ymax, rows), bin(c.x, box.xmin, box.xmax, cols)};
  }

  int block_at(const Coord& c) const {
    auto [r, col] = cell_of(c);
    return cell_block[static_cast<std::size_t>(r * cols + col)];
  }
};

/// Node of the 2-d tree. Leaves carry a block index; inner nodes send coord <= split left.
struct KdNode {
  int axis = 0;
  double split = 0.0;
  int left = -1;
  int right = -1;
  int block = -1;
};

struct KdLocator {
  std::vector<KdNode> nodes;  // nodes[0] is the root

  int block_at(const Coord& c) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].block < 0) {
      const KdNode& node = nodes[static_cast<std::size_t>(at)];
      const double v = node.axis == 0 ? c.x : c.y;
      at = v <= node.split ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(at)].block;
  }
};

/// Disjoint, non-empty blocks covering every location. Block index k is also its
/// position in the "past" ordering: blocks 0..k-1 precede block k.
struct BlockPartition {
  std::vector<int> block_of;
  std::vector<std::vector<int>> members;  // sorted ascending
  std::vector<Coord> centroids;
  BoundingBox box;
  std::variant<GridLocator, KdLocator> locator;

  int size() const { return static_cast<int>(members.size()); }
  int block_size(int k) const { return static_cast<int>(members[static_cast<std::size_t>(k)].size()); }

  /// Block whose region contains c, or -1 for a dropped (empty) grid cell.
  int block_at(const Coord& c) const {
    return std::visit([&](const auto& loc) { return loc.block_at(c); }, locator);
  }

  /// Block with the centroid closest to c; ties go to the lower index.
  int nearest_block(const Coord& c) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < size(); ++k) {
      const double d = distance(c, centroids[static_cast<std::size_t>(k)]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return best;
  }
};

namespace detail {

inline void finish_partition(BlockPartition& part, const LocationSet& locs) {
  part.block_of.assign(static_cast<std::size_t>(locs.size()), -1);
  part.centroids.clear();
  for (int k = 0; k < part.size(); ++k) {
    auto& m = part.members[static_cast<std::size_t>(k)];
    std::sort(m.begin(), m.end());
    Coord c{0.0, 0.0};
    for (int i : m) {
      part.block_of[static_cast<std::size_t>(i)] = k;
      c.x += locs[i].x;
      c.y += locs[i].y;
    }
    c.x /= static_cast<double>(m.size());
    c.y /= static_cast<double>(m.size());
    part.centroids.push_back(c);
  }
  part.box = locs.bounding_box();
}

}  // namespace detail

/// Regular rows x cols grid over the bounding box of locs. Cells are scanned row-major
/// (row 0 at ymin, col 0 at xmin); empty cells are dropped with a warning.
inline BlockPartition regular_partition(const LocationSet& locs, int rows, int cols) {
  if (locs.empty()) throw Error("cannot partition an empty location set");
  if (rows < 1 || cols < 1) throw Error("grid needs rows >= 1 and cols >= 1");

  GridLocator grid{locs.bounding_box(), rows, cols, {}};
  std::vector<std::vector<int>> cells(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (int i = 0; i < locs.size(); ++i) {
    auto [r, c] = grid.cell_of(locs[i]);
    cells[static_cast<std::size_t>(r * cols + c)].push_back(i);
  }

  BlockPartition part;
  grid.cell_block.assign(cells.size(), -1);
  int dropped = 0;
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    if (cells[cell].empty()) {
      ++dropped;
      continue;
    }
    grid.cell_block[cell] = part.size();
    part.members.push_back(std::move(cells[cell]));
  }
  if (dropped > 0)
    warn("regular partition dropped " + std::to_string(dropped) + " empty cell(s); M=" +
         std::to_string(part.size()));
  part.locator = std::move(grid);
  detail::finish_partition(part, locs);
  return part;
}

/// Grid shape used when only a block count is requested: ceil(sqrt(M)) x ceil(M / ceil(sqrt(M))).
inline std::pair<int, int> grid_shape_for(int blocks) {
  if (blocks < 1) throw Error("block count must be >= 1");
  int rows = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(blocks))));
  while (rows * rows < blocks) ++rows;
  while ((rows - 1) * (rows - 1) >= blocks) --rows;
  const int cols = (blocks + rows - 1) / rows;
  return {rows, cols};
}

/// Irregular blocking through a 2-d tree: the leaf holding the most points is split
/// at the (lower) median of its wider coordinate until there are `blocks` leaves.
/// Leaves are numbered depth-first, left to right.
inline BlockPartition kdtree_partition(const LocationSet& locs, int blocks) {
  if (locs.empty()) throw Error("cannot partition an empty location set");
  if (blocks < 1) throw Error("block count must be >= 1");
  if (blocks > locs.size())
    throw Error("block count " + std::to_string(blocks) + " exceeds number of locations " +
                std::to_string(locs.size()));

  struct Leaf {
    int node;
    std::vector<int> points;
  };
  KdLocator tree;
  tree.nodes.push_back({});
  std::vector<Leaf> leaves;
  {
    std::vector<int> all(static_cast<std::size_t>(locs.size()));
    std::iota(all.begin(), all.end(), 0);
    leaves.push_back({0, std::move(all)});
  }

  auto coord = [&](int i, int axis) { return axis == 0 ? locs[i].x : locs[i].y; };

  while (static_cast<int>(leaves.size()) < blocks) {
    std::size_t target = 0;
    for (std::size_t l = 1; l < leaves.size(); ++l)
      if (leaves[l].points.size() > leaves[target].points.size()) target = l;
    Leaf leaf = std::move(leaves[target]);

    double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    double hi[2] = {-lo[0], -lo[1]};
    for (int i : leaf.points) {
      for (int a = 0; a < 2; ++a) {
        lo[a] = std::min(lo[a], coord(i, a));
        hi[a] = std::max(hi[a], coord(i, a));
      }
    }
    const int axis = (hi[1] - lo[1]) > (hi[0] - lo[0]) ? 1 : 0;

    std::vector<double> values;
    values.reserve(leaf.points.size());
    for (int i : leaf.points) values.push_back(coord(i, axis));
    std::sort(values.begin(), values.end());
    double median = values[(values.size() - 1) / 2];
    if (median >= values.back()) {
      // more than half the points tie at the maximum; split just below it
      median = *(std::lower_bound(values.begin(), values.end(), values.back()) - 1);
    }

    Leaf left{static_cast<int>(tree.nodes.size()), {}};
    Leaf right{static_cast<int>(tree.nodes.size()) + 1, {}};
    for (int i : leaf.points) (coord(i, axis) <= median ? left : right).points.push_back(i);
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    auto& parent = tree.nodes[static_cast<std::size_t>(leaf.node)];
    parent.axis = axis;
    parent.split = median;
    parent.left = left.node;
    parent.right = right.node;

    leaves[target] = std::move(left);
    leaves.insert(leaves.begin() + static_cast<std::ptrdiff_t>(target) + 1, std::move(right));
  }

  BlockPartition part;
  for (auto& leaf : leaves) {
    tree.nodes[static_cast<std::size_t>(leaf.node)].block = part.size();
    part.members.push_back(std::move(leaf.points));
  }
  part.locator = std::move(tree);
  detail::finish_partition(part, locs);
  return part;
}

/// How to cut the domain into blocks: a rows x cols grid, or a 2-d tree with M leaves.
struct Blocking {
  enum class Kind { Regular, KdTree };
  Kind kind = Kind::KdTree;
  int rows = 1;
  int cols = 1;
  int blocks = 1;

  static Blocking regular(int rows, int cols) { return {Kind::Regular, rows, cols, rows * cols}; }
  static Blocking regular(int blocks) {
    auto [r, c] = grid_shape_for(blocks);
    return {Kind::Regular, r, c, blocks};
  }
  static Blocking kdtree(int blocks) { return {Kind::KdTree, 1, 1, blocks}; }
};

inline BlockPartition make_partition(const LocationSet& locs, const Blocking& b) {
  return b.kind == Blocking::Kind::Regular ? regular_partition(locs, b.rows, b.cols) : kdtree_partition(locs, b.blocks);
}

}  // namespace bnngp
