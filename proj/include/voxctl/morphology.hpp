#pragma once

#include <string>
#include <vector>

namespace voxctl {

// Voxel type codes inside a grid. 0 marks an empty cell and never becomes a
// graph node.
enum VoxelCode : int {
  kEmpty = 0,
  kRigid = 1,
  kSoft = 2,
  kActuatorH = 3,  // expands/contracts horizontally
  kActuatorV = 4,  // expands/contracts vertically
};

// How edges get their type index.
//   NodePair:    id = source_code * 4 + (target_code - 1), 20 slots; the
//                [0,4) band would correspond to empty sources and stays
//                unused because empty cells are not nodes.
//   Direction:   id = direction of the source relative to the target,
//                up=0 down=1 left=2 right=3.
//   Homogeneous: every node is the same type and every edge is type 0.
enum class EdgeScheme { NodePair, Direction, Homogeneous };

enum class Direction4 : int { Up = 0, Down = 1, Left = 2, Right = 3, None = 4 };

inline constexpr int kMaxGridDim = 7;  // grids are at most 7 x 7

/// Rectangular voxel design. Row 0 is the top of the robot.
struct VoxelGrid {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<int> cells;  // row-major voxel codes

  int at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
  int voxel_count() const;
  int actuator_count() const;

  /// Throws std::invalid_argument naming the violated rule if the grid is
  /// not a valid robot: codes in [0,4], dims within 7 x 7, at least two
  /// voxels forming a single 4-connected component, at least one actuator.
  void validate() const;
};

/// Parses a single morphology document: {"name": string, "grid": [[int]]}.
VoxelGrid parse_grid(const std::string& json_text);
/// Parses a morphology-set document: a JSON array of morphology objects.
/// Names inside one set must be unique.
std::vector<VoxelGrid> parse_grid_set(const std::string& json_text);

struct GraphNode {
  int row = 0;
  int col = 0;
  int voxel_type = 0;  // 1..4
};

struct GraphEdge {
  int source = 0;
  int target = 0;
  int edge_type = 0;
  Direction4 direction = Direction4::None;
};

/// Directed typed graph over the non-empty cells of a grid. Nodes are listed
/// in row-major grid order; each grid adjacency contributes one edge per
/// direction.
struct HeteroGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  EdgeScheme scheme = EdgeScheme::NodePair;
  bool full_connectivity = false;
  int node_type_count = 0;  // U
  int edge_type_count = 0;  // P

  int node_count() const { return static_cast<int>(nodes.size()); }
  /// Parameter-table index of a node's type: voxel_type - 1, collapsed to 0
  /// under the homogeneous scheme.
  int node_type_index(int node) const;
};

/// Number of node-type parameter slots (U) a scheme uses.
int node_type_count(EdgeScheme scheme);
/// Number of edge-type parameter slots (P) a scheme uses.
int edge_type_count(EdgeScheme scheme);

/// Edge type id for an edge from a source voxel to an adjacent target voxel.
/// `direction` is where the source sits relative to the target.
int edge_type_id(EdgeScheme scheme, int source_code, int target_code, Direction4 direction);

/// Builds the typed graph of a validated grid. With `full_connectivity`
/// (homogeneous scheme only) every ordered pair of distinct nodes becomes an
/// edge of type 0, which is useful for checking against dense attention.
HeteroGraph build_graph(const VoxelGrid& grid, EdgeScheme scheme, bool full_connectivity = false);

}  // namespace voxctl
