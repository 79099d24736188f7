#include "voxctl/morphology.hpp"

#include <deque>
#include <stdexcept>

#include "json.hpp"

namespace voxctl {

using nlohmann::json;

int VoxelGrid::voxel_count() const {
  int n = 0;
  for (int c : cells)
    if (c != kEmpty) ++n;
  return n;
}

int VoxelGrid::actuator_count() const {
  int n = 0;
  for (int c : cells)
    if (c == kActuatorH || c == kActuatorV) ++n;
  return n;
}

void VoxelGrid::validate() const {
  auto fail = [this](const std::string& rule) {
    throw std::invalid_argument("morphology '" + name + "': " + rule);
  };
  if (rows <= 0 || cols <= 0) fail("grid must have at least one row and one column");
  if (rows > kMaxGridDim || cols > kMaxGridDim) {
    fail("grid exceeds the maximum size of 7 x 7");
  }
  if (static_cast<int>(cells.size()) != rows * cols) fail("cell count does not match dims");
  for (int c : cells) {
    if (c < 0 || c > 4) fail("voxel codes must be integers in [0, 4]");
  }
  const int voxels = voxel_count();
  if (voxels < 2) fail("a robot needs at least two voxels");
  if (actuator_count() < 1) fail("a robot needs at least one actuator voxel");

  // single 4-connected component over non-empty cells
  int start = -1;
  for (int i = 0; i < rows * cols; ++i) {
    if (cells[i] != kEmpty) {
      start = i;
      break;
    }
  }
  std::vector<char> seen(cells.size(), 0);
  std::deque<int> frontier{start};
  seen[start] = 1;
  int reached = 0;
  while (!frontier.empty()) {
    const int cur = frontier.front();
    frontier.pop_front();
    ++reached;
    const int r = cur / cols, c = cur % cols;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
      const int ni = nr * cols + nc;
      if (seen[ni] || cells[ni] == kEmpty) continue;
      seen[ni] = 1;
      frontier.push_back(ni);
    }
  }
  if (reached != voxels) fail("voxels must form a single 4-connected component");
}

namespace {

VoxelGrid grid_from_json(const json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("morphology document must be a JSON object");
  if (!doc.contains("name") || !doc["name"].is_string()) {
    throw std::invalid_argument("morphology document needs a string \"name\"");
  }
  VoxelGrid grid;
  grid.name = doc["name"].get<std::string>();
  if (!doc.contains("grid") || !doc["grid"].is_array() || doc["grid"].empty()) {
    throw std::invalid_argument("morphology '" + grid.name +
                                "': \"grid\" must be a non-empty array of rows");
  }
  const auto& rows = doc["grid"];
  grid.rows = static_cast<int>(rows.size());
  for (const auto& row : rows) {
    if (!row.is_array() || row.empty()) {
      throw std::invalid_argument("morphology '" + grid.name + "': rows must be non-empty arrays");
    }
    if (grid.cols == 0) grid.cols = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != grid.cols) {
      throw std::invalid_argument("morphology '" + grid.name + "': rows have uneven lengths");
    }
    for (const auto& cell : row) {
      if (!cell.is_number_integer()) {
        throw std::invalid_argument("morphology '" + grid.name + "': cells must be integers");
      }
      grid.cells.push_back(cell.get<int>());
    }
  }
  grid.validate();
  return grid;
}

}  // namespace

VoxelGrid parse_grid(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("morphology file is not valid JSON: ") + e.what());
  }
  return grid_from_json(doc);
}

std::vector<VoxelGrid> parse_grid_set(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("morphology set is not valid JSON: ") + e.what());
  }
  if (!doc.is_array() || doc.empty()) {
    throw std::invalid_argument("morphology set must be a non-empty JSON array");
  }
  std::vector<VoxelGrid> grids;
  for (const auto& entry : doc) grids.push_back(grid_from_json(entry));
  for (std::size_t i = 0; i < grids.size(); ++i) {
    for (std::size_t j = i + 1; j < grids.size(); ++j) {
      if (grids[i].name == grids[j].name) {
        throw std::invalid_argument("morphology set contains duplicate name '" + grids[i].name +
                                    "'");
      }
    }
  }
  return grids;
}

int node_type_count(EdgeScheme scheme) { return scheme == EdgeScheme::Homogeneous ? 1 : 4; }

int edge_type_count(EdgeScheme scheme) {
  switch (scheme) {
    case EdgeScheme::NodePair:
      return 20;
    case EdgeScheme::Direction:
      return 4;
    case EdgeScheme::Homogeneous:
      return 1;
  }
  throw std::invalid_argument("edge_type_count: unknown scheme");
}

int HeteroGraph::node_type_index(int node) const {
  if (node < 0 || node >= node_count()) throw std::out_of_range("node_type_index: bad node id");
  return scheme == EdgeScheme::Homogeneous ? 0 : nodes[node].voxel_type - 1;
}

int edge_type_id(EdgeScheme scheme, int source_code, int target_code, Direction4 direction) {
  if (source_code < 0 || source_code > 4 || target_code < 1 || target_code > 4) {
    throw std::invalid_argument("edge_type_id: voxel codes out of range");
  }
  switch (scheme) {
    case EdgeScheme::NodePair:
      return source_code * 4 + (target_code - 1);
    case EdgeScheme::Direction:
      if (direction == Direction4::None) {
        throw std::invalid_argument("edge_type_id: direction scheme needs a direction tag");
      }
      return static_cast<int>(direction);
    case EdgeScheme::Homogeneous:
      return 0;
  }
  throw std::invalid_argument("edge_type_id: unknown scheme");
}

HeteroGraph build_graph(const VoxelGrid& grid, EdgeScheme scheme, bool full_connectivity) {
  grid.validate();
  if (full_connectivity && scheme != EdgeScheme::Homogeneous) {
    throw std::invalid_argument("build_graph: full connectivity is a homogeneous-scheme mode");
  }

  HeteroGraph g;
  g.scheme = scheme;
  g.full_connectivity = full_connectivity;
  g.node_type_count = voxctl::node_type_count(scheme);
  g.edge_type_count = voxctl::edge_type_count(scheme);

  // nodes in row-major grid order
  std::vector<int> node_of_cell(grid.cells.size(), -1);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (grid.at(r, c) == kEmpty) continue;
      node_of_cell[r * grid.cols + c] = g.node_count();
      g.nodes.push_back({r, c, grid.at(r, c)});
    }
  }

  if (full_connectivity) {
    for (int t = 0; t < g.node_count(); ++t) {
      for (int s = 0; s < g.node_count(); ++s) {
        if (s == t) continue;
        g.edges.push_back({s, t, 0, Direction4::None});
      }
    }
    return g;
  }

  // one incoming edge per occupied 4-neighbour, targets in node order and
  // sources in a fixed up/down/left/right sweep
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  const Direction4 dirs[4] = {Direction4::Up, Direction4::Down, Direction4::Left,
                              Direction4::Right};
  for (int t = 0; t < g.node_count(); ++t) {
    const auto& node = g.nodes[t];
    for (int k = 0; k < 4; ++k) {
      const int nr = node.row + dr[k], nc = node.col + dc[k];
      if (nr < 0 || nr >= grid.rows || nc < 0 || nc >= grid.cols) continue;
      const int s = node_of_cell[nr * grid.cols + nc];
      if (s < 0) continue;
      const int type = edge_type_id(scheme, g.nodes[s].voxel_type, node.voxel_type, dirs[k]);
      g.edges.push_back({s, t, type, dirs[k]});
    }
  }
  return g;
}

}  // namespace voxctl
