#pragma once

// Heterogeneous graph transformer policy over voxel robots.
//
// The network embeds each voxel's local observation with a per-type linear
// encoder plus a learned positional table, refines the embeddings with L
// stacked attention layers (per-type/per-head query, key and value maps,
// per-edge-type message matrices, residual per-type output blocks), and
// decodes one Gaussian action mean per voxel together with a single value
// estimate.  The same parameter set drives any morphology because every
// weight is keyed by node type, edge type or grid position — never by
// morphology identity.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "voxctl/morphology.hpp"
#include "voxctl/tensor.hpp"

namespace voxctl {

enum class Activation { Relu, Tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

std::string scheme_name(EdgeScheme s);
EdgeScheme scheme_from_name(const std::string& name);

// Architecture hyperparameters; shared by actor and critic heads.
struct ModelConfig {
  int local_obs_dim = 16;  // observation entries per voxel
  int embed_dim = 128;     // node embedding width
  int layers = 3;          // stacked attention layers
  int heads = 2;           // attention heads per layer
  int global_obs_dim = 3;  // robot-level observation entries
  std::vector<int> global_hidden = {64, 64};  // global-encoder MLP sizes
  std::vector<int> decoder_hidden = {64};     // actor/critic decoder MLP sizes
  EdgeScheme scheme = EdgeScheme::NodePair;
  bool full_connectivity = false;  // homogeneous-only dense attention mode
  double log_std = -0.7;           // fixed Gaussian log standard deviation
  Activation activation = Activation::Relu;  // nonlinearity in residual blocks
  int max_nodes = 49;                        // positional table rows

  int head_dim() const { return embed_dim / heads; }
  // throws std::invalid_argument when a field is out of range
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// One affine map; weights stored input-major so forward is x·W + b.
struct LinearParams {
  Tensor w;
  Tensor b;
};

// Query/key/value maps for one (layer, node type, head) triple.
struct HeadParams {
  LinearParams q;
  LinearParams k;
  LinearParams v;
};

struct LayerParams {
  std::vector<std::vector<HeadParams>> heads;  // [node type][head]
  std::vector<Tensor> msg;  // [edge type], embed×embed message matrices
  std::vector<LinearParams> out;  // [node type] residual output blocks
};

// Every learnable tensor in the policy.  The traversal order of visit() is
// the canonical serialization order; init, checkpointing and the optimizer
// all rely on it being stable.
struct Parameters {
  std::vector<LinearParams> encoder;  // [node type]
  Tensor pos_table;                   // max_nodes × embed
  std::vector<LayerParams> layers;
  std::vector<LinearParams> global_mlp;
  std::vector<LinearParams> actor;
  std::vector<LinearParams> critic;

  // walks tensors in canonical order; fn may replace the stored handle
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  // canonical (name, tensor) list
  std::vector<std::pair<std::string, Tensor>> flat() const;
  std::size_t tensor_count() const;
  std::size_t scalar_count() const;
};

// Glorot-uniform weights, zero biases, normal(0, 0.02) positional table.
// type_count/edge_types must match the counts implied by config.scheme.
Parameters init_parameters(const ModelConfig& config, int type_count, int edge_types,
                           std::uint64_t seed);

// Per-morphology constant structure shared by every forward pass: node type
// and position bookkeeping plus the {0,1} adjacency masks attention needs.
struct GraphLayout {
  int node_count = 0;
  std::vector<int> type_index;          // node -> type slot in [0, U)
  std::vector<std::int64_t> pos_index;  // node -> row of the positional table
  std::vector<int> present_types;       // type slots with at least one node
  std::vector<std::vector<std::int64_t>> rows_by_type;  // [type] -> node ids
  std::vector<std::int64_t> inverse_perm;  // node -> row in type-grouped stack
  Tensor adjacency;                        // n×n, [t][s] = 1 iff s ∈ N(t)
  std::vector<int> present_edge_types;
  std::map<int, Tensor> adjacency_by_edge_type;  // edge type -> n×n mask
};

GraphLayout make_layout(const HeteroGraph& graph, const ModelConfig& config);

// H⁰: per-type affine encoding of local observations plus positional rows.
Tensor encode(const Tensor& local_obs, const GraphLayout& layout, const Parameters& params,
              const ModelConfig& config);

// Per-head attention over each node's neighborhood: h matrices of shape n×n,
// rows indexed by target.  Off-neighborhood entries are exactly zero and
// every row of a head sums to one.
std::vector<Tensor> hetero_attention(const Tensor& H, const GraphLayout& layout,
                                     const Parameters& params, int layer,
                                     const ModelConfig& config);

// Messages grouped by edge type: for present type p, row s holds the vector
// node s sends along any type-p edge (source value projection times the
// type-p message matrix).
std::map<int, Tensor> hetero_messages(const Tensor& H, const GraphLayout& layout,
                                      const Parameters& params, int layer,
                                      const ModelConfig& config);

// Attention-weighted per-head message sum, then the residual output block:
// Hˡ(t) = MLP_τ(t)(σ(H̄(t))) + H^{l−1}(t).  When pre_residual is non-null it
// receives H̄ (the aggregate before activation, output block and residual).
Tensor hgt_aggregate(const Tensor& H_prev, const std::vector<Tensor>& alphas,
                     const std::map<int, Tensor>& messages, const GraphLayout& layout,
                     const Parameters& params, int layer, const ModelConfig& config,
                     Tensor* pre_residual = nullptr);

struct PolicyOutput {
  Tensor mu;     // n×1 action means
  Tensor value;  // 1×1 state-value estimate
  std::vector<Tensor> attention;                   // per layer, head-averaged, detached
  std::vector<std::vector<Tensor>> attention_heads;  // per layer, per head, detached
  Tensor node_features;  // final embeddings H^L, n×embed
};

PolicyOutput forward(const Tensor& local_obs, const Tensor& global_obs,
                     const GraphLayout& layout, const Parameters& params,
                     const ModelConfig& config);

// log N(actions | mu, exp(log_std)²·I) summed over nodes, as a 1×1 tensor on
// the active tape.  `actions` is a constant n×1 tensor.
Tensor gaussian_log_prob(const Tensor& mu, const Tensor& actions, double log_std);

// same quantity computed with plain doubles, matching the tensor path's
// accumulation order
double gaussian_log_prob_value(const std::vector<double>& mu, const std::vector<double>& actions,
                               double log_std);

// one draw per node: a_t = mu_t + exp(log_std)·ξ_t
std::vector<double> sample_action(const std::vector<double>& mu, double log_std,
                                  std::mt19937_64& rng);

// Versioned checkpoint container: magic, format version, JSON header with the
// model config and caller metadata, then named tensors in canonical order.
void save_checkpoint(const std::string& path, const Parameters& params,
                     const ModelConfig& config, const std::string& meta_json = "{}");

struct Checkpoint {
  Parameters params;
  ModelConfig config;
  std::string meta_json;
};

// throws std::runtime_error on bad magic/version, truncation, or name/shape
// disagreement; when `expected` is given, its config must equal the stored one
Checkpoint load_checkpoint(const std::string& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace voxctl
