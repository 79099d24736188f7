#include "voxctl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "voxctl/rand.hpp"

namespace voxctl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kCheckpointMagic[8] = {'V', 'X', 'C', 'K', 'P', 'T', '0', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::Relu ? relu(x) : tanh(x);
}

// x·W + b chained through `layers`, activation between layers, none after
// the last
Tensor mlp_forward(const Tensor& x, const std::vector<LinearParams>& layers, Activation act) {
  Tensor h = x;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    h = add(matmul(h, layers[j].w), layers[j].b);
    if (j + 1 < layers.size()) h = apply_activation(h, act);
  }
  return h;
}

Tensor cat2(const Tensor& a, const Tensor& b, int axis) {
  Tensor parts[] = {a, b};
  return concat(parts, axis);
}

// one affine map per node type, applied row-wise by grouping rows of equal
// type, mapping each group, and restoring the original row order
Tensor typed_linear(const Tensor& x, const GraphLayout& layout,
                    const std::function<const LinearParams&(int)>& lin) {
  if (layout.present_types.size() == 1) {
    const LinearParams& l = lin(layout.present_types.front());
    return add(matmul(x, l.w), l.b);
  }
  std::vector<Tensor> parts;
  parts.reserve(layout.present_types.size());
  for (int u : layout.present_types) {
    const LinearParams& l = lin(u);
    parts.push_back(add(matmul(gather_rows(x, layout.rows_by_type[u]), l.w), l.b));
  }
  return gather_rows(concat(parts, 0), layout.inverse_perm);
}

void check_layer_index(int layer, const ModelConfig& config) {
  if (layer < 0 || layer >= config.layers)
    throw std::invalid_argument("layer index " + std::to_string(layer) + " outside [0, " +
                                std::to_string(config.layers) + ")");
}

void check_node_matrix(const Tensor& t, const GraphLayout& layout, int64_t cols,
                       const char* what) {
  if (t.shape().size() != 2 || t.rows() != layout.node_count || t.cols() != cols)
    throw std::invalid_argument(std::string(what) + ": expected " +
                                std::to_string(layout.node_count) + "x" + std::to_string(cols));
}

// canonical traversal shared by the const and mutable visit overloads; the
// order here defines the serialization and init order
template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& fn) {
  for (std::size_t u = 0; u < p.encoder.size(); ++u) {
    std::string base = "encoder.u" + std::to_string(u);
    fn(base + ".w", p.encoder[u].w);
    fn(base + ".b", p.encoder[u].b);
  }
  fn("pos_table", p.pos_table);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    std::string lb = "layer" + std::to_string(l);
    auto& layer = p.layers[l];
    for (std::size_t u = 0; u < layer.heads.size(); ++u) {
      for (std::size_t i = 0; i < layer.heads[u].size(); ++i) {
        std::string hb = lb + ".u" + std::to_string(u) + ".h" + std::to_string(i);
        auto& head = layer.heads[u][i];
        fn(hb + ".q.w", head.q.w);
        fn(hb + ".q.b", head.q.b);
        fn(hb + ".k.w", head.k.w);
        fn(hb + ".k.b", head.k.b);
        fn(hb + ".v.w", head.v.w);
        fn(hb + ".v.b", head.v.b);
      }
    }
    for (std::size_t m = 0; m < layer.msg.size(); ++m) fn(lb + ".msg" + std::to_string(m), layer.msg[m]);
    for (std::size_t u = 0; u < layer.out.size(); ++u) {
      std::string ob = lb + ".u" + std::to_string(u) + ".out";
      fn(ob + ".w", layer.out[u].w);
      fn(ob + ".b", layer.out[u].b);
    }
  }
  auto mlp = [&](const char* name, auto& lin_layers) {
    for (std::size_t j = 0; j < lin_layers.size(); ++j) {
      std::string base = std::string(name) + ".l" + std::to_string(j);
      fn(base + ".w", lin_layers[j].w);
      fn(base + ".b", lin_layers[j].b);
    }
  };
  mlp("global", p.global_mlp);
  mlp("actor", p.actor);
  mlp("critic", p.critic);
}

// ------------------------------------------------- binary serialization ----

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

void read_exact(std::istream& is, char* buf, std::streamsize n, const char* what) {
  is.read(buf, n);
  if (is.gcount() != n) throw std::runtime_error(std::string("checkpoint truncated in ") + what);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_u64(is, what));
}

nlohmann::json config_to_json_obj(const ModelConfig& c) {
  return nlohmann::json{{"local_obs_dim", c.local_obs_dim},
                        {"embed_dim", c.embed_dim},
                        {"layers", c.layers},
                        {"heads", c.heads},
                        {"global_obs_dim", c.global_obs_dim},
                        {"global_hidden", c.global_hidden},
                        {"decoder_hidden", c.decoder_hidden},
                        {"edge_scheme", scheme_name(c.scheme)},
                        {"full_connectivity", c.full_connectivity},
                        {"log_std", c.log_std},
                        {"activation", activation_name(c.activation)},
                        {"max_nodes", c.max_nodes}};
}

ModelConfig config_from_json_obj(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
  ModelConfig c;
  c.local_obs_dim = j.value("local_obs_dim", c.local_obs_dim);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.global_obs_dim = j.value("global_obs_dim", c.global_obs_dim);
  c.global_hidden = j.value("global_hidden", c.global_hidden);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  if (j.contains("edge_scheme")) c.scheme = scheme_from_name(j.at("edge_scheme").get<std::string>());
  c.full_connectivity = j.value("full_connectivity", c.full_connectivity);
  c.log_std = j.value("log_std", c.log_std);
  if (j.contains("activation"))
    c.activation = activation_from_name(j.at("activation").get<std::string>());
  c.max_nodes = j.value("max_nodes", c.max_nodes);
  c.validate();
  return c;
}

}  // namespace

std::string activation_name(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + name + "' (want relu or tanh)");
}

std::string scheme_name(EdgeScheme s) {
  switch (s) {
    case EdgeScheme::NodePair: return "node_pair";
    case EdgeScheme::Direction: return "direction";
    case EdgeScheme::Homogeneous: return "homogeneous";
  }
  throw std::invalid_argument("unknown edge scheme value");
}

EdgeScheme scheme_from_name(const std::string& name) {
  if (name == "node_pair") return EdgeScheme::NodePair;
  if (name == "direction") return EdgeScheme::Direction;
  if (name == "homogeneous") return EdgeScheme::Homogeneous;
  throw std::invalid_argument("unknown edge scheme '" + name +
                              "' (want node_pair, direction or homogeneous)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw std::invalid_argument(std::string("model config: ") + what + " must be positive");
  };
  positive(local_obs_dim, "local_obs_dim");
  positive(embed_dim, "embed_dim");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(global_obs_dim, "global_obs_dim");
  positive(max_nodes, "max_nodes");
  if (embed_dim % heads != 0)
    throw std::invalid_argument("model config: embed_dim must be divisible by heads");
  if (global_hidden.empty())
    throw std::invalid_argument("model config: global_hidden must have at least one layer");
  for (int v : global_hidden) positive(v, "global_hidden entry");
  for (int v : decoder_hidden) positive(v, "decoder_hidden entry");
  if (full_connectivity && scheme != EdgeScheme::Homogeneous)
    throw std::invalid_argument("model config: full_connectivity requires the homogeneous scheme");
  if (!std::isfinite(log_std)) throw std::invalid_argument("model config: log_std must be finite");
}

std::string config_to_json(const ModelConfig& config) { return config_to_json_obj(config).dump(); }

ModelConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("model config: ") + e.what());
  }
  return config_from_json_obj(j);
}

void Parameters::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_impl(*this, fn);
}

void Parameters::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_impl(*this, fn);
}

std::vector<std::pair<std::string, Tensor>> Parameters::flat() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit([&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::size_t Parameters::tensor_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor&) { ++n; });
  return n;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

Parameters init_parameters(const ModelConfig& config, int type_count, int edge_types,
                           std::uint64_t seed) {
  config.validate();
  if (type_count != node_type_count(config.scheme) || edge_types != edge_type_count(config.scheme))
    throw std::invalid_argument("init_parameters: type/edge counts do not match the edge scheme");

  std::mt19937_64 rng(seed);
  auto glorot = [&rng](int64_t fan_in, int64_t fan_out) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(fan_in * fan_out));
    for (double& x : v) x = rnd::uniform_range(rng, -limit, limit);
    Tensor t = Tensor::from({fan_in, fan_out}, std::move(v));
    return t.mark_parameter();
  };
  auto zero_bias = [](int64_t n) { return Tensor::zeros({1, n}).mark_parameter(); };
  auto linear = [&](int64_t in, int64_t out) { return LinearParams{glorot(in, out), zero_bias(out)}; };

  const int64_t embed = config.embed_dim;
  const int64_t hd = config.head_dim();
  Parameters p;
  // creation order below mirrors visit_impl so draws land deterministically
  p.encoder.reserve(type_count);
  for (int u = 0; u < type_count; ++u) p.encoder.push_back(linear(config.local_obs_dim, embed));
  {
    std::vector<double> v(static_cast<std::size_t>(config.max_nodes) * embed);
    for (double& x : v) x = 0.02 * rnd::normal01(rng);
    p.pos_table = Tensor::from({config.max_nodes, embed}, std::move(v)).mark_parameter();
  }
  p.layers.resize(config.layers);
  for (auto& layer : p.layers) {
    layer.heads.resize(type_count);
    for (auto& per_type : layer.heads) {
      per_type.reserve(config.heads);
      for (int i = 0; i < config.heads; ++i)
        per_type.push_back(HeadParams{linear(embed, hd), linear(embed, hd), linear(embed, hd)});
    }
    layer.msg.reserve(edge_types);
    for (int m = 0; m < edge_types; ++m) layer.msg.push_back(glorot(embed, embed));
    layer.out.reserve(type_count);
    for (int u = 0; u < type_count; ++u) layer.out.push_back(linear(embed, embed));
  }
  auto build_mlp = [&](int64_t in, const std::vector<int>& hidden, int64_t out_dim) {
    std::vector<LinearParams> layers;
    int64_t cur = in;
    for (int h : hidden) {
      layers.push_back(linear(cur, h));
      cur = h;
    }
    layers.push_back(linear(cur, out_dim));
    return layers;
  };
  // the global encoder's last hidden size is its output width
  {
    std::vector<int> front(config.global_hidden.begin(), config.global_hidden.end() - 1);
    p.global_mlp = build_mlp(config.global_obs_dim, front, config.global_hidden.back());
  }
  const int64_t dec_in = embed + config.global_hidden.back();
  p.actor = build_mlp(dec_in, config.decoder_hidden, 1);
  p.critic = build_mlp(dec_in, config.decoder_hidden, 1);
  return p;
}

GraphLayout make_layout(const HeteroGraph& graph, const ModelConfig& config) {
  config.validate();
  if (graph.scheme != config.scheme)
    throw std::invalid_argument("make_layout: graph was built under a different edge scheme");
  if (graph.full_connectivity != config.full_connectivity)
    throw std::invalid_argument("make_layout: graph connectivity mode does not match the config");
  const int n = graph.node_count();
  if (n > config.max_nodes)
    throw std::invalid_argument("make_layout: " + std::to_string(n) + " nodes exceed max_nodes " +
                                std::to_string(config.max_nodes));

  GraphLayout layout;
  layout.node_count = n;
  layout.type_index.resize(n);
  layout.pos_index.resize(n);
  layout.rows_by_type.assign(graph.node_type_count, {});
  for (int i = 0; i < n; ++i) {
    layout.type_index[i] = graph.node_type_index(i);
    layout.pos_index[i] = graph.nodes[i].row * kMaxGridDim + graph.nodes[i].col;
    if (layout.pos_index[i] >= config.max_nodes)
      throw std::invalid_argument("make_layout: node position outside the positional table");
    layout.rows_by_type[layout.type_index[i]].push_back(i);
  }
  layout.inverse_perm.resize(n);
  int64_t slot = 0;
  for (int u = 0; u < graph.node_type_count; ++u) {
    if (layout.rows_by_type[u].empty()) continue;
    layout.present_types.push_back(u);
    for (int64_t node : layout.rows_by_type[u]) layout.inverse_perm[node] = slot++;
  }

  std::vector<double> adj(static_cast<std::size_t>(n) * n, 0.0);
  std::map<int, std::vector<double>> by_type;
  for (const GraphEdge& e : graph.edges) {
    adj[static_cast<std::size_t>(e.target) * n + e.source] = 1.0;
    auto [it, fresh] = by_type.try_emplace(e.edge_type,
                                           std::vector<double>(static_cast<std::size_t>(n) * n, 0.0));
    it->second[static_cast<std::size_t>(e.target) * n + e.source] = 1.0;
  }
  layout.adjacency = Tensor::from({n, n}, std::move(adj));
  for (auto& [type, mask] : by_type) {
    layout.present_edge_types.push_back(type);
    layout.adjacency_by_edge_type.emplace(type, Tensor::from({n, n}, std::move(mask)));
  }
  return layout;
}

Tensor encode(const Tensor& local_obs, const GraphLayout& layout, const Parameters& params,
              const ModelConfig& config) {
  check_node_matrix(local_obs, layout, config.local_obs_dim, "encode: local observations");
  Tensor h = typed_linear(local_obs, layout,
                          [&](int u) -> const LinearParams& { return params.encoder.at(u); });
  return add(h, gather_rows(params.pos_table, layout.pos_index));
}

std::vector<Tensor> hetero_attention(const Tensor& H, const GraphLayout& layout,
                                     const Parameters& params, int layer,
                                     const ModelConfig& config) {
  check_layer_index(layer, config);
  check_node_matrix(H, layout, config.embed_dim, "hetero_attention: embeddings");
  const LayerParams& lp = params.layers.at(layer);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  std::vector<Tensor> alphas;
  alphas.reserve(config.heads);
  for (int i = 0; i < config.heads; ++i) {
    Tensor q = typed_linear(H, layout,
                            [&](int u) -> const LinearParams& { return lp.heads.at(u).at(i).q; });
    Tensor k = typed_linear(H, layout,
                            [&](int u) -> const LinearParams& { return lp.heads.at(u).at(i).k; });
    Tensor scores = scalar_mul(matmul(q, k, /*transpose_b=*/true), scale);
    alphas.push_back(masked_softmax(scores, layout.adjacency));
  }
  return alphas;
}

std::map<int, Tensor> hetero_messages(const Tensor& H, const GraphLayout& layout,
                                      const Parameters& params, int layer,
                                      const ModelConfig& config) {
  check_layer_index(layer, config);
  check_node_matrix(H, layout, config.embed_dim, "hetero_messages: embeddings");
  const LayerParams& lp = params.layers.at(layer);
  std::vector<Tensor> values;
  values.reserve(config.heads);
  for (int i = 0; i < config.heads; ++i)
    values.push_back(typed_linear(
        H, layout, [&](int u) -> const LinearParams& { return lp.heads.at(u).at(i).v; }));
  Tensor v_concat = config.heads == 1 ? values.front() : concat(values, 1);
  std::map<int, Tensor> out;
  for (int type : layout.present_edge_types) {
    if (type < 0 || type >= static_cast<int>(lp.msg.size()))
      throw std::invalid_argument("hetero_messages: edge type " + std::to_string(type) +
                                  " has no message matrix");
    out.emplace(type, matmul(v_concat, lp.msg[type]));
  }
  return out;
}

Tensor hgt_aggregate(const Tensor& H_prev, const std::vector<Tensor>& alphas,
                     const std::map<int, Tensor>& messages, const GraphLayout& layout,
                     const Parameters& params, int layer, const ModelConfig& config,
                     Tensor* pre_residual) {
  check_layer_index(layer, config);
  check_node_matrix(H_prev, layout, config.embed_dim, "hgt_aggregate: embeddings");
  if (static_cast<int>(alphas.size()) != config.heads)
    throw std::invalid_argument("hgt_aggregate: expected one attention matrix per head");
  const int64_t hd = config.head_dim();
  std::vector<Tensor> head_outs;
  head_outs.reserve(config.heads);
  for (int i = 0; i < config.heads; ++i) {
    Tensor acc;
    for (const auto& [type, message] : messages) {
      // keep only this edge type's entries of the attention row, then the
      // matmul sums weighted per-head message slices over sources
      Tensor weights = mul(alphas[i], layout.adjacency_by_edge_type.at(type));
      Tensor term = matmul(weights, slice(message, 1, i * hd, hd));
      acc = acc.defined() ? add(acc, term) : term;
    }
    if (!acc.defined())
      throw std::invalid_argument("hgt_aggregate: no messages for any present edge type");
    head_outs.push_back(acc);
  }
  Tensor hbar = config.heads == 1 ? head_outs.front() : concat(head_outs, 1);
  if (pre_residual) *pre_residual = hbar;
  const LayerParams& lp = params.layers.at(layer);
  Tensor blended = typed_linear(apply_activation(hbar, config.activation), layout,
                                [&](int u) -> const LinearParams& { return lp.out.at(u); });
  return add(blended, H_prev);
}

PolicyOutput forward(const Tensor& local_obs, const Tensor& global_obs, const GraphLayout& layout,
                     const Parameters& params, const ModelConfig& config) {
  if (global_obs.shape().size() != 2 || global_obs.rows() != 1 ||
      global_obs.cols() != config.global_obs_dim)
    throw std::invalid_argument("forward: global observation must be 1x" +
                                std::to_string(config.global_obs_dim));

  PolicyOutput out;
  Tensor h = encode(local_obs, layout, params, config);
  for (int l = 0; l < config.layers; ++l) {
    std::vector<Tensor> alphas = hetero_attention(h, layout, params, l, config);
    std::map<int, Tensor> messages = hetero_messages(h, layout, params, l, config);
    h = hgt_aggregate(h, alphas, messages, layout, params, l, config);

    Tensor avg = alphas.front();
    for (int i = 1; i < config.heads; ++i) avg = add(avg, alphas[i]);
    out.attention.push_back(detach(scalar_mul(avg, 1.0 / config.heads)));
    std::vector<Tensor> heads;
    heads.reserve(alphas.size());
    for (const Tensor& a : alphas) heads.push_back(detach(a));
    out.attention_heads.push_back(std::move(heads));
  }
  out.node_features = h;

  Tensor global = mlp_forward(global_obs, params.global_mlp, config.activation);
  // copy the single global row once per node so it can join each node's
  // feature row; matmul keeps gradients flowing into the global encoder
  Tensor ones = Tensor::full({layout.node_count, 1}, 1.0);
  Tensor global_rows = matmul(ones, global);
  out.mu = mlp_forward(cat2(h, global_rows, 1), params.actor, config.activation);
  out.value = mlp_forward(cat2(mean(h, 0), global, 1), params.critic, config.activation);
  return out;
}

Tensor gaussian_log_prob(const Tensor& mu, const Tensor& actions, double log_std) {
  if (mu.shape() != actions.shape())
    throw std::invalid_argument("gaussian_log_prob: mu/action shape mismatch");
  const double s = std::exp(log_std);
  Tensor z = scalar_mul(sub(actions, mu), 1.0 / s);
  Tensor total = scalar_mul(sum(mul(z, z)), -0.5);
  const double per_node = -log_std - 0.5 * std::log(2.0 * kPi);
  return add(total, Tensor::scalar(static_cast<double>(mu.size()) * per_node));
}

double gaussian_log_prob_value(const std::vector<double>& mu, const std::vector<double>& actions,
                               double log_std) {
  if (mu.size() != actions.size())
    throw std::invalid_argument("gaussian_log_prob_value: mu/action size mismatch");
  const double s = std::exp(log_std);
  const double inv = 1.0 / s;
  double total = 0.0;
  for (std::size_t t = 0; t < mu.size(); ++t) {
    double z = (actions[t] - mu[t]) * inv;
    total += z * z;
  }
  const double per_node = -log_std - 0.5 * std::log(2.0 * kPi);
  return total * -0.5 + static_cast<double>(mu.size()) * per_node;
}

std::vector<double> sample_action(const std::vector<double>& mu, double log_std,
                                  std::mt19937_64& rng) {
  const double s = std::exp(log_std);
  std::vector<double> a(mu.size());
  for (std::size_t t = 0; t < mu.size(); ++t) a[t] = mu[t] + s * rnd::normal01(rng);
  return a;
}

void save_checkpoint(const std::string& path, const Parameters& params, const ModelConfig& config,
                     const std::string& meta_json) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("save_checkpoint: meta is not valid JSON: ") + e.what());
  }
  nlohmann::json header{{"model", config_to_json_obj(config)}, {"meta", meta}};
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(os, kCheckpointVersion);
  put_u64(os, header_text.size());
  os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  put_u64(os, params.tensor_count());
  params.visit([&](const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
    for (double v : t.data()) put_f64(os, v);
  });
  if (!os) throw std::runtime_error("save_checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");

  char magic[sizeof(kCheckpointMagic)];
  read_exact(is, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint (bad magic)");
  std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version));

  std::uint64_t header_len = get_u64(is, "header length");
  std::string header_text(header_len, '\0');
  read_exact(is, header_text.data(), static_cast<std::streamsize>(header_len), "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("load_checkpoint: corrupt header: ") + e.what());
  }
  if (!header.contains("model")) throw std::runtime_error("load_checkpoint: header lacks a model config");

  Checkpoint ck;
  try {
    ck.config = config_from_json_obj(header.at("model"));
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("load_checkpoint: ") + e.what());
  }
  ck.meta_json = header.value("meta", nlohmann::json::object()).dump();
  if (expected && !(*expected == ck.config))
    throw std::runtime_error("load_checkpoint: stored config does not match the expected one (" +
                             config_to_json(ck.config) + " vs " + config_to_json(*expected) + ")");

  // a zero-seeded skeleton supplies the expected tensor names and shapes
  ck.params = init_parameters(ck.config, node_type_count(ck.config.scheme),
                              edge_type_count(ck.config.scheme), 0);
  std::uint64_t stored = get_u64(is, "tensor count");
  if (stored != ck.params.tensor_count())
    throw std::runtime_error("load_checkpoint: tensor count " + std::to_string(stored) +
                             " does not match the config's " +
                             std::to_string(ck.params.tensor_count()));
  ck.params.visit([&](const std::string& name, Tensor& t) {
    std::uint32_t name_len = get_u32(is, "tensor name length");
    std::string stored_name(name_len, '\0');
    read_exact(is, stored_name.data(), name_len, "tensor name");
    if (stored_name != name)
      throw std::runtime_error("load_checkpoint: expected tensor '" + name + "', found '" +
                               stored_name + "'");
    std::uint32_t ndim = get_u32(is, "tensor rank");
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<int64_t>(get_u64(is, "tensor dims"));
    if (shape != t.shape())
      throw std::runtime_error("load_checkpoint: tensor '" + name + "' has an unexpected shape");
    std::vector<double> values(static_cast<std::size_t>(t.size()));
    for (double& v : values) v = get_f64(is, name.c_str());
    t = Tensor::from(std::move(shape), std::move(values)).mark_parameter();
  });
  // nothing should remain
  char extra;
  if (is.read(&extra, 1); is.gcount() != 0)
    throw std::runtime_error("load_checkpoint: trailing bytes after the last tensor");
  return ck;
}

}  // namespace voxctl
