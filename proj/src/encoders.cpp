#include "mindcine/encoders.hpp"

#include "mindcine/array_io.hpp"

#include <cmath>

namespace mindcine::enc {

data::Embedding SemanticEncoder::encode_one(const data::EegSegment& segment) {
  Graph g;
  const data::EegSegment* one[] = {&segment};
  Var out = encode(g, one);
  return data::Embedding{data::Modality::EegSemantic, out.value().row(0).transpose()};
}

// ---- MLP ---------------------------------------------------------------------------------------

MlpEncoder::MlpEncoder(const MlpConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.channels < 1 || cfg.samples < 1 || cfg.joint_dim < 1) throw ConfigError("mlp: invalid dims");
  Index in = cfg.channels * cfg.samples;
  int i = 0;
  for (Index width : cfg.hidden) {
    if (width < 1) throw ConfigError("mlp: hidden widths must be positive");
    layers_.emplace_back("mlp.layer" + std::to_string(i++), in, width, rng);
    in = width;
  }
  layers_.emplace_back("mlp.out", in, cfg.joint_dim, rng);
}

Var MlpEncoder::encode(Graph& g, std::span<const data::EegSegment* const> batch) {
  if (batch.empty()) throw EmptyInputError("mlp_encode: empty batch");
  const Index in = cfg_.channels * cfg_.samples;
  Matrix x(static_cast<Index>(batch.size()), in);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = *batch[b];
    if (s.channels() != cfg_.channels || s.samples() != cfg_.samples) {
      throw ShapeError("mlp_encode: segment " + s.clip_id + " is " + shape_str(s.data) + ", encoder expects " +
                       shape_str(cfg_.channels, cfg_.samples));
    }
    x.row(static_cast<Index>(b)) = data::flatten(s);
  }
  Var h = g.constant(std::move(x));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = layers_[l].forward(g, h);
    if (l + 1 < layers_.size()) h = ad::gelu(h);
  }
  return h;
}

nn::ParamList MlpEncoder::parameters() {
  nn::ParamList out;
  for (auto& l : layers_) l.collect(out);
  return out;
}

// ---- pretrained adapter ------------------------------------------------------------------------

void save_embedding_table(const EmbeddingTable& table, const std::filesystem::path& dir) {
  io::Bundle b;
  b.header["schema"] = "mindcine.embedding_table/1";
  for (const auto& [id, v] : table) b.arrays[id] = v.transpose();
  io::save_bundle(dir, b, io::DType::F32, "table.json");
}

EmbeddingTable load_embedding_table(const std::filesystem::path& dir) {
  io::Bundle b = io::load_bundle(dir, "table.json");
  EmbeddingTable t;
  Index dim = -1;
  for (auto& [id, m] : b.arrays) {
    if (m.rows() != 1) throw IngestError("embedding table: entry " + id + " is not a row vector");
    if (dim >= 0 && m.cols() != dim) throw IngestError("embedding table: entry " + id + " has inconsistent width");
    dim = m.cols();
    t[id] = m.row(0).transpose();
  }
  return t;
}

namespace {

Index table_dim(const EmbeddingTable& t) {
  if (t.empty()) throw EmptyInputError("adapter: empty embedding table");
  return t.begin()->second.size();
}

}  // namespace

PretrainedAdapter::PretrainedAdapter(EmbeddingTable table, Index joint_dim, std::mt19937_64& rng)
    : table_(std::move(table)), head_("adapter.head", table_dim(table_), joint_dim, rng) {}

const Vector& PretrainedAdapter::lookup(const std::string& clip_id) const {
  auto it = table_.find(clip_id);
  if (it == table_.end()) throw LookupError("adapter: clip '" + clip_id + "' is not in the embedding table");
  return it->second;
}

Var PretrainedAdapter::encode(Graph& g, std::span<const data::EegSegment* const> batch) {
  if (batch.empty()) throw EmptyInputError("adapter_encode: empty batch");
  Matrix x(static_cast<Index>(batch.size()), source_dim());
  for (std::size_t b = 0; b < batch.size(); ++b) x.row(static_cast<Index>(b)) = lookup(batch[b]->clip_id).transpose();
  return head_.forward(g, g.constant(std::move(x)));
}

data::Embedding PretrainedAdapter::adapter_encode(const std::string& clip_id) {
  Graph g;
  Var out = head_.forward(g, g.constant(lookup(clip_id).transpose()));
  return data::Embedding{data::Modality::EegSemantic, out.value().row(0).transpose()};
}

nn::ParamList PretrainedAdapter::parameters() {
  nn::ParamList out;
  head_.collect(out);
  return out;
}

// ---- EmbedNet ----------------------------------------------------------------------------------

Matrix stack_windows(const std::vector<Matrix>& windows) {
  if (windows.empty()) throw EmptyInputError("stack_windows: no windows");
  const Index c = windows.front().rows(), w = windows.front().cols();
  Matrix out(c * static_cast<Index>(windows.size()), w);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].rows() != c || windows[i].cols() != w) throw ShapeError("stack_windows: ragged windows");
    out.middleRows(static_cast<Index>(i) * c, c) = windows[i];
  }
  return out;
}

namespace {

void check_embednet(const EmbedNetConfig& c) {
  if (c.channels < 1 || c.window < 1 || c.temporal_filters < 1 || c.spatial_filters < 1 || c.embed_dim < 1) {
    throw ConfigError("embednet: sizes must be positive");
  }
  if (c.temporal_kernel < 1 || c.temporal_kernel > c.window) {
    throw ConfigError("embednet: temporal kernel must lie in [1, window]");
  }
  const Index len = c.window - c.temporal_kernel + 1;
  if (c.pool < 1 || c.pool > len) throw ConfigError("embednet: pool must lie in [1, window - kernel + 1]");
}

}  // namespace

EmbedNet::EmbedNet(const EmbedNetConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  check_embednet(cfg);
  temporal = ad::Parameter("embednet.temporal",
                           nn::init_weight(cfg.temporal_kernel, cfg.temporal_filters, rng).transpose());
  spatial = ad::Parameter("embednet.spatial",
                          nn::init_weight(cfg.temporal_filters * cfg.channels, cfg.spatial_filters, rng).transpose());
  spatial_bias = ad::Parameter("embednet.spatial_bias", Matrix::Zero(cfg.spatial_filters, 1));
  projection = nn::Linear("embednet.projection", cfg.spatial_filters * pooled_length(), cfg.embed_dim, rng);
}

Index EmbedNet::pooled_length() const { return (cfg_.window - cfg_.temporal_kernel + 1) / cfg_.pool; }

Var EmbedNet::forward(Graph& g, const Var& stacked) {
  if (stacked.cols() != cfg_.window || stacked.rows() % cfg_.channels != 0 || stacked.rows() == 0) {
    throw ShapeError("embednet: input " + shape_str(stacked.value()) + " is not a stack of " +
                     shape_str(cfg_.channels, cfg_.window) + " windows");
  }
  const Index n = stacked.rows() / cfg_.channels;
  const Index len = cfg_.window - cfg_.temporal_kernel + 1;
  const Index pooled = pooled_length();
  Var maps = ad::temporal_spatial_conv(stacked, g.param(temporal), g.param(spatial), cfg_.channels);
  maps = ad::gelu(ad::add_col(maps, g.param(spatial_bias)));
  Var pooled_maps = ad::avg_pool_cols(maps, len, cfg_.pool);  // G x (N*P)
  Var flat = ad::reshape(ad::transpose(pooled_maps), n, pooled * cfg_.spatial_filters);
  return projection.forward(g, flat);
}

Var EmbedNet::extract(Graph& g, const data::WindowedSegment& windows) {
  if (windows.windows.empty()) throw EmptyInputError("embednet_extract: no windows (t = 0)");
  return forward(g, g.constant(stack_windows(windows.windows)));
}

std::vector<data::Embedding> EmbedNet::embednet_extract(const data::WindowedSegment& windows) {
  Graph g;
  Var out = extract(g, windows);
  std::vector<data::Embedding> result;
  for (Index i = 0; i < out.rows(); ++i) {
    result.push_back(data::Embedding{data::Modality::Perceptual, out.value().row(i).transpose()});
  }
  return result;
}

nn::ParamList EmbedNet::parameters() {
  nn::ParamList out{&temporal, &spatial, &spatial_bias};
  projection.collect(out);
  return out;
}

}  // namespace mindcine::enc
