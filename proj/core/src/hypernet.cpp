#include "vedit/hypernet.hpp"

#include "vedit/checkpoint.hpp"
#include "vedit/io_util.hpp"

#include <random>
#include <stdexcept>

namespace vedit {

namespace {

ParamStore build_params(const HypernetConfig& cfg, HypernetLayout* lay) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed ^ 0x6879706572ULL);
  ParamStore s;
  HypernetLayout l;
  l.tokens = s.add({"tokens", 0, Sublayer::kOther, TensorRole::kWeight},
                   nn::normal_matrix(cfg.num_tokens, cfg.embed_dim, 1.0, rng));
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    l.blocks.push_back(nn::add_block_params(s, "blocks." + std::to_string(b) + ".", b, cfg.embed_dim,
                                            cfg.hidden_dim, rng));
  }
  l.norm_w = s.add({"norm.weight", 0, Sublayer::kOther, TensorRole::kWeight}, ad::Matrix::Ones(1, cfg.embed_dim));
  l.norm_b = s.add({"norm.bias", 0, Sublayer::kOther, TensorRole::kBias}, ad::Matrix::Zero(1, cfg.embed_dim));
  l.head_w = s.add({"head.weight", 0, Sublayer::kOther, TensorRole::kWeight},
                   nn::normal_matrix(cfg.mlp_dim, cfg.embed_dim, cfg.head_init_std, rng));
  l.head_b = s.add({"head.bias", 0, Sublayer::kOther, TensorRole::kBias}, ad::Matrix::Zero(1, cfg.mlp_dim));
  if (lay) *lay = l;
  return s;
}

void header_put(std::map<std::string, std::string>& h, const HypernetConfig& c) {
  h["hyper.num_blocks"] = std::to_string(c.num_blocks);
  h["hyper.embed_dim"] = std::to_string(c.embed_dim);
  h["hyper.mlp_dim"] = std::to_string(c.mlp_dim);
  h["hyper.num_tokens"] = std::to_string(c.num_tokens);
  h["hyper.num_heads"] = std::to_string(c.num_heads);
  h["hyper.hidden_dim"] = std::to_string(c.hidden_dim);
  h["hyper.feature_rows"] = std::to_string(c.feature_rows);
  h["hyper.head_init_std"] = io::format_double(c.head_init_std);
  h["hyper.seed"] = std::to_string(c.seed);
}

HypernetConfig header_get(const std::map<std::string, std::string>& h) {
  auto need = [&](const char* k) -> const std::string& {
    auto it = h.find(k);
    if (it == h.end()) throw std::runtime_error(std::string("hypernetwork checkpoint missing '") + k + "'");
    return it->second;
  };
  HypernetConfig c;
  c.num_blocks = std::stoi(need("hyper.num_blocks"));
  c.embed_dim = std::stoi(need("hyper.embed_dim"));
  c.mlp_dim = std::stoi(need("hyper.mlp_dim"));
  c.num_tokens = std::stoi(need("hyper.num_tokens"));
  c.num_heads = std::stoi(need("hyper.num_heads"));
  c.hidden_dim = std::stoi(need("hyper.hidden_dim"));
  c.feature_rows = std::stoi(need("hyper.feature_rows"));
  c.head_init_std = io::parse_double(need("hyper.head_init_std"));
  c.seed = std::stoull(need("hyper.seed"));
  c.validate();
  return c;
}

}  // namespace

void HypernetConfig::validate() const {
  if (num_blocks < 1) throw std::invalid_argument("HypernetConfig: num_blocks must be >= 1");
  if (embed_dim < 1 || mlp_dim < 1 || num_tokens < 1 || num_heads < 1 || hidden_dim < 1 || feature_rows < 1) {
    throw std::invalid_argument("HypernetConfig: dimensions must be >= 1");
  }
  if (embed_dim % num_heads != 0) throw std::invalid_argument("HypernetConfig: embed_dim not divisible by heads");
  if (!(head_init_std >= 0)) throw std::invalid_argument("HypernetConfig: head_init_std must be >= 0");
}

HypernetConfig HypernetConfig::for_model(const ViTConfig& base, const EditScope& scope, std::uint64_t seed) {
  HypernetConfig c;
  c.embed_dim = base.embed_dim;
  c.mlp_dim = base.mlp_dim;
  c.num_tokens = static_cast<int>(scope.layers().size());
  c.num_heads = base.num_heads;
  c.hidden_dim = 2 * base.embed_dim;
  c.feature_rows = base.seq_len();
  c.seed = seed;
  return c;
}

HypernetState::HypernetState(HypernetConfig cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  ParamStore ref = build_params(cfg_, &layout_);
  if (ref.size() != params_.size()) throw std::invalid_argument("HypernetState: parameter count mismatch");
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref.info(i).name != params_.info(i).name || ref.value(i).rows() != params_.value(i).rows() ||
        ref.value(i).cols() != params_.value(i).cols()) {
      throw std::invalid_argument("HypernetState: parameter '" + ref.info(i).name + "' does not match config");
    }
  }
}

HypernetState init_hypernet(const HypernetConfig& cfg) { return HypernetState(cfg, build_params(cfg, nullptr)); }

ad::Var hypernet_graph(const HypernetState& state, const nn::ParamVars& p, const ad::Matrix& features) {
  return hypernet_graph_batch(state, p, {&features});
}

ad::Var hypernet_graph_batch(const HypernetState& state, const nn::ParamVars& p,
                             const std::vector<const ad::Matrix*>& features) {
  const auto& c = state.config();
  const auto& l = state.layout();
  if (features.empty()) throw std::invalid_argument("hypernet: empty batch");
  const ad::Index rows = c.feature_rows, len = rows + c.num_tokens;
  const ad::Index n = ad::Index(features.size());
  // Tokens first so the final block can be trimmed to the token rows.
  ad::Matrix feats(rows * n, c.embed_dim);
  std::vector<ad::Index> feat_rows, token_rows, token_src;
  for (ad::Index s = 0; s < n; ++s) {
    const ad::Matrix& f = *features[std::size_t(s)];
    if (f.rows() != rows || f.cols() != c.embed_dim) {
      throw std::invalid_argument("hypernet: feature shape " + std::to_string(f.rows()) + "x" +
                                  std::to_string(f.cols()) + " does not match config");
    }
    feats.middleRows(s * rows, rows) = f;
    for (ad::Index i = 0; i < c.num_tokens; ++i) {
      token_rows.push_back(s * len + i);
      token_src.push_back(i);
    }
    for (ad::Index i = 0; i < rows; ++i) feat_rows.push_back(s * len + c.num_tokens + i);
  }
  ad::Var h = ad::add(ad::scatter_rows(ad::gather_rows(p[l.tokens], token_src), token_rows, len * n),
                      ad::scatter_rows(ad::Var::constant(std::move(feats)), std::move(feat_rows), len * n));
  for (int b = 1; b <= c.num_blocks; ++b) {
    h = nn::transformer_block(p, l.blocks[std::size_t(b - 1)], h, c.num_heads, false, static_cast<int>(n));
  }
  ad::Var tok = ad::gather_rows(h, token_rows);
  ad::Var out = nn::linear(nn::layer_norm(tok, p[l.norm_w], p[l.norm_b]), p[l.head_w], p[l.head_b]);
  // (n*tokens x mlp_dim), row-major, so each sample's tokens flatten layer-major.
  return ad::reshape(out, n, ad::Index(c.output_size()));
}

ContinuousMask hypernet_forward(const HypernetState& state, const ad::Matrix& features) {
  if (!features.allFinite()) throw std::invalid_argument("hypernet_forward: non-finite features");
  ad::NoGradGuard guard;
  const ad::Matrix v = hypernet_graph(state, state.params().vars(), features).value();
  return {std::vector<double>(v.data(), v.data() + v.size()), MaskSource::kHypernetwork};
}

ContinuousMask hypernet_forward(const HypernetState& state, const BaseModel& base, const Image& image) {
  return hypernet_forward(state, trace_forward(base, image, base.config().num_blocks + 1).features);
}

void save_hypernet(const std::string& path, const HypernetState& state, const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.header = extra;
  ckpt.header["kind"] = "hypernet";
  header_put(ckpt.header, state.config());
  const auto& p = state.params();
  for (std::size_t i = 0; i < p.size(); ++i) ckpt.tensors.emplace_back(p.info(i).name, p.value(i));
  write_checkpoint(path, ckpt);
}

HypernetState load_hypernet(const std::string& path, std::map<std::string, std::string>* header) {
  const Checkpoint ckpt = read_checkpoint(path);
  auto it = ckpt.header.find("kind");
  if (it == ckpt.header.end() || it->second != "hypernet") {
    throw std::runtime_error(path + ": not a hypernetwork checkpoint");
  }
  const HypernetConfig cfg = header_get(ckpt.header);
  HypernetState st(cfg, params_from_checkpoint(ckpt, init_hypernet(cfg).params()));
  if (header) *header = ckpt.header;
  return st;
}

}  // namespace vedit
