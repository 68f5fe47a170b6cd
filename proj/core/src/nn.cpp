#include "vedit/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vedit::nn {

ad::Matrix normal_matrix(int rows, int cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  ad::Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

BlockParams add_block_params(ParamStore& store, const std::string& prefix, int block, int dim, int mlp_dim,
                             std::mt19937_64& rng, double init_std) {
  using W = TensorRole;
  BlockParams b{};
  auto ones = [](int n) { return ad::Matrix::Ones(1, n).eval(); };
  auto zeros = [](int n) { return ad::Matrix::Zero(1, n).eval(); };
  b.norm1_w = store.add({prefix + "norm1.weight", block, Sublayer::kOther, W::kWeight}, ones(dim));
  b.norm1_b = store.add({prefix + "norm1.bias", block, Sublayer::kOther, W::kBias}, zeros(dim));
  b.qkv_w = store.add({prefix + "attn.qkv.weight", block, Sublayer::kMsa, W::kWeight},
                      normal_matrix(3 * dim, dim, init_std, rng));
  b.qkv_b = store.add({prefix + "attn.qkv.bias", block, Sublayer::kMsa, W::kBias}, zeros(3 * dim));
  b.proj_w = store.add({prefix + "attn.proj.weight", block, Sublayer::kMsa, W::kWeight},
                       normal_matrix(dim, dim, init_std, rng));
  b.proj_b = store.add({prefix + "attn.proj.bias", block, Sublayer::kMsa, W::kBias}, zeros(dim));
  b.norm2_w = store.add({prefix + "norm2.weight", block, Sublayer::kOther, W::kWeight}, ones(dim));
  b.norm2_b = store.add({prefix + "norm2.bias", block, Sublayer::kOther, W::kBias}, zeros(dim));
  b.fc1_w = store.add({prefix + "mlp.fc1.weight", block, Sublayer::kFc1, W::kWeight},
                      normal_matrix(mlp_dim, dim, init_std, rng));
  b.fc1_b = store.add({prefix + "mlp.fc1.bias", block, Sublayer::kFc1, W::kBias}, zeros(mlp_dim));
  b.fc2_w = store.add({prefix + "mlp.fc2.weight", block, Sublayer::kFc2, W::kWeight},
                      normal_matrix(dim, mlp_dim, init_std, rng));
  b.fc2_b = store.add({prefix + "mlp.fc2.bias", block, Sublayer::kFc2, W::kBias}, zeros(dim));
  return b;
}

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) { return ad::add_row(ad::matmul_nt(x, w), b); }

ad::Var layer_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, double eps) {
  const double inv_n = 1.0 / static_cast<double>(x.cols());
  ad::Var mean = ad::scale(ad::row_sum(x), inv_n);
  ad::Var centered = ad::add_col(x, ad::neg(mean));
  ad::Var var = ad::scale(ad::row_sum(ad::square(centered)), inv_n);
  ad::Var inv_std = ad::rsqrt(ad::add_scalar(var, eps));
  return ad::add_row(ad::mul_row(ad::mul_col(centered, inv_std), gamma), beta);
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

struct GeluTerms {
  Eigen::ArrayXXd t, du;  // tanh(u) and du/dx
};

GeluTerms gelu_terms(const ad::Matrix& x) {
  const auto a = x.array();
  const Eigen::ArrayXXd x2 = a.square();
  const Eigen::ArrayXXd u = kGeluC * (a + kGeluA * x2 * a);
  // tanh through exp keeps the evaluation vectorized.
  GeluTerms r{1.0 - 2.0 / ((2.0 * u).exp() + 1.0), kGeluC * (1.0 + 3.0 * kGeluA * x2)};
  return r;
}

ad::Var gelu_second(const ad::Var& x) {
  const GeluTerms g = gelu_terms(x.value());
  const auto a = x.value().array();
  const Eigen::ArrayXXd s = 1.0 - g.t.square();
  ad::Matrix v = (s * g.du + 0.5 * a * (-2.0 * g.t * s * g.du.square() + s * 6.0 * kGeluA * kGeluC * a)).matrix();
  return ad::make_op(std::move(v), {x}, [](const ad::Var&, const ad::Var&, const std::vector<char>&) -> std::vector<ad::Var> {
    throw std::logic_error("gelu: derivatives beyond second order are not implemented");
  });
}

ad::Var gelu_first(const ad::Var& x) {
  const GeluTerms g = gelu_terms(x.value());
  const auto a = x.value().array();
  ad::Matrix v = (0.5 * (1.0 + g.t) + 0.5 * a * (1.0 - g.t.square()) * g.du).matrix();
  return ad::make_op(std::move(v), {x}, [x](const ad::Var& grad, const ad::Var&, const std::vector<char>&) {
    return std::vector<ad::Var>{ad::mul(grad, gelu_second(x))};
  });
}

}  // namespace

ad::Var gelu(const ad::Var& x) {
  const GeluTerms g = gelu_terms(x.value());
  ad::Matrix v = (0.5 * x.value().array() * (1.0 + g.t)).matrix();
  return ad::make_op(std::move(v), {x}, [x](const ad::Var& grad, const ad::Var&, const std::vector<char>&) {
    return std::vector<ad::Var>{ad::mul(grad, gelu_first(x))};
  });
}

ad::Var first_rows(const ad::Var& x, int seqs) {
  if (seqs == 1) return ad::slice_rows(x, 0, 1);
  const ad::Index len = x.rows() / seqs;
  std::vector<ad::Index> idx(static_cast<std::size_t>(seqs), 0);
  for (int s = 0; s < seqs; ++s) idx[std::size_t(s)] = s * len;
  return ad::gather_rows(x, std::move(idx));
}

ad::Var transformer_block(const ParamVars& p, const BlockParams& idx, const ad::Var& h, int heads, bool cls_only,
                          int seqs) {
  const ad::Index dim = h.cols();
  if (dim % heads != 0) throw std::invalid_argument("transformer_block: width not divisible by heads");
  if (seqs < 1 || h.rows() % seqs != 0) throw std::invalid_argument("transformer_block: rows not divisible by seqs");
  const ad::Index dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  ad::Var x = layer_norm(h, p[idx.norm1_w], p[idx.norm1_b]);
  ad::Var qkv = linear(x, p[idx.qkv_w], p[idx.qkv_b]);
  ad::Var q_rows = cls_only ? first_rows(qkv, seqs) : qkv;
  std::vector<ad::Var> outs;
  outs.reserve(std::size_t(heads));
  for (int hd = 0; hd < heads; ++hd) {
    ad::Var q = ad::slice_cols(q_rows, hd * dh, dh);
    ad::Var k = ad::slice_cols(qkv, dim + hd * dh, dh);
    ad::Var v = ad::slice_cols(qkv, 2 * dim + hd * dh, dh);
    ad::Var att = ad::softmax_rows(ad::scale(ad::bmm_nt(q, k, seqs), inv_sqrt));
    outs.push_back(ad::bmm(att, v, seqs));
  }
  ad::Var attn = linear(heads == 1 ? outs.front() : ad::concat_cols(outs), p[idx.proj_w], p[idx.proj_b]);
  ad::Var resid = cls_only ? first_rows(h, seqs) : h;
  ad::Var h2 = ad::add(resid, attn);
  ad::Var y = layer_norm(h2, p[idx.norm2_w], p[idx.norm2_b]);
  ad::Var mlp = linear(gelu(linear(y, p[idx.fc1_w], p[idx.fc1_b])), p[idx.fc2_w], p[idx.fc2_b]);
  return ad::add(h2, mlp);
}

}  // namespace vedit::nn

namespace vedit::nn {

ad::Var mean_cross_entropy(const ad::Var& logits, const std::vector<int>& labels) {
  if (ad::Index(labels.size()) != logits.rows()) throw std::invalid_argument("mean_cross_entropy: label count");
  ad::Matrix onehot = ad::Matrix::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= logits.cols()) throw std::invalid_argument("mean_cross_entropy: label range");
    onehot(ad::Index(i), labels[i]) = 1.0;
  }
  return ad::scale(ad::sum(ad::mul(ad::log_softmax_rows(logits), ad::Var::constant(std::move(onehot)))),
                   -1.0 / double(labels.size()));
}

}  // namespace vedit::nn
