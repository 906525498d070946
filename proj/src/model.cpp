#include "sdtt/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace sdtt {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kRopeBase = 10000.0;

template <typename S>
using MatMap = Eigen::Map<const RowMatrix<S>>;
template <typename S>
using MutMatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using RowVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <typename S>
using MutRowVecMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;

template <typename S>
MatMap<S> mat(const VectorX<S>& p, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
  return MatMap<S>(p.data() + off, rows, cols);
}
template <typename S>
MutMatMap<S> mut_mat(VectorX<S>& p, Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
  return MutMatMap<S>(p.data() + off, rows, cols);
}
template <typename S>
RowVecMap<S> vec(const VectorX<S>& p, Eigen::Index off, Eigen::Index n) {
  return RowVecMap<S>(p.data() + off, n);
}
template <typename S>
MutRowVecMap<S> mut_vec(VectorX<S>& p, Eigen::Index off, Eigen::Index n) {
  return MutRowVecMap<S>(p.data() + off, n);
}

template <typename S>
void layer_norm(const RowMatrix<S>& x, RowVecMap<S> gain, RowVecMap<S> bias, RowMatrix<S>& xhat,
                VectorX<S>& rstd, RowMatrix<S>& y) {
  const VectorX<S> mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  rstd = ((xhat.array().square().rowwise().sum() / S(x.cols())) + S(kLnEps)).rsqrt();
  xhat.array().colwise() *= rstd.array();
  y = (xhat.array().rowwise() * gain.array()).rowwise() + bias.array();
}

// dx from dy for y = xhat * g + b; accumulates dg, db.
template <typename S>
RowMatrix<S> layer_norm_backward(const RowMatrix<S>& dy, const RowMatrix<S>& xhat,
                                 const VectorX<S>& rstd, RowVecMap<S> gain, MutRowVecMap<S> dgain,
                                 MutRowVecMap<S> dbias) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  RowMatrix<S> dxhat = dy.array().rowwise() * gain.array();
  const S inv_d = S(1) / S(dy.cols());
  const VectorX<S> m1 = dxhat.rowwise().sum() * inv_d;
  const VectorX<S> m2 = (dxhat.array() * xhat.array()).rowwise().sum().matrix() * inv_d;
  RowMatrix<S> dx = dxhat.colwise() - m1;
  dx -= (xhat.array().colwise() * m2.array()).matrix();
  dx.array().colwise() *= rstd.array();
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluK = 0.044715;

template <typename S>
RowMatrix<S> gelu(const RowMatrix<S>& u) {
  const auto a = u.array();
  RowMatrix<S> out(u.rows(), u.cols());
  out.array() = S(0.5) * a * (S(1) + (S(kGeluC) * (a + S(kGeluK) * a.cube())).tanh());
  return out;
}

template <typename S>
RowMatrix<S> gelu_grad(const RowMatrix<S>& u) {
  const auto a = u.array();
  const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th =
      (S(kGeluC) * (a + S(kGeluK) * a.cube())).tanh();
  RowMatrix<S> out(u.rows(), u.cols());
  out.array() = S(0.5) * (S(1) + th) +
                S(0.5) * a * (S(1) - th.square()) * S(kGeluC) * (S(1) + S(3 * kGeluK) * a.square());
  return out;
}

template <typename S>
struct RopeTable {
  RowMatrix<S> cos, sin;  // positions x (head_dim / 2)
};

// Rows cover positions [first, first + count).
template <typename S>
RopeTable<S> rope_table(int count, int head_dim, int first = 0) {
  RopeTable<S> t;
  const int half = head_dim / 2;
  t.cos.resize(count, half);
  t.sin.resize(count, half);
  for (int p = 0; p < count; ++p) {
    for (int i = 0; i < half; ++i) {
      const double angle = (first + p) * std::pow(kRopeBase, -2.0 * i / head_dim);
      t.cos(p, i) = S(std::cos(angle));
      t.sin(p, i) = S(std::sin(angle));
    }
  }
  return t;
}

// Rotates (or with inverse=true, un-rotates) the query and key columns of one
// qkv row in place.
template <typename S>
void rope_row(S* row, int pos, const ModelConfig& cfg, const RopeTable<S>& t, bool inverse) {
  const int dh = cfg.head_dim();
  const int half = dh / 2;
  const S sign = inverse ? S(-1) : S(1);
  for (int block = 0; block < 2; ++block) {  // q then k
    for (int h = 0; h < cfg.n_heads; ++h) {
      S* v = row + block * cfg.embed_dim + h * dh;
      for (int i = 0; i < half; ++i) {
        const S c = t.cos(pos, i);
        const S s = sign * t.sin(pos, i);
        const S a = v[2 * i];
        const S b = v[2 * i + 1];
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

// In-place softmax over the first `limit` entries of a row; the rest become 0.
template <typename Row>
void softmax_prefix(Row&& row, Eigen::Index limit) {
  using S = typename std::decay_t<Row>::Scalar;
  const S mx = row.head(limit).maxCoeff();
  row.head(limit) = (row.head(limit).array() - mx).exp();
  row.head(limit) /= row.head(limit).sum();
  row.tail(row.size() - limit).setZero();
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || embed_dim < 1 || n_heads < 1) throw InputError("model dimensions must be positive");
  if (embed_dim % n_heads != 0) {
    throw InputError("embed_dim " + std::to_string(embed_dim) + " not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) throw InputError("rotary encoding needs an even head dimension");
  if (vocab < 2 || context < 2) throw InputError("vocab and context must be at least 2");
  if (!rotary) throw InputError("rotary positions are required");
}

ModelConfig model_preset(std::string_view name, int vocab, bool causal) {
  ModelConfig c;
  c.vocab = vocab;
  c.causal = causal;
  auto set = [&c](int layers, int dim, int heads, int context) {
    c.n_layers = layers;
    c.embed_dim = dim;
    c.n_heads = heads;
    c.context = context;
  };
  if (name == "tiny") set(4, 128, 4, 64);
  else if (name == "micro") set(2, 64, 4, 32);
  else if (name == "small") set(12, 768, 12, 1024);
  else if (name == "medium") set(24, 1024, 16, 1024);
  else if (name == "large") set(24, 1536, 16, 1024);
  else if (name == "1.3b") set(24, 2048, 32, 1024);
  else if (name == "3b") set(26, 3072, 32, 1024);
  else if (name == "8b") set(40, 4096, 32, 1024);
  else throw InputError("unknown model preset '" + std::string(name) + "'");
  return c;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const Eigen::Index D = cfg.embed_dim;
  const Eigen::Index K = cfg.vocab;
  Eigen::Index off = 0;
  auto take = [&off](Eigen::Index n) {
    const Eigen::Index at = off;
    off += n;
    return at;
  };
  tok_emb = take(K * D);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerOffsets lo{};
    lo.ln1_g = take(D);
    lo.ln1_b = take(D);
    lo.wqkv = take(D * 3 * D);
    lo.wo = take(D * D);
    lo.ln2_g = take(D);
    lo.ln2_b = take(D);
    lo.w1 = take(D * 4 * D);
    lo.b1 = take(4 * D);
    lo.w2 = take(4 * D * D);
    lo.b2 = take(D);
    layers.push_back(lo);
  }
  lnf_g = take(D);
  lnf_b = take(D);
  w_out = take(D * K);
  b_out = take(K);
  total = off;
}

std::int64_t parameter_count(const ModelConfig& config) { return ParamLayout(config).total; }

VectorX<float> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ParamLayout layout(cfg);
  VectorX<float> p = VectorX<float>::Zero(layout.total);
  Rng rng(seed);
  auto normal = [&rng]() {
    // Box-Muller on our own uniform draws keeps initialisation library-independent.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  };
  auto fill = [&](Eigen::Index off, Eigen::Index n, double stddev) {
    for (Eigen::Index i = 0; i < n; ++i) p[off + i] = static_cast<float>(stddev * normal());
  };
  const Eigen::Index D = cfg.embed_dim;
  const Eigen::Index K = cfg.vocab;
  const double resid = 0.02 / std::sqrt(2.0 * cfg.n_layers);
  fill(layout.tok_emb, K * D, 0.02);
  for (const auto& lo : layout.layers) {
    p.segment(lo.ln1_g, D).setOnes();
    p.segment(lo.ln2_g, D).setOnes();
    fill(lo.wqkv, D * 3 * D, 0.02);
    fill(lo.wo, D * D, resid);
    fill(lo.w1, D * 4 * D, 0.02);
    fill(lo.w2, 4 * D * D, resid);
  }
  p.segment(layout.lnf_g, D).setOnes();
  fill(layout.w_out, D * K, 0.02);
  return p;
}

template <typename Scalar>
RowMatrix<Scalar> transformer_forward(const ModelConfig& cfg, const VectorX<Scalar>& params,
                                      const Tokens& tokens, Activations<Scalar>* acts_out) {
  using S = Scalar;
  const ParamLayout layout(cfg);
  if (params.size() != layout.total) throw ContractError("parameter vector has the wrong size");
  const Eigen::Index B = tokens.rows();
  const Eigen::Index L = tokens.cols();
  if (L > cfg.context) throw InputError("sequence longer than the model context");
  const Eigen::Index N = B * L;
  const Eigen::Index D = cfg.embed_dim;
  const Eigen::Index K = cfg.vocab;
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dh));
  const auto rope = rope_table<S>(static_cast<int>(L), dh);

  Activations<S> local;
  Activations<S>& a = acts_out ? *acts_out : local;
  a.tokens = tokens;
  a.layers.resize(static_cast<std::size_t>(cfg.n_layers));

  RowMatrix<S> x(N, D);
  const auto emb = mat(params, layout.tok_emb, K, D);
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto tok = tokens(n / L, n % L);
    if (tok < 0 || tok >= K) throw InputError("token id out of range");
    x.row(n) = emb.row(tok);
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lo = layout.layers[static_cast<std::size_t>(l)];
    auto& la = a.layers[static_cast<std::size_t>(l)];
    la.x_in = std::move(x);
    layer_norm(la.x_in, vec(params, lo.ln1_g, D), vec(params, lo.ln1_b, D), la.ln1_xhat, la.ln1_rstd,
               la.h1);
    la.qkv.noalias() = la.h1 * mat(params, lo.wqkv, D, 3 * D);
    for (Eigen::Index n = 0; n < N; ++n) {
      rope_row(la.qkv.row(n).data(), static_cast<int>(n % L), cfg, rope, false);
    }
    la.probs.resize(B * H * L, L);
    la.attn.resize(N, D);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto q = la.qkv.block(b * L, h * dh, L, dh);
        const auto k = la.qkv.block(b * L, D + h * dh, L, dh);
        const auto v = la.qkv.block(b * L, 2 * D + h * dh, L, dh);
        auto P = la.probs.block((b * H + h) * L, 0, L, L);
        P.noalias() = (q * k.transpose()) * scale;
        for (Eigen::Index i = 0; i < L; ++i) softmax_prefix(P.row(i), cfg.causal ? i + 1 : L);
        la.attn.block(b * L, h * dh, L, dh).noalias() = P * v;
      }
    }
    la.x_mid = la.x_in;
    la.x_mid.noalias() += la.attn * mat(params, lo.wo, D, D);
    layer_norm(la.x_mid, vec(params, lo.ln2_g, D), vec(params, lo.ln2_b, D), la.ln2_xhat, la.ln2_rstd,
               la.h2);
    la.u.noalias() = la.h2 * mat(params, lo.w1, D, 4 * D);
    la.u.rowwise() += vec(params, lo.b1, 4 * D);
    la.g = gelu(la.u);
    x = la.x_mid;
    x.noalias() += la.g * mat(params, lo.w2, 4 * D, D);
    x.rowwise() += vec(params, lo.b2, D);
  }

  a.x_final = std::move(x);
  layer_norm(a.x_final, vec(params, layout.lnf_g, D), vec(params, layout.lnf_b, D), a.lnf_xhat,
             a.lnf_rstd, a.hf);
  RowMatrix<S> scores = a.hf * mat(params, layout.w_out, D, K);
  scores.rowwise() += vec(params, layout.b_out, K);
  return scores;
}

template <typename Scalar>
void transformer_backward(const ModelConfig& cfg, const VectorX<Scalar>& params,
                          const Activations<Scalar>& a, const RowMatrix<Scalar>& dscores,
                          VectorX<Scalar>& grads) {
  using S = Scalar;
  const ParamLayout layout(cfg);
  if (grads.size() != layout.total) grads = VectorX<S>::Zero(layout.total);
  const Eigen::Index B = a.tokens.rows();
  const Eigen::Index L = a.tokens.cols();
  const Eigen::Index N = B * L;
  const Eigen::Index D = cfg.embed_dim;
  const Eigen::Index K = cfg.vocab;
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const S scale = S(1) / std::sqrt(S(dh));
  const auto rope = rope_table<S>(static_cast<int>(L), dh);

  mut_mat(grads, layout.w_out, D, K).noalias() += a.hf.transpose() * dscores;
  mut_vec(grads, layout.b_out, K) += dscores.colwise().sum();
  RowMatrix<S> dhf = dscores * mat(params, layout.w_out, D, K).transpose();
  RowMatrix<S> dx = layer_norm_backward(dhf, a.lnf_xhat, a.lnf_rstd, vec(params, layout.lnf_g, D),
                                        mut_vec(grads, layout.lnf_g, D),
                                        mut_vec(grads, layout.lnf_b, D));

  RowMatrix<S> dqkv(N, 3 * D);
  RowMatrix<S> dP(L, L);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lo = layout.layers[static_cast<std::size_t>(l)];
    const auto& la = a.layers[static_cast<std::size_t>(l)];

    // MLP block: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
    mut_mat(grads, lo.w2, 4 * D, D).noalias() += la.g.transpose() * dx;
    mut_vec(grads, lo.b2, D) += dx.colwise().sum();
    RowMatrix<S> du = dx * mat(params, lo.w2, 4 * D, D).transpose();
    du.array() *= gelu_grad(la.u).array();
    mut_mat(grads, lo.w1, D, 4 * D).noalias() += la.h2.transpose() * du;
    mut_vec(grads, lo.b1, 4 * D) += du.colwise().sum();
    RowMatrix<S> dh2 = du * mat(params, lo.w1, D, 4 * D).transpose();
    dx += layer_norm_backward(dh2, la.ln2_xhat, la.ln2_rstd, vec(params, lo.ln2_g, D),
                              mut_vec(grads, lo.ln2_g, D), mut_vec(grads, lo.ln2_b, D));

    // Attention block: x_mid = x_in + attn Wo
    mut_mat(grads, lo.wo, D, D).noalias() += la.attn.transpose() * dx;
    RowMatrix<S> dattn = dx * mat(params, lo.wo, D, D).transpose();
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const auto q = la.qkv.block(b * L, h * dh, L, dh);
        const auto k = la.qkv.block(b * L, D + h * dh, L, dh);
        const auto v = la.qkv.block(b * L, 2 * D + h * dh, L, dh);
        const auto P = la.probs.block((b * H + h) * L, 0, L, L);
        const auto dO = dattn.block(b * L, h * dh, L, dh);
        dP.noalias() = dO * v.transpose();
        dqkv.block(b * L, 2 * D + h * dh, L, dh).noalias() = P.transpose() * dO;
        const VectorX<S> rowdot = (dP.array() * P.array()).rowwise().sum();
        RowMatrix<S> dS = P.array() * (dP.array().colwise() - rowdot.array());
        dS *= scale;
        dqkv.block(b * L, h * dh, L, dh).noalias() = dS * k;
        dqkv.block(b * L, D + h * dh, L, dh).noalias() = dS.transpose() * q;
      }
    }
    for (Eigen::Index n = 0; n < N; ++n) {
      rope_row(dqkv.row(n).data(), static_cast<int>(n % L), cfg, rope, true);
    }
    mut_mat(grads, lo.wqkv, D, 3 * D).noalias() += la.h1.transpose() * dqkv;
    RowMatrix<S> dh1 = dqkv * mat(params, lo.wqkv, D, 3 * D).transpose();
    dx += layer_norm_backward(dh1, la.ln1_xhat, la.ln1_rstd, vec(params, lo.ln1_g, D),
                              mut_vec(grads, lo.ln1_g, D), mut_vec(grads, lo.ln1_b, D));
  }

  auto demb = mut_mat(grads, layout.tok_emb, K, D);
  for (Eigen::Index n = 0; n < N; ++n) demb.row(a.tokens(n / L, n % L)) += dx.row(n);
}

template <typename Scalar>
TransformerDenoiser<Scalar>::TransformerDenoiser(const ModelConfig& config, VectorX<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (params_.size() != ParamLayout(config_).total) {
    throw ContractError("parameter vector does not match model config");
  }
}

template <typename Scalar>
RowMatrix<Scalar> TransformerDenoiser<Scalar>::scores(const Tokens& z) const {
  return transformer_forward(config_, params_, z);
}

template <typename Scalar>
AutoregressiveCache<Scalar>::AutoregressiveCache(const ModelConfig& config, int batch_size)
    : batch(batch_size), capacity(config.context) {
  for (int l = 0; l < config.n_layers; ++l) {
    keys.emplace_back(RowMatrix<Scalar>::Zero(batch * capacity, config.embed_dim));
    values.emplace_back(RowMatrix<Scalar>::Zero(batch * capacity, config.embed_dim));
  }
}

template <typename Scalar>
RowMatrix<Scalar> ar_forward_step(const ModelConfig& cfg, const VectorX<Scalar>& params,
                                  std::span<const std::int32_t> tokens,
                                  AutoregressiveCache<Scalar>& cache) {
  using S = Scalar;
  if (!cfg.causal) throw ContractError("incremental decoding needs a causal model");
  if (cache.prefix_len >= cache.capacity) throw InputError("autoregressive cache overflow");
  if (static_cast<int>(tokens.size()) != cache.batch) throw InputError("one token per row required");
  const ParamLayout layout(cfg);
  const Eigen::Index B = cache.batch;
  const Eigen::Index D = cfg.embed_dim;
  const Eigen::Index K = cfg.vocab;
  const int H = cfg.n_heads;
  const int dh = cfg.head_dim();
  const int pos = cache.prefix_len;
  const S scale = S(1) / std::sqrt(S(dh));
  const auto rope = rope_table<S>(1, dh, pos);

  RowMatrix<S> x(B, D);
  const auto emb = mat(params, layout.tok_emb, K, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto tok = tokens[static_cast<std::size_t>(b)];
    if (tok < 0 || tok >= K) throw InputError("token id out of range");
    x.row(b) = emb.row(tok);
  }

  RowMatrix<S> xhat, h, qkv, attn(B, D), u;
  VectorX<S> rstd;
  Eigen::Matrix<S, 1, Eigen::Dynamic> scores;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lo = layout.layers[static_cast<std::size_t>(l)];
    auto& kc = cache.keys[static_cast<std::size_t>(l)];
    auto& vc = cache.values[static_cast<std::size_t>(l)];
    layer_norm(x, vec(params, lo.ln1_g, D), vec(params, lo.ln1_b, D), xhat, rstd, h);
    qkv.noalias() = h * mat(params, lo.wqkv, D, 3 * D);
    for (Eigen::Index b = 0; b < B; ++b) {
      rope_row(qkv.row(b).data(), 0, cfg, rope, false);
      kc.row(b * cache.capacity + pos) = qkv.row(b).segment(D, D);
      vc.row(b * cache.capacity + pos) = qkv.row(b).segment(2 * D, D);
    }
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int hd = 0; hd < H; ++hd) {
        const auto q = qkv.row(b).segment(hd * dh, dh);
        const auto keys = kc.block(b * cache.capacity, hd * dh, pos + 1, dh);
        const auto vals = vc.block(b * cache.capacity, hd * dh, pos + 1, dh);
        scores.noalias() = (q * keys.transpose()) * scale;
        softmax_prefix(scores.row(0), pos + 1);
        attn.row(b).segment(hd * dh, dh).noalias() = scores * vals;
      }
    }
    x.noalias() += attn * mat(params, lo.wo, D, D);
    layer_norm(x, vec(params, lo.ln2_g, D), vec(params, lo.ln2_b, D), xhat, rstd, h);
    u.noalias() = h * mat(params, lo.w1, D, 4 * D);
    u.rowwise() += vec(params, lo.b1, 4 * D);
    u = gelu(u);
    x.noalias() += u * mat(params, lo.w2, 4 * D, D);
    x.rowwise() += vec(params, lo.b2, D);
  }
  layer_norm(x, vec(params, layout.lnf_g, D), vec(params, layout.lnf_b, D), xhat, rstd, h);
  RowMatrix<S> logits = h * mat(params, layout.w_out, D, K);
  logits.rowwise() += vec(params, layout.b_out, K);

  ++cache.prefix_len;
  ++cache.steps;
  cache.tokens_processed += B;
  return real_token_log_softmax(logits, cfg.mask_index());
}

template <typename Scalar>
RowMatrix<Scalar> real_token_log_softmax(const RowMatrix<Scalar>& scores, int mask_index) {
  RowMatrix<Scalar> out(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Scalar mx = std::numeric_limits<Scalar>::lowest();
    for (Eigen::Index v = 0; v < scores.cols(); ++v) {
      if (v != mask_index) mx = std::max(mx, scores(r, v));
    }
    Scalar sum = 0;
    for (Eigen::Index v = 0; v < scores.cols(); ++v) {
      if (v != mask_index) sum += std::exp(scores(r, v) - mx);
    }
    out.row(r) = scores.row(r).array() - (mx + std::log(sum));
    out(r, mask_index) = kLogZero<Scalar>;
  }
  return out;
}

#define SDTT_INSTANTIATE(S)                                                                        \
  template RowMatrix<S> transformer_forward<S>(const ModelConfig&, const VectorX<S>&, const Tokens&, \
                                               Activations<S>*);                                    \
  template void transformer_backward<S>(const ModelConfig&, const VectorX<S>&,                     \
                                        const Activations<S>&, const RowMatrix<S>&, VectorX<S>&);   \
  template class TransformerDenoiser<S>;                                                           \
  template struct AutoregressiveCache<S>;                                                          \
  template RowMatrix<S> ar_forward_step<S>(const ModelConfig&, const VectorX<S>&,                  \
                                           std::span<const std::int32_t>, AutoregressiveCache<S>&); \
  template RowMatrix<S> real_token_log_softmax<S>(const RowMatrix<S>&, int);
SDTT_INSTANTIATE(float)
SDTT_INSTANTIATE(double)
#undef SDTT_INSTANTIATE

}  // namespace sdtt
