#include "protoshape/completion.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "protoshape/losses.hpp"
#include "protoshape/ops.hpp"

namespace ps {
namespace {

std::string key(const char* group, int level, const char* what) {
  return std::string(group) + std::to_string(level) + "." + what;
}

}  // namespace

CompletionNet CompletionNet::create(const CompletionConfig& cfg, uint64_t seed) {
  if (static_cast<int>(cfg.channels.size()) != cfg.levels)
    throw ContractError("CompletionNet: channels must list one width per level");
  int R = cfg.grid_resolution;
  if (R % (1 << cfg.levels) != 0)
    throw ContractError("CompletionNet: grid resolution must be divisible by 2^levels");
  if (cfg.spf_levels < 0 || cfg.spf_levels > cfg.levels)
    throw ContractError("CompletionNet: spf_levels must lie in [0, levels]");

  CompletionNet net;
  net.cfg = cfg;
  Rng rng(seed);
  auto& p = net.params;
  const auto& ch = cfg.channels;
  int L = cfg.levels;

  auto conv_k = [&rng](int co, int ci) { return he_init({co, ci, 3, 3, 3}, ci * 27, rng); };

  // encoder: level 0 at full resolution, each deeper level halves
  for (int l = 0; l < L; ++l) {
    int ci = l == 0 ? 1 : ch[l - 1];
    p[key("enc", l, "k")] = conv_k(ch[l], ci);
    p[key("enc", l, "b")] = Tensor::zeros({ch[l]}, true);
  }
  p["bot.k"] = conv_k(ch[L - 1], ch[L - 1]);
  p["bot.b"] = Tensor::zeros({ch[L - 1]}, true);

  for (int l = 0; l < L; ++l) {
    int cl = ch[l];
    int dch = l == L - 1 ? ch[L - 1] : ch[l + 1];  // deeper feature channels
    if (l < cfg.spf_levels) {
      p[key("spf", l, "down.k")] = conv_k(cl, cl);
      p[key("spf", l, "down.b")] = Tensor::zeros({cl}, true);
      p[key("spf", l, "up.k")] = he_init({cl + dch, cl, 3, 3, 3}, (cl + dch) * 27, rng);
      p[key("spf", l, "up.b")] = Tensor::zeros({cl}, true);
      p[key("spf", l, "fuse.k")] = conv_k(cl, 2 * cl);
      p[key("spf", l, "fuse.b")] = Tensor::zeros({cl}, true);
    } else {
      p[key("skip", l, "up.k")] = he_init({dch, cl, 3, 3, 3}, dch * 27, rng);
      p[key("skip", l, "up.b")] = Tensor::zeros({cl}, true);
    }
  }
  p["head.k"] = conv_k(1, ch[0]);
  p["head.b"] = Tensor::zeros({1}, true);

  int in = ch[0] + 1 + 3;  // fused features + occupancy + coarse coordinate
  int prev = in;
  for (size_t h = 0; h < cfg.mlp_hidden.size(); ++h) {
    p[key("mlp", static_cast<int>(h), "w")] = he_init({prev, cfg.mlp_hidden[h]}, prev, rng);
    p[key("mlp", static_cast<int>(h), "b")] = Tensor::zeros({cfg.mlp_hidden[h]}, true);
    prev = cfg.mlp_hidden[h];
  }
  int out_layer = static_cast<int>(cfg.mlp_hidden.size());
  p[key("mlp", out_layer, "w")] = he_init({prev, 3 * cfg.rho}, prev, rng);
  p[key("mlp", out_layer, "b")] = Tensor::zeros({3 * cfg.rho}, true);
  return net;
}

EncodeResult CompletionNet::encode(const PointCloud& partial) const {
  GriddingResult grid = gridding(partial, cfg.grid_resolution);
  EncodeResult r;
  Tensor x = grid.grid;
  for (int l = 0; l < cfg.levels; ++l) {
    int stride = l == 0 ? 1 : 2;
    x = relu(add_channel_bias(conv3d(x, params.at(key("enc", l, "k")), stride),
                              params.at(key("enc", l, "b"))));
    r.levels.push_back(x);
  }
  r.bottleneck =
      relu(add_channel_bias(conv3d(x, params.at("bot.k"), 2), params.at("bot.b")));
  return r;
}

Tensor CompletionNet::spf_fuse(int level, const Tensor& f_l, const Tensor& deeper,
                               const Tensor& u) const {
  if (deeper.shape()[1] * 2 != f_l.shape()[1])
    throw DimensionError("spf_fuse: deeper feature must be half the skip resolution");
  Tensor g = scale(f_l, u);
  Tensor d = relu(add_channel_bias(conv3d(g, params.at(key("spf", level, "down.k")), 2),
                                   params.at(key("spf", level, "down.b"))));
  Tensor m = concat_channels(d, deeper);
  Tensor h = relu(add_channel_bias(conv3d_transposed(m, params.at(key("spf", level, "up.k")), 2),
                                   params.at(key("spf", level, "up.b"))));
  return relu(add_channel_bias(conv3d(concat_channels(h, g), params.at(key("spf", level, "fuse.k")), 1),
                               params.at(key("spf", level, "fuse.b"))));
}

CompletionNet::DecodeResult CompletionNet::decode(const EncodeResult& enc, const Tensor& u) const {
  Tensor deeper = enc.bottleneck;
  for (int l = cfg.levels - 1; l >= 0; --l) {
    if (l < cfg.spf_levels) {
      deeper = spf_fuse(l, enc.levels[l], deeper, u);
    } else {
      Tensor up = relu(add_channel_bias(
          conv3d_transposed(deeper, params.at(key("skip", l, "up.k")), 2),
          params.at(key("skip", l, "up.b"))));
      deeper = add(up, enc.levels[l]);
    }
  }
  DecodeResult r;
  r.fused0 = deeper;
  r.occupancy =
      sigmoid(add_channel_bias(conv3d(deeper, params.at("head.k"), 1), params.at("head.b")));
  return r;
}

PointCloud CompletionNet::sparse_from_grid(const Tensor& occupancy, double* theta_used) const {
  double th = cfg.theta;
  const auto& v = occupancy.data();
  auto count_above = [&v](double t) {
    int c = 0;
    for (double x : v)
      if (x > t) ++c;
    return c;
  };
  int n = count_above(th);
  while (n < cfg.n_sparse) {
    th /= 2.0;
    if (th < 1e-3)
      throw EmptyOutputError("sparse_from_grid: occupancy collapsed below usable threshold");
    n = count_above(th);
  }
  if (theta_used) *theta_used = th;
  PointCloud cells = gridding_reverse(occupancy, th);
  if (cells.count() == cfg.n_sparse) return cells;
  return farthest_point_sampling(cells, cfg.n_sparse, 0);
}

Tensor CompletionNet::refine_dense(const PointCloud& sparse, const Tensor& fused0,
                                   const Tensor& occupancy) const {
  int n_sp = sparse.count();
  int rho = cfg.rho;
  Tensor feats = point_feature_sampling(fused0, sparse);
  Tensor occf = point_feature_sampling(occupancy, sparse);
  Tensor coords = cloud_to_tensor(sparse);
  Tensor x = concat_cols(concat_cols(feats, occf), coords);
  int nlayers = static_cast<int>(cfg.mlp_hidden.size());
  for (int h = 0; h < nlayers; ++h)
    x = relu(linear(x, params.at(key("mlp", h, "w")), params.at(key("mlp", h, "b"))));
  Tensor off =
      tanh_op(linear(x, params.at(key("mlp", nlayers, "w")), params.at(key("mlp", nlayers, "b"))));

  // dense[i*rho + r] = sparse[i] + delta * off[i, r*3 ..]
  double delta = cfg.offset_bound();
  Tensor dense = Tensor::zeros({n_sp * rho, 3});
  dense.node()->parents = {off.node()};
  dense.node()->backward = [delta](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!p.requires_grad && p.backward == nullptr) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += delta * n.grad[j];
  };
  for (int i = 0; i < n_sp; ++i)
    for (int r = 0; r < rho; ++r)
      for (int d = 0; d < 3; ++d)
        dense.data()[(static_cast<size_t>(i) * rho + r) * 3 + d] =
            sparse.points[i][d] + delta * off.at((static_cast<size_t>(i) * rho + r) * 3 + d);
  return dense;
}

ForwardResult CompletionNet::forward(const PointCloud& partial, double prior_u) const {
  EncodeResult enc = encode(partial);
  Tensor u = Tensor::scalar(cfg.use_prior ? prior_u : 1.0);
  DecodeResult dec = decode(enc, u);
  ForwardResult r;
  r.occupancy = dec.occupancy;
  r.fused0 = dec.fused0;
  r.sparse = sparse_from_grid(dec.occupancy, &r.theta_used);
  r.dense = refine_dense(r.sparse, dec.fused0, dec.occupancy);
  r.dense_cloud = tensor_to_cloud(r.dense);
  return r;
}

}  // namespace ps
