#include "protoshape/ops.hpp"

#include <algorithm>
#include <cmath>

namespace ps {
namespace {

// Gradient is propagated into parameter leaves and intermediates; plain
// constant inputs (data tensors) are skipped.
bool wants(const TensorNode& p) { return p.requires_grad || p.backward != nullptr; }

Tensor make_node(Shape shape, std::vector<NodePtr> parents,
                 std::function<void(TensorNode&)> bwd) {
  Tensor out = Tensor::zeros(std::move(shape));
  out.node()->parents = std::move(parents);
  out.node()->backward = std::move(bwd);
  return out;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
}

size_t idx4(int c, int x, int y, int z, int R) {
  return ((static_cast<size_t>(c) * R + x) * R + y) * R + z;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_node(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
    for (int i = 0; i < 2; ++i) {
      TensorNode& p = *n.parents[i];
      if (!wants(p)) continue;
      p.ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
    }
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.at(i) + b.at(i);
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_node(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
    for (int i = 0; i < 2; ++i) {
      TensorNode& p = *n.parents[i];
      if (!wants(p)) continue;
      p.ensure_grad();
      double sgn = i == 0 ? 1.0 : -1.0;
      for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += sgn * n.grad[j];
    }
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.at(i) - b.at(i);
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_node(a.shape(), {a.node(), b.node()}, [](TensorNode& n) {
    TensorNode& pa = *n.parents[0];
    TensorNode& pb = *n.parents[1];
    if (wants(pa)) {
      pa.ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) pa.grad[j] += n.grad[j] * pb.data[j];
    }
    if (wants(pb)) {
      pb.ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) pb.grad[j] += n.grad[j] * pa.data[j];
    }
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.at(i) * b.at(i);
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = make_node(a.shape(), {a.node()}, [c](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += c * n.grad[j];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = c * a.at(i);
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_node(a.shape(), {a.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = a.at(i) + c;
  return out;
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("scale: scale factor must be a scalar tensor");
  double sv = s.item();
  Tensor out = make_node(a.shape(), {a.node(), s.node()}, [sv](TensorNode& n) {
    TensorNode& pa = *n.parents[0];
    TensorNode& ps_ = *n.parents[1];
    if (wants(pa)) {
      pa.ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) pa.grad[j] += sv * n.grad[j];
    }
    if (wants(ps_)) {
      ps_.ensure_grad();
      double acc = 0.0;
      for (size_t j = 0; j < n.grad.size(); ++j) acc += n.grad[j] * pa.data[j];
      ps_.grad[0] += acc;
    }
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = sv * a.at(i);
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_node(a.shape(), {a.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j)
      if (p.data[j] > 0.0) p.grad[j] += n.grad[j];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = std::max(0.0, a.at(i));
  return out;
}

Tensor clamp_min(const Tensor& a, double floor) {
  Tensor out = make_node(a.shape(), {a.node()}, [floor](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j)
      if (p.data[j] > floor) p.grad[j] += n.grad[j];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = std::max(floor, a.at(i));
  return out;
}

Tensor tanh_op(const Tensor& a) {
  Tensor out = make_node(a.shape(), {a.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j)
      p.grad[j] += n.grad[j] * (1.0 - n.data[j] * n.data[j]);
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = std::tanh(a.at(i));
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_node(a.shape(), {a.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j)
      p.grad[j] += n.grad[j] * n.data[j] * (1.0 - n.data[j]);
  });
  for (size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-a.at(i)));
  return out;
}

Tensor log_op(const Tensor& a) {
  Tensor out = make_node(a.shape(), {a.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < n.grad.size(); ++j) p.grad[j] += n.grad[j] / p.data[j];
  });
  for (size_t i = 0; i < out.data().size(); ++i) out.data()[i] = std::log(a.at(i));
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    throw DimensionError("linear: expected x[B,I], w[I,O], b[O]");
  int B = x.shape()[0], I = x.shape()[1], O = w.shape()[1];
  if (w.shape()[0] != I || b.shape()[0] != O)
    throw DimensionError("linear: inner dimensions disagree");

  Tensor out = make_node({B, O}, {x.node(), w.node(), b.node()}, [B, I, O](TensorNode& n) {
    TensorNode& px = *n.parents[0];
    TensorNode& pw = *n.parents[1];
    TensorNode& pb = *n.parents[2];
    if (wants(px)) {
      px.ensure_grad();
      for (int r = 0; r < B; ++r)
        for (int o = 0; o < O; ++o) {
          double g = n.grad[static_cast<size_t>(r) * O + o];
          if (g == 0.0) continue;
          const double* wrow = pw.data.data() + o;  // column o, stride O
          double* gx = px.grad.data() + static_cast<size_t>(r) * I;
          for (int i = 0; i < I; ++i) gx[i] += g * wrow[static_cast<size_t>(i) * O];
        }
    }
    if (wants(pw)) {
      pw.ensure_grad();
      for (int r = 0; r < B; ++r) {
        const double* xr = px.data.data() + static_cast<size_t>(r) * I;
        const double* gr = n.grad.data() + static_cast<size_t>(r) * O;
        for (int i = 0; i < I; ++i) {
          double xv = xr[i];
          if (xv == 0.0) continue;
          double* gw = pw.grad.data() + static_cast<size_t>(i) * O;
          for (int o = 0; o < O; ++o) gw[o] += xv * gr[o];
        }
      }
    }
    if (wants(pb)) {
      pb.ensure_grad();
      for (int r = 0; r < B; ++r)
        for (int o = 0; o < O; ++o) pb.grad[o] += n.grad[static_cast<size_t>(r) * O + o];
    }
  });

  // i-k-j loop order keeps the inner accumulation contiguous.
  for (int r = 0; r < B; ++r) {
    double* orow = out.data().data() + static_cast<size_t>(r) * O;
    const double* xr = x.data().data() + static_cast<size_t>(r) * I;
    for (int o = 0; o < O; ++o) orow[o] = b.at(o);
    for (int i = 0; i < I; ++i) {
      double xv = xr[i];
      if (xv == 0.0) continue;
      const double* wr = w.data().data() + static_cast<size_t>(i) * O;
      for (int o = 0; o < O; ++o) orow[o] += xv * wr[o];
    }
  }
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& k, int stride) {
  if (x.shape().size() != 4 || x.shape()[1] != x.shape()[2] || x.shape()[1] != x.shape()[3])
    throw DimensionError("conv3d: input must be [C,R,R,R] cubic");
  if (k.shape().size() != 5 || k.shape()[2] != 3 || k.shape()[3] != 3 || k.shape()[4] != 3)
    throw DimensionError("conv3d: kernel must be [Co,Ci,3,3,3]");
  int Ci = x.shape()[0], R = x.shape()[1];
  int Co = k.shape()[0];
  if (k.shape()[1] != Ci) throw DimensionError("conv3d: channel mismatch");
  if (stride != 1 && stride != 2) throw ContractError("conv3d: stride must be 1 or 2");
  if (R < 3) throw DimensionError("conv3d: R must be >= 3");
  if (R % stride != 0) throw DimensionError("conv3d: R not divisible by stride");
  int Ro = R / stride;

  auto run = [Ci, Co, R, Ro, stride](const double* xd, const double* kd, double* od,
                                     double* gx, double* gk, const double* go) {
    // Forward when od != nullptr; backward (dx,dk from go) otherwise.
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
              size_t kidx = ((((static_cast<size_t>(co) * Ci + ci) * 3 + a) * 3 + b) * 3 + c);
              double w = kd ? kd[kidx] : 0.0;
              double kacc = 0.0;
              for (int ox = 0; ox < Ro; ++ox) {
                int ix = ox * stride + a - 1;
                if (ix < 0 || ix >= R) continue;
                for (int oy = 0; oy < Ro; ++oy) {
                  int iy = oy * stride + b - 1;
                  if (iy < 0 || iy >= R) continue;
                  int zlo = 0, zhi = Ro;
                  // valid oz range: 0 <= oz*stride + c - 1 < R
                  while (zlo < zhi && zlo * stride + c - 1 < 0) ++zlo;
                  while (zhi > zlo && (zhi - 1) * stride + c - 1 >= R) --zhi;
                  const double* xrow = xd + idx4(ci, ix, iy, 0, R) + (c - 1);
                  size_t obase = ((static_cast<size_t>(co) * Ro + ox) * Ro + oy) * Ro;
                  if (od) {
                    double* orow = od + obase;
                    for (int oz = zlo; oz < zhi; ++oz)
                      orow[oz] += w * xrow[static_cast<size_t>(oz) * stride];
                  } else {
                    const double* grow = go + obase;
                    double* gxrow = gx ? gx + idx4(ci, ix, iy, 0, R) + (c - 1) : nullptr;
                    for (int oz = zlo; oz < zhi; ++oz) {
                      double g = grow[oz];
                      if (gxrow) gxrow[static_cast<size_t>(oz) * stride] += g * w;
                      if (gk) kacc += g * xrow[static_cast<size_t>(oz) * stride];
                    }
                  }
                }
              }
              if (gk) gk[kidx] += kacc;
            }
  };

  Tensor out = make_node({Co, Ro, Ro, Ro}, {x.node(), k.node()}, [run](TensorNode& n) {
    TensorNode& px = *n.parents[0];
    TensorNode& pk = *n.parents[1];
    bool wx = wants(px), wk = wants(pk);
    if (!wx && !wk) return;
    if (wx) px.ensure_grad();
    if (wk) pk.ensure_grad();
    run(px.data.data(), pk.data.data(), nullptr, wx ? px.grad.data() : nullptr,
        wk ? pk.grad.data() : nullptr, n.grad.data());
  });
  run(x.data().data(), k.data().data(), out.data().data(), nullptr, nullptr, nullptr);
  return out;
}

Tensor conv3d_transposed(const Tensor& y, const Tensor& k, int stride) {
  if (y.shape().size() != 4 || y.shape()[1] != y.shape()[2] || y.shape()[1] != y.shape()[3])
    throw DimensionError("conv3d_transposed: input must be [C,r,r,r] cubic");
  if (k.shape().size() != 5 || k.shape()[2] != 3 || k.shape()[3] != 3 || k.shape()[4] != 3)
    throw DimensionError("conv3d_transposed: kernel must be [Co,Ci,3,3,3]");
  int Co = y.shape()[0], r = y.shape()[1];
  int Ci = k.shape()[1];
  if (k.shape()[0] != Co) throw DimensionError("conv3d_transposed: channel mismatch");
  if (stride != 1 && stride != 2) throw ContractError("conv3d_transposed: stride must be 1 or 2");
  int Ri = r * stride;

  // out[ci, ox*s+a-1, oy*s+b-1, oz*s+c-1] += y[co,ox,oy,oz] * k[co,ci,a,b,c]
  auto scatter = [Ci, Co, r, Ri, stride](const double* yd, const double* kd, double* od) {
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
              double w = kd[((((static_cast<size_t>(co) * Ci + ci) * 3 + a) * 3 + b) * 3 + c)];
              if (w == 0.0) continue;
              for (int ox = 0; ox < r; ++ox) {
                int ix = ox * stride + a - 1;
                if (ix < 0 || ix >= Ri) continue;
                for (int oy = 0; oy < r; ++oy) {
                  int iy = oy * stride + b - 1;
                  if (iy < 0 || iy >= Ri) continue;
                  int zlo = 0, zhi = r;
                  while (zlo < zhi && zlo * stride + c - 1 < 0) ++zlo;
                  while (zhi > zlo && (zhi - 1) * stride + c - 1 >= Ri) --zhi;
                  const double* yrow = yd + ((static_cast<size_t>(co) * r + ox) * r + oy) * r;
                  double* orow = od + idx4(ci, ix, iy, 0, Ri) + (c - 1);
                  for (int oz = zlo; oz < zhi; ++oz)
                    orow[static_cast<size_t>(oz) * stride] += w * yrow[oz];
                }
              }
            }
  };
  // dy[co,ox,oy,oz] += sum_{ci,a,b,c} g[ci, ox*s+a-1, ...] * k[co,ci,a,b,c]
  // dk[co,ci,a,b,c] += sum y[co,ox,..] * g[ci, ox*s+a-1, ..]
  auto bwd = [Ci, Co, r, Ri, stride](const double* yd, const double* kd, const double* go,
                                     double* gy, double* gk) {
    for (int co = 0; co < Co; ++co)
      for (int ci = 0; ci < Ci; ++ci)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
              size_t kidx = ((((static_cast<size_t>(co) * Ci + ci) * 3 + a) * 3 + b) * 3 + c);
              double w = kd[kidx];
              double kacc = 0.0;
              for (int ox = 0; ox < r; ++ox) {
                int ix = ox * stride + a - 1;
                if (ix < 0 || ix >= Ri) continue;
                for (int oy = 0; oy < r; ++oy) {
                  int iy = oy * stride + b - 1;
                  if (iy < 0 || iy >= Ri) continue;
                  int zlo = 0, zhi = r;
                  while (zlo < zhi && zlo * stride + c - 1 < 0) ++zlo;
                  while (zhi > zlo && (zhi - 1) * stride + c - 1 >= Ri) --zhi;
                  size_t ybase = ((static_cast<size_t>(co) * r + ox) * r + oy) * r;
                  const double* grow = go + idx4(ci, ix, iy, 0, Ri) + (c - 1);
                  const double* yrow = yd + ybase;
                  double* gyrow = gy ? gy + ybase : nullptr;
                  for (int oz = zlo; oz < zhi; ++oz) {
                    double g = grow[static_cast<size_t>(oz) * stride];
                    if (gyrow) gyrow[oz] += g * w;
                    kacc += g * yrow[oz];
                  }
                }
              }
              if (gk) gk[kidx] += kacc;
            }
  };

  Tensor out = make_node({Ci, Ri, Ri, Ri}, {y.node(), k.node()}, [bwd](TensorNode& n) {
    TensorNode& py = *n.parents[0];
    TensorNode& pk = *n.parents[1];
    bool wy = wants(py), wk = wants(pk);
    if (!wy && !wk) return;
    if (wy) py.ensure_grad();
    if (wk) pk.ensure_grad();
    bwd(py.data.data(), pk.data.data(), n.grad.data(), wy ? py.grad.data() : nullptr,
        wk ? pk.grad.data() : nullptr);
  });
  scatter(y.data().data(), k.data().data(), out.data().data());
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 4 || b.shape().size() != 1 || b.shape()[0] != x.shape()[0])
    throw DimensionError("add_channel_bias: expected x[C,R,R,R], b[C]");
  int C = x.shape()[0];
  size_t spatial = x.data().size() / C;
  Tensor out = make_node(x.shape(), {x.node(), b.node()}, [C, spatial](TensorNode& n) {
    TensorNode& px = *n.parents[0];
    TensorNode& pb = *n.parents[1];
    if (wants(px)) {
      px.ensure_grad();
      for (size_t j = 0; j < n.grad.size(); ++j) px.grad[j] += n.grad[j];
    }
    if (wants(pb)) {
      pb.ensure_grad();
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* g = n.grad.data() + c * spatial;
        for (size_t j = 0; j < spatial; ++j) acc += g[j];
        pb.grad[c] += acc;
      }
    }
  });
  for (int c = 0; c < C; ++c) {
    double bv = b.at(c);
    for (size_t j = 0; j < spatial; ++j) out.data()[c * spatial + j] = x.at(c * spatial + j) + bv;
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 4 || b.shape().size() != 4 || a.shape()[1] != b.shape()[1] ||
      a.shape()[2] != b.shape()[2] || a.shape()[3] != b.shape()[3])
    throw DimensionError("concat_channels: spatial shapes disagree");
  int Ca = a.shape()[0], Cb = b.shape()[0];
  size_t na = a.data().size(), nb = b.data().size();
  Shape os = a.shape();
  os[0] = Ca + Cb;
  Tensor out = make_node(os, {a.node(), b.node()}, [na, nb](TensorNode& n) {
    TensorNode& pa = *n.parents[0];
    TensorNode& pb = *n.parents[1];
    if (wants(pa)) {
      pa.ensure_grad();
      for (size_t j = 0; j < na; ++j) pa.grad[j] += n.grad[j];
    }
    if (wants(pb)) {
      pb.ensure_grad();
      for (size_t j = 0; j < nb; ++j) pb.grad[j] += n.grad[na + j];
    }
  });
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + na);
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw DimensionError("concat_cols: row counts disagree");
  int N = a.shape()[0], A = a.shape()[1], B = b.shape()[1];
  Tensor out = make_node({N, A + B}, {a.node(), b.node()}, [N, A, B](TensorNode& n) {
    TensorNode& pa = *n.parents[0];
    TensorNode& pb = *n.parents[1];
    if (wants(pa)) {
      pa.ensure_grad();
      for (int r = 0; r < N; ++r)
        for (int c = 0; c < A; ++c)
          pa.grad[static_cast<size_t>(r) * A + c] += n.grad[static_cast<size_t>(r) * (A + B) + c];
    }
    if (wants(pb)) {
      pb.ensure_grad();
      for (int r = 0; r < N; ++r)
        for (int c = 0; c < B; ++c)
          pb.grad[static_cast<size_t>(r) * B + c] +=
              n.grad[static_cast<size_t>(r) * (A + B) + A + c];
    }
  });
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < A; ++c)
      out.data()[static_cast<size_t>(r) * (A + B) + c] = a.at(static_cast<size_t>(r) * A + c);
    for (int c = 0; c < B; ++c)
      out.data()[static_cast<size_t>(r) * (A + B) + A + c] = b.at(static_cast<size_t>(r) * B + c);
  }
  return out;
}

Tensor max_over_points(const Tensor& x) {
  if (x.shape().size() != 2) throw DimensionError("max_over_points: expected [N,D]");
  int N = x.shape()[0], D = x.shape()[1];
  if (N < 1) throw ContractError("max_over_points: empty input");
  auto argmax = std::make_shared<std::vector<int>>(D, 0);
  Tensor out = make_node({D}, {x.node()}, [D, argmax](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (int d = 0; d < D; ++d)
      p.grad[static_cast<size_t>((*argmax)[d]) * D + d] += n.grad[d];
  });
  for (int d = 0; d < D; ++d) out.data()[d] = x.at(d);
  for (int r = 1; r < N; ++r)
    for (int d = 0; d < D; ++d) {
      double v = x.at(static_cast<size_t>(r) * D + d);
      if (v > out.data()[d]) {  // strict: ties keep the lowest index
        out.data()[d] = v;
        (*argmax)[d] = r;
      }
    }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = make_node({1}, {x.node()}, [](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    for (size_t j = 0; j < p.grad.size(); ++j) p.grad[j] += n.grad[0];
  });
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  return out;
}

Tensor mean_all(const Tensor& x) {
  double inv = 1.0 / static_cast<double>(x.numel());
  return mul_scalar(sum_all(x), inv);
}

Tensor softmax_cross_entropy(const Tensor& logits, int label) {
  int C = static_cast<int>(logits.numel());  // accepts [C] or [1,C]
  if (label < 0 || label >= C) throw ContractError("softmax_cross_entropy: label out of range");
  double m = logits.at(0);
  for (int c = 1; c < C; ++c) m = std::max(m, logits.at(c));
  double sum = 0.0;
  for (int c = 0; c < C; ++c) sum += std::exp(logits.at(c) - m);
  double lse = std::log(sum) + m;
  Tensor out = make_node({1}, {logits.node()}, [C, label, lse](TensorNode& n) {
    TensorNode& p = *n.parents[0];
    if (!wants(p)) return;
    p.ensure_grad();
    double g = n.grad[0];
    for (int c = 0; c < C; ++c) {
      double soft = std::exp(p.data[c] - lse);
      p.grad[c] += g * (soft - (c == label ? 1.0 : 0.0));
    }
  });
  out.data()[0] = lse - logits.at(label);
  return out;
}

}  // namespace ps
