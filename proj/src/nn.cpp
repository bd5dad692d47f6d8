#include "xtalgen/nn.hpp"

#include "xtalgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace xtalgen {

namespace {

using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "silu") return Activation::SiLU;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation a) { return a == Activation::SiLU ? "silu" : "tanh"; }

RowMat activate(Activation a, const RowMat& pre) {
  if (a == Activation::Tanh) return pre.array().tanh().matrix();
  return (pre.array() / (1.0 + (-pre.array()).exp())).matrix();
}

RowMat activation_backward(Activation a, const RowMat& pre, const RowMat& d_out) {
  if (a == Activation::Tanh) {
    const auto th = pre.array().tanh();
    return (d_out.array() * (1.0 - th * th)).matrix();
  }
  const auto s = 1.0 / (1.0 + (-pre.array()).exp());
  return (d_out.array() * s * (1.0 + pre.array() * (1.0 - s))).matrix();
}

void ParamLayout::begin_group(const std::string& name) {
  if (find_group(name) >= 0) throw ConfigError("duplicate parameter group " + name);
  groups_.push_back({name, total_, 0});
}

Slot ParamLayout::add(int rows, int cols) {
  if (groups_.empty()) throw ConfigError("parameter slot added outside a group");
  Slot s{total_, rows, cols};
  total_ += s.size();
  groups_.back().size += s.size();
  return s;
}

int ParamLayout::find_group(const std::string& name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i)
    if (groups_[i].name == name) return static_cast<int>(i);
  return -1;
}

Linear make_linear(ParamLayout& layout, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = layout.add(in, out);
  l.b = layout.add(1, out);
  return l;
}

void init_linear(const Linear& l, double* p, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t i = 0; i < l.w.size(); ++i) p[l.w.offset + i] = u(rng);
  for (std::size_t i = 0; i < l.b.size(); ++i) p[l.b.offset + i] = u(rng);
}

RowMat linear_forward(const Linear& l, const double* p, const RowMat& x) {
  ConstMap w(p + l.w.offset, l.in, l.out);
  Eigen::Map<const Eigen::RowVectorXd> b(p + l.b.offset, l.out);
  RowMat y = x * w;
  y.rowwise() += b;
  return y;
}

void linear_backward(const Linear& l, const double* p, const RowMat& x, const RowMat& dy, double* g, RowMat* dx) {
  Map gw(g + l.w.offset, l.in, l.out);
  Eigen::Map<Eigen::RowVectorXd> gb(g + l.b.offset, l.out);
  gw.noalias() += x.transpose() * dy;
  gb += dy.colwise().sum();
  if (dx) *dx = dy * ConstMap(p + l.w.offset, l.in, l.out).transpose();
}

Mlp2 make_mlp2(ParamLayout& layout, int in, int hidden, int out, bool final_act) {
  Mlp2 m;
  m.l1 = make_linear(layout, in, hidden);
  m.l2 = make_linear(layout, hidden, out);
  m.final_act = final_act;
  return m;
}

void init_mlp2(const Mlp2& m, double* p, std::mt19937_64& rng) {
  init_linear(m.l1, p, rng);
  init_linear(m.l2, p, rng);
}

RowMat mlp2_forward(const Mlp2& m, Activation act, const double* p, const RowMat& x, Mlp2Cache* cache) {
  RowMat pre1 = linear_forward(m.l1, p, x);
  RowMat a1 = activate(act, pre1);
  RowMat pre2 = linear_forward(m.l2, p, a1);
  RowMat y = m.final_act ? activate(act, pre2) : pre2;
  if (cache) {
    cache->x = x;
    cache->pre1 = std::move(pre1);
    cache->a1 = std::move(a1);
    cache->pre2 = std::move(pre2);
  }
  return y;
}

void mlp2_backward(const Mlp2& m, Activation act, const double* p, const Mlp2Cache& c, const RowMat& dy, double* g,
                   RowMat* dx) {
  const RowMat d_pre2 = m.final_act ? activation_backward(act, c.pre2, dy) : dy;
  RowMat d_a1;
  linear_backward(m.l2, p, c.a1, d_pre2, g, &d_a1);
  const RowMat d_pre1 = activation_backward(act, c.pre1, d_a1);
  linear_backward(m.l1, p, c.x, d_pre1, g, dx);
}

namespace {
constexpr double kNormEps = 1e-5;
}

LayerNorm make_layer_norm(ParamLayout& layout, int dim) {
  LayerNorm ln;
  ln.dim = dim;
  ln.gain = layout.add(1, dim);
  ln.shift = layout.add(1, dim);
  return ln;
}

void init_layer_norm(const LayerNorm& ln, double* p) {
  std::fill(p + ln.gain.offset, p + ln.gain.offset + ln.gain.size(), 1.0);
  std::fill(p + ln.shift.offset, p + ln.shift.offset + ln.shift.size(), 0.0);
}

RowMat layer_norm_forward(const LayerNorm& ln, const double* p, const RowMat& x, LayerNormCache* cache) {
  Eigen::Map<const Eigen::RowVectorXd> gain(p + ln.gain.offset, ln.dim), shift(p + ln.shift.offset, ln.dim);
  RowMat xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + kNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  RowMat y = (xhat.array().rowwise() * gain.array()).rowwise() + shift.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

void layer_norm_backward(const LayerNorm& ln, const double* p, const LayerNormCache& c, const RowMat& dy, double* g,
                         RowMat* dx) {
  Eigen::Map<const Eigen::RowVectorXd> gain(p + ln.gain.offset, ln.dim);
  Eigen::Map<Eigen::RowVectorXd>(g + ln.gain.offset, ln.dim) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  Eigen::Map<Eigen::RowVectorXd>(g + ln.shift.offset, ln.dim) += dy.colwise().sum();
  if (!dx) return;
  const RowMat dxhat = dy.array().rowwise() * gain.array();
  dx->resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).mean();
    dx->row(r) = c.inv_std(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
}

}  // namespace xtalgen
