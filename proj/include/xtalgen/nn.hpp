#pragma once

// Minimal dense-layer toolkit with hand-written backward passes. Parameters
// live in one flat double buffer; layers hold offsets into it.

#include <Eigen/Dense>

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace xtalgen {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { SiLU, Tanh };

Activation parse_activation(const std::string& name);
std::string to_string(Activation a);

RowMat activate(Activation a, const RowMat& pre);
// d loss / d pre given d loss / d act(pre).
RowMat activation_backward(Activation a, const RowMat& pre, const RowMat& d_out);

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct Slot {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

class ParamLayout {
 public:
  void begin_group(const std::string& name);
  Slot add(int rows, int cols);
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::size_t total() const { return total_; }
  // -1 when absent
  int find_group(const std::string& name) const;

 private:
  std::vector<ParamGroup> groups_;
  std::size_t total_ = 0;
};

// y = x W + b with W stored row-major as in x out.
struct Linear {
  Slot w, b;
  int in = 0, out = 0;
};

Linear make_linear(ParamLayout& layout, int in, int out);
void init_linear(const Linear& l, double* p, std::mt19937_64& rng);
RowMat linear_forward(const Linear& l, const double* p, const RowMat& x);
// Accumulates dW, db into g; writes dx when requested.
void linear_backward(const Linear& l, const double* p, const RowMat& x, const RowMat& dy, double* g, RowMat* dx);

// Linear -> act -> Linear [-> act]
struct Mlp2 {
  Linear l1, l2;
  bool final_act = false;
};

struct Mlp2Cache {
  RowMat x, pre1, a1, pre2;
};

Mlp2 make_mlp2(ParamLayout& layout, int in, int hidden, int out, bool final_act);
void init_mlp2(const Mlp2& m, double* p, std::mt19937_64& rng);
RowMat mlp2_forward(const Mlp2& m, Activation act, const double* p, const RowMat& x, Mlp2Cache* cache);
void mlp2_backward(const Mlp2& m, Activation act, const double* p, const Mlp2Cache& cache, const RowMat& dy, double* g,
                   RowMat* dx);

// Per-row normalisation with learned gain and shift.
struct LayerNorm {
  Slot gain, shift;
  int dim = 0;
};

struct LayerNormCache {
  RowMat xhat;
  Eigen::VectorXd inv_std;
};

LayerNorm make_layer_norm(ParamLayout& layout, int dim);
void init_layer_norm(const LayerNorm& ln, double* p);
RowMat layer_norm_forward(const LayerNorm& ln, const double* p, const RowMat& x, LayerNormCache* cache);
void layer_norm_backward(const LayerNorm& ln, const double* p, const LayerNormCache& c, const RowMat& dy, double* g,
                         RowMat* dx);

}  // namespace xtalgen
