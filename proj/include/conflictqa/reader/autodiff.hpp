#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace conflictqa::reader {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Matrix&) const = default;
};

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool decay = true;  // weight decay applies (off for biases, norms, embeddings)

  Parameter(std::string n, Matrix v, bool d = true);
  void zero_grad();
};

class Tape;

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

// Records operations for one forward pass; backward() propagates into Parameter::grad.
class Tape {
 public:
  Var constant(Matrix value);
  Var param(Parameter& p);
  // Rows of an embedding table selected by `ids`.
  Var embed(Parameter& table, const std::vector<int>& ids);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  // Seeds d(out)/d(out) = scale for a 1x1 node and runs the reverse sweep.
  void backward(Var out, double scale = 1.0);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Matrix value, std::function<void(Tape&, std::size_t self)> backward);
  Matrix& grad_ref(Var v);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, std::size_t)> backward;
  };
  std::vector<Node> nodes_;
};

Var add(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var a, Var row);  // broadcasts a 1 x c row over every row of a
Var matmul(Tape& t, Var a, Var b);
Var matmul_bt(Tape& t, Var a, Var b);  // a * b^T
Var scale(Tape& t, Var a, double s);
Var gelu(Tape& t, Var a);  // tanh approximation
Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps = 1e-5);
// Row softmax; entries with allowed[r*cols+c] == 0 get probability 0.
Var softmax_rows(Tape& t, Var a, const std::vector<char>& allowed);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var mean_rows(Tape& t, Var a);  // 1 x cols
Var sigmoid(Tape& t, Var a);

}  // namespace conflictqa::reader
