#include "raydet/tape.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace raydet::nn {

namespace {
double stable_softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

NodeId Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size()) - 1;
}

Tensor& Tape::grad(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

NodeId Tape::input(Tensor value) { return push(std::move(value), false, nullptr); }

NodeId Tape::param(const Tensor& value, Tensor* grad_sink) {
  NodeId id = push(value, true, nullptr);
  nodes_[id].sink = grad_sink;
  return id;
}

NodeId Tape::linear(NodeId p, NodeId x) {
  const Tensor& P = nodes_[p].value;
  const Tensor& X = nodes_[x].value;
  if (P.rows != X.rows) throw std::invalid_argument("linear: width mismatch");
  const int in = P.rows, out_w = P.cols, B = X.cols;
  Tensor Y(out_w, B);
  for (int b = 0; b < B; ++b) {
    const double* xv = X.col(b);
    double* yv = Y.col(b);
    for (int o = 0; o < out_w; ++o) {
      const double* pv = P.col(o);
      double acc = 0.0;
      for (int k = 0; k < in; ++k) acc += pv[k] * xv[k];
      yv[o] = acc;
    }
  }
  bool ng = nodes_[p].needs_grad || nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [p, x, out, in, out_w, B](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& P2 = t.nodes_[p].value;
      const Tensor& X2 = t.nodes_[x].value;
      if (t.nodes_[p].needs_grad) {
        Tensor& dP = t.grad(p);
        for (int b = 0; b < B; ++b) {
          const double* xv = X2.col(b);
          const double* gv = G.col(b);
          for (int o = 0; o < out_w; ++o) {
            double g = gv[o];
            if (g == 0.0) continue;
            double* dv = dP.col(o);
            for (int k = 0; k < in; ++k) dv[k] += xv[k] * g;
          }
        }
      }
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (int b = 0; b < B; ++b) {
          const double* gv = G.col(b);
          double* dx = dX.col(b);
          for (int o = 0; o < out_w; ++o) {
            double g = gv[o];
            if (g == 0.0) continue;
            const double* pv = P2.col(o);
            for (int k = 0; k < in; ++k) dx[k] += pv[k] * g;
          }
        }
      }
    };
  return out;
}

NodeId Tape::add_bias(NodeId x, NodeId b) {
  const Tensor& X = nodes_[x].value;
  const Tensor& Bv = nodes_[b].value;
  if (Bv.rows != X.rows || Bv.cols != 1)
    throw std::invalid_argument("add_bias: shape mismatch");
  Tensor Y = X;
  for (int c = 0; c < Y.cols; ++c) {
    double* yv = Y.col(c);
    const double* bv = Bv.col(0);
    for (int r = 0; r < Y.rows; ++r) yv[r] += bv[r];
  }
  bool ng = nodes_[x].needs_grad || nodes_[b].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, b, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (std::size_t k = 0; k < G.size(); ++k) dX.data[k] += G.data[k];
      }
      if (t.nodes_[b].needs_grad) {
        Tensor& dB = t.grad(b);
        for (int c = 0; c < G.cols; ++c) {
          const double* gv = G.col(c);
          for (int r = 0; r < G.rows; ++r) dB.data[r] += gv[r];
        }
      }
    };
  return out;
}

NodeId Tape::relu(NodeId x) {
  const Tensor& X = nodes_[x].value;
  Tensor Y = X;
  for (double& v : Y.data)
    if (v < 0.0) v = 0.0;  // keeps NaN so divergence detection sees it
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      for (std::size_t k = 0; k < G.size(); ++k)
        if (X2.data[k] > 0.0) dX.data[k] += G.data[k];
    };
  return out;
}

NodeId Tape::softplus(NodeId x) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Y.data[k] = stable_softplus(X.data[k]);
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      for (std::size_t k = 0; k < G.size(); ++k)
        dX.data[k] += G.data[k] * sigmoid_scalar(X2.data[k]);
    };
  return out;
}

NodeId Tape::sigmoid(NodeId x) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Y.data[k] = sigmoid_scalar(X.data[k]);
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& Y2 = t.nodes_[out].value;
      Tensor& dX = t.grad(x);
      for (std::size_t k = 0; k < G.size(); ++k) {
        double y = Y2.data[k];
        dX.data[k] += G.data[k] * y * (1.0 - y);
      }
    };
  return out;
}

NodeId Tape::softmax_cols(NodeId x) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, X.cols);
  for (int c = 0; c < X.cols; ++c) {
    const double* xv = X.col(c);
    double* yv = Y.col(c);
    double mx = xv[0];
    for (int r = 1; r < X.rows; ++r) mx = std::max(mx, xv[r]);
    double sum = 0.0;
    for (int r = 0; r < X.rows; ++r) {
      yv[r] = std::exp(xv[r] - mx);
      sum += yv[r];
    }
    for (int r = 0; r < X.rows; ++r) yv[r] /= sum;
  }
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& Y2 = t.nodes_[out].value;
      Tensor& dX = t.grad(x);
      for (int c = 0; c < G.cols; ++c) {
        const double* gv = G.col(c);
        const double* yv = Y2.col(c);
        double* dx = dX.col(c);
        double dotgy = 0.0;
        for (int r = 0; r < G.rows; ++r) dotgy += gv[r] * yv[r];
        for (int r = 0; r < G.rows; ++r) dx[r] += yv[r] * (gv[r] - dotgy);
      }
    };
  return out;
}

NodeId Tape::concat_rows(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input list");
  int cols = nodes_[xs[0]].value.cols;
  int rows = 0;
  bool ng = false;
  for (NodeId id : xs) {
    const Tensor& T = nodes_[id].value;
    if (T.cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += T.rows;
    ng = ng || nodes_[id].needs_grad;
  }
  Tensor Y(rows, cols);
  for (int c = 0; c < cols; ++c) {
    double* yv = Y.col(c);
    int off = 0;
    for (NodeId id : xs) {
      const Tensor& T = nodes_[id].value;
      const double* tv = T.col(c);
      for (int r = 0; r < T.rows; ++r) yv[off + r] = tv[r];
      off += T.rows;
    }
  }
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    std::vector<NodeId> parts = xs;
    nodes_[out].back = [parts, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      for (int c = 0; c < G.cols; ++c) {
        const double* gv = G.col(c);
        int off = 0;
        for (NodeId id : parts) {
          const Tensor& T = t.nodes_[id].value;
          if (t.nodes_[id].needs_grad) {
            double* dv = t.grad(id).col(c);
            for (int r = 0; r < T.rows; ++r) dv[r] += gv[off + r];
          }
          off += T.rows;
        }
      }
    };
  }
  return out;
}

NodeId Tape::slice_rows(NodeId x, int row0, int count) {
  const Tensor& X = nodes_[x].value;
  if (row0 < 0 || row0 + count > X.rows)
    throw std::invalid_argument("slice_rows: range outside tensor");
  Tensor Y(count, X.cols);
  for (int c = 0; c < X.cols; ++c) {
    const double* xv = X.col(c);
    double* yv = Y.col(c);
    for (int r = 0; r < count; ++r) yv[r] = xv[row0 + r];
  }
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out, row0, count](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dX = t.grad(x);
      for (int c = 0; c < G.cols; ++c) {
        const double* gv = G.col(c);
        double* dx = dX.col(c);
        for (int r = 0; r < count; ++r) dx[row0 + r] += gv[r];
      }
    };
  return out;
}

NodeId Tape::axpb(NodeId x, double a, double b) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Y.data[k] = a * X.data[k] + b;
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out, a](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dX = t.grad(x);
      for (std::size_t k = 0; k < G.size(); ++k) dX.data[k] += a * G.data[k];
    };
  return out;
}

NodeId Tape::add(NodeId x, NodeId y) {
  const Tensor& X = nodes_[x].value;
  const Tensor& Y = nodes_[y].value;
  if (!X.same_shape(Y)) throw std::invalid_argument("add: shape mismatch");
  Tensor Z(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Z.data[k] = X.data[k] + Y.data[k];
  bool ng = nodes_[x].needs_grad || nodes_[y].needs_grad;
  NodeId out = push(std::move(Z), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, y, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (std::size_t k = 0; k < G.size(); ++k) dX.data[k] += G.data[k];
      }
      if (t.nodes_[y].needs_grad) {
        Tensor& dY = t.grad(y);
        for (std::size_t k = 0; k < G.size(); ++k) dY.data[k] += G.data[k];
      }
    };
  return out;
}

NodeId Tape::mul(NodeId x, NodeId y) {
  const Tensor& X = nodes_[x].value;
  const Tensor& Y = nodes_[y].value;
  if (!X.same_shape(Y)) throw std::invalid_argument("mul: shape mismatch");
  Tensor Z(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Z.data[k] = X.data[k] * Y.data[k];
  bool ng = nodes_[x].needs_grad || nodes_[y].needs_grad;
  NodeId out = push(std::move(Z), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, y, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& X2 = t.nodes_[x].value;
      const Tensor& Y2 = t.nodes_[y].value;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (std::size_t k = 0; k < G.size(); ++k) dX.data[k] += G.data[k] * Y2.data[k];
      }
      if (t.nodes_[y].needs_grad) {
        Tensor& dY = t.grad(y);
        for (std::size_t k = 0; k < G.size(); ++k) dY.data[k] += G.data[k] * X2.data[k];
      }
    };
  return out;
}

NodeId Tape::mul_cols(NodeId x, NodeId v) {
  const Tensor& X = nodes_[x].value;
  const Tensor& V = nodes_[v].value;
  if (V.rows != 1 || V.cols != X.cols) throw std::invalid_argument("mul_cols: shape");
  Tensor Y(X.rows, X.cols);
  for (int c = 0; c < X.cols; ++c) {
    double s = V.data[c];
    const double* xv = X.col(c);
    double* yv = Y.col(c);
    for (int r = 0; r < X.rows; ++r) yv[r] = xv[r] * s;
  }
  bool ng = nodes_[x].needs_grad || nodes_[v].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, v, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& X2 = t.nodes_[x].value;
      const Tensor& V2 = t.nodes_[v].value;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (int c = 0; c < G.cols; ++c) {
          double s = V2.data[c];
          const double* gv = G.col(c);
          double* dx = dX.col(c);
          for (int r = 0; r < G.rows; ++r) dx[r] += gv[r] * s;
        }
      }
      if (t.nodes_[v].needs_grad) {
        Tensor& dV = t.grad(v);
        for (int c = 0; c < G.cols; ++c) {
          const double* gv = G.col(c);
          const double* xv = X2.col(c);
          double acc = 0.0;
          for (int r = 0; r < G.rows; ++r) acc += gv[r] * xv[r];
          dV.data[c] += acc;
        }
      }
    };
  return out;
}

NodeId Tape::div_cols(NodeId x, NodeId v) {
  const Tensor& X = nodes_[x].value;
  const Tensor& V = nodes_[v].value;
  if (V.rows != 1 || V.cols != X.cols) throw std::invalid_argument("div_cols: shape");
  Tensor Y(X.rows, X.cols);
  for (int c = 0; c < X.cols; ++c) {
    double inv = 1.0 / V.data[c];
    const double* xv = X.col(c);
    double* yv = Y.col(c);
    for (int r = 0; r < X.rows; ++r) yv[r] = xv[r] * inv;
  }
  bool ng = nodes_[x].needs_grad || nodes_[v].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, v, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& Y2 = t.nodes_[out].value;
      const Tensor& V2 = t.nodes_[v].value;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (int c = 0; c < G.cols; ++c) {
          double inv = 1.0 / V2.data[c];
          const double* gv = G.col(c);
          double* dx = dX.col(c);
          for (int r = 0; r < G.rows; ++r) dx[r] += gv[r] * inv;
        }
      }
      if (t.nodes_[v].needs_grad) {
        Tensor& dV = t.grad(v);
        for (int c = 0; c < G.cols; ++c) {
          double inv = 1.0 / V2.data[c];
          const double* gv = G.col(c);
          const double* yv = Y2.col(c);
          double acc = 0.0;
          for (int r = 0; r < G.rows; ++r) acc += gv[r] * yv[r];
          dV.data[c] -= acc * inv;
        }
      }
    };
  return out;
}

NodeId Tape::clamp_min(NodeId x, double floor) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, X.cols);
  for (std::size_t k = 0; k < X.size(); ++k) Y.data[k] = std::max(X.data[k], floor);
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [x, out, floor](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      for (std::size_t k = 0; k < G.size(); ++k)
        if (X2.data[k] > floor) dX.data[k] += G.data[k];
    };
  return out;
}

NodeId Tape::add_rank1(NodeId x, const std::vector<double>& u, NodeId v) {
  const Tensor& X = nodes_[x].value;
  const Tensor& V = nodes_[v].value;
  if (int(u.size()) != X.rows || V.rows != 1 || V.cols != X.cols)
    throw std::invalid_argument("add_rank1: shape mismatch");
  Tensor Y(X.rows, X.cols);
  for (int c = 0; c < X.cols; ++c) {
    double s = V.data[c];
    const double* xv = X.col(c);
    double* yv = Y.col(c);
    for (int r = 0; r < X.rows; ++r) yv[r] = xv[r] + u[r] * s;
  }
  bool ng = nodes_[x].needs_grad || nodes_[v].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    std::vector<double> uc = u;
    nodes_[out].back = [x, v, out, uc](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (std::size_t k = 0; k < G.size(); ++k) dX.data[k] += G.data[k];
      }
      if (t.nodes_[v].needs_grad) {
        Tensor& dV = t.grad(v);
        for (int c = 0; c < G.cols; ++c) {
          const double* gv = G.col(c);
          double acc = 0.0;
          for (int r = 0; r < G.rows; ++r) acc += gv[r] * uc[r];
          dV.data[c] += acc;
        }
      }
    };
  }
  return out;
}

NodeId Tape::alpha_from_sigma(NodeId sigma, Tensor delta) {
  const Tensor& S = nodes_[sigma].value;
  if (!S.same_shape(delta)) throw std::invalid_argument("alpha_from_sigma: shape");
  Tensor A(S.rows, S.cols);
  for (std::size_t k = 0; k < S.size(); ++k)
    A.data[k] = -std::expm1(-S.data[k] * delta.data[k]);
  bool ng = nodes_[sigma].needs_grad;
  NodeId out = push(std::move(A), ng, nullptr);
  if (ng) {
    Tensor d = std::move(delta);
    nodes_[out].back = [sigma, out, d](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& A2 = t.nodes_[out].value;
      Tensor& dS = t.grad(sigma);
      for (std::size_t k = 0; k < G.size(); ++k)
        dS.data[k] += G.data[k] * d.data[k] * (1.0 - A2.data[k]);
    };
  }
  return out;
}

NodeId Tape::composite_weights(NodeId sigma, Tensor delta, int samples_per_ray) {
  const Tensor& Sg = nodes_[sigma].value;
  if (Sg.rows != 1 || !Sg.same_shape(delta))
    throw std::invalid_argument("composite_weights: shape mismatch");
  if (samples_per_ray < 1 || Sg.cols % samples_per_ray != 0)
    throw std::invalid_argument("composite_weights: batch not a multiple of S");
  const int S = samples_per_ray;
  const int R = Sg.cols / S;
  Tensor W(1, Sg.cols);
  std::vector<double> sdelta(Sg.cols), trans(Sg.cols), esd(Sg.cols);
  for (int r = 0; r < R; ++r) {
    double acc = 0.0;  // prefix sum of sigma*delta, transmittance in log space
    for (int i = 0; i < S; ++i) {
      int k = r * S + i;
      double sd = Sg.data[k] * delta.data[k];
      sdelta[k] = sd;
      double T = std::exp(-acc);
      trans[k] = T;
      esd[k] = std::exp(-sd);
      W.data[k] = T * (-std::expm1(-sd));
      acc += sd;
    }
  }
  bool ng = nodes_[sigma].needs_grad;
  NodeId out = push(std::move(W), ng, nullptr);
  if (ng) {
    Tensor d = std::move(delta);
    nodes_[out].back = [sigma, out, d, trans, esd, S, R](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& W2 = t.nodes_[out].value;
      Tensor& dS = t.grad(sigma);
      // dL/d(sd_i) = g_i T_i e^{-sd_i} - sum_{k>i} g_k w_k
      for (int r = 0; r < R; ++r) {
        double suffix = 0.0;
        for (int i = S - 1; i >= 0; --i) {
          int k = r * S + i;
          double dsd = G.data[k] * trans[k] * esd[k] - suffix;
          suffix += G.data[k] * W2.data[k];
          dS.data[k] += dsd * d.data[k];
        }
      }
    };
  }
  return out;
}

NodeId Tape::weighted_reduce(NodeId w, NodeId x, int samples_per_ray) {
  const Tensor& Wv = nodes_[w].value;
  const Tensor& X = nodes_[x].value;
  if (Wv.rows != 1 || Wv.cols != X.cols)
    throw std::invalid_argument("weighted_reduce: shape mismatch");
  if (samples_per_ray < 1 || X.cols % samples_per_ray != 0)
    throw std::invalid_argument("weighted_reduce: batch not a multiple of S");
  const int S = samples_per_ray;
  const int R = X.cols / S;
  Tensor Y(X.rows, R);
  for (int r = 0; r < R; ++r) {
    double* yv = Y.col(r);
    for (int i = 0; i < S; ++i) {
      int k = r * S + i;
      double wk = Wv.data[k];
      const double* xv = X.col(k);
      for (int m = 0; m < X.rows; ++m) yv[m] += wk * xv[m];
    }
  }
  bool ng = nodes_[w].needs_grad || nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng)
    nodes_[out].back = [w, x, out, S, R](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      const Tensor& Wn = t.nodes_[w].value;
      const Tensor& X2 = t.nodes_[x].value;
      if (t.nodes_[w].needs_grad) {
        Tensor& dW = t.grad(w);
        for (int r = 0; r < R; ++r) {
          const double* gv = G.col(r);
          for (int i = 0; i < S; ++i) {
            int k = r * S + i;
            const double* xv = X2.col(k);
            double acc = 0.0;
            for (int m = 0; m < X2.rows; ++m) acc += gv[m] * xv[m];
            dW.data[k] += acc;
          }
        }
      }
      if (t.nodes_[x].needs_grad) {
        Tensor& dX = t.grad(x);
        for (int r = 0; r < R; ++r) {
          const double* gv = G.col(r);
          for (int i = 0; i < S; ++i) {
            int k = r * S + i;
            double wk = Wn.data[k];
            double* dx = dX.col(k);
            for (int m = 0; m < X2.rows; ++m) dx[m] += wk * gv[m];
          }
        }
      }
    };
  return out;
}

NodeId Tape::weighted_reduce_const(NodeId w, Tensor x, int samples_per_ray) {
  const Tensor& Wv = nodes_[w].value;
  if (Wv.rows != 1 || Wv.cols != x.cols)
    throw std::invalid_argument("weighted_reduce_const: shape mismatch");
  const int S = samples_per_ray;
  const int R = x.cols / S;
  Tensor Y(x.rows, R);
  for (int r = 0; r < R; ++r) {
    double* yv = Y.col(r);
    for (int i = 0; i < S; ++i) {
      int k = r * S + i;
      double wk = Wv.data[k];
      const double* xv = x.col(k);
      for (int m = 0; m < x.rows; ++m) yv[m] += wk * xv[m];
    }
  }
  bool ng = nodes_[w].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    Tensor xc = std::move(x);
    nodes_[out].back = [w, out, xc, S, R](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dW = t.grad(w);
      for (int r = 0; r < R; ++r) {
        const double* gv = G.col(r);
        for (int i = 0; i < S; ++i) {
          int k = r * S + i;
          const double* xv = xc.col(k);
          double acc = 0.0;
          for (int m = 0; m < xc.rows; ++m) acc += gv[m] * xv[m];
          dW.data[k] += acc;
        }
      }
    };
  }
  return out;
}

NodeId Tape::soft_bin_mass(NodeId w, std::vector<double> l_of_col, int n_bins,
                           int samples_per_ray) {
  const Tensor& Wv = nodes_[w].value;
  if (Wv.rows != 1 || int(l_of_col.size()) != Wv.cols)
    throw std::invalid_argument("soft_bin_mass: shape mismatch");
  const int S = samples_per_ray;
  const int R = Wv.cols / S;
  auto taps = [n_bins](double l, int& j0, double& f) {
    j0 = std::min(int(l), n_bins - 2 >= 0 ? n_bins - 2 : 0);
    f = std::min(std::max(l - double(j0), 0.0), 1.0);
  };
  Tensor Y(n_bins, R);
  for (int r = 0; r < R; ++r) {
    double* yv = Y.col(r);
    for (int i = 0; i < S; ++i) {
      int k = r * S + i;
      int j0;
      double f;
      taps(l_of_col[k], j0, f);
      yv[j0] += (1.0 - f) * Wv.data[k];
      yv[j0 + 1] += f * Wv.data[k];
    }
  }
  bool ng = nodes_[w].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    std::vector<double> ls = std::move(l_of_col);
    nodes_[out].back = [w, out, ls, n_bins, S, R, taps](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dW = t.grad(w);
      for (int r = 0; r < R; ++r) {
        const double* gv = G.col(r);
        for (int i = 0; i < S; ++i) {
          int k = r * S + i;
          int j0;
          double f;
          taps(ls[k], j0, f);
          dW.data[k] += (1.0 - f) * gv[j0] + f * gv[j0 + 1];
        }
      }
    };
  }
  return out;
}

NodeId Tape::gather_taps(NodeId volume, std::vector<std::array<Tap, 8>> taps) {
  const Tensor& V = nodes_[volume].value;
  const int C = V.rows;
  const int P = int(taps.size());
  Tensor Y(C, P);
  for (int p = 0; p < P; ++p) {
    double* yv = Y.col(p);
    for (const Tap& tap : taps[p]) {
      if (tap.weight == 0.0) continue;
      const double* vv = V.col(tap.voxel);
      for (int c = 0; c < C; ++c) yv[c] += tap.weight * vv[c];
    }
  }
  bool ng = nodes_[volume].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    auto tp = std::move(taps);
    nodes_[out].back = [volume, out, tp](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dV = t.grad(volume);
      for (int p = 0; p < G.cols; ++p) {
        const double* gv = G.col(p);
        for (const Tap& tap : tp[p]) {
          if (tap.weight == 0.0) continue;
          double* dv = dV.col(tap.voxel);
          for (int c = 0; c < G.rows; ++c) dv[c] += tap.weight * gv[c];
        }
      }
    };
  }
  return out;
}

NodeId Tape::gather_cols(NodeId x, std::vector<int> idx) {
  const Tensor& X = nodes_[x].value;
  Tensor Y(X.rows, int(idx.size()));
  for (int p = 0; p < Y.cols; ++p) {
    const double* xv = X.col(idx[p]);
    double* yv = Y.col(p);
    for (int r = 0; r < X.rows; ++r) yv[r] = xv[r];
  }
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    std::vector<int> ix = std::move(idx);
    nodes_[out].back = [x, out, ix](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      Tensor& dX = t.grad(x);
      for (int p = 0; p < G.cols; ++p) {
        const double* gv = G.col(p);
        double* dx = dX.col(ix[p]);
        for (int r = 0; r < G.rows; ++r) dx[r] += gv[r];
      }
    };
  }
  return out;
}

NodeId Tape::backproject_taps(const std::vector<NodeId>& maps,
                              std::vector<std::vector<ViewTap>> taps, int n_voxels) {
  if (maps.empty()) throw std::invalid_argument("backproject_taps: no feature maps");
  const int C = nodes_[maps[0]].value.rows;
  bool ng = false;
  for (NodeId m : maps) {
    if (nodes_[m].value.rows != C)
      throw std::invalid_argument("backproject_taps: channel mismatch");
    ng = ng || nodes_[m].needs_grad;
  }
  Tensor Y(C, n_voxels);
  for (int v = 0; v < n_voxels; ++v) {
    double* yv = Y.col(v);
    for (const ViewTap& vt : taps[v]) {
      const Tensor& M = nodes_[maps[vt.map]].value;
      for (int j = 0; j < 4; ++j) {
        if (vt.w[j] == 0.0) continue;
        const double* mv = M.col(vt.col[j]);
        for (int c = 0; c < C; ++c) yv[c] += vt.w[j] * mv[c];
      }
    }
  }
  NodeId out = push(std::move(Y), ng, nullptr);
  if (ng) {
    std::vector<NodeId> ms = maps;
    auto tp = std::move(taps);
    nodes_[out].back = [ms, tp, out](Tape& t) {
      const Tensor& G = t.nodes_[out].grad;
      for (int v = 0; v < G.cols; ++v) {
        const double* gv = G.col(v);
        for (const ViewTap& vt : tp[v]) {
          if (!t.nodes_[ms[vt.map]].needs_grad) continue;
          Tensor& dM = t.grad(ms[vt.map]);
          for (int j = 0; j < 4; ++j) {
            if (vt.w[j] == 0.0) continue;
            double* dm = dM.col(vt.col[j]);
            for (int c = 0; c < G.rows; ++c) dm[c] += vt.w[j] * gv[c];
          }
        }
      }
    };
  }
  return out;
}

NodeId Tape::mse_loss(NodeId x, Tensor target) {
  const Tensor& X = nodes_[x].value;
  if (!X.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < X.size(); ++k) {
    double e = X.data[k] - target.data[k];
    acc += e * e;
  }
  const double n = double(X.size());
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(Tensor::scalar(acc / n), ng, nullptr);
  if (ng) {
    Tensor tg = std::move(target);
    nodes_[out].back = [x, out, tg, n](Tape& t) {
      double g = t.nodes_[out].grad.data[0];
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      double s = 2.0 * g / n;
      for (std::size_t k = 0; k < X2.size(); ++k)
        dX.data[k] += s * (X2.data[k] - tg.data[k]);
    };
  }
  return out;
}

NodeId Tape::softmax_ce(NodeId logits, std::vector<int> labels,
                        std::vector<double> mask) {
  const Tensor& X = nodes_[logits].value;
  if (int(labels.size()) != X.cols || int(mask.size()) != X.cols)
    throw std::invalid_argument("softmax_ce: label/mask size mismatch");
  double cnt = 0.0, acc = 0.0;
  for (int c = 0; c < X.cols; ++c) {
    if (mask[c] == 0.0) continue;
    if (labels[c] < 0 || labels[c] >= X.rows)
      throw std::invalid_argument("softmax_ce: label out of range");
    const double* xv = X.col(c);
    double mx = xv[0];
    for (int r = 1; r < X.rows; ++r) mx = std::max(mx, xv[r]);
    double lse = 0.0;
    for (int r = 0; r < X.rows; ++r) lse += std::exp(xv[r] - mx);
    acc += mx + std::log(lse) - xv[labels[c]];
    cnt += 1.0;
  }
  double loss = cnt > 0.0 ? acc / cnt : 0.0;
  bool ng = nodes_[logits].needs_grad;
  NodeId out = push(Tensor::scalar(loss), ng, nullptr);
  if (ng && cnt > 0.0) {
    std::vector<int> lb = std::move(labels);
    std::vector<double> mk = std::move(mask);
    nodes_[out].back = [logits, out, lb, mk, cnt](Tape& t) {
      double g = t.nodes_[out].grad.data[0] / cnt;
      const Tensor& X2 = t.nodes_[logits].value;
      Tensor& dX = t.grad(logits);
      for (int c = 0; c < X2.cols; ++c) {
        if (mk[c] == 0.0) continue;
        const double* xv = X2.col(c);
        double* dx = dX.col(c);
        double mx = xv[0];
        for (int r = 1; r < X2.rows; ++r) mx = std::max(mx, xv[r]);
        double sum = 0.0;
        for (int r = 0; r < X2.rows; ++r) sum += std::exp(xv[r] - mx);
        for (int r = 0; r < X2.rows; ++r) {
          double p = std::exp(xv[r] - mx) / sum;
          dx[r] += g * (p - (r == lb[c] ? 1.0 : 0.0));
        }
      }
    };
  }
  return out;
}

NodeId Tape::nll_probs(NodeId probs, std::vector<int> labels, std::vector<double> mask,
                       double floor) {
  const Tensor& P = nodes_[probs].value;
  if (int(labels.size()) != P.cols || int(mask.size()) != P.cols)
    throw std::invalid_argument("nll_probs: label/mask size mismatch");
  double cnt = 0.0, acc = 0.0;
  for (int c = 0; c < P.cols; ++c) {
    if (mask[c] == 0.0) continue;
    if (labels[c] < 0 || labels[c] >= P.rows)
      throw std::invalid_argument("nll_probs: label out of range");
    acc += -std::log(std::max(P.at(labels[c], c), floor));
    cnt += 1.0;
  }
  double loss = cnt > 0.0 ? acc / cnt : 0.0;
  bool ng = nodes_[probs].needs_grad;
  NodeId out = push(Tensor::scalar(loss), ng, nullptr);
  if (ng && cnt > 0.0) {
    std::vector<int> lb = std::move(labels);
    std::vector<double> mk = std::move(mask);
    nodes_[out].back = [probs, out, lb, mk, cnt, floor](Tape& t) {
      double g = t.nodes_[out].grad.data[0] / cnt;
      const Tensor& P2 = t.nodes_[probs].value;
      Tensor& dP = t.grad(probs);
      for (int c = 0; c < P2.cols; ++c) {
        if (mk[c] == 0.0) continue;
        double p = P2.at(lb[c], c);
        if (p > floor) dP.at(lb[c], c) += -g / p;
      }
    };
  }
  return out;
}

NodeId Tape::l1_loss(NodeId x, Tensor target, std::vector<double> mask) {
  const Tensor& X = nodes_[x].value;
  if (!X.same_shape(target) || int(mask.size()) != X.cols)
    throw std::invalid_argument("l1_loss: shape mismatch");
  double cnt = 0.0, acc = 0.0;
  for (int c = 0; c < X.cols; ++c) {
    if (mask[c] == 0.0) continue;
    for (int r = 0; r < X.rows; ++r) acc += std::abs(X.at(r, c) - target.at(r, c));
    cnt += 1.0;
  }
  double denom = cnt * X.rows;
  double loss = cnt > 0.0 ? acc / denom : 0.0;
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(Tensor::scalar(loss), ng, nullptr);
  if (ng && cnt > 0.0) {
    Tensor tg = std::move(target);
    std::vector<double> mk = std::move(mask);
    nodes_[out].back = [x, out, tg, mk, denom](Tape& t) {
      double g = t.nodes_[out].grad.data[0] / denom;
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      for (int c = 0; c < X2.cols; ++c) {
        if (mk[c] == 0.0) continue;
        for (int r = 0; r < X2.rows; ++r) {
          double e = X2.at(r, c) - tg.at(r, c);
          dX.at(r, c) += g * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0));
        }
      }
    };
  }
  return out;
}

NodeId Tape::huber_loss(NodeId x, Tensor target, std::vector<double> mask,
                        double delta) {
  const Tensor& X = nodes_[x].value;
  if (!X.same_shape(target) || int(mask.size()) != X.cols)
    throw std::invalid_argument("huber_loss: shape mismatch");
  double cnt = 0.0, acc = 0.0;
  for (int c = 0; c < X.cols; ++c) {
    if (mask[c] == 0.0) continue;
    for (int r = 0; r < X.rows; ++r) {
      double e = std::abs(X.at(r, c) - target.at(r, c));
      acc += e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
    }
    cnt += 1.0;
  }
  double denom = cnt * X.rows;
  double loss = cnt > 0.0 ? acc / denom : 0.0;
  bool ng = nodes_[x].needs_grad;
  NodeId out = push(Tensor::scalar(loss), ng, nullptr);
  if (ng && cnt > 0.0) {
    Tensor tg = std::move(target);
    std::vector<double> mk = std::move(mask);
    nodes_[out].back = [x, out, tg, mk, denom, delta](Tape& t) {
      double g = t.nodes_[out].grad.data[0] / denom;
      const Tensor& X2 = t.nodes_[x].value;
      Tensor& dX = t.grad(x);
      for (int c = 0; c < X2.cols; ++c) {
        if (mk[c] == 0.0) continue;
        for (int r = 0; r < X2.rows; ++r) {
          double e = X2.at(r, c) - tg.at(r, c);
          double d = std::abs(e) <= delta ? e : delta * (e > 0.0 ? 1.0 : -1.0);
          dX.at(r, c) += g * d;
        }
      }
    };
  }
  return out;
}

NodeId Tape::bce_loss(NodeId p, Tensor target) {
  const Tensor& P = nodes_[p].value;
  if (!P.same_shape(target)) throw std::invalid_argument("bce_loss: shape mismatch");
  const double floor = 1e-12;
  double acc = 0.0;
  for (std::size_t k = 0; k < P.size(); ++k) {
    double pv = std::min(std::max(P.data[k], floor), 1.0 - floor);
    double tv = target.data[k];
    acc += -(tv * std::log(pv) + (1.0 - tv) * std::log(1.0 - pv));
  }
  const double n = double(P.size());
  bool ng = nodes_[p].needs_grad;
  NodeId out = push(Tensor::scalar(acc / n), ng, nullptr);
  if (ng) {
    Tensor tg = std::move(target);
    nodes_[out].back = [p, out, tg, n, floor](Tape& t) {
      double g = t.nodes_[out].grad.data[0] / n;
      const Tensor& P2 = t.nodes_[p].value;
      Tensor& dP = t.grad(p);
      for (std::size_t k = 0; k < P2.size(); ++k) {
        double pv = P2.data[k];
        if (pv <= floor || pv >= 1.0 - floor) continue;
        dP.data[k] += g * (-tg.data[k] / pv + (1.0 - tg.data[k]) / (1.0 - pv));
      }
    };
  }
  return out;
}

NodeId Tape::weighted_sum_scalars(const std::vector<NodeId>& xs,
                                  const std::vector<double>& weights) {
  if (xs.size() != weights.size() || xs.empty())
    throw std::invalid_argument("weighted_sum_scalars: size mismatch");
  double acc = 0.0;
  bool ng = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& T = nodes_[xs[i]].value;
    if (T.rows != 1 || T.cols != 1)
      throw std::invalid_argument("weighted_sum_scalars: non-scalar input");
    acc += weights[i] * T.data[0];
    ng = ng || nodes_[xs[i]].needs_grad;
  }
  NodeId out = push(Tensor::scalar(acc), ng, nullptr);
  if (ng) {
    std::vector<NodeId> ids = xs;
    std::vector<double> ws = weights;
    nodes_[out].back = [ids, ws, out](Tape& t) {
      double g = t.nodes_[out].grad.data[0];
      for (std::size_t i = 0; i < ids.size(); ++i)
        if (t.nodes_[ids[i]].needs_grad) t.grad(ids[i]).data[0] += ws[i] * g;
    };
  }
  return out;
}

void Tape::backward(NodeId root) {
  const Tensor& rv = nodes_[root].value;
  if (rv.rows != 1 || rv.cols != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  grad(root).data[0] = 1.0;
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this);
    if (n.sink) {
      assert(n.sink->same_shape(n.grad));
      for (std::size_t k = 0; k < n.grad.size(); ++k) n.sink->data[k] += n.grad.data[k];
    }
  }
}

}  // namespace raydet::nn
