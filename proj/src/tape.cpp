#include "gdiff/tape.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "gdiff/kernels.hpp"

namespace gdiff {

const Tensor& Var::val() const { return tape->value(id); }
Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.grad = Tensor::zeros(value.shape);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(Tensor value, BackwardFn backward) {
  value.ensure_finite("tape op");
  Node n;
  n.grad = Tensor::zeros(value.shape);
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw DimensionError("backward: var from another tape");
  if (value(root.id).numel() != 1) {
    throw DimensionError("backward: root must be scalar, got shape " +
                         value(root.id).shape_str());
  }
  grad(root.id).data[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    auto& fn = nodes_[static_cast<size_t>(i)].backward;
    if (fn) fn(*this, i);
  }
}

namespace ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " +
                         t.shape_str());
  }
}

}  // namespace

Var add(Var a, Var b) {
  const Tensor& av = a.val();
  require_same_shape(av, b.val(), "add");
  Tensor out(av.shape);
  kernels::add(av.numel(), av.data.data(), b.val().data.data(), out.data.data());
  const int aid = a.id, bid = b.id;
  return a.tape->make(std::move(out), [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::axpy(g.numel(), 1.0, g.data.data(), t.grad(aid).data.data());
    kernels::axpy(g.numel(), 1.0, g.data.data(), t.grad(bid).data.data());
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.val();
  require_same_shape(av, b.val(), "mul");
  Tensor out(av.shape);
  kernels::mul(av.numel(), av.data.data(), b.val().data.data(), out.data.data());
  const int aid = a.id, bid = b.id;
  return a.tape->make(std::move(out), [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av2 = t.value(aid);
    const Tensor& bv2 = t.value(bid);
    Tensor& ga = t.grad(aid);
    Tensor& gb = t.grad(bid);
    const int n = g.numel();
    for (int i = 0; i < n; ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av2[i];
    }
  });
}

Var scale(Var a, double s) {
  const Tensor& av = a.val();
  Tensor out(av.shape);
  kernels::scale(av.numel(), av.data.data(), s, out.data.data());
  const int aid = a.id;
  return a.tape->make(std::move(out), [aid, s](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::axpy(g.numel(), s, g.data.data(), t.grad(aid).data.data());
  });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.shape[1] != bv.shape[0]) {
    throw DimensionError("matmul: inner dimensions disagree, " + av.shape_str() + " vs " +
                         bv.shape_str());
  }
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  kernels::matmul_nn(m, k, n, av.data.data(), bv.data.data(), out.data.data(), false);
  const int aid = a.id, bid = b.id;
  return a.tape->make(std::move(out), [aid, bid, m, k, n](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    // dA = G * B^T, dB = A^T * G
    kernels::matmul_nt(m, n, k, g.data.data(), t.value(bid).data.data(),
                       t.grad(aid).data.data(), true);
    kernels::matmul_tn(k, m, n, t.value(aid).data.data(), g.data.data(),
                       t.grad(bid).data.data(), true);
  });
}

Var relu(Var x) {
  const Tensor& xv = x.val();
  Tensor out(xv.shape);
  kernels::relu(xv.numel(), xv.data.data(), out.data.data());
  const int xid = x.id;
  return x.tape->make(std::move(out), [xid](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::relu_backward(g.numel(), t.value(xid).data.data(), g.data.data(),
                           t.grad(xid).data.data());
  });
}

Var mean_all(Var x) {
  const Tensor& xv = x.val();
  if (xv.numel() == 0) throw DimensionError("mean_all: empty tensor");
  double sum = 0.0;
  for (double v : xv.data) sum += v;
  const int n = xv.numel();
  const int xid = x.id;
  return x.tape->make(Tensor::scalar(sum / n), [xid, n](Tape& t, int self) {
    const double g = t.grad(self)[0] / n;
    Tensor& gx = t.grad(xid);
    for (int i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

Var add_row_broadcast(Var x, Var b) {
  const Tensor& xv = x.val();
  const Tensor& bv = b.val();
  require_matrix(xv, "add_row_broadcast");
  if (bv.ndim() != 1 || bv.shape[0] != xv.shape[1]) {
    throw DimensionError("add_row_broadcast: vector " + bv.shape_str() +
                         " does not match row width of " + xv.shape_str());
  }
  const int r = xv.shape[0], c = xv.shape[1];
  Tensor out(xv.shape);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) + bv[j];
  }
  const int xid = x.id, bid = b.id;
  return x.tape->make(std::move(out), [xid, bid, r, c](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::axpy(g.numel(), 1.0, g.data.data(), t.grad(xid).data.data());
    Tensor& gb = t.grad(bid);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) gb[j] += g.at(i, j);
    }
  });
}

Var mul_row_broadcast(Var x, Var g) {
  const Tensor& xv = x.val();
  const Tensor& gv = g.val();
  require_matrix(xv, "mul_row_broadcast");
  if (gv.ndim() != 1 || gv.shape[0] != xv.shape[1]) {
    throw DimensionError("mul_row_broadcast: vector " + gv.shape_str() +
                         " does not match row width of " + xv.shape_str());
  }
  const int r = xv.shape[0], c = xv.shape[1];
  Tensor out(xv.shape);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) * gv[j];
  }
  const int xid = x.id, gid = g.id;
  return x.tape->make(std::move(out), [xid, gid, r, c](Tape& t, int self) {
    const Tensor& gr = t.grad(self);
    const Tensor& xv2 = t.value(xid);
    const Tensor& gv2 = t.value(gid);
    Tensor& gx = t.grad(xid);
    Tensor& gg = t.grad(gid);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        gx.at(i, j) += gr.at(i, j) * gv2[j];
        gg[j] += gr.at(i, j) * xv2.at(i, j);
      }
    }
  });
}

Var add_positional(Var x, Var pos) {
  const Tensor& xv = x.val();
  const Tensor& pv = pos.val();
  require_matrix(xv, "add_positional");
  require_matrix(pv, "add_positional");
  if (pv.shape[1] != xv.shape[1] || pv.shape[0] <= 0 || xv.shape[0] % pv.shape[0] != 0) {
    throw DimensionError("add_positional: table " + pv.shape_str() +
                         " incompatible with input " + xv.shape_str());
  }
  const int r = xv.shape[0], c = xv.shape[1], l = pv.shape[0];
  Tensor out(xv.shape);
  for (int i = 0; i < r; ++i) {
    const int p = i % l;
    for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) + pv.at(p, j);
  }
  const int xid = x.id, pid = pos.id;
  return x.tape->make(std::move(out), [xid, pid, r, c, l](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::axpy(g.numel(), 1.0, g.data.data(), t.grad(xid).data.data());
    Tensor& gp = t.grad(pid);
    for (int i = 0; i < r; ++i) {
      const int p = i % l;
      for (int j = 0; j < c; ++j) gp.at(p, j) += g.at(i, j);
    }
  });
}

Var add_segment_broadcast(Var x, Var ctx, int seg_len) {
  const Tensor& xv = x.val();
  const Tensor& cv = ctx.val();
  require_matrix(xv, "add_segment_broadcast");
  require_matrix(cv, "add_segment_broadcast");
  if (seg_len <= 0 || xv.shape[0] != cv.shape[0] * seg_len || xv.shape[1] != cv.shape[1]) {
    throw DimensionError("add_segment_broadcast: context " + cv.shape_str() +
                         " with segment length " + std::to_string(seg_len) +
                         " incompatible with input " + xv.shape_str());
  }
  const int r = xv.shape[0], c = xv.shape[1];
  Tensor out(xv.shape);
  for (int i = 0; i < r; ++i) {
    const int s = i / seg_len;
    for (int j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) + cv.at(s, j);
  }
  const int xid = x.id, cid = ctx.id;
  return x.tape->make(std::move(out), [xid, cid, r, c, seg_len](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::axpy(g.numel(), 1.0, g.data.data(), t.grad(xid).data.data());
    Tensor& gc = t.grad(cid);
    for (int i = 0; i < r; ++i) {
      const int s = i / seg_len;
      for (int j = 0; j < c; ++j) gc.at(s, j) += g.at(i, j);
    }
  });
}

Var layer_norm_rows(Var x, double eps) {
  const Tensor& xv = x.val();
  require_matrix(xv, "layer_norm_rows");
  const int r = xv.shape[0], c = xv.shape[1];
  Tensor out(xv.shape);
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  kernels::layernorm_rows(r, c, xv.data.data(), eps, out.data.data(), rstd->data());
  const int xid = x.id;
  return x.tape->make(std::move(out), [xid, r, c, rstd](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    kernels::layernorm_rows_backward(r, c, t.value(self).data.data(), rstd->data(),
                                     g.data.data(), t.grad(xid).data.data());
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.val();
  require_matrix(xv, "softmax_rows");
  const int r = xv.shape[0], c = xv.shape[1];
  Tensor out(xv.shape);
  kernels::softmax_rows(r, c, xv.data.data(), out.data.data());
  const int xid = x.id;
  return x.tape->make(std::move(out), [xid, r, c](Tape& t, int self) {
    kernels::softmax_rows_backward(r, c, t.value(self).data.data(),
                                   t.grad(self).data.data(), t.grad(xid).data.data());
  });
}

Var gather_rows(Var table, std::vector<int> indices) {
  const Tensor& tv = table.val();
  require_matrix(tv, "gather_rows");
  const int rows = tv.shape[0], c = tv.shape[1];
  for (int idx : indices) {
    if (idx < 0 || idx >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(idx) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
  }
  const int n = static_cast<int>(indices.size());
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    const double* src = tv.data.data() + static_cast<size_t>(indices[static_cast<size_t>(i)]) * c;
    std::copy(src, src + c, out.data.data() + static_cast<size_t>(i) * c);
  }
  const int tid = table.id;
  auto idx = std::make_shared<std::vector<int>>(std::move(indices));
  return table.tape->make(std::move(out), [tid, c, idx](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(tid);
    for (size_t i = 0; i < idx->size(); ++i) {
      double* dst = gt.data.data() + static_cast<size_t>((*idx)[i]) * c;
      const double* src = g.data.data() + i * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: no inputs");
  const int r = xs[0].val().rows();
  int total = 0;
  for (const Var& x : xs) {
    require_matrix(x.val(), "concat_cols");
    if (x.val().shape[0] != r) {
      throw DimensionError("concat_cols: row counts differ, " + std::to_string(r) + " vs " +
                           std::to_string(x.val().shape[0]));
    }
    total += x.val().shape[1];
  }
  Tensor out({r, total});
  std::vector<int> ids, widths;
  int off = 0;
  for (const Var& x : xs) {
    const Tensor& xv = x.val();
    const int c = xv.shape[1];
    for (int i = 0; i < r; ++i) {
      std::copy(xv.data.data() + static_cast<size_t>(i) * c,
                xv.data.data() + static_cast<size_t>(i) * c + c,
                out.data.data() + static_cast<size_t>(i) * total + off);
    }
    ids.push_back(x.id);
    widths.push_back(c);
    off += c;
  }
  return xs[0].tape->make(
      std::move(out), [ids, widths, r, total](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        int off2 = 0;
        for (size_t p = 0; p < ids.size(); ++p) {
          Tensor& gx = t.grad(ids[p]);
          const int c = widths[p];
          for (int i = 0; i < r; ++i) {
            const double* src = g.data.data() + static_cast<size_t>(i) * total + off2;
            double* dst = gx.data.data() + static_cast<size_t>(i) * c;
            for (int j = 0; j < c; ++j) dst[j] += src[j];
          }
          off2 += c;
        }
      });
}

Var softmax_cross_entropy(Var logits, std::vector<int> targets) {
  const Tensor& lv = logits.val();
  require_matrix(lv, "softmax_cross_entropy");
  const int r = lv.shape[0], k = lv.shape[1];
  if (static_cast<int>(targets.size()) != r) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(r) + " rows");
  }
  for (int tgt : targets) {
    if (tgt < 0 || tgt >= k) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(tgt) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto probs = std::make_shared<Tensor>(Tensor({r, k}));
  kernels::softmax_rows(r, k, lv.data.data(), probs->data.data());
  double loss = 0.0;
  for (int i = 0; i < r; ++i) {
    const double* row = lv.data.data() + static_cast<size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    loss += mx + std::log(sum) - row[targets[static_cast<size_t>(i)]];
  }
  loss /= r;
  const int lid = logits.id;
  auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
  return logits.tape->make(Tensor::scalar(loss), [lid, r, k, probs, tgt](Tape& t, int self) {
    const double g = t.grad(self)[0] / r;
    Tensor& gl = t.grad(lid);
    for (int i = 0; i < r; ++i) {
      const double* prow = probs->data.data() + static_cast<size_t>(i) * k;
      double* grow = gl.data.data() + static_cast<size_t>(i) * k;
      const int y = (*tgt)[static_cast<size_t>(i)];
      for (int j = 0; j < k; ++j) grow[j] += g * (prow[j] - (j == y ? 1.0 : 0.0));
    }
  });
}

Var self_attention(Var q, Var k, Var v, int seq_len, int heads) {
  const Tensor& qv = q.val();
  require_matrix(qv, "self_attention");
  require_same_shape(qv, k.val(), "self_attention");
  require_same_shape(qv, v.val(), "self_attention");
  const int rows = qv.shape[0], width = qv.shape[1];
  if (seq_len <= 0 || rows % seq_len != 0) {
    throw DimensionError("self_attention: row count " + std::to_string(rows) +
                         " not divisible by sequence length " + std::to_string(seq_len));
  }
  if (heads <= 0 || width % heads != 0) {
    throw DimensionError("self_attention: width " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  const int batch = rows / seq_len;
  Tensor out({rows, width});
  auto attn = std::make_shared<std::vector<double>>(
      static_cast<size_t>(batch) * heads * seq_len * seq_len);
  kernels::attention(batch, seq_len, width, heads, qv.data.data(), k.val().data.data(),
                     v.val().data.data(), out.data.data(), attn->data());
  const int qid = q.id, kid = k.id, vid = v.id;
  return q.tape->make(std::move(out),
                      [qid, kid, vid, batch, seq_len, width, heads, attn](Tape& t, int self) {
                        kernels::attention_backward(
                            batch, seq_len, width, heads, t.value(qid).data.data(),
                            t.value(kid).data.data(), t.value(vid).data.data(), attn->data(),
                            t.grad(self).data.data(), t.grad(qid).data.data(),
                            t.grad(kid).data.data(), t.grad(vid).data.data());
                      });
}

}  // namespace ops

}  // namespace gdiff
