#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "vtok/error.hpp"
#include "vtok/rng.hpp"
#include "vtok/tensor.hpp"

// Reverse-mode autodiff over dense double tensors. Ops build a DAG of
// shared Nodes; backward() linearizes it into a topologically ordered
// Graph and walks it once in reverse, accumulating gradients additively.
namespace vtok::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    std::vector<double> grad; // same layout as value.v once touched
    bool requires_grad{false};
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;
    const char* op{"leaf"};

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline void check_finite(const Tensor& t, const char* op) {
    for (double x : t.v)
        if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value in forward output");
}

inline Var leaf(Tensor t, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    check_finite(t, "leaf");
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return n;
}

inline Var constant(Tensor t) { return leaf(std::move(t), false); }

inline Var make_node(Tensor val, std::vector<Var> parents, const char* op, std::function<void(Node&)> bw) {
    check_finite(val, op);
    auto n = std::make_shared<Node>();
    n->value = std::move(val);
    n->parents = std::move(parents);
    n->op = op;
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

// ---------------------------------------------------------------------------
// raw kernels
// ---------------------------------------------------------------------------

// C += A(m×k) · B(k×n), row-major. i-k-j order keeps the inner loop on
// contiguous memory so it vectorizes without reassociation.
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

inline void transpose_copy(const double* src, double* dst, std::size_t r, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a->value.shape) + " and " +
                         shape_str(b->value.shape));
    const std::size_t m = a->value.shape[0], k = a->value.shape[1];
    const std::size_t k2 = b->value.shape[0], n = b->value.shape[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a->value.shape) + " vs " +
                         shape_str(b->value.shape));
    Tensor out({m, n});
    matmul_acc(a->value.v.data(), b->value.v.data(), out.v.data(), m, k, n);
    Node* pa = a.get();
    Node* pb = b.get();
    return make_node(std::move(out), {a, b}, "matmul", [pa, pb, m, k, n](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            std::vector<double> bt(k * n);
            transpose_copy(pb->value.v.data(), bt.data(), k, n);
            matmul_acc(self.grad.data(), bt.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            std::vector<double> at(m * k);
            transpose_copy(pa->value.v.data(), at.data(), m, k);
            matmul_acc(at.data(), self.grad.data(), pb->grad.data(), k, m, n);
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    if (!same_shape(a->value, b->value))
        throw ShapeError("add: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += b->value.v[i];
    Node* pa = a.get();
    Node* pb = b.get();
    return make_node(std::move(out), {a, b}, "add", [pa, pb](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (double& x : out.v) x *= c;
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "scale", [pa, c](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
    });
}

// out[i,:] = a[i,:] + rv  (rv is a length-d row, shape {d} or {1,d})
inline Var add_rowvec(const Var& a, const Var& rv) {
    const std::size_t r = a->value.shape[0], d = a->value.shape[1];
    if (rv->value.size() != d)
        throw ShapeError("add_rowvec: row width " + std::to_string(rv->value.size()) + " vs cols " + std::to_string(d));
    Tensor out = a->value;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] += rv->value.v[j];
    Node* pa = a.get();
    Node* pv = rv.get();
    return make_node(std::move(out), {a, rv}, "add_rowvec", [pa, pv, r, d](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < d; ++j) pv->grad[j] += self.grad[i * d + j];
        }
    });
}

// out[i,:] = a[i,:] - rv
inline Var sub_rowvec(const Var& a, const Var& rv) {
    const std::size_t r = a->value.shape[0], d = a->value.shape[1];
    if (rv->value.size() != d)
        throw ShapeError("sub_rowvec: row width mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] -= rv->value.v[j];
    Node* pa = a.get();
    Node* pv = rv.get();
    return make_node(std::move(out), {a, rv}, "sub_rowvec", [pa, pv, r, d](Node& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < d; ++j) pv->grad[j] -= self.grad[i * d + j];
        }
    });
}

inline Var gelu(const Var& a) {
    Tensor out = a->value;
    for (double& x : out.v) x = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "gelu", [pa](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = pa->value.v[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
            const double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
            pa->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

// Per-row standardization with affine gain/bias. Rows with variance below
// 1e-12 normalize to exact zeros (output is then just the bias).
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-10) {
    const std::size_t r = x->value.shape[0], d = x->value.shape[1];
    if (d < 1 || gain->value.size() != d || bias->value.size() != d)
        throw ShapeError("layer_norm: gain/bias width must equal feature dim");
    Tensor out({r, d});
    auto yhat = std::make_shared<std::vector<double>>(r * d); // normalized pre-affine rows
    auto inv_sigma = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x->value.v.data() + i * d;
        double mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(d);
        double* yi = yhat->data() + i * d;
        if (var < 1e-12) {
            (*inv_sigma)[i] = 0.0;
            std::fill(yi, yi + d, 0.0);
        } else {
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_sigma)[i] = is;
            for (std::size_t j = 0; j < d; ++j) yi[j] = (xi[j] - mu) * is;
        }
        for (std::size_t j = 0; j < d; ++j) out.v[i * d + j] = gain->value.v[j] * yi[j] + bias->value.v[j];
    }
    Node* px = x.get();
    Node* pg = gain.get();
    Node* pb = bias.get();
    return make_node(std::move(out), {x, gain, bias}, "layer_norm", [px, pg, pb, r, d, yhat, inv_sigma](Node& self) {
        for (std::size_t i = 0; i < r; ++i) {
            const double* go = self.grad.data() + i * d;
            const double* yi = yhat->data() + i * d;
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) pb->grad[j] += go[j];
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) pg->grad[j] += go[j] * yi[j];
            }
            if (px->requires_grad) {
                px->ensure_grad();
                const double is = (*inv_sigma)[i];
                if (is == 0.0) continue; // zero-variance row: flat output, no sensitivity
                double mean_dy = 0, mean_dyy = 0;
                std::vector<double> dy(d);
                for (std::size_t j = 0; j < d; ++j) {
                    dy[j] = go[j] * pg->value.v[j];
                    mean_dy += dy[j];
                    mean_dyy += dy[j] * yi[j];
                }
                mean_dy /= static_cast<double>(d);
                mean_dyy /= static_cast<double>(d);
                double* gx = px->grad.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) gx[j] += is * (dy[j] - mean_dy - yi[j] * mean_dyy);
            }
        }
    });
}

// Row-wise softmax. Each output row sums to one.
inline Var softmax_rows(const Var& x) {
    const std::size_t r = x->value.shape[0], c = x->value.shape[1];
    Tensor out({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        const double* xi = x->value.v.data() + i * c;
        double mx = xi[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(xi[j] - mx);
        for (std::size_t j = 0; j < c; ++j) out.v[i * c + j] = std::exp(xi[j] - mx) / z;
    }
    Node* px = x.get();
    return make_node(std::move(out), {x}, "softmax_rows", [px, r, c](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            const double* s = self.value.v.data() + i * c;
            const double* g = self.grad.data() + i * c;
            double dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += s[j] * g[j];
            double* gx = px->grad.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += s[j] * (g[j] - dot);
        }
    });
}

// Softmax over square score matrix where row i only attends to columns
// 0..i; masked columns get exactly zero probability.
inline Var softmax_causal(const Var& scores) {
    const std::size_t L = scores->value.shape[0];
    if (scores->value.shape[1] != L) throw ShapeError("softmax_causal: square matrix required");
    Tensor out({L, L});
    for (std::size_t i = 0; i < L; ++i) {
        const double* xi = scores->value.v.data() + i * L;
        double mx = xi[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, xi[j]);
        double z = 0;
        for (std::size_t j = 0; j <= i; ++j) z += std::exp(xi[j] - mx);
        for (std::size_t j = 0; j <= i; ++j) out.v[i * L + j] = std::exp(xi[j] - mx) / z;
    }
    Node* px = scores.get();
    return make_node(std::move(out), {scores}, "softmax_causal", [px, L](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < L; ++i) {
            const double* s = self.value.v.data() + i * L;
            const double* g = self.grad.data() + i * L;
            double dot = 0;
            for (std::size_t j = 0; j <= i; ++j) dot += s[j] * g[j];
            double* gx = px->grad.data() + i * L;
            for (std::size_t j = 0; j <= i; ++j) gx[j] += s[j] * (g[j] - dot);
        }
    });
}

inline Var transpose(const Var& a) {
    const std::size_t r = a->value.shape[0], c = a->value.shape[1];
    Tensor out({c, r});
    transpose_copy(a->value.v.data(), out.v.data(), r, c);
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "transpose", [pa, r, c](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < c; ++i)
            for (std::size_t j = 0; j < r; ++j) pa->grad[j * c + i] += self.grad[i * r + j];
    });
}

inline Var slice_cols(const Var& a, std::size_t lo, std::size_t hi) {
    const std::size_t r = a->value.shape[0], c = a->value.shape[1];
    if (lo >= hi || hi > c) throw ShapeError("slice_cols: bad range");
    const std::size_t w = hi - lo;
    Tensor out({r, w});
    for (std::size_t i = 0; i < r; ++i)
        std::memcpy(out.v.data() + i * w, a->value.v.data() + i * c + lo, w * sizeof(double));
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "slice_cols", [pa, lo, r, c, w](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) pa->grad[i * c + lo + j] += self.grad[i * w + j];
    });
}

inline Var slice_rows(const Var& a, std::size_t lo, std::size_t hi) {
    const std::size_t r = a->value.shape[0], c = a->value.shape[1];
    if (lo >= hi || hi > r) throw ShapeError("slice_rows: bad range");
    const std::size_t h = hi - lo;
    Tensor out({h, c});
    std::memcpy(out.v.data(), a->value.v.data() + lo * c, h * c * sizeof(double));
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "slice_rows", [pa, lo, c, h](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < h * c; ++i) pa->grad[lo * c + i] += self.grad[i];
    });
}

// Row-major reshape to a new row count. The element order is untouched, so
// forward and backward are plain copies.
inline Var reshape_rows(const Var& a, std::size_t rows) {
    const std::size_t total = a->value.v.size();
    if (rows == 0 || total % rows != 0) throw ShapeError("reshape_rows: row count does not divide the element count");
    Tensor out({rows, total / rows});
    out.v = a->value.v;
    Node* pa = a.get();
    return make_node(std::move(out), {a}, "reshape_rows", [pa, total](Node& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < total; ++i) pa->grad[i] += self.grad[i];
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    const std::size_t r = parts.at(0)->value.shape[0];
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->value.shape[0] != r) throw ShapeError("concat_cols: row counts differ");
        total += p->value.shape[1];
    }
    Tensor out({r, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p->value.shape[1];
        for (std::size_t i = 0; i < r; ++i)
            std::memcpy(out.v.data() + i * total + off, p->value.v.data() + i * w, w * sizeof(double));
        off += w;
    }
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return make_node(std::move(out), parts, "concat_cols", [raw, r, total](Node& self) {
        std::size_t off = 0;
        for (Node* p : raw) {
            const std::size_t w = p->value.shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < w; ++j) p->grad[i * w + j] += self.grad[i * total + off + j];
            }
            off += w;
        }
    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    const std::size_t c = parts.at(0)->value.shape[1];
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p->value.shape[1] != c) throw ShapeError("concat_rows: col counts differ");
        total += p->value.shape[0];
    }
    Tensor out({total, c});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.v.data() + off * c, p->value.v.data(), p->value.size() * sizeof(double));
        off += p->value.shape[0];
    }
    std::vector<Node*> raw;
    for (const auto& p : parts) raw.push_back(p.get());
    return make_node(std::move(out), parts, "concat_rows", [raw, c](Node& self) {
        std::size_t off = 0;
        for (Node* p : raw) {
            const std::size_t h = p->value.shape[0];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < h * c; ++i) p->grad[i] += self.grad[off * c + i];
            }
            off += h;
        }
    });
}

// Gather rows of an embedding table; backward scatter-adds.
inline Var embedding_rows(const Var& table, const std::vector<int>& ids) {
    const std::size_t rows = table->value.shape[0], d = table->value.shape[1];
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows)
            throw IndexError("embedding_rows: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(rows));
        std::memcpy(out.v.data() + i * d, table->value.v.data() + static_cast<std::size_t>(ids[i]) * d,
                    d * sizeof(double));
    }
    Node* pt = table.get();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return make_node(std::move(out), {table}, "embedding_rows", [pt, ids_copy, d](Node& self) {
        pt->ensure_grad();
        for (std::size_t i = 0; i < ids_copy->size(); ++i) {
            double* dst = pt->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
            const double* src = self.grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

// out[g,:] = mean over x rows listed in groups[g]. Groups must be non-empty.
inline Var rows_mean_groups(const Var& x, const std::vector<std::vector<int>>& groups) {
    const std::size_t r = x->value.shape[0], d = x->value.shape[1];
    Tensor out({groups.size(), d});
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw ShapeError("rows_mean_groups: empty group");
        for (int row : groups[g]) {
            if (row < 0 || static_cast<std::size_t>(row) >= r) throw IndexError("rows_mean_groups: row out of range");
            for (std::size_t j = 0; j < d; ++j) out.v[g * d + j] += x->value.v[static_cast<std::size_t>(row) * d + j];
        }
        const double inv = 1.0 / static_cast<double>(groups[g].size());
        for (std::size_t j = 0; j < d; ++j) out.v[g * d + j] *= inv;
    }
    Node* px = x.get();
    auto groups_copy = std::make_shared<std::vector<std::vector<int>>>(groups);
    return make_node(std::move(out), {x}, "rows_mean_groups", [px, groups_copy, d](Node& self) {
        px->ensure_grad();
        for (std::size_t g = 0; g < groups_copy->size(); ++g) {
            const double inv = 1.0 / static_cast<double>((*groups_copy)[g].size());
            for (int row : (*groups_copy)[g])
                for (std::size_t j = 0; j < d; ++j)
                    px->grad[static_cast<std::size_t>(row) * d + j] += inv * self.grad[g * d + j];
        }
    });
}

// Forward takes the quantized values; backward passes gradients through to
// the pre-quantization features unchanged.
inline Var straight_through(const Var& f, Tensor quantized) {
    if (!same_shape(f->value, quantized)) throw ShapeError("straight_through: shape mismatch");
    Node* pf = f.get();
    return make_node(std::move(quantized), {f}, "straight_through", [pf](Node& self) {
        pf->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pf->grad[i] += self.grad[i];
    });
}

inline Var sum(const Var& a) {
    double s = 0;
    for (double x : a->value.v) s += x;
    Node* pa = a.get();
    return make_node(Tensor::scalar(s), {a}, "sum", [pa](Node& self) {
        pa->ensure_grad();
        for (double& g : pa->grad) g += self.grad[0];
    });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.size())); }

// Mean squared error against a constant target.
inline Var mse_vs(const Var& a, const Tensor& target) {
    if (!same_shape(a->value, target)) throw ShapeError("mse_vs: shape mismatch");
    const std::size_t n = a->value.size();
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = a->value.v[i] - target.v[i];
        s += diff * diff;
    }
    Node* pa = a.get();
    auto tgt = std::make_shared<Tensor>(target);
    return make_node(Tensor::scalar(s / static_cast<double>(n)), {a}, "mse_vs", [pa, tgt, n](Node& self) {
        pa->ensure_grad();
        const double c = 2.0 * self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) pa->grad[i] += c * (pa->value.v[i] - tgt->v[i]);
    });
}

// Mean negative log-likelihood over the rows selected by `mask` (all rows
// when mask is empty). Gradient is (softmax - one_hot) / n_selected.
// Mean over rows of the euclidean distance to the matching target row.
// Rows exactly on their target get zero gradient (the norm's kink).
inline Var l2_rows_vs(const Var& a, const Tensor& target) {
    if (!same_shape(a->value, target)) throw ShapeError("l2_rows_vs: target shape mismatch");
    const std::size_t r = a->value.shape[0], d = a->value.shape[1];
    auto diffs = std::make_shared<std::vector<double>>(a->value.v);
    auto norms = std::make_shared<std::vector<double>>(r);
    double total = 0;
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            (*diffs)[i * d + j] -= target.v[i * d + j];
            s += (*diffs)[i * d + j] * (*diffs)[i * d + j];
        }
        (*norms)[i] = std::sqrt(s);
        total += (*norms)[i];
    }
    Node* pa = a.get();
    return make_node(Tensor::scalar(total / static_cast<double>(r)), {a}, "l2_rows_vs",
                     [pa, diffs, norms, r, d](Node& self) {
                         pa->ensure_grad();
                         const double g = self.grad[0] / static_cast<double>(r);
                         for (std::size_t i = 0; i < r; ++i) {
                             if ((*norms)[i] == 0.0) continue;
                             const double s = g / (*norms)[i];
                             for (std::size_t j = 0; j < d; ++j) pa->grad[i * d + j] += s * (*diffs)[i * d + j];
                         }
                     });
}

inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& targets,
                                 const std::vector<std::uint8_t>& mask = {}) {
    const std::size_t r = logits->value.shape[0], vocab = logits->value.shape[1];
    if (targets.size() != r) throw ShapeError("softmax_cross_entropy: one target per row required");
    if (!mask.empty() && mask.size() != r) throw ShapeError("softmax_cross_entropy: mask length mismatch");
    std::size_t selected = 0;
    for (std::size_t i = 0; i < r; ++i)
        if (mask.empty() || mask[i]) ++selected;
    if (selected == 0) throw SequenceError("softmax_cross_entropy: empty loss mask");

    auto probs = std::make_shared<std::vector<double>>(r * vocab);
    double loss = 0;
    for (std::size_t i = 0; i < r; ++i) {
        if (!(mask.empty() || mask[i])) continue;
        const int t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab)
            throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside vocab of " +
                             std::to_string(vocab));
        const double* xi = logits->value.v.data() + i * vocab;
        double mx = xi[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, xi[j]);
        double z = 0;
        for (std::size_t j = 0; j < vocab; ++j) z += std::exp(xi[j] - mx);
        const double logz = std::log(z) + mx;
        loss += logz - xi[static_cast<std::size_t>(t)];
        double* pi = probs->data() + i * vocab;
        for (std::size_t j = 0; j < vocab; ++j) pi[j] = std::exp(xi[j] - logz);
    }
    loss /= static_cast<double>(selected);

    Node* pl = logits.get();
    auto targets_copy = std::make_shared<std::vector<int>>(targets);
    auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
    return make_node(Tensor::scalar(loss), {logits}, "softmax_cross_entropy",
                     [pl, probs, targets_copy, mask_copy, r, vocab, selected](Node& self) {
                         pl->ensure_grad();
                         const double c = self.grad[0] / static_cast<double>(selected);
                         for (std::size_t i = 0; i < r; ++i) {
                             if (!(mask_copy->empty() || (*mask_copy)[i])) continue;
                             const double* pi = probs->data() + i * vocab;
                             double* gi = pl->grad.data() + i * vocab;
                             for (std::size_t j = 0; j < vocab; ++j) gi[j] += c * pi[j];
                             gi[static_cast<std::size_t>((*targets_copy)[i])] -= c;
                         }
                     });
}

// ---------------------------------------------------------------------------
// graph + backward
// ---------------------------------------------------------------------------

// Topologically ordered op records rooted at one node. Reverse iteration
// visits each node exactly once.
struct Graph {
    std::vector<Node*> order;

    static Graph build(const Var& root) {
        Graph g;
        std::unordered_set<Node*> seen;
        // iterative post-order DFS
        std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
        seen.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next++].get();
                if (seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                g.order.push_back(node);
                stack.pop_back();
            }
        }
        return g;
    }
};

inline void backward(const Var& loss) {
    if (loss->value.size() != 1) throw ShapeError("backward: loss must be scalar");
    Graph g = Graph::build(loss);
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// parameters + gradient checking
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, Var>; // ordered: deterministic iteration

inline void zero_grad(ParamMap& params) {
    for (auto& [name, p] : params) p->grad.assign(p->value.size(), 0.0);
}

// Central-difference check of d(build_loss)/d(params). build_loss must be a
// pure deterministic function of the current parameter values. Checks up to
// max_coords_per_param coordinates of each parameter (sampled when the
// tensor is larger) and returns the worst relative error.
inline double finite_difference_check(ParamMap& params, const std::function<Var()>& build_loss, double h = 1e-4,
                                      std::size_t max_coords_per_param = 16, std::uint64_t probe_seed = 17) {
    if (h <= 0) throw ConfigError("finite_difference_check: h must be positive");
    zero_grad(params);
    Var loss = build_loss();
    backward(loss);
    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, p] : params) {
        p->ensure_grad();
        analytic[name] = p->grad;
    }
    double worst = 0;
    Rng rng(probe_seed);
    for (auto& [name, p] : params) {
        std::vector<std::size_t> coords;
        if (p->value.size() <= max_coords_per_param) {
            for (std::size_t i = 0; i < p->value.size(); ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < max_coords_per_param; ++i)
                coords.push_back(rng.next_u64() % p->value.size());
        }
        for (std::size_t c : coords) {
            const double orig = p->value.v[c];
            p->value.v[c] = orig + h;
            const double up = build_loss()->value.item();
            p->value.v[c] = orig - h;
            const double down = build_loss()->value.item();
            p->value.v[c] = orig;
            const double fd = (up - down) / (2.0 * h);
            const double an = analytic[name][c];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

} // namespace vtok::ad
