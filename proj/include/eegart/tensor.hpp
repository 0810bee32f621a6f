#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace eegart::num {

// A node in the computation graph.  Values are row-major doubles; shapes are
// at most rank 3 in practice ([rows, cols] for matrices, [C, T] for signals).
struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;  // accumulates into parents' grads

    size_t size() const { return value.size(); }
    size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? size() : shape[1]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline size_t shape_numel(const std::vector<size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), size_t{1},
                           std::multiplies<size_t>());
}

inline TensorPtr make_tensor(std::vector<size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor>();
    t->value.assign(shape_numel(shape), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr make_tensor(std::vector<size_t> shape, std::vector<double> values,
                             bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
        throw std::invalid_argument("make_tensor: shape does not match value count");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->value = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

namespace detail {

inline TensorPtr make_node(std::vector<size_t> shape, std::vector<TensorPtr> parents,
                           std::function<void(Tensor&)> backward) {
    auto t = make_tensor(std::move(shape));
    t->requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [](const TensorPtr& p) { return p->requires_grad; });
    if (t->requires_grad) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward);
    }
    return t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- elementwise ----

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(*a, *b, "add");
    auto out = detail::make_node(a->shape, {a, b}, [a, b](Tensor& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
        }
    });
    for (size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = a->value[i] + b->value[i];
    return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape(*a, *b, "mul");
    auto out = detail::make_node(a->shape, {a, b}, [a, b](Tensor& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                b->grad[i] += self.grad[i] * a->value[i];
        }
    });
    for (size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = a->value[i] * b->value[i];
    return out;
}

inline TensorPtr scale(const TensorPtr& a, double factor) {
    auto out = detail::make_node(a->shape, {a}, [a, factor](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] * factor;
    });
    for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] * factor;
    return out;
}

inline TensorPtr relu(const TensorPtr& a) {
    auto out = detail::make_node(a->shape, {a}, [a](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (a->value[i] > 0.0) a->grad[i] += self.grad[i];
    });
    for (size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = std::max(0.0, a->value[i]);
    return out;
}

inline TensorPtr exp_op(const TensorPtr& a) {
    auto out = detail::make_node(a->shape, {a}, [a](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            a->grad[i] += self.grad[i] * self.value[i];
    });
    for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::exp(a->value[i]);
    return out;
}

// clamp with pass-through gradient strictly inside the range
inline TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
    auto out = detail::make_node(a->shape, {a}, [a, lo, hi](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += self.grad[i];
    });
    for (size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = std::clamp(a->value[i], lo, hi);
    return out;
}

// ---- matrix ops ----

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("matmul: incompatible shapes");
    const size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = detail::make_node({m, n}, {a, b}, [a, b, m, k, n](Tensor& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (size_t t = 0; t < k; ++t)
                        a->grad[i * k + t] += g * b->value[t * n + j];
                }
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t t = 0; t < k; ++t) {
                    const double av = a->value[i * k + t];
                    if (av == 0.0) continue;
                    for (size_t j = 0; j < n; ++j)
                        b->grad[t * n + j] += self.grad[i * n + j] * av;
                }
        }
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t t = 0; t < k; ++t) {
            const double av = a->value[i * k + t];
            if (av == 0.0) continue;
            for (size_t j = 0; j < n; ++j)
                out->value[i * n + j] += av * b->value[t * n + j];
        }
    return out;
}

// adds a row vector [n] to every row of a [m, n] matrix
inline TensorPtr add_row_broadcast(const TensorPtr& a, const TensorPtr& row) {
    if (a->shape.size() != 2 || row->size() != a->shape[1])
        throw std::invalid_argument("add_row_broadcast: shape mismatch");
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = detail::make_node(a->shape, {a, row}, [a, row, m, n](Tensor& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (row->requires_grad) {
            row->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) row->grad[j] += self.grad[i * n + j];
        }
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            out->value[i * n + j] = a->value[i * n + j] + row->value[j];
    return out;
}

inline TensorPtr transpose(const TensorPtr& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("transpose: rank-2 only");
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = detail::make_node({n, m}, {a}, [a, m, n](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
                a->grad[i * n + j] += self.grad[j * m + i];
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out->value[j * m + i] = a->value[i * n + j];
    return out;
}

inline TensorPtr col_slice(const TensorPtr& a, size_t col0, size_t ncols) {
    if (a->shape.size() != 2 || col0 + ncols > a->shape[1])
        throw std::invalid_argument("col_slice: out of range");
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = detail::make_node({m, ncols}, {a}, [a, col0, ncols, m, n](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < ncols; ++j)
                a->grad[i * n + col0 + j] += self.grad[i * ncols + j];
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < ncols; ++j)
            out->value[i * ncols + j] = a->value[i * n + col0 + j];
    return out;
}

inline TensorPtr col_concat(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("col_concat: empty");
    const size_t m = parts[0]->shape[0];
    size_t n = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != 2 || p->shape[0] != m)
            throw std::invalid_argument("col_concat: row mismatch");
        n += p->shape[1];
    }
    auto out = detail::make_node({m, n}, parts, [parts, m, n](Tensor& self) {
        size_t off = 0;
        for (const auto& p : parts) {
            const size_t pn = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < pn; ++j)
                        p->grad[i * pn + j] += self.grad[i * n + off + j];
            }
            off += pn;
        }
    });
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t pn = p->shape[1];
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < pn; ++j)
                out->value[i * n + off + j] = p->value[i * pn + j];
        off += pn;
    }
    return out;
}

// stacks k row vectors [1, n] (or [n]) into a [k, n] matrix
inline TensorPtr row_stack(const std::vector<TensorPtr>& rows) {
    if (rows.empty()) throw std::invalid_argument("row_stack: empty");
    const size_t n = rows[0]->size();
    for (const auto& r : rows)
        if (r->size() != n) throw std::invalid_argument("row_stack: width mismatch");
    const size_t k = rows.size();
    auto out = detail::make_node({k, n}, rows, [rows, n](Tensor& self) {
        for (size_t r = 0; r < rows.size(); ++r) {
            if (!rows[r]->requires_grad) continue;
            rows[r]->ensure_grad();
            for (size_t j = 0; j < n; ++j)
                rows[r]->grad[j] += self.grad[r * n + j];
        }
    });
    for (size_t r = 0; r < k; ++r)
        for (size_t j = 0; j < n; ++j) out->value[r * n + j] = rows[r]->value[j];
    return out;
}

inline TensorPtr reshape(const TensorPtr& a, std::vector<size_t> shape) {
    if (shape_numel(shape) != a->size())
        throw std::invalid_argument("reshape: element count mismatch");
    auto out = detail::make_node(std::move(shape), {a}, [a](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    });
    out->value = a->value;
    return out;
}

// ---- reductions / row ops ----

inline TensorPtr mean_rows(const TensorPtr& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("mean_rows: rank-2 only");
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = detail::make_node({1, n}, {a}, [a, m, n](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
                a->grad[i * n + j] += self.grad[j] / static_cast<double>(m);
    });
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out->value[j] += a->value[i * n + j];
    for (size_t j = 0; j < n; ++j) out->value[j] /= static_cast<double>(m);
    return out;
}

inline TensorPtr softmax_rows(const TensorPtr& a) {
    if (a->shape.size() != 2) throw std::invalid_argument("softmax_rows: rank-2 only");
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = detail::make_node(a->shape, {a}, [a, m, n](Tensor& self) {
        a->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (size_t j = 0; j < n; ++j)
                dot += self.grad[i * n + j] * self.value[i * n + j];
            for (size_t j = 0; j < n; ++j)
                a->grad[i * n + j] +=
                    self.value[i * n + j] * (self.grad[i * n + j] - dot);
        }
    });
    for (size_t i = 0; i < m; ++i) {
        double mx = a->value[i * n];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, a->value[i * n + j]);
        double sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            out->value[i * n + j] = std::exp(a->value[i * n + j] - mx);
            sum += out->value[i * n + j];
        }
        for (size_t j = 0; j < n; ++j) out->value[i * n + j] /= sum;
    }
    return out;
}

// per-row layer normalization with learned gamma/beta of width n
inline TensorPtr layer_norm_rows(const TensorPtr& a, const TensorPtr& gamma,
                                 const TensorPtr& beta, double eps = 1e-5) {
    if (a->shape.size() != 2) throw std::invalid_argument("layer_norm_rows: rank-2 only");
    const size_t m = a->shape[0], n = a->shape[1];
    if (gamma->size() != n || beta->size() != n)
        throw std::invalid_argument("layer_norm_rows: gamma/beta width mismatch");
    if (n < 2) throw std::invalid_argument("layer_norm_rows: width must be >= 2");

    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);

    auto out = detail::make_node(
        a->shape, {a, gamma, beta},
        [a, gamma, beta, xhat, inv_std, m, n](Tensor& self) {
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (a->requires_grad) a->ensure_grad();
            for (size_t i = 0; i < m; ++i) {
                double sum_dy_g = 0.0, sum_dy_g_x = 0.0;
                for (size_t j = 0; j < n; ++j) {
                    const double dy = self.grad[i * n + j];
                    const double g = gamma->value[j];
                    const double xh = (*xhat)[i * n + j];
                    if (gamma->requires_grad) gamma->grad[j] += dy * xh;
                    if (beta->requires_grad) beta->grad[j] += dy;
                    sum_dy_g += dy * g;
                    sum_dy_g_x += dy * g * xh;
                }
                if (!a->requires_grad) continue;
                const double inv_n = 1.0 / static_cast<double>(n);
                for (size_t j = 0; j < n; ++j) {
                    const double dy = self.grad[i * n + j];
                    const double g = gamma->value[j];
                    const double xh = (*xhat)[i * n + j];
                    a->grad[i * n + j] +=
                        (*inv_std)[i] *
                        (dy * g - inv_n * sum_dy_g - inv_n * xh * sum_dy_g_x);
                }
            }
        });

    for (size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += a->value[i * n + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double d = a->value[i * n + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (size_t j = 0; j < n; ++j) {
            const double xh = (a->value[i * n + j] - mean) * is;
            (*xhat)[i * n + j] = xh;
            out->value[i * n + j] = gamma->value[j] * xh + beta->value[j];
        }
    }
    return out;
}

// ---- signal ops ([C, T] layout) ----

// kernel-size-3 cross-correlation with zero same-padding
inline TensorPtr conv1d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->shape.size() != 2) throw std::invalid_argument("conv1d: x must be [C_in, T]");
    if (w->shape.size() != 3 || w->shape[2] != 3)
        throw std::invalid_argument("conv1d: w must be [C_out, C_in, 3]");
    const size_t c_in = x->shape[0], t_len = x->shape[1];
    const size_t c_out = w->shape[0];
    if (w->shape[1] != c_in) throw std::invalid_argument("conv1d: channel mismatch");
    if (b->size() != c_out) throw std::invalid_argument("conv1d: bias size mismatch");

    auto out = detail::make_node(
        {c_out, t_len}, {x, w, b}, [x, w, b, c_in, c_out, t_len](Tensor& self) {
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (size_t co = 0; co < c_out; ++co)
                for (size_t t = 0; t < t_len; ++t) {
                    const double g = self.grad[co * t_len + t];
                    if (g == 0.0) continue;
                    if (b->requires_grad) b->grad[co] += g;
                    for (size_t ci = 0; ci < c_in; ++ci)
                        for (int k = -1; k <= 1; ++k) {
                            const long ti = static_cast<long>(t) + k;
                            if (ti < 0 || ti >= static_cast<long>(t_len)) continue;
                            const size_t widx = (co * c_in + ci) * 3 + (k + 1);
                            if (w->requires_grad)
                                w->grad[widx] += g * x->value[ci * t_len + ti];
                            if (x->requires_grad)
                                x->grad[ci * t_len + ti] += g * w->value[widx];
                        }
                }
        });

    for (size_t co = 0; co < c_out; ++co)
        for (size_t t = 0; t < t_len; ++t) {
            double acc = b->value[co];
            for (size_t ci = 0; ci < c_in; ++ci)
                for (int k = -1; k <= 1; ++k) {
                    const long ti = static_cast<long>(t) + k;
                    if (ti < 0 || ti >= static_cast<long>(t_len)) continue;
                    acc += w->value[(co * c_in + ci) * 3 + (k + 1)] *
                           x->value[ci * t_len + ti];
                }
            out->value[co * t_len + t] = acc;
        }
    return out;
}

// size-2 stride-2 max pooling; gradient routes to the first maximal element
inline TensorPtr maxpool1d(const TensorPtr& x) {
    if (x->shape.size() != 2) throw std::invalid_argument("maxpool1d: x must be [C, T]");
    const size_t c = x->shape[0], t_len = x->shape[1];
    if (t_len % 2 != 0) throw std::invalid_argument("maxpool1d: time length must be even");
    const size_t t_out = t_len / 2;

    auto argmax = std::make_shared<std::vector<size_t>>(c * t_out);
    auto out = detail::make_node({c, t_out}, {x}, [x, argmax, c, t_out](Tensor& self) {
        x->ensure_grad();
        for (size_t i = 0; i < c * t_out; ++i)
            x->grad[(*argmax)[i]] += self.grad[i];
    });
    for (size_t ci = 0; ci < c; ++ci)
        for (size_t t = 0; t < t_out; ++t) {
            const size_t i0 = ci * t_len + 2 * t;
            const bool first = x->value[i0] >= x->value[i0 + 1];
            (*argmax)[ci * t_out + t] = first ? i0 : i0 + 1;
            out->value[ci * t_out + t] = x->value[first ? i0 : i0 + 1];
        }
    return out;
}

// ---- backward pass ----

inline void backward(const TensorPtr& loss) {
    if (loss->size() != 1)
        throw std::invalid_argument("backward: root must be a scalar");
    // topological order via iterative DFS
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<TensorPtr, size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorPtr next = node->parents[idx++];
            if (next->requires_grad && !visited.count(next.get())) {
                visited.insert(next.get());
                stack.emplace_back(std::move(next), 0);
            }
        } else {
            order.push_back(node.get());
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

// ---- parameter store + Adam ----

struct ParamStore {
    std::vector<std::string> names;  // insertion order
    std::unordered_map<std::string, TensorPtr> params;
    std::unordered_map<std::string, std::vector<double>> m1, m2;
    long step_count = 0;

    TensorPtr add(const std::string& name, TensorPtr t) {
        if (params.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter " + name);
        t->requires_grad = true;
        names.push_back(name);
        params[name] = t;
        m1[name].assign(t->size(), 0.0);
        m2[name].assign(t->size(), 0.0);
        return t;
    }

    TensorPtr at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end())
            throw std::out_of_range("ParamStore: no parameter " + name);
        return it->second;
    }

    void zero_grad() {
        for (auto& [name, t] : params) t->grad.assign(t->size(), 0.0);
    }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& [name, t] : params) n += t->size();
        return n;
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// standard bias-corrected Adam step over every parameter's accumulated grad
inline void adam_step(ParamStore& store, const AdamConfig& cfg = {}) {
    store.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, store.step_count);
    const double bc2 = 1.0 - std::pow(cfg.beta2, store.step_count);
    for (const auto& name : store.names) {
        TensorPtr t = store.params.at(name);
        t->ensure_grad();
        auto& m = store.m1.at(name);
        auto& v = store.m2.at(name);
        for (size_t i = 0; i < t->size(); ++i) {
            const double g = t->grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            t->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace eegart::num
