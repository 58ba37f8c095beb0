#include "protots/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "protots/errors.hpp"

namespace protots {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape, std::size_t n) {
    for (auto s : shape) {
        if (s == 0) throw DimensionError("zero-sized dimension in shape " + shape_to_string(shape));
    }
    if (numel(shape) != n) {
        throw DimensionError("shape " + shape_to_string(shape) + " does not match " +
                             std::to_string(n) + " values");
    }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
    if (a.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_to_string(a.shape()));
    }
}

void require_vector(const char* op, const Tensor& a) { require_rank(op, a, 1); }

// Gradient buffer of t, or an empty span when t takes no gradient.
std::span<double> grad_slot(const Tensor& t) {
    if (!t.requires_grad()) return {};
    return const_cast<Tensor&>(t).mutable_grad();
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Impl& Tensor::impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape, values.size());
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    Shape shape{values.size()};
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw DimensionError("ragged matrix literal");
        values.insert(values.end(), r.begin(), r.end());
    }
    return from({m, n}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_to_string(s));
    return s[axis];
}

std::size_t Tensor::size() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
    return impl().data[0];
}

double Tensor::at(std::size_t i) const { return impl().data.at(i); }

double Tensor::at(std::size_t row, std::size_t col) const {
    require_rank("at", *this, 2);
    return impl().data.at(row * dim(1) + col);
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::mutable_grad() {
    auto& im = impl();
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
    return im.grad;
}

void Tensor::zero_grad() {
    auto& im = impl();
    std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

void Tensor::clear_grad() { impl().grad.clear(); }

Tensor Tensor::clone() const {
    auto copy = std::make_shared<Impl>(impl());
    return Tensor(std::move(copy));
}

// ------------------------------------------------------------------ Tape

Tensor Tape::make_output(Shape shape, std::vector<double> values,
                         std::initializer_list<const Tensor*> inputs) {
    bool needs = false;
    if (recording()) {
        for (const auto* t : inputs) needs = needs || t->requires_grad();
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor operation");
    }
    return Tensor::from(std::move(shape), std::move(values), needs);
}

Tensor Tape::make_output(Shape shape, std::vector<double> values,
                         const std::vector<Tensor>& inputs) {
    bool needs = false;
    if (recording()) {
        for (const auto& t : inputs) needs = needs || t.requires_grad();
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by tensor operation");
    }
    return Tensor::from(std::move(shape), std::move(values), needs);
}

void Tape::record(const Tensor& out, std::function<void(std::span<const double>)> backward) {
    if (!out.requires_grad()) return;
    if (consumed_) throw ContractError("tape already consumed by backward(); call clear()");
    nodes_.push_back(Node{out, std::move(backward)});
}

void Tape::clear() {
    nodes_.clear();
    consumed_ = false;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aip * B[p * n + j];
        }
    }
    Tensor out = make_output({m, n}, std::move(c), {&a, &b});
    record(out, [a, b, m, k, n](std::span<const double> g) {
        const auto A = a.data();
        const auto B = b.data();
        if (auto ga = grad_slot(a); !ga.empty()) {
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (auto gb = grad_slot(b); !gb.empty()) {
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
        }
    });
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> c(a.size());
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] + B[i];
    Tensor out = make_output(a.shape(), std::move(c), {&a, &b});
    record(out, [a, b](std::span<const double> g) {
        for (const Tensor* t : {&a, &b}) {
            if (auto gt = grad_slot(*t); !gt.empty())
                for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
    });
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> c(a.size());
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] - B[i];
    Tensor out = make_output(a.shape(), std::move(c), {&a, &b});
    record(out, [a, b](std::span<const double> g) {
        if (auto ga = grad_slot(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (auto gb = grad_slot(b); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> c(a.size());
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = A[i] * B[i];
    Tensor out = make_output(a.shape(), std::move(c), {&a, &b});
    record(out, [a, b](std::span<const double> g) {
        const auto A = a.data();
        const auto B = b.data();
        if (auto ga = grad_slot(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        if (auto gb = grad_slot(b); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    });
    return out;
}

Tensor Tape::add_row_bias(const Tensor& a, const Tensor& bias) {
    require_rank("add_row_bias", a, 2);
    require_vector("add_row_bias", bias);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (bias.size() != n) {
        throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) +
                             " does not match " + shape_to_string(a.shape()));
    }
    std::vector<double> c(a.data().begin(), a.data().end());
    const auto B = bias.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += B[j];
    Tensor out = make_output(a.shape(), std::move(c), {&a, &bias});
    record(out, [a, bias, m, n](std::span<const double> g) {
        if (auto ga = grad_slot(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (auto gb = grad_slot(bias); !gb.empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    });
    return out;
}

Tensor Tape::scale(const Tensor& a, double factor) {
    std::vector<double> c(a.data().begin(), a.data().end());
    for (auto& v : c) v *= factor;
    Tensor out = make_output(a.shape(), std::move(c), {&a});
    record(out, [a, factor](std::span<const double> g) {
        auto ga = grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
    return out;
}

Tensor Tape::scale_by(const Tensor& s, const Tensor& v) {
    if (s.size() != 1) throw DimensionError("scale_by: factor must be a scalar, got " +
                                            shape_to_string(s.shape()));
    const double f = s.item();
    std::vector<double> c(v.data().begin(), v.data().end());
    for (auto& x : c) x *= f;
    Tensor out = make_output(v.shape(), std::move(c), {&s, &v});
    record(out, [s, v](std::span<const double> g) {
        const auto V = v.data();
        if (auto gs = grad_slot(s); !gs.empty()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * V[i];
            gs[0] += acc;
        }
        if (auto gv = grad_slot(v); !gv.empty()) {
            const double f = s.item();
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += f * g[i];
        }
    });
    return out;
}

Tensor Tape::relu(const Tensor& a) {
    std::vector<double> c(a.data().begin(), a.data().end());
    for (auto& v : c) v = v > 0.0 ? v : 0.0;
    Tensor out = make_output(a.shape(), std::move(c), {&a});
    record(out, [a](std::span<const double> g) {
        const auto A = a.data();
        auto ga = grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (A[i] > 0.0) ga[i] += g[i];
    });
    return out;
}

Tensor Tape::transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto A = a.data();
    std::vector<double> c(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[j * m + i] = A[i * n + j];
    Tensor out = make_output({n, m}, std::move(c), {&a});
    record(out, [a, m, n](std::span<const double> g) {
        auto ga = grad_slot(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
    return out;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                             shape_to_string(shape));
    }
    Tensor out = make_output(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()),
                             {&a});
    record(out, [a](std::span<const double> g) {
        auto ga = grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    const auto A = a.data();
    const double s = std::accumulate(A.begin(), A.end(), 0.0);
    Tensor out = make_output({1}, {s}, {&a});
    record(out, [a](std::span<const double> g) {
        auto ga = grad_slot(a);
        for (auto& v : ga) v += g[0];
    });
    return out;
}

Tensor Tape::row(const Tensor& a, std::size_t index) {
    require_rank("row", a, 2);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (index >= m) throw DimensionError("row: index " + std::to_string(index) + " out of range for " +
                                         shape_to_string(a.shape()));
    const auto A = a.data();
    Tensor out = make_output({n}, std::vector<double>(A.begin() + index * n, A.begin() + (index + 1) * n),
                             {&a});
    record(out, [a, index, n](std::span<const double> g) {
        auto ga = grad_slot(a);
        for (std::size_t j = 0; j < n; ++j) ga[index * n + j] += g[j];
    });
    return out;
}

Tensor Tape::select(const Tensor& a, std::size_t index) {
    if (index >= a.size()) throw DimensionError("select: index out of range for " +
                                                shape_to_string(a.shape()));
    Tensor out = make_output({1}, {a.data()[index]}, {&a});
    record(out, [a, index](std::span<const double> g) { grad_slot(a)[index] += g[0]; });
    return out;
}

Tensor Tape::gather_row(const Tensor& table, std::size_t index) {
    require_rank("gather_row", table, 2);
    if (index >= table.dim(0)) {
        throw ContractError("gather_row: index " + std::to_string(index) +
                            " outside vocabulary of size " + std::to_string(table.dim(0)));
    }
    return row(table, index);
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
    require_rank("gather_rows", table, 2);
    const std::size_t v = table.dim(0), d = table.dim(1);
    const auto T = table.data();
    std::vector<double> c;
    c.reserve(indices.size() * d);
    for (auto idx : indices) {
        if (idx >= v) {
            throw ContractError("gather_rows: index " + std::to_string(idx) +
                                " outside vocabulary of size " + std::to_string(v));
        }
        c.insert(c.end(), T.begin() + idx * d, T.begin() + (idx + 1) * d);
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Tensor out = make_output({idx.size(), d}, std::move(c), {&table});
    record(out, [table, idx = std::move(idx), d](std::span<const double> g) {
        auto gt = grad_slot(table);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
    });
    return out;
}

Tensor Tape::stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: no rows");
    const std::size_t n = rows.front().size();
    std::vector<double> c;
    c.reserve(rows.size() * n);
    for (const auto& r : rows) {
        if (r.rank() != 1 || r.size() != n) {
            throw DimensionError("stack_rows: row shape " + shape_to_string(r.shape()) +
                                 " differs from [" + std::to_string(n) + "]");
        }
        c.insert(c.end(), r.data().begin(), r.data().end());
    }
    Tensor out = make_output({rows.size(), n}, std::move(c), rows);
    record(out, [rows, n](std::span<const double> g) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (auto gr = grad_slot(rows[r]); !gr.empty())
                for (std::size_t j = 0; j < n; ++j) gr[j] += g[r * n + j];
        }
    });
    return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat: no parts");
    std::vector<double> c;
    for (const auto& p : parts) {
        require_vector("concat", p);
        c.insert(c.end(), p.data().begin(), p.data().end());
    }
    const std::size_t total = c.size();
    Tensor out = make_output({total}, std::move(c), parts);
    record(out, [parts](std::span<const double> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            if (auto gp = grad_slot(p); !gp.empty())
                for (std::size_t j = 0; j < p.size(); ++j) gp[j] += g[offset + j];
            offset += p.size();
        }
    });
    return out;
}

Tensor Tape::vstack(const Tensor& top, const Tensor& bottom) {
    require_rank("vstack", top, 2);
    require_rank("vstack", bottom, 2);
    if (top.dim(1) != bottom.dim(1)) {
        throw DimensionError("vstack: column mismatch " + shape_to_string(top.shape()) + " vs " +
                             shape_to_string(bottom.shape()));
    }
    std::vector<double> c(top.data().begin(), top.data().end());
    c.insert(c.end(), bottom.data().begin(), bottom.data().end());
    Tensor out = make_output({top.dim(0) + bottom.dim(0), top.dim(1)}, std::move(c), {&top, &bottom});
    record(out, [top, bottom](std::span<const double> g) {
        const std::size_t nt = top.size();
        if (auto gt = grad_slot(top); !gt.empty())
            for (std::size_t i = 0; i < nt; ++i) gt[i] += g[i];
        if (auto gb = grad_slot(bottom); !gb.empty())
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[nt + i];
    });
    return out;
}

Tensor Tape::cyclic_slice(const Tensor& p, std::size_t start, std::size_t length) {
    require_vector("cyclic_slice", p);
    const std::size_t period = p.size();
    const auto P = p.data();
    std::vector<double> c(length);
    for (std::size_t t = 0; t < length; ++t) c[t] = P[(start + t) % period];
    Tensor out = make_output({length}, std::move(c), {&p});
    record(out, [p, start, period](std::span<const double> g) {
        auto gp = grad_slot(p);
        for (std::size_t t = 0; t < g.size(); ++t) gp[(start + t) % period] += g[t];
    });
    return out;
}

Tensor Tape::softmax_neg(const Tensor& distances) {
    require_vector("softmax_neg", distances);
    const auto D = distances.data();
    const double shift = *std::min_element(D.begin(), D.end());  // max of -d
    std::vector<double> f(D.size());
    double total = 0.0;
    for (std::size_t i = 0; i < D.size(); ++i) {
        f[i] = std::exp(-(D[i] - shift));
        total += f[i];
    }
    for (auto& v : f) v /= total;
    Tensor out = make_output(distances.shape(), std::move(f), {&distances});
    record(out, [distances, out_data = out](std::span<const double> g) {
        // f = softmax(-d): df_i/dd_j = -f_i (delta_ij - f_j)
        const auto F = out_data.data();
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * F[i];
        auto gd = grad_slot(distances);
        for (std::size_t j = 0; j < g.size(); ++j) gd[j] += -F[j] * (g[j] - dot);
    });
    return out;
}

Tensor Tape::sq_distances(const Tensor& z, const Tensor& m) {
    require_vector("sq_distances", z);
    require_rank("sq_distances", m, 2);
    const std::size_t n = m.dim(0), d = m.dim(1);
    if (z.size() != d) {
        throw DimensionError("sq_distances: query " + shape_to_string(z.shape()) +
                             " vs prototypes " + shape_to_string(m.shape()));
    }
    const auto Z = z.data();
    const auto M = m.data();
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = Z[j] - M[i * d + j];
            c[i] += diff * diff;
        }
    Tensor out = make_output({n}, std::move(c), {&z, &m});
    record(out, [z, m, n, d](std::span<const double> g) {
        const auto Z = z.data();
        const auto M = m.data();
        auto gz = grad_slot(z);
        auto gm = grad_slot(m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double v = 2.0 * g[i] * (Z[j] - M[i * d + j]);
                if (!gz.empty()) gz[j] += v;
                if (!gm.empty()) gm[i * d + j] -= v;
            }
    });
    return out;
}

Tensor Tape::l1(const Tensor& pred, const Tensor& target) {
    require_same_shape("l1", pred, target);
    const auto P = pred.data();
    const auto T = target.data();
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) s += std::abs(P[i] - T[i]);
    Tensor out = make_output({1}, {s}, {&pred});
    record(out, [pred, target](std::span<const double> g) {
        const auto P = pred.data();
        const auto T = target.data();
        auto gp = grad_slot(pred);
        for (std::size_t i = 0; i < P.size(); ++i) {
            const double diff = P[i] - T[i];
            // subgradient 0 at the kink
            if (diff > 0.0) gp[i] += g[0];
            else if (diff < 0.0) gp[i] -= g[0];
        }
    });
    return out;
}

Tensor Tape::sq_error(const Tensor& pred, const Tensor& target) {
    require_same_shape("sq_error", pred, target);
    const auto P = pred.data();
    const auto T = target.data();
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - T[i]) * (P[i] - T[i]);
    Tensor out = make_output({1}, {s}, {&pred});
    record(out, [pred, target](std::span<const double> g) {
        const auto P = pred.data();
        const auto T = target.data();
        auto gp = grad_slot(pred);
        for (std::size_t i = 0; i < P.size(); ++i) gp[i] += 2.0 * g[0] * (P[i] - T[i]);
    });
    return out;
}

Tensor Tape::neg_entropy(const Tensor& f, double clamp) {
    require_vector("neg_entropy", f);
    const auto F = f.data();
    double s = 0.0;
    for (double v : F) s += v * std::log(std::max(v, clamp));
    Tensor out = make_output({1}, {s}, {&f});
    record(out, [f, clamp](std::span<const double> g) {
        const auto F = f.data();
        auto gf = grad_slot(f);
        for (std::size_t i = 0; i < F.size(); ++i) {
            // d/df [f log max(f, c)] = log f + 1 above the clamp, log c below it
            gf[i] += g[0] * (F[i] > clamp ? std::log(F[i]) + 1.0 : std::log(clamp));
        }
    });
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got " + shape_to_string(loss.shape()));
    }
    if (consumed_) throw ContractError("backward: tape already consumed");
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any parameter recorded on this tape");
    }
    const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                     [&](const Node& n) { return n.output.id() == loss.id(); });
    if (!on_tape && !nodes_.empty()) {
        throw ContractError("backward: loss was not produced on this tape");
    }
    const_cast<Tensor&>(loss).mutable_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output.has_grad()) continue;
        it->backward(it->output.grad());
    }
    consumed_ = true;
}

}  // namespace protots
