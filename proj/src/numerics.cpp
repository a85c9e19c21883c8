#include "stprompt/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

namespace stp {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                             " does not match " + shape_str());
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "sub");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
    }
    Matrix out(a.rows(), b.rows());
    const std::size_t k = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i).data();
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j).data();
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
            out(i, j) = acc;
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: " + a.shape_str() + "^T x " + b.shape_str());
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* brow = b.row(r).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ari = a(r, i);
            if (ari == 0.0) continue;
            double* orow = out.row(i).data();
            for (std::size_t j = 0; j < n; ++j) orow[j] += ari * brow[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Matrix softmax_rows(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto in = a.row(r);
        auto o = out.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

Matrix softmax_rows_backward(const Matrix& s, const Matrix& dout) {
    require_same_shape(s, dout, "softmax_rows_backward");
    Matrix din(s.rows(), s.cols());
    for (std::size_t r = 0; r < s.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < s.cols(); ++c) dot += s(r, c) * dout(r, c);
        for (std::size_t c = 0; c < s.cols(); ++c) din(r, c) = s(r, c) * (dout(r, c) - dot);
    }
    return din;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data()) v = sigmoid(v);
    return out;
}

Matrix gelu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    return out;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dout) {
    require_same_shape(x, dout, "gelu_backward");
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix din(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        din[i] = dout[i] * (cdf + v * pdf);
    }
    return din;
}

Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t n) {
    if (c0 + n > a.cols()) throw DimensionError("slice_cols: out of range on " + a.shape_str());
    Matrix out(a.rows(), n);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) out(r, c) = a(r, c0 + c);
    return out;
}

void add_cols(Matrix& dst, std::size_t c0, const Matrix& src) {
    if (dst.rows() != src.rows() || c0 + src.cols() > dst.cols()) {
        throw DimensionError("add_cols: " + src.shape_str() + " into " + dst.shape_str());
    }
    for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t c = 0; c < src.cols(); ++c) dst(r, c0 + c) += src(r, c);
}

Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t n) {
    if (r0 + n > a.rows()) throw DimensionError("slice_rows: out of range on " + a.shape_str());
    Matrix out(n, a.cols());
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r0 * a.cols()), n * a.cols(),
                out.data().begin());
    return out;
}

void add_rows(Matrix& dst, std::size_t r0, const Matrix& src) {
    if (dst.cols() != src.cols() || r0 + src.rows() > dst.rows()) {
        throw DimensionError("add_rows: " + src.shape_str() + " into " + dst.shape_str());
    }
    const std::size_t off = r0 * dst.cols();
    for (std::size_t i = 0; i < src.size(); ++i) dst[off + i] += src[i];
}

Matrix hconcat(const std::vector<const Matrix*>& parts) {
    if (parts.empty()) return {};
    const std::size_t rows = parts.front()->rows();
    std::size_t cols = 0;
    for (const Matrix* p : parts) {
        if (p->rows() != rows) throw DimensionError("hconcat: row mismatch " + p->shape_str());
        cols += p->cols();
    }
    Matrix out(rows, cols);
    std::size_t c0 = 0;
    for (const Matrix* p : parts) {
        add_cols(out, c0, *p);
        c0 += p->cols();
    }
    return out;
}

Matrix vconcat(const std::vector<const Matrix*>& parts) {
    if (parts.empty()) return {};
    const std::size_t cols = parts.front()->cols();
    std::size_t rows = 0;
    for (const Matrix* p : parts) {
        if (p->cols() != cols) throw DimensionError("vconcat: col mismatch " + p->shape_str());
        rows += p->rows();
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (const Matrix* p : parts) {
        std::copy(p->data().begin(), p->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += p->size();
    }
    return out;
}

Matrix column_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a(r, c);
    return out;
}

Matrix add_row_broadcast(Matrix a, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw DimensionError("add_row_broadcast: " + bias.shape_str() + " onto " + a.shape_str());
    }
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) a(r, c) += bias(0, c);
    return a;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t st = seed;
    for (auto& s : s_) s = splitmix64(st);
}

std::uint64_t Rng::next_u64() {
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: empty range");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

Rng Rng::split(std::string_view stream) const {
    std::uint64_t st = seed_ ^ fnv1a64(stream);
    return Rng(splitmix64(st));
}

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal(0.0, stddev);
    return m;
}

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix m(fan_in, fan_out);
    for (double& v : m.data()) v = rng.uniform(-limit, limit);
    return m;
}

// ---------------------------------------------------------------------------

void ParamStore::add(const std::string& name, Matrix value) {
    grads[name] = Matrix(value.rows(), value.cols());
    params[name] = std::move(value);
}

const Matrix& ParamStore::get(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

Matrix& ParamStore::get_mut(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

Matrix& ParamStore::grad(const std::string& name) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, g] : grads) std::fill(g.data().begin(), g.data().end(), 0.0);
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params.size());
    for (const auto& kv : params) out.push_back(kv.first);
    return out;
}

void adam_step(ParamStore& store, const AdamOptions& opt, std::size_t step) {
    if (step == 0) throw std::invalid_argument("adam_step: step is 1-based");
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    for (auto& [name, p] : store.params) {
        if (store.is_frozen(name)) continue;
        const Matrix& g = store.grads.at(name);
        auto [mit, m_new] = store.adam_m.try_emplace(name, p.rows(), p.cols());
        auto [vit, v_new] = store.adam_v.try_emplace(name, p.rows(), p.cols());
        Matrix& m = mit->second;
        Matrix& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * p[i]);
        }
    }
}

FdReport fd_check(const std::function<double(const ParamStore&)>& loss, const ParamStore& store,
                  double eps, double tol, double floor) {
    FdReport report;
    ParamStore probe = store;
    for (const auto& [name, value] : store.params) {
        if (store.is_frozen(name)) continue;
        report.checked_params.push_back(name);
        const Matrix& analytic = store.grads.at(name);
        Matrix& p = probe.params.at(name);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            const double lp = loss(probe);
            p[i] = orig - eps;
            const double lm = loss(probe);
            p[i] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw ProbeError("fd_check: non-finite loss probing " + name + "[" +
                                 std::to_string(i) + "]");
            }
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.entries_checked;
            if (rel > tol) report.failures.push_back({name, i, a, numeric, rel});
        }
    }
    return report;
}

std::string exact_decimal(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string params_to_json(const ParamStore& store) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, m] : store.params) {
        nlohmann::json data = nlohmann::json::array();
        for (double v : m.data()) data.push_back(exact_decimal(v));
        doc[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
    }
    return doc.dump(1);
}

ParamStore params_from_json(const std::string& text) {
    const auto doc = nlohmann::json::parse(text);
    ParamStore store;
    for (const auto& [name, entry] : doc.items()) {
        const auto rows = entry.at("rows").get<std::size_t>();
        const auto cols = entry.at("cols").get<std::size_t>();
        std::vector<double> data;
        data.reserve(rows * cols);
        for (const auto& s : entry.at("data")) data.push_back(std::strtod(s.get<std::string>().c_str(), nullptr));
        store.add(name, Matrix(rows, cols, std::move(data)));
    }
    return store;
}

}  // namespace stp
