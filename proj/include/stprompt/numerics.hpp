#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stp {

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Rows are tokens throughout the library.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    std::string shape_str() const;
    bool all_finite() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& a);
/// Backward of softmax_rows given its output `s` and upstream gradient.
Matrix softmax_rows_backward(const Matrix& s, const Matrix& dout);

Matrix sigmoid(const Matrix& x);
double sigmoid(double x);

/// Exact GELU, x·Φ(x).
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dout);

/// Column block [c0, c0 + n) of `a`.
Matrix slice_cols(const Matrix& a, std::size_t c0, std::size_t n);
void add_cols(Matrix& dst, std::size_t c0, const Matrix& src);
/// Row block [r0, r0 + n) of `a`.
Matrix slice_rows(const Matrix& a, std::size_t r0, std::size_t n);
void add_rows(Matrix& dst, std::size_t r0, const Matrix& src);
Matrix hconcat(const std::vector<const Matrix*>& parts);
Matrix vconcat(const std::vector<const Matrix*>& parts);
Matrix column_sums(const Matrix& a);
/// Adds the 1×cols `bias` to every row.
Matrix add_row_broadcast(Matrix a, const Matrix& bias);

double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// Randomness

/// xoshiro256** seeded through splitmix64. Uniform doubles take the top 53
/// bits; normals use Box-Muller with no cached second value. Child streams are
/// derived from (seed, name) so independent consumers never share draws.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    Rng split(std::string_view stream) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

  private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t& state);

Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);
Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// ---------------------------------------------------------------------------
// Parameters

/// Named parameters with matching gradients, a frozen set and Adam moments.
struct ParamStore {
    std::map<std::string, Matrix> params;
    std::map<std::string, Matrix> grads;
    std::map<std::string, Matrix> adam_m;
    std::map<std::string, Matrix> adam_v;
    std::set<std::string> frozen;

    void add(const std::string& name, Matrix value);
    bool has(const std::string& name) const { return params.count(name) != 0; }
    const Matrix& get(const std::string& name) const;
    Matrix& get_mut(const std::string& name);
    Matrix& grad(const std::string& name);
    void zero_grads();
    bool is_frozen(const std::string& name) const { return frozen.count(name) != 0; }
    std::vector<std::string> names() const;
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// One AdamW update of every unfrozen parameter. `step` is 1-based.
void adam_step(ParamStore& store, const AdamOptions& opt, std::size_t step);

struct FdFailure {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct FdReport {
    double max_rel_error = 0.0;
    std::size_t entries_checked = 0;
    std::vector<std::string> checked_params;
    std::vector<FdFailure> failures;
    bool passed() const { return failures.empty(); }
};

/// Raised when the loss turns non-finite while probing an entry.
class ProbeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Compares the analytic gradients already stored in `store.grads` against
/// central differences of `loss`. Relative error is |a - n| / max(|a|, |n|, floor).
FdReport fd_check(const std::function<double(const ParamStore&)>& loss, const ParamStore& store,
                  double eps, double tol, double floor = 1e-6);

/// Decimal text that round-trips a double exactly.
std::string exact_decimal(double v);

std::string params_to_json(const ParamStore& store);
ParamStore params_from_json(const std::string& text);

}  // namespace stp
