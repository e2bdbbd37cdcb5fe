#include "dott/grid_tensor.hpp"

#include <string>

#include "dott/error.hpp"
#include "dott/schmidt.hpp"

namespace dott {

GridTensor::GridTensor(std::vector<Eigen::Index> d) : dims(std::move(d))
{
    Eigen::Index n = 1;
    for (auto k : dims) n *= k;
    values = Eigen::VectorXd::Zero(n);
}

Eigen::Index GridTensor::offset(const std::vector<Eigen::Index>& idx) const
{
    if (idx.size() != dims.size()) throw InvalidArgument("GridTensor: index arity mismatch");
    Eigen::Index off = 0, stride = 1;
    for (size_t j = 0; j < dims.size(); ++j) {
        if (idx[j] < 0 || idx[j] >= dims[j]) throw InvalidArgument("GridTensor: index out of range");
        off += idx[j] * stride;
        stride *= dims[j];
    }
    return off;
}

std::int64_t element_count(const std::vector<Grid>& grids)
{
    std::int64_t n = 1;
    for (const auto& g : grids) {
        n *= g.size();
        if (n > (std::int64_t(1) << 52)) return n;
    }
    return n;
}

void check_element_cap(std::int64_t count, std::int64_t cap)
{
    if (count > cap)
        throw NumericError(NumericErrorKind::ElementCap,
                           "dense tensor of " + std::to_string(count) + " elements exceeds cap " + std::to_string(cap));
}

GridTensor sample(const std::vector<Grid>& grids, const std::function<double(const double*)>& f, std::int64_t cap)
{
    check_element_cap(element_count(grids), cap);
    std::vector<Eigen::Index> dims;
    for (const auto& g : grids) dims.push_back(g.size());
    GridTensor t(dims);
    const size_t d = grids.size();
    std::vector<Eigen::Index> idx(d, 0);
    std::vector<double> x(d);
    for (size_t j = 0; j < d; ++j) x[j] = grids[j].nodes(0);
    for (Eigen::Index off = 0; off < t.size(); ++off) {
        t.values(off) = f(x.data());
        for (size_t j = 0; j < d; ++j) {
            if (++idx[j] < dims[j]) {
                x[j] = grids[j].nodes(idx[j]);
                break;
            }
            idx[j] = 0;
            x[j] = grids[j].nodes(0);
        }
    }
    return t;
}

GridTensor outer(const std::vector<Eigen::VectorXd>& factors, std::int64_t cap)
{
    std::vector<Eigen::Index> dims;
    std::int64_t count = 1;
    for (const auto& f : factors) {
        dims.push_back(f.size());
        count *= f.size();
    }
    check_element_cap(count, cap);
    Eigen::VectorXd v = Eigen::VectorXd::Ones(1);
    for (const auto& f : factors) {
        Eigen::VectorXd nv(v.size() * f.size());
        for (Eigen::Index k = 0; k < f.size(); ++k) nv.segment(k * v.size(), v.size()) = v * f(k);
        v = std::move(nv);
    }
    GridTensor t;
    t.dims = dims;
    t.values = std::move(v);
    return t;
}

double l2_inner(const GridTensor& a, const GridTensor& b, const std::vector<Grid>& grids)
{
    if (a.dims != b.dims) throw InvalidArgument("l2_inner: shape mismatch");
    Eigen::VectorXd w = composite_weights(grids);
    if (w.size() != a.size()) throw InvalidArgument("l2_inner: grids do not match tensor");
    return (w.array() * (a.values.array() * b.values.array())).sum();
}

double l2_norm(const GridTensor& a, const std::vector<Grid>& grids)
{
    return std::sqrt(std::max(0.0, l2_inner(a, a, grids)));
}

namespace {

// View of t as (inner, n_axis, outer).
struct AxisSplit {
    Eigen::Index inner = 1, n = 1, outer = 1;
};

AxisSplit split_at(const GridTensor& t, int axis)
{
    if (axis < 0 || axis >= t.order()) throw InvalidArgument("axis out of range");
    AxisSplit s;
    for (int j = 0; j < axis; ++j) s.inner *= t.dims[j];
    s.n = t.dims[axis];
    for (int j = axis + 1; j < t.order(); ++j) s.outer *= t.dims[j];
    return s;
}

} // namespace

GridTensor apply_along(const GridTensor& t, int axis, const Eigen::MatrixXd& m)
{
    AxisSplit s = split_at(t, axis);
    if (m.cols() != s.n || m.rows() != s.n) throw InvalidArgument("apply_along: matrix size");
    GridTensor out = t;
    for (Eigen::Index o = 0; o < s.outer; ++o) {
        Eigen::Map<const Eigen::MatrixXd> src(t.values.data() + o * s.inner * s.n, s.inner, s.n);
        Eigen::Map<Eigen::MatrixXd> dst(out.values.data() + o * s.inner * s.n, s.inner, s.n);
        dst.noalias() = src * m.transpose();
    }
    return out;
}

GridTensor scale_along(const GridTensor& t, int axis, const Eigen::VectorXd& v)
{
    AxisSplit s = split_at(t, axis);
    if (v.size() != s.n) throw InvalidArgument("scale_along: vector size");
    GridTensor out = t;
    for (Eigen::Index o = 0; o < s.outer; ++o) {
        Eigen::Map<Eigen::MatrixXd> dst(out.values.data() + o * s.inner * s.n, s.inner, s.n);
        dst = dst * v.asDiagonal();
    }
    return out;
}

} // namespace dott
