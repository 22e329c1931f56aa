#include "megc/ops.hpp"

#include <cmath>
#include <utility>

namespace megc {

namespace {

using StrideDyn = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
using StridedMap = Eigen::Map<MatrixRM, 0, StrideDyn>;
using ConstStridedMap = Eigen::Map<const MatrixRM, 0, StrideDyn>;

Tape& same_tape(Value a, Value b, const char* who) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument(std::string(who) + ": values must come from one tape");
    }
    return *a.tape;
}

Tape& tape_of(Value a, const char* who) {
    if (a.tape == nullptr) throw std::invalid_argument(std::string(who) + ": null value");
    return *a.tape;
}

}  // namespace

Value add(Value a, Value b) {
    Tape& t = same_tape(a, b, "add");
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    if (!va.same_shape(vb)) {
        throw ShapeError("add: shape " + shape_string(va.shape()) + " vs " +
                         shape_string(vb.shape()));
    }
    Tensor out(va.shape());
    out.vector() = va.vector() + vb.vector();
    return t.emplace(std::move(out), {a.id, b.id}, [](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        t.grad(t.parents(id)[0]).vector() += g.vector();
        t.grad(t.parents(id)[1]).vector() += g.vector();
    });
}

Value sub(Value a, Value b) {
    Tape& t = same_tape(a, b, "sub");
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    if (!va.same_shape(vb)) {
        throw ShapeError("sub: shape " + shape_string(va.shape()) + " vs " +
                         shape_string(vb.shape()));
    }
    Tensor out(va.shape());
    out.vector() = va.vector() - vb.vector();
    return t.emplace(std::move(out), {a.id, b.id}, [](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        t.grad(t.parents(id)[0]).vector() += g.vector();
        t.grad(t.parents(id)[1]).vector() -= g.vector();
    });
}

Value scale(Value a, double c) {
    Tape& t = tape_of(a, "scale");
    Tensor out(t.val(a).shape());
    out.vector() = c * t.val(a).vector();
    return t.emplace(std::move(out), {a.id}, [c](Tape& t, int id) {
        t.grad(t.parents(id)[0]).vector() += c * t.grad(id).vector();
    });
}

Value mul_scalar(Value a, Value s) {
    Tape& t = same_tape(a, s, "mul_scalar");
    if (t.val(s).size() != 1) {
        throw ShapeError("mul_scalar: scale must be scalar, got " +
                         shape_string(t.val(s).shape()));
    }
    const double sv = t.val(s)[0];
    Tensor out(t.val(a).shape());
    out.vector() = sv * t.val(a).vector();
    return t.emplace(std::move(out), {a.id, s.id}, [sv](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& va = t.val(t.parents(id)[0]);
        t.grad(t.parents(id)[0]).vector() += sv * g.vector();
        t.grad(t.parents(id)[1])[0] += g.vector().dot(va.vector());
    });
}

Value tanh_map(Value x) {
    Tape& t = tape_of(x, "tanh_map");
    Tensor out(t.val(x).shape());
    const Tensor& v = t.val(x);
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
    return t.emplace(std::move(out), {x.id}, [](Tape& t, int id) {
        const Tensor& y = t.val(id);
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (std::int64_t i = 0; i < y.size(); ++i) gx[i] += (1.0 - y[i] * y[i]) * g[i];
    });
}

Value relu_map(Value x) {
    Tape& t = tape_of(x, "relu_map");
    const Tensor& v = t.val(x);
    Tensor out(v.shape());
    // x < 0 -> 0 keeps NaN propagating instead of silently zeroing it
    for (std::int64_t i = 0; i < v.size(); ++i) out[i] = v[i] < 0.0 ? 0.0 : v[i];
    return t.emplace(std::move(out), {x.id}, [](Tape& t, int id) {
        const Tensor& vx = t.val(t.parents(id)[0]);
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (std::int64_t i = 0; i < vx.size(); ++i) {
            if (vx[i] > 0.0) gx[i] += g[i];
        }
    });
}

Value slice_first(Value x, int index) {
    Tape& t = tape_of(x, "slice_first");
    const Tensor& v = t.val(x);
    if (v.rank() < 1) throw ShapeError("slice_first: rank-0 tensor");
    const int e = v.extent(0);
    if (index < 0 || index >= e) {
        throw ShapeError("slice_first: index " + std::to_string(index) + " out of axis 0 extent " +
                         std::to_string(e));
    }
    std::vector<int> rest(v.shape().begin() + 1, v.shape().end());
    if (rest.empty()) rest = {1};
    const std::int64_t block = shape_numel(rest);
    Tensor out(rest);
    ConstVectorMap src(v.data() + index * block, block);
    out.vector() = src;
    return t.emplace(std::move(out), {x.id}, [index, block](Tape& t, int id) {
        VectorMap dst(t.grad(t.parents(id)[0]).data() + index * block, block);
        dst += t.grad(id).vector();
    });
}

Value stack_first(const std::vector<Value>& xs) {
    if (xs.empty()) throw std::invalid_argument("stack_first: no inputs");
    Tape& t = tape_of(xs[0], "stack_first");
    const Tensor& v0 = t.val(xs[0]);
    std::vector<int> parents;
    for (const Value& x : xs) {
        same_tape(xs[0], x, "stack_first");
        if (!t.val(x).same_shape(v0)) {
            throw ShapeError("stack_first: shape " + shape_string(t.val(x).shape()) + " vs " +
                             shape_string(v0.shape()));
        }
        parents.push_back(x.id);
    }
    std::vector<int> shape;
    shape.push_back(static_cast<int>(xs.size()));
    shape.insert(shape.end(), v0.shape().begin(), v0.shape().end());
    const std::int64_t block = v0.size();
    Tensor out(shape);
    for (size_t k = 0; k < xs.size(); ++k) {
        VectorMap dst(out.data() + static_cast<std::int64_t>(k) * block, block);
        dst = t.val(xs[k]).vector();
    }
    return t.emplace(std::move(out), std::move(parents), [block](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const auto& ps = t.parents(id);
        for (size_t k = 0; k < ps.size(); ++k) {
            ConstVectorMap src(g.data() + static_cast<std::int64_t>(k) * block, block);
            t.grad(ps[k]).vector() += src;
        }
    });
}

Value subsample_time(Value x, int stride) {
    Tape& t = tape_of(x, "subsample_time");
    if (stride < 1) throw std::invalid_argument("subsample_time: stride must be >= 1");
    if (stride == 1) return x;
    const Tensor& v = t.val(x);
    require_rank(v, 3, "subsample_time");
    const int c = v.extent(0), tt = v.extent(1), n = v.extent(2);
    const int t2 = (tt + stride - 1) / stride;
    Tensor out({c, t2, n});
    for (int ci = 0; ci < c; ++ci) {
        for (int u = 0; u < t2; ++u) {
            ConstVectorMap src(v.data() + (static_cast<std::int64_t>(ci) * tt + u * stride) * n, n);
            VectorMap dst(out.data() + (static_cast<std::int64_t>(ci) * t2 + u) * n, n);
            dst = src;
        }
    }
    return t.emplace(std::move(out), {x.id}, [c, tt, n, t2, stride](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (int ci = 0; ci < c; ++ci) {
            for (int u = 0; u < t2; ++u) {
                ConstVectorMap src(g.data() + (static_cast<std::int64_t>(ci) * t2 + u) * n, n);
                VectorMap dst(gx.data() + (static_cast<std::int64_t>(ci) * tt + u * stride) * n, n);
                dst += src;
            }
        }
    });
}

Value mean_over_time(Value x) {
    Tape& t = tape_of(x, "mean_over_time");
    const Tensor& v = t.val(x);
    require_rank(v, 3, "mean_over_time");
    const int c = v.extent(0), tt = v.extent(1), n = v.extent(2);
    Tensor out({c, n});
    for (int ci = 0; ci < c; ++ci) {
        VectorMap acc(out.data() + static_cast<std::int64_t>(ci) * n, n);
        for (int ti = 0; ti < tt; ++ti) {
            ConstVectorMap src(v.data() + (static_cast<std::int64_t>(ci) * tt + ti) * n, n);
            acc += src;
        }
        acc /= static_cast<double>(tt);
    }
    return t.emplace(std::move(out), {x.id}, [c, tt, n](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        const double inv = 1.0 / static_cast<double>(tt);
        for (int ci = 0; ci < c; ++ci) {
            ConstVectorMap src(g.data() + static_cast<std::int64_t>(ci) * n, n);
            for (int ti = 0; ti < tt; ++ti) {
                VectorMap dst(gx.data() + (static_cast<std::int64_t>(ci) * tt + ti) * n, n);
                dst += inv * src;
            }
        }
    });
}

Value global_mean_time_joints(Value x) {
    Tape& t = tape_of(x, "global_mean_time_joints");
    const Tensor& v = t.val(x);
    require_rank(v, 3, "global_mean_time_joints");
    const int c = v.extent(0);
    const std::int64_t block = static_cast<std::int64_t>(v.extent(1)) * v.extent(2);
    Tensor out({c});
    for (int ci = 0; ci < c; ++ci) {
        ConstVectorMap src(v.data() + ci * block, block);
        out[ci] = src.sum() / static_cast<double>(block);
    }
    return t.emplace(std::move(out), {x.id}, [c, block](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (int ci = 0; ci < c; ++ci) {
            VectorMap dst(gx.data() + ci * block, block);
            dst.array() += g[ci] / static_cast<double>(block);
        }
    });
}

Value sum_first(Value x) {
    Tape& t = tape_of(x, "sum_first");
    const Tensor& v = t.val(x);
    if (v.rank() < 2) throw ShapeError("sum_first: need rank >= 2");
    const int e = v.extent(0);
    std::vector<int> rest(v.shape().begin() + 1, v.shape().end());
    const std::int64_t block = shape_numel(rest);
    Tensor out(rest);
    for (int ei = 0; ei < e; ++ei) {
        ConstVectorMap src(v.data() + ei * block, block);
        out.vector() += src;
    }
    return t.emplace(std::move(out), {x.id}, [e, block](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (int ei = 0; ei < e; ++ei) {
            VectorMap dst(gx.data() + ei * block, block);
            dst += g.vector();
        }
    });
}

Value pairwise_diff(Value x, Value y) {
    Tape& t = same_tape(x, y, "pairwise_diff");
    const Tensor& vx = t.val(x);
    const Tensor& vy = t.val(y);
    require_rank(vx, 2, "pairwise_diff");
    if (!vx.same_shape(vy)) {
        throw ShapeError("pairwise_diff: shape " + shape_string(vx.shape()) + " vs " +
                         shape_string(vy.shape()));
    }
    const int c = vx.extent(0), n = vx.extent(1);
    Tensor out({c, n, n});
    for (int ci = 0; ci < c; ++ci) {
        for (int i = 0; i < n; ++i) {
            const double xi = vx[static_cast<std::int64_t>(ci) * n + i];
            double* row = out.data() + (static_cast<std::int64_t>(ci) * n + i) * n;
            const double* yrow = vy.data() + static_cast<std::int64_t>(ci) * n;
            for (int j = 0; j < n; ++j) row[j] = xi - yrow[j];
        }
    }
    return t.emplace(std::move(out), {x.id, y.id}, [c, n](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        Tensor& gy = t.grad(t.parents(id)[1]);
        for (int ci = 0; ci < c; ++ci) {
            for (int i = 0; i < n; ++i) {
                const double* row = g.data() + (static_cast<std::int64_t>(ci) * n + i) * n;
                double s = 0.0;
                for (int j = 0; j < n; ++j) {
                    s += row[j];
                    gy[static_cast<std::int64_t>(ci) * n + j] -= row[j];
                }
                gx[static_cast<std::int64_t>(ci) * n + i] += s;
            }
        }
    });
}

Value pointwise_conv(Value x, Value w, Value b) {
    Tape& t = same_tape(x, w, "pointwise_conv");
    same_tape(x, b, "pointwise_conv");
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    const Tensor& vb = t.val(b);
    require_rank(vx, 3, "pointwise_conv input");
    require_rank(vw, 2, "pointwise_conv weight");
    require_rank(vb, 1, "pointwise_conv bias");
    const int ci = vx.extent(0);
    const int co = vw.extent(0);
    require_extent(vw.extent(1), ci, "input channel");
    require_extent(vb.extent(0), co, "bias channel");
    const std::int64_t cols = static_cast<std::int64_t>(vx.extent(1)) * vx.extent(2);

    Tensor out({co, vx.extent(1), vx.extent(2)});
    auto om = out.matrix(co, cols);
    om.noalias() = vw.matrix(co, ci) * vx.matrix(ci, cols);
    om.colwise() += vb.vector();
    return t.emplace(std::move(out), {x.id, w.id, b.id}, [ci, co, cols](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        auto gm = g.matrix(co, cols);
        const auto& ps = t.parents(id);
        const Tensor& vx = t.val(ps[0]);
        const Tensor& vw = t.val(ps[1]);
        t.grad(ps[0]).matrix(ci, cols).noalias() += vw.matrix(co, ci).transpose() * gm;
        t.grad(ps[1]).matrix(co, ci).noalias() += gm * vx.matrix(ci, cols).transpose();
        t.grad(ps[2]).vector() += gm.rowwise().sum();
    });
}

Value affine(Value x, Value w, Value b) {
    Tape& t = same_tape(x, w, "affine");
    same_tape(x, b, "affine");
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    const Tensor& vb = t.val(b);
    require_rank(vx, 1, "affine input");
    require_rank(vw, 2, "affine weight");
    const int ci = vx.extent(0);
    const int k = vw.extent(0);
    require_extent(vw.extent(1), ci, "input feature");
    require_extent(vb.extent(0), k, "bias");
    Tensor out({k});
    out.vector().noalias() = vw.matrix(k, ci) * vx.vector() + vb.vector();
    return t.emplace(std::move(out), {x.id, w.id, b.id}, [ci, k](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const auto& ps = t.parents(id);
        t.grad(ps[0]).vector().noalias() += t.val(ps[1]).matrix(k, ci).transpose() * g.vector();
        t.grad(ps[1]).matrix(k, ci).noalias() += g.vector() * t.val(ps[0]).vector().transpose();
        t.grad(ps[2]).vector() += g.vector();
    });
}

int temporal_conv_out_extent(int t, int kernel, int dilation, int stride) {
    const int pad = dilation * (kernel - 1) / 2;
    const int span = dilation * (kernel - 1) + 1;
    const int reach = t + 2 * pad - span;
    if (reach < 0) {
        throw ShapeError("temporal_conv: kernel span " + std::to_string(span) +
                         " larger than padded input " + std::to_string(t + 2 * pad));
    }
    return reach / stride + 1;
}

Value temporal_conv_branch(Value x, Value w, Value b, int dilation, int stride) {
    Tape& t = same_tape(x, w, "temporal_conv");
    same_tape(x, b, "temporal_conv");
    if (dilation < 1 || stride < 1) {
        throw std::invalid_argument("temporal_conv: dilation and stride must be >= 1");
    }
    const Tensor& vx = t.val(x);
    const Tensor& vw = t.val(w);
    require_rank(vx, 3, "temporal_conv input");
    require_rank(vw, 3, "temporal_conv weight");
    const int ci = vx.extent(0), tt = vx.extent(1), n = vx.extent(2);
    const int co = vw.extent(0), k = vw.extent(2);
    require_extent(vw.extent(1), ci, "input channel");
    require_extent(t.val(b).extent(0), co, "bias channel");
    const int pad = dilation * (k - 1) / 2;
    const int t2 = temporal_conv_out_extent(tt, k, dilation, stride);

    Tensor out({co, t2, n});
    // bias first, conv taps accumulate on top
    {
        const Tensor& vb = t.val(b);
        for (int o = 0; o < co; ++o) {
            VectorMap dst(out.data() + static_cast<std::int64_t>(o) * t2 * n,
                          static_cast<std::int64_t>(t2) * n);
            dst.array() = vb[o];
        }
    }
    for (int u = 0; u < t2; ++u) {
        StridedMap ou(out.data() + static_cast<std::int64_t>(u) * n, co, n,
                      StrideDyn(static_cast<std::int64_t>(t2) * n, 1));
        for (int j = 0; j < k; ++j) {
            const int tin = u * stride + j * dilation - pad;
            if (tin < 0 || tin >= tt) continue;
            ConstStridedMap wj(vw.data() + j, co, ci,
                               StrideDyn(static_cast<std::int64_t>(ci) * k, k));
            ConstStridedMap xin(vx.data() + static_cast<std::int64_t>(tin) * n, ci, n,
                                StrideDyn(static_cast<std::int64_t>(tt) * n, 1));
            ou.noalias() += wj * xin;
        }
    }
    return t.emplace(std::move(out), {x.id, w.id, b.id},
                     [ci, tt, n, co, k, t2, pad, dilation, stride](Tape& t, int id) {
                         const Tensor& g = t.grad(id);
                         const auto& ps = t.parents(id);
                         const Tensor& vx = t.val(ps[0]);
                         const Tensor& vw = t.val(ps[1]);
                         Tensor& gx = t.grad(ps[0]);
                         Tensor& gw = t.grad(ps[1]);
                         Tensor& gb = t.grad(ps[2]);
                         for (int u = 0; u < t2; ++u) {
                             ConstStridedMap gu(g.data() + static_cast<std::int64_t>(u) * n, co, n,
                                                StrideDyn(static_cast<std::int64_t>(t2) * n, 1));
                             gb.vector() += gu.rowwise().sum();
                             for (int j = 0; j < k; ++j) {
                                 const int tin = u * stride + j * dilation - pad;
                                 if (tin < 0 || tin >= tt) continue;
                                 ConstStridedMap wj(vw.data() + j, co, ci,
                                                    StrideDyn(static_cast<std::int64_t>(ci) * k, k));
                                 ConstStridedMap xin(vx.data() + static_cast<std::int64_t>(tin) * n,
                                                     ci, n,
                                                     StrideDyn(static_cast<std::int64_t>(tt) * n, 1));
                                 StridedMap gwj(gw.data() + j, co, ci,
                                                StrideDyn(static_cast<std::int64_t>(ci) * k, k));
                                 StridedMap gxin(gx.data() + static_cast<std::int64_t>(tin) * n, ci,
                                                 n, StrideDyn(static_cast<std::int64_t>(tt) * n, 1));
                                 gwj.noalias() += gu * xin.transpose();
                                 gxin.noalias() += wj.transpose() * gu;
                             }
                         }
                     });
}

Value temporal_conv(Value x, const std::vector<TcBranchRef>& branches) {
    if (branches.empty()) throw std::invalid_argument("temporal_conv: no branches");
    Tape& t = tape_of(x, "temporal_conv");
    Value total;
    int t_out = -1;
    for (size_t i = 0; i < branches.size(); ++i) {
        const TcBranchRef& br = branches[i];
        Value y = temporal_conv_branch(x, br.w, br.b, br.dilation, br.stride);
        const int ty = t.val(y).extent(1);
        if (t_out < 0) {
            t_out = ty;
            total = y;
        } else if (ty != t_out) {
            throw ShapeError("temporal_conv: branch " + std::to_string(i) +
                             " output frames " + std::to_string(ty) + " disagree with " +
                             std::to_string(t_out));
        } else {
            total = add(total, y);
        }
    }
    return total;
}

Value contract_graph(Value f, Value a) {
    Tape& t = same_tape(f, a, "contract_graph");
    const Tensor& vf = t.val(f);
    const Tensor& va = t.val(a);
    require_rank(vf, 4, "contract_graph features");
    require_rank(va, 4, "contract_graph adjacency");
    require_extent(va.extent(0), vf.extent(0), "entity");
    require_extent(va.extent(1), vf.extent(1), "channel");
    require_extent(va.extent(2), vf.extent(3), "joint (adjacency rows)");
    require_extent(va.extent(3), vf.extent(3), "joint (adjacency cols)");
    const int e = vf.extent(0), c = vf.extent(1), tt = vf.extent(2), n = vf.extent(3);
    const std::int64_t fblk = static_cast<std::int64_t>(tt) * n;
    const std::int64_t ablk = static_cast<std::int64_t>(n) * n;

    Tensor out(vf.shape());
    for (int s = 0; s < e * c; ++s) {
        out.matrix(tt, n, s * fblk).noalias() =
            vf.matrix(tt, n, s * fblk) * va.matrix(n, n, s * ablk);
    }
    return t.emplace(std::move(out), {f.id, a.id}, [e, c, tt, n, fblk, ablk](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const auto& ps = t.parents(id);
        const Tensor& vf = t.val(ps[0]);
        const Tensor& va = t.val(ps[1]);
        Tensor& gf = t.grad(ps[0]);
        Tensor& ga = t.grad(ps[1]);
        for (int s = 0; s < e * c; ++s) {
            auto gm = g.matrix(tt, n, s * fblk);
            gf.matrix(tt, n, s * fblk).noalias() += gm * va.matrix(n, n, s * ablk).transpose();
            ga.matrix(n, n, s * ablk).noalias() += vf.matrix(tt, n, s * fblk).transpose() * gm;
        }
    });
}

Value broadcast_add_static(Value x, const Tensor& a_static, Value alpha) {
    Tape& t = same_tape(x, alpha, "broadcast_add_static");
    const Tensor& vx = t.val(x);
    require_rank(vx, 3, "broadcast_add_static input");
    const int c = vx.extent(0), n = vx.extent(1);
    require_extent(vx.extent(2), n, "joint");
    if (a_static.rank() != 3 || a_static.extent(0) != 1) {
        throw ShapeError("broadcast_add_static: static adjacency must be [1,N,N], got " +
                         shape_string(a_static.shape()));
    }
    require_extent(a_static.extent(1), n, "static adjacency rows");
    require_extent(a_static.extent(2), n, "static adjacency cols");
    if (t.val(alpha).size() != 1) {
        throw ShapeError("broadcast_add_static: alpha must be scalar");
    }
    const double av = t.val(alpha)[0];
    const std::int64_t blk = static_cast<std::int64_t>(n) * n;
    Tensor out(vx.shape());
    ConstVectorMap as(a_static.data(), blk);
    for (int ci = 0; ci < c; ++ci) {
        VectorMap dst(out.data() + ci * blk, blk);
        ConstVectorMap src(vx.data() + ci * blk, blk);
        dst = src + av * as;
    }
    Tensor a_copy = a_static;
    return t.emplace(std::move(out), {x.id, alpha.id},
                     [c, blk, a_copy = std::move(a_copy)](Tape& t, int id) {
                         const Tensor& g = t.grad(id);
                         const auto& ps = t.parents(id);
                         t.grad(ps[0]).vector() += g.vector();
                         ConstVectorMap as(a_copy.data(), blk);
                         double ga = 0.0;
                         for (int ci = 0; ci < c; ++ci) {
                             ConstVectorMap src(g.data() + ci * blk, blk);
                             ga += src.dot(as);
                         }
                         t.grad(ps[1])[0] += ga;
                     });
}

Value temporal_batch_norm(Value x, Value gamma, Value beta, NormStats& stats, bool training,
                          double eps, double momentum) {
    Tape& t = same_tape(x, gamma, "temporal_batch_norm");
    same_tape(x, beta, "temporal_batch_norm");
    const Tensor& vx = t.val(x);
    require_rank(vx, 5, "temporal_batch_norm input");
    const int b = vx.extent(0), e = vx.extent(1), c = vx.extent(2), tt = vx.extent(3),
              n = vx.extent(4);
    const Tensor& vg = t.val(gamma);
    require_rank(vg, 2, "temporal_batch_norm scale");
    require_extent(vg.extent(0), c, "channel");
    require_extent(vg.extent(1), n, "joint");
    if (!t.val(beta).same_shape(vg)) throw ShapeError("temporal_batch_norm: scale/shift shapes differ");

    const std::int64_t slots = static_cast<std::int64_t>(c) * n;
    const double m_count = static_cast<double>(b) * e * tt;

    Tensor mean({c, n});
    Tensor var({c, n});
    if (training) {
        for (int bi = 0; bi < b; ++bi)
            for (int ei = 0; ei < e; ++ei)
                for (int ci = 0; ci < c; ++ci)
                    for (int ti = 0; ti < tt; ++ti) {
                        const double* row =
                            vx.data() + ((((static_cast<std::int64_t>(bi) * e + ei) * c + ci) * tt +
                                          ti) *
                                         n);
                        double* acc = mean.data() + static_cast<std::int64_t>(ci) * n;
                        for (int ni = 0; ni < n; ++ni) acc[ni] += row[ni];
                    }
        mean.vector() /= m_count;
        for (int bi = 0; bi < b; ++bi)
            for (int ei = 0; ei < e; ++ei)
                for (int ci = 0; ci < c; ++ci)
                    for (int ti = 0; ti < tt; ++ti) {
                        const double* row =
                            vx.data() + ((((static_cast<std::int64_t>(bi) * e + ei) * c + ci) * tt +
                                          ti) *
                                         n);
                        const double* mu = mean.data() + static_cast<std::int64_t>(ci) * n;
                        double* acc = var.data() + static_cast<std::int64_t>(ci) * n;
                        for (int ni = 0; ni < n; ++ni) {
                            const double d = row[ni] - mu[ni];
                            acc[ni] += d * d;
                        }
                    }
        var.vector() /= m_count;

        if (!stats.initialized) {
            stats.running_mean = mean;
            stats.running_var = var;
            stats.initialized = true;
        } else {
            stats.running_mean.vector() =
                (1.0 - momentum) * stats.running_mean.vector() + momentum * mean.vector();
            stats.running_var.vector() =
                (1.0 - momentum) * stats.running_var.vector() + momentum * var.vector();
        }
    } else {
        if (!stats.initialized) {
            throw std::runtime_error(
                "input_normalize: eval requested before any training-mode statistics exist");
        }
        mean = stats.running_mean;
        var = stats.running_var;
    }

    Tensor inv_std({c, n});
    for (std::int64_t i = 0; i < slots; ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + eps);

    Tensor xhat(vx.shape());
    Tensor out(vx.shape());
    for (int bi = 0; bi < b; ++bi)
        for (int ei = 0; ei < e; ++ei)
            for (int ci = 0; ci < c; ++ci)
                for (int ti = 0; ti < tt; ++ti) {
                    const std::int64_t off =
                        (((static_cast<std::int64_t>(bi) * e + ei) * c + ci) * tt + ti) * n;
                    const std::int64_t slot = static_cast<std::int64_t>(ci) * n;
                    for (int ni = 0; ni < n; ++ni) {
                        const double xh = (vx[off + ni] - mean[slot + ni]) * inv_std[slot + ni];
                        xhat[off + ni] = xh;
                        out[off + ni] = vg[slot + ni] * xh + t.val(beta)[slot + ni];
                    }
                }

    return t.emplace(
        std::move(out), {x.id, gamma.id, beta.id},
        [b, e, c, tt, n, m_count, training, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape& t, int id) {
            const Tensor& g = t.grad(id);
            const auto& ps = t.parents(id);
            const Tensor& vg = t.val(ps[1]);
            Tensor& gx = t.grad(ps[0]);
            Tensor& ggamma = t.grad(ps[1]);
            Tensor& gbeta = t.grad(ps[2]);

            const std::int64_t slots = static_cast<std::int64_t>(c) * n;
            Tensor sum_gy({c, n});
            Tensor sum_gy_xhat({c, n});
            for (int bi = 0; bi < b; ++bi)
                for (int ei = 0; ei < e; ++ei)
                    for (int ci = 0; ci < c; ++ci)
                        for (int ti = 0; ti < tt; ++ti) {
                            const std::int64_t off =
                                (((static_cast<std::int64_t>(bi) * e + ei) * c + ci) * tt + ti) * n;
                            const std::int64_t slot = static_cast<std::int64_t>(ci) * n;
                            for (int ni = 0; ni < n; ++ni) {
                                sum_gy[slot + ni] += g[off + ni];
                                sum_gy_xhat[slot + ni] += g[off + ni] * xhat[off + ni];
                            }
                        }
            for (std::int64_t i = 0; i < slots; ++i) {
                ggamma[i] += sum_gy_xhat[i];
                gbeta[i] += sum_gy[i];
            }
            for (int bi = 0; bi < b; ++bi)
                for (int ei = 0; ei < e; ++ei)
                    for (int ci = 0; ci < c; ++ci)
                        for (int ti = 0; ti < tt; ++ti) {
                            const std::int64_t off =
                                (((static_cast<std::int64_t>(bi) * e + ei) * c + ci) * tt + ti) * n;
                            const std::int64_t slot = static_cast<std::int64_t>(ci) * n;
                            for (int ni = 0; ni < n; ++ni) {
                                const double k = vg[slot + ni] * inv_std[slot + ni];
                                if (training) {
                                    gx[off + ni] +=
                                        k * (g[off + ni] - sum_gy[slot + ni] / m_count -
                                             xhat[off + ni] * sum_gy_xhat[slot + ni] / m_count);
                                } else {
                                    gx[off + ni] += k * g[off + ni];
                                }
                            }
                        }
        });
}

Value dropout(Value x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    Tape& t = tape_of(x, "dropout");
    const Tensor& v = t.val(x);
    const double keep = 1.0 - rate;
    Tensor mask(v.shape());
    Tensor out(v.shape());
    for (std::int64_t i = 0; i < v.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
        out[i] = v[i] * mask[i];
    }
    return t.emplace(std::move(out), {x.id}, [mask = std::move(mask)](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(t.parents(id)[0]);
        for (std::int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
}

Value softmax_cross_entropy(Value logits, const std::vector<int>& labels) {
    Tape& t = tape_of(logits, "softmax_cross_entropy");
    const Tensor& v = t.val(logits);
    require_rank(v, 2, "softmax_cross_entropy logits");
    const int b = v.extent(0), k = v.extent(1);
    require_extent(static_cast<int>(labels.size()), b, "labels");
    Tensor probs(v.shape());
    double loss = 0.0;
    for (int bi = 0; bi < b; ++bi) {
        if (labels[static_cast<size_t>(bi)] < 0 || labels[static_cast<size_t>(bi)] >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " +
                                        std::to_string(labels[static_cast<size_t>(bi)]) +
                                        " outside [0," + std::to_string(k) + ")");
        }
        const double* row = v.data() + static_cast<std::int64_t>(bi) * k;
        double mx = row[0];
        for (int ki = 1; ki < k; ++ki) mx = std::max(mx, row[ki]);
        double denom = 0.0;
        for (int ki = 0; ki < k; ++ki) denom += std::exp(row[ki] - mx);
        const double lse = std::log(denom) + mx;
        for (int ki = 0; ki < k; ++ki) {
            probs[static_cast<std::int64_t>(bi) * k + ki] = std::exp(row[ki] - lse);
        }
        loss += lse - row[labels[static_cast<size_t>(bi)]];
    }
    loss /= static_cast<double>(b);
    return t.emplace(Tensor::scalar(loss), {logits.id},
                     [b, k, labels, probs = std::move(probs)](Tape& t, int id) {
                         const double gscale = t.grad(id)[0] / static_cast<double>(b);
                         Tensor& gl = t.grad(t.parents(id)[0]);
                         for (int bi = 0; bi < b; ++bi) {
                             for (int ki = 0; ki < k; ++ki) {
                                 const std::int64_t o = static_cast<std::int64_t>(bi) * k + ki;
                                 const double onehot =
                                     ki == labels[static_cast<size_t>(bi)] ? 1.0 : 0.0;
                                 gl[o] += gscale * (probs[o] - onehot);
                             }
                         }
                     });
}

}  // namespace megc
