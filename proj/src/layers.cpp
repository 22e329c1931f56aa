#include "megc/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace megc {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

int fgb_hidden_channels(int c_in, int r) {
    if (r < 1) throw std::invalid_argument("reduction ratio must be >= 1");
    if (c_in % r == 0 && c_in >= r) return c_in / r;
    if (c_in == 3 || c_in == 6) return 8;  // raw xyz input, single or merged
    throw std::invalid_argument("channel count " + std::to_string(c_in) +
                                " not divisible by reduction ratio " + std::to_string(r));
}

FgbParams::FgbParams(const std::string& prefix, int c_in, int r, Rng& rng)
    : in_channels(c_in),
      hidden(fgb_hidden_channels(c_in, r)),
      reduction(r),
      psi_w(prefix + ".psi_w", uniform_init({hidden, c_in}, c_in, rng)),
      psi_b(prefix + ".psi_b", Tensor({hidden}), true),
      phi_w(prefix + ".phi_w", uniform_init({hidden, c_in}, c_in, rng)),
      phi_b(prefix + ".phi_b", Tensor({hidden}), true) {}

FfbParams::FfbParams(const std::string& prefix, double init)
    : beta(prefix + ".beta", Tensor::scalar(init), true) {}

MteParams::MteParams(const std::string& prefix, int c_in, int c_out, int r,
                     const Tensor& a_static_, Rng& rng)
    : fgb(prefix + ".fgb", c_in, r, rng),
      ffb(prefix),
      xi_w(prefix + ".xi_w", uniform_init({c_out, fgb.hidden}, fgb.hidden, rng)),
      xi_b(prefix + ".xi_b", Tensor({c_out}), true),
      alpha(prefix + ".alpha", Tensor::scalar(1.0), true),
      a_static(a_static_) {}

MfeParams::MfeParams(const std::string& prefix, int c_in, int c_out, Rng& rng)
    : out_channels(c_out),
      w(prefix + ".w", uniform_init({c_out, c_in}, c_in, rng)),
      b(prefix + ".b", Tensor({c_out}), true),
      ffb(prefix) {}

MeGcLayer::MeGcLayer(const std::string& prefix, int c_in, int c_out, int stride_, int r,
                     const Tensor& a_static, bool residual, Rng& rng)
    : in_channels(c_in),
      out_channels(c_out),
      stride(stride_),
      mte(prefix + ".mte", c_in, c_out, r, a_static, rng),
      mfe(prefix + ".mfe", c_in, c_out, rng),
      residual_enabled(residual),
      has_projection(c_in != c_out || stride_ > 1) {
    if (stride_ < 1) throw std::invalid_argument("layer stride must be >= 1");
    const int kernel = 5;
    for (int dilation : {1, 2}) {
        TcBranchParams br;
        br.kernel = kernel;
        br.dilation = dilation;
        br.w = Param(prefix + ".tc" + std::to_string(dilation) + ".w",
                     uniform_init({c_out, c_out, kernel}, c_out * kernel, rng));
        br.b = Param(prefix + ".tc" + std::to_string(dilation) + ".b", Tensor({c_out}), true);
        tc.push_back(std::move(br));
    }
    if (has_projection) {
        proj_w = Param(prefix + ".res.w", uniform_init({c_out, c_in}, c_in, rng));
        proj_b = Param(prefix + ".res.b", Tensor({c_out}), true);
    }
}

void MeGcLayer::collect_params(std::vector<Param*>& out) {
    out.push_back(&mte.fgb.psi_w);
    out.push_back(&mte.fgb.psi_b);
    out.push_back(&mte.fgb.phi_w);
    out.push_back(&mte.fgb.phi_b);
    if (mte.mutual) out.push_back(&mte.ffb.beta);
    out.push_back(&mte.xi_w);
    out.push_back(&mte.xi_b);
    out.push_back(&mte.alpha);
    out.push_back(&mfe.w);
    out.push_back(&mfe.b);
    if (mfe.mutual) out.push_back(&mfe.ffb.beta);
    if (tc_enabled) {
        for (auto& br : tc) {
            out.push_back(&br.w);
            out.push_back(&br.b);
        }
    }
    if (residual_enabled && has_projection) {
        out.push_back(&proj_w);
        out.push_back(&proj_b);
    }
}

namespace {

struct PooledFeatures {
    Value psi;  // [hidden, N]
    Value phi;  // [hidden, N]
};

PooledFeatures fgb_pool(Value x, Value psi_w, Value psi_b, Value phi_w, Value phi_b) {
    return PooledFeatures{mean_over_time(pointwise_conv(x, psi_w, psi_b)),
                          mean_over_time(pointwise_conv(x, phi_w, phi_b))};
}

Value intra_map(const PooledFeatures& p) { return tanh_map(pairwise_diff(p.psi, p.phi)); }

Value mean_feature(const PooledFeatures& p) { return scale(add(p.psi, p.phi), 0.5); }

}  // namespace

Value fgb_intra(Value r, FgbParams& p) {
    Tape& t = *r.tape;
    require_extent(t.val(r).extent(0), p.in_channels, "channel");
    return intra_map(fgb_pool(r, t.leaf(p.psi_w), t.leaf(p.psi_b), t.leaf(p.phi_w),
                              t.leaf(p.phi_b)));
}

Value fgb_inter(Value r, Value l, FgbParams& p) {
    Tape& t = *r.tape;
    if (!t.val(r).same_shape(t.val(l))) {
        throw ShapeError("fgb_inter: entity shapes differ: " + shape_string(t.val(r).shape()) +
                         " vs " + shape_string(t.val(l).shape()));
    }
    Value psi_w = t.leaf(p.psi_w), psi_b = t.leaf(p.psi_b);
    Value phi_w = t.leaf(p.phi_w), phi_b = t.leaf(p.phi_b);
    const PooledFeatures pr = fgb_pool(r, psi_w, psi_b, phi_w, phi_b);
    const PooledFeatures pl = fgb_pool(l, psi_w, psi_b, phi_w, phi_b);
    return tanh_map(pairwise_diff(mean_feature(pr), mean_feature(pl)));
}

Value ffb_fuse(Value intra, Value inter, FfbParams& p) {
    Tape& t = *intra.tape;
    return add(intra, mul_scalar(inter, t.leaf(p.beta)));
}

Value mte_forward(Value x, MteParams& p, MteTrace* trace) {
    Tape& t = *x.tape;
    const Tensor& vx = t.val(x);
    require_rank(vx, 4, "mte_forward input");
    const int entities = vx.extent(0);
    require_extent(vx.extent(1), p.fgb.in_channels, "channel");
    if (p.mutual && entities != 2) {
        throw ShapeError("mte_forward: mutual path needs 2 entities, got " +
                         std::to_string(entities));
    }

    Value psi_w = t.leaf(p.fgb.psi_w), psi_b = t.leaf(p.fgb.psi_b);
    Value phi_w = t.leaf(p.fgb.phi_w), phi_b = t.leaf(p.fgb.phi_b);
    Value xi_w = t.leaf(p.xi_w), xi_b = t.leaf(p.xi_b);
    Value alpha = t.leaf(p.alpha);

    std::vector<PooledFeatures> pooled;
    std::vector<Value> intra;
    for (int e = 0; e < entities; ++e) {
        pooled.push_back(fgb_pool(slice_first(x, e), psi_w, psi_b, phi_w, phi_b));
        intra.push_back(intra_map(pooled.back()));
    }

    Value inter;
    if (p.mutual) {
        inter = tanh_map(pairwise_diff(mean_feature(pooled[0]), mean_feature(pooled[1])));
    }

    std::vector<Value> adj;
    for (int e = 0; e < entities; ++e) {
        Value fused = p.mutual ? add(intra[static_cast<size_t>(e)], mul_scalar(inter, t.leaf(p.ffb.beta)))
                               : intra[static_cast<size_t>(e)];
        adj.push_back(broadcast_add_static(pointwise_conv(fused, xi_w, xi_b), p.a_static, alpha));
    }

    if (trace) {
        trace->filled = true;
        trace->v_intra.clear();
        trace->adj_pre_ffb.clear();
        trace->adj_post_ffb.clear();
        for (int e = 0; e < entities; ++e) {
            trace->v_intra.push_back(t.val(intra[static_cast<size_t>(e)]));
            trace->adj_pre_ffb.push_back(t.val(broadcast_add_static(
                pointwise_conv(intra[static_cast<size_t>(e)], xi_w, xi_b), p.a_static, alpha)));
            trace->adj_post_ffb.push_back(t.val(adj[static_cast<size_t>(e)]));
        }
        trace->v_inter = p.mutual ? t.val(inter) : Tensor{};
    }

    return stack_first(adj);
}

Value mfe_forward(Value x, MfeParams& p) {
    Tape& t = *x.tape;
    const Tensor& vx = t.val(x);
    require_rank(vx, 4, "mfe_forward input");
    const int entities = vx.extent(0);
    if (p.mutual && entities != 2) {
        throw ShapeError("mfe_forward: mutual path needs 2 entities, got " +
                         std::to_string(entities));
    }
    Value w = t.leaf(p.w), b = t.leaf(p.b);
    std::vector<Value> local;
    for (int e = 0; e < entities; ++e) {
        local.push_back(pointwise_conv(slice_first(x, e), w, b));
    }
    if (!p.mutual) return stack_first(local);

    Value shared = scale(add(local[0], local[1]), 0.5);
    std::vector<Value> fused;
    for (int e = 0; e < entities; ++e) {
        fused.push_back(add(local[static_cast<size_t>(e)], mul_scalar(shared, t.leaf(p.ffb.beta))));
    }
    return stack_first(fused);
}

Value layer_forward(Value x, MeGcLayer& layer, MteTrace* trace) {
    Tape& t = *x.tape;
    const Tensor& vx = t.val(x);
    require_rank(vx, 4, "layer_forward input");
    const int entities = vx.extent(0);
    require_extent(vx.extent(1), layer.in_channels, "channel");

    Value adjacency = mte_forward(x, layer.mte, trace);
    Value features = mfe_forward(x, layer.mfe);
    Value contracted = contract_graph(features, adjacency);

    std::vector<Value> tc_out;
    if (layer.tc_enabled) {
        std::vector<TcBranchRef> branches;
        for (auto& br : layer.tc) {
            branches.push_back(TcBranchRef{t.leaf(br.w), t.leaf(br.b), br.dilation, layer.stride});
        }
        for (int e = 0; e < entities; ++e) {
            tc_out.push_back(temporal_conv(slice_first(contracted, e), branches));
        }
    } else {
        for (int e = 0; e < entities; ++e) {
            tc_out.push_back(subsample_time(slice_first(contracted, e), layer.stride));
        }
    }
    Value y = stack_first(tc_out);

    if (layer.residual_enabled) {
        Value res;
        if (layer.has_projection) {
            Value pw = t.leaf(layer.proj_w), pb = t.leaf(layer.proj_b);
            std::vector<Value> parts;
            for (int e = 0; e < entities; ++e) {
                parts.push_back(
                    pointwise_conv(subsample_time(slice_first(x, e), layer.stride), pw, pb));
            }
            res = stack_first(parts);
        } else {
            res = x;
        }
        y = add(y, res);
    }
    return relu_map(y);
}

}  // namespace megc
